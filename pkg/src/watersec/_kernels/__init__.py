"""Hot-kernel backend selection: compiled extension if built, numpy otherwise."""

from watersec._kernels import pivot_py

try:
    from watersec._kernels import _pivot_cy

    pivot = _pivot_cy.pivot
    BACKEND = "cython"
except ImportError:  # extension not built
    pivot = pivot_py.pivot
    BACKEND = "python"


def backends():
    """Return the available pivot implementations keyed by backend name."""
    found = {"python": pivot_py.pivot}
    if BACKEND == "cython":
        found["cython"] = _pivot_cy.pivot
    return found
