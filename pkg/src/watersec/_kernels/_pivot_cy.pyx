# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled simplex pivot kernel.

Statement-level arithmetic mirrors the numpy fallback exactly; combined
with -ffp-contract=off this keeps both backends bit-identical.
"""


cpdef void pivot(double[:, ::1] t, Py_ssize_t r, Py_ssize_t c):
    """Gauss-Jordan pivot of tableau ``t`` on entry (r, c), in place."""
    cdef Py_ssize_t m = t.shape[0]
    cdef Py_ssize_t n = t.shape[1]
    cdef Py_ssize_t i, j
    cdef double p = t[r, c]
    cdef double f, tmp

    for j in range(n):
        t[r, j] = t[r, j] / p
    for i in range(m):
        if i == r:
            continue
        f = t[i, c]
        if f == 0.0:
            continue
        for j in range(n):
            tmp = f * t[r, j]
            t[i, j] = t[i, j] - tmp
    for i in range(m):
        t[i, c] = 0.0
    t[r, c] = 1.0
