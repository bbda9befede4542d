"""Pure-numpy fallback for the simplex pivot kernel.

Kept operation-for-operation identical to the compiled version so both
backends produce bit-identical tableaus.
"""

import numpy as np


def pivot(t: np.ndarray, r: int, c: int) -> None:
    """Gauss-Jordan pivot of tableau ``t`` on entry (r, c), in place."""
    p = t[r, c]
    t[r, :] /= p
    col = t[:, c].copy()
    col[r] = 0.0
    t -= col[:, None] * t[r, None, :]
    # exact unit column: removes accumulated round-off in the pivot column
    t[:, c] = 0.0
    t[r, c] = 1.0
