"""Dense linear-algebra helpers.

Only the spectral norm lives here; everything else the package needs is a
direct numpy call.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, InvalidInputError
from .types import as_float_array


def _start_vectors(n: int):
    # Deterministic starts: all-ones first, then basis vectors. If A kills all
    # of them it kills every column, i.e. A == 0.
    yield np.full(n, 1.0 / np.sqrt(n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        yield e


def spectral_norm(a: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> float:
    """Largest singular value of a matrix by power iteration on A^T A.

    Starts from the normalized all-ones vector (falling back to basis vectors
    if that start lies in the null space) so results are deterministic.
    Convergence: successive estimates of sigma agree within tol (relative,
    guarded at 1). Raises ConvergenceError after ``max_iter`` total sweeps
    with the last estimate attached.
    """
    a = as_float_array("matrix", a, 2)
    if a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InvalidInputError(f"matrix must be square and nonempty, got shape {a.shape}")
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")

    iters_left = max_iter
    sigma = 0.0
    for v in _start_vectors(a.shape[1]):
        prev = -np.inf
        while iters_left > 0:
            iters_left -= 1
            w = a @ v
            sigma = float(np.linalg.norm(w))
            if sigma == 0.0:
                break  # this start is in the null space; try the next one
            v = a.T @ w
            nv = float(np.linalg.norm(v))
            if nv == 0.0:
                return sigma
            v /= nv
            if abs(sigma - prev) <= tol * max(sigma, 1.0):
                return sigma
            prev = sigma
        else:
            raise ConvergenceError(
                f"power iteration did not converge in {max_iter} iterations "
                f"(last estimate {sigma!r})",
                last_estimate=sigma,
            )
    return 0.0
