"""Deterministic random numbers, small dense linear algebra, finite differences.

The generator is SplitMix64. Its state advances by a fixed odd increment, so the
n-th output only depends on ``seed + n * GOLDEN`` and a block of outputs can be
produced with one vectorised numpy expression. Normals come from Box-Muller on
pairs of consecutive uniforms.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NoConvergence, NotPositiveDefinite

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64_next(state):
    """Advance a SplitMix64 state once.

    Returns
    -------
    (new_state, value) : tuple of int
        Both are unsigned 64-bit integers held in Python ints.
    """
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return state, z ^ (z >> 31)


def splitmix64_block(state, count):
    """Vectorised equivalent of ``count`` successive calls to :func:`splitmix64_next`."""
    state = int(state) & MASK64
    steps = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(state) + steps * np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    new_state = (state + count * GOLDEN) & MASK64
    return new_state, z


def uniforms_open_closed(state, count):
    """Uniform draws on (0, 1] built from the top 53 bits of each raw output."""
    state, raw = splitmix64_block(state, count)
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return state, 1.0 - u


def standard_normals(state, count):
    """Draw ``count`` standard normal variates.

    Box-Muller consumes uniforms in pairs ``(u1, u2)`` and yields
    ``sqrt(-2 ln u1) * (cos 2 pi u2, sin 2 pi u2)`` in that order; for an odd
    ``count`` the final sine value is dropped. The state always advances by
    ``2 * ceil(count / 2)`` raw draws.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    pairs = (count + 1) // 2
    state, u = uniforms_open_closed(state, 2 * pairs)
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return state, out[:count]


class Rng:
    """Small mutable wrapper around a SplitMix64 state.

    The functional API above is what every module relies on; this class only
    saves threading ``state`` through call sites that draw repeatedly.
    """

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state, value = splitmix64_next(self.state)
        return value

    def uniform(self, size):
        n = int(np.prod(size))
        self.state, u = uniforms_open_closed(self.state, n)
        return u.reshape(size)

    def normal(self, size):
        n = int(np.prod(size))
        self.state, z = standard_normals(self.state, n)
        return z.reshape(size)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)`` driven by raw 64-bit draws."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def cholesky(A):
    """Lower Cholesky factor with the package's pivot threshold.

    Raises NotPositiveDefinite when any squared pivot falls below
    ``1e-12 * trace(A) / rows``.
    """
    A = np.asarray(A, dtype=np.float64)
    rows = A.shape[0]
    floor = 1e-12 * np.trace(A) / rows
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if not np.all(pivots > floor):
        raise NotPositiveDefinite(
            f"Cholesky pivot {pivots.min():.3e} below threshold {floor:.3e}"
        )
    return L


def solve_spd(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A`` via Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    L = cholesky(A)
    y = solve_triangular(L, np.asarray(b, dtype=np.float64), lower=True)
    return solve_triangular(L.T, y, lower=False)


def sym_eig(A, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns
    -------
    eigenvalues : (n,) ndarray, descending
    eigenvectors : (n, n) ndarray, column ``i`` pairs with ``eigenvalues[i]``
    """
    a = np.array(A, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    V = np.eye(n)
    scale = np.linalg.norm(a)
    threshold = 1e-14 * scale
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * scale:
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off > threshold:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    evals = np.diag(a).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], V[:, order]


def central_difference(f, x, direction, step):
    """``[f(x + h v) - f(x - h v)] / (2 h)`` for array-valued ``f``."""
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    return (np.asarray(f(x + step * direction)) - np.asarray(f(x - step * direction))) / (
        2.0 * step
    )


def fd_jacobian(f, x, step=1e-6):
    """Central-difference Jacobian, shape ``f(x).shape + x.shape``."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = 1.0
        cols.append(central_difference(f, x, e.reshape(x.shape), step))
    return np.stack(cols, axis=-1)
