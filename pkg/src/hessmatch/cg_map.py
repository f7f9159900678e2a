"""Coarse-graining maps, force projections and their position derivatives.

Linear maps are a constant matrix ``xi_r``; nonlinear maps supply a value and
a Jacobian. Everything below works on positions of shape ``(..., D)`` with
``D = n * dim`` and returns arrays with the same leading batch axes.

Shapes used throughout, for ``m`` CG coordinates:

* ``force_projection``  -> ``(..., m, D)``
* ``xi_derivative``     -> ``(..., m, D, D)``, entry ``[J, i, j] = d Xi_F[J, i] / d r_j``
* ``divergence``        -> ``(..., m)``
* ``divergence_gradient`` -> ``(..., D, m)``, entry ``[j, J] = d div_J / d r_j``
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DimensionTooLarge, NotPositiveDefinite, SingularGeometry
from .numerics import cholesky, solve_spd

SINGULAR_DISTANCE = 1e-8
FD_STEP = 1e-5


@dataclass
class Fiber:
    """Parametrisation of the level set ``{r : xi(r) = R}`` for quadrature.

    ``embed`` maps integration coordinates ``z`` of shape ``(P, n_dims)`` to
    positions ``(P, D)``; ``log_jacobian`` returns the log volume factor of the
    change of variables ``r -> (xi, z)`` at ``xi = R``.
    """

    n_dims: int
    lower: np.ndarray
    upper: np.ndarray
    embed: object
    log_jacobian: object


class LinearCGMap:
    """``R = xi_r @ r`` for a constant full-row-rank matrix."""

    is_linear = True

    def __init__(self, xi_r, n=None, dim=None):
        self.xi_r = np.atleast_2d(np.asarray(xi_r, dtype=np.float64))
        self.out_dim, self.size = self.xi_r.shape
        if n is None:
            n, dim = self.size, 1
        if n * dim != self.size:
            raise DimensionMismatch(f"map width {self.size} != n*dim = {n * dim}")
        self.n, self.dim = n, dim
        gram = self.xi_r @ self.xi_r.T
        try:
            cholesky(gram)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite("coarse-graining matrix is rank deficient") from exc
        self._xi_f = solve_spd(gram, self.xi_r)
        self._gram = gram

    @classmethod
    def select(cls, atoms, n, dim):
        """Map keeping the coordinates of ``atoms`` (one bead per atom)."""
        xi = np.zeros((len(atoms) * dim, n * dim))
        for bead, atom in enumerate(atoms):
            for a in range(dim):
                xi[bead * dim + a, atom * dim + a] = 1.0
        return cls(xi, n, dim)

    @classmethod
    def center_of_mass(cls, groups, n, dim, masses=None):
        """One bead per atom group at its (mass-weighted) centre."""
        masses = np.ones(n) if masses is None else np.asarray(masses, dtype=np.float64)
        xi = np.zeros((len(groups) * dim, n * dim))
        for bead, group in enumerate(groups):
            w = masses[list(group)] / masses[list(group)].sum()
            for atom, wa in zip(group, w):
                for a in range(dim):
                    xi[bead * dim + a, atom * dim + a] = wa
        return cls(xi, n, dim)

    def value(self, r):
        return np.asarray(r, dtype=np.float64) @ self.xi_r.T

    def jacobian(self, r):
        r = np.asarray(r, dtype=np.float64)
        return np.broadcast_to(self.xi_r, r.shape[:-1] + self.xi_r.shape)

    def force_projection(self, r=None):
        if r is None:
            return self._xi_f
        r = np.asarray(r, dtype=np.float64)
        return np.broadcast_to(self._xi_f, r.shape[:-1] + self._xi_f.shape)

    def xi_derivative(self, r):
        r = np.asarray(r)
        return np.zeros(r.shape[:-1] + (self.out_dim, self.size, self.size))

    def divergence(self, r):
        r = np.asarray(r)
        return np.zeros(r.shape[:-1] + (self.out_dim,))

    def divergence_gradient(self, r):
        r = np.asarray(r)
        return np.zeros(r.shape[:-1] + (self.size, self.out_dim))

    def fiber(self, R, half_width=6.0):
        R = np.atleast_1d(np.asarray(R, dtype=np.float64))
        particular = self.xi_r.T @ np.linalg.solve(self._gram, R)
        # orthonormal basis of the null space
        _, sv, vt = np.linalg.svd(self.xi_r)
        null = vt[len(sv):].T
        k = null.shape[1]
        return Fiber(
            n_dims=k,
            lower=np.full(k, -half_width),
            upper=np.full(k, half_width),
            embed=lambda z: particular + z @ null.T,
            log_jacobian=lambda z: np.zeros(len(z)),
        )


class NonlinearCGMap:
    """Base class for maps with position-dependent Jacobian.

    Subclasses implement ``value`` and ``jacobian``. Position derivatives of
    the force projection use central differences with step ``FD_STEP`` unless
    a subclass overrides ``divergence``/``divergence_gradient`` analytically.
    """

    is_linear = False
    fd_step = FD_STEP

    def __init__(self, n, dim, out_dim):
        self.n, self.dim, self.out_dim = n, dim, out_dim
        self.size = n * dim

    def _check(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape[-1] != self.size:
            raise DimensionMismatch(f"positions width {r.shape[-1]} != {self.size}")
        return r

    def force_projection(self, r):
        J = self.jacobian(self._check(r))
        gram = J @ np.swapaxes(J, -1, -2)
        return np.linalg.solve(gram, J)

    def xi_derivative(self, r):
        r = self._check(r)
        h = self.fd_step
        cols = []
        for j in range(self.size):
            e = np.zeros(self.size)
            e[j] = h
            cols.append((self.force_projection(r + e) - self.force_projection(r - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def divergence(self, r):
        return np.einsum("...Jjj->...J", self.xi_derivative(r))

    def divergence_gradient(self, r):
        r = self._check(r)
        h = self.fd_step
        rows = []
        for j in range(self.size):
            e = np.zeros(self.size)
            e[j] = h
            rows.append((self.divergence(r + e) - self.divergence(r - e)) / (2 * h))
        return np.stack(rows, axis=-2)

    def fiber(self, R, half_width=6.0):
        raise NotImplementedError(f"{type(self).__name__} has no fiber parametrisation")


def _unit(rel):
    d = np.linalg.norm(rel, axis=-1)
    if np.any(d < SINGULAR_DISTANCE):
        raise SingularGeometry(f"distance below {SINGULAR_DISTANCE} in nonlinear map")
    return d, rel / d[..., None]


class BondLength(NonlinearCGMap):
    """Single CG coordinate ``|r_i - r_j|``."""

    def __init__(self, i, j, n, dim):
        super().__init__(n, dim, 1)
        self.i, self.j = i, j

    def _rel(self, r):
        x = self._check(r).reshape(r.shape[:-1] + (self.n, self.dim))
        return x[..., self.i, :] - x[..., self.j, :]

    def value(self, r):
        r = np.asarray(r, dtype=np.float64)
        d, _ = _unit(self._rel(r))
        return d[..., None]

    def jacobian(self, r):
        r = np.asarray(r, dtype=np.float64)
        _, u = _unit(self._rel(r))
        J = np.zeros(r.shape[:-1] + (self.n, self.dim))
        J[..., self.i, :] = u
        J[..., self.j, :] = -u
        return J.reshape(r.shape[:-1] + (1, self.size))

    def divergence(self, r):
        # each atom block of Xi_F = (u, -u)/2 contributes (dim - 1) / (2 d)
        d = self.value(r)
        return (self.dim - 1) / d

    def divergence_gradient(self, r):
        r = np.asarray(r, dtype=np.float64)
        d, u = _unit(self._rel(r))
        g = np.zeros(r.shape[:-1] + (self.n, self.dim))
        g[..., self.i, :] = -(self.dim - 1) * u / d[..., None] ** 2
        g[..., self.j, :] = (self.dim - 1) * u / d[..., None] ** 2
        return g.reshape(r.shape[:-1] + (self.size, 1))

    def fiber(self, R, half_width=6.0):
        return _tree_fiber([self], R, self.n, self.dim, half_width)


class RadialFromPinned(NonlinearCGMap):
    """Single CG coordinate ``|r_i - anchor|``, the distance to a pinned particle."""

    def __init__(self, i, n, dim, anchor=None):
        super().__init__(n, dim, 1)
        self.i = i
        self.anchor = np.zeros(dim) if anchor is None else np.asarray(anchor, dtype=np.float64)

    def _rel(self, r):
        x = self._check(r).reshape(r.shape[:-1] + (self.n, self.dim))
        return x[..., self.i, :] - self.anchor

    def value(self, r):
        r = np.asarray(r, dtype=np.float64)
        d, _ = _unit(self._rel(r))
        return d[..., None]

    def jacobian(self, r):
        r = np.asarray(r, dtype=np.float64)
        _, u = _unit(self._rel(r))
        J = np.zeros(r.shape[:-1] + (self.n, self.dim))
        J[..., self.i, :] = u
        return J.reshape(r.shape[:-1] + (1, self.size))

    def divergence(self, r):
        return (self.dim - 1) / self.value(r)

    def divergence_gradient(self, r):
        r = np.asarray(r, dtype=np.float64)
        d, u = _unit(self._rel(r))
        g = np.zeros(r.shape[:-1] + (self.n, self.dim))
        g[..., self.i, :] = -(self.dim - 1) * u / d[..., None] ** 2
        return g.reshape(r.shape[:-1] + (self.size, 1))

    def fiber(self, R, half_width=6.0):
        return _tree_fiber([self], R, self.n, self.dim, half_width)


class StackedMap(NonlinearCGMap):
    """Several single-coordinate nonlinear maps evaluated together.

    The components share atoms, so the force projection couples them and all
    position derivatives fall back to finite differences.
    """

    def __init__(self, components):
        first = components[0]
        super().__init__(first.n, first.dim, sum(c.out_dim for c in components))
        self.components = list(components)

    def value(self, r):
        return np.concatenate([c.value(r) for c in self.components], axis=-1)

    def jacobian(self, r):
        return np.concatenate([c.jacobian(r) for c in self.components], axis=-2)

    def fiber(self, R, half_width=6.0):
        return _tree_fiber(self.components, R, self.n, self.dim, half_width)


class UserMap(NonlinearCGMap):
    """Arbitrary map from a callable; the Jacobian defaults to central differences."""

    def __init__(self, func, out_dim, n, dim, jacobian=None):
        super().__init__(n, dim, out_dim)
        self._func = func
        self._jac = jacobian

    def value(self, r):
        return np.asarray(self._func(self._check(r)), dtype=np.float64)

    def jacobian(self, r):
        r = self._check(r)
        if self._jac is not None:
            return np.asarray(self._jac(r), dtype=np.float64)
        h = self.fd_step
        cols = []
        for j in range(self.size):
            e = np.zeros(self.size)
            e[j] = h
            cols.append((self.value(r + e) - self.value(r - e)) / (2 * h))
        return np.stack(cols, axis=-1)


def _direction(angles, dim):
    """Unit vectors and log-Jacobian of the angular parametrisation."""
    if dim == 2:
        phi = angles[:, 0]
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1), np.zeros(len(angles))
    theta, phi = angles[:, 0], angles[:, 1]
    w = np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
    )
    return w, np.log(np.sin(theta))


def _tree_fiber(components, R, n, dim, half_width):
    """Fiber of a set of distance coordinates forming a tree over the atoms.

    Each component places one new atom at distance ``R_k`` from an atom that is
    already placed (or from the anchor). Atoms that are never placed, and the
    root of any bond whose two ends are both new, become Cartesian integration
    coordinates in ``[-half_width, half_width]``.
    """
    if dim < 2:
        raise DimensionTooLarge("nonlinear fibers need dim >= 2 (1-dim fibers are discrete)")
    R = np.atleast_1d(np.asarray(R, dtype=np.float64))
    n_ang = dim - 1
    plan = []  # (kind, atom, parent_or_anchor, radius_index)
    placed = set()
    free = []
    for k, comp in enumerate(components):
        if isinstance(comp, RadialFromPinned):
            if comp.i in placed:
                raise ValueError("distance coordinates do not form a tree")
            plan.append(("anchor", comp.i, comp.anchor, k, 1.0))
            placed.add(comp.i)
        elif isinstance(comp, BondLength):
            i, j = comp.i, comp.j
            if i in placed and j in placed:
                raise ValueError("distance coordinates do not form a tree")
            if i not in placed and j not in placed:
                free.append(j)
                placed.add(j)
            if j in placed and i not in placed:
                plan.append(("bond", i, j, k, 1.0))
                placed.add(i)
            else:
                plan.append(("bond", j, i, k, -1.0))
                placed.add(j)
        else:
            raise NotImplementedError(f"no fiber for component {type(comp).__name__}")
    free = [a for a in free] + [a for a in range(n) if a not in placed]
    n_dims = len(plan) * n_ang + len(free) * dim
    if n_dims > 3:
        raise DimensionTooLarge(f"fiber has {n_dims} integration dimensions (max 3)")
    lower, upper = [], []
    for _ in plan:
        if dim == 2:
            lower += [0.0]
            upper += [2 * np.pi]
        else:
            lower += [0.0, 0.0]
            upper += [np.pi, 2 * np.pi]
    lower += [-half_width] * (len(free) * dim)
    upper += [half_width] * (len(free) * dim)
    const = sum((dim - 1) * np.log(R[k]) for (_, _, _, k, _) in plan)

    def embed_and_jac(z):
        P = len(z)
        x = np.zeros((P, n, dim))
        logj = np.full(P, const)
        col = len(plan) * n_ang
        for a in free:
            x[:, a, :] = z[:, col:col + dim]
            col += dim
        for p, (kind, atom, ref, k, sign) in enumerate(plan):
            w, lj = _direction(z[:, p * n_ang:(p + 1) * n_ang], dim)
            logj += lj
            base = ref if kind == "anchor" else x[:, ref, :]
            x[:, atom, :] = base + sign * R[k] * w
        return x.reshape(P, n * dim), logj

    return Fiber(
        n_dims=n_dims,
        lower=np.array(lower),
        upper=np.array(upper),
        embed=lambda z: embed_and_jac(z)[0],
        log_jacobian=lambda z: embed_and_jac(z)[1],
    )


# -- functional interface ----------------------------------------------------


def project_positions(cg_map, r):
    return cg_map.value(r)


def force_projection(cg_map, r=None):
    """``(J J^T)^-1 J``; for linear maps ``r`` is ignored."""
    if cg_map.is_linear:
        return cg_map.force_projection(r)
    if r is None:
        raise ValueError("nonlinear maps need positions to form the force projection")
    return cg_map.force_projection(r)


def xi_divergence(cg_map, r):
    return cg_map.divergence(r)


def xi_t_matrix(cg_map, r, f_aa):
    """Contraction ``T[I, J] = sum_ij F_i Xi_F[I, j] d Xi_F[J, i] / d r_j``."""
    r = np.asarray(r, dtype=np.float64)
    f_aa = np.asarray(f_aa, dtype=np.float64)
    if cg_map.is_linear:
        return np.zeros(r.shape[:-1] + (cg_map.out_dim, cg_map.out_dim))
    xi_f = cg_map.force_projection(r)
    dxi = cg_map.xi_derivative(r)
    return np.einsum("...i,...Ij,...Jij->...IJ", f_aa, xi_f, dxi)
