"""Conditional ensembles and the CG mean-force / Hessian estimators.

The conditional ensemble at CG point ``R`` is ``delta(xi(r) - R) exp(-beta U)``.
Two samplers realise it:

* ``exact`` -- for purely quadratic potentials under a linear map the
  conditional law is Gaussian on an affine subspace and is sampled directly;
* ``restraint`` -- overdamped Langevin on ``U + kappa/2 |xi(r) - R|^2``.

:func:`free_energy_quadrature` integrates ``exp(-beta U)`` over the exact
level set and serves as the independent oracle for both estimators.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .aa_system import AtomisticFrame, Frames, QuadraticForm, langevin_chain
from .errors import DimensionTooLarge, EmptyEnsemble
from .numerics import Rng, cholesky
from scipy.linalg import solve_triangular


RANGE_RATE = 50.0


@dataclass
class ConditionalEnsemble:
    target_R: np.ndarray
    positions: np.ndarray
    restraint_stiffness: float
    beta: float
    method: str = "restraint"
    frame_index: np.ndarray = None
    chain: np.ndarray = None

    def __post_init__(self):
        self.target_R = np.atleast_1d(np.asarray(self.target_R, dtype=np.float64))
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        if self.frame_index is None:
            self.frame_index = np.arange(len(self.positions))
        if self.chain is None:
            self.chain = np.arange(len(self.positions))

    def __len__(self):
        return len(self.positions)

    @property
    def frames(self):
        return [AtomisticFrame(p, int(i)) for p, i in zip(self.positions, self.frame_index)]

    def as_frames(self, n, dim):
        return Frames(self.positions, n, dim, frame_index=self.frame_index)

    def restraint_width(self):
        if not np.isfinite(self.restraint_stiffness):
            return 0.0
        return 4.0 * np.sqrt(1.0 / (self.beta * self.restraint_stiffness))


def _is_exact_gaussian(ff, cg_map):
    return cg_map.is_linear and ff.terms and all(isinstance(t, QuadraticForm) for t in ff.terms)


def _sample_exact(ff, cg_map, R, beta, count, rng):
    K = sum(np.asarray(t.K, dtype=np.float64) for t in ff.terms)
    fiber = cg_map.fiber(R)
    particular = fiber.embed(np.zeros((1, fiber.n_dims)))[0]
    if fiber.n_dims == 0:
        return np.tile(particular, (count, 1))
    # recover the orthonormal null basis from the affine embedding
    null = fiber.embed(np.eye(fiber.n_dims)) - particular
    null = null.T
    reduced = null.T @ K @ null
    L = cholesky(beta * reduced)
    mean = -np.linalg.solve(reduced, null.T @ (K @ particular))
    z = rng.normal((count, fiber.n_dims))
    # cov = (beta Q^T K Q)^-1 = L^-T L^-1
    fluct = solve_triangular(L.T, z.T, lower=False).T
    return particular + (mean + fluct) @ null.T


def sample_conditional(
    ff,
    cg_map,
    R,
    beta,
    count,
    restraint_stiffness=1e4,
    rng=None,
    method="auto",
    friction=1.0,
    dt=None,
    chains=None,
    burn_in_time=2.0,
    thinning_time=None,
    initial=None,
):
    """Draw ``count`` frames from the conditional ensemble at ``R``.

    Parameters
    ----------
    method : {"auto", "exact", "restraint"}
        ``auto`` picks the exact Gaussian sampler when ``ff`` is purely
        quadratic and the map is linear.
    restraint_stiffness : float
        Harmonic restraint constant; must be at least 1e3.
    dt : float, optional
        Langevin step. Nonlinear maps default to
        ``0.5 * friction / restraint_stiffness``. Linear maps run with a
        constant mobility that slows the restrained direction to rate
        ``RANGE_RATE`` and default to ``dt = 0.1 * friction / RANGE_RATE``.
    thinning_time : float, optional
        Simulated time between recorded frames of one chain (0.05 for linear
        maps, 0.005 otherwise).
    chains : int, optional
        Number of chains advanced in lock step (default ``min(count, 1000)``).
        Initial positions are drawn uniformly over the level-set
        parametrisation when the map provides one.
    """
    R = np.atleast_1d(np.asarray(R, dtype=np.float64))
    rng = rng if rng is not None else Rng(0)
    if method == "auto":
        method = "exact" if _is_exact_gaussian(ff, cg_map) else "restraint"
    if method == "exact":
        if not _is_exact_gaussian(ff, cg_map):
            raise ValueError("exact sampling needs a quadratic potential and a linear map")
        pos = _sample_exact(ff, cg_map, R, beta, count, rng)
        return ConditionalEnsemble(R, pos, np.inf, beta, "exact")
    if restraint_stiffness < 1e3:
        raise ValueError("restraint_stiffness must be >= 1e3")
    kappa = restraint_stiffness
    mobility = None
    if cg_map.is_linear:
        # damp motion across the level set so its relaxation rate is
        # RANGE_RATE instead of kappa; the constant mobility keeps the
        # restrained density stationary
        J = cg_map.xi_r
        p_range = J.T @ np.linalg.solve(J @ J.T, J)
        mobility = np.eye(ff.size) - p_range + (RANGE_RATE / kappa) * p_range
        if dt is None:
            dt = 0.1 * friction / RANGE_RATE
        if thinning_time is None:
            thinning_time = 0.05
    dt = 0.5 * friction / kappa if dt is None else dt
    thinning_time = 0.005 if thinning_time is None else thinning_time
    chains = min(count, 1000) if chains is None else chains
    per_chain = -(-count // chains)
    thinning = max(1, int(round(thinning_time / dt)))
    burn_in = int(round(burn_in_time / dt))

    def energy_forces(r):
        dev = cg_map.value(r) - R
        e, f = ff.energy_forces(r)
        e = e + 0.5 * kappa * np.sum(dev * dev, axis=-1)
        f = f - kappa * np.einsum("...m,...mD->...D", dev, cg_map.jacobian(r))
        return e, f

    if initial is None:
        fiber = cg_map.fiber(R)
        u = rng.uniform((chains, fiber.n_dims))
        z = fiber.lower + (fiber.upper - fiber.lower) * u
        r0 = fiber.embed(z)
    else:
        r0 = np.broadcast_to(np.asarray(initial, dtype=np.float64), (chains, ff.size)).copy()
    states = langevin_chain(
        energy_forces, r0, beta, dt, friction, rng, per_chain, thinning, burn_in,
        mobility=mobility,
    )
    pos = states.reshape(-1, ff.size)[:count]
    chain = np.arange(count) % chains
    return ConditionalEnsemble(R, pos, kappa, beta, "restraint", chain=chain)


def _projected_quantities(ens, ff, cg_map):
    if len(ens) == 0:
        raise EmptyEnsemble("conditional ensemble has no frames")
    r = ens.positions
    f_aa = ff.forces(r)
    xi_f = cg_map.force_projection(r)
    proj_force = np.einsum("...mD,...D->...m", xi_f, f_aa)
    return r, f_aa, xi_f, proj_force


def cg_mean_force(ens, ff, cg_map):
    """Ensemble mean of ``Xi_F F_AA`` (plus ``div Xi_F / beta`` for nonlinear maps)."""
    r, _, _, proj_force = _projected_quantities(ens, ff, cg_map)
    per_frame = proj_force
    if not cg_map.is_linear:
        per_frame = per_frame + cg_map.divergence(r) / ens.beta
    return per_frame.mean(axis=0)


def _standard_error(values, chain):
    """Standard error of the frame mean, by batch means over chains.

    Frames of one Langevin chain are correlated; treating chains as the
    independent units keeps the error honest. Falls back to the naive
    estimate when every frame is its own chain.
    """
    labels, inverse = np.unique(chain, return_inverse=True)
    if len(labels) < 2:
        labels, inverse = np.arange(len(values)), np.arange(len(values))
    sums = np.zeros((len(labels),) + values.shape[1:])
    np.add.at(sums, inverse, values)
    means = sums / np.bincount(inverse).reshape((-1,) + (1,) * (values.ndim - 1))
    return means.std(axis=0, ddof=1) / np.sqrt(len(labels))


def _cross_cov(a, b):
    """Sample cross-covariance ``[I, J] = cov(a_I, b_J)`` with divisor ``T - 1``."""
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    return da.T @ db / (len(a) - 1)


@dataclass
class HessianEstimate:
    """Result of :func:`cg_hessian_estimate`.

    ``hessian`` is the symmetrised estimate; ``raw`` is the unsymmetrised sum.
    ``terms`` holds each signed contribution so that ``raw == sum(terms)``.
    ``asymmetry`` is ``max |raw - raw^T|`` and ``asymmetry_z`` the largest
    ratio of a per-frame antisymmetric entry's mean to its standard error
    (batch means over chains).
    """

    hessian: np.ndarray
    raw: np.ndarray
    terms: dict = field(default_factory=dict)
    asymmetry: float = 0.0
    asymmetry_z: float = 0.0
    count: int = 0


def cg_hessian_estimate(ens, ff, cg_map, method="auto", term2_sign=-1.0):
    """CG Hessian from a conditional ensemble.

    Linear maps use the projected Hessian minus ``beta`` times the projected
    force covariance. ``method="general"`` (the default for nonlinear maps)
    adds the four curvature corrections of a position-dependent projection;
    for a linear map those corrections are exactly zero.

    ``term2_sign`` exists for fault-injection checks only.
    """
    if len(ens) < 2:
        raise EmptyEnsemble("the Hessian estimator needs at least two frames")
    beta = ens.beta
    r, f_aa, xi_f, f = _projected_quantities(ens, ff, cg_map)
    h_aa = ff.hessian(r)
    projected = np.einsum("tID,tDE,tJE->tIJ", xi_f, h_aa, xi_f)
    terms = {
        "projected_hessian": projected.mean(axis=0),
        "force_covariance": term2_sign * beta * _cross_cov(f, f),
    }
    if method == "auto":
        method = "linear" if cg_map.is_linear else "general"
    m = f.shape[-1]
    asym_z = 0.0
    if method == "general":
        g = cg_map.divergence(r)
        t_mat = xi_t_matrix_batch(cg_map, r, f_aa)
        q_mat = np.einsum("tIj,tjJ->tIJ", xi_f, cg_map.divergence_gradient(r))
        terms["t_matrix"] = -t_mat.mean(axis=0)
        terms["force_divergence_covariance"] = -(_cross_cov(f, g) + _cross_cov(g, f))
        terms["divergence_terms"] = -(q_mat.mean(axis=0) + _cross_cov(g, g)) / beta
        nonsym = -t_mat - q_mat / beta
        anti = nonsym - np.swapaxes(nonsym, -1, -2)
        mean_anti = np.abs(anti.mean(axis=0))
        se = _standard_error(anti, ens.chain)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(se > 0, mean_anti / se, np.where(mean_anti > 0, np.inf, 0.0))
        asym_z = float(ratio.max()) if m > 1 else 0.0
    raw = sum(terms.values())
    sym = 0.5 * (raw + raw.T)
    return HessianEstimate(
        hessian=sym,
        raw=raw,
        terms=terms,
        asymmetry=float(np.abs(raw - raw.T).max()),
        asymmetry_z=asym_z,
        count=len(ens),
    )


def xi_t_matrix_batch(cg_map, r, f_aa):
    from .cg_map import xi_t_matrix

    return xi_t_matrix(cg_map, r, f_aa)


def free_energy_quadrature(ff, cg_map, R_grid, beta, nodes=64, half_width=6.0):
    """Free energy ``-log Z(R) / beta`` (up to a constant) on a list of CG points.

    ``Z(R)`` is integrated over the exact level set ``xi(r) = R`` with a
    tensor-product Gauss-Legendre rule (``nodes`` per axis). The level set is
    parametrised by the map itself; at most three integration dimensions are
    supported.
    """
    out = []
    x, w = np.polynomial.legendre.leggauss(nodes)
    for R in R_grid:
        fiber = cg_map.fiber(np.atleast_1d(np.asarray(R, dtype=np.float64)), half_width)
        k = fiber.n_dims
        if k > 3:
            raise DimensionTooLarge(f"{k} integration dimensions (max 3)")
        if k == 0:
            z = np.zeros((1, 0))
            logw = np.zeros(1)
        else:
            half = 0.5 * (fiber.upper - fiber.lower)
            mid = 0.5 * (fiber.upper + fiber.lower)
            grids = np.meshgrid(*([x] * k), indexing="ij")
            z = np.stack([g.ravel() for g in grids], axis=-1) * half + mid
            wgrids = np.meshgrid(*([w] * k), indexing="ij")
            logw = sum(np.log(g.ravel()) for g in wgrids) + np.sum(np.log(half))
        r = fiber.embed(z)
        log_integrand = logw + fiber.log_jacobian(z) - beta * ff.energy(r)
        out.append(-logsumexp(log_integrand) / beta)
    return np.array(out)


def quadrature_derivatives(ff, cg_map, R, beta, step=1e-2, **kwargs):
    """Gradient and Hessian of the quadrature free energy by central differences.

    Returns ``(mean_force, hessian)`` where ``mean_force = -grad F``.
    """
    R = np.atleast_1d(np.asarray(R, dtype=np.float64))
    m = len(R)
    eye = np.eye(m) * step
    points = [R]
    for i in range(m):
        points += [R + eye[i], R - eye[i]]
    for i in range(m):
        for j in range(i + 1, m):
            points += [R + eye[i] + eye[j], R + eye[i] - eye[j], R - eye[i] + eye[j], R - eye[i] - eye[j]]
    F = free_energy_quadrature(ff, cg_map, points, beta, **kwargs)
    f0 = F[0]
    grad = np.empty(m)
    hess = np.empty((m, m))
    for i in range(m):
        fp, fm = F[1 + 2 * i], F[2 + 2 * i]
        grad[i] = (fp - fm) / (2 * step)
        hess[i, i] = (fp - 2 * f0 + fm) / step**2
    idx = 1 + 2 * m
    for i in range(m):
        for j in range(i + 1, m):
            fpp, fpm, fmp, fmm = F[idx:idx + 4]
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * step**2)
            idx += 4
    return -grad, hess


def restraint_sensitivity(ff, cg_map, R, beta, stiffnesses, count, seed=0, **kwargs):
    """Hessian estimates across restraint stiffnesses, one row per stiffness."""
    rows = []
    for kappa in stiffnesses:
        ens = sample_conditional(
            ff, cg_map, R, beta, count, restraint_stiffness=kappa, rng=Rng(seed),
            method="restraint", **kwargs,
        )
        rows.append((kappa, cg_hessian_estimate(ens, ff, cg_map).hessian))
    return rows
