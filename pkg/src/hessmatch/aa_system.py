"""Toy fine-grained potentials with analytic forces and Hessians.

Every evaluation accepts positions of shape ``(..., n * dim)`` and broadcasts
over the leading batch axes, so ensembles of frames are evaluated in a single
call. Only the configurational potential is modelled; kinetic energy plays no
role in any conditional average used downstream.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentGeometry, DimensionMismatch, StepTooLarge
from .numerics import Rng

LJ_MIN_DISTANCE = 1e-8


@dataclass(frozen=True)
class AtomisticFrame:
    positions: np.ndarray
    frame_index: int = 0


@dataclass
class Frames:
    """A batch of frames stored as arrays.

    ``positions`` has shape ``(T, n * dim)``; ``forces`` is optional and has the
    same shape when present. Iterating yields :class:`AtomisticFrame` objects.
    """

    positions: np.ndarray
    n: int
    dim: int
    frame_index: np.ndarray = None
    forces: np.ndarray = None
    space: str = "AA"

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        if self.positions.shape[1] != self.n * self.dim:
            raise DimensionMismatch(
                f"positions have width {self.positions.shape[1]}, expected {self.n * self.dim}"
            )
        if self.frame_index is None:
            self.frame_index = np.arange(len(self.positions))
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i):
        return AtomisticFrame(self.positions[i], int(self.frame_index[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


# ---------------------------------------------------------------------------
# force-field terms
#
# Each term works on x of shape (B, n, dim) and adds into gradient (B, n, dim)
# and Hessian (B, n, dim, n, dim) accumulators.
# ---------------------------------------------------------------------------


def _radial_pair(x, i, j, radial, out_e, out_g, out_h, anchor=None):
    """Accumulate a potential that depends only on |x_i - x_j| (or |x_i - anchor|)."""
    if anchor is None:
        rel = x[:, i, :] - x[:, j, :]
    else:
        rel = x[:, i, :] - anchor
    d = np.linalg.norm(rel, axis=-1)
    safe = np.where(d > 0.0, d, 1.0)
    u = rel / safe[:, None]
    e, de, d2e = radial(d)
    out_e += e
    if out_g is None:
        return
    g = de[:, None] * u
    out_g[:, i, :] += g
    if anchor is None:
        out_g[:, j, :] -= g
    if out_h is None:
        return
    dim = x.shape[-1]
    uu = u[:, :, None] * u[:, None, :]
    block = d2e[:, None, None] * uu + (de / safe)[:, None, None] * (np.eye(dim) - uu)
    out_h[:, i, :, i, :] += block
    if anchor is None:
        out_h[:, j, :, j, :] += block
        out_h[:, i, :, j, :] -= block
        out_h[:, j, :, i, :] -= block


@dataclass(frozen=True)
class HarmonicBond:
    """``k/2 (|x_i - x_j| - r0)^2``."""

    i: int
    j: int
    k: float
    r0: float

    def radial(self, d):
        return 0.5 * self.k * (d - self.r0) ** 2, self.k * (d - self.r0), np.full_like(d, self.k)

    def accumulate(self, x, e, g, h):
        _radial_pair(x, self.i, self.j, self.radial, e, g, h)


@dataclass(frozen=True)
class AnchoredBond:
    """``k/2 (|x_i - anchor| - r0)^2``: a bond to a pinned particle.

    The pinned particle carries no degrees of freedom, which keeps radial
    conditional ensembles normalisable.
    """

    i: int
    k: float
    r0: float
    anchor: tuple = None

    def radial(self, d):
        return 0.5 * self.k * (d - self.r0) ** 2, self.k * (d - self.r0), np.full_like(d, self.k)

    def accumulate(self, x, e, g, h):
        anchor = np.zeros(x.shape[-1]) if self.anchor is None else np.asarray(self.anchor, float)
        _radial_pair(x, self.i, None, self.radial, e, g, h, anchor=anchor)


@dataclass(frozen=True)
class LennardJones:
    """``4 eps [(sigma/d)^12 - (sigma/d)^6]`` between atoms i and j, no cutoff."""

    i: int
    j: int
    epsilon: float
    sigma: float

    def radial(self, d):
        if np.any(d < LJ_MIN_DISTANCE):
            raise DivergentGeometry(
                f"LJ pair ({self.i}, {self.j}) closer than {LJ_MIN_DISTANCE}"
            )
        s6 = (self.sigma / d) ** 6
        s12 = s6 * s6
        e = 4.0 * self.epsilon * (s12 - s6)
        de = 4.0 * self.epsilon * (-12.0 * s12 + 6.0 * s6) / d
        d2e = 4.0 * self.epsilon * (156.0 * s12 - 42.0 * s6) / d**2
        return e, de, d2e

    def accumulate(self, x, e, g, h):
        _radial_pair(x, self.i, self.j, self.radial, e, g, h)


@dataclass(frozen=True)
class HarmonicWell:
    """``k_w/2 |x_i - center|^2``."""

    i: int
    k: float
    center: tuple = None

    def accumulate(self, x, e, g, h):
        c = np.zeros(x.shape[-1]) if self.center is None else np.asarray(self.center, float)
        rel = x[:, self.i, :] - c
        e += 0.5 * self.k * np.sum(rel * rel, axis=-1)
        if g is not None:
            g[:, self.i, :] += self.k * rel
        if h is not None:
            h[:, self.i, :, self.i, :] += self.k * np.eye(x.shape[-1])


@dataclass(frozen=True)
class HarmonicAngle:
    """``k_theta/2 (theta - theta0)^2`` for the angle at vertex ``j`` of (i, j, k).

    Requires ``dim >= 2``. Collinear triples have no defined angle gradient and
    raise :class:`DivergentGeometry` when derivatives are requested.
    """

    i: int
    j: int
    k: int
    k_theta: float
    theta0: float

    def accumulate(self, x, e, g, h):
        a = x[:, self.i, :] - x[:, self.j, :]
        b = x[:, self.k, :] - x[:, self.j, :]
        na = np.linalg.norm(a, axis=-1)
        nb = np.linalg.norm(b, axis=-1)
        if np.any(na < LJ_MIN_DISTANCE) or np.any(nb < LJ_MIN_DISTANCE):
            raise DivergentGeometry("angle arm of zero length")
        c = np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)
        theta = np.arccos(c)
        dtheta = theta - self.theta0
        e += 0.5 * self.k_theta * dtheta**2
        if g is None:
            return
        s = np.sqrt(1.0 - c * c)
        if np.any(s < 1e-12):
            raise DivergentGeometry("collinear angle triple")
        nab = (na * nb)[:, None]
        ga = b / nab - c[:, None] * a / (na**2)[:, None]
        gb = a / nab - c[:, None] * b / (nb**2)[:, None]
        # d theta = -dc / sin(theta)
        ta = -ga / s[:, None]
        tb = -gb / s[:, None]
        pref = (self.k_theta * dtheta)[:, None]
        g[:, self.i, :] += pref * ta
        g[:, self.k, :] += pref * tb
        g[:, self.j, :] -= pref * (ta + tb)
        if h is None:
            return
        dim = x.shape[-1]
        eye = np.eye(dim)

        def outer(p, q):
            return p[:, :, None] * q[:, None, :]

        na_, nb_, c_ = na[:, None, None], nb[:, None, None], c[:, None, None]
        caa = (
            -outer(b, a) / (na_**3 * nb_)
            - outer(a, ga) / na_**2
            - c_ * (eye / na_**2 - 2.0 * outer(a, a) / na_**4)
        )
        cbb = (
            -outer(a, b) / (nb_**3 * na_)
            - outer(b, gb) / nb_**2
            - c_ * (eye / nb_**2 - 2.0 * outer(b, b) / nb_**4)
        )
        cab = eye / (na_ * nb_) - outer(b, b) / (na_ * nb_**3) - outer(a, gb) / na_**2
        s_ = s[:, None, None]
        cos_term = (c / s**3)[:, None, None]
        # Hessian of theta in (a, b) blocks
        taa = -caa / s_ - cos_term * outer(ga, ga)
        tbb = -cbb / s_ - cos_term * outer(gb, gb)
        tab = -cab / s_ - cos_term * outer(ga, gb)
        kt = self.k_theta
        dt_ = dtheta[:, None, None]
        blocks = {
            (0, 0): kt * (outer(ta, ta) + dt_ * taa),
            (1, 1): kt * (outer(tb, tb) + dt_ * tbb),
            (0, 1): kt * (outer(ta, tb) + dt_ * tab),
        }
        blocks[(1, 0)] = np.swapaxes(blocks[(0, 1)], 1, 2)
        # a = x_i - x_j, b = x_k - x_j
        coeff = {self.i: (1.0, 0.0), self.j: (-1.0, -1.0), self.k: (0.0, 1.0)}
        for p, cp in coeff.items():
            for q, cq in coeff.items():
                acc = 0.0
                for alpha in range(2):
                    for beta in range(2):
                        w = cp[alpha] * cq[beta]
                        if w:
                            acc = acc + w * blocks[(alpha, beta)]
                h[:, p, :, q, :] += acc


@dataclass(frozen=True)
class QuadraticForm:
    """``r^T K r / 2`` over the full coordinate vector; ``K`` symmetric."""

    K: np.ndarray

    def accumulate(self, x, e, g, h):
        B, n, dim = x.shape
        K = np.asarray(self.K, dtype=np.float64)
        r = x.reshape(B, n * dim)
        Kr = r @ K.T
        e += 0.5 * np.sum(r * Kr, axis=-1)
        if g is not None:
            g += Kr.reshape(B, n, dim)
        if h is not None:
            h += K.reshape(n, dim, n, dim)[None]


@dataclass
class ForceField:
    """A sum of potential terms acting on ``n`` atoms in ``dim`` dimensions."""

    n: int
    dim: int
    terms: list = field(default_factory=list)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        for term in self.terms:
            for idx in _term_atoms(term):
                if not 0 <= idx < self.n:
                    raise ValueError(f"atom index {idx} out of range in {term}")
            for name in ("k", "k_theta", "epsilon"):
                if name == "k" and isinstance(term, HarmonicAngle):
                    continue
                val = getattr(term, name, None)
                if val is not None and val < 0:
                    raise ValueError(f"negative stiffness in {term}")
            if isinstance(term, HarmonicAngle) and self.dim < 2:
                raise ValueError("HarmonicAngle needs dim >= 2")
            if isinstance(term, QuadraticForm):
                K = np.asarray(term.K, dtype=np.float64)
                if K.shape != (self.size, self.size):
                    raise DimensionMismatch(f"QuadraticForm K has shape {K.shape}")
                if not np.array_equal(K, K.T):
                    raise ValueError("QuadraticForm K must be symmetric")

    @property
    def size(self):
        return self.n * self.dim

    def _evaluate(self, positions, want_grad, want_hess):
        r = np.asarray(positions, dtype=np.float64)
        if r.shape[-1] != self.size:
            raise DimensionMismatch(f"positions width {r.shape[-1]} != {self.size}")
        batch_shape = r.shape[:-1]
        x = r.reshape(-1, self.n, self.dim)
        B = x.shape[0]
        e = np.zeros(B)
        g = np.zeros((B, self.n, self.dim)) if want_grad else None
        h = np.zeros((B, self.n, self.dim, self.n, self.dim)) if want_hess else None
        for term in self.terms:
            term.accumulate(x, e, g, h)
        e = e.reshape(batch_shape)
        if g is not None:
            g = g.reshape(batch_shape + (self.size,))
        if h is not None:
            h = h.reshape(batch_shape + (self.size, self.size))
        return e, g, h

    def energy(self, positions):
        return self._evaluate(positions, False, False)[0]

    def forces(self, positions):
        return -self._evaluate(positions, True, False)[1]

    def energy_forces(self, positions):
        e, g, _ = self._evaluate(positions, True, False)
        return e, -g

    def hessian(self, positions):
        # g is needed by the angle term to form its Hessian
        h = self._evaluate(positions, True, True)[2]
        # commutative addition makes the result bitwise symmetric
        return 0.5 * (h + np.swapaxes(h, -1, -2))


def _term_atoms(term):
    if isinstance(term, HarmonicAngle):
        return (term.i, term.j, term.k)
    if isinstance(term, (HarmonicBond, LennardJones)):
        return (term.i, term.j)
    if isinstance(term, (HarmonicWell, AnchoredBond)):
        return (term.i,)
    return ()


def aa_energy(frame, ff):
    return ff.energy(_positions(frame))


def aa_forces(frame, ff):
    return ff.forces(_positions(frame))


def aa_hessian(frame, ff):
    return ff.hessian(_positions(frame))


def aa_hvp_fd(frame, ff, direction, epsilon=1e-5):
    """Central-difference Hessian-vector product from two force evaluations.

    ``-[F(r + eps v) - F(r - eps v)] / (2 eps)``; broadcasts when ``frame``
    holds a batch of positions and ``direction`` a matching batch of vectors.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    r = _positions(frame)
    v = np.asarray(direction, dtype=np.float64)
    if not np.all(np.linalg.norm(v, axis=-1) > 0):
        raise ValueError("direction must be nonzero")
    return -(ff.forces(r + epsilon * v) - ff.forces(r - epsilon * v)) / (2.0 * epsilon)


def _positions(frame):
    if isinstance(frame, AtomisticFrame):
        return frame.positions
    if isinstance(frame, Frames):
        return frame.positions
    return np.asarray(frame, dtype=np.float64)


def langevin_chain(
    energy_forces,
    r0,
    beta,
    dt,
    friction,
    rng,
    n_samples,
    thinning,
    burn_in,
    max_energy_jump=1e6,
    mobility=None,
):
    """Overdamped Euler-Maruyama sampler shared by the fine-grained samplers.

    ``energy_forces(r)`` returns ``(energy, forces)`` for a batch of states.
    ``r0`` has shape ``(chains, D)``; all chains advance together. Returns an
    array ``(n_samples, chains, D)`` of recorded states.

    ``mobility`` is an optional constant symmetric positive definite ``(D, D)``
    matrix ``M``; the update becomes ``dt/friction M F + sqrt(2 dt/(beta
    friction)) M^(1/2) xi``, which leaves ``exp(-beta U)`` stationary.
    """
    r = np.array(r0, dtype=np.float64)
    chains, D = r.shape
    drift = dt / friction
    noise_scale = np.sqrt(2.0 * dt / (beta * friction))
    if mobility is not None:
        w, V = np.linalg.eigh(mobility)
        mob_half = (V * np.sqrt(w)) @ V.T
    e_prev, f = energy_forces(r)
    out = np.empty((n_samples, chains, D))
    total = burn_in + n_samples * thinning
    chunk = 256
    recorded = 0
    step = 0
    while step < total:
        m = min(chunk, total - step)
        rng.state, z = _normals(rng.state, m * chains * D)
        z = z.reshape(m, chains, D)
        if mobility is not None:
            z = z @ mob_half
        for s in range(m):
            if mobility is not None:
                f = f @ mobility
            r = r + drift * f + noise_scale * z[s]
            e_new, f = energy_forces(r)
            if np.any(e_new - e_prev > max_energy_jump) or not np.all(np.isfinite(e_new)):
                raise StepTooLarge(
                    f"energy rose by more than {max_energy_jump:g} at step {step + s}; reduce dt"
                )
            e_prev = e_new
            done = step + s + 1
            if done > burn_in and (done - burn_in) % thinning == 0:
                out[recorded] = r
                recorded += 1
        step += m
    return out


def _normals(state, count):
    from .numerics import standard_normals

    return standard_normals(state, count)


def sample_boltzmann(
    ff,
    beta,
    count,
    dt=1e-3,
    friction=1.0,
    rng=None,
    thinning=10,
    chains=1,
    initial=None,
    burn_in=None,
):
    """Sample ``count`` frames approximately from ``exp(-beta U)``.

    Runs ``chains`` overdamped Langevin chains in lock step. Burn-in defaults
    to ``10 * count`` steps for a single chain, and to ten times the number of
    frames each chain contributes otherwise. Frames are ordered round-robin
    across chains.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = rng if rng is not None else Rng(0)
    per_chain = -(-count // chains)
    if burn_in is None:
        burn_in = 10 * per_chain
    if initial is None:
        r0 = np.zeros((chains, ff.size))
    else:
        r0 = np.broadcast_to(np.asarray(initial, dtype=np.float64), (chains, ff.size)).copy()
    states = langevin_chain(
        ff.energy_forces, r0, beta, dt, friction, rng, per_chain, thinning, burn_in
    )
    positions = states.reshape(-1, ff.size)[:count]
    return Frames(positions, ff.n, ff.dim, forces=ff.forces(positions))
