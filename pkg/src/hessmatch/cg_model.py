"""Coarse-grained potentials with exact forces, Hessian-vector products and
parameter gradients.

Every model exposes the same small interface on batched CG coordinates
``R`` of shape ``(B, d)`` and probe stacks ``V`` of shape ``(B, K, d)``:

``energy(R)``, ``forces(R)``, ``hvp(R, V)``
    plain evaluation;
``vjp(R, V)``
    returns ``(energy, forces, hvps, pullback)`` where
    ``pullback(e_bar, f_bar, h_bar)`` maps cotangents of the three outputs to
    the gradient with respect to the flat parameter vector (summed over the
    batch).

Two model families are provided: :class:`QuadraticBaseline`, whose optimum
under HVP matching is known in closed form, and :class:`PairMLP`, a sum of a
SiLU network over radial-basis features of every bead pair.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergentGeometry, DimensionMismatch
from .numerics import Rng


def _batch(R, d):
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 1
    R = np.atleast_2d(R)
    if R.shape[-1] != d:
        raise DimensionMismatch(f"coordinate length {R.shape[-1]} != {d}")
    return R, single


class _Model:
    """Shared evaluation helpers; subclasses implement ``_eval``."""

    d = 0

    def energy(self, R):
        R2, single = _batch(R, self.d)
        e = self._eval(R2, None)[0]
        return e[0] if single else e

    def forces(self, R):
        R2, single = _batch(R, self.d)
        f = self._eval(R2, None)[1]
        return f[0] if single else f

    def hvp(self, R, V):
        """Exact Hessian of the energy applied to ``V``.

        ``R`` of shape ``(d,)`` pairs with ``V`` of shape ``(d,)`` or
        ``(K, d)``; batched ``R`` pairs with ``(B, K, d)``.
        """
        R2, single = _batch(R, self.d)
        V_in = np.asarray(V, dtype=np.float64)
        if single:
            V3 = V_in.reshape(1, -1, self.d)
        else:
            V3 = V_in if V_in.ndim == 3 else V_in[:, None, :]
        h = self._eval(R2, V3)[2]
        if single:
            return h[0].reshape(V_in.shape)
        return h if V_in.ndim == 3 else h[:, 0]

    def vjp(self, R, V):
        R2, _ = _batch(R, self.d)
        V3 = np.asarray(V, dtype=np.float64)
        e, f, h, cache = self._eval(R2, V3, keep=True)
        return e, f, h, lambda eb, fb, hb: self._pullback(cache, eb, fb, hb)

    def force_function(self):
        """A callable ``R (B, d) -> forces`` frozen at the current parameters."""
        params = self.params.copy()
        frozen = self.with_params(params)
        return lambda R: frozen._eval(R, None)[1]

    def with_params(self, params):
        out = self.copy()
        out.params = np.array(params, dtype=np.float64)
        return out


# ---------------------------------------------------------------------------
# quadratic baseline
# ---------------------------------------------------------------------------


class QuadraticBaseline(_Model):
    """``W(R) = 1/2 (R - R_ref)^T A (R - R_ref)`` with symmetric ``A``.

    Parameters are the upper triangle of ``A`` (row-major, diagonal
    included) followed by ``R_ref``.
    """

    kind = "quadratic"

    def __init__(self, A, R_ref=None):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=0):
            raise ValueError("A must be square and symmetric")
        self.d = A.shape[0]
        self._iu = np.triu_indices(self.d)
        R_ref = np.zeros(self.d) if R_ref is None else np.asarray(R_ref, dtype=np.float64)
        self.params = np.concatenate([A[self._iu], R_ref])

    @property
    def A(self):
        A = np.zeros((self.d, self.d))
        A[self._iu] = self.params[: len(self._iu[0])]
        return A + np.triu(A, 1).T

    @property
    def R_ref(self):
        return self.params[len(self._iu[0]):]

    def copy(self):
        return QuadraticBaseline(self.A, self.R_ref.copy())

    def force_function(self):
        A, ref = self.A, self.R_ref.copy()
        return lambda R: (ref - R) @ A

    def _eval(self, R, V, keep=False):
        A = self.A
        y = R - self.R_ref
        Ay = y @ A
        e = 0.5 * np.sum(y * Ay, axis=-1)
        h = None if V is None else V @ A
        return e, -Ay, h, (y, V, A)

    def _sym_grad(self, M):
        """Gradient w.r.t. the upper-triangle parameters given ``dL/dA`` as a
        full matrix ``M`` (entries ``A_ij`` and ``A_ji`` are one parameter)."""
        S = M + M.T
        S[np.diag_indices(self.d)] *= 0.5
        return S[self._iu]

    def _pullback(self, cache, e_bar, f_bar, h_bar):
        y, V, A = cache
        M = np.zeros((self.d, self.d))
        g_ref = np.zeros(self.d)
        if e_bar is not None:
            eb = np.asarray(e_bar, dtype=np.float64)
            M += 0.5 * np.einsum("b,bi,bj->ij", eb, y, y)
            g_ref -= (eb @ y) @ A
        if f_bar is not None:
            # F = -A y
            M -= f_bar.T @ y
            g_ref += f_bar.sum(axis=0) @ A
        if h_bar is not None:
            M += np.einsum("bki,bkj->ij", h_bar, V)
        return np.concatenate([self._sym_grad(M), g_ref])


# ---------------------------------------------------------------------------
# pair MLP
# ---------------------------------------------------------------------------


@dataclass
class FeatureConfig:
    rbf_count: int = 12
    cutoff_low: float = 0.3
    cutoff_high: float = 1.2

    def __post_init__(self):
        if self.rbf_count < 1:
            raise ValueError("rbf_count must be >= 1")
        if not self.cutoff_low < self.cutoff_high:
            raise ValueError("cutoff_low must be below cutoff_high")


def silu_derivatives(z):
    """SiLU and its first three derivatives."""
    p = 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic
    dp = p * (1.0 - p)
    q = 1.0 - 2.0 * p
    s0 = z * p
    s1 = p + z * dp
    s2 = dp * (2.0 + z * q)
    s3 = dp * (q * (3.0 + z * q) - 2.0 * z * dp)
    return s0, s1, s2, s3


def expnorm_rbf(d, cfg):
    """Exponential-normal radial basis and its first two ``d``-derivatives.

    ``phi_k = exp(-beta_k (exp(alpha (lo - d)) - mu_k)^2)`` with
    ``alpha = 5 / (hi - lo)``; centres ``mu_k`` are evenly spaced in the
    transformed variable between its values at ``hi`` and ``lo``.
    """
    lo, hi, n = cfg.cutoff_low, cfg.cutoff_high, cfg.rbf_count
    alpha = 5.0 / (hi - lo)
    start = np.exp(-alpha * (hi - lo))
    mu = np.linspace(start, 1.0, n)
    width = (2.0 / n * (1.0 - start)) ** -2
    q = np.exp(alpha * (lo - d))[..., None]
    q1 = -alpha * q
    q2 = alpha * alpha * q
    w = q - mu
    phi = np.exp(-width * w * w)
    a = -2.0 * width * w * q1  # d log(phi) / dd
    phi1 = phi * a
    phi2 = phi * (a * a - 2.0 * width * (q1 * q1 + w * q2))
    return phi, phi1, phi2


def cosine_switch(d, hi):
    """``[1/2 (cos(pi d / hi) + 1)]^2`` below ``hi``, zero above; C^2 at ``hi``."""
    inside = d < hi
    arg = np.pi * np.minimum(d, hi) / hi
    c = 0.5 * (np.cos(arg) + 1.0)
    c1 = -0.5 * np.pi / hi * np.sin(arg)
    c2 = -0.5 * (np.pi / hi) ** 2 * np.cos(arg)
    s = np.where(inside, c * c, 0.0)
    s1 = np.where(inside, 2.0 * c * c1, 0.0)
    s2 = np.where(inside, 2.0 * (c1 * c1 + c * c2), 0.0)
    return s, s1, s2


class PairMLP(_Model):
    """Sum over bead pairs of ``s(d) g(phi(d))``.

    ``phi`` is the radial basis, ``s`` the cosine switch and ``g`` a SiLU
    network with widths ``(rbf_count, *hidden, 1)``. The last layer is
    linear. Parameters are stored layer by layer as ``W`` (row-major,
    ``(out, in)``) then ``b``.
    """

    kind = "pair_mlp"

    def __init__(self, n, dim, hidden=(16, 16), features=None, params=None, seed=0):
        self.n, self.dim = n, dim
        self.d = n * dim
        self.features = features or FeatureConfig()
        self.widths = (self.features.rbf_count,) + tuple(hidden) + (1,)
        self.pairs = np.array([(a, b) for a in range(n) for b in range(a + 1, n)], dtype=int)
        self.pairs = self.pairs.reshape(-1, 2)
        if params is None:
            params = self._init_params(seed)
        self.params = np.array(params, dtype=np.float64)
        if self.params.size != self.n_params:
            raise DimensionMismatch(f"{self.params.size} parameters, expected {self.n_params}")

    @property
    def n_params(self):
        return sum(o * i + o for i, o in zip(self.widths[:-1], self.widths[1:]))

    def _init_params(self, seed):
        rng = Rng(seed)
        chunks = []
        for i, o in zip(self.widths[:-1], self.widths[1:]):
            chunks.append(rng.normal((o, i)).ravel() / np.sqrt(i))
            chunks.append(np.zeros(o))
        return np.concatenate(chunks)

    def layers(self, params=None):
        p = self.params if params is None else params
        out, k = [], 0
        for i, o in zip(self.widths[:-1], self.widths[1:]):
            W = p[k:k + o * i].reshape(o, i)
            k += o * i
            out.append((W, p[k:k + o]))
            k += o
        return out

    def copy(self):
        return PairMLP(self.n, self.dim, self.widths[1:-1], self.features, self.params.copy())

    # -- geometry ---------------------------------------------------------

    def _geometry(self, R):
        x = R.reshape(len(R), self.n, self.dim)
        rel = x[:, self.pairs[:, 0]] - x[:, self.pairs[:, 1]]
        dist = np.linalg.norm(rel, axis=-1)
        if np.any(dist < 1e-12):
            raise DivergentGeometry("two beads coincide")
        return rel, dist, rel / dist[..., None]

    def _scatter(self, pair_vec):
        """Map per-pair vectors (``+`` on the first bead, ``-`` on the second)
        to per-bead vectors. ``pair_vec`` has shape ``(..., P, dim)``."""
        out = np.zeros(pair_vec.shape[:-2] + (self.n, self.dim))
        for p, (a, b) in enumerate(self.pairs):
            out[..., a, :] += pair_vec[..., p, :]
            out[..., b, :] -= pair_vec[..., p, :]
        return out.reshape(pair_vec.shape[:-2] + (self.d,))

    def _relative(self, V):
        """Per-pair relative displacements ``v_a - v_b``; ``V`` is ``(..., d)``."""
        x = V.reshape(V.shape[:-1] + (self.n, self.dim))
        return x[..., self.pairs[:, 0], :] - x[..., self.pairs[:, 1], :]

    # -- network ------------------------------------------------------------

    def pair_energy_derivatives(self, dist):
        """``e``, ``de/dd`` and ``d2e/dd2`` for every pair distance.

        The first derivative comes from a reverse sweep through the network;
        the second from pushing a unit tangent in ``d`` through that reverse
        sweep. Returns the three arrays and the cached intermediates.
        """
        layers = self.layers()
        phi, phi1, phi2 = expnorm_rbf(dist, self.features)
        # forward with tangent along d
        h, hd = [phi], [phi1]
        zs, acts = [], []
        for W, b in layers[:-1]:
            z = h[-1] @ W.T + b
            zd = hd[-1] @ W.T
            s0, s1, s2, s3 = silu_derivatives(z)
            zs.append((z, zd))
            acts.append((s1, s2, s3))
            h.append(s0)
            hd.append(s1 * zd)
        w_out, b_out = layers[-1]
        g = (h[-1] @ w_out.T + b_out)[..., 0]
        # reverse sweep and its tangent
        hbar = np.broadcast_to(w_out[0], h[-1].shape)
        hbar_d = np.zeros_like(hbar)
        for (W, _), (z, zd), (s1, s2, _) in zip(layers[-2::-1], zs[::-1], acts[::-1]):
            zbar = s1 * hbar
            zbar_d = s2 * zd * hbar + s1 * hbar_d
            hbar = zbar @ W
            hbar_d = zbar_d @ W
        g1 = np.sum(hbar * phi1, axis=-1)
        g2 = np.sum(hbar_d * phi1 + hbar * phi2, axis=-1)
        s, s1_, s2_ = cosine_switch(dist, self.features.cutoff_high)
        e = s * g
        e1 = s1_ * g + s * g1
        e2 = s2_ * g + 2.0 * s1_ * g1 + s * g2
        jet = dict(phi=(phi, phi1, phi2), switch=(s, s1_, s2_), layers=layers)
        return e, e1, e2, jet

    def _eval(self, R, V, keep=False):
        rel, dist, u = self._geometry(R)
        e_p, e1, e2, jet = self.pair_energy_derivatives(dist)
        energy = e_p.sum(axis=-1)
        grad = self._scatter(e1[..., None] * u)
        hv = None
        if V is not None:
            vr = self._relative(V)  # (B, K, P, dim)
            uu = u[:, None]
            proj = np.sum(uu * vr, axis=-1)
            pair_hv = (
                (e2[:, None] * proj)[..., None] * uu
                + (e1 / dist)[:, None, :, None] * (vr - proj[..., None] * uu)
            )
            hv = self._scatter(pair_hv)
        cache = (rel, dist, u, V, e1, jet) if keep else None
        return energy, -grad, hv, cache

    def _pullback(self, cache, e_bar, f_bar, h_bar):
        _, dist, u, V, e1, jet = cache
        B, P = dist.shape
        eb = np.zeros((B, P))
        e1b = np.zeros((B, P))
        e2b = np.zeros((B, P))
        if e_bar is not None:
            eb += np.asarray(e_bar, dtype=np.float64)[:, None]
        if f_bar is not None:
            # F_a = -e1 u, F_b = +e1 u
            e1b -= np.sum(self._relative(f_bar) * u, axis=-1)
        if h_bar is not None:
            vr = self._relative(V)
            hr = self._relative(h_bar)
            uu = u[:, None]
            proj_v = np.sum(uu * vr, axis=-1)
            proj_h = np.sum(uu * hr, axis=-1)
            e2b += np.sum(proj_v * proj_h, axis=1)
            e1b += np.sum(np.sum(hr * vr, axis=-1) - proj_v * proj_h, axis=1) / dist
        return self._jet_pullback(jet, eb, e1b, e2b)

    def _jet_pullback(self, jet, eb, e1b, e2b):
        """Reverse mode through the second-order Taylor jet of ``e(d)``."""
        s, s1, s2 = jet["switch"]
        layers = jet["layers"]
        phi, phi1, phi2 = jet["phi"]
        gb = s * eb + s1 * e1b + s2 * e2b
        g1b = s * e1b + 2.0 * s1 * e2b
        g2b = s * e2b
        # forward jet (value, first, second d-derivative) of every layer
        h = [(phi, phi1, phi2)]
        pre = []
        for W, b in layers[:-1]:
            a0, a1, a2 = h[-1]
            z0, z1, z2 = a0 @ W.T + b, a1 @ W.T, a2 @ W.T
            t0, t1, t2, t3 = silu_derivatives(z0)
            pre.append((z1, z2, t1, t2, t3))
            h.append((t0, t1 * z1, t2 * z1 * z1 + t1 * z2))
        grads = []
        w_out, _ = layers[-1]
        a0, a1, a2 = h[-1]
        grads.append((
            np.einsum("bp,bpi->i", gb, a0) + np.einsum("bp,bpi->i", g1b, a1)
            + np.einsum("bp,bpi->i", g2b, a2),
            np.array([gb.sum()]),
        ))
        hb = (gb[..., None] * w_out[0], g1b[..., None] * w_out[0], g2b[..., None] * w_out[0])
        for li in range(len(layers) - 2, -1, -1):
            W, _ = layers[li]
            z1, z2, t1, t2, t3 = pre[li]
            yb0, yb1, yb2 = hb
            zb2 = t1 * yb2
            zb1 = t1 * yb1 + 2.0 * t2 * z1 * yb2
            zb0 = t1 * yb0 + t2 * z1 * yb1 + (t3 * z1 * z1 + t2 * z2) * yb2
            a0, a1, a2 = h[li]
            gW = (np.einsum("bpo,bpi->oi", zb0, a0) + np.einsum("bpo,bpi->oi", zb1, a1)
                  + np.einsum("bpo,bpi->oi", zb2, a2))
            grads.append((gW, zb0.sum(axis=(0, 1))))
            hb = (zb0 @ W, zb1 @ W, zb2 @ W)
        grads.reverse()
        out = []
        for (gW, gb_), (W, _) in zip(grads, layers):
            out.append(np.reshape(gW, W.shape).ravel())
            out.append(np.ravel(gb_))
        return np.concatenate(out)


class SumModel(_Model):
    """Energy sum of several models over the same coordinates."""

    kind = "sum"

    def __init__(self, models):
        self.models = list(models)
        self.d = self.models[0].d
        if any(m.d != self.d for m in self.models):
            raise DimensionMismatch("summed models must share the coordinate length")

    @property
    def params(self):
        return np.concatenate([m.params for m in self.models])

    @params.setter
    def params(self, value):
        k = 0
        for m in self.models:
            size = m.params.size
            m.params = np.array(value[k:k + size], dtype=np.float64)
            k += size

    def copy(self):
        return SumModel([m.copy() for m in self.models])

    def _eval(self, R, V, keep=False):
        parts = [m._eval(R, V, keep) for m in self.models]
        e = sum(p[0] for p in parts)
        f = sum(p[1] for p in parts)
        h = None if V is None else sum(p[2] for p in parts)
        return e, f, h, parts

    def _pullback(self, cache, eb, fb, hb):
        return np.concatenate([m._pullback(p[3], eb, fb, hb) for m, p in zip(self.models, cache)])


# ---------------------------------------------------------------------------
# functional API and checkpoints
# ---------------------------------------------------------------------------


def model_energy(m, R):
    return m.energy(R)


def model_forces(m, R):
    return m.forces(R)


def model_hvp(m, R, v):
    return m.hvp(R, v)


def model_param_grad(m, R, V=None, e_bar=None, f_bar=None, h_bar=None):
    """Gradient w.r.t. ``m.params`` of ``e_bar.E + f_bar.F + h_bar.HV``.

    ``R`` is ``(B, d)``; ``V`` and ``h_bar`` are ``(B, K, d)``.
    """
    R2, _ = _batch(R, m.d)
    if V is None:
        V = np.zeros((len(R2), 0, m.d))
    _, _, _, pull = m.vjp(R2, V)
    f_bar = None if f_bar is None else np.atleast_2d(f_bar)
    e_bar = None if e_bar is None else np.atleast_1d(e_bar)
    return pull(e_bar, f_bar, h_bar)


def save_checkpoint(path, m):
    from .targets import atomic_write

    if isinstance(m, QuadraticBaseline):
        shape = f"d={m.d}"
    elif isinstance(m, PairMLP):
        f = m.features
        shape = (f"n={m.n} dim={m.dim} widths={','.join(map(str, m.widths))} "
                 f"cutoff_low={f.cutoff_low:.17g} cutoff_high={f.cutoff_high:.17g}")
    else:
        raise TypeError(f"cannot checkpoint a {type(m).__name__}")
    lines = [f"CGMODEL v1 kind={m.kind}", shape] + [f"{p:.17g}" for p in m.params]
    atomic_write(path, "\n".join(lines) + "\n")


def load_checkpoint(path):
    from .errors import StoreMismatch

    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2 or not lines[0].startswith("CGMODEL v1 kind="):
        raise StoreMismatch(f"{path} is not a CGMODEL v1 checkpoint")
    kind = lines[0].split("kind=", 1)[1].strip()
    shape = dict(tok.split("=", 1) for tok in lines[1].split())
    params = np.array([float(x) for x in lines[2:]])
    if kind == "quadratic":
        d = int(shape["d"])
        m = QuadraticBaseline(np.eye(d))
    elif kind == "pair_mlp":
        widths = tuple(int(w) for w in shape["widths"].split(","))
        feats = FeatureConfig(widths[0], float(shape["cutoff_low"]), float(shape["cutoff_high"]))
        m = PairMLP(int(shape["n"]), int(shape["dim"]), widths[1:-1], feats)
    else:
        raise StoreMismatch(f"unknown model kind {kind!r}")
    if params.size != m.params.size:
        raise StoreMismatch(f"{path}: {params.size} parameters, expected {m.params.size}")
    m.params = params
    return m
