"""Overdamped Langevin simulation of a CG model."""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState
from .numerics import standard_normals

KEEP_LAST = 10


@dataclass
class SimConfig:
    dt: float = 1e-3
    friction: float = 1.0
    beta: float = 1.0
    steps: int = 10000
    thinning: int = 10
    seed: int = 0
    initial: np.ndarray = None

    def __post_init__(self):
        if self.dt <= 0 or self.friction <= 0 or self.beta <= 0:
            raise ValueError("dt, friction and beta must be positive")
        if self.steps < 1 or self.thinning < 1:
            raise ValueError("steps and thinning must be >= 1")


def simulate(model, cfg, replicas=1, chunk=4096):
    """Euler-Maruyama trajectories of ``dR = F/friction dt + sqrt(2/(beta friction)) dW``.

    Replica ``i`` draws its noise from seed ``cfg.seed + i`` so that a
    replica's trajectory does not depend on how many others run alongside.

    Returns
    -------
    ndarray, shape ``(replicas, steps // thinning, d)``
        States recorded after every ``thinning`` steps (the initial state is
        not recorded).
    """
    d = model.d
    force = model.force_function()
    R = np.zeros((replicas, d)) if cfg.initial is None else np.broadcast_to(
        np.asarray(cfg.initial, dtype=np.float64), (replicas, d)).copy()
    drift = cfg.dt / cfg.friction
    scale = np.sqrt(2.0 * cfg.dt / (cfg.beta * cfg.friction))
    n_out = cfg.steps // cfg.thinning
    out = np.empty((replicas, n_out, d))
    states = [int(cfg.seed + i) for i in range(replicas)]
    last = np.empty((KEEP_LAST, replicas, d))
    recorded = 0
    step = 0
    while step < cfg.steps:
        m = min(chunk, cfg.steps - step)
        noise = np.empty((m, replicas, d))
        for i in range(replicas):
            states[i], z = standard_normals(states[i], m * d)
            noise[:, i, :] = z.reshape(m, d)
        noise *= scale
        for s in range(m):
            R = R + drift * force(R) + noise[s]
            done = step + s + 1
            last[done % KEEP_LAST] = R
            if not np.isfinite(R).all():
                bad = int(np.nonzero(~np.all(np.isfinite(R), axis=1))[0][0])
                order = [(done - k) % KEEP_LAST for k in range(min(done, KEEP_LAST) - 1, -1, -1)]
                raise NonFiniteState(
                    f"replica {bad} became non-finite at step {done}",
                    last_states=last[order, bad].copy(),
                    replica=bad,
                )
            if done % cfg.thinning == 0:
                out[:, recorded] = R
                recorded += 1
        step += m
    return out
