"""
Two potentials that force matching cannot tell apart
====================================================

Adding a quadratic bowl centred on the data leaves every force at the data
unchanged, so the force-matching loss is identical. The curvature differs,
and the HVP-matching loss sees it.
"""

import numpy as np

from hessmatch.aa_system import Frames
from hessmatch.cg_model import PairMLP, QuadraticBaseline, SumModel
from hessmatch.ensemble import sample_conditional
from hessmatch.numerics import Rng
from hessmatch.systems import exact_cg_hessian, gaussian_chain
from hessmatch.targets import precompute_term1
from hessmatch.training import TrainConfig, batch_objective

ff, cg = gaussian_chain()
R_star = np.array([0.2, -0.3])
ens = sample_conditional(ff, cg, R_star, 1.0, 500, rng=Rng(3))
aa = Frames(ens.positions, ff.n, ff.dim, forces=ff.forces(ens.positions))
records = precompute_term1(aa, ff, cg, global_seed=4, K=8)
R = cg.value(aa.positions)
F = aa.forces @ cg.force_projection().T
probes = np.stack([r.probes for r in records])
term1 = np.stack([r.term1 for r in records])

w1 = PairMLP(2, 1, (8,), seed=1)
bowl = QuadraticBaseline([[1.0, 0.3], [0.3, 0.5]], R_star)
w2 = SumModel([w1.copy(), bowl])

cfg = TrainConfig()
print("model                FM loss      HVP loss")
for name, m in (("W1", w1), ("W1 + bowl", w2)):
    fm, hvp, *_ = batch_objective(m, R, F, probes, term1, cfg, want_grad=False)
    print(f"{name:<16s} {fm:12.6f} {hvp:12.6f}")

# Both models exert the same forces at R*, but their Hessians there differ.
eye = np.eye(2)
for name, m in (("W1", w1), ("W1 + bowl", w2)):
    print(f"\nHessian of {name} at R*\n", m.hvp(R_star, eye))
print("\nprojected fine-grained Hessian (mean Term-1 operator)\n",
      cg.force_projection() @ ff.terms[0].K @ cg.force_projection().T)
print("\nexact CG Hessian\n", exact_cg_hessian(ff, cg))
