"""Small reference systems with closed-form CG free energies."""

import numpy as np

from .aa_system import AnchoredBond, ForceField, HarmonicBond, QuadraticForm
from .cg_map import BondLength, LinearCGMap, RadialFromPinned, StackedMap

GAUSSIAN_K = np.array([[2.0, -1.0], [-1.0, 2.0]])


def gaussian_pair():
    """Two coupled 1-d atoms with ``U = 1/2 r^T K r``; the CG site is atom 0.

    ``H_CG = (Xi K^-1 Xi^T)^-1 = 1.5``, split as projected Hessian 2 minus
    force covariance 0.5 at ``beta = 1``.
    """
    ff = ForceField(2, 1, [QuadraticForm(GAUSSIAN_K)])
    return ff, LinearCGMap.select([0], 2, 1)


def gaussian_chain(n=4, spring=1.0, tether=0.5, sites=(0, 3)):
    """1-d chain of ``n`` atoms with nearest-neighbour springs and a weak
    tether on every atom; the CG sites are the listed atoms."""
    K = np.zeros((n, n))
    for a in range(n - 1):
        K[a, a] += spring
        K[a + 1, a + 1] += spring
        K[a, a + 1] -= spring
        K[a + 1, a] -= spring
    K += tether * np.eye(n)
    ff = ForceField(n, 1, [QuadraticForm(K)])
    return ff, LinearCGMap.select(list(sites), n, 1)


def exact_cg_hessian(ff, cg_map):
    """``(Xi K^-1 Xi^T)^-1`` for a single quadratic-form system under a linear map."""
    K = ff.terms[0].K
    xi = cg_map.xi_r
    return np.linalg.inv(xi @ np.linalg.solve(K, xi.T))


def radial_tether(k=4.0, d0=1.0, dim=2):
    """One particle tethered to the origin by ``k/2 (|r| - d0)^2``, CG
    coordinate ``|r|``.

    ``F(R) = U(R) - (dim - 1) ln(R) / beta`` so at ``R = 1``, ``beta = 1``,
    ``dim = 2``: mean force 1 and CG Hessian 5.
    """
    ff = ForceField(1, dim, [AnchoredBond(0, k, d0)])
    return ff, RadialFromPinned(0, 1, dim)


def stacked_pair():
    """Two particles in the plane with both distances as CG coordinates.

    Atom 0 is tethered to the origin, atoms 0 and 1 are bonded, and atom 1
    is tethered to the origin at a different rest length, which couples the
    two CG coordinates through the bond angle.
    """
    ff = ForceField(
        2,
        2,
        [AnchoredBond(0, 4.0, 1.0), HarmonicBond(0, 1, 4.0, 1.0), AnchoredBond(1, 2.0, 1.5)],
    )
    cg = StackedMap([RadialFromPinned(0, 2, 2), BondLength(0, 1, 2, 2)])
    return ff, cg
