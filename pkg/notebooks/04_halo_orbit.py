# %% [markdown]
# # Halo orbit near Earth-Moon L2
#
# Recast the three-body field with u_i = 1/r_i, solve at increasing order
# and see how long an uncontrolled propagation stays on each orbit.

# %%
import numpy as np

from rhb import MethodConfig, PhaseAnchor, build_time_domain_residual, newton_solve
from rhb.integrate import jacobi_constant, orbit_keeping
from rhb.spectral import HarmonicBasis, eval_series, resize_order
from rhb.systems import CRTBPParams, crtbp_recast, crtbp_seed, crtbp_system

p = CRTBPParams()
omega = 1.9
z = crtbp_seed("halo", HarmonicBasis(10, omega), (0.2, 0.1), p)

# %%
print(f"{'N':>3} {'residual':>9} {'Jacobi spread':>13} {'periods kept':>12} {'crossings':>9}")
for N in (10, 20, 30, 50):
    res = build_time_domain_residual(crtbp_recast(p), MethodConfig("RHB", N, omega), anchor=PhaseAnchor(1))
    rep = newton_solve(res, resize_order(z, N))
    z = rep.coeffs
    t = np.linspace(0, res.basis.period, 2048, endpoint=False)
    C = jacobi_constant(eval_series(z[:6], res.basis, t), p.mu)
    k = orbit_keeping(crtbp_system(p), z[:6], res.basis)
    print(f"{N:>3} {rep.residual:>9.1e} {np.ptp(C):>13.1e} {k.periods_maintained:>12.2f} {k.section_crossings:>9}")
