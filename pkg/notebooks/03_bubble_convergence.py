# %% [markdown]
# # Driven bubble: convergence in the number of harmonics
#
# The Rayleigh-Plesset field has a 1/R singularity. Adding u = 1/R as a state
# makes it polynomial, after which RHB is exact for the retained harmonics.

# %%
import numpy as np

from rhb import MethodConfig, build_time_domain_residual, newton_solve
from rhb.integrate import settle_and_project, verify_periodicity
from rhb.spectral import HarmonicBasis, eval_series, project, resize_order
from rhb.systems import RayleighPlessetParams, rayleigh_plesset_recast, rayleigh_plesset_system

p = RayleighPlessetParams()
direct, recast = rayleigh_plesset_system(p), rayleigh_plesset_recast(p)
settled = settle_and_project(direct, [p.equilibrium_radius, 0.0], HarmonicBasis(40, p.omega), settle_periods=60)

# %%
print(f"{'N':>3} {'iters':>5} {'residual':>9} {'return err':>10} {'defect':>9}")
for N in (10, 20, 40):
    basis = HarmonicBasis(N, p.omega)
    c2 = resize_order(settled, N)
    t = np.arange(8 * N + 1) * basis.period / (8 * N + 1)
    u = project(1.0 / eval_series(c2[0], basis, t), basis, t)
    res = build_time_domain_residual(recast, MethodConfig("RHB", N, p.omega))
    rep = newton_solve(res, np.vstack([c2, u]))
    m = verify_periodicity(direct, rep.coeffs[:2], basis)
    print(f"{N:>3} {rep.iterations:>5} {rep.residual:>9.1e} {m.period_return_error:>10.2e} {m.defect_rms:>9.2e}")
