# %% [markdown]
# # Spurious solutions of the forced Duffing oscillator
#
# Random starts for Newton on the RHB and HDHB systems at the same order.
# Every distinct root is checked against direct time integration.

# %%
import numpy as np

from rhb import MethodConfig, build_time_domain_residual, frequency_sweep, multistart
from rhb.systems import duffing_system

d = duffing_system()
N, omega, trials = 3, 2.0, 300

# %%
for mode in ("RHB", "HDHB"):
    res = build_time_domain_residual(d, MethodConfig(mode, N, omega))
    ms = multistart(res, (-2, 2), trials, seed=1)
    kinds = [c.report.classification for c in ms.clusters]
    print(f"{mode:5s} M={res.M:3d}  converged {ms.converged}/{trials}  clusters {len(kinds)}  "
          f"physical {kinds.count('physical')}  non-physical {kinds.count('non_physical')}")

# %% [markdown]
# Frequency response of the RHB branches, seeded at both ends and from the
# multistart roots at omega = 2.

# %%
factory = lambda w: build_time_domain_residual(d, MethodConfig("RHB", N, w))  # noqa: E731
ms = multistart(factory(omega), (-2, 2), 100, seed=0, criteria=None)
seeds = [(0.5, np.zeros((2, 7))), (3.0, np.zeros((2, 7)))] + [(omega, c.report.coeffs) for c in ms.clusters]
for k, br in enumerate(frequency_sweep(factory, (0.5, 3.0), 0.05, seeds)):
    amps = np.array([p.amplitude[0] for p in br])
    print(f"branch {k}: omega {br[0].omega:.2f}..{br[-1].omega:.2f}, amplitude {amps.min():.3f}..{amps.max():.3f}")
