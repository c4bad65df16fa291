# %% [markdown]
# # Where aliasing comes from
#
# Collocating a degree-phi polynomial field at M equispaced nodes folds the
# harmonics above N back onto the retained ones. This script tabulates the
# size of that fold as M grows and checks the closed-form sparsity pattern.

# %%
import numpy as np

from rhb import HarmonicBasis, build_grid, build_operators, predict_alias_entries
from rhb.spectral import conditional_identity_gap, random_polynomial

N, phi = 4, 3

# %% [markdown]
# The alias matrix vanishes once M exceeds (phi + 1) N.

# %%
basis = HarmonicBasis(N, 1.0)
print(f"{'M':>4} {'|E_A|_inf':>10} {'nonzeros':>9} {'pattern ok':>10}")
for M in range(2 * N + 1, (phi + 1) * N + 3):
    EA = np.asarray(build_operators(basis, build_grid(basis, M), phi).E_alias)
    pred = predict_alias_entries(N, phi, M).toarray()
    print(f"{M:>4} {np.abs(EA).sum(axis=1).max():>10.3g} {np.count_nonzero(pred):>9} "
          f"{np.allclose(pred, EA, atol=1e-10)!s:>10}")

# %% [markdown]
# With enough nodes the time-domain projection of a random polynomial of
# the series equals its exact low harmonics.

# %%
rng = np.random.default_rng(0)
gaps = []
for _ in range(50):
    poly = random_polynomial(rng, 2, phi)
    c = rng.uniform(-1, 1, (2, basis.size))
    gaps.append(conditional_identity_gap(c, poly, basis, (phi + 1) * N + 1, phi))
print(f"largest gap over 50 polynomials at M = {(phi + 1) * N + 1}: {max(gaps):.2e}")
