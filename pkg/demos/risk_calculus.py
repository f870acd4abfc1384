"""Tour of the risk calculus layer.

Walks through the quantile function of a discrete loss, the two CVaR
formulations, step-like risk spectra, and how an averaged family of spectral
risk measures collapses to a convex combination of CVaR levels when scenarios
are equiprobable.

Run:  python3 demos/risk_calculus.py
"""

import numpy as np

from msrisk import (
    DiscreteDistribution,
    PreferenceDistribution,
    StepSpectrum,
    arsrm,
    arsrm_via_combination,
    arsrm_weights,
    combination_spectrum,
    cvar,
    cvar_dual_weights,
    cvar_variational,
    quantile,
    srm,
)

print("=" * 72)
print("1. A discrete loss distribution and its quantile function")
print("=" * 72)
losses = DiscreteDistribution.from_values([1.0, 2.0, 3.0, 4.0])
for z in (0.25, 0.5, 0.51, 0.75, 1.0):
    print(f"   quantile({z:0.2f}) = {quantile(losses, z)}")
print("   (left-continuous: the value at a breakpoint is the lower step)")

print()
print("=" * 72)
print("2. CVaR two ways: tail reweighting vs eta-minimization")
print("=" * 72)
alpha = 0.5
w = cvar_dual_weights(losses, alpha)
print(f"   tail weights at alpha={alpha}: {w.lambda_hat} (pivot index {w.khat})")
print(f"   dual form        : {cvar(losses, alpha):.6f}")
print(f"   variational form : {cvar_variational(losses, alpha):.6f}")
print(f"   CVaR_0 recovers the mean: {cvar(losses, 0.0):.6f} vs {losses.mean():.6f}")

print()
print("=" * 72)
print("3. Step spectra: expectation, pure CVaR, and blends")
print("=" * 72)
uniform = StepSpectrum.uniform()
blend = combination_spectrum(lam=0.5, alpha=0.5)
print(f"   uniform spectrum -> mean:        {srm(losses, uniform):.6f}")
print(f"   0.5*E + 0.5*CVaR_0.5 spectrum:   {srm(losses, blend):.6f}")
print(f"   direct 0.5*mean + 0.5*cvar:      "
      f"{0.5 * losses.mean() + 0.5 * cvar(losses, 0.5):.6f}")

print()
print("=" * 72)
print("4. Random preferences average into a CVaR combination")
print("=" * 72)
pref = PreferenceDistribution.from_points(
    [(1.0, 0.0), (0.0, 0.5)], [0.5, 0.5]
)
print("   preference states: risk neutral w.p. 1/2, pure CVaR_0.5 w.p. 1/2")
print(f"   spectrum-average route : {arsrm(losses, pref):.6f}")
print(f"   CVaR-combination route : {arsrm_via_combination(losses, pref):.6f}")
weights = arsrm_weights(losses.size, pref)
print(f"   combination weights over CVaR levels {weights.alpha_levels}:")
print(f"   {weights.combined}")
print(f"   (sum = {weights.combined.sum():.12f}; always exactly one)")

print()
print("=" * 72)
print("5. The reduction holds for any preference distribution")
print("=" * 72)
rng = np.random.default_rng(0)
pts = np.column_stack([rng.uniform(0, 1, 5), rng.uniform(0, 0.9, 5)])
qs = rng.dirichlet(np.ones(5))
pref = PreferenceDistribution.from_points(pts, qs)
sample = DiscreteDistribution.from_values(rng.normal(size=12))
a = arsrm(sample, pref)
b = arsrm_via_combination(sample, pref)
print(f"   random 5-state preference on 12 scenarios: {a:.12f} vs {b:.12f}")
print(f"   difference: {abs(a - b):.2e}")
