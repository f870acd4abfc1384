"""Projecting a smooth risk spectrum onto a step grid, with certified error.

The solver machinery works with step-like spectra. For a Lipschitz spectrum,
projecting onto the uniform J-cell grid perturbs the optimal value by at most
L * (1/J) * (integral of the stage envelope), summed over later stages. This
script measures the true perturbation on a two-stage instance against that
bound, for several grid sizes, using the spectrum sigma(z) = 2z (modulus 2).

Run:  python3 demos/spectrum_projection_error.py
"""

import numpy as np

from msrisk import (
    AssetInstanceConfig,
    PreferenceDistribution,
    StepSpectrum,
    build_asset_instance,
    extensive_form_marsrm,
    step_spectrum_error_bound,
    wealth_phi_integrals,
)

cfg = AssetInstanceConfig(
    horizon=2,
    assets=2,
    transaction_cost=0.0,
    scenarios_per_stage=4,
    preference={"kind": "preset", "name": "risk_neutral"},
    seed=3,
)
inst = build_asset_instance(cfg)
K = 4

# On K equiprobable scenarios only the cell integrals of the spectrum matter,
# so the K-grid step representation of sigma(z) = 2z is exact here.
grid_k = np.linspace(0.0, 1.0, K + 1)
exact = PreferenceDistribution(
    support=np.array([[0.0, 0.0]]),
    probs=np.array([1.0]),
    spectra=(StepSpectrum(grid_k, np.diff(grid_k**2) * K),),
)
v_exact = extensive_form_marsrm(inst.lattice, prefs=exact)
phi = wealth_phi_integrals(inst.lattice)
print(f"exact-spectrum optimal value: {v_exact:.8f}")
print(f"stage envelopes (wealth box): {np.round(phi, 4)}")
print()
print(f"{'J':>4} {'projected value':>16} {'measured error':>15} {'bound':>10}")
for J in (2, 5, 10, 20):
    grid = np.linspace(0.0, 1.0, J + 1)
    projected = PreferenceDistribution(
        support=np.array([[0.0, 0.0]]),
        probs=np.array([1.0]),
        spectra=(StepSpectrum(grid, grid[:-1] + grid[1:]),),
    )
    v_proj = extensive_form_marsrm(inst.lattice, prefs=projected)
    bound = step_spectrum_error_bound(2.0, J, phi)[0]
    print(f"{J:>4} {v_proj:>16.8f} {abs(v_exact - v_proj):>15.3e} {bound:>10.4f}")
print()
print("the bound halves exactly when J doubles (spacing 1/J), and the")
print("measured error always sits below it")
