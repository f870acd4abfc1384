"""Multistage asset-rebalancing benchmark instances and diagnostics.

Ties together the building blocks: lognormal return lattices with
proportional transaction costs, preference distributions (named presets,
Voronoi-sampled, or explicit), per-stage moment ambiguity sets, the
spectrum-projection error bound, and side-by-side mode comparison on one
shared lattice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .dr import MomentAmbiguitySet, dr_train
from .risk import PreferenceDistribution, combination_spectrum
from .scenario import (
    RngStream,
    ScenarioLattice,
    build_lognormal_lattice,
    build_preference_voronoi,
    preset_preference,
    projected_builder,
)
from .sddp import TrainOptions, TrainReport, train

# Shipped horizon -> scenarios-per-stage interpretation; always overridable
# in config since the pairing is a modeling choice, not a constraint.
PRESET_SCENARIO_COUNTS = {2: 100, 3: 50, 5: 20, 10: 10}

MODE_PRESETS = {
    "risk-neutral": "risk_neutral",
    "mild": "mild_averse",
    "strong": "strong_averse",
}


@dataclass
class AssetInstanceConfig:
    """Everything needed to rebuild a benchmark instance bit-identically."""

    horizon: int
    assets: int = 4
    mu: Union[float, Sequence[float]] = 0.6
    sigma: Union[float, Sequence[float]] = 0.3
    corr: Union[float, Sequence[Sequence[float]]] = 0.5
    transaction_cost: Union[float, Sequence[float]] = 0.003
    scenarios_per_stage: Union[None, int, Sequence[int]] = None
    preference: dict = field(default_factory=lambda: {"kind": "preset", "name": "risk_neutral"})
    ambiguity: Optional[dict] = None
    spectrum_breakpoints: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.assets < 1:
            raise ValueError("need at least one asset")
        if self.scenarios_per_stage is None:
            if self.horizon not in PRESET_SCENARIO_COUNTS:
                raise ValueError(
                    "no preset scenario count for this horizon; "
                    "set scenarios_per_stage explicitly"
                )
            self.scenarios_per_stage = PRESET_SCENARIO_COUNTS[self.horizon]
        ks = np.broadcast_to(
            np.asarray(self.scenarios_per_stage, dtype=int), (self.horizon - 1,)
        )
        if np.any(ks < 1):
            raise ValueError("scenario counts must be at least 1")
        fs = np.broadcast_to(
            np.asarray(self.transaction_cost, dtype=float), (self.horizon - 1,)
        )
        if np.any(fs < 0.0) or np.any(fs >= 1.0):
            raise ValueError("transaction cost rates must lie in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "AssetInstanceConfig":
        data = dict(data)
        lognormal = data.pop("lognormal", None)
        if lognormal is not None:
            data.setdefault("mu", lognormal.get("mu", 0.6))
            data.setdefault("sigma", lognormal.get("sigma", 0.3))
            data.setdefault("corr", lognormal.get("corr", 0.5))
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "AssetInstanceConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            return v

        return {
            "horizon": self.horizon,
            "assets": self.assets,
            "lognormal": {
                "mu": plain(self.mu),
                "sigma": plain(self.sigma),
                "corr": plain(self.corr),
            },
            "transaction_cost": plain(self.transaction_cost),
            "scenarios_per_stage": plain(self.scenarios_per_stage),
            "preference": self.preference,
            "ambiguity": self.ambiguity,
            "spectrum_breakpoints": self.spectrum_breakpoints,
            "seed": self.seed,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class AssetInstance:
    config: AssetInstanceConfig
    lattice: ScenarioLattice
    preferences: list[PreferenceDistribution]  # one per stage 2..T
    ambiguities: Optional[list[MomentAmbiguitySet]]  # one per stage 2..T, if any


def config_spectrum_builder(cfg: AssetInstanceConfig):
    """Spectrum builder a config implies: exact two-piece, or J-projected."""
    if cfg.spectrum_breakpoints is None:
        return combination_spectrum
    return projected_builder(int(cfg.spectrum_breakpoints))


def _build_preferences(cfg: AssetInstanceConfig, rng: RngStream):
    spec = cfg.preference or {"kind": "preset", "name": "risk_neutral"}
    kind = spec.get("kind")
    builder = config_spectrum_builder(cfg)
    stages = range(2, cfg.horizon + 1)
    if kind == "preset":
        pref = preset_preference(spec["name"], spectrum_builder=builder)
        return [pref for _ in stages]
    if kind == "dirac":
        pref = preset_preference(
            "dirac", lam=spec["lambda"], alpha=spec["alpha"], spectrum_builder=builder
        )
        return [pref for _ in stages]
    if kind == "explicit":
        pref = PreferenceDistribution.from_points(
            spec["support"], spec.get("probs"), spectrum_builder=builder
        )
        return [pref for _ in stages]
    if kind == "voronoi":
        return [
            build_preference_voronoi(
                int(spec.get("centers", 10)),
                int(spec.get("samples", 1000)),
                tuple(spec.get("beta", (2.0, 2.0))),
                rng,
                stage=t,
                spectrum_builder=builder,
            )
            for t in stages
        ]
    raise ValueError(f"unknown preference kind {kind!r}")


def _build_ambiguities(cfg: AssetInstanceConfig, rng: RngStream):
    if cfg.ambiguity is None:
        return None
    spec = cfg.ambiguity
    kind = spec.get("kind", "sampled")
    builder = config_spectrum_builder(cfg)
    stages = range(2, cfg.horizon + 1)
    if kind == "explicit":
        amb = MomentAmbiguitySet(
            support=np.asarray(spec["support"], dtype=float),
            mu=np.asarray(spec["mu"], dtype=float),
            Sigma=np.asarray(spec["sigma_matrix"], dtype=float),
            spectra=tuple(
                builder(lam, a) for lam, a in np.asarray(spec["support"], dtype=float)
            ),
        )
        return [amb for _ in stages]
    if kind == "empirical":
        amb = MomentAmbiguitySet.from_empirical(
            spec["support"], spec["probs"], spectrum_builder=builder
        )
        return [amb for _ in stages]
    if kind == "sampled":
        sizes = np.broadcast_to(
            np.asarray(spec.get("size", 10), dtype=int), (cfg.horizon - 1,)
        )
        out = []
        for t, size in zip(stages, sizes):
            size = int(size)
            gen = rng.generator("ambiguity", stage=t)
            pts = gen.uniform(size=(size, 2))
            out.append(
                MomentAmbiguitySet.from_empirical(
                    pts, np.full(size, 1.0 / size), spectrum_builder=builder
                )
            )
        return out
    raise ValueError(f"unknown ambiguity kind {kind!r}")


def build_asset_instance(cfg: AssetInstanceConfig) -> AssetInstance:
    """Lattice plus per-stage preference/ambiguity structures from one config.

    The stage LP blocks encode allocations ``x`` and trades ``z`` with the
    wealth-balance equality (the coupling matrix carries the negated returns)
    and the two-sided trade bounds as slack equalities; stage 1 is the unit
    budget ``e'x = 1`` without trades.
    """
    rng = RngStream(cfg.seed)
    lattice = build_lognormal_lattice(
        cfg.horizon,
        cfg.assets,
        cfg.mu,
        cfg.sigma,
        cfg.corr,
        cfg.scenarios_per_stage,
        rng,
        transaction_cost=cfg.transaction_cost,
    )
    prefs = _build_preferences(cfg, rng)
    ambs = _build_ambiguities(cfg, rng)
    return AssetInstance(config=cfg, lattice=lattice, preferences=prefs, ambiguities=ambs)


def stage_max_returns(lattice: ScenarioLattice) -> np.ndarray:
    """Largest gross return per stage ``2..T``, read off the budget rows."""
    out = []
    for t in range(2, lattice.horizon + 1):
        out.append(max(float(np.max(-r.E[0])) for r in lattice.stage(t)))
    return np.asarray(out)


def wealth_phi_integrals(lattice: ScenarioLattice) -> np.ndarray:
    """Per-stage integrable envelopes of the cost-to-go quantile functions.

    Uses box bounds on wealth: starting from a unit budget, stage-t wealth is
    at most the running product of the largest gross returns, and each stage
    cost lies in ``[-wealth, 0]``, so ``|V_t| <= sum of future wealth caps``.
    This is a crude constant envelope (its integral over the unit interval is
    the constant itself); callers with sharper instance knowledge can supply
    their own integrals.
    """
    T = lattice.horizon
    caps = np.concatenate([[1.0], np.cumprod(stage_max_returns(lattice))])
    return np.array([float(np.sum(caps[t - 1 : T])) for t in range(1, T + 1)])


def step_spectrum_error_bound(
    lipschitz,
    J: int,
    phi_integrals,
    mode: str = "robust",
    q=None,
) -> np.ndarray:
    """Per-stage bound on the optimal-value error of the J-cell projection.

    For Lipschitz spectra, projecting onto the uniform grid with spacing
    ``1/J`` perturbs each stage value by at most ``L * (1/J) * int Phi``; the
    stage-t bound is the tail sum over later stages. ``mode='robust'`` takes
    the worst support point per stage (sup over member weights), while
    ``mode='average'`` weights the support moduli by ``q``.

    ``lipschitz`` is a scalar, a per-support vector shared by all stages, or
    one vector per stage ``1..T``; ``phi_integrals`` has one entry per stage.
    Returns bounds for stages ``1..T``; the final stage has an empty tail.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    phi = np.asarray(phi_integrals, dtype=float)
    T = phi.size
    beta_j = 1.0 / J

    def stage_moduli(t):
        if np.isscalar(lipschitz):
            return np.atleast_1d(float(lipschitz))
        if isinstance(lipschitz, (list, tuple)) and lipschitz and not np.isscalar(lipschitz[0]):
            return np.atleast_1d(np.asarray(lipschitz[t - 1], dtype=float))
        return np.atleast_1d(np.asarray(lipschitz, dtype=float))

    per_stage = np.zeros(T)
    for t in range(1, T + 1):
        Lv = stage_moduli(t)
        if mode == "robust":
            agg = float(np.max(Lv))
        elif mode == "average":
            if q is None:
                raise ValueError("average mode needs the preference weights q")
            qt = q[t - 1] if isinstance(q, (list, tuple)) else q
            qv, Lb = np.broadcast_arrays(np.asarray(qt, dtype=float), Lv)
            agg = float(qv @ Lb)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        per_stage[t - 1] = agg * beta_j * phi[t - 1]
    return np.array([float(np.sum(per_stage[t:])) for t in range(1, T + 1)])


def compare_modes(
    cfg: AssetInstanceConfig,
    modes: Sequence[str],
    options: Optional[TrainOptions] = None,
) -> list[dict]:
    """Converged bounds per mode on one shared lattice and seed."""
    inst = build_asset_instance(cfg)
    rows = []
    for mode in modes:
        report = run_mode(inst, mode, options)
        rows.append(
            {
                "mode": mode,
                "iterations": report.iterations,
                "lower": report.final_lower,
                "upper": report.final_upper,
                "gap": report.final_gap,
                "converged": report.converged,
            }
        )
    return rows


def run_mode(
    inst: AssetInstance, mode: str, options: Optional[TrainOptions] = None
) -> TrainReport:
    """Train one model variant on a built instance."""
    if mode == "marsrm":
        return train(inst.lattice, prefs=inst.preferences, options=options)
    if mode in MODE_PRESETS:
        builder = config_spectrum_builder(inst.config)
        pref = preset_preference(MODE_PRESETS[mode], spectrum_builder=builder)
        return train(inst.lattice, prefs=pref, options=options)
    if mode == "dr":
        if inst.ambiguities is None:
            raise ValueError("config has no ambiguity block; cannot run the dr mode")
        return dr_train(inst.lattice, inst.ambiguities, options=options)
    raise ValueError(f"unknown mode {mode!r}")
