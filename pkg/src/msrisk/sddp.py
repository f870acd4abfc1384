"""SDDP for multistage programs with averaged-spectral-risk stage objectives.

The lower model keeps, per stage, a pool of aggregated cuts: affine minorants
of the stage's future-risk functional, built in the backward pass from the
equality-row duals of all scenario subproblems reweighted by the CVaR dual
maximizers of each level in the combination. The upper model keeps, per
stage, an archive of visited states with certified upper values and evaluates
a lower convex envelope of those points, penalizing the distance to the
convex hull in l1 norm with a constant dominating the cost-to-go Lipschitz
modulus. Both bounds are deterministic and converge in finitely many
iterations when the forward pass enumerates all scenarios.

Scenario subproblems inside one backward step are independent pure solves and
cut appends happen per stage in fixed scenario order, so results never depend
on execution schedule; a fixed seed reproduces runs bit-identically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .lp import LpError, RecourseError, solve_arrays
from .risk import (
    ArsrmWeights,
    PreferenceDistribution,
    UnsupportedConfigurationError,
    arsrm_weights,
)
from .scenario import RngStream, ScenarioLattice

CSV_HEADER = "cuts,lower,upper,gap,time_lower_s,time_upper_s"


def resolve_stage_weights(
    lattice: ScenarioLattice,
    prefs=None,
    weights=None,
) -> dict[int, ArsrmWeights]:
    """Per-stage CVaR-combination weights for stages ``2..T``.

    ``prefs`` may be a single preference distribution (applied at every stage)
    or a sequence with one entry per stage ``2..T``; ``weights`` may supply
    ready-made :class:`ArsrmWeights` instead. The combination route requires
    every stage to be equiprobable.
    """
    T = lattice.horizon
    out: dict[int, ArsrmWeights] = {}
    if weights is not None:
        ws = list(weights) if isinstance(weights, (list, tuple)) else [weights] * (T - 1)
        if len(ws) != T - 1:
            raise ValueError(f"need weights for each of stages 2..{T}")
        for t in range(2, T + 1):
            if ws[t - 2].K != lattice.size(t):
                raise ValueError(f"stage {t} weights built for wrong scenario count")
            out[t] = ws[t - 2]
        return out
    if prefs is None:
        raise ValueError("either prefs or weights must be given")
    if isinstance(prefs, PreferenceDistribution):
        plist = [prefs] * (T - 1)
    else:
        plist = list(prefs)
        if len(plist) != T - 1:
            raise ValueError(f"need one preference distribution per stage 2..{T}")
    for t in range(2, T + 1):
        if not lattice.is_equiprobable(t):
            raise UnsupportedConfigurationError(
                f"stage {t} is not equiprobable; the CVaR-combination "
                "reduction is only defined on the equiprobable grid"
            )
        out[t] = arsrm_weights(lattice.size(t), plist[t - 2])
    return out


@dataclass(frozen=True)
class Cut:
    """Affine minorant ``intercept + gradient . x_prev`` of a cost-to-go."""

    intercept: float
    gradient: np.ndarray
    origin: tuple = ()

    def __post_init__(self):
        g = np.array(self.gradient, dtype=float)
        if not np.all(np.isfinite(g)) or not np.isfinite(self.intercept):
            raise ValueError("cut coefficients must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "gradient", g)


class CutPool:
    """Append-only pool of cuts for one stage, seeded with a floor cut.

    The floor cut has zero gradient and intercept ``-big``, guaranteeing the
    stage LPs stay bounded before any real cut exists.
    """

    def __init__(self, state_dim: int, big: float):
        self._cuts: list[Cut] = [Cut(-abs(big), np.zeros(state_dim), origin=("initial",))]
        self._stack: Optional[tuple[np.ndarray, np.ndarray]] = None

    def add(self, cut: Cut) -> None:
        if cut.gradient.size != self._cuts[0].gradient.size:
            raise ValueError("cut gradient has wrong dimension")
        self._cuts.append(cut)
        self._stack = None

    @property
    def cuts(self) -> list[Cut]:
        return list(self._cuts)

    @property
    def count(self) -> int:
        """Number of real (non-floor) cuts."""
        return len(self._cuts) - 1

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        if self._stack is None:
            G = np.vstack([c.gradient for c in self._cuts])
            g = np.array([c.intercept for c in self._cuts])
            self._stack = (G, g)
        return self._stack

    def max_gradient_norm(self) -> float:
        if len(self._cuts) == 1:
            return 0.0
        G, _ = self.matrices()
        return float(np.max(np.abs(G[1:])))

    def max_gradient_per_coordinate(self) -> np.ndarray:
        G, _ = self.matrices()
        if len(self._cuts) == 1:
            return np.zeros(G.shape[1])
        return np.max(np.abs(G[1:]), axis=0)


@dataclass
class TrainOptions:
    """Knobs for the bound iteration.

    ``lipschitz`` pins the envelope penalty per stage (scalar or one value per
    stage ``1..T-1``); left unset it defaults to ``lipschitz_safety`` times
    the largest cut-gradient magnitude seen at the following stage, floored at
    ``lipschitz_floor``. ``full_enumeration`` replaces sampling by a sweep of
    every scenario per stage, which makes the run deterministic and is what
    the finite-convergence guarantee assumes. ``upper_stride`` spaces out the
    upper-bound computations: the cut loop runs every iteration, while the
    envelope sweep runs at checkpoint iterations only, one report row per
    checkpoint. Each sweep certifies the states just visited; if the
    iteration budget runs out, ``final_refresh`` re-certifies every state
    seen so far (``refresh_limit`` caps that to the most recent ones) so the
    last row carries the tightest bound available.
    """

    max_iterations: int = 100
    n_paths: int = 1
    tolerance: float = 1e-6
    big: float = 1e9
    seed: int = 0
    full_enumeration: bool = False
    upper_stride: int = 1
    final_refresh: bool = True
    refresh_limit: Optional[int] = None
    lipschitz: Union[None, float, Sequence[float]] = None
    lipschitz_floor: float = 1.0
    lipschitz_safety: float = 10.0
    max_enumerated_states: int = 20_000


@dataclass
class TrainReport:
    """Per-iteration bound trajectory; serializes to the bounds CSV schema."""

    cuts: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    time_lower_s: list = field(default_factory=list)
    time_upper_s: list = field(default_factory=list)
    converged: bool = False

    def add_row(self, cuts, lower, upper, gap, t_lower, t_upper):
        self.cuts.append(int(cuts))
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.gap.append(float(gap))
        self.time_lower_s.append(float(t_lower))
        self.time_upper_s.append(float(t_upper))

    @property
    def iterations(self) -> int:
        return len(self.cuts)

    @property
    def final_lower(self) -> float:
        return self.lower[-1]

    @property
    def final_upper(self) -> float:
        return self.upper[-1]

    @property
    def final_gap(self) -> float:
        return self.gap[-1]

    def to_csv(self, path=None) -> str:
        lines = [CSV_HEADER]
        for i in range(self.iterations):
            lines.append(
                f"{self.cuts[i]},{self.lower[i]!r},{self.upper[i]!r},"
                f"{self.gap[i]!r},{self.time_lower_s[i]:.1f},{self.time_upper_s[i]:.1f}"
            )
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _dedupe(states: list[np.ndarray]) -> list[np.ndarray]:
    seen = {}
    for s in states:
        seen.setdefault(s.tobytes(), s)
    return list(seen.values())


def stage_subproblem(realization, x_prev, cuts=None):
    """Approximate stage subproblem as an inspectable ``LpModel``.

    With ``cuts`` given the model carries the epigraph variable of the future
    risk and one row per cut; without it (final stage) the model is the plain
    stage LP. Equality rows are tagged ``("balance", i)`` so their duals can
    be located for cut extraction.
    """
    from .lp import LpModel

    r = realization
    rhs = r.b - r.E @ np.asarray(x_prev, dtype=float)
    model = LpModel()
    x = model.add_variables(r.num_vars, obj=r.c, lb=0.0)
    if cuts is not None:
        theta = model.add_variable(obj=1.0, lb=None, tag="theta")
    for i in range(r.A.shape[0]):
        keep = r.A[i] != 0.0
        model.add_equality(x[keep], r.A[i][keep], rhs[i], tag=("balance", i))
    if cuts is not None:
        for n, cut in enumerate(cuts):
            keep = cut.gradient != 0.0
            model.add_inequality(
                np.concatenate([x[keep], [theta]]),
                np.concatenate([cut.gradient[keep], [-1.0]]),
                -cut.intercept,
                tag=("cut", n),
            )
    return model


def upper_value(realization, x_prev, archive=None, penalty=0.0):
    """Envelope upper stage value at ``(x_prev, realization)``.

    ``archive`` is a pair ``(states, values)`` of visited next-state points
    and certified upper values of the future risk there; ``None`` marks the
    final stage, where the exact stage LP is the upper value. The convex
    combination is steered to the queried state with an l1 slack priced at
    ``penalty`` (scalar, or one price per coordinate), which must dominate
    the future risk's Lipschitz modulus coordinate-wise for the result to
    stay a true upper bound.
    """
    r = realization
    rhs = r.b - r.E @ np.asarray(x_prev, dtype=float)
    n, m = r.num_vars, r.A.shape[0]
    if archive is None:
        sol = solve_arrays(r.c, A_eq=r.A, b_eq=rhs)
        if not sol.is_optimal:
            raise RecourseError(f"terminal stage LP is {sol.status}")
        return float(sol.objective)
    X, v = archive
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v = np.asarray(v, dtype=float)
    P = v.size
    if P == 0:
        raise ValueError("upper envelope needs at least one archived state")
    pen = np.broadcast_to(np.asarray(penalty, dtype=float), (n,))
    c = np.concatenate([r.c, v, pen, pen])
    A_eq = np.zeros((m + n + 1, n + P + 2 * n))
    A_eq[:m, :n] = r.A
    A_eq[m : m + n, :n] = -np.eye(n)
    A_eq[m : m + n, n : n + P] = X.T
    A_eq[m : m + n, n + P : n + P + n] = np.eye(n)
    A_eq[m : m + n, n + P + n :] = -np.eye(n)
    A_eq[m + n, n : n + P] = 1.0
    b_eq = np.concatenate([rhs, np.zeros(n), [1.0]])
    sol = solve_arrays(c, A_eq=A_eq, b_eq=b_eq)
    if not sol.is_optimal:
        raise RecourseError(f"upper envelope LP is {sol.status}")
    return float(sol.objective)


def upper_aggregate(weights: ArsrmWeights, values) -> float:
    """Combine per-scenario upper values into the stage's risk upper value."""
    return weights.aggregate(values)


class MarsrmSddp:
    """Bound iteration state: cut pools, state archives, and the solve cache."""

    def __init__(self, lattice: ScenarioLattice, prefs=None, weights=None, options=None):
        self.lattice = lattice
        self.T = lattice.horizon
        self.options = options or TrainOptions()
        self.weights = resolve_stage_weights(lattice, prefs=prefs, weights=weights)
        big = self.options.big
        self.pools = {
            t: CutPool(lattice.num_vars(t - 1), big) for t in range(2, self.T + 1)
        }
        # archive[t]: visited x_t states with upper values of the stage-(t+1)
        # risk, keyed by state; revisits keep the lowest certified value
        self.archives = {t: {} for t in range(1, self.T)}
        self._archive_cache = {}
        # every state the forward passes have produced, per stage; the upper
        # sweep re-certifies all of them against the current deeper envelopes
        self.visited = {t: {} for t in range(1, self.T)}
        self._coupling_masks = {}
        self._forward_rng = RngStream(self.options.seed).generator("forward")
        self._iteration = 0

    # -- stage solves --------------------------------------------------------
    def _solve_stage(self, t, j, x_prev, need_duals=False):
        r = self.lattice.stage(t)[j]
        rhs = r.b - r.E @ x_prev
        n = r.num_vars
        if t == self.T:
            sol = solve_arrays(r.c, A_eq=r.A, b_eq=rhs)
        else:
            G, g = self.pools[t + 1].matrices()
            c = np.append(r.c, 1.0)
            A_eq = np.hstack([r.A, np.zeros((r.A.shape[0], 1))])
            A_ub = np.hstack([G, -np.ones((G.shape[0], 1))])
            bounds = [(0, None)] * n + [(None, None)]
            sol = solve_arrays(c, A_eq=A_eq, b_eq=rhs, A_ub=A_ub, b_ub=-g, bounds=bounds)
        if sol.status == "infeasible":
            raise RecourseError(
                f"stage {t}, scenario {j}: subproblem infeasible at the visited "
                "state, contradicting relatively complete recourse"
            )
        if not sol.is_optimal:
            raise LpError(f"stage {t}, scenario {j}: LP is {sol.status}")
        x = sol.x[:n]
        duals = sol.eq_duals if need_duals else None
        return float(sol.objective), x, duals

    # -- penalty selection -----------------------------------------------------
    def _coupled_columns(self, t: int) -> np.ndarray:
        """Mask of stage-t decision coordinates the next stage actually reads.

        Columns that are zero in every next-stage coupling matrix provably
        cannot move the cost-to-go, so their envelope penalty is exactly zero.
        """
        cached = self._coupling_masks
        if t not in cached:
            mask = np.zeros(self.lattice.num_vars(t), dtype=bool)
            for r in self.lattice.stage(t + 1):
                mask |= np.any(r.E != 0.0, axis=0)
            cached[t] = mask.astype(float)
        return cached[t]

    def _penalty(self, t: int) -> np.ndarray:
        opt = self.options
        mask = self._coupled_columns(t)
        if opt.lipschitz is not None:
            value = (
                float(opt.lipschitz)
                if np.isscalar(opt.lipschitz)
                else float(opt.lipschitz[t - 1])
            )
            return value * mask
        observed = self.pools[t + 1].max_gradient_per_coordinate()
        return np.maximum(opt.lipschitz_floor * mask, opt.lipschitz_safety * observed)

    # -- passes ------------------------------------------------------------------
    def forward_pass(self):
        """Solve stage 1 (the iteration's lower bound), then sample or sweep.

        Returns ``(lower_bound, states)`` where ``states[t]`` lists the
        distinct stage-t decisions visited, for ``t = 1..T-1``; all of them
        are also recorded for the envelope sweeps.
        """
        v1, x1, _ = self._solve_stage(1, 0, self.lattice.x0)
        states = {1: [x1]}
        if self.T > 2:
            if self.options.full_enumeration:
                for t in range(2, self.T):
                    nxt = []
                    for x_prev in states[t - 1]:
                        for j in range(self.lattice.size(t)):
                            _, x, _ = self._solve_stage(t, j, x_prev)
                            nxt.append(x)
                    states[t] = _dedupe(nxt)
                    if len(states[t]) > self.options.max_enumerated_states:
                        raise ValueError(
                            "full enumeration visits too many states; lower "
                            "max_enumerated_states or use sampling"
                        )
            else:
                per_stage = {t: [] for t in range(2, self.T)}
                for _ in range(self.options.n_paths):
                    x = x1
                    for t in range(2, self.T):
                        j = int(self._forward_rng.integers(self.lattice.size(t)))
                        _, x, _ = self._solve_stage(t, j, x)
                        per_stage[t].append(x)
                for t in range(2, self.T):
                    states[t] = _dedupe(per_stage[t])
        for t, group in states.items():
            for x in group:
                self.visited[t].setdefault(x.tobytes(), x)
        return v1, states

    def backward_pass(self, states):
        """Append one aggregated cut per visited state per stage, from T down."""
        for t in range(self.T, 1, -1):
            K = self.lattice.size(t)
            reals = self.lattice.stage(t)
            w = self.weights[t]
            for x_prev in states[t - 1]:
                vals = np.empty(K)
                grads = np.zeros((K, x_prev.size))
                for j in range(K):
                    v, _, duals = self._solve_stage(t, j, x_prev, need_duals=True)
                    vals[j] = v
                    grads[j] = -(duals @ reals[j].E)
                omega = w.scenario_reweighting(vals)
                G = (omega / K) @ grads
                value = float(omega @ vals / K)
                cut = Cut(value - G @ x_prev, G, origin=(self._iteration, t))
                self.pools[t].add(cut)

    def upper_sweep(self, states=None) -> float:
        """Certify upper values bottom-up and bound stage 1.

        With ``states`` given (one list per stage), only those are evaluated:
        the cheap incremental form, which still improves recurring states
        because the archives keep the lowest certified value per state. With
        ``states=None`` every state ever visited is re-certified against the
        current deeper archives, which removes all staleness and is done once
        before reporting a final bound.
        """
        limit = self.options.refresh_limit
        for t in range(self.T, 1, -1):
            K = self.lattice.size(t)
            w = self.weights[t]
            M = self._penalty(t) if t < self.T else 0.0
            archive = self._archive_arrays(t) if t < self.T else None
            if states is None:
                group = list(self.visited[t - 1].values())
                if limit is not None:
                    group = group[-limit:]  # most recently visited states
            else:
                group = states[t - 1]
            for x_prev in group:
                vals = [
                    upper_value(self.lattice.stage(t)[j], x_prev, archive, M)
                    for j in range(K)
                ]
                self._archive_store(t - 1, x_prev, w.aggregate(vals))
        return upper_value(
            self.lattice.stage(1)[0],
            self.lattice.x0,
            self._archive_arrays(1),
            self._penalty(1),
        )

    def _archive_store(self, t, x, vbar):
        key = x.tobytes()
        entry = self.archives[t].get(key)
        if entry is None or vbar < entry[1]:
            self.archives[t][key] = (x, float(vbar))
            self._archive_cache.pop(t, None)

    def _archive_arrays(self, t):
        if not self.archives[t]:
            raise ValueError(f"stage {t} archive is empty")
        cached = self._archive_cache.get(t)
        if cached is None:
            entries = list(self.archives[t].values())
            cached = (
                np.vstack([e[0] for e in entries]),
                np.array([e[1] for e in entries]),
            )
            self._archive_cache[t] = cached
        return cached

    # -- driver ---------------------------------------------------------------
    def run(self) -> TrainReport:
        report = TrainReport()
        best_upper = np.inf
        t_lower_acc = 0.0
        stride = max(1, self.options.upper_stride)
        for i in range(1, self.options.max_iterations + 1):
            self._iteration = i
            t0 = time.perf_counter()
            lower, states = self.forward_pass()
            self.backward_pass(states)
            t_lower_acc += time.perf_counter() - t0
            last = i == self.options.max_iterations
            if i % stride and not last:
                continue
            t1 = time.perf_counter()
            scope = None if (last and self.options.final_refresh) else states
            raw_upper = self.upper_sweep(scope)
            t_upper = time.perf_counter() - t1
            best_upper = min(best_upper, raw_upper)
            gap = best_upper - lower
            cuts = max(p.count for p in self.pools.values())
            report.add_row(cuts, lower, best_upper, gap, t_lower_acc, t_upper)
            t_lower_acc = 0.0
            if gap <= self.options.tolerance:
                report.converged = True
                break
        return report


def train(lattice, prefs=None, weights=None, options=None) -> TrainReport:
    """Run the bound iteration until the gap closes or iterations run out.

    Nonconvergence within the iteration budget is reported through
    ``TrainReport.converged``, not raised.
    """
    return MarsrmSddp(lattice, prefs=prefs, weights=weights, options=options).run()
