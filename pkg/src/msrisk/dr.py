"""Distributionally robust stage preferences over moment ambiguity sets.

The stage risk is the worst case of the CVaR combination over all preference
weights matching a given mean and covariance on a finite support. Strong
duality turns the inner sup into a small set of dual variables and support
rows that ride along inside every stage LP. The SDDP variant keeps one cut
pool per scenario (the dual block couples scenarios inside each LP, so cuts
must stay scenario-wise) and scenario-wise upper envelopes. Per-scenario
solves within a backward step are independent; appends happen in fixed
scenario order, so runs are schedule-independent and seed-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lp import LpError, LpModel, RecourseError, solve_arrays
from .risk import (
    ArsrmWeights,
    PreferenceDistribution,
    StepSpectrum,
    UnsupportedConfigurationError,
    arsrm_weights,
    combination_spectrum,
)
from .scenario import RngStream, ScenarioLattice
from .sddp import Cut, CutPool, TrainOptions, TrainReport, _dedupe


@dataclass(frozen=True)
class MomentAmbiguitySet:
    """All preference weights on a finite support with fixed mean and covariance.

    ``support`` holds the observed preference states ``s_l = (lam, alpha)``;
    membership requires ``q >= 0``, ``sum q = 1``, ``sum q s = mu`` and
    ``sum q (s - mu)(s - mu)' = Sigma``. Nonemptiness is certified with one
    feasibility LP at construction. Each support point carries its spectrum so
    the induced CVaR-combination weights are fixed by the set itself.
    """

    support: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    spectra: tuple[StepSpectrum, ...] = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.array(self.support, dtype=float))
        mu = np.array(self.mu, dtype=float).ravel()
        Sig = np.atleast_2d(np.array(self.Sigma, dtype=float))
        if pts.shape[1] != mu.size or Sig.shape != (mu.size, mu.size):
            raise ValueError("support, mu and Sigma dimensions disagree")
        if not np.allclose(Sig, Sig.T, atol=1e-12):
            raise ValueError("Sigma must be symmetric")
        spectra = self.spectra
        if not spectra:
            if pts.shape[1] != 2:
                raise ValueError("default spectra need (lam, alpha) support points")
            spectra = tuple(combination_spectrum(lam, a) for lam, a in pts)
        if len(spectra) != pts.shape[0]:
            raise ValueError("need one spectrum per support point")
        for arr in (pts, mu, Sig):
            arr.setflags(write=False)
        object.__setattr__(self, "support", pts)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sig)
        object.__setattr__(self, "spectra", spectra)
        M, m = self.moment_system()
        probe = solve_arrays(np.zeros(self.size), A_eq=M, b_eq=m)
        if not probe.is_optimal:
            raise ValueError(
                "moment conditions admit no distribution on the given support"
            )
        object.__setattr__(self, "_member", np.asarray(probe.x))

    @classmethod
    def from_empirical(
        cls, support, probs, spectrum_builder=combination_spectrum
    ) -> "MomentAmbiguitySet":
        """Moments of the empirical distribution ``probs`` on ``support``."""
        pts = np.atleast_2d(np.asarray(support, dtype=float))
        q = np.asarray(probs, dtype=float).ravel()
        mu = q @ pts
        d = pts - mu
        Sigma = (d * q[:, None]).T @ d
        spectra = tuple(spectrum_builder(lam, a) for lam, a in pts)
        return cls(support=pts, mu=mu, Sigma=Sigma, spectra=spectra)

    @property
    def size(self) -> int:
        return int(self.support.shape[0])

    @property
    def dim(self) -> int:
        return int(self.mu.size)

    def member_q(self) -> np.ndarray:
        """One feasible weight vector (from the construction-time LP)."""
        return np.array(self._member)

    def moment_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Equality system ``M q = m`` of the membership conditions.

        Rows: normalization, the mean coordinates, then the distinct entries
        of the centered second-moment matrix (upper triangle, row-major).
        """
        pts, mu = self.support, self.mu
        d = pts - mu
        rows = [np.ones(self.size)]
        rhs = [1.0]
        for i in range(self.dim):
            rows.append(pts[:, i])
            rhs.append(mu[i])
        for i in range(self.dim):
            for j in range(i, self.dim):
                rows.append(d[:, i] * d[:, j])
                rhs.append(self.Sigma[i, j])
        return np.vstack(rows), np.asarray(rhs)

    def dual_coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-support-point dual rows and the dual objective vector.

        With a single row per distinct covariance entry, the off-diagonal dual
        variable absorbs the factor two of the Frobenius pairing with the
        symmetric matrix multiplier.
        """
        M, m = self.moment_system()
        return M.T.copy(), m

    def pinned_q(self) -> Optional[np.ndarray]:
        """The unique member, when the moment system pins one; else None."""
        M, m = self.moment_system()
        if np.linalg.matrix_rank(M, tol=1e-9) < self.size:
            return None
        q, *_ = np.linalg.lstsq(M, m, rcond=None)
        if np.max(np.abs(M @ q - m)) > 1e-8 or np.min(q) < -1e-9:
            return None
        return q

    def stage_weights(self, K: int) -> ArsrmWeights:
        """CVaR-combination weights of the support spectra on K equiprobable atoms.

        The member weights ``q`` are decision variables of the robust model;
        the returned container carries a uniform placeholder, and consumers
        read ``psi``/``beta``/``alpha_levels`` only.
        """
        pref = PreferenceDistribution(
            support=self.support,
            probs=np.full(self.size, 1.0 / self.size),
            spectra=self.spectra,
        )
        return arsrm_weights(K, pref)


def _check_equiprobable(probs, K):
    if probs is None:
        return
    p = np.asarray(probs, dtype=float)
    if p.size != K or np.max(np.abs(p - 1.0 / K)) > 1e-15:
        raise UnsupportedConfigurationError(
            "the robust combination requires equiprobable scenarios"
        )


def worst_case_arsrm(values, probs, amb: MomentAmbiguitySet, weights: ArsrmWeights) -> float:
    """Worst-case combination ``sup_q sum_{l,k} q_l beta_{l,k} CVaR_{alpha_k}``.

    Solved through the moment-dual LP; by strong duality (the set is nonempty
    and the CVaR terms are finite) this equals the direct sup, cf.
    :func:`worst_case_arsrm_primal`.
    """
    v = np.asarray(values, dtype=float).ravel()
    K = v.size
    _check_equiprobable(probs, K)
    if weights.K != K:
        raise ValueError("weights were built for a different scenario count")
    S = amb.size
    rows, obj = amb.dual_coefficients()
    zdim = obj.size
    caps = 1.0 / (1.0 - weights.alpha_levels)
    # variables: [zeta (zdim), eta (K), Delta (K*K)]
    dim = zdim + K + K * K
    c = np.zeros(dim)
    c[:zdim] = obj
    A_ub = np.zeros((S + K * K, dim))
    b_ub = np.zeros(S + K * K)
    for l in range(S):
        A_ub[l, :zdim] = -rows[l]
        A_ub[l, zdim : zdim + K] = weights.beta[l]
        A_ub[l, zdim + K :] = np.repeat(weights.beta[l] * caps / K, K)
    for k in range(K):
        for j in range(K):
            r = S + k * K + j
            A_ub[r, zdim + k] = -1.0
            A_ub[r, zdim + K + k * K + j] = -1.0
            b_ub[r] = -v[j]
    bounds = [(None, None)] * (zdim + K) + [(0, None)] * (K * K)
    sol = solve_arrays(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds)
    if not sol.is_optimal:
        raise LpError(f"moment-dual LP is {sol.status}")
    return float(sol.objective)


def worst_case_arsrm_primal(values, amb: MomentAmbiguitySet, weights: ArsrmWeights) -> float:
    """The direct sup over member weights (reference route for duality audits)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    K = v.size
    tail_means = np.cumsum(v[::-1])[::-1] / np.arange(K, 0, -1)
    scores = weights.beta @ tail_means
    M, m = amb.moment_system()
    sol = solve_arrays(-scores, A_eq=M, b_eq=m)
    if not sol.is_optimal:
        raise LpError(f"moment-primal LP is {sol.status}")
    return -float(sol.objective)


@dataclass(frozen=True)
class DrCut:
    """Scenario-wise affine minorant of the robust cost-to-go."""

    scenario: int
    intercept: float
    gradient: np.ndarray


def dr_stage_subproblem(
    realization,
    x_prev,
    scenario_cuts,
    amb: MomentAmbiguitySet,
    weights: ArsrmWeights,
) -> LpModel:
    """Robust stage subproblem as an inspectable ``LpModel``.

    ``scenario_cuts`` is a list (one entry per next-stage scenario) of cut
    lists; passing ``None`` marks the final stage, which carries none of the
    robust machinery. Cut rows appear literally as
    ``g + G x - eta_k <= Delta_{k,j}`` for every stored cut and level.
    """
    r = realization
    rhs = r.b - r.E @ np.asarray(x_prev, dtype=float)
    model = LpModel()
    x = model.add_variables(r.num_vars, obj=r.c, lb=0.0)
    if scenario_cuts is None:
        for i in range(r.A.shape[0]):
            keep = r.A[i] != 0.0
            model.add_equality(x[keep], r.A[i][keep], rhs[i], tag=("balance", i))
        return model
    K = len(scenario_cuts)
    if weights.K != K:
        raise ValueError("weights were built for a different scenario count")
    rows, obj = amb.dual_coefficients()
    zdim = obj.size
    caps = 1.0 / (1.0 - weights.alpha_levels)
    zeta = model.add_variables(zdim, obj=obj, lb=None)
    eta = model.add_variables(K, lb=None)
    delta = model.add_variables(K * K, lb=0.0)
    for i in range(r.A.shape[0]):
        keep = r.A[i] != 0.0
        model.add_equality(x[keep], r.A[i][keep], rhs[i], tag=("balance", i))
    for l in range(amb.size):
        idx = np.concatenate([zeta, eta, delta])
        coef = np.concatenate(
            [-rows[l], weights.beta[l], np.repeat(weights.beta[l] * caps / K, K)]
        )
        keep = coef != 0.0
        model.add_inequality(idx[keep], coef[keep], 0.0, tag=("support", l))
    for j, cuts in enumerate(scenario_cuts):
        for n, cut in enumerate(cuts):
            for k in range(K):
                keep = cut.gradient != 0.0
                model.add_inequality(
                    np.concatenate([x[keep], [eta[k], delta[k * K + j]]]),
                    np.concatenate([cut.gradient[keep], [-1.0, -1.0]]),
                    -cut.intercept,
                    tag=("cut", j, n, k),
                )
    return model


class DrSddp:
    """Multi-cut robust bound iteration over a scenario lattice."""

    def __init__(self, lattice: ScenarioLattice, ambs, options=None):
        self.lattice = lattice
        self.T = lattice.horizon
        self.options = options or TrainOptions()
        if not isinstance(ambs, (list, tuple)):
            ambs = [ambs] * (self.T - 1)
        if len(ambs) != self.T - 1:
            raise ValueError(f"need one ambiguity set per stage 2..{self.T}")
        self.ambs = {t: ambs[t - 2] for t in range(2, self.T + 1)}
        self.weights = {}
        for t in range(2, self.T + 1):
            if not lattice.is_equiprobable(t):
                raise UnsupportedConfigurationError(
                    "the robust combination requires equiprobable stages"
                )
            self.weights[t] = self.ambs[t].stage_weights(lattice.size(t))
        big = self.options.big
        self.pools = {
            t: [CutPool(lattice.num_vars(t - 1), big) for _ in range(lattice.size(t))]
            for t in range(2, self.T + 1)
        }
        # archive[t]: visited x_t states with per-scenario upper values of
        # stage t+1, keyed by state; revisits keep scenario-wise lowest values
        self.archives = {t: {} for t in range(1, self.T)}
        self._archive_cache = {}
        self.visited = {t: {} for t in range(1, self.T)}
        self._coupling_masks = {}
        self._forward_rng = RngStream(self.options.seed).generator("forward")
        self._iteration = 0

    # -- solves -----------------------------------------------------------------
    def _lower_blocks(self, t):
        """Constant inequality blocks of the stage-t lower LP, plus cut rows."""
        K = self.lattice.size(t + 1)
        amb = self.ambs[t + 1]
        w = self.weights[t + 1]
        rows, obj = amb.dual_coefficients()
        zdim = obj.size
        caps = 1.0 / (1.0 - w.alpha_levels)
        return K, amb, w, rows, obj, zdim, caps

    def _dr_solve_stage(self, t, j, x_prev, need_duals=False):
        r = self.lattice.stage(t)[j]
        rhs = r.b - r.E @ x_prev
        n, m = r.num_vars, r.A.shape[0]
        if t == self.T:
            sol = solve_arrays(r.c, A_eq=r.A, b_eq=rhs)
        else:
            K, amb, w, rows, obj, zdim, caps = self._lower_blocks(t)
            S = amb.size
            pools = self.pools[t + 1]
            ncuts = sum(len(p.cuts) for p in pools)
            # variables: [x, zeta, eta, Delta, u] with u_j the epigraph of the
            # scenario-j cut family (equivalent to writing each cut against
            # every level row, with far fewer rows)
            dim = n + zdim + K + K * K + K
            c = np.zeros(dim)
            c[:n] = r.c
            c[n : n + zdim] = obj
            A_eq = np.zeros((m, dim))
            A_eq[:, :n] = r.A
            A_ub = np.zeros((S + ncuts + K * K, dim))
            b_ub = np.zeros(S + ncuts + K * K)
            for l in range(S):
                A_ub[l, n : n + zdim] = -rows[l]
                A_ub[l, n + zdim : n + zdim + K] = w.beta[l]
                A_ub[l, n + zdim + K : n + zdim + K + K * K] = np.repeat(
                    w.beta[l] * caps / K, K
                )
            base = S
            u0 = n + zdim + K + K * K
            for j2, pool in enumerate(pools):
                G, g = pool.matrices()
                rows_j = slice(base, base + G.shape[0])
                A_ub[rows_j, :n] = G
                A_ub[rows_j, u0 + j2] = -1.0
                b_ub[rows_j] = -g
                base += G.shape[0]
            for k in range(K):
                for j2 in range(K):
                    rr = base + k * K + j2
                    A_ub[rr, u0 + j2] = 1.0
                    A_ub[rr, n + zdim + k] = -1.0
                    A_ub[rr, n + zdim + K + k * K + j2] = -1.0
            bounds = (
                [(0, None)] * n
                + [(None, None)] * (zdim + K)
                + [(0, None)] * (K * K)
                + [(None, None)] * K
            )
            sol = solve_arrays(c, A_eq=A_eq, b_eq=rhs, A_ub=A_ub, b_ub=b_ub, bounds=bounds)
        if sol.status == "infeasible":
            raise RecourseError(
                f"stage {t}, scenario {j}: robust subproblem infeasible at the "
                "visited state, contradicting relatively complete recourse"
            )
        if not sol.is_optimal:
            raise LpError(f"stage {t}, scenario {j}: LP is {sol.status}")
        return float(sol.objective), sol.x[:n], (sol.eq_duals if need_duals else None)

    def _dr_upper_value(self, t, j, x_prev):
        r = self.lattice.stage(t)[j]
        rhs = r.b - r.E @ x_prev
        n, m = r.num_vars, r.A.shape[0]
        if t == self.T:
            sol = solve_arrays(r.c, A_eq=r.A, b_eq=rhs)
            if not sol.is_optimal:
                raise RecourseError(f"terminal stage LP is {sol.status}")
            return float(sol.objective)
        K, amb, w, rows, obj, zdim, caps = self._lower_blocks(t)
        S = amb.size
        X, V = self._archive_arrays(t)
        P = V.shape[0]
        M = np.broadcast_to(self._penalty(t), (n,))
        # variables: [x, zeta, eta, Delta, u, theta (K*P), yp (K*n), ym (K*n)]
        dim = n + zdim + K + K * K + K + K * P + 2 * K * n
        th0 = n + zdim + K + K * K + K
        yp0 = th0 + K * P
        ym0 = yp0 + K * n
        u0 = n + zdim + K + K * K
        c = np.zeros(dim)
        c[:n] = r.c
        c[n : n + zdim] = obj
        A_eq = np.zeros((m + K * n + K, dim))
        b_eq = np.zeros(m + K * n + K)
        A_eq[:m, :n] = r.A
        b_eq[:m] = rhs
        for j2 in range(K):
            rr = slice(m + j2 * n, m + (j2 + 1) * n)
            A_eq[rr, :n] = -np.eye(n)
            A_eq[rr, th0 + j2 * P : th0 + (j2 + 1) * P] = X.T
            A_eq[rr, yp0 + j2 * n : yp0 + (j2 + 1) * n] = np.eye(n)
            A_eq[rr, ym0 + j2 * n : ym0 + (j2 + 1) * n] = -np.eye(n)
            A_eq[m + K * n + j2, th0 + j2 * P : th0 + (j2 + 1) * P] = 1.0
            b_eq[m + K * n + j2] = 1.0
        A_ub = np.zeros((S + K + K * K, dim))
        b_ub = np.zeros(S + K + K * K)
        for l in range(S):
            A_ub[l, n : n + zdim] = -rows[l]
            A_ub[l, n + zdim : n + zdim + K] = w.beta[l]
            A_ub[l, n + zdim + K : n + zdim + K + K * K] = np.repeat(
                w.beta[l] * caps / K, K
            )
        for j2 in range(K):
            rr = S + j2
            A_ub[rr, th0 + j2 * P : th0 + (j2 + 1) * P] = V[:, j2]
            A_ub[rr, yp0 + j2 * n : yp0 + (j2 + 1) * n] = M
            A_ub[rr, ym0 + j2 * n : ym0 + (j2 + 1) * n] = M
            A_ub[rr, u0 + j2] = -1.0
        for k in range(K):
            for j2 in range(K):
                rr = S + K + k * K + j2
                A_ub[rr, u0 + j2] = 1.0
                A_ub[rr, n + zdim + k] = -1.0
                A_ub[rr, n + zdim + K + k * K + j2] = -1.0
        bounds = (
            [(0, None)] * n
            + [(None, None)] * (zdim + K)
            + [(0, None)] * (K * K)
            + [(None, None)] * K
            + [(0, None)] * (K * P + 2 * K * n)
        )
        sol = solve_arrays(c, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, bounds=bounds)
        if not sol.is_optimal:
            raise RecourseError(f"robust upper LP is {sol.status}")
        return float(sol.objective)

    def _archive_store(self, t, x, vec):
        key = x.tobytes()
        entry = self.archives[t].get(key)
        if entry is None:
            self.archives[t][key] = (x, np.asarray(vec, dtype=float))
        else:
            self.archives[t][key] = (x, np.minimum(entry[1], vec))
        self._archive_cache.pop(t, None)

    def _archive_arrays(self, t):
        if not self.archives[t]:
            raise ValueError(f"stage {t} archive is empty")
        cached = self._archive_cache.get(t)
        if cached is None:
            entries = list(self.archives[t].values())
            cached = (
                np.vstack([e[0] for e in entries]),
                np.vstack([e[1] for e in entries]),
            )
            self._archive_cache[t] = cached
        return cached

    def _coupled_columns(self, t: int) -> np.ndarray:
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
        observed = np.max(
            [p.max_gradient_per_coordinate() for p in self.pools[t + 1]], axis=0
        )
        return np.maximum(opt.lipschitz_floor * mask, opt.lipschitz_safety * observed)

    # -- passes --------------------------------------------------------------
    def forward_pass(self):
        v1, x1, _ = self._dr_solve_stage(1, 0, self.lattice.x0)
        states = {1: [x1]}
        if self.T > 2:
            if self.options.full_enumeration:
                for t in range(2, self.T):
                    nxt = []
                    for x_prev in states[t - 1]:
                        for j in range(self.lattice.size(t)):
                            _, x, _ = self._dr_solve_stage(t, j, x_prev)
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
                        _, x, _ = self._dr_solve_stage(t, j, x)
                        per_stage[t].append(x)
                for t in range(2, self.T):
                    states[t] = _dedupe(per_stage[t])
        for t, group in states.items():
            for x in group:
                self.visited[t].setdefault(x.tobytes(), x)
        return v1, states

    def backward_step(self, t, x_prev) -> list[DrCut]:
        """One multi-cut update: a scenario-wise cut family at ``x_prev``."""
        reals = self.lattice.stage(t)
        out = []
        for j in range(self.lattice.size(t)):
            v, _, duals = self._dr_solve_stage(t, j, x_prev, need_duals=True)
            G = -(duals @ reals[j].E)
            out.append(DrCut(scenario=j, intercept=v - G @ x_prev, gradient=G))
        return out

    def backward_pass(self, states):
        for t in range(self.T, 1, -1):
            for x_prev in states[t - 1]:
                for cut in self.backward_step(t, x_prev):
                    self.pools[t][cut.scenario].add(
                        Cut(cut.intercept, cut.gradient, origin=(self._iteration, t))
                    )

    def upper_sweep(self, states=None) -> float:
        """Certify per-scenario upper values; ``states=None`` re-certifies all."""
        limit = self.options.refresh_limit
        for t in range(self.T, 1, -1):
            K = self.lattice.size(t)
            if states is None:
                group = list(self.visited[t - 1].values())
                if limit is not None:
                    group = group[-limit:]
            else:
                group = states[t - 1]
            for x_prev in group:
                vec = np.array([self._dr_upper_value(t, j, x_prev) for j in range(K)])
                self._archive_store(t - 1, x_prev, vec)
        return self._dr_upper_value(1, 0, self.lattice.x0)

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
            cuts = max(p.count for pools in self.pools.values() for p in pools)
            report.add_row(cuts, lower, best_upper, gap, t_lower_acc, t_upper)
            t_lower_acc = 0.0
            if gap <= self.options.tolerance:
                report.converged = True
                break
        return report


def dr_train(lattice, ambs, options=None) -> TrainReport:
    """Robust bound iteration; single forward path per iteration by default."""
    return DrSddp(lattice, ambs, options=options).run()
