"""Renewal-reward throughput model for the opportunistic MAC.

A renewal cycle runs between consecutive successful-transmission ends and
contains exactly one success.  Conditioning on the occupancy census at the
start of each contention period yields two linear systems:

  * expected cycle length E[R | census] over all (k1, k2, k3) censuses,
  * tagged-queue success probabilities P(tagged AP / STA wins the cycle |
    tagged pair state and census of the other N-1 pairs).

Occupancy enters only through the i.i.d. per-queue prior (P_A, P_S), so for
a given arrival rate the systems are solved once and the fixed point
lambda = Theta_AP = Theta_STA is found by reweighting the solved vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AP, STA, MacTiming, ParameterError, SystemConfig, TimerPolicy
from .kernels import (
    PAIR_STATES,
    S0,
    S1,
    S2,
    ConsistencyError,
    KernelTable,
    TaggedCensus,
    build_kernels,
    p_hat_minislot,
    pair_transition_probs,
)


@dataclass(frozen=True)
class OccupancyPrior:
    """Long-run probabilities that an AP queue / STA queue is nonempty."""

    p_a: float
    p_s: float

    def __post_init__(self):
        if not (0.0 <= self.p_a <= 1.0 and 0.0 <= self.p_s <= 1.0):
            raise ParameterError("occupancy probabilities must lie in [0, 1]")

    def pair_state_probs(self) -> tuple[float, float, float, float]:
        """(rho_0 .. rho_3): i.i.d. per-pair state probabilities."""
        pa, ps = self.p_a, self.p_s
        return ((1 - pa) * (1 - ps), pa * (1 - ps), (1 - pa) * ps, pa * ps)


@dataclass(frozen=True)
class AnalysisSolution:
    """Fixed-point output at one arrival rate."""

    lambda_pps: float
    p_a: float
    p_s: float
    expected_renewal_us: float
    pbar_a: float
    pbar_s: float
    theta_ap_pps: float
    theta_sta_pps: float
    converged: bool
    iterations: int
    identity_error: float = 0.0  # max observed |N(pbar_a + pbar_s) - 1|


def enumerate_censuses(n: int) -> list[tuple[int, int, int]]:
    """All (k1, k2, k3) with k1 + k2 + k3 <= n, in lexicographic order."""
    return [(k1, k2, k3)
            for k1 in range(n + 1)
            for k2 in range(n - k1 + 1)
            for k3 in range(n - k1 - k2 + 1)]


def _multinom(n: int, counts) -> int:
    coeff, left = 1, n
    for c in counts:
        coeff *= math.comb(left, c)
        left -= c
    return coeff


def census_prior(prior: OccupancyPrior, n: int) -> dict[tuple[int, int, int], float]:
    """Probability of each census under independent per-queue occupancy."""
    rho = prior.pair_state_probs()
    out = {}
    for k1, k2, k3 in enumerate_censuses(n):
        k0 = n - k1 - k2 - k3
        out[(k1, k2, k3)] = (_multinom(n, (k0, k1, k2, k3))
                             * rho[0] ** k0 * rho[1] ** k1
                             * rho[2] ** k2 * rho[3] ** k3)
    return out


def tagged_prior(prior: OccupancyPrior, n: int) -> dict[tuple, float]:
    """Probability of each tagged state (s_i; l1, l2, l3)."""
    rho = prior.pair_state_probs()
    out = {}
    for i in PAIR_STATES:
        for l1, l2, l3 in enumerate_censuses(n - 1):
            l0 = n - 1 - l1 - l2 - l3
            out[(i, l1, l2, l3)] = (rho[i] * _multinom(n - 1, (l0, l1, l2, l3))
                                    * rho[0] ** l0 * rho[1] ** l1
                                    * rho[2] ** l2 * rho[3] ** l3)
    return out


class CycleModel:
    """Solved per-census renewal lengths and tagged success probabilities.

    Everything except the occupancy prior is fixed by (kernels, timing, per,
    lambda, N); ``throughput`` aggregates the solved vectors under a prior.
    """

    def __init__(self, kernels: KernelTable, timing: MacTiming,
                 per, lambda_pps: float, n: int):
        if n < 1:
            raise ParameterError("need at least one pair")
        self.kernels = kernels
        self.timing = timing
        self.per = np.asarray(per, dtype=float)
        self.lambda_pps = lambda_pps
        self.n = n
        self.kmax = kernels.t_max
        self.num_states = kernels.policy.num_states
        if len(self.per) != self.num_states:
            raise ParameterError("PER vector length does not match channel states")

        self.censuses = enumerate_censuses(n)
        self.cidx = {c: i for i, c in enumerate(self.censuses)}
        self.others = enumerate_censuses(n - 1)
        self.oidx = {c: i for i, c in enumerate(self.others)}
        self.tagged_states = [(i, L) for i in PAIR_STATES for L in self.others]

        # kernel mass regrouped by the channel state the timer length implies
        k1 = self.kmax + 1
        self._ap_by_state = np.zeros((4, k1, self.num_states))
        self._sta_by_state = np.zeros((4, k1, self.num_states))
        for l in range(k1):
            s = kernels.state_of_l[l]
            self._ap_by_state[:, :, s] += kernels.ap[:, :, l]
            self._sta_by_state[:, :, s] += kernels.sta[:, :, l]
        self._surv = np.stack([kernels.survival_row(j) for j in PAIR_STATES])
        self._surv_prev = np.stack(
            [[kernels.survival(j, k - 1) for k in range(k1)] for j in PAIR_STATES])
        self._cum_ap = kernels.cum_ap
        gl_x, gl_w = np.polynomial.legendre.leggauss(max(1, (n + 1) // 2))
        self._gl = ((gl_x + 1.0) / 2.0, gl_w / 2.0)

        self._summary_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._trow_cache: dict[tuple, np.ndarray] = {}

        self._solve_renewal()
        self._solve_tagged()

    # ----- per-census contention summaries -------------------------------

    def _tiebreak_vec(self, counts) -> np.ndarray:
        """W(k): expected uniform-pick share of one more AP queue expiring at
        k against ``counts`` other pairs, for k = 0..t_max."""
        xs, ws = self._gl
        out = np.zeros(self.kmax + 1)
        for x, w in zip(xs, ws):
            prod = np.ones(self.kmax + 1)
            for j in PAIR_STATES:
                if counts[j]:
                    prod *= (self._surv[j] + x * self._cum_ap[j]) ** counts[j]
            out += w * prod
        return out

    def census_summary(self, census: tuple[int, int, int]):
        """(succ[k, state], col[k]) for one census: total clean-win mass by
        resolution slot and winner channel state, and collision mass."""
        if census in self._summary_cache:
            return self._summary_cache[census]
        k1_, k2_, k3_ = census
        counts = (self.n - k1_ - k2_ - k3_, k1_, k2_, k3_)
        succ = np.zeros((self.kmax + 1, self.num_states))
        for i in PAIR_STATES:
            if counts[i] == 0:
                continue
            others = tuple(counts[j] - (1 if j == i else 0) for j in PAIR_STATES)
            w_ap = self._tiebreak_vec(others)
            surv_others = np.ones(self.kmax + 1)
            for j in PAIR_STATES:
                if others[j]:
                    surv_others *= self._surv[j] ** others[j]
            succ += counts[i] * self._ap_by_state[i] * w_ap[:, None]
            succ += counts[i] * self._sta_by_state[i] * surv_others[:, None]
        before = np.ones(self.kmax + 1)
        after = np.ones(self.kmax + 1)
        for j in PAIR_STATES:
            if counts[j]:
                before *= self._surv_prev[j] ** counts[j]
                after *= self._surv[j] ** counts[j]
        col = before - after - succ.sum(axis=1)
        low = col.min()
        if low < -1e-9:
            raise ConsistencyError(f"negative collision mass {low} at census {census}")
        col = np.clip(col, 0.0, None)
        self._summary_cache[census] = (succ, col)
        return succ, col

    def _branch_weights(self, census: tuple[int, int, int]):
        """Cycle-continuation weights grouped by elapsed window duration."""
        succ, col = self.census_summary(census)
        delta = self.timing.slot_us
        by_t: dict[float, float] = {}
        for k in range(self.kmax + 1):
            for s in range(self.num_states):
                w = succ[k, s] * self.per[s]
                if w > 0.0:
                    t = k * delta + self.timing.t_suc(s)
                    by_t[t] = by_t.get(t, 0.0) + w
            if col[k] > 0.0:
                t = k * delta + self.timing.t_col()
                by_t[t] = by_t.get(t, 0.0) + col[k]
        return by_t

    def _duration_term(self, census: tuple[int, int, int]) -> float:
        """Expected time consumed by the first minislot of the cycle."""
        succ, col = self.census_summary(census)
        delta = self.timing.slot_us
        ks = np.arange(self.kmax + 1) * delta
        tsuc = np.array([self.timing.t_suc(s) for s in range(self.num_states)])
        return float((succ * (ks[:, None] + tsuc[None, :])).sum()
                     + (col * (ks + self.timing.t_col())).sum())

    # ----- census-to-census transitions ----------------------------------

    def _transition_row(self, census: tuple[int, int, int], t_us: float,
                        n: int, index: dict) -> np.ndarray:
        """Destination distribution over censuses of ``n`` pairs after a
        window of ``t_us`` (arrivals only; occupied queues stay occupied)."""
        key = (census, n, t_us)
        if key in self._trow_cache:
            return self._trow_cache[key]
        k1_, k2_, k3_ = census
        n0 = n - k1_ - k2_ - k3_
        p = -math.expm1(-(self.lambda_pps * 1e-6) * t_us)
        q = 1.0 - p
        pw = [p ** i for i in range(2 * n + 1)]
        qw = [q ** i for i in range(2 * n + 1)]
        row = np.zeros(len(index))
        for a in range(k1_ + 1):
            wa = math.comb(k1_, a) * pw[a] * qw[k1_ - a]
            for b in range(k2_ + 1):
                wb = wa * math.comb(k2_, b) * pw[b] * qw[k2_ - b]
                for c in range(n0 + 1):
                    wc = wb * math.comb(n0, c) * pw[c] * qw[c]
                    for d in range(n0 - c + 1):
                        wd = wc * math.comb(n0 - c, d) * pw[d] * qw[d]
                        for e in range(n0 - c - d + 1):
                            rest = n0 - c - d - e
                            w = (wd * math.comb(n0 - c - d, e)
                                 * pw[2 * e] * qw[2 * rest])
                            dest = (k1_ - a + c, k2_ - b + d, k3_ + a + b + e)
                            row[index[dest]] += w
        self._trow_cache[key] = row
        return row

    # ----- linear systems -------------------------------------------------

    def _solve_renewal(self) -> None:
        nc = len(self.censuses)
        m = np.zeros((nc, nc))
        c = np.zeros(nc)
        lam_us = self.lambda_pps * 1e-6
        empty_idx = self.cidx[(0, 0, 0)]
        for ci, census in enumerate(self.censuses):
            if census == (0, 0, 0):
                if lam_us > 0.0:
                    c[ci] = 1.0 / (2.0 * self.n * lam_us)
                    m[ci, self.cidx[(1, 0, 0)]] = 0.5
                    m[ci, self.cidx[(0, 1, 0)]] = 0.5
                continue
            c[ci] = self._duration_term(census)
            for t_us, w in self._branch_weights(census).items():
                m[ci] += w * self._transition_row(census, t_us, self.n, self.cidx)
        if self.lambda_pps > 0.0:
            x = np.linalg.solve(np.eye(nc) - m, c)
        else:
            keep = [i for i in range(nc) if i != empty_idx]
            sub = np.linalg.solve(np.eye(nc - 1) - m[np.ix_(keep, keep)], c[keep])
            x = np.full(nc, np.inf)
            x[keep] = sub
        if not np.all(np.isfinite(x[[i for i in range(nc) if i != empty_idx]])):
            raise ConsistencyError("renewal linear system produced non-finite values")
        self._renewal_m, self._renewal_c = m, c
        self.renewal_by_census = x

    def _solve_tagged(self) -> None:
        nl = len(self.others)
        nt = 4 * nl
        tidx = lambda i, lo: i * nl + lo
        m = np.zeros((nt, nt))
        rhs = np.zeros((nt, 2))
        for i in PAIR_STATES:
            for lo, L in enumerate(self.others):
                t = tidx(i, lo)
                tagged = TaggedCensus(i, L[0], L[1], L[2], self.n)
                combined = tagged.census()
                if combined.is_empty():
                    # idle system: the first arrival lands on the tagged AP,
                    # the tagged STA, or one of the other pairs' queues
                    if self.lambda_pps > 0.0:
                        m[t, tidx(S1, self.oidx[(0, 0, 0)])] = 1.0 / (2 * self.n)
                        m[t, tidx(S2, self.oidx[(0, 0, 0)])] = 1.0 / (2 * self.n)
                        if self.n > 1:
                            frac = (self.n - 1) / (2.0 * self.n)
                            m[t, tidx(S0, self.oidx[(1, 0, 0)])] = frac
                            m[t, tidx(S0, self.oidx[(0, 1, 0)])] = frac
                    continue
                rhs[t, 0] = p_hat_minislot(AP, tagged, self.kernels, self.per)
                rhs[t, 1] = p_hat_minislot(STA, tagged, self.kernels, self.per)
                ckey = (combined.k1, combined.k2, combined.k3)
                for t_us, w in self._branch_weights(ckey).items():
                    fmap = pair_transition_probs(i, t_us, self.lambda_pps)
                    orow = self._transition_row(L, t_us, self.n - 1, self.oidx)
                    for j, fj in fmap.items():
                        if fj > 0.0:
                            m[t, j * nl:(j + 1) * nl] += w * fj * orow
        y = np.linalg.solve(np.eye(nt) - m, rhs)
        if not np.all(np.isfinite(y)):
            raise ConsistencyError("tagged linear system produced non-finite values")
        self._tagged_m, self._tagged_rhs = m, rhs
        self.tagged_ap = y[:, 0]
        self.tagged_sta = y[:, 1]
        self._tidx = tidx

    # ----- residuals and aggregation --------------------------------------

    def residuals(self) -> tuple[float, float]:
        """Max back-substitution residual of the two linear systems."""
        nc = len(self.censuses)
        x = self.renewal_by_census
        finite = np.isfinite(x)
        r1 = 0.0
        if self.lambda_pps > 0.0:
            r1 = float(np.abs((np.eye(nc) - self._renewal_m) @ x - self._renewal_c).max())
        else:
            keep = np.where(finite)[0]
            mm = self._renewal_m[np.ix_(keep, keep)]
            r1 = float(np.abs((np.eye(len(keep)) - mm) @ x[keep]
                              - self._renewal_c[keep]).max())
        y = np.stack([self.tagged_ap, self.tagged_sta], axis=1)
        nt = len(self.tagged_ap)
        r2 = float(np.abs((np.eye(nt) - self._tagged_m) @ y - self._tagged_rhs).max())
        return r1, r2

    def expected_renewal(self, prior: OccupancyPrior) -> float:
        probs = census_prior(prior, self.n)
        return float(sum(p * self.renewal_by_census[self.cidx[c]]
                         for c, p in probs.items() if p > 0.0))

    def tagged_success(self, prior: OccupancyPrior) -> tuple[float, float]:
        probs = tagged_prior(prior, self.n)
        pa = ps = 0.0
        for (i, l1, l2, l3), p in probs.items():
            if p > 0.0:
                t = self._tidx(i, self.oidx[(l1, l2, l3)])
                pa += p * self.tagged_ap[t]
                ps += p * self.tagged_sta[t]
        return pa, ps

    def throughput(self, prior: OccupancyPrior):
        """(theta_ap_pps, theta_sta_pps, e_r_us, pbar_a, pbar_s) at a prior."""
        e_r = self.expected_renewal(prior)
        pbar_a, pbar_s = self.tagged_success(prior)
        theta_ap = pbar_a / e_r * 1e6
        theta_sta = pbar_s / e_r * 1e6
        return theta_ap, theta_sta, e_r, pbar_a, pbar_s


# ----- public operations ---------------------------------------------------


def solve_expected_renewal(prior: OccupancyPrior, kernels: KernelTable,
                           timing: MacTiming, per, lambda_pps: float, n: int):
    """E[R] under the prior plus the per-census expectation vector."""
    model = CycleModel(kernels, timing, per, lambda_pps, n)
    vec = {c: float(model.renewal_by_census[i]) for i, c in enumerate(model.censuses)}
    if lambda_pps <= 0.0:
        probs = census_prior(prior, n)
        e_r = math.inf if probs[(0, 0, 0)] > 0.0 else sum(
            p * vec[c] for c, p in probs.items() if p > 0.0)
        return e_r, vec
    return model.expected_renewal(prior), vec


def solve_tagged_success(prior: OccupancyPrior, kernels: KernelTable,
                         timing: MacTiming, per, lambda_pps: float, n: int):
    """(pbar_a, pbar_s) under the prior plus the per-state vectors."""
    model = CycleModel(kernels, timing, per, lambda_pps, n)
    vec = {(i, L): (float(model.tagged_ap[model._tidx(i, lo)]),
                    float(model.tagged_sta[model._tidx(i, lo)]))
           for i in PAIR_STATES for lo, L in enumerate(model.others)}
    pa, ps = model.tagged_success(prior)
    return pa, ps, vec


FP_GAMMA = 0.5
FP_EPS = 1e-6
FP_TOL = 1e-4
FP_MAX_ITER = 500
FP_PIN_LIMIT = 50


_SECANT_MIN_SLOPE = 1e-3  # ln-ln sensitivity can be ~NP at light load
_SECANT_MAX_STEP = math.log(4.0)


def _next_occupancy(p, theta, lam, prev):
    """One deterministic update of a single occupancy coordinate.

    Base rule is the damped multiplicative step p * (lam/theta)^gamma; when
    the last two iterates expose a usable local slope of ln(theta) versus
    ln(p), a clamped log-space secant step replaces it (the multiplicative
    rule alone stalls at light load where theta barely responds to p).
    """
    lp, lt = math.log(p), math.log(theta)
    step = FP_GAMMA * (math.log(lam) - lt)
    if prev is not None:
        lp0, lt0 = prev
        if abs(lp - lp0) > 1e-14:
            slope = (lt - lt0) / (lp - lp0)
            if slope > _SECANT_MIN_SLOPE:
                step = (math.log(lam) - lt) / slope
    step = min(max(step, -_SECANT_MAX_STEP), _SECANT_MAX_STEP)
    new_p = min(max(math.exp(lp + step), FP_EPS), 1.0 - FP_EPS)
    return new_p, (lp, lt)


def fixed_point(lambda_pps: float, config: SystemConfig, policy: TimerPolicy,
                pi, timing: MacTiming) -> AnalysisSolution:
    """Solve lambda = Theta_AP = Theta_STA for the occupancy pair (P_A, P_S).

    Damped multiplicative updates with a safeguarded secant acceleration;
    non-convergence (iteration cap, or either coordinate pinned at 1-eps for
    FP_PIN_LIMIT consecutive iterations) is reported as instability, never
    raised.
    """
    if lambda_pps <= 0.0:
        raise ParameterError("fixed point requires a positive arrival rate")
    kernels = build_kernels(policy, pi, lambda_pps)
    model = CycleModel(kernels, timing, config.per_state_per, lambda_pps,
                       config.n_stations)
    pa = ps = 0.1
    prev_a = prev_s = None
    pinned = 0
    identity_err = 0.0
    converged = False
    iterations = 0
    theta_ap = theta_sta = e_r = pbar_a = pbar_s = math.nan
    for iterations in range(1, FP_MAX_ITER + 1):
        theta_ap, theta_sta, e_r, pbar_a, pbar_s = model.throughput(
            OccupancyPrior(pa, ps))
        identity_err = max(identity_err,
                           abs(config.n_stations * (pbar_a + pbar_s) - 1.0))
        res_a = abs(theta_ap - lambda_pps) / lambda_pps
        res_s = abs(theta_sta - lambda_pps) / lambda_pps
        if res_a < FP_TOL and res_s < FP_TOL:
            converged = True
            break
        pa, prev_a = _next_occupancy(pa, theta_ap, lambda_pps, prev_a)
        ps, prev_s = _next_occupancy(ps, theta_sta, lambda_pps, prev_s)
        if pa >= 1.0 - FP_EPS or ps >= 1.0 - FP_EPS:
            pinned += 1
            if pinned >= FP_PIN_LIMIT:
                break
        else:
            pinned = 0
    return AnalysisSolution(
        lambda_pps=lambda_pps, p_a=pa, p_s=ps, expected_renewal_us=e_r,
        pbar_a=pbar_a, pbar_s=pbar_s, theta_ap_pps=theta_ap,
        theta_sta_pps=theta_sta, converged=converged, iterations=iterations,
        identity_error=identity_err)


def capacity_search(config: SystemConfig, policy: TimerPolicy, pi,
                    timing: MacTiming, lambda_grid):
    """Largest grid rate with a convergent fixed point, plus all solutions."""
    grid = list(lambda_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ParameterError("lambda grid must be strictly ascending")
    solutions = [fixed_point(lam, config, policy, pi, timing) for lam in grid]
    capacity = None
    for sol in solutions:
        if sol.converged:
            capacity = sol.lambda_pps
    return capacity, solutions


ANALYSIS_COLUMNS = ("lambda_pps", "p_a", "p_s", "e_r_us", "pbar_a", "pbar_s",
                    "theta_ap_pps", "theta_sta_pps", "converged", "iterations")


def analysis_csv_lines(solutions, config_hash: str) -> list[str]:
    """Plot-ready rows; units are packets/second and microseconds."""
    lines = [f"# schema=analysis-v1 config_hash={config_hash} "
             f"units: lambda_pps=pkts/s e_r_us=us theta=pkts/s",
             ",".join(ANALYSIS_COLUMNS)]
    for s in solutions:
        lines.append(",".join([
            repr(float(s.lambda_pps)), repr(float(s.p_a)), repr(float(s.p_s)),
            repr(float(s.expected_renewal_us)), repr(float(s.pbar_a)),
            repr(float(s.pbar_s)), repr(float(s.theta_ap_pps)),
            repr(float(s.theta_sta_pps)), str(int(s.converged)),
            str(s.iterations)]))
    return lines
