"""Policy-path optimization: model-specific optimal paths, the decision-
calibrated expected-utility objective, global swarm search with local
trust-region refinement, and the model-averaging comparator.

Every objective evaluation is a deterministic function of (x, quarter seeds):
parameter draws, path innovations, and fallback-component draws are frozen
per quarter (common random numbers), so optimizers see a noiseless surface.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import Bounds as ScipyBounds
from scipy.optimize import minimize

from .forecast import ConditionalSampler, PredictiveSample, psd_factor
from .scoring import ScoreSpec, UtilitySpec, utility
from .synthesis import (InfeasibleTargetError, ModelProbabilities, TiltingVector,
                        baseline_margin_log_density, decision_conditioned_probs,
                        mixture_moments, score_components, score_moments,
                        score_support, solve_tilting, target_score, tilted_mixture)

log = logging.getLogger(__name__)


class DecisionError(ValueError):
    pass


@dataclass(frozen=True)
class PathBounds:
    """Box bounds on the rate path (%, annualized); default shadow-rate range."""

    lower: float = -10.0
    upper: float = 15.0

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise DecisionError("lower bound must be below upper bound")

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class SwarmConfig:
    particles: int = 24
    iterations: int = 60
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    refine_budget: int = 200
    cluster_distance: float = 0.25
    multimodal_value_tol: float = 1e-3

    def __post_init__(self) -> None:
        if self.particles < 8:
            raise DecisionError("swarm needs at least 8 particles")


@dataclass
class OptimizationReport:
    best_x: np.ndarray
    best_value: float
    evaluations: int
    multimodal: bool = False
    n_local_optima: int = 1
    budget_exhausted: bool = False
    trace: list = field(default_factory=list)   # (iteration, best value so far)


class _BestTracker:
    """Wraps an objective; remembers the best point over all evaluations."""

    def __init__(self, objective, bounds: PathBounds):
        self._objective = objective
        self._bounds = bounds
        self.best_x: np.ndarray | None = None
        self.best_value = -np.inf
        self.evaluations = 0

    def __call__(self, x: np.ndarray) -> float:
        x = self._bounds.clip(np.asarray(x, dtype=float))
        v = float(self._objective(x))
        self.evaluations += 1
        if np.isfinite(v) and v > self.best_value:
            self.best_value = v
            self.best_x = x.copy()
        return v


def _local_refine(tracker: _BestTracker, x0: np.ndarray, bounds: PathBounds,
                  budget: int) -> None:
    """Derivative-free trust-region polish (COBYLA) from x0, budget-capped."""
    if budget <= 0:
        tracker(x0)
        return
    k = x0.shape[0]
    try:
        minimize(lambda x: -tracker(x), x0, method="COBYLA",
                 bounds=ScipyBounds(np.full(k, bounds.lower), np.full(k, bounds.upper)),
                 options={"maxiter": budget, "rhobeg": 0.5, "tol": 1e-8})
    except StopIteration:
        pass


def model_optimal_path(objective, k: int, bounds: PathBounds, budget: int, seed,
                       warm_start: np.ndarray | None = None,
                       x_prev: float = 0.0) -> tuple[np.ndarray, OptimizationReport]:
    """Local trust-region maximization of one model's expected utility.

    Warm start defaults to the flat path at the last observed rate.
    """
    if budget < 50:
        raise DecisionError("model optimization budget must be at least 50 evaluations")
    x0 = bounds.clip(np.asarray(warm_start, dtype=float)) if warm_start is not None \
        else bounds.clip(np.full(k, x_prev))
    tracker = _BestTracker(objective, bounds)
    tracker(x0)
    _local_refine(tracker, x0, bounds, budget - 1)
    if tracker.best_x is None:
        raise DecisionError("all objective evaluations were non-finite")
    report = OptimizationReport(best_x=tracker.best_x, best_value=tracker.best_value,
                                evaluations=tracker.evaluations)
    return tracker.best_x, report


def optimize_policy(objective, k: int, bounds: PathBounds, cfg: SwarmConfig, seed,
                    warm_start: np.ndarray | None = None,
                    callback=None) -> tuple[np.ndarray, OptimizationReport]:
    """Global maximization: constriction-coefficient particle swarm over the
    box, then local refinement of the best particle.

    Reports multimodality by clustering near-optimal personal bests at
    ``cluster_distance`` in the max norm.
    """
    rng = np.random.default_rng(seed)
    lo = np.full(k, bounds.lower)
    hi = np.full(k, bounds.upper)
    span = hi - lo
    pos = lo + rng.uniform(size=(cfg.particles, k)) * span
    if warm_start is not None:
        pos[0] = bounds.clip(np.asarray(warm_start, dtype=float))
    vel = rng.uniform(-0.1, 0.1, size=(cfg.particles, k)) * span
    tracker = _BestTracker(objective, bounds)

    values = np.array([tracker(p) for p in pos])
    pbest = pos.copy()
    pbest_val = values.copy()
    g = int(np.argmax(pbest_val))
    centers = _ClusterLog(cfg)
    centers.offer(pbest, pbest_val)
    trace = [(0, float(pbest_val[g]))]
    for it in range(1, cfg.iterations + 1):
        r1 = rng.uniform(size=(cfg.particles, k))
        r2 = rng.uniform(size=(cfg.particles, k))
        vel = (cfg.inertia * vel
               + cfg.cognitive * r1 * (pbest - pos)
               + cfg.social * r2 * (pbest[g] - pos))
        pos = np.clip(pos + vel, lo, hi)
        values = np.array([tracker(p) for p in pos])
        improved = values > pbest_val
        pbest[improved] = pos[improved]
        pbest_val[improved] = values[improved]
        g = int(np.argmax(pbest_val))
        centers.offer(pbest, pbest_val)
        trace.append((it, float(pbest_val[g])))
        if callback is not None:
            callback(it, float(pbest_val[g]))
    _local_refine(tracker, pbest[g], bounds, cfg.refine_budget)
    trace.append((cfg.iterations + 1, tracker.best_value))

    spread = float(np.max(pbest_val) - np.min(pbest_val))
    multimodal, n_opt = centers.summarize(tracker.best_value, spread)
    report = OptimizationReport(best_x=tracker.best_x, best_value=tracker.best_value,
                                evaluations=tracker.evaluations, multimodal=multimodal,
                                n_local_optima=n_opt, trace=trace)
    return tracker.best_x, report


class _ClusterLog:
    """Running clusters of near-optimal points encountered by the swarm.

    A flat objective (zero spread across final personal bests) never counts
    as multimodal.
    """

    def __init__(self, cfg: SwarmConfig):
        self.cfg = cfg
        self.centers: list[list] = []   # [position, best value seen there]

    def offer(self, pos: np.ndarray, values: np.ndarray) -> None:
        best = float(np.max(values))
        for x, v in zip(pos, values):
            if v < best - self.cfg.multimodal_value_tol:
                continue
            for c in self.centers:
                if np.max(np.abs(x - c[0])) <= self.cfg.cluster_distance:
                    if v > c[1]:
                        c[0], c[1] = x.copy(), float(v)
                    break
            else:
                self.centers.append([x.copy(), float(v)])

    def summarize(self, final_best: float, spread: float) -> tuple[bool, int]:
        alive = sum(1 for c in self.centers
                    if c[1] >= final_best - self.cfg.multimodal_value_tol)
        n = max(alive, 1)
        return (n >= 2 and spread > 0.0), n


# ---------------------------------------------------------------------------
# Quarter evaluation pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """Feature toggles and sizes for the per-quarter synthesis pipeline."""

    k: int
    pi0: float = 0.1
    min_ratio: float = 0.75
    eps_cap: float = 0.25
    tilt: bool = True
    condition_on_x: bool = True
    n_baseline: int = 1000
    baseline_df: float = 10.0
    baseline_inflate: float = 2.0
    tilt_tol: float = 1e-3
    tilt_max_iter: int = 200
    eps_halvings: int = 6
    freeze_target: bool = False


@dataclass
class ModelHandle:
    """One fitted model inside a quarter: its sampler and solved decision."""

    name: str
    sampler: ConditionalSampler
    decision: np.ndarray | None = None
    decision_report: OptimizationReport | None = None


@dataclass
class ScenarioEval:
    """Everything the pipeline produces at one candidate rate path."""

    x: np.ndarray
    expected_utility: float
    initial_expected_utility: float
    pi_prior: np.ndarray
    pi_x: np.ndarray
    pi_tilde: np.ndarray
    tau: np.ndarray
    tilt_residual: float
    tilt_iterations: int
    tilt_converged: bool
    tilt_fallback: bool
    epsilon: float
    ess_per_model: np.ndarray
    ess_overall: float
    m_p: np.ndarray
    m_f: np.ndarray
    expected_score: np.ndarray
    dominant_improvement: float
    samples: list[PredictiveSample]
    pooled_weights: list[np.ndarray]
    utilities: list[np.ndarray]


class QuarterContext:
    """Holds one quarter's fitted models, prior weights, and frozen noise, and
    evaluates the synthesis pipeline at candidate rate paths."""

    def __init__(self, models: list[ModelHandle], pi_prior: ModelProbabilities,
                 uspec: UtilitySpec, sspec: ScoreSpec, cfg: PipelineConfig,
                 baseline_seed):
        if len(models) != pi_prior.n_models:
            raise DecisionError("one model handle per non-baseline weight required")
        self.models = models
        self.pi_prior = pi_prior
        self.uspec = uspec
        self.sspec = sspec
        self.cfg = cfg
        rng = np.random.default_rng(baseline_seed)
        dim = 3 * cfg.k
        if np.isinf(cfg.baseline_df):
            self._baseline_u = np.ones(cfg.n_baseline)
        else:
            self._baseline_u = rng.chisquare(cfg.baseline_df, size=cfg.n_baseline) \
                / cfg.baseline_df
        self._baseline_z = rng.standard_normal((cfg.n_baseline, dim))
        margins = [m.sampler.unconditional_policy_moments() for m in models]
        w = pi_prior.models / pi_prior.models.sum()
        mean = sum(wi * mu for wi, (mu, _) in zip(w, margins))
        cov = sum(wi * (C + np.outer(mu - mean, mu - mean))
                  for wi, (mu, C) in zip(w, margins))
        self.baseline_margin = (mean, 0.5 * (cov + cov.T))
        self._frozen_epsilon: float | None = None

    # -- pipeline pieces ----------------------------------------------------

    def conditioned_probabilities(self, x: np.ndarray) -> ModelProbabilities:
        if not self.cfg.condition_on_x:
            return ModelProbabilities(self.pi_prior.weights.copy(),
                                      stage="decision-conditioned")
        lds = np.empty(len(self.models) + 1)
        lds[0] = baseline_margin_log_density(x, *self.baseline_margin,
                                             df=self.cfg.baseline_df,
                                             inflate=self.cfg.baseline_inflate) \
            if self.pi_prior.baseline > 0 else -np.inf
        for j, m in enumerate(self.models):
            lds[j + 1] = m.sampler.policy_path_log_density(x)
        return decision_conditioned_probs(self.pi_prior, lds)

    def _baseline_sample(self, components: list[PredictiveSample],
                         pi_x: ModelProbabilities) -> PredictiveSample:
        cfg = self.cfg
        if pi_x.models.sum() <= 0:
            raise DecisionError("no model mass to anchor the fallback component")
        mean, cov = mixture_moments(components, pi_x.models)
        if np.isinf(cfg.baseline_df):
            scale = cfg.baseline_inflate * cov
        else:
            scale = cfg.baseline_inflate * cov * (cfg.baseline_df - 2.0) / cfg.baseline_df
        F = psd_factor(scale)
        draws = mean + (self._baseline_z @ F.T) / np.sqrt(self._baseline_u)[:, None]
        return PredictiveSample(outcomes=draws.reshape(cfg.n_baseline, 3, cfg.k),
                                model="baseline")

    def evaluate(self, x: np.ndarray, collect: bool = False):
        """Run the full pipeline at x; returns the expected utility, or the
        complete ScenarioEval when ``collect`` is set."""
        cfg = self.cfg
        x = np.asarray(x, dtype=float).reshape(cfg.k)
        if any(m.decision is None for m in self.models):
            raise DecisionError("model decisions must be solved before evaluation")
        pi_x = self.conditioned_probabilities(x)
        model_samples = [m.sampler.sample(x) for m in self.models]
        base = self._baseline_sample(model_samples, pi_x)
        components = [base] + model_samples
        decisions = [x] + [m.decision for m in self.models]
        scored = score_components(components, self.sspec, decisions, self.uspec.x_prev)
        ts = score_moments(scored, pi_x)

        fallback = False
        tv = TiltingVector(tau=np.zeros(self.sspec.dim), residual=0.0,
                           iterations=0, converged=True, x=x)
        eps_used = 0.0
        if cfg.tilt:
            support = score_support(scored)
            eps0 = self._frozen_epsilon if cfg.freeze_target else None
            tgt = target_score(ts, cfg.min_ratio, cfg.eps_cap, support, epsilon=eps0)
            if cfg.freeze_target and self._frozen_epsilon is None:
                self._frozen_epsilon = tgt.epsilon
            eps_used = tgt.epsilon
            solved = None
            for _ in range(cfg.eps_halvings + 1):
                try:
                    cand = solve_tilting(scored, pi_x, tgt.m_f, tol=cfg.tilt_tol,
                                         max_iter=cfg.tilt_max_iter)
                except InfeasibleTargetError:
                    cand = None
                if cand is not None and cand.converged:
                    solved = cand
                    break
                eps_used *= 0.5
                tgt = target_score(ts, cfg.min_ratio, cfg.eps_cap, support,
                                   epsilon=eps_used)
            if solved is None:
                fallback = True
                eps_used = 0.0
                tgt = target_score(ts, epsilon=0.0)
                log.warning("tilting infeasible after halvings at x=%s; tau=0", x)
            else:
                tv = solved
            m_f = tgt.m_f
        else:
            m_f = ts.m_p

        mix = tilted_mixture(scored, pi_x, tv.tau, samples=components)
        utils = [utility(c.inflation, c.growth, x, self.uspec) for c in components]
        eu = mix.expectation(utils)
        if not collect:
            return eu
        initial = float(sum(w * float(np.mean(u))
                            for w, u in zip(pi_x.weights, utils)))
        e_score = mix.expected_score(scored)
        c1 = ts.C_p[:, 0]
        c1n = c1 / max(np.linalg.norm(c1), 1e-300)
        return ScenarioEval(
            x=x, expected_utility=eu, initial_expected_utility=initial,
            pi_prior=self.pi_prior.weights.copy(), pi_x=pi_x.weights.copy(),
            pi_tilde=mix.pi_tilde.copy(), tau=tv.tau.copy(),
            tilt_residual=tv.residual, tilt_iterations=tv.iterations,
            tilt_converged=tv.converged and not fallback, tilt_fallback=fallback,
            epsilon=eps_used, ess_per_model=mix.ess_per_model.copy(),
            ess_overall=mix.ess_overall, m_p=ts.m_p.copy(), m_f=np.asarray(m_f).copy(),
            expected_score=e_score, dominant_improvement=float(c1n @ (e_score - ts.m_p)),
            samples=components, pooled_weights=mix.pooled_weights(), utilities=utils)


def bpds_expected_utility(x: np.ndarray, ctx: QuarterContext) -> float:
    """The decision-synthesis objective at candidate path x."""
    return float(ctx.evaluate(x))


def model_expected_utility_objective(handle: ModelHandle, uspec: UtilitySpec):
    def objective(x: np.ndarray) -> float:
        s = handle.sampler.sample(x)
        return float(np.mean(utility(s.inflation, s.growth, x, uspec)))
    return objective


def bma_objective(models: list[ModelHandle], weights: np.ndarray, uspec: UtilitySpec):
    """Mixture expected utility under marginal-likelihood weights: no fallback
    component, no tilt, no decision conditioning."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()

    def objective(x: np.ndarray) -> float:
        total = 0.0
        for wi, m in zip(w, models):
            s = m.sampler.sample(x)
            total += wi * float(np.mean(utility(s.inflation, s.growth, x, uspec)))
        return total
    return objective


def bma_optimal_path(models: list[ModelHandle], weights: np.ndarray,
                     uspec: UtilitySpec, bounds: PathBounds, seed,
                     swarm: SwarmConfig | None = None, budget: int = 200,
                     warm_start: np.ndarray | None = None,
                     optimizer: str = "swarm") -> tuple[np.ndarray, OptimizationReport]:
    """Optimize the model-averaging mixture objective.

    optimizer="swarm" runs the same global pipeline as the synthesis decision
    (fair comparator); "local" runs the identical trust-region path used for
    model-specific decisions.
    """
    objective = bma_objective(models, weights, uspec)
    k = uspec.k
    if optimizer == "local":
        return model_optimal_path(objective, k, bounds, budget, seed,
                                  warm_start=warm_start, x_prev=uspec.x_prev)
    cfg = swarm or SwarmConfig()
    return optimize_policy(objective, k, bounds, cfg, seed, warm_start=warm_start)
