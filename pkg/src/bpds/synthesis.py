"""Decision-calibrated model combination: staged model probabilities, the
fat-tailed fallback component, target-score construction, the exponential
tilting solver, and the tilted importance-weighted mixture.

Stages of the weight pipeline each quarter, all computed in log space:

  discounted + outcome-reweighted priors  ->  fixed fallback share inserted
  ->  conditioned on the candidate rate path  ->  exponentially tilted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog
from scipy.special import logsumexp
from scipy.stats import multivariate_t

from .forecast import PredictiveSample, psd_factor
from .scoring import ScoreSpec, score_vector

WEIGHT_FLOOR = 1e-300


class SynthesisError(ValueError):
    pass


class InfeasibleTargetError(SynthesisError):
    """Target expected score lies outside the sampled score support."""


@dataclass
class ModelProbabilities:
    """Weights over components 0..J (index 0 is the fallback baseline)."""

    weights: np.ndarray
    stage: str

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0):
            raise SynthesisError("weights must be a nonnegative vector")
        if abs(w.sum() - 1.0) > 1e-12:
            raise SynthesisError(f"weights must sum to 1, got {w.sum()!r}")
        self.weights = w

    @property
    def n_models(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def baseline(self) -> float:
        return float(self.weights[0])

    @property
    def models(self) -> np.ndarray:
        return self.weights[1:]

    @classmethod
    def uniform_models(cls, J: int, stage: str = "prior") -> "ModelProbabilities":
        return cls(np.concatenate([[0.0], np.full(J, 1.0 / J)]), stage)


def update_prior_probabilities(prev: ModelProbabilities, gamma: float,
                               one_step_logdens: np.ndarray,
                               realized_scores: np.ndarray | None = None,
                               prev_tau: np.ndarray | None = None) -> ModelProbabilities:
    """Power-discounted Bayes update with realized-outcome reweighting.

    pi_tj ∝ pi_{t-1,j}^gamma * exp(one-step log density_j) * exp(tau' s_j),
    over the J model components; the baseline share is reinserted separately.
    """
    if not 0.0 < gamma <= 1.0:
        raise SynthesisError("discount factor must lie in (0, 1]")
    lds = np.asarray(one_step_logdens, dtype=float)
    J = prev.n_models
    if lds.shape != (J,):
        raise SynthesisError(f"need {J} one-step log densities, got {lds.shape}")
    lw = gamma * np.log(np.maximum(prev.models, WEIGHT_FLOOR)) + lds
    if realized_scores is not None and prev_tau is not None:
        scores = np.asarray(realized_scores, dtype=float)
        if scores.shape[0] != J:
            raise SynthesisError("realized scores must have one row per model")
        lw = lw + scores @ np.asarray(prev_tau, dtype=float)
    norm = logsumexp(lw)
    if not np.isfinite(norm):
        raise SynthesisError("degenerate probability update: all weights vanished")
    w = np.exp(lw - norm)
    return ModelProbabilities(np.concatenate([[0.0], w / w.sum()]), stage="prior")


def insert_baseline(pi: ModelProbabilities, pi0: float) -> ModelProbabilities:
    """Give the fallback component a fixed share, rescaling the models."""
    if not 0.0 <= pi0 < 1.0:
        raise SynthesisError("baseline probability must lie in [0, 1)")
    if pi0 == 0.0:
        return ModelProbabilities(pi.weights.copy(), stage=pi.stage)
    models = pi.models / pi.models.sum()
    return ModelProbabilities(np.concatenate([[pi0], (1.0 - pi0) * models]), stage=pi.stage)


def decision_conditioned_probs(pi: ModelProbabilities,
                               path_logdens: np.ndarray) -> ModelProbabilities:
    """pi_j(x) ∝ pi_j * p_j(x): reweight by each component's own marginal
    predictive density of the candidate rate path (baseline included)."""
    lds = np.asarray(path_logdens, dtype=float)
    if lds.shape != pi.weights.shape:
        raise SynthesisError("need one path log-density per component (baseline first)")
    lw = np.log(np.maximum(pi.weights, WEIGHT_FLOOR)) + lds
    lw[pi.weights == 0.0] = -np.inf
    norm = logsumexp(lw)
    if not np.isfinite(norm):
        raise SynthesisError("decision conditioning underflowed for every component")
    w = np.exp(lw - norm)
    return ModelProbabilities(w / w.sum(), stage="decision-conditioned")


# ---------------------------------------------------------------------------
# Baseline component


def mixture_moments(components: list[PredictiveSample],
                    weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the weighted mixture of flattened outcome draws."""
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    means, covs = [], []
    for comp in components:
        flat = comp.outcomes.reshape(comp.n_draws, -1)
        if comp.log_weights is None:
            w = np.full(comp.n_draws, 1.0 / comp.n_draws)
        else:
            w = np.exp(comp.log_weights - logsumexp(comp.log_weights))
        mu = w @ flat
        dev = flat - mu
        means.append(mu)
        covs.append(dev.T @ (dev * w[:, None]))
    mean = sum(w * m for w, m in zip(weights, means))
    cov = sum(w * (c + np.outer(m - mean, m - mean))
              for w, m, c in zip(weights, means, covs))
    return mean, 0.5 * (cov + cov.T)


def baseline_predictive(components: list[PredictiveSample], pi: ModelProbabilities,
                        N: int, seed, df: float = 10.0,
                        inflate: float = 2.0) -> PredictiveSample:
    """Fat-tailed fallback: multivariate T located at the model mixture's mean
    with covariance inflated by ``inflate`` (baseline weight treated as 0)."""
    if not components:
        raise SynthesisError("need at least one model component")
    if pi.models.sum() <= 0:
        raise SynthesisError("model weights are all zero; no mixture to anchor the baseline")
    mean, cov = mixture_moments(components, pi.models)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = components[0].horizon
    if np.isinf(df):
        scale = inflate * cov
        u = np.ones(N)
    else:
        if df <= 2:
            raise SynthesisError("baseline degrees of freedom must exceed 2")
        scale = inflate * cov * (df - 2.0) / df
        u = rng.chisquare(df, size=N) / df
    F = psd_factor(scale)
    z = rng.standard_normal((N, F.shape[1]))
    draws = mean + (z @ F.T) / np.sqrt(u)[:, None]
    return PredictiveSample(outcomes=draws.reshape(N, 3, k), model="baseline")


def baseline_margin_log_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray,
                                df: float = 10.0, inflate: float = 2.0) -> float:
    """Log density of the baseline's fat-tailed rate-path margin at x.

    ``cov`` is a covariance; the T scale matrix absorbs the df correction so
    the implied covariance is inflate * cov.
    """
    scale = inflate * np.asarray(cov, dtype=float) * (df - 2.0) / df
    scale = 0.5 * (scale + scale.T) + 1e-12 * np.eye(scale.shape[0])
    return float(multivariate_t(loc=mean, shape=scale, df=df).logpdf(np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# Scores of sampled outcomes, mixture score moments, target construction


@dataclass
class ScoredModel:
    """Per-draw score vectors for one component plus base draw log-weights."""

    scores: np.ndarray       # (N, 2k)
    log_weights: np.ndarray  # (N,), normalized to logsumexp == 0

    def __post_init__(self) -> None:
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=float))
        lw = np.asarray(self.log_weights, dtype=float)
        self.log_weights = lw - logsumexp(lw)

    @property
    def n_draws(self) -> int:
        return self.scores.shape[0]

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        w = np.exp(self.log_weights)
        mu = w @ self.scores
        dev = self.scores - mu
        return mu, dev.T @ (dev * w[:, None])


def score_components(components: list[PredictiveSample], spec: ScoreSpec,
                     decisions: list[np.ndarray], x_prev: float) -> list[ScoredModel]:
    """Score every component's draws at that component's own decision path."""
    if len(components) != len(decisions):
        raise SynthesisError("need one decision path per component")
    out = []
    for comp, xj in zip(components, decisions):
        s = score_vector(comp.inflation, comp.growth, np.asarray(xj, dtype=float),
                         spec, x_prev)
        lw = comp.log_weights if comp.log_weights is not None \
            else np.full(comp.n_draws, -np.log(comp.n_draws))
        out.append(ScoredModel(scores=s, log_weights=lw))
    return out


@dataclass
class TargetScore:
    """Initial score moments and (once set) the improvement target."""

    m_p: np.ndarray                    # (2k,)
    V_p: np.ndarray                    # (2k, 2k)
    C_p: np.ndarray                    # scaled eigenvectors, C_p C_p' = V_p
    eigenvalues: np.ndarray            # descending
    epsilon: float | None = None
    epsilon_vec: np.ndarray | None = None
    m_f: np.ndarray | None = None


def score_moments(scored: list[ScoredModel], pi: ModelProbabilities) -> TargetScore:
    """Mixture mean/covariance of the score vector and its eigen factor.

    The dominant eigen column of C_p is sign-normalized so its entries sum
    positive (targets then improve on the initial expected score).
    """
    if len(scored) != pi.weights.shape[0]:
        raise SynthesisError("need one scored component per probability entry")
    dim = scored[0].scores.shape[1]
    m_p = np.zeros(dim)
    parts = [sm.moments() for sm in scored]
    for w, (mu, _) in zip(pi.weights, parts):
        m_p += w * mu
    V_p = np.zeros((dim, dim))
    for w, (mu, cov) in zip(pi.weights, parts):
        d = mu - m_p
        V_p += w * (cov + np.outer(d, d))
    V_p = 0.5 * (V_p + V_p.T)
    vals, vecs = np.linalg.eigh(V_p)
    vals = np.maximum(vals[::-1], 0.0)
    vecs = vecs[:, ::-1]
    if vecs[:, 0].sum() < 0:
        vecs = vecs.copy()
        vecs[:, 0] = -vecs[:, 0]
    C_p = vecs * np.sqrt(vals)
    return TargetScore(m_p=m_p, V_p=V_p, C_p=C_p, eigenvalues=vals)


def target_score(ts: TargetScore, min_ratio: float = 0.75, eps_cap: float = 0.25,
                 support: tuple[np.ndarray, np.ndarray] | None = None,
                 epsilon: float | None = None) -> TargetScore:
    """Set the target m_f = m_p + eps * (dominant eigen column).

    eps solves min_h m_f,h / m_p,h = min_ratio when the dominant direction
    decreases some coordinate; an absolute cap applies in all cases. The
    target is clamped into (0, 2) and strictly inside the sampled per-
    coordinate score range when ``support`` is supplied.
    """
    if np.any(ts.m_p <= 0):
        raise SynthesisError("initial expected scores must be positive")
    c1 = ts.C_p[:, 0]
    if epsilon is None:
        neg = c1 < 0
        if neg.any():
            eps = (1.0 - min_ratio) * np.min(ts.m_p[neg] / (-c1[neg]))
            eps = min(float(eps), eps_cap)
        else:
            eps = eps_cap
    else:
        eps = float(epsilon)
    m_f = ts.m_p + eps * c1
    m_f = np.clip(m_f, 1e-9, 2.0 - 1e-9)
    if support is not None:
        lo, hi = support
        span = np.maximum(hi - lo, 1e-12)
        m_f = np.clip(m_f, lo + 0.01 * span, hi - 0.01 * span)
    vec = np.zeros_like(ts.m_p)
    vec[0] = eps
    return TargetScore(m_p=ts.m_p, V_p=ts.V_p, C_p=ts.C_p, eigenvalues=ts.eigenvalues,
                       epsilon=eps, epsilon_vec=vec, m_f=m_f)


def score_support(scored: list[ScoredModel]) -> tuple[np.ndarray, np.ndarray]:
    """Pooled per-coordinate (min, max) of the sampled scores."""
    stacked = np.vstack([sm.scores for sm in scored])
    return stacked.min(axis=0), stacked.max(axis=0)


def in_convex_hull(points: np.ndarray, target: np.ndarray, tol: float = 1e-9) -> bool:
    """Exact hull membership via an LP feasibility check (test utility)."""
    N, d = points.shape
    A_eq = np.vstack([points.T, np.ones((1, N))])
    b_eq = np.concatenate([np.asarray(target, dtype=float), [1.0]])
    res = linprog(np.zeros(N), A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs", options={"presolve": True})
    return bool(res.status == 0 and res.success)


# ---------------------------------------------------------------------------
# Tilting solver


@dataclass
class TiltingVector:
    """Exponential tilt tau with its convergence report."""

    tau: np.ndarray
    residual: float
    iterations: int
    converged: bool
    x: np.ndarray | None = None


def solve_tilting(scored: list[ScoredModel], pi: ModelProbabilities, m_f: np.ndarray,
                  tol: float = 1e-3, max_iter: int = 200) -> TiltingVector:
    """Solve E_f[s] = m_f for the tilt tau by damped Newton on the convex dual
    phi(tau) = log sum_j pi_j E_j[exp(tau's)] - tau'm_f.

    The gradient is E_f[s] - m_f and the Hessian is Cov_f(s), so each step is
    a regularized Newton solve with Armijo backtracking; residuals are in
    score units (sup norm). A target outside the sampled support raises
    InfeasibleTargetError; non-convergence returns the best tau found with
    the report flagged.
    """
    m_f = np.asarray(m_f, dtype=float)
    dim = m_f.shape[0]
    lo, hi = score_support(scored)
    span = hi - lo
    movable = span > 1e-12
    if np.any((m_f <= lo) & movable) or np.any((m_f >= hi) & movable):
        raise InfeasibleTargetError("target score outside sampled score support")
    if np.any(np.abs(m_f[~movable] - lo[~movable]) > max(tol, 1e-9)):
        raise InfeasibleTargetError("target moves a constant score coordinate")

    S = np.vstack([sm.scores for sm in scored])
    base = np.concatenate([
        np.log(max(w, WEIGHT_FLOOR)) + sm.log_weights
        for w, sm in zip(pi.weights, scored)])

    def moments(tau: np.ndarray):
        lw = base + S @ tau
        norm = logsumexp(lw)
        w = np.exp(lw - norm)
        mean = w @ S
        dev = S - mean
        cov = dev.T @ (dev * w[:, None])
        return norm, mean, cov

    def phi(tau: np.ndarray) -> float:
        return float(logsumexp(base + S @ tau) - tau @ m_f)

    tau = np.zeros(dim)
    best = (np.inf, tau.copy(), 0)
    for it in range(1, max_iter + 1):
        norm, mean, cov = moments(tau)
        grad = mean - m_f
        resid = float(np.max(np.abs(grad)))
        if resid < best[0]:
            best = (resid, tau.copy(), it)
        if resid <= tol:
            return TiltingVector(tau=tau, residual=resid, iterations=it, converged=True)
        step = _newton_direction(cov, grad)
        phi0 = float(norm - tau @ m_f)
        slope = float(grad @ step)
        alpha = 1.0
        for _ in range(40):
            if phi(tau + alpha * step) <= phi0 + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break  # no descent: give up with best-so-far
        tau = tau + alpha * step
    norm, mean, _ = moments(tau)
    resid = float(np.max(np.abs(mean - m_f)))
    if resid < best[0]:
        best = (resid, tau.copy(), max_iter)
    return TiltingVector(tau=best[1], residual=best[0], iterations=max_iter, converged=False)


def _newton_direction(cov: np.ndarray, grad: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    jitter = max(1e-12, 1e-10 * float(np.trace(cov)) / dim)
    for _ in range(8):
        try:
            c = cho_factor(cov + jitter * np.eye(dim), lower=True)
            return -cho_solve(c, grad)
        except np.linalg.LinAlgError:
            jitter *= 100.0
    gn = np.linalg.norm(grad)
    return -grad / gn if gn > 0 else -grad


# ---------------------------------------------------------------------------
# Tilted mixture


@dataclass
class BPDSMixture:
    """Importance-weighted tilted mixture with its diagnostics."""

    pi_tilde: np.ndarray                 # (J+1,)
    log_a: np.ndarray                    # per-component normalizers log a_j
    log_k: float
    weights: list[np.ndarray]            # per-component normalized draw weights
    ess_per_model: np.ndarray
    ess_overall: float
    tau: np.ndarray
    samples: list[PredictiveSample] = field(default_factory=list)

    def expectation(self, values: list[np.ndarray]) -> float:
        """E_f of a per-draw quantity supplied per component."""
        total = 0.0
        for w_model, w_draw, v in zip(self.pi_tilde, self.weights, values):
            total += w_model * float(w_draw @ np.asarray(v, dtype=float))
        return total

    def expected_score(self, scored: list[ScoredModel]) -> np.ndarray:
        out = np.zeros(scored[0].scores.shape[1])
        for w_model, w_draw, sm in zip(self.pi_tilde, self.weights, scored):
            out += w_model * (w_draw @ sm.scores)
        return out

    def pooled_weights(self) -> list[np.ndarray]:
        """Per-component draw weights that sum to 1 over the pooled mixture."""
        return [w_model * w_draw for w_model, w_draw in zip(self.pi_tilde, self.weights)]


def tilted_mixture(scored: list[ScoredModel], pi: ModelProbabilities,
                   tau: np.ndarray,
                   samples: list[PredictiveSample] | None = None) -> BPDSMixture:
    """Apply exp(tau's) importance weights within each component and fold the
    normalizers a_j into the component weights (pi-tilde ∝ pi_j a_j)."""
    tau = np.asarray(tau, dtype=float)
    log_a = np.empty(len(scored))
    weights = []
    ess = np.empty(len(scored))
    for j, sm in enumerate(scored):
        lw = sm.log_weights + sm.scores @ tau
        norm = logsumexp(lw)
        log_a[j] = norm
        w = np.exp(lw - norm)
        weights.append(w)
        ess[j] = 1.0 / (w @ w) / sm.n_draws
    lp = np.log(np.maximum(pi.weights, WEIGHT_FLOOR)) + log_a
    lp[pi.weights == 0.0] = -np.inf
    log_norm = logsumexp(lp)
    pi_tilde = np.exp(lp - log_norm)
    pi_tilde = pi_tilde / pi_tilde.sum()
    n_total = sum(sm.n_draws for sm in scored)
    sq = sum(float(wm ** 2 * (w @ w)) for wm, w in zip(pi_tilde, weights))
    ess_overall = 1.0 / sq / n_total
    return BPDSMixture(pi_tilde=pi_tilde, log_a=log_a, log_k=float(-log_norm),
                       weights=weights, ess_per_model=ess,
                       ess_overall=float(ess_overall), tau=tau,
                       samples=list(samples) if samples else [])
