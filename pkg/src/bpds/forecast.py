"""Conditional path forecasting: stacked h-step system, Gaussian path moments,
exact/soft linear restrictions, structural-shock pinning, path sampling, and
predictive densities for policy paths and one-step outcomes.

Stacked path vectors order coordinates as (step, variable): index i*n + v for
forecast step i (0-based) and variable v.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.stats import multivariate_t

from .bvar import (ParameterDraws, SignMatrix, StructuralDraw, VARPosterior,
                   identify, sample_parameters)

log = logging.getLogger(__name__)

LOGDENS_FLOOR = -1e12
EIG_FLOOR = 1e-12


class ForecastError(ValueError):
    pass


class IdentificationError(RuntimeError):
    """No sign-consistent rotation found within the retry budget."""


@dataclass
class StackedSystem:
    """H y_path = c + e, e ~ N(0, I): the VAR recursion over h future steps."""

    H: np.ndarray   # (n*h, n*h), block lower-banded with A0 diagonal blocks
    c: np.ndarray   # (n*h,)
    n: int
    p: int
    h: int


@dataclass
class PathGaussian:
    mean: np.ndarray   # (n*h,)
    cov: np.ndarray    # (n*h, n*h), symmetric PSD

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        F = psd_factor(self.cov)
        z = rng.standard_normal((size, F.shape[1]))
        return self.mean + z @ F.T


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Eigen factor F with F F' ≈ cov, eigenvalues floored at EIG_FLOOR."""
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.maximum(w, EIG_FLOOR)
    return v * np.sqrt(w)


@dataclass
class ConstraintSet:
    """Linear path restrictions R y ~ N(r, omega); omega = 0 means exact."""

    R: np.ndarray
    r: np.ndarray
    omega: np.ndarray
    validate: bool = True

    def __post_init__(self) -> None:
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.r = np.asarray(self.r, dtype=float).reshape(-1)
        self.omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        k = self.R.shape[0]
        if self.r.shape[0] != k or self.omega.shape != (k, k):
            raise ForecastError("constraint dimensions disagree")
        if self.validate and np.linalg.matrix_rank(self.R) < k:
            raise ForecastError("constraint matrix is row-rank deficient")


@dataclass
class ShockConstraint:
    """Pins selected structural shocks: W e ~ N(w, psi)."""

    W: np.ndarray
    w: np.ndarray
    psi: np.ndarray


def build_stacked_system(draw: StructuralDraw, history: np.ndarray, h: int) -> StackedSystem:
    """Lay out H and c for the structural VAR over h steps.

    ``history`` holds the last p observations, oldest first.
    """
    if h < 1:
        raise ForecastError("horizon must be >= 1")
    n = draw.a0.shape[0]
    p = draw.lags.shape[0]
    history = np.atleast_2d(np.asarray(history, dtype=float))
    if history.shape != (p, n):
        raise ForecastError(f"history must be ({p}, {n}), got {history.shape}")
    H = np.zeros((n * h, n * h))
    c = np.zeros(n * h)
    for s in range(h):  # forecast step s+1
        H[s * n:(s + 1) * n, s * n:(s + 1) * n] = draw.a0
        for j in range(1, min(s, p) + 1):
            H[s * n:(s + 1) * n, (s - j) * n:(s - j + 1) * n] = -draw.lags[j - 1]
        block = draw.intercept.copy()
        for j in range(s + 1, p + 1):
            block += draw.lags[j - 1] @ history[p - 1 - (j - s - 1)]
        c[s * n:(s + 1) * n] = block
    return StackedSystem(H=H, c=c, n=n, p=p, h=h)


def unconditional_path(sys: StackedSystem) -> PathGaussian:
    """m = H^{-1} c, M = (H'H)^{-1}, via one solve of H (no normal equations)."""
    try:
        Hinv = np.linalg.solve(sys.H, np.eye(sys.H.shape[0]))
    except np.linalg.LinAlgError as e:
        raise ForecastError(f"singular stacked system: {e}") from e
    m = Hinv @ sys.c
    M = Hinv @ Hinv.T
    return PathGaussian(mean=m, cov=0.5 * (M + M.T))


def condition_path(path: PathGaussian, cons: ConstraintSet) -> PathGaussian:
    """Update N(m, M) by the restriction R y ~ N(r, omega).

    m* = m + A(r - Rm), M* = M + A(omega - RMR')A' with A = MR'(RMR')^{-1}.
    The restricted margin becomes exactly N(r, omega).
    """
    RM = cons.R @ path.cov
    S = RM @ cons.R.T
    try:
        Sc = cho_factor(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError as e:
        raise ForecastError(f"singular constraint covariance RMR': {e}") from e
    A = cho_solve(Sc, RM).T
    m_star = path.mean + A @ (cons.r - cons.R @ path.mean)
    M_star = path.cov + A @ (cons.omega - S) @ A.T
    return PathGaussian(mean=m_star, cov=0.5 * (M_star + M_star.T))


def rate_coordinates(n: int, h: int, rate_index: int) -> np.ndarray:
    return np.arange(h) * n + rate_index


def assemble_policy_constraints(path: PathGaussian, sys: StackedSystem, x: np.ndarray,
                                soft: bool, rate_index: int, policy_shock: int) -> ConstraintSet:
    """Stack the candidate-rate-path restriction with zero-mean/unit-variance
    pins on every non-policy structural shock.

    Soft mode keeps the rate-path margin at its unconditional covariance
    (omega_0 = R0 M R0'); hard mode forces it to the path exactly.
    """
    n, h = sys.n, sys.h
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != h:
        raise ForecastError(f"policy path has {x.shape[0]} entries, horizon is {h}")
    coords = rate_coordinates(n, h, rate_index)
    R0 = np.zeros((h, n * h))
    R0[np.arange(h), coords] = 1.0
    other = [s for s in range(n) if s != policy_shock]
    W = np.zeros((len(other) * h, n * h))
    for i, s in enumerate(other):
        W[i * h + np.arange(h), np.arange(h) * n + s] = 1.0
    omega0 = R0 @ path.cov @ R0.T if soft else np.zeros((h, h))
    R = np.vstack([R0, W @ sys.H])
    r = np.concatenate([x, W @ sys.c])
    omega = np.zeros((R.shape[0], R.shape[0]))
    omega[:h, :h] = omega0
    omega[h:, h:] = np.eye(W.shape[0])
    return ConstraintSet(R=R, r=r, omega=omega, validate=False)


# ---------------------------------------------------------------------------
# Predictive samples and the per-quarter conditional sampler


@dataclass
class PredictiveSample:
    """Monte Carlo paths of the tracked outcomes under one model.

    ``outcomes`` is (N, 3, k): inflation, growth, and the policy rate per
    horizon, all in annualized %. ``log_weights`` are base draw log-weights
    (None = uniform); normalization happens wherever they are consumed.
    """

    outcomes: np.ndarray
    model: str
    x: np.ndarray | None = None
    log_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.outcomes.ndim != 3 or self.outcomes.shape[1] != 3:
            raise ForecastError("outcomes must be (N, 3, k)")

    @property
    def n_draws(self) -> int:
        return self.outcomes.shape[0]

    @property
    def horizon(self) -> int:
        return self.outcomes.shape[2]

    @property
    def inflation(self) -> np.ndarray:
        return self.outcomes[:, 0, :]

    @property
    def growth(self) -> np.ndarray:
        return self.outcomes[:, 1, :]

    @property
    def rate(self) -> np.ndarray:
        return self.outcomes[:, 2, :]


def _outcome_map(post: VARPosterior, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Affine map (O, o0) taking a stacked path to (inflation, growth, rate) x h."""
    spec = post.spec
    n = spec.n
    O = np.zeros((3 * h, n * h))
    o0 = np.zeros(3 * h)
    pairs = [(0, spec.inflation_index), (1, spec.growth_index)]
    for row_block, col in pairs:
        for s in range(h):
            row = row_block * h + s
            if spec.diff_outcomes:
                O[row, s * n + col] = 4.0
                if s == 0:
                    o0[row] = -4.0 * post.tail[-1, col]
                else:
                    O[row, (s - 1) * n + col] = -4.0
            else:
                O[row, s * n + col] = 1.0
    for s in range(h):
        O[2 * h + s, s * n + spec.rate_index] = 1.0
    return O, o0


class ConditionalSampler:
    """Per-quarter, per-model conditional forecasting engine.

    Parameter and identification uncertainty are drawn once; the soft policy
    conditioning is affine in the candidate path, so each draw reduces to
    outcomes(x) = base + P @ x with fixed innovations. This keeps every
    candidate-path evaluation cheap and gives common random numbers across
    the policy optimization.
    """

    def __init__(self, post: VARPosterior, signs: SignMatrix, h: int, n_draws: int,
                 seed, soft: bool = True, max_tries: int = 1000,
                 retry_factor: int = 50, label: str = "model",
                 max_amplification: float = 25.0):
        self.post = post
        self.signs = signs
        self.h = h
        self.n_draws = n_draws
        self.soft = soft
        self.label = label
        self.max_amplification = max_amplification
        spec = post.spec
        n = spec.n
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rng_param, rng_path = [np.random.default_rng(s) for s in ss.spawn(2)]

        O, o0 = _outcome_map(post, h)
        coords = rate_coordinates(n, h, spec.rate_index)
        nh = n * h
        self.base = np.empty((n_draws, 3 * h))
        self.P = np.empty((n_draws, 3 * h, h))
        self.margin_mean = np.empty((n_draws, h))
        self.margin_cov = np.empty((n_draws, h, h))
        self._margin_Linv = np.empty((n_draws, h, h))
        self._margin_logdet = np.empty(n_draws)
        z = rng_path.standard_normal((n_draws, nh))

        kept = 0
        attempts = 0
        self.identification_tries = 0
        while kept < n_draws:
            need = n_draws - kept
            params: ParameterDraws = sample_parameters(post, need, rng_param)
            for i in range(need):
                sd = identify(params[i], signs, max_tries=max_tries, seed=rng_param)
                if sd is None:
                    continue
                self.identification_tries += sd.tries
                if self._precompute_draw(sd, kept, z[kept], O, o0, coords):
                    kept += 1
            attempts += need
            if kept < n_draws and attempts >= retry_factor * n_draws:
                raise IdentificationError(
                    f"{label}: {kept}/{n_draws} draws identified and conditionable "
                    f"after {attempts} parameter draws")

    def _precompute_draw(self, sd: StructuralDraw, i: int, z: np.ndarray,
                         O: np.ndarray, o0: np.ndarray, coords: np.ndarray) -> bool:
        """Cache the affine map of one accepted draw; False rejects the draw.

        Rejected draws have ill-posed conditioning: rotations that leave the
        policy shock with (numerically) no leverage on the rate path, or whose
        conditioning matrix amplifies the candidate path into outcomes beyond
        ``max_amplification`` (a magnitude restriction on the policy shock,
        composed with the sign restrictions).
        """
        spec = self.post.spec
        h = self.h
        sys = build_stacked_system(sd, self.post.tail, h)
        path = unconditional_path(sys)
        cons = assemble_policy_constraints(path, sys, np.zeros(h), self.soft,
                                           spec.rate_index, sd.policy_shock)
        RM = cons.R @ path.cov
        S = RM @ cons.R.T
        try:
            Sc = cho_factor(0.5 * (S + S.T), lower=True)
        except np.linalg.LinAlgError:
            return False
        diag = np.diag(Sc[0])
        if np.min(diag) < 1e-7 * np.max(diag):
            return False
        A = cho_solve(Sc, RM).T
        if np.linalg.norm(A[:, :h], 2) > self.max_amplification:
            return False
        M_star = path.cov + A @ (cons.omega - S) @ A.T
        F = psd_factor(M_star)
        const = path.mean + A @ (cons.r - cons.R @ path.mean) + F @ z
        self.base[i] = O @ const + o0
        self.P[i] = O @ A[:, :h]
        mx = path.mean[coords]
        Mx = path.cov[np.ix_(coords, coords)]
        self.margin_mean[i] = mx
        self.margin_cov[i] = Mx
        L = cholesky(Mx + 1e-12 * np.eye(h), lower=True)
        self._margin_Linv[i] = solve_triangular(L, np.eye(h), lower=True)
        self._margin_logdet[i] = 2.0 * np.sum(np.log(np.diag(L)))
        return True

    def sample(self, x: np.ndarray) -> PredictiveSample:
        """Conditional predictive paths at candidate rate path x (CRN across x)."""
        x = np.asarray(x, dtype=float).reshape(self.h)
        flat = self.base + np.einsum("nij,j->ni", self.P, x)
        return PredictiveSample(outcomes=flat.reshape(self.n_draws, 3, self.h),
                                model=self.label, x=x.copy())

    def policy_path_log_density(self, x: np.ndarray) -> float:
        """log (1/N) sum_i N(x; margin_i) over the unconditional rate margins."""
        x = np.asarray(x, dtype=float).reshape(self.h)
        d = x[None, :] - self.margin_mean
        u = np.einsum("nij,nj->ni", self._margin_Linv, d)
        lp = -0.5 * np.einsum("ni,ni->n", u, u) - 0.5 * self._margin_logdet \
            - 0.5 * self.h * np.log(2.0 * np.pi)
        val = float(_logsumexp(lp) - np.log(self.n_draws))
        if not np.isfinite(val) or val < LOGDENS_FLOOR:
            log.warning("%s: policy-path density underflow at x=%s", self.label, x)
            return LOGDENS_FLOOR
        return val

    def unconditional_policy_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mixture mean/covariance of the unconditional rate-path forecast."""
        mean = self.margin_mean.mean(axis=0)
        dev = self.margin_mean - mean
        cov = self.margin_cov.mean(axis=0) + dev.T @ dev / self.n_draws
        return mean, 0.5 * (cov + cov.T)


def _logsumexp(a: np.ndarray) -> float:
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))


def sample_conditional_paths(post: VARPosterior, signs: SignMatrix, x: np.ndarray,
                             N: int, h: int, seed, soft: bool = True) -> PredictiveSample:
    """Draw N conditional outcome paths at x (one path per parameter draw)."""
    if N < 1:
        raise ForecastError("need at least one draw")
    return ConditionalSampler(post, signs, h, N, seed, soft=soft).sample(x)


def policy_path_log_density(post: VARPosterior, signs: SignMatrix, x: np.ndarray,
                            N: int, h: int, seed) -> float:
    """Marginal predictive log density of the rate path x under the model."""
    return ConditionalSampler(post, signs, h, N, seed).policy_path_log_density(x)


# ---------------------------------------------------------------------------
# One-step-ahead predictive density on the common outcome triple


def one_step_predictive(post: VARPosterior) -> tuple[float, np.ndarray, np.ndarray]:
    """(df, location, scale) of the exact posterior-predictive multivariate t
    for the next observation vector."""
    spec = post.spec
    x = np.ones(spec.n_coef)
    for lag in range(1, spec.p + 1):
        x[1 + (lag - 1) * spec.n: 1 + lag * spec.n] = post.tail[spec.p - lag]
    df = post.resid_df - spec.n + 1.0
    loc = post.coef_mean.T @ x
    scale = post.resid_scale * (1.0 + x @ post.coef_cov @ x) / df
    return df, loc, 0.5 * (scale + scale.T)


def one_step_log_density(post: VARPosterior, z_observed: np.ndarray,
                         components: tuple[str, ...] = ("inflation", "growth", "rate"),
                         ) -> float:
    """Exact log predictive density of the realized common outcomes one step
    ahead, marginalized from the model's full predictive.

    Affine images of a multivariate t stay multivariate t with the same df,
    so the closed form is exact (the infinite-draw limit of averaging the
    per-parameter Gaussian densities). ``components`` names the tracked
    outcomes z covers, in order.
    """
    spec = post.spec
    z = np.asarray(z_observed, dtype=float).reshape(len(components))
    df, loc, scale = one_step_predictive(post)
    cols = {"inflation": spec.inflation_index, "growth": spec.growth_index,
            "rate": spec.rate_index}
    A = np.zeros((len(components), spec.n))
    b = np.zeros(len(components))
    for row, name in enumerate(components):
        col = cols[name]
        if name != "rate" and spec.diff_outcomes:
            A[row, col] = 4.0
            b[row] = -4.0 * post.tail[-1, col]
        else:
            A[row, col] = 1.0
    locm = A @ loc + b
    scalem = A @ scale @ A.T
    val = float(multivariate_t(loc=locm, shape=0.5 * (scalem + scalem.T), df=df).logpdf(z))
    if not np.isfinite(val) or val < LOGDENS_FLOOR:
        log.warning("one-step predictive underflow at z=%s", z)
        return LOGDENS_FLOOR
    return val
