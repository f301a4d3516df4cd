"""Conjugate Bayesian VAR: Minnesota-style prior, closed-form posterior and
marginal likelihood, posterior simulation, sign-restriction identification.

Model: y_t = a + A_1 y_{t-1} + ... + A_p y_{t-p} + u_t, u_t ~ N(0, Sigma).
Stacked as Y = X B + U with X rows (1, y_{t-1}', ..., y_{t-p}').
Prior: Sigma ~ IW(nu0, S0), vec(B) | Sigma ~ N(vec(B0), Sigma ⊗ V0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import multigammaln

from .data_io import ModelDataset


class FitError(ValueError):
    """Raised for ill-posed estimation inputs."""


@dataclass(frozen=True)
class VARSpec:
    """Variable layout of one model: counts, lag order, tracked-outcome columns.

    ``inflation_index`` / ``growth_index`` point at the (log-level) price and
    output columns; annualized rates are 4x first differences of those columns
    unless ``diff_outcomes`` is False, in which case the columns are already
    rates.
    """

    n: int
    p: int
    names: tuple[str, ...]
    rate_index: int
    inflation_index: int
    growth_index: int
    diff_outcomes: bool = True

    def __post_init__(self) -> None:
        if self.p < 1:
            raise FitError("lag order p must be >= 1")
        idx = (self.rate_index, self.inflation_index, self.growth_index)
        if any(i < 0 or i >= self.n for i in idx):
            raise FitError("rate/inflation/growth indices out of range")
        if self.n >= 3 and len(set(idx)) != 3:
            raise FitError("rate/inflation/growth indices must be distinct")
        if len(self.names) != self.n:
            raise FitError("names length must equal n")

    @property
    def n_coef(self) -> int:
        return 1 + self.n * self.p


@dataclass(frozen=True)
class ConjugatePrior:
    """Minnesota shrinkage hyperparameters for the natural-conjugate family.

    overall: tightness on own first-lag coefficients; cross: decay exponent
    applied across lags (variance ∝ overall²/lag^(2*cross)); intercept_scale:
    prior sd of intercepts; resid_scale multiplies the data-driven residual
    variance guesses in the inverse-Wishart scale; own_mean is the prior mean
    on each variable's first own lag (1 = random walk).
    """

    overall: float = 0.2
    cross: float = 1.0
    intercept_scale: float = 100.0
    resid_scale: float = 1.0
    own_mean: float = 1.0

    def __post_init__(self) -> None:
        for name in ("overall", "cross", "intercept_scale", "resid_scale"):
            if getattr(self, name) <= 0:
                raise FitError(f"prior hyperparameter {name} must be > 0")


def default_prior_grid() -> list[ConjugatePrior]:
    """25-point log-spaced grid: overall in [0.01, 1] x cross in [0.1, 1]."""
    grid = []
    for overall in np.geomspace(0.01, 1.0, 5):
        for cross in np.geomspace(0.1, 1.0, 5):
            grid.append(ConjugatePrior(overall=float(overall), cross=float(cross)))
    return grid


@dataclass
class VARPosterior:
    """Closed-form MNIW posterior plus the data tail needed for forecasting."""

    spec: VARSpec
    prior: ConjugatePrior
    coef_mean: np.ndarray     # B_n, (m, n)
    coef_cov: np.ndarray      # V_n, (m, m)
    resid_scale: np.ndarray   # S_n, (n, n)
    resid_df: float           # nu_n
    n_obs: int
    tail: np.ndarray          # last p observations, oldest first, (p, n)
    sigma_hat: np.ndarray     # per-variable residual sd guesses used in the prior

    def coef_sd(self) -> np.ndarray:
        """Posterior sd of each coefficient, (m, n)."""
        denom = self.resid_df - self.spec.n - 1
        return np.sqrt(np.outer(np.diag(self.coef_cov), np.diag(self.resid_scale)) / denom)


def _design(data: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    T, n = data.shape
    Y = data[p:]
    X = np.ones((T - p, 1 + n * p))
    for lag in range(1, p + 1):
        X[:, 1 + (lag - 1) * n: 1 + lag * n] = data[p - lag: T - lag]
    return Y, X


def _ar_resid_sd(data: np.ndarray, p: int) -> np.ndarray:
    """Univariate AR(p) OLS residual sd per column (Minnesota scale guesses)."""
    T, n = data.shape
    out = np.empty(n)
    for j in range(n):
        y = data[p:, j]
        X = np.ones((T - p, p + 1))
        for lag in range(1, p + 1):
            X[:, lag] = data[p - lag: T - lag, j]
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        dof = max(len(y) - (p + 1), 1)
        out[j] = np.sqrt(r @ r / dof)
    floor = 1e-6 * max(1.0, float(np.max(out, initial=0.0)))
    return np.maximum(out, floor)


def _prior_moments(spec: VARSpec, prior: ConjugatePrior,
                   sigma_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """(B0, v0_diag, S0, nu0) for the Minnesota natural-conjugate prior."""
    n, p, m = spec.n, spec.p, spec.n_coef
    B0 = np.zeros((m, n))
    for j in range(n):
        B0[1 + j, j] = prior.own_mean
    v0 = np.empty(m)
    v0[0] = prior.intercept_scale ** 2
    for lag in range(1, p + 1):
        for j in range(n):
            v0[1 + (lag - 1) * n + j] = (prior.overall ** 2
                                         / lag ** (2.0 * prior.cross)
                                         / sigma_hat[j] ** 2)
    nu0 = n + 2.0
    S0 = prior.resid_scale * np.diag(sigma_hat ** 2) * (nu0 - n - 1.0)
    return B0, v0, S0, nu0


def fit(data: ModelDataset | np.ndarray, spec: VARSpec, prior: ConjugatePrior,
        sigma_hat: np.ndarray | None = None) -> VARPosterior:
    """Exact conjugate posterior update (deterministic).

    ``sigma_hat`` pins the prior's per-variable scale guesses (otherwise they
    come from univariate AR fits on the data at hand).
    """
    raw = data.data if isinstance(data, ModelDataset) else np.asarray(data, dtype=float)
    T, n = raw.shape
    if n != spec.n:
        raise FitError(f"data has {n} columns, spec declares {spec.n}")
    if T - spec.p < 1:
        raise FitError(f"need at least {spec.p + 1} rows, got {T}")
    Y, X = _design(raw, spec.p)
    if sigma_hat is None:
        sigma_hat = _ar_resid_sd(raw, spec.p)
    else:
        sigma_hat = np.asarray(sigma_hat, dtype=float).reshape(n)
    B0, v0, S0, nu0 = _prior_moments(spec, prior, sigma_hat)

    K = X.T @ X
    K[np.diag_indices_from(K)] += 1.0 / v0
    try:
        Kc = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as e:
        raise FitError(f"rank-deficient regressor matrix: {e}") from e
    rhs = X.T @ Y + (B0.T / v0).T
    Bn = cho_solve(Kc, rhs)
    Vn = cho_solve(Kc, np.eye(K.shape[0]))
    Vn = 0.5 * (Vn + Vn.T)
    resid = Y - X @ Bn
    dB = Bn - B0
    Sn = S0 + resid.T @ resid + (dB.T / v0) @ dB
    Sn = 0.5 * (Sn + Sn.T)
    if not np.all(np.isfinite(Bn)) or not np.all(np.isfinite(Sn)):
        raise FitError("posterior update produced non-finite values")
    return VARPosterior(spec=spec, prior=prior, coef_mean=Bn, coef_cov=Vn,
                        resid_scale=Sn, resid_df=nu0 + Y.shape[0],
                        n_obs=Y.shape[0], tail=raw[-spec.p:].copy(), sigma_hat=sigma_hat)


def log_marginal_likelihood(data: ModelDataset | np.ndarray, spec: VARSpec,
                            prior: ConjugatePrior,
                            sigma_hat: np.ndarray | None = None) -> float:
    """Closed-form log p(Y | X, prior), computed entirely in log space."""
    raw = data.data if isinstance(data, ModelDataset) else np.asarray(data, dtype=float)
    post = fit(raw, spec, prior, sigma_hat=sigma_hat)
    n = spec.n
    T = post.n_obs
    _, v0, S0, nu0 = _prior_moments(spec, prior, post.sigma_hat)
    nun = post.resid_df
    sign, logdet_Vn = np.linalg.slogdet(post.coef_cov)
    if sign <= 0:
        raise FitError("posterior coefficient covariance lost positive definiteness")
    logdet_V0 = float(np.sum(np.log(v0)))
    logdet_S0 = float(np.sum(np.log(np.diag(S0))))
    sign_n, logdet_Sn = np.linalg.slogdet(post.resid_scale)
    if sign_n <= 0:
        raise FitError("posterior residual scale lost positive definiteness")
    return float(
        -0.5 * n * T * np.log(np.pi)
        + multigammaln(nun / 2.0, n) - multigammaln(nu0 / 2.0, n)
        + 0.5 * nu0 * logdet_S0 - 0.5 * nun * logdet_Sn
        + 0.5 * n * (logdet_Vn - logdet_V0)
    )


def select_hyperparameters(data: ModelDataset | np.ndarray, spec: VARSpec,
                           grid: list[ConjugatePrior]) -> ConjugatePrior:
    """Argmax of the marginal likelihood; ties break toward greater shrinkage."""
    if not grid:
        raise FitError("empty hyperparameter grid")
    scored = [(log_marginal_likelihood(data, spec, prior), prior) for prior in grid]
    # greater shrinkage = smaller overall tightness, then faster lag decay
    scored.sort(key=lambda t: (-t[0], t[1].overall, -t[1].cross))
    return scored[0][1]


# ---------------------------------------------------------------------------
# Posterior simulation


@dataclass
class ReducedFormDraw:
    intercept: np.ndarray   # (n,)
    lags: np.ndarray        # (p, n, n)
    sigma: np.ndarray       # (n, n)


@dataclass
class ParameterDraws:
    """Stacked i.i.d. reduced-form posterior draws."""

    intercept: np.ndarray   # (N, n)
    lags: np.ndarray        # (N, p, n, n)
    sigma: np.ndarray       # (N, n, n)

    def __len__(self) -> int:
        return self.intercept.shape[0]

    def __getitem__(self, i: int) -> ReducedFormDraw:
        return ReducedFormDraw(self.intercept[i], self.lags[i], self.sigma[i])


def _sample_inv_wishart_factor(rng: np.random.Generator, nu: float, S: np.ndarray) -> np.ndarray:
    """Return F with F F' = Sigma for one draw Sigma ~ IW(nu, S) (Bartlett)."""
    n = S.shape[0]
    C = cholesky(np.linalg.inv(S), lower=True)
    A = np.zeros((n, n))
    for i in range(n):
        A[i, i] = np.sqrt(rng.chisquare(nu - i))
        A[i, :i] = rng.standard_normal(i)
    CA = C @ A
    return solve_triangular(CA.T, np.eye(n), lower=False)


def sample_parameters(post: VARPosterior, N: int, seed) -> ParameterDraws:
    """Draw N i.i.d. (B, Sigma) from the MNIW posterior, reproducibly by seed."""
    if N < 1:
        raise FitError("need at least one draw")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, p, m = post.spec.n, post.spec.p, post.spec.n_coef
    try:
        Lv = cholesky(post.coef_cov, lower=True)
    except np.linalg.LinAlgError as e:
        raise FitError(f"posterior coefficient covariance not PD: {e}") from e
    intercept = np.empty((N, n))
    lags = np.empty((N, p, n, n))
    sigma = np.empty((N, n, n))
    for i in range(N):
        F = _sample_inv_wishart_factor(rng, post.resid_df, post.resid_scale)
        sigma[i] = F @ F.T
        B = post.coef_mean + Lv @ rng.standard_normal((m, n)) @ F.T
        intercept[i] = B[0]
        for lag in range(p):
            # B rows 1 + lag*n + j hold coefficients on variable j at that lag
            lags[i, lag] = B[1 + lag * n: 1 + (lag + 1) * n].T
    return ParameterDraws(intercept, lags, sigma)


# ---------------------------------------------------------------------------
# Sign-restriction identification


class SignError(ValueError):
    """Raised for malformed sign-restriction tables."""


@dataclass(frozen=True)
class SignMatrix:
    """Required impact signs, (variable x shock), entries in {-1, 0, +1}."""

    table: np.ndarray
    shock_names: tuple[str, ...]
    policy_shock: int

    def __post_init__(self) -> None:
        t = np.asarray(self.table)
        if t.ndim != 2 or t.shape[1] != len(self.shock_names):
            raise SignError("sign table must be (n_vars, n_shocks) matching shock names")
        if not np.all(np.isin(t, (-1, 0, 1))):
            raise SignError("sign table entries must be -1, 0, or +1")
        if not (0 <= self.policy_shock < t.shape[1]):
            raise SignError("policy shock index out of range")
        object.__setattr__(self, "table", t.astype(np.int8))

    @classmethod
    def empty(cls, n: int, policy_shock: int = 0) -> "SignMatrix":
        return cls(np.zeros((n, n), dtype=int), tuple(f"shock{i}" for i in range(n)), policy_shock)

    @classmethod
    def from_constraints(cls, n_vars: int, shock_names: list[str],
                         entries: list[tuple[int, str, int]],
                         policy_shock: str) -> "SignMatrix":
        """Build from (variable index, shock name, sign) triples; rejects conflicts."""
        table = np.zeros((n_vars, len(shock_names)), dtype=int)
        for var, shock, sign in entries:
            if sign not in (-1, 1):
                raise SignError(f"sign must be ±1, got {sign}")
            s = shock_names.index(shock)
            if table[var, s] != 0 and table[var, s] != sign:
                raise SignError(f"conflicting signs demanded for variable {var}, shock {shock!r}")
            table[var, s] = sign
        return cls(table, tuple(shock_names), shock_names.index(policy_shock))

    def restricted(self) -> np.ndarray:
        return self.table != 0


def default_policy_signs(n: int) -> SignMatrix:
    """Documented default for (output, price, rate, ...) orderings.

    Monetary policy shock raises the rate and lowers output and the price
    level; demand raises all three; supply raises output and lowers prices.
    Extra shocks (n > 3) are left unrestricted.
    """
    if n < 3:
        raise SignError("default sign table needs at least 3 variables")
    names = ["supply", "demand", "policy"] + [f"other{i}" for i in range(n - 3)]
    entries = [
        (0, "supply", +1), (1, "supply", -1),
        (0, "demand", +1), (1, "demand", +1), (2, "demand", +1),
        (0, "policy", -1), (1, "policy", -1), (2, "policy", +1),
    ]
    return SignMatrix.from_constraints(n, names, entries, policy_shock="policy")


@dataclass
class StructuralDraw:
    """One accepted structural parameterization: A0 y_t = a + sum A_j y_{t-j} + e_t."""

    intercept: np.ndarray    # structural a, (n,)
    lags: np.ndarray         # structural A_1..A_p, (p, n, n)
    impact: np.ndarray       # A0^{-1}, shock impact columns, (n, n)
    a0: np.ndarray           # A0, (n, n)
    shock_names: tuple[str, ...]
    policy_shock: int
    tries: int = 1


def identify(draw: ReducedFormDraw, signs: SignMatrix, max_tries: int = 1000,
             seed=None) -> StructuralDraw | None:
    """Rotate the Cholesky factor by Haar-uniform Q until impact signs hold.

    Returns None when max_tries rotations are all rejected (caller draws new
    parameters). Accepted draws have unrestricted columns sign-normalized so
    their diagonal impact is positive.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = draw.sigma.shape[0]
    table = signs.table
    if table.shape[0] != n:
        raise SignError(f"sign table has {table.shape[0]} variable rows, model has {n}")
    try:
        L = cholesky(draw.sigma, lower=True)
    except np.linalg.LinAlgError as e:
        raise SignError(f"reduced-form covariance not PD: {e}") from e
    restricted = table != 0
    tried = 0
    while tried < max_tries:
        batch = min(max_tries - tried, 128)
        Z = rng.standard_normal((batch, n, n))
        Q, R = np.linalg.qr(Z)
        d = np.sign(np.einsum("bii->bi", R))
        d[d == 0] = 1.0
        Q = Q * d[:, None, :]
        impacts = L @ Q
        ok = np.all((impacts * table) [:, restricted] > 0, axis=1) if restricted.any() \
            else np.ones(batch, dtype=bool)
        hits = np.nonzero(ok)[0]
        if hits.size:
            tried += int(hits[0]) + 1
            impact = impacts[hits[0]].copy()
            for s in range(n):
                if not restricted[:, s].any() and impact[s, s] < 0:
                    impact[:, s] = -impact[:, s]
            a0 = np.linalg.solve(impact, np.eye(n))
            struct_lags = np.einsum("ij,pjk->pik", a0, draw.lags)
            return StructuralDraw(intercept=a0 @ draw.intercept, lags=struct_lags,
                                  impact=impact, a0=a0, shock_names=signs.shock_names,
                                  policy_shock=signs.policy_shock, tries=tried)
        tried += batch
    return None
