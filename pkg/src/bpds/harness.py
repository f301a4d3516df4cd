"""Sequential expanding-window backtest: per quarter, refit the model roster,
update model probabilities from last quarter's realized outcomes, solve the
model-specific / synthesis / model-averaging decisions, and record every
trajectory. Resumable from checkpoints; byte-identical on rerun per seed.

Quarter index t counts dataset rows known when the decision is made: fits use
rows [0, t), the realized outcome of row t-1 feeds the probability update,
and the decision covers rows t .. t+k-1.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .bvar import (ConjugatePrior, SignMatrix, VARSpec, default_prior_grid, fit,
                   select_hyperparameters)
from .data_io import (DataError, ModelDataset, SynthConfig, Transform,
                      load_quarterly_csv, read_run_dir, simulate_dgp,
                      transform_panel, write_run_dir)
from .decision import (ModelHandle, OptimizationReport, PathBounds, PipelineConfig,
                       QuarterContext, SwarmConfig, bma_optimal_path,
                       model_expected_utility_objective, model_optimal_path,
                       optimize_policy)
from .forecast import ConditionalSampler, one_step_log_density
from .scoring import ScoreSpec, UtilitySpec, score_vector
from .synthesis import (ModelProbabilities, insert_baseline,
                        update_prior_probabilities)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """One VAR in the roster: its columns, lag order, and sign restrictions."""

    name: str
    columns: list[str]
    p: int
    output_col: str
    price_col: str
    rate_col: str
    signs: str | dict = "default"
    diff_outcomes: bool = True

    def spec(self) -> VARSpec:
        idx = {c: i for i, c in enumerate(self.columns)}
        for c in (self.output_col, self.price_col, self.rate_col):
            if c not in idx:
                raise ConfigError(f"model {self.name}: column {c!r} not in roster columns")
        return VARSpec(n=len(self.columns), p=self.p, names=tuple(self.columns),
                       rate_index=idx[self.rate_col], inflation_index=idx[self.price_col],
                       growth_index=idx[self.output_col], diff_outcomes=self.diff_outcomes)

    def sign_matrix(self) -> SignMatrix:
        spec = self.spec()
        n = spec.n
        if self.signs == "none":
            return SignMatrix.empty(n, policy_shock=spec.rate_index)
        if self.signs == "default":
            names = ["supply", "demand", "policy"] + [f"other{i}" for i in range(n - 3)]
            entries = [
                (spec.growth_index, "supply", +1), (spec.inflation_index, "supply", -1),
                (spec.growth_index, "demand", +1), (spec.inflation_index, "demand", +1),
                (spec.rate_index, "demand", +1),
                (spec.growth_index, "policy", -1), (spec.inflation_index, "policy", -1),
                (spec.rate_index, "policy", +1),
            ]
            return SignMatrix.from_constraints(n, names, entries, policy_shock="policy")
        table = np.asarray(self.signs["table"], dtype=int)
        names = list(self.signs["shock_names"])
        return SignMatrix(table, tuple(names),
                          policy_shock=names.index(self.signs["policy_shock"]))


@dataclass
class RunConfig:
    """Everything one backtest needs; serializes to the run manifest."""

    models: list[ModelConfig]
    k: int = 8
    csv_path: str | None = None
    csv_schema: dict | None = None
    synth: SynthConfig | None = None
    transforms: list[Transform] = field(default_factory=list)
    start: int = 60
    n_quarters: int = 12
    gamma: float = 0.95
    pi0: float = 0.1
    theta: float = 0.5
    y_star: float = 2.0
    g_star: float = 2.5
    score_eps: float = 0.4
    d_y: float = 2.0
    d_g: float = 2.0
    d_x: float = 1.0
    min_ratio: float = 0.75
    eps_cap: float = 0.25
    tilt: bool = True
    condition_on_x: bool = True
    soft: bool = True
    freeze_target: bool = False
    n_draws: int = 1000
    n_baseline: int = 1000
    baseline_df: float = 10.0
    baseline_inflate: float = 2.0
    tilt_tol: float = 1e-3
    tilt_max_iter: int = 200
    max_amplification: float = 25.0
    swarm_particles: int = 24
    swarm_iterations: int = 60
    refine_budget: int = 200
    model_budget: int = 150
    bound_lower: float = -10.0
    bound_upper: float = 15.0
    master_seed: int = 20240101
    grid_overall: list[float] = field(default_factory=lambda: list(np.geomspace(0.01, 1.0, 5)))
    grid_cross: list[float] = field(default_factory=lambda: list(np.geomspace(0.1, 1.0, 5)))

    def __post_init__(self) -> None:
        if self.k < 1 or not 0 < self.gamma <= 1 or not 0 <= self.pi0 < 1:
            raise ConfigError("need k >= 1, gamma in (0,1], pi0 in [0,1)")
        if not self.models:
            raise ConfigError("model roster is empty")
        if self.csv_path is None and self.synth is None:
            raise ConfigError("either csv_path or synth data source is required")

    def prior_grid(self) -> list[ConjugatePrior]:
        return [ConjugatePrior(overall=float(o), cross=float(c))
                for o in self.grid_overall for c in self.grid_cross]

    def bounds(self) -> PathBounds:
        return PathBounds(self.bound_lower, self.bound_upper)

    def utility_spec(self, x_prev: float) -> UtilitySpec:
        return UtilitySpec(k=self.k, x_prev=x_prev, theta=self.theta,
                           y_star=self.y_star, g_star=self.g_star)

    def score_spec(self) -> ScoreSpec:
        return ScoreSpec(k=self.k, eps=self.score_eps, d_y=self.d_y, d_g=self.d_g,
                         d_x=self.d_x, y_star=self.y_star, g_star=self.g_star)

    def swarm(self) -> SwarmConfig:
        return SwarmConfig(particles=self.swarm_particles,
                           iterations=self.swarm_iterations,
                           refine_budget=self.refine_budget)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(k=self.k, pi0=self.pi0, min_ratio=self.min_ratio,
                              eps_cap=self.eps_cap, tilt=self.tilt,
                              condition_on_x=self.condition_on_x,
                              n_baseline=self.n_baseline, baseline_df=self.baseline_df,
                              baseline_inflate=self.baseline_inflate,
                              tilt_tol=self.tilt_tol, tilt_max_iter=self.tilt_max_iter,
                              freeze_target=self.freeze_target)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("models", "synth", "transforms")}
        d["models"] = [asdict(m) for m in self.models]
        d["transforms"] = [asdict(t) for t in self.transforms]
        if self.synth is not None:
            s = asdict(self.synth)
            for key in ("intercept", "coeffs", "shock_cov"):
                s[key] = np.asarray(s[key]).tolist()
            d["synth"] = s
        else:
            d["synth"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["models"] = [ModelConfig(**m) for m in d.get("models", [])]
        d["transforms"] = [Transform(**t) for t in d.get("transforms", [])]
        if d.get("synth") is not None:
            s = dict(d["synth"])
            s["columns"] = [tuple(c) for c in s["columns"]] if s.get("columns") else None
            d["synth"] = SynthConfig(**s)
        return cls(**d)

    def run_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def quarter_seed(master: int, t: int, stream: int) -> np.random.SeedSequence:
    """Counter-derived per-quarter, per-purpose seed (order-free, resumable)."""
    return np.random.SeedSequence(entropy=master, spawn_key=(t, stream))


# stream ids within a quarter
_STREAM_SAMPLER = 0      # + model index
_STREAM_BASELINE = 100
_STREAM_BPDS_OPT = 101
_STREAM_BMA_OPT = 102


@dataclass
class QuarterRecord:
    quarter: str
    t: int
    failed: bool = False
    flags: str = ""
    x_prev: float = float("nan")
    x_bpds: list = field(default_factory=list)
    x_bma: list = field(default_factory=list)
    x_models: dict = field(default_factory=dict)
    pi_prior: list = field(default_factory=list)
    pi_x: list = field(default_factory=list)
    pi_tilde: list = field(default_factory=list)
    bma_weights: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    ess_models: list = field(default_factory=list)
    ess_mixture: float = float("nan")
    eu_bpds: float = float("nan")
    eu_bma: float = float("nan")
    eu_initial: float = float("nan")
    epsilon: float = float("nan")
    tilt_residual: float = float("nan")
    tilt_iterations: int = 0
    tilt_converged: bool = False
    tilt_fallback: bool = False
    dominant_improvement: float = float("nan")
    evals_bpds: int = 0
    evals_bma: int = 0
    evals_models: dict = field(default_factory=dict)
    ident_tries: dict = field(default_factory=dict)


@dataclass
class RunArtifacts:
    config: RunConfig
    records: list[QuarterRecord]
    telemetry: list[dict]               # optimizer traces, one row per iteration
    panel_frame: pd.DataFrame           # the level panel the run consumed
    dates: list[str]

    @property
    def run_id(self) -> str:
        return self.config.run_id()

    def records_frame(self) -> pd.DataFrame:
        rows = []
        model_names = [m.name for m in self.config.models]
        for r in self.records:
            row: dict = {"quarter": r.quarter, "t": r.t, "failed": r.failed,
                         "flags": r.flags, "x_prev": r.x_prev}
            _explode(row, "x_bpds", r.x_bpds, self.config.k)
            _explode(row, "x_bma", r.x_bma, self.config.k)
            for name in model_names:
                _explode(row, f"x_{name}", r.x_models.get(name, []), self.config.k)
            _explode(row, "pi_prior", r.pi_prior, len(model_names) + 1)
            _explode(row, "pi_x", r.pi_x, len(model_names) + 1)
            _explode(row, "pi_tilde", r.pi_tilde, len(model_names) + 1)
            _explode(row, "bma_w", r.bma_weights, len(model_names))
            _explode(row, "tau", r.tau, 2 * self.config.k)
            _explode(row, "ess_model", r.ess_models, len(model_names) + 1)
            row.update(ess_mixture=r.ess_mixture, eu_bpds=r.eu_bpds, eu_bma=r.eu_bma,
                       eu_initial=r.eu_initial, epsilon=r.epsilon,
                       tilt_residual=r.tilt_residual, tilt_iterations=r.tilt_iterations,
                       tilt_converged=r.tilt_converged, tilt_fallback=r.tilt_fallback,
                       dominant_improvement=r.dominant_improvement,
                       evals_bpds=r.evals_bpds, evals_bma=r.evals_bma)
            for name in model_names:
                row[f"evals_{name}"] = r.evals_models.get(name, 0)
                row[f"ident_tries_{name}"] = r.ident_tries.get(name, 0)
            rows.append(row)
        return pd.DataFrame(rows)

    def save(self, out_dir: str) -> None:
        manifest = {
            "run_id": self.run_id,
            "config": self.config.to_dict(),
            "versions": {"bpds": __version__, "numpy": np.__version__,
                         "pandas": pd.__version__},
        }
        tables = {"records": self.records_frame(),
                  "telemetry": pd.DataFrame(self.telemetry),
                  "panel": self.panel_frame}
        write_run_dir(out_dir, manifest, tables)

    @classmethod
    def load(cls, run_dir: str) -> "RunArtifacts":
        manifest, tables = read_run_dir(run_dir)
        config = RunConfig.from_dict(manifest["config"])
        records = _records_from_frame(tables["records"], config)
        telemetry = tables.get("telemetry", pd.DataFrame()).to_dict("records")
        panel = tables["panel"]
        dates = [str(q) for q in panel["quarter"].tolist()]
        return cls(config=config, records=records, telemetry=telemetry,
                   panel_frame=panel, dates=dates)


def _explode(row: dict, prefix: str, values, width: int) -> None:
    vals = list(values) if len(values) else [float("nan")] * width
    for i, v in enumerate(vals):
        row[f"{prefix}_{i + 1}"] = v


def _collect(row: pd.Series, prefix: str, width: int) -> list:
    return [row[f"{prefix}_{i + 1}"] for i in range(width)]


def _records_from_frame(df: pd.DataFrame, config: RunConfig) -> list[QuarterRecord]:
    model_names = [m.name for m in config.models]
    J = len(model_names)
    out = []
    for _, row in df.iterrows():
        rec = QuarterRecord(
            quarter=str(row["quarter"]), t=int(row["t"]), failed=bool(row["failed"]),
            flags="" if pd.isna(row["flags"]) else str(row["flags"]),
            x_prev=float(row["x_prev"]),
            x_bpds=_collect(row, "x_bpds", config.k),
            x_bma=_collect(row, "x_bma", config.k),
            x_models={n: _collect(row, f"x_{n}", config.k) for n in model_names},
            pi_prior=_collect(row, "pi_prior", J + 1),
            pi_x=_collect(row, "pi_x", J + 1),
            pi_tilde=_collect(row, "pi_tilde", J + 1),
            bma_weights=_collect(row, "bma_w", J),
            tau=_collect(row, "tau", 2 * config.k),
            ess_models=_collect(row, "ess_model", J + 1),
            ess_mixture=float(row["ess_mixture"]), eu_bpds=float(row["eu_bpds"]),
            eu_bma=float(row["eu_bma"]), eu_initial=float(row["eu_initial"]),
            epsilon=float(row["epsilon"]), tilt_residual=float(row["tilt_residual"]),
            tilt_iterations=int(row["tilt_iterations"]),
            tilt_converged=bool(row["tilt_converged"]),
            tilt_fallback=bool(row["tilt_fallback"]),
            dominant_improvement=float(row["dominant_improvement"]),
            evals_bpds=int(row["evals_bpds"]), evals_bma=int(row["evals_bma"]),
            evals_models={n: int(row[f"evals_{n}"]) for n in model_names},
            ident_tries={n: int(row[f"ident_tries_{n}"]) for n in model_names},
        )
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# Backtest driver


@dataclass
class _State:
    """Cross-quarter information carried by the sequential run."""

    next_t: int
    pi_prior: list                  # with baseline slot, post-insertion
    prev_tau: list
    prev_decisions: dict            # model name -> list
    prev_x_bpds: list | None
    prev_x_bma: list | None
    cum_lds: list                   # per-model cumulative one-step log densities

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "_State":
        return cls(**d)


def load_dataset(cfg: RunConfig) -> tuple[ModelDataset, pd.DataFrame]:
    if cfg.csv_path is not None:
        panel = load_quarterly_csv(cfg.csv_path, cfg.csv_schema)
    else:
        panel = simulate_dgp(cfg.synth)
    ds = transform_panel(panel, cfg.transforms)
    return ds, panel.to_frame()


class Backtest:
    """Drives the expanding-window loop over one RunConfig."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dataset, self.panel_frame = load_dataset(cfg)
        self.model_data = [self.dataset.select(m.columns) for m in cfg.models]
        self.specs = [m.spec() for m in cfg.models]
        self.signs = [m.sign_matrix() for m in cfg.models]
        min_rows = max(s.n * s.p + 10 + s.p for s in self.specs)
        if cfg.start <= min_rows:
            raise ConfigError(
                f"start quarter {cfg.start} leaves too little training data "
                f"(need more than {min_rows} rows)")
        if cfg.start + cfg.n_quarters > self.dataset.n_obs + 1:
            raise ConfigError("dataset does not cover the requested quarters")

    # -- per-quarter building blocks -----------------------------------------

    def _posterior(self, j: int, t: int):
        data = self.model_data[j].data[:t]
        prior = select_hyperparameters(data, self.specs[j], self.cfg.prior_grid())
        return fit(data, self.specs[j], prior)

    def realized_outcomes(self, t: int) -> np.ndarray:
        """(inflation, growth, rate) realized at row t (needs row t-1)."""
        ds = self.dataset
        m0 = self.cfg.models[0]
        infl = 4.0 * (ds.column(m0.price_col)[t] - ds.column(m0.price_col)[t - 1]) \
            if m0.diff_outcomes else ds.column(m0.price_col)[t]
        grow = 4.0 * (ds.column(m0.output_col)[t] - ds.column(m0.output_col)[t - 1]) \
            if m0.diff_outcomes else ds.column(m0.output_col)[t]
        rate = ds.column(m0.rate_col)[t]
        return np.array([infl, grow, rate])

    def realized_score(self, t: int, decision: np.ndarray) -> np.ndarray:
        """2k score vector realized for a decision made at quarter t, scored
        with the single quarter (row t-1) observed since: the horizon-1 pair
        is real, later horizons are zero for every model (neutral)."""
        cfg = self.cfg
        z = self.realized_outcomes(t - 1)
        sspec = cfg.score_spec()
        rate_prev = float(self.dataset.column(cfg.models[0].rate_col)[t - 2])
        s1 = score_vector(np.array([z[0]]), np.array([z[1]]),
                          np.array([float(decision[0])]),
                          ScoreSpec(k=1, eps=cfg.score_eps, d_y=cfg.d_y, d_g=cfg.d_g,
                                    d_x=cfg.d_x, y_star=cfg.y_star, g_star=cfg.g_star),
                          x_prev=rate_prev)
        out = np.zeros(sspec.dim)
        out[:2] = s1
        return out

    def run(self, out_dir: str | None = None, resume: bool = True) -> RunArtifacts:
        cfg = self.cfg
        records: list[QuarterRecord] = []
        telemetry: list[dict] = []
        state = _State(next_t=cfg.start,
                       pi_prior=list(insert_baseline(
                           ModelProbabilities.uniform_models(len(cfg.models)),
                           cfg.pi0).weights),
                       prev_tau=[0.0] * (2 * cfg.k),
                       prev_decisions={}, prev_x_bpds=None, prev_x_bma=None,
                       cum_lds=[0.0] * len(cfg.models))
        if out_dir and resume:
            loaded = self._load_checkpoint(out_dir)
            if loaded is not None:
                records, telemetry, state = loaded
                log.info("resuming at quarter index %d", state.next_t)

        while state.next_t < cfg.start + cfg.n_quarters:
            t = state.next_t
            try:
                rec, state = self._run_quarter(t, state, telemetry)
            except Exception as e:  # record and continue, never silently drop
                log.exception("quarter %d failed", t)
                rec = QuarterRecord(quarter=self.dataset.dates[t - 1], t=t,
                                    failed=True, flags=f"error:{type(e).__name__}")
                state = _State(next_t=t + 1, pi_prior=state.pi_prior,
                               prev_tau=[0.0] * (2 * cfg.k),
                               prev_decisions={}, prev_x_bpds=None,
                               prev_x_bma=None, cum_lds=state.cum_lds)
            records.append(rec)
            if out_dir:
                self._write_checkpoint(out_dir, records, telemetry, state)
        artifacts = RunArtifacts(config=cfg, records=records, telemetry=telemetry,
                                 panel_frame=self.panel_frame,
                                 dates=list(self.dataset.dates))
        if out_dir:
            artifacts.save(out_dir)
        return artifacts

    def _run_quarter(self, t: int, state: _State,
                     telemetry: list[dict]) -> tuple[QuarterRecord, _State]:
        cfg = self.cfg
        J = len(cfg.models)
        names = [m.name for m in cfg.models]
        quarter = self.dataset.dates[t - 1]
        x_prev = float(self.dataset.column(cfg.models[0].rate_col)[t - 1])
        uspec = cfg.utility_spec(x_prev)
        sspec = cfg.score_spec()
        bounds = cfg.bounds()

        # --- probability update from last quarter's realization
        prev_pi = ModelProbabilities(np.asarray(state.pi_prior), "prior")
        first_quarter = t == cfg.start
        lds_step = np.zeros(J)
        if not first_quarter:
            for j in range(J):
                post_prev = self._posterior(j, t - 1)
                lds_step[j] = one_step_log_density(post_prev, self.realized_outcomes(t - 1))
            if state.prev_decisions:
                realized = np.vstack([self.realized_score(t - 1,
                                                          np.asarray(state.prev_decisions[n]))
                                      for n in names])
            else:
                realized = np.zeros((J, 2 * cfg.k))
            pi_models = update_prior_probabilities(prev_pi, cfg.gamma, lds_step,
                                                   realized, np.asarray(state.prev_tau))
            pi_prior = insert_baseline(pi_models, cfg.pi0)
        else:
            pi_prior = ModelProbabilities(np.asarray(state.pi_prior), "prior")
        cum_lds = [c + d for c, d in zip(state.cum_lds, lds_step)]
        bma_weights = np.exp(cum_lds - np.max(cum_lds))
        bma_weights = bma_weights / bma_weights.sum()

        # --- fit and precompute the quarter's samplers
        handles = []
        for j, mc in enumerate(cfg.models):
            post = self._posterior(j, t)
            sampler = ConditionalSampler(
                post, self.signs[j], cfg.k, cfg.n_draws,
                seed=quarter_seed(cfg.master_seed, t, _STREAM_SAMPLER + j),
                soft=cfg.soft, label=mc.name,
                max_amplification=cfg.max_amplification)
            handles.append(ModelHandle(mc.name, sampler))

        # --- model-specific decisions (trust-region, warm-started)
        for j, h in enumerate(handles):
            warm = _shift_warm_start(state.prev_decisions.get(h.name), x_prev, cfg.k)
            obj = model_expected_utility_objective(h, uspec)
            h.decision, h.decision_report = model_optimal_path(
                obj, cfg.k, bounds, cfg.model_budget,
                seed=None, warm_start=warm, x_prev=x_prev)

        ctx = QuarterContext(handles, pi_prior, uspec, sspec, cfg.pipeline(),
                             baseline_seed=quarter_seed(cfg.master_seed, t,
                                                        _STREAM_BASELINE))

        # --- synthesis decision (swarm) and the comparator
        def bpds_cb(it, best):
            telemetry.append({"t": t, "quarter": quarter, "phase": "bpds",
                              "iteration": it, "best": best})

        warm = _shift_warm_start(state.prev_x_bpds, x_prev, cfg.k)
        x_bpds, rep_bpds = optimize_policy(
            lambda x: ctx.evaluate(x), cfg.k, bounds, cfg.swarm(),
            seed=quarter_seed(cfg.master_seed, t, _STREAM_BPDS_OPT),
            warm_start=warm, callback=bpds_cb)
        ev = ctx.evaluate(x_bpds, collect=True)

        warm_bma = _shift_warm_start(state.prev_x_bma, x_prev, cfg.k)
        x_bma, rep_bma = bma_optimal_path(
            handles, bma_weights, uspec, bounds,
            seed=quarter_seed(cfg.master_seed, t, _STREAM_BMA_OPT),
            swarm=cfg.swarm(), warm_start=warm_bma)

        flags = []
        if ev.tilt_fallback:
            flags.append("tilt_fallback")
        if not ev.tilt_converged and cfg.tilt:
            flags.append("tilt_unconverged")
        rec = QuarterRecord(
            quarter=quarter, t=t, failed=False, flags=";".join(flags), x_prev=x_prev,
            x_bpds=list(map(float, x_bpds)), x_bma=list(map(float, x_bma)),
            x_models={h.name: list(map(float, h.decision)) for h in handles},
            pi_prior=list(map(float, pi_prior.weights)),
            pi_x=list(map(float, ev.pi_x)),
            pi_tilde=list(map(float, ev.pi_tilde)),
            bma_weights=list(map(float, bma_weights)),
            tau=list(map(float, ev.tau)),
            ess_models=list(map(float, ev.ess_per_model)),
            ess_mixture=float(ev.ess_overall),
            eu_bpds=float(ev.expected_utility), eu_bma=float(rep_bma.best_value),
            eu_initial=float(ev.initial_expected_utility),
            epsilon=float(ev.epsilon), tilt_residual=float(ev.tilt_residual),
            tilt_iterations=int(ev.tilt_iterations),
            tilt_converged=bool(ev.tilt_converged),
            tilt_fallback=bool(ev.tilt_fallback),
            dominant_improvement=float(ev.dominant_improvement),
            evals_bpds=rep_bpds.evaluations, evals_bma=rep_bma.evaluations,
            evals_models={h.name: h.decision_report.evaluations for h in handles},
            ident_tries={h.name: h.sampler.identification_tries for h in handles},
        )
        new_state = _State(
            next_t=t + 1, pi_prior=list(map(float, pi_prior.weights)),
            prev_tau=list(map(float, ev.tau)),
            prev_decisions={h.name: list(map(float, h.decision)) for h in handles},
            prev_x_bpds=list(map(float, x_bpds)), prev_x_bma=list(map(float, x_bma)),
            cum_lds=list(map(float, cum_lds)))
        return rec, new_state

    # -- checkpointing --------------------------------------------------------

    def _checkpoint_paths(self, out_dir: str) -> tuple[str, str]:
        return (os.path.join(out_dir, "checkpoint.json"),
                os.path.join(out_dir, "checkpoint_records.json"))

    def _write_checkpoint(self, out_dir: str, records, telemetry, state: _State) -> None:
        os.makedirs(out_dir, exist_ok=True)
        spath, rpath = self._checkpoint_paths(out_dir)
        payload = {"run_id": self.cfg.run_id(), "state": state.to_json()}
        blob = {"records": [asdict(r) for r in records], "telemetry": telemetry}
        for path, data in ((spath, payload), (rpath, blob)):
            tmp = path + ".tmp"
            with open(tmp, "w") as f:
                json.dump(data, f)
            os.replace(tmp, path)

    def _load_checkpoint(self, out_dir: str):
        spath, rpath = self._checkpoint_paths(out_dir)
        if not (os.path.exists(spath) and os.path.exists(rpath)):
            return None
        with open(spath) as f:
            payload = json.load(f)
        if payload.get("run_id") != self.cfg.run_id():
            log.warning("checkpoint belongs to a different config; ignoring")
            return None
        with open(rpath) as f:
            blob = json.load(f)
        records = [QuarterRecord(**r) for r in blob["records"]]
        return records, blob["telemetry"], _State.from_json(payload["state"])


def _shift_warm_start(prev, x_prev: float, k: int) -> np.ndarray:
    """Previous decision shifted one quarter, last entry repeated."""
    if prev is None:
        return np.full(k, x_prev)
    prev = np.asarray(prev, dtype=float)
    return np.concatenate([prev[1:], prev[-1:]])


def run_backtest(cfg: RunConfig, out_dir: str | None = None,
                 resume: bool = True) -> RunArtifacts:
    return Backtest(cfg).run(out_dir=out_dir, resume=resume)


def summarize(artifacts: RunArtifacts) -> dict[str, pd.DataFrame]:
    """Per-quarter comparison table plus aggregate statistics."""
    ok = [r for r in artifacts.records if not r.failed]
    if not ok:
        log.warning("all quarters flagged failed; summary is empty")
        return {"quarters": pd.DataFrame(), "aggregate": pd.DataFrame()}
    names = [m.name for m in artifacts.config.models]
    q = pd.DataFrame({
        "quarter": [r.quarter for r in ok],
        "eu_bpds": [r.eu_bpds for r in ok],
        "eu_bma": [r.eu_bma for r in ok],
        "delta_eu": [r.eu_bpds - r.eu_bma for r in ok],
        "ess_mixture": [r.ess_mixture for r in ok],
        "epsilon": [r.epsilon for r in ok],
        "dominant_improvement": [r.dominant_improvement for r in ok],
    })
    for i, name in enumerate(["baseline"] + names):
        q[f"pi_tilde_{name}"] = [r.pi_tilde[i] for r in ok]
    agg = pd.DataFrame([{
        "n_quarters": len(artifacts.records),
        "n_failed": sum(r.failed for r in artifacts.records),
        "frac_bpds_ge_bma": float(np.mean(q["delta_eu"] >= 0.0)),
        "mean_delta_eu": float(q["delta_eu"].mean()),
        "mean_ess_mixture": float(q["ess_mixture"].mean()),
        "min_ess_mixture": float(q["ess_mixture"].min()),
        "frac_ess_ge_half": float(np.mean(q["ess_mixture"] >= 0.5)),
        "mean_epsilon": float(q["epsilon"].mean()),
    }])
    return {"quarters": q, "aggregate": agg}
