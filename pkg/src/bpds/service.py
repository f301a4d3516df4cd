"""Stateless HTTP facade over persisted runs: evaluate candidate rate paths
against a reconstructed quarter state, serve recorded trajectories, and run
budget-capped server-side optimizations with streamed progress.

Quarter states are rebuilt exactly as the backtest built them (same seeds,
same fits), so scenario replies replay recorded quantities bit-for-bit.
"""
from __future__ import annotations

import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .bvar import fit, select_hyperparameters
from .data_io import MacroPanel, transform_panel
from .decision import ModelHandle, QuarterContext, optimize_policy
from .forecast import ConditionalSampler
from .harness import (Backtest, QuarterRecord, RunArtifacts, RunConfig,
                      _STREAM_BASELINE, _STREAM_BPDS_OPT, _STREAM_SAMPLER,
                      quarter_seed)
from .synthesis import ModelProbabilities


def weighted_quantiles(values: np.ndarray, weights: np.ndarray,
                       qs: list[float]) -> np.ndarray:
    """Quantiles of a weighted sample (linear interpolation on the CDF).

    Zero-weight points carry no mass and must not anchor the interpolation.
    """
    keep = np.asarray(weights) > 0.0
    if not keep.any():
        raise ValueError("weights sum to zero")
    values = np.asarray(values)[keep]
    weights = np.asarray(weights, dtype=float)[keep]
    order = np.argsort(values)
    v = values[order]
    w = weights[order]
    cdf = np.cumsum(w)
    cdf = (cdf - 0.5 * w) / cdf[-1]
    return np.interp(np.asarray(qs, dtype=float), cdf, v)


@dataclass
class QuarterState:
    """A rebuilt quarter: context keyed by feature toggles, plus its record."""

    context: QuarterContext
    record: QuarterRecord
    x_prev: float
    build_seconds: float


class RunStore:
    """One loaded run directory with an LRU cache of rebuilt quarter states."""

    def __init__(self, run_dir: str, cache_size: int = 8):
        self.artifacts = RunArtifacts.load(run_dir)
        self.cfg: RunConfig = self.artifacts.config
        frame = self.artifacts.panel_frame
        panel = MacroPanel(dates=[str(q) for q in frame["quarter"]],
                           values=frame.drop(columns=["quarter"]).to_numpy(dtype=float),
                           columns=[c for c in frame.columns if c != "quarter"])
        self.dataset = transform_panel(panel, self.cfg.transforms)
        self._cache: OrderedDict[tuple, QuarterState] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    @property
    def run_id(self) -> str:
        return self.artifacts.run_id

    def record_for(self, t: int) -> QuarterRecord:
        for r in self.artifacts.records:
            if r.t == t:
                return r
        raise KeyError(t)

    def resolve_quarter(self, quarter: str | int) -> int:
        if isinstance(quarter, int) or str(quarter).isdigit():
            return int(quarter)
        for r in self.artifacts.records:
            if r.quarter == quarter:
                return r.t
        raise KeyError(quarter)

    def quarter_state(self, t: int, soft: bool = True, tilt: bool = True) -> QuarterState:
        key = (t, bool(soft), bool(tilt))
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        state = self._build(t, soft, tilt)
        with self._lock:
            self._cache[key] = state
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return state

    def _build(self, t: int, soft: bool, tilt: bool) -> QuarterState:
        t0 = time.perf_counter()
        cfg = self.cfg
        record = self.record_for(t)
        if record.failed:
            raise RuntimeError(f"quarter {t} is flagged failed in the artifacts")
        handles = []
        for j, mc in enumerate(cfg.models):
            data = self.dataset.select(mc.columns).data[:t]
            spec = mc.spec()
            prior = select_hyperparameters(data, spec, cfg.prior_grid())
            post = fit(data, spec, prior)
            sampler = ConditionalSampler(
                post, mc.sign_matrix(), cfg.k, cfg.n_draws,
                seed=quarter_seed(cfg.master_seed, t, _STREAM_SAMPLER + j),
                soft=soft, label=mc.name,
                max_amplification=cfg.max_amplification)
            handle = ModelHandle(mc.name, sampler)
            handle.decision = np.asarray(record.x_models[mc.name], dtype=float)
            handles.append(handle)
        pi_prior = ModelProbabilities(np.asarray(record.pi_prior, dtype=float), "prior")
        pipeline = cfg.pipeline()
        if not tilt:
            from dataclasses import replace
            pipeline = replace(pipeline, tilt=False)
        ctx = QuarterContext(handles, pi_prior, cfg.utility_spec(record.x_prev),
                             cfg.score_spec(), pipeline,
                             baseline_seed=quarter_seed(cfg.master_seed, t,
                                                        _STREAM_BASELINE))
        return QuarterState(context=ctx, record=record, x_prev=record.x_prev,
                            build_seconds=time.perf_counter() - t0)


class ScenarioRequest(BaseModel):
    run_id: str
    quarter: str | int
    x: list[float]
    soft: bool = True
    tilt: bool = True
    quantiles: list[float] = Field(default=[0.05, 0.2, 0.5, 0.8, 0.95])
    seed: int | None = None


DEFAULT_QUANTILES = [0.05, 0.2, 0.5, 0.8, 0.95]
_VARIABLES = ("inflation", "growth", "rate")


def create_app(run_dirs: list[str]) -> FastAPI:
    app = FastAPI(title="policy scenario service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    stores: dict[str, RunStore] = {}
    for d in run_dirs:
        store = RunStore(d)
        stores[store.run_id] = store
    in_flight: set[tuple[str, int]] = set()
    flight_lock = threading.Lock()
    app.state.in_flight = in_flight  # exposed for inspection and tests

    def get_store(run_id: str) -> RunStore:
        if run_id not in stores:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return stores[run_id]

    @app.get("/api/runs")
    def list_runs():
        return [{"run_id": rid,
                 "quarters": [{"t": r.t, "quarter": r.quarter, "failed": r.failed}
                              for r in s.artifacts.records],
                 "k": s.cfg.k,
                 "bounds": {"lower": s.cfg.bound_lower, "upper": s.cfg.bound_upper},
                 "models": [m.name for m in s.cfg.models]}
                for rid, s in stores.items()]

    @app.post("/api/scenario")
    def scenario(req: ScenarioRequest):
        store = get_store(req.run_id)
        try:
            t = store.resolve_quarter(req.quarter)
            store.record_for(t)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown quarter {req.quarter}")
        cfg = store.cfg
        x = np.asarray(req.x, dtype=float)
        if x.shape != (cfg.k,):
            raise HTTPException(status_code=422,
                                detail=f"x must have k={cfg.k} entries")
        if not cfg.bounds().contains(x) or not np.all(np.isfinite(x)):
            raise HTTPException(
                status_code=422,
                detail={"message": "x outside configured bounds",
                        "lower": cfg.bound_lower, "upper": cfg.bound_upper})
        try:
            state = store.quarter_state(t, soft=req.soft, tilt=req.tilt)
        except RuntimeError as e:
            raise HTTPException(status_code=503, detail=str(e))
        t0 = time.perf_counter()
        ev = state.context.evaluate(x, collect=True)
        qs = req.quantiles or DEFAULT_QUANTILES
        names = ["baseline"] + [m.name for m in cfg.models]
        fans_bpds = _fans(ev.samples, ev.pooled_weights, qs)
        bma_w = np.asarray(state.record.bma_weights, dtype=float)
        bma_pooled = [np.zeros(ev.samples[0].n_draws)] + [
            np.full(s.n_draws, w / s.n_draws)
            for w, s in zip(bma_w, ev.samples[1:])]
        fans_bma = _fans(ev.samples, bma_pooled, qs)
        return {
            "run_id": req.run_id, "quarter": state.record.quarter, "t": t,
            "x": [float(v) for v in x],
            "units": "% annualized",
            "quantiles": qs,
            "fans": {"bpds": fans_bpds, "bma": fans_bma},
            "weights": {"prior": list(map(float, ev.pi_prior)),
                        "conditioned": list(map(float, ev.pi_x)),
                        "tilted": list(map(float, ev.pi_tilde)),
                        "bma": list(map(float, bma_w)),
                        "names": names},
            "ess": {"per_model": list(map(float, ev.ess_per_model)),
                    "mixture": float(ev.ess_overall)},
            "expected_utility": float(ev.expected_utility),
            "initial_expected_utility": float(ev.initial_expected_utility),
            "tau": list(map(float, ev.tau)),
            "tilt": {"converged": bool(ev.tilt_converged),
                     "fallback": bool(ev.tilt_fallback),
                     "residual": float(ev.tilt_residual),
                     "epsilon": float(ev.epsilon)},
            "timing": {"evaluate_seconds": time.perf_counter() - t0,
                       "state_build_seconds": state.build_seconds},
        }

    @app.get("/api/run/{run_id}/trajectories")
    def trajectories(run_id: str, start: int = Query(default=0, ge=0),
                     count: int = Query(default=200, ge=1, le=1000)):
        store = get_store(run_id)
        recs = store.artifacts.records[start:start + count]
        model_names = [m.name for m in store.cfg.models]
        return {
            "run_id": run_id,
            "total": len(store.artifacts.records),
            "start": start,
            "count": len(recs),
            "k": store.cfg.k,
            "names": ["baseline"] + model_names,
            "records": [_record_payload(r, model_names) for r in recs],
        }

    @app.get("/api/run/{run_id}/optimize")
    def optimize(run_id: str, quarter: str, budget: int = Query(default=200, ge=0),
                 seed: int | None = None):
        store = get_store(run_id)
        try:
            t = store.resolve_quarter(quarter)
            record = store.record_for(t)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown quarter {quarter}")
        key = (run_id, t)
        with flight_lock:
            if key in in_flight:
                raise HTTPException(status_code=409,
                                    detail="optimization already in flight for this quarter")
            in_flight.add(key)

        cfg = store.cfg
        warm = np.asarray(record.x_bpds, dtype=float)

        def stream():
            try:
                state = store.quarter_state(t)
                if budget == 0:
                    value = float(state.context.evaluate(warm))
                    yield json.dumps({"event": "done", "x": warm.tolist(),
                                      "value": value, "evaluations": 1,
                                      "flagged": "zero budget: warm start returned"}) + "\n"
                    return
                particles = max(8, min(cfg.swarm_particles, budget // 4))
                iters = max(1, budget // particles - 1)
                from .decision import SwarmConfig
                sc = SwarmConfig(particles=particles, iterations=iters,
                                 refine_budget=min(50, budget // 4))
                progress: list[str] = []

                def cb(it, best):
                    progress.append(json.dumps({"event": "progress", "iteration": it,
                                                "best": best}) + "\n")
                opt_seed = seed if seed is not None \
                    else quarter_seed(cfg.master_seed, t, _STREAM_BPDS_OPT)
                x, rep = optimize_policy(lambda x: state.context.evaluate(x),
                                         cfg.k, cfg.bounds(), sc, opt_seed,
                                         warm_start=warm, callback=cb)
                yield from progress
                yield json.dumps({"event": "done", "x": [float(v) for v in x],
                                  "value": float(rep.best_value),
                                  "evaluations": rep.evaluations,
                                  "multimodal": rep.multimodal,
                                  "n_local_optima": rep.n_local_optima}) + "\n"
            finally:
                with flight_lock:
                    in_flight.discard(key)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    return app


def _fans(samples, pooled_weights, qs) -> dict:
    """Per-variable, per-horizon weighted quantiles over the pooled draws."""
    k = samples[0].horizon
    out: dict[str, list[list[float]]] = {}
    values = {v: np.concatenate([s.outcomes[:, i, :] for s in samples], axis=0)
              for i, v in enumerate(_VARIABLES)}
    w = np.concatenate([np.asarray(pw, dtype=float) for pw in pooled_weights])
    total = w.sum()
    if total <= 0:
        raise ValueError("pooled weights sum to zero")
    w = w / total
    for v in _VARIABLES:
        out[v] = [list(map(float, weighted_quantiles(values[v][:, h], w, qs)))
                  for h in range(k)]
    return out


def _record_payload(r: QuarterRecord, model_names: list[str]) -> dict:
    return {
        "quarter": r.quarter, "t": r.t, "failed": r.failed, "flags": r.flags,
        "x_prev": r.x_prev, "x_bpds": r.x_bpds, "x_bma": r.x_bma,
        "x_models": r.x_models, "pi_prior": r.pi_prior, "pi_x": r.pi_x,
        "pi_tilde": r.pi_tilde, "bma_weights": r.bma_weights, "tau": r.tau,
        "ess_models": r.ess_models, "ess_mixture": r.ess_mixture,
        "eu_bpds": r.eu_bpds, "eu_bma": r.eu_bma, "eu_initial": r.eu_initial,
        "epsilon": r.epsilon, "dominant_improvement": r.dominant_improvement,
        "tilt_converged": r.tilt_converged, "tilt_fallback": r.tilt_fallback,
    }
