"""Command line entry points: run a backtest, summarize artifacts with
figures, simulate a synthetic panel, and serve the scenario API.

Exit codes: 0 success, 2 configuration error, 3 completed with flagged
quarters.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

log = logging.getLogger(__name__)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bpds",
                                     description="policy decision synthesis over VAR forecasts")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sequential backtest")
    p_run.add_argument("--config", required=True, help="run-config JSON path")
    p_run.add_argument("--out", required=True, help="artifact output directory")
    p_run.add_argument("--no-resume", action="store_true",
                       help="ignore existing checkpoints")

    p_sum = sub.add_parser("summarize", help="summary tables + figures from artifacts")
    p_sum.add_argument("--in", dest="in_dir", required=True, help="artifact directory")
    p_sum.add_argument("--no-figures", action="store_true")

    p_sim = sub.add_parser("simulate", help="simulate a synthetic quarterly panel")
    p_sim.add_argument("--config", required=True, help="SynthConfig JSON path")
    p_sim.add_argument("--out", required=True, help="output CSV path")

    p_srv = sub.add_parser("serve", help="serve the scenario API over run artifacts")
    p_srv.add_argument("--artifacts", required=True, nargs="+",
                       help="one or more artifact directories")
    p_srv.add_argument("--port", type=int, default=8321)
    p_srv.add_argument("--host", default="127.0.0.1")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return {"run": _cmd_run, "summarize": _cmd_summarize,
                "simulate": _cmd_simulate, "serve": _cmd_serve}[args.command](args)
    except _ConfigProblem as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


class _ConfigProblem(Exception):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise _ConfigProblem(f"cannot read {path}: {e}") from e


def _cmd_run(args) -> int:
    from .harness import ConfigError, RunConfig, run_backtest
    from .data_io import DataError
    try:
        cfg = RunConfig.from_dict(_load_json(args.config))
    except (ConfigError, DataError, TypeError, KeyError, ValueError) as e:
        raise _ConfigProblem(e) from e
    try:
        artifacts = run_backtest(cfg, out_dir=args.out, resume=not args.no_resume)
    except (ConfigError, DataError) as e:
        raise _ConfigProblem(e) from e
    n_failed = sum(r.failed for r in artifacts.records)
    print(f"run {artifacts.run_id}: {len(artifacts.records)} quarters, "
          f"{n_failed} flagged, artifacts in {args.out}")
    return 3 if n_failed else 0


def _cmd_summarize(args) -> int:
    import os
    from .harness import RunArtifacts, summarize
    from .report import render_figures
    try:
        artifacts = RunArtifacts.load(args.in_dir)
    except (OSError, KeyError, ValueError) as e:
        raise _ConfigProblem(f"cannot load artifacts from {args.in_dir}: {e}") from e
    tables = summarize(artifacts)
    for name, df in tables.items():
        path = os.path.join(args.in_dir, f"summary_{name}.csv")
        df.to_csv(path, index=False)
        print(f"wrote {path}")
    if not args.no_figures:
        for path in render_figures(artifacts, os.path.join(args.in_dir, "figures")):
            print(f"wrote {path}")
    if not tables["aggregate"].empty:
        row = tables["aggregate"].iloc[0]
        print(f"quarters={int(row['n_quarters'])} failed={int(row['n_failed'])} "
              f"frac_bpds_ge_bma={row['frac_bpds_ge_bma']:.3f} "
              f"mean_ess={row['mean_ess_mixture']:.3f}")
    return 0


def _cmd_simulate(args) -> int:
    import numpy as np
    from .data_io import DataError, SynthConfig, simulate_dgp
    d = _load_json(args.config)
    try:
        if d.get("columns"):
            d["columns"] = [tuple(c) for c in d["columns"]]
        cfg = SynthConfig(**{k: (np.asarray(v) if k in ("intercept", "coeffs", "shock_cov")
                                 else v) for k, v in d.items()})
        panel = simulate_dgp(cfg)
    except (DataError, TypeError, KeyError, ValueError) as e:
        raise _ConfigProblem(e) from e
    panel.to_frame().to_csv(args.out, index=False)
    print(f"wrote {args.out} ({panel.n_quarters} quarters, "
          f"{len(panel.columns)} series)")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    try:
        app = create_app(args.artifacts)
    except (OSError, KeyError, ValueError) as e:
        raise _ConfigProblem(f"cannot load artifacts: {e}") from e
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
