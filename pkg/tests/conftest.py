import numpy as np
import pytest

from bpds.data_io import SynthConfig, Transform
from bpds.harness import ModelConfig, RunConfig


def macro_dgp(length=70, seed=7) -> SynthConfig:
    """5-variable quarterly DGP: inflation, growth, rate (+ spread, investment),
    integrated into a level panel (prices and GDP exponentiate their rates)."""
    A1 = np.array([
        [0.55, 0.05, -0.10, 0.00, 0.00],
        [0.00, 0.45, -0.12, 0.08, 0.00],
        [0.12, 0.05, 0.70, 0.00, 0.00],
        [0.00, 0.00, 0.00, 0.75, 0.00],
        [0.00, 0.10, 0.00, 0.00, 0.60],
    ])
    mu = np.array([2.0, 2.5, 4.0, 2.0, 20.0])
    intercept = (np.eye(5) - A1) @ mu
    shock_cov = np.diag([1.0, 1.5, 0.5, 0.3, 1.0])
    return SynthConfig(
        n=5, p=1, intercept=intercept, coeffs=A1[None], shock_cov=shock_cov,
        length=length, seed=seed,
        columns=[("PRICES", "logdiff", 50.0), ("GDP", "logdiff", 120.0),
                 ("RATE", "level"), ("SPREAD", "level"), ("INVEST", "level")])


def macro_transforms() -> list[Transform]:
    """Model variables in annualized-rate space (stationary), recovered from
    the level panel: inflation and growth are 400*dlog of prices and GDP."""
    return [Transform("GROWTH", "logdiff", "GDP"),
            Transform("INFL", "logdiff", "PRICES"),
            Transform("RATE", "level", "RATE"),
            Transform("SPREAD", "level", "SPREAD"),
            Transform("INVEST", "level", "INVEST")]


def model_roster(p=2) -> list[ModelConfig]:
    return [
        ModelConfig(name="m3", columns=["GROWTH", "INFL", "RATE"], p=p,
                    output_col="GROWTH", price_col="INFL", rate_col="RATE",
                    diff_outcomes=False),
        ModelConfig(name="m5",
                    columns=["GROWTH", "INFL", "RATE", "SPREAD", "INVEST"], p=p,
                    output_col="GROWTH", price_col="INFL", rate_col="RATE",
                    diff_outcomes=False),
    ]


def mini_config(**overrides) -> RunConfig:
    kw = dict(
        models=model_roster(), k=4, synth=macro_dgp(), transforms=macro_transforms(),
        start=50, n_quarters=4, n_draws=100, n_baseline=100,
        swarm_particles=8, swarm_iterations=6, refine_budget=15, model_budget=50,
        master_seed=123,
    )
    kw.update(overrides)
    return RunConfig(**kw)


@pytest.fixture(scope="session")
def mini_run_dir(tmp_path_factory):
    """One small persisted run shared by the service and summary tests."""
    from bpds.harness import run_backtest
    out = tmp_path_factory.mktemp("mini_run")
    cfg = mini_config(n_quarters=3)
    artifacts = run_backtest(cfg, out_dir=str(out))
    assert not any(r.failed for r in artifacts.records)
    return str(out), artifacts
