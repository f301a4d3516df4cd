"""Quarterly panel ingestion, variable transforms, synthetic data, run persistence.

Conventions: quarters are labelled "1973Q1"; log-level columns are stored as
100*ln(level) so that 4*diff is an annualized percent rate; annualized
log-difference columns are 400*ln(x_t/x_{t-1}).
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


class DataError(ValueError):
    """Raised for malformed input panels or transform domain violations."""


def parse_quarter(label: str) -> int:
    """Map '1973Q1' to a serial quarter index (year*4 + quarter-1)."""
    m = _QUARTER_RE.match(str(label).strip())
    if not m:
        raise DataError(f"unparseable quarter label {label!r} (expected e.g. 1973Q1)")
    return int(m.group(1)) * 4 + int(m.group(2)) - 1


def format_quarter(serial: int) -> str:
    return f"{serial // 4}Q{serial % 4 + 1}"


@dataclass
class MacroPanel:
    """Gap-free quarterly panel of named level series."""

    dates: list[str]
    values: np.ndarray  # (T, n_cols), float64
    columns: list[str]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("panel values must be 2-d (quarters x columns)")
        if len(self.dates) != self.values.shape[0]:
            raise DataError("dates and value rows disagree in length")
        if len(self.columns) != self.values.shape[1]:
            raise DataError("column names and value columns disagree in length")
        if not np.all(np.isfinite(self.values)):
            t, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"missing or non-finite value at {self.dates[t]}, column {self.columns[c]}")
        serials = [parse_quarter(d) for d in self.dates]
        for i in range(1, len(serials)):
            if serials[i] != serials[i - 1] + 1:
                raise DataError(f"date gap at {format_quarter(serials[i - 1] + 1)}")

    @property
    def n_quarters(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def head(self, n: int) -> "MacroPanel":
        return MacroPanel(self.dates[:n], self.values[:n].copy(), list(self.columns))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.columns)
        df.insert(0, "quarter", self.dates)
        return df


def load_quarterly_csv(path: str, schema: dict[str, str] | list[str] | None = None) -> MacroPanel:
    """Read a quarterly CSV (column 1 = ISO quarter, remaining columns = levels).

    ``schema`` maps panel column names to CSV headers (dict) or lists the CSV
    headers to keep (list); None keeps every column under its CSV header.
    """
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    df = pd.read_csv(path, dtype=str)
    if df.shape[1] < 2:
        raise DataError("quarterly CSV needs a date column plus at least one series")
    date_col = df.columns[0]
    if schema is None:
        mapping = {c: c for c in df.columns[1:]}
    elif isinstance(schema, dict):
        mapping = dict(schema)
    else:
        mapping = {c: c for c in schema}
    for name, header in mapping.items():
        if header not in df.columns:
            raise DataError(f"missing column {header!r} in {path}")
    dates = [d.strip() for d in df[date_col].tolist()]
    cols = list(mapping.keys())
    values = np.empty((len(dates), len(cols)))
    for j, name in enumerate(cols):
        raw = df[mapping[name]]
        for i, cell in enumerate(raw):
            try:
                values[i, j] = float(cell)
            except (TypeError, ValueError):
                raise DataError(
                    f"unparseable value {cell!r} at row {dates[i]}, column {mapping[name]}"
                ) from None
    return MacroPanel(dates, values, cols)


# ---------------------------------------------------------------------------
# Transforms


@dataclass(frozen=True)
class Transform:
    """One declared column transform.

    kind:
      level    — copy as-is
      log      — 100*ln(source)
      logdiff  — 400*ln(x_t/x_{t-1}) (annualized %; consumes one leading row)
      ratio    — 100 * source / denom
    """

    name: str
    kind: str
    source: str
    denom: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("level", "log", "logdiff", "ratio"):
            raise DataError(f"unknown transform kind {self.kind!r}")
        if self.kind == "ratio" and self.denom is None:
            raise DataError("ratio transform needs a denominator column")


@dataclass
class ModelDataset:
    """Transformed observation matrix plus the log of what produced it."""

    dates: list[str]
    data: np.ndarray  # (T, n_vars)
    names: list[str]
    transforms: list[Transform]
    initial_levels: dict[str, float] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.names.index(name)]

    def select(self, names: list[str]) -> "ModelDataset":
        idx = [self.names.index(n) for n in names]
        keep = [t for t in self.transforms if t.name in names]
        return ModelDataset(self.dates, self.data[:, idx].copy(), list(names), keep,
                            dict(self.initial_levels))

    def head(self, n: int) -> "ModelDataset":
        return ModelDataset(self.dates[:n], self.data[:n].copy(), list(self.names),
                            list(self.transforms), dict(self.initial_levels))


def transform_panel(panel: MacroPanel, spec: list[Transform]) -> ModelDataset:
    """Apply declared transforms; differencing consumes the first panel row."""
    for t in spec:
        if t.source not in panel.columns:
            raise DataError(f"transform {t.name}: source column {t.source!r} not in panel")
        if t.denom is not None and t.denom not in panel.columns:
            raise DataError(f"transform {t.name}: denominator column {t.denom!r} not in panel")
    drop_first = any(t.kind == "logdiff" for t in spec)
    start = 1 if drop_first else 0
    out = np.empty((panel.n_quarters - start, len(spec)))
    initial = {}
    for j, t in enumerate(spec):
        x = panel.column(t.source)
        if t.kind == "level":
            out[:, j] = x[start:]
        elif t.kind == "log":
            if np.any(x <= 0):
                bad = int(np.argmax(x <= 0))
                raise DataError(f"log transform {t.name}: non-positive level at {panel.dates[bad]}")
            out[:, j] = 100.0 * np.log(x[start:])
            initial[t.name] = float(x[0])
        elif t.kind == "logdiff":
            if np.any(x <= 0):
                bad = int(np.argmax(x <= 0))
                raise DataError(f"logdiff transform {t.name}: non-positive level at {panel.dates[bad]}")
            out[:, j] = 400.0 * np.diff(np.log(x))  # start == 1 whenever a logdiff is declared
            initial[t.name] = float(x[0])
        elif t.kind == "ratio":
            out[:, j] = 100.0 * x[start:] / panel.column(t.denom)[start:]
    if not np.all(np.isfinite(out)):
        raise DataError("transforms produced non-finite values (mixed logdiff without row drop?)")
    return ModelDataset(panel.dates[start:], out, [t.name for t in spec], list(spec), initial)


def invert_transforms(ds: ModelDataset) -> dict[str, np.ndarray]:
    """Recover level series for the invertible transform kinds (level, log, logdiff)."""
    levels: dict[str, np.ndarray] = {}
    for j, t in enumerate(ds.transforms):
        x = ds.data[:, ds.names.index(t.name)]
        if t.kind == "level":
            levels[t.name] = x.copy()
        elif t.kind == "log":
            levels[t.name] = np.exp(x / 100.0)
        elif t.kind == "logdiff":
            base = ds.initial_levels[t.name]
            levels[t.name] = base * np.exp(np.cumsum(x) / 400.0)
    return levels


# ---------------------------------------------------------------------------
# Synthetic data generation


def companion_matrix(coeffs: np.ndarray) -> np.ndarray:
    """Companion form of lag matrices stacked as (p, n, n)."""
    p, n, _ = coeffs.shape
    comp = np.zeros((n * p, n * p))
    comp[:n] = np.concatenate([coeffs[i] for i in range(p)], axis=1)
    if p > 1:
        comp[n:, :-n] = np.eye(n * (p - 1))
    return comp


@dataclass
class SynthConfig:
    """A known VAR(p) data-generating process for benchmark panels.

    ``columns`` declares how each simulated variable enters the output panel:
    ("NAME", "level") passes through; ("NAME", "logdiff", base) treats the
    variable as an annualized-% growth rate and integrates it into a level
    starting from ``base``.
    """

    n: int
    p: int
    intercept: np.ndarray          # (n,)
    coeffs: np.ndarray             # (p, n, n)
    shock_cov: np.ndarray          # (n, n)
    length: int
    seed: int
    burnin: int = 200
    columns: list[tuple] | None = None
    start: str = "1960Q1"

    def __post_init__(self) -> None:
        self.intercept = np.asarray(self.intercept, dtype=float).reshape(self.n)
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(self.p, self.n, self.n)
        self.shock_cov = np.asarray(self.shock_cov, dtype=float).reshape(self.n, self.n)
        rho = np.max(np.abs(np.linalg.eigvals(companion_matrix(self.coeffs))))
        if rho >= 1.0:
            raise DataError(f"unstable DGP: companion spectral radius {rho:.4f} >= 1")


def simulate_dgp(cfg: SynthConfig) -> MacroPanel:
    """Simulate the configured VAR and assemble a level panel (seed-reproducible)."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n, p = cfg.n, cfg.p
    total = cfg.burnin + cfg.length
    chol = np.linalg.cholesky(cfg.shock_cov)
    # start at the DGP stationary mean
    comp = companion_matrix(cfg.coeffs)
    mean = np.linalg.solve(np.eye(n * p) - comp, np.tile(cfg.intercept, p))[:n]
    y = np.tile(mean, (p, 1))
    shocks = rng.standard_normal((total, n)) @ chol.T
    sims = np.empty((total, n))
    buf = y[::-1].copy()  # buf[0] = most recent
    for t in range(total):
        nxt = cfg.intercept + shocks[t]
        for j in range(p):
            nxt = nxt + cfg.coeffs[j] @ buf[j]
        sims[t] = nxt
        buf = np.vstack([nxt, buf[:-1]])
    sims = sims[cfg.burnin:]
    cols = cfg.columns or [(f"V{i + 1}", "level") for i in range(n)]
    if len(cols) != n:
        raise DataError("SynthConfig.columns must declare one entry per variable")
    values = np.empty((cfg.length, n))
    names = []
    for j, col in enumerate(cols):
        name, mode = col[0], col[1]
        names.append(name)
        if mode == "level":
            values[:, j] = sims[:, j]
        elif mode == "logdiff":
            base = float(col[2]) if len(col) > 2 else 100.0
            values[:, j] = base * np.exp(np.cumsum(sims[:, j]) / 400.0)
        else:
            raise DataError(f"unknown synth column mode {mode!r}")
    serial0 = parse_quarter(cfg.start)
    dates = [format_quarter(serial0 + t) for t in range(cfg.length)]
    return MacroPanel(dates, values, names)


# ---------------------------------------------------------------------------
# Run persistence (manifest JSON + CSV trajectory tables)


def write_run_dir(out_dir: str, manifest: dict, tables: dict[str, pd.DataFrame]) -> None:
    """Persist a manifest and named trajectory tables; writes are atomic per file."""
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name, df in tables.items():
        _atomic_write(os.path.join(out_dir, f"{name}.csv"), df.to_csv(index=False))


def read_run_dir(run_dir: str) -> tuple[dict, dict[str, pd.DataFrame]]:
    with open(os.path.join(run_dir, "manifest.json")) as f:
        manifest = json.load(f)
    tables = {}
    for fn in sorted(os.listdir(run_dir)):
        if fn.endswith(".csv"):
            tables[fn[:-4]] = pd.read_csv(os.path.join(run_dir, fn),
                                          float_precision="round_trip")
    return manifest, tables


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)
