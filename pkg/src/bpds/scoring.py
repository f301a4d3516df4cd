"""Decision-maker utility and the bounded per-horizon score vector.

Both work in annualized %: inflation target y*, growth target g*, and a rate
path whose step-to-step changes are penalized (rate smoothing). Scores are
sums of two unit-bounded Gaussian kernels, so every entry lies in (0, 2] and
the exponentially tilted mixture stays integrable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def bandwidth(d: float, eps: float) -> float:
    """z = d / sqrt(-2 ln eps): a deviation of d earns proximity score eps."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"reference score level must be in (0, 1), got {eps}")
    if d <= 0:
        raise ValueError(f"reference deviation must be > 0, got {d}")
    return d / np.sqrt(-2.0 * np.log(eps))


@dataclass(frozen=True)
class UtilitySpec:
    """Quadratic dual-mandate utility with rate smoothing over k quarters."""

    k: int
    x_prev: float
    theta: float = 0.5
    y_star: float = 2.0
    g_star: float = 2.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("horizon count k must be >= 1")


def rate_changes(x: np.ndarray, x_prev: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.diff(x, prepend=x_prev, axis=-1)


def utility(y: np.ndarray, g: np.ndarray, x: np.ndarray, spec: UtilitySpec) -> np.ndarray:
    """-sum_h [theta (y_h - y*)^2 + (1-theta)(g_h - g*)^2 + (x_h - x_{h-1})^2].

    Broadcasts over leading draw dimensions of y and g; x is the (fixed)
    decision path. Zero iff both targets are met exactly and the path is flat.
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    dx = rate_changes(x, spec.x_prev)
    terms = (spec.theta * (y - spec.y_star) ** 2
             + (1.0 - spec.theta) * (g - spec.g_star) ** 2
             + dx ** 2)
    return -np.sum(terms, axis=-1)


@dataclass(frozen=True)
class ScoreSpec:
    """Bounded score configuration; bandwidths derive from (d, eps) pairs."""

    k: int
    eps: float = 0.4
    d_y: float = 2.0
    d_g: float = 2.0
    d_x: float = 1.0
    y_star: float = 2.0
    g_star: float = 2.5
    z_y: float = field(init=False)
    z_g: float = field(init=False)
    z_x: float = field(init=False)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("horizon count k must be >= 1")
        object.__setattr__(self, "z_y", bandwidth(self.d_y, self.eps))
        object.__setattr__(self, "z_g", bandwidth(self.d_g, self.eps))
        object.__setattr__(self, "z_x", bandwidth(self.d_x, self.eps))

    @property
    def dim(self) -> int:
        return 2 * self.k


def score_vector(y: np.ndarray, g: np.ndarray, x: np.ndarray, spec: ScoreSpec,
                 x_prev: float) -> np.ndarray:
    """Per-horizon score pairs, interleaved (s_1(y), s_1(g), ..., s_k(y), s_k(g)).

    s_h(y) = exp{-(y_h - y*)^2 / 2 z_y^2} + exp{-(x_h - x_{h-1})^2 / 2 z_x^2},
    and likewise for growth with z_g; the smoothing term is shared. y and g
    broadcast over leading draw dimensions; x is the decision path the score
    is evaluated at (a model's own recommended path, typically).
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    if y.shape[-1] != spec.k or g.shape[-1] != spec.k:
        raise ValueError(f"need k={spec.k} horizons, got {y.shape[-1]} and {g.shape[-1]}")
    smooth = np.exp(-rate_changes(x, x_prev) ** 2 / (2.0 * spec.z_x ** 2))
    sy = np.exp(-((y - spec.y_star) ** 2) / (2.0 * spec.z_y ** 2)) + smooth
    sg = np.exp(-((g - spec.g_star) ** 2) / (2.0 * spec.z_g ** 2)) + smooth
    out = np.empty(y.shape[:-1] + (2 * spec.k,))
    out[..., 0::2] = sy
    out[..., 1::2] = sg
    return out
