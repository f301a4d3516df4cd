"""Render run-trajectory figures to files alongside the summary tables."""
from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .harness import RunArtifacts


def render_figures(artifacts: RunArtifacts, out_dir: str) -> list[str]:
    """Write the standard diagnostic figures; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    ok = [r for r in artifacts.records if not r.failed]
    if not ok:
        return []
    paths = []
    paths.append(_decisions_figure(artifacts, ok, out_dir))
    paths.append(_weights_figure(artifacts, ok, out_dir))
    paths.append(_tau_figure(artifacts, ok, out_dir))
    paths.append(_ess_figure(artifacts, ok, out_dir))
    paths.append(_utility_figure(ok, out_dir))
    return paths


def _quarters(ok) -> list[str]:
    return [r.quarter for r in ok]


def _thin_ticks(ax, labels, max_ticks=12):
    step = max(1, len(labels) // max_ticks)
    ax.set_xticks(range(0, len(labels), step))
    ax.set_xticklabels(labels[::step], rotation=45, ha="right", fontsize=7)


def _decisions_figure(artifacts, ok, out_dir) -> str:
    fig, ax = plt.subplots(figsize=(9, 4.5))
    qs = _quarters(ok)
    idx = np.arange(len(ok))
    ax.plot(idx, [r.x_prev for r in ok], "k-", lw=1.8, label="realized rate")
    ax.plot(idx, [r.x_bpds[0] for r in ok], "C0-", lw=1.2, label="synthesis, 1q ahead")
    ax.plot(idx, [r.x_bma[0] for r in ok], "C3--", lw=1.2, label="model averaging, 1q ahead")
    k = artifacts.config.k
    for i, r in enumerate(ok):
        ax.plot(i + np.arange(1, k + 1), r.x_bpds, "C0-", alpha=0.25, lw=0.6)
        ax.plot(i + np.arange(1, k + 1), r.x_bma, "C3--", alpha=0.2, lw=0.6)
    ax.set_ylabel("policy rate (%)")
    ax.legend(loc="best", fontsize=8)
    _thin_ticks(ax, qs)
    fig.tight_layout()
    path = os.path.join(out_dir, "decisions.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _weights_figure(artifacts, ok, out_dir) -> str:
    names = ["baseline"] + [m.name for m in artifacts.config.models]
    panels = [("pi_prior", "prior"), ("pi_x", "decision-conditioned"),
              ("pi_tilde", "tilted"), ("bma_weights", "model averaging")]
    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True)
    idx = np.arange(len(ok))
    for ax, (attr, title) in zip(axes.ravel(), panels):
        series = np.array([getattr(r, attr) for r in ok])
        labels = names if series.shape[1] == len(names) else names[1:]
        ax.stackplot(idx, series.T, labels=labels, alpha=0.85)
        ax.set_ylim(0, 1)
        ax.set_title(title, fontsize=9)
        _thin_ticks(ax, _quarters(ok))
    axes[0, 0].legend(fontsize=7, loc="upper left")
    fig.tight_layout()
    path = os.path.join(out_dir, "weights.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _tau_figure(artifacts, ok, out_dir) -> str:
    tau = np.array([r.tau for r in ok])
    fig, ax = plt.subplots(figsize=(9, 4))
    vmax = max(float(np.max(np.abs(tau))), 1e-12)
    im = ax.imshow(tau.T, aspect="auto", cmap="RdBu_r", vmin=-vmax, vmax=vmax)
    ax.set_ylabel("tilt coordinate (inflation/growth by horizon)")
    fig.colorbar(im, ax=ax, shrink=0.85)
    _thin_ticks(ax, _quarters(ok))
    fig.tight_layout()
    path = os.path.join(out_dir, "tau.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _ess_figure(artifacts, ok, out_dir) -> str:
    names = ["baseline"] + [m.name for m in artifacts.config.models]
    fig, ax = plt.subplots(figsize=(9, 4))
    idx = np.arange(len(ok))
    ax.plot(idx, [r.ess_mixture for r in ok], "k-", lw=1.8, label="mixture")
    per = np.array([r.ess_models for r in ok])
    for j, name in enumerate(names):
        ax.plot(idx, per[:, j], lw=0.9, alpha=0.8, label=name)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("effective sample size (fraction)")
    ax.legend(fontsize=8)
    _thin_ticks(ax, _quarters(ok))
    fig.tight_layout()
    path = os.path.join(out_dir, "ess.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _utility_figure(ok, out_dir) -> str:
    fig, ax = plt.subplots(figsize=(9, 4))
    idx = np.arange(len(ok))
    ax.plot(idx, [r.eu_bpds for r in ok], "C0-", label="synthesis")
    ax.plot(idx, [r.eu_bma for r in ok], "C3--", label="model averaging")
    ax.plot(idx, [r.eu_initial for r in ok], "C7:", label="initial mixture")
    ax.set_ylabel("expected utility")
    ax.legend(fontsize=8)
    _thin_ticks(ax, _quarters(ok))
    fig.tight_layout()
    path = os.path.join(out_dir, "expected_utility.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
