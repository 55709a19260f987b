"""Figure rendering for run reports (PNG files next to the numeric CSV/JSON)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ArtifactIOError  # noqa: E402


def _save(fig, path) -> None:
    try:
        fig.savefig(path, dpi=120, metadata={"Software": None})
    except OSError as exc:
        raise ArtifactIOError(f"cannot write figure ({exc.strerror})", path) from exc
    finally:
        plt.close(fig)


def plot_heatmap(sweep, target: str, path, eps: float = 0.5) -> None:
    """Blocks x singular-vector rank of max |cos| to the pre-trained basis."""
    grid = sweep.s_max_grid(target)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    im = ax.imshow(grid, aspect="auto", cmap="RdYlGn_r", vmin=0.0, vmax=1.0, origin="lower",
                   extent=(0.5, grid.shape[1] + 0.5, -0.5, grid.shape[0] - 0.5))
    ax.set_xlabel("singular vector rank")
    ax.set_ylabel("block")
    ax.set_title(f"W_{target}: max |cos| to pre-trained vectors (intruder < {eps})")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(fig, path)


def plot_spectrum(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(1, len(report.s_text) + 1), report.s_text, "o-", ms=3, label=f"text (R={report.r_text:g})")
    ax.plot(np.arange(1, len(report.s_cond) + 1), report.s_cond, "s-", ms=3, label=f"cond (R={report.r_cond:g})")
    ax.axhline(report.extra.get("tau", 0.1), color="gray", lw=0.8, ls="--")
    ax.set_xlabel("index")
    ax.set_ylabel("normalised singular value")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_drift(rows: list, path) -> None:
    """SSF and SS-FD against step with the self-baseline drawn as a reference line."""
    steps = [int(r["step"]) for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    if rows:
        a1.plot(steps, [float(r["ssf"]) for r in rows], "o-")
        a1.axhline(float(rows[0]["ssf_base"]), color="gray", ls="--", label="baseline")
        a2.plot(steps, [float(r["ssfd"]) for r in rows], "o-")
        a2.axhline(float(rows[0]["ssfd_base"]), color="gray", ls="--", label="baseline")
        a1.legend()
    a1.set_title("SSF")
    a2.set_title("SS-FD")
    for a in (a1, a2):
        a.set_xlabel("step")
    fig.tight_layout()
    _save(fig, path)
