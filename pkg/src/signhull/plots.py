"""Static figure emission: dataset scatters and loss curves.

matplotlib is an optional dependency; it is imported lazily so the rest
of the package works without it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError
from .hull import LossParams, phi_loss
from .svm import SvmDataset


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ValidationError(
            "plot emission needs matplotlib (install the 'plots' extra)")
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def dataset_scatter(ds: SvmDataset, path, direction=None,
                    title: str | None = None) -> Path:
    """First two feature coordinates, one marker per class.  When the
    generating direction is known its decision line d'x = 0 is drawn."""
    if ds.p < 2:
        raise ValidationError("scatter plots need at least two features")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    pos = ds.labels > 0
    ax.scatter(ds.features[pos, 0], ds.features[pos, 1], marker="o",
               s=18, label="+1", color="tab:blue")
    ax.scatter(ds.features[~pos, 0], ds.features[~pos, 1], marker="x",
               s=18, label="-1", color="tab:red")
    if direction is not None:
        d = np.asarray(direction, dtype=float)
        if d.shape != (ds.p,):
            raise ValidationError("direction length must match features")
        span = float(np.abs(ds.features[:, :2]).max()) or 1.0
        # the boundary is the line orthogonal to d through the origin
        normal = d[:2] / (np.linalg.norm(d[:2]) or 1.0)
        tangent = np.array([-normal[1], normal[0]])
        pts = np.outer([-1.5 * span, 1.5 * span], tangent)
        ax.plot(pts[:, 0], pts[:, 1], "k--", linewidth=1,
                label="generating boundary")
    ax.set_xlabel("feature 1")
    ax.set_ylabel("feature 2")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loss_curve(params_list, path, x_lo: float = -2.0, x_hi: float = 3.0,
               samples: int = 600) -> Path:
    """The capped quadratic loss for each (d, lam) pair on one axis."""
    if not params_list:
        raise ValidationError("at least one parameter pair required")
    plt = _pyplot()
    xs = np.linspace(x_lo, x_hi, samples)
    fig, ax = plt.subplots(figsize=(6, 4))
    for params in params_list:
        if not isinstance(params, LossParams):
            params = LossParams(*params)
        ys = [phi_loss(float(x), params) for x in xs]
        ax.plot(xs, ys, label=f"d={params.d:g}, lam={params.lam:g}")
    ax.set_xlabel("margin violation x")
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
