"""Report figures. Each function writes one PNG and returns its path."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return str(path)


def plot_allocation(alloc, prices, path, title="allocation") -> str:
    x = np.asarray(alloc, dtype=float)
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(8, 3.5), gridspec_kw={"width_ratios": [3, 2]})
    im = ax.imshow(x, cmap="viridis", aspect="auto")
    ax.set_xlabel("good")
    ax.set_ylabel("buyer")
    ax.set_xticks(range(x.shape[1]))
    ax.set_yticks(range(x.shape[0]))
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    bx.bar(range(len(prices)), prices, color="tab:orange")
    bx.set_xlabel("good")
    bx.set_ylabel("price")
    bx.set_xticks(range(len(prices)))
    return _save(fig, path)


def plot_convergence(history: dict, path) -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    res = np.asarray(history.get("kkt_residual", []), dtype=float)
    if res.size:
        it = np.arange(1, res.size + 1)
        ax.semilogy(it, np.maximum(res, 1e-18), label="KKT residual")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax2 = ax.twinx()
    obj = np.asarray(history.get("objective", []), dtype=float)
    if obj.size:
        ax2.plot(np.arange(1, obj.size + 1), obj, color="tab:green", label="objective")
    ax2.set_ylabel("Eisenberg-Gale objective")
    ax.set_title("proportional response")
    return _save(fig, path)


def _to_plane(p: np.ndarray) -> np.ndarray:
    """Barycentric coordinates on the triangle to the plane."""
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    return np.atleast_2d(p) @ corners


def plot_sperner(result, path, reference=None) -> str:
    """Barycenters of the fully labelled cells, round by round."""
    bary = np.array([h.barycenter for h in result.history])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    m = bary.shape[1]
    if m == 3:
        tri = _to_plane(np.eye(3))
        ax.fill(tri[:, 0], tri[:, 1], facecolor="none", edgecolor="black")
        pts = _to_plane(bary)
        ax.plot(pts[:, 0], pts[:, 1], "o-", ms=3)
        if reference is not None:
            r = _to_plane(np.asarray(reference))[0]
            ax.plot(r[0], r[1], "r*", ms=10, label="reference")
            ax.legend()
        ax.set_aspect("equal")
        ax.axis("off")
    else:
        ks = [h.k for h in result.history]
        for j in range(m):
            ax.semilogx(ks, bary[:, j], "o-", ms=3, label=f"p{j}")
        ax.set_xlabel("resolution k")
        ax.set_ylabel("barycenter price")
        ax.legend()
    ax.set_title("fully labelled cell")
    return _save(fig, path)


def plot_candidates(candidates, path, top: int = 30) -> str:
    shown = candidates[:top]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(shown)), [c.residual for c in shown])
    ax.set_xlabel("candidate rank")
    ax.set_ylabel("clearing residual")
    ax.set_title("snob price search")
    return _save(fig, path)


def plot_snob_objective(grid_points: int, path, budget: float = 1.0) -> str:
    """Planner objective (x^2 + y^2) / (x + y) of the one-good market."""
    t = np.linspace(0.0, 1.0, grid_points)
    x, y = np.meshgrid(t, t)
    s = x + y
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(s > 0, (x**2 + y**2) / np.where(s > 0, s, 1.0), 0.0)
    val = np.where((s <= 1.0 + 1e-12) & (x <= budget + 1e-12) & (y <= budget + 1e-12), val, np.nan)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.pcolormesh(x, y, val, shading="auto", cmap="magma")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("buyer 1 holding")
    ax.set_ylabel("buyer 2 holding")
    ax.set_title("snob planner objective")
    return _save(fig, path)
