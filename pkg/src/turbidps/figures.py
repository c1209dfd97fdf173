"""Matplotlib figure rendering for run reports; all output goes to files."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_error_curve(metrics, path, gt_oracle=None):
    """Per-iteration mean angular error, with the GT-oracle floor if known."""
    iters = [m.iteration for m in metrics]
    errs = [m.error_vs_gt_deg for m in metrics]
    plt.figure(figsize=(5.5, 3.6))
    plt.plot(iters, errs, marker="o", linewidth=2, label="pipeline")
    if gt_oracle is not None:
        plt.axhline(gt_oracle, color="gray", linestyle="--",
                    label=f"GT oracle {gt_oracle:.2f}°")
    plt.xlabel("Iteration")
    plt.ylabel("Mean angular error (deg)")
    plt.grid(alpha=0.4)
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=160)
    plt.close()


def save_heatmap(image, path, title, mask=None, cmap="viridis", unit=""):
    data = np.array(image, dtype=float)
    if mask is not None:
        data = np.where(mask, data, np.nan)
    plt.figure(figsize=(4.6, 4.0))
    im = plt.imshow(data, cmap=cmap)
    plt.title(title)
    plt.colorbar(im, shrink=0.85, label=unit)
    plt.axis("off")
    plt.tight_layout()
    plt.savefig(path, dpi=160)
    plt.close()


def save_normal_map(normals, path, title, mask=None):
    rgb = np.clip((np.asarray(normals) + 1.0) / 2.0, 0.0, 1.0)
    if mask is not None:
        rgb = np.where(mask[..., None], rgb, 1.0)
    plt.figure(figsize=(4.2, 4.0))
    plt.imshow(rgb)
    plt.title(title)
    plt.axis("off")
    plt.tight_layout()
    plt.savefig(path, dpi=160)
    plt.close()


def save_image_grid(images, titles, path, suptitle="", cmap="gray"):
    n = len(images)
    cols = min(4, n)
    rows = (n + cols - 1) // cols
    plt.figure(figsize=(3.2 * cols, 3.0 * rows))
    for i, (img, title) in enumerate(zip(images, titles)):
        ax = plt.subplot(rows, cols, i + 1)
        ax.imshow(img, cmap=cmap)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    if suptitle:
        plt.suptitle(suptitle)
    plt.tight_layout()
    plt.savefig(path, dpi=140)
    plt.close()


def save_linearization_gap(mu, gaps_by_t, path):
    """Measured gap between the hemispherical table and its linearization."""
    plt.figure(figsize=(5.5, 3.6))
    for t, gap in gaps_by_t.items():
        plt.plot(mu, gap, marker=".", label=f"T = {t}")
    plt.xlabel("normal-source cosine")
    plt.ylabel("absolute gap")
    plt.grid(alpha=0.4)
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=160)
    plt.close()
