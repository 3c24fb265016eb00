"""Grayscale magnitude/phase montages for reconstruction reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import align_phase  # noqa: E402


def montage(images, path, truth=None, mask=None, scores=None, title=None):
    """Save a two-row figure: magnitude on top, phase below, one column per image.

    Each reconstruction is rotated by its best global phase against ``truth``
    so the phase panels are comparable. ``scores`` maps labels to NRMSE.
    """
    labels = list(images)
    if truth is not None:
        labels = ["truth"] + labels
        images = {"truth": truth, **images}
    n = len(labels)
    fig, axes = plt.subplots(2, n, figsize=(1.8 * n, 3.8), squeeze=False)
    for j, label in enumerate(labels):
        img = np.asarray(images[label], dtype=np.complex128)
        if truth is not None and label != "truth" and np.any(img):
            img = img * np.exp(-1j * align_phase(img, truth, mask))
        shown = img if mask is None else np.where(mask, img, 0)
        axes[0, j].imshow(np.abs(shown), cmap="gray", vmin=0, vmax=1.0)
        axes[1, j].imshow(np.angle(shown), cmap="gray", vmin=-np.pi, vmax=np.pi)
        axes[0, j].set_title(label, fontsize=8)
        if scores and label in scores:
            axes[1, j].set_xlabel(f"{scores[label]:.3f}", fontsize=8)
        for ax in axes[:, j]:
            ax.set_xticks([])
            ax.set_yticks([])
    axes[0, 0].set_ylabel("magnitude", fontsize=8)
    axes[1, 0].set_ylabel("phase", fontsize=8)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
