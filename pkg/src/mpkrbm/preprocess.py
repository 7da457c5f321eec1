"""Patch extraction, PCA whitening and per-patch visible normalization.

Whitening is PCA with dimension reduction: patches are centered, projected
onto the leading eigenvectors of the sample covariance (enough to retain a
target variance fraction) and variance-equalized. The inverse map takes
whitened coordinates back to the raw pixel domain for filter visualization.
"""

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DataError, ShapeError

EPS_NORM = 1e-8
# eigenvalues below this multiple of the largest are dropped outright
EIG_FLOOR_RATIO = 1e-9


def extract_patches(image, patch_size, count, seed):
    """Extract `count` square patches at uniformly random valid offsets.

    `image` is (H, W) or (H, W, 3); each returned row is the C-order
    flattening of one patch_size x patch_size x channels window.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"expected (H, W) or (H, W, 3) image, got {image.shape}")
    h, w, ch = img.shape
    if h < patch_size or w < patch_size:
        raise ShapeError(f"image {h}x{w} smaller than patch size {patch_size}")
    dim = patch_size * patch_size * ch
    out = np.empty((count, dim))
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - patch_size + 1, size=count)
    cols = rng.integers(0, w - patch_size + 1, size=count)
    for i in range(count):
        window = img[rows[i]:rows[i] + patch_size, cols[i]:cols[i] + patch_size, :]
        out[i] = window.reshape(-1)
    return out


@dataclass
class WhiteningTransform:
    mean: np.ndarray            # (D_raw,)
    forward: np.ndarray         # (D, D_raw)
    inverse: np.ndarray         # (D_raw, D)
    variance_fraction: float    # fraction of raw variance actually retained
    patch_size: int = 0         # display metadata, 0 when unknown
    channels: int = 0

    @property
    def n_components(self):
        return self.forward.shape[0]

    def apply(self, patches):
        return (np.atleast_2d(patches) - self.mean) @ self.forward.T

    def unapply(self, whitened):
        return np.atleast_2d(whitened) @ self.inverse.T + self.mean

    def save(self, path):
        container.write_container(path, {
            "mean": self.mean,
            "forward": self.forward,
            "inverse": self.inverse,
            "variance_fraction": np.float64(self.variance_fraction),
            "patch_size": np.float64(self.patch_size),
            "channels": np.float64(self.channels),
        })

    @classmethod
    def load(cls, path):
        t = container.read_container(path)
        return cls(
            mean=t["mean"],
            forward=t["forward"],
            inverse=t["inverse"],
            variance_fraction=float(t["variance_fraction"]),
            patch_size=int(t.get("patch_size", 0.0)),
            channels=int(t.get("channels", 0.0)),
        )


def fit_whitening(patches, variance_fraction, patch_size=0, channels=0):
    """Fit a PCA whitening transform retaining >= `variance_fraction` of the
    total patch variance (eigenvalues below the numerical floor are dropped
    regardless of the requested fraction)."""
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("whitening needs at least 2 patches")
    if not 0.0 < variance_fraction <= 1.0:
        raise DataError(f"variance_fraction must be in (0, 1], got {variance_fraction}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    eigvals = np.maximum(eigvals, 0.0)

    total = eigvals.sum()
    if total <= 0:
        raise DataError("patches have zero variance, cannot whiten")
    floor = EIG_FLOOR_RATIO * eigvals[0]
    cumulative = np.cumsum(eigvals) / total
    keep = int(np.searchsorted(cumulative, variance_fraction) + 1)
    keep = min(keep, int(np.sum(eigvals > floor)))
    if keep == 0:
        raise DataError("no eigenvalue above the numerical floor, data is rank deficient")

    lam = eigvals[:keep]
    E = eigvecs[:, :keep]
    forward = (E / np.sqrt(lam)).T          # (D, D_raw)
    inverse = E * np.sqrt(lam)              # (D_raw, D)
    return WhiteningTransform(
        mean=mean,
        forward=forward,
        inverse=inverse,
        variance_fraction=float(lam.sum() / total),
        patch_size=patch_size,
        channels=channels,
    )


def normalize_visible(v):
    """Scale to unit L2-norm with an epsilon floor: v / max(||v||, 1e-8).

    Accepts a single vector or a batch of row vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, EPS_NORM)
