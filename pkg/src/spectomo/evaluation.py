"""Column matching and image-quality metrics for reconstructed maps.

A reconstruction may recover the materials in any column order, so maps
are first paired with the ground truth by a greedy minimum-error matching,
then scored per pair.

Metric conventions (deliberately literal):

* ``mse`` is the *squared Euclidean norm* of the difference, without
  dividing by the pixel count; pass ``normalized=True`` for the mean
  variant.
* ``psnr`` uses the squared norm in the denominator accordingly, with the
  peak taken from the reference image.  A zero-error pair returns ``inf``;
  CSV writers should saturate that at :data:`PSNR_SATURATION_DB`.
* ``ssim`` is global (whole-image means, variances and cross-covariance,
  no sliding window) with the usual stabilizers for unit dynamic range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: value written to CSV in place of an infinite PSNR
PSNR_SATURATION_DB = 99.0

_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def mse(x: np.ndarray, y: np.ndarray, normalized: bool = False) -> float:
    x, y = _pair(x, y)
    err = float(np.sum((x - y) ** 2))
    return err / x.size if normalized else err


def psnr(x: np.ndarray, y: np.ndarray, normalized: bool = False) -> float:
    """Peak signal-to-noise ratio of `x` against the reference `y`, in dB."""
    x, y = _pair(x, y)
    err = mse(x, y, normalized=normalized)
    if err == 0.0:
        return np.inf
    peak = float(np.max(y))
    return 10.0 * np.log10(peak ** 2 / err)


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    vx = np.mean((x - mx) ** 2)
    vy = np.mean((y - my) ** 2)
    cov = np.mean((x - mx) * (y - my))
    return float((2 * mx * my + _SSIM_C1) * (2 * cov + _SSIM_C2)
                 / ((mx ** 2 + my ** 2 + _SSIM_C1) * (vx + vy + _SSIM_C2)))


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


@dataclass(frozen=True)
class MatchResult:
    """Greedy pairing of reconstructed and ground-truth columns plus scores."""

    pairs: list[tuple[int, int]]       # (reconstructed column, ground-truth column)
    mse_values: list[float]
    psnr_values: list[float]
    ssim_values: list[float]

    @property
    def mse_avg(self) -> float:
        return float(np.mean(self.mse_values))

    @property
    def psnr_avg(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def ssim_avg(self) -> float:
        return float(np.mean(self.ssim_values))


def greedy_match(A_rec: np.ndarray, A_gt: np.ndarray,
                 normalized_mse: bool = False) -> MatchResult:
    """Pair reconstructed columns with ground-truth columns greedily.

    Builds the matrix of column-wise Euclidean errors, then repeatedly
    takes the global minimum over the still unmatched rows and columns.
    Ties go to the smallest reconstructed index, then the smallest
    ground-truth index.
    """
    A_rec = np.atleast_2d(np.asarray(A_rec, dtype=np.float64))
    A_gt = np.atleast_2d(np.asarray(A_gt, dtype=np.float64))
    if A_rec.shape != A_gt.shape:
        raise ValueError(f"shape mismatch: {A_rec.shape} vs {A_gt.shape}")
    m = A_rec.shape[1]
    err = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            err[i, j] = np.linalg.norm(A_rec[:, i] - A_gt[:, j])

    masked = err.copy()
    pairs = []
    for _ in range(m):
        best = np.min(masked)
        i, j = np.argwhere(masked == best)[0]        # argwhere is row-major: smallest i, then j
        pairs.append((int(i), int(j)))
        masked[i, :] = np.inf
        masked[:, j] = np.inf

    return MatchResult(
        pairs=pairs,
        mse_values=[mse(A_rec[:, i], A_gt[:, j], normalized=normalized_mse)
                    for i, j in pairs],
        psnr_values=[psnr(A_rec[:, i], A_gt[:, j], normalized=normalized_mse)
                     for i, j in pairs],
        ssim_values=[ssim(A_rec[:, i], A_gt[:, j]) for i, j in pairs],
    )


def aggregate(match: MatchResult) -> tuple[float, float, float]:
    """Arithmetic means of the per-pair MSE, PSNR and SSIM."""
    if not match.pairs:
        raise ValueError("cannot aggregate an empty matching")
    return match.mse_avg, match.psnr_avg, match.ssim_avg
