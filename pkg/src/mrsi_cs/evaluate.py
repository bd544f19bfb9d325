"""Reconstruction quality metrics and lightweight exports.

Amount units are arbitrary, so every per-substance comparison first
rescales by the tensor's maximum ("max normalization").  The summary
metrics are a normalized RMSE against the truth, the temporal profile
at the hottest voxel (the spatial argmax of the temporal maximum of the
reconstruction), its Pearson correlation with the truth profile, its
coefficient of variation, and a plateau-onset estimate.  Spatial
snapshots are exported as binary 8-bit PGM images, optionally upscaled
by integer nearest-neighbor replication.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "max_normalize",
    "normalized_rmse",
    "hottest_voxel",
    "pearson",
    "coefficient_of_variation",
    "detect_plateau_onset",
    "substance_metrics",
    "write_profiles_csv",
    "write_pgm",
]


def max_normalize(a: np.ndarray) -> np.ndarray:
    """Rescale so the maximum equals 1; all-nonpositive input maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    peak = a.max(initial=0.0)
    if peak <= 0:
        return np.zeros_like(a)
    return a / peak


def normalized_rmse(recon: np.ndarray, truth: np.ndarray) -> float:
    """RMSE between max-normalized tensors, relative to the truth's norm.

    Equals 0 for a perfect reconstruction and 1 for an all-zero one.
    """
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    r = max_normalize(recon)
    t = max_normalize(truth)
    t_norm = float(np.linalg.norm(t))
    if t_norm == 0.0:
        return 0.0 if float(np.linalg.norm(r)) == 0.0 else float("inf")
    return float(np.linalg.norm(r - t)) / t_norm


def hottest_voxel(values: np.ndarray) -> int:
    """Flat voxel index maximizing the temporal maximum of a (M, N) array."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ShapeError(f"expected (frames, voxels); got shape {values.shape}")
    return int(np.argmax(values.max(axis=0)))


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson correlation, or None when either input is (numerically) constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    # constant profiles carry only mean-subtraction rounding noise
    if na <= 1e-12 * (1.0 + np.linalg.norm(a)) or nb <= 1e-12 * (1.0 + np.linalg.norm(b)):
        return None
    return float(da @ db / (na * nb))


def coefficient_of_variation(profile: np.ndarray) -> float | None:
    """Standard deviation over mean, or None for a zero-mean profile."""
    profile = np.asarray(profile, dtype=np.float64)
    mean = profile.mean()
    if mean == 0.0:
        return None
    return float(profile.std() / abs(mean))


def detect_plateau_onset(
    profile: np.ndarray, tail_fraction: float = 0.1, threshold: float = 0.95
) -> int | None:
    """First frame at which the profile reaches ``threshold`` of its plateau.

    The plateau level is the median of the trailing ``tail_fraction`` of
    frames; None when that level is not positive.
    """
    profile = np.asarray(profile, dtype=np.float64)
    m = profile.shape[0]
    tail = max(3, int(round(m * tail_fraction)))
    level = float(np.median(profile[-tail:]))
    if level <= 0:
        return None
    hits = np.flatnonzero(profile >= threshold * level)
    return int(hits[0]) if hits.size else None


def substance_metrics(recon: np.ndarray, truth: np.ndarray) -> dict:
    """Per-substance summary for (M, N) reconstruction/truth pairs."""
    if recon.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    voxel = hottest_voxel(recon)
    recon_profile = recon[:, voxel]
    truth_profile = truth[:, voxel]
    return {
        "normalized_rmse": normalized_rmse(recon, truth),
        "hottest_voxel": voxel,
        "pearson_r": pearson(recon_profile, truth_profile),
        "coefficient_of_variation": coefficient_of_variation(recon_profile),
        "plateau_onset_frame": detect_plateau_onset(max_normalize(recon_profile)),
    }


def write_profiles_csv(
    path: str | Path,
    labels: list[str],
    recon_profiles: np.ndarray,
    truth_profiles: np.ndarray,
) -> None:
    """Hottest-voxel temporal profiles, one row per frame."""
    recon_profiles = np.atleast_2d(recon_profiles)
    truth_profiles = np.atleast_2d(truth_profiles)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["frame"]
        for label in labels:
            header += [f"{label}_recon", f"{label}_truth"]
        writer.writerow(header)
        for m in range(recon_profiles.shape[1]):
            row: list = [m]
            for j in range(len(labels)):
                row += [repr(float(recon_profiles[j, m])), repr(float(truth_profiles[j, m]))]
            writer.writerow(row)


def write_pgm(path: str | Path, image: np.ndarray, upsample: int = 1) -> None:
    """Binary 8-bit PGM of values already scaled to [0, 1]; clips outside."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 1:
        image = image[None, :]
    if image.ndim != 2:
        raise ShapeError(f"snapshots must be 1D or 2D; got shape {image.shape}")
    if upsample < 1:
        raise ParameterError("upsample factor must be >= 1")
    if upsample > 1:
        image = np.repeat(np.repeat(image, upsample, axis=0), upsample, axis=1)
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = quantized.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())
