"""Core data model and the separable forward operator.

The measurement model links a per-frame substance distribution ``x``
(real, one amount per voxel and substance) to complex readout vectors:
every voxel's two-dimensional spectrum is a linear combination of
substance base spectra weighted by ``x``, and the acquired signal is the
multi-dimensional discrete Fourier transform of that spectrum, sampled
at one or more (evolution, k-space) points.  Because the spectrum
separates into (base spectrum) x (spatial map), the sampled transform
factors into a spatial DFT of ``x`` and a precomputed transform of the
base spectra; no full-grid tensor is ever materialised.

All DFTs are unitary, so the adjoint of the sampling operator is its
conjugate transpose with no extra scaling.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ParameterError, ScheduleError, ShapeError

__all__ = [
    "AcquisitionGeometry",
    "BaseSpectraSet",
    "SubstanceDistribution",
    "SamplePoint",
    "SamplingSchedule",
    "SignalSet",
    "dft_spectral",
    "dft_spatial",
    "apply_forward",
    "apply_adjoint",
    "normal_matrix",
    "NormalFactor",
    "FactorizationCache",
]


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Static description of the acquisition grid.

    ``spatial_dims`` are voxel counts per spatial axis (their product is
    the voxel count N), ``spectral_evolution_points`` is the length of
    the indirect spectral axis sampled point by point, and
    ``readout_points`` the length of the direct spectral axis that is
    always acquired in full.  ``dft_sign_convention`` selects which
    complex-exponential sign the "spectrum to signal" direction uses;
    either choice yields an equivalent estimation problem as long as the
    simulator and the solver share it.
    """

    spatial_dims: tuple[int, ...]
    spectral_evolution_points: int
    readout_points: int
    dft_sign_convention: str = "forward"
    frame_interval_s: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "spatial_dims", tuple(int(d) for d in self.spatial_dims))
        if not self.spatial_dims or any(d < 1 for d in self.spatial_dims):
            raise ParameterError("spatial_dims must be positive integers")
        if self.spectral_evolution_points < 1 or self.readout_points < 1:
            raise ParameterError("spectral axis lengths must be >= 1")
        if self.dft_sign_convention not in ("forward", "inverse"):
            raise ParameterError(
                f"dft_sign_convention must be 'forward' or 'inverse', got {self.dft_sign_convention!r}"
            )
        if not self.frame_interval_s > 0:
            raise ParameterError("frame_interval_s must be > 0")

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.spatial_dims))

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        return tuple(range(-len(self.spatial_dims), 0))


def _unitary_dft(a: np.ndarray, axes: tuple[int, ...], inverse: bool) -> np.ndarray:
    if inverse:
        return np.fft.ifftn(a, axes=axes, norm="ortho")
    return np.fft.fftn(a, axes=axes, norm="ortho")


def dft_spectral(spectra: np.ndarray, direction: str, convention: str = "forward") -> np.ndarray:
    """Unitary DFT along the two trailing spectral axes.

    ``direction`` is ``"to_time"`` (spectrum to signal evolution/readout
    domain) or ``"to_freq"``; the two are exact inverses.  ``convention``
    picks the exponent sign of the to_time direction.
    """
    a = np.asarray(spectra)
    if a.ndim < 2:
        raise ShapeError(f"need at least 2 axes (evolution, readout); got shape {a.shape}")
    if direction == "to_time":
        inverse = convention == "inverse"
    elif direction == "to_freq":
        inverse = convention != "inverse"
    else:
        raise ParameterError(f"direction must be 'to_time' or 'to_freq', got {direction!r}")
    return _unitary_dft(a, axes=(-2, -1), inverse=inverse)


def dft_spatial(
    fieldarr: np.ndarray,
    direction: str,
    geometry: AcquisitionGeometry,
) -> np.ndarray:
    """Unitary DFT along the trailing spatial axes of ``geometry``.

    ``direction`` is ``"to_kspace"`` or ``"to_image"``; the same sign
    convention as :func:`dft_spectral` applies to the to_kspace leg.
    """
    a = np.asarray(fieldarr)
    nsp = len(geometry.spatial_dims)
    if a.ndim < nsp or a.shape[-nsp:] != geometry.spatial_dims:
        raise ShapeError(
            f"trailing axes {a.shape[-nsp:] if a.ndim >= nsp else a.shape} "
            f"do not match spatial grid {geometry.spatial_dims}"
        )
    if direction == "to_kspace":
        inverse = geometry.dft_sign_convention == "inverse"
    elif direction == "to_image":
        inverse = geometry.dft_sign_convention != "inverse"
    else:
        raise ParameterError(f"direction must be 'to_kspace' or 'to_image', got {direction!r}")
    return _unitary_dft(a, axes=geometry.spatial_axes, inverse=inverse)


@dataclass(frozen=True)
class BaseSpectraSet:
    """Per-substance base spectra and their cached time-domain transforms.

    ``spectra`` has shape (J, N_C, N_RO) in the spectral domain; ``fid``
    is its unitary DFT along both spectral axes and is what the forward
    operator consumes.
    """

    labels: tuple[str, ...]
    spectra: np.ndarray
    fid: np.ndarray

    @classmethod
    def from_spectra(
        cls,
        spectra: np.ndarray,
        labels: Sequence[str] | None = None,
        convention: str = "forward",
    ) -> "BaseSpectraSet":
        spectra = np.ascontiguousarray(np.asarray(spectra, dtype=np.complex128))
        if spectra.ndim != 3:
            raise ShapeError(f"spectra must be (J, N_C, N_RO); got shape {spectra.shape}")
        j = spectra.shape[0]
        if j < 1:
            raise ShapeError("need at least one substance")
        if labels is None:
            labels = tuple(f"substance_{i}" for i in range(j))
        labels = tuple(str(s) for s in labels)
        if len(labels) != j:
            raise ShapeError(f"{len(labels)} labels for {j} spectra")
        fid = dft_spectral(spectra, "to_time", convention=convention)
        return cls(labels=labels, spectra=spectra, fid=fid)

    @property
    def n_substances(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_evolution(self) -> int:
        return self.spectra.shape[1]

    @property
    def n_readout(self) -> int:
        return self.spectra.shape[2]


@dataclass(frozen=True)
class SubstanceDistribution:
    """Spatio-temporal amounts: real array (M, N, J) over frame, voxel, substance."""

    values: np.ndarray
    geometry: AcquisitionGeometry

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"values must be (M, N, J); got shape {v.shape}")
        if v.shape[1] != self.geometry.n_voxels:
            raise ShapeError(
                f"{v.shape[1]} voxels in values but geometry has {self.geometry.n_voxels}"
            )
        if not np.all(np.isfinite(v)):
            raise ShapeError("values contain non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_substances(self) -> int:
        return self.values.shape[2]

    def frame_matrix(self) -> np.ndarray:
        """View of the values as (M, N*J) with voxel index varying slowest."""
        m = self.values.shape[0]
        return self.values.reshape(m, -1)

    def spatial(self) -> np.ndarray:
        """Copy reshaped to (M, *spatial_dims, J)."""
        m, _, j = self.values.shape
        return self.values.reshape((m, *self.geometry.spatial_dims, j))


class SamplePoint(NamedTuple):
    """One sampled grid point: 1-based evolution index and 1-based k-space coordinates."""

    spectral_index: int
    k_index: tuple[int, ...]


def _check_point(point: SamplePoint, geometry: AcquisitionGeometry) -> None:
    d = point.spectral_index
    if not 1 <= d <= geometry.spectral_evolution_points:
        raise ScheduleError(
            f"spectral index {d} outside [1, {geometry.spectral_evolution_points}]"
        )
    if len(point.k_index) != len(geometry.spatial_dims):
        raise ScheduleError(
            f"k index {point.k_index} has {len(point.k_index)} axes, grid has "
            f"{len(geometry.spatial_dims)}"
        )
    for k, dim in zip(point.k_index, geometry.spatial_dims):
        if not 1 <= k <= dim:
            raise ScheduleError(f"k index {k} outside [1, {dim}]")


@dataclass(frozen=True)
class SamplingSchedule:
    """Ordered acquisition plan over M frames.

    ``frames[m]`` is either ``None`` (gap: no data for that frame) or a
    tuple of :class:`SamplePoint`.  Repeated points are legal and each
    occurrence contributes its own measurement.
    """

    frames: tuple[tuple[SamplePoint, ...] | None, ...]
    frame_interval_s: float = 4.0

    def __post_init__(self):
        frames = tuple(
            None if f is None else tuple(SamplePoint(int(p[0]), tuple(int(c) for c in p[1])) for p in f)
            for f in self.frames
        )
        for m, f in enumerate(frames):
            if f is not None and len(f) == 0:
                raise ScheduleError(f"acquired frame {m} has no sample points")
        object.__setattr__(self, "frames", frames)
        if not self.frame_interval_s > 0:
            raise ParameterError("frame_interval_s must be > 0")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def acquired_index_set(self) -> tuple[int, ...]:
        return tuple(m for m, f in enumerate(self.frames) if f is not None)

    @property
    def n_acquired(self) -> int:
        return len(self.acquired_index_set)

    def validate_geometry(self, geometry: AcquisitionGeometry) -> None:
        for f in self.frames:
            if f is None:
                continue
            for p in f:
                _check_point(p, geometry)


@dataclass(frozen=True)
class SignalSet:
    """Complex measured readouts keyed by acquired frame index."""

    per_frame: Mapping[int, np.ndarray]

    def __post_init__(self):
        data = {}
        for m, v in self.per_frame.items():
            v = np.asarray(v, dtype=np.complex128)
            if v.ndim != 1:
                raise ShapeError(f"signal for frame {m} must be a vector; got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ShapeError(f"signal for frame {m} contains non-finite entries")
            data[int(m)] = v
        object.__setattr__(self, "per_frame", data)

    def validate_schedule(self, schedule: SamplingSchedule, n_readout: int) -> None:
        acquired = set(schedule.acquired_index_set)
        if set(self.per_frame) != acquired:
            raise ShapeError(
                f"signal frames {sorted(self.per_frame)} do not match acquired frames "
                f"{sorted(acquired)}"
            )
        for m in acquired:
            expect = len(schedule.frames[m]) * n_readout
            if self.per_frame[m].shape[0] != expect:
                raise ShapeError(
                    f"frame {m}: signal length {self.per_frame[m].shape[0]}, schedule "
                    f"implies {expect}"
                )

    def concatenated(self, schedule: SamplingSchedule) -> np.ndarray:
        """All samples as one vector, in schedule order."""
        return np.concatenate(
            [self.per_frame[m] for m in schedule.acquired_index_set]
            or [np.zeros(0, dtype=np.complex128)]
        )

    @classmethod
    def from_concatenated(
        cls, schedule: SamplingSchedule, vector: np.ndarray, n_readout: int
    ) -> "SignalSet":
        vector = np.asarray(vector, dtype=np.complex128).ravel()
        per_frame = {}
        offset = 0
        for m in schedule.acquired_index_set:
            n = len(schedule.frames[m]) * n_readout
            per_frame[m] = vector[offset : offset + n]
            offset += n
        if offset != vector.shape[0]:
            raise ShapeError(
                f"signal vector has {vector.shape[0]} samples, schedule implies {offset}"
            )
        return cls(per_frame=per_frame)


def _spatial_spectrum(x_m: np.ndarray, base: BaseSpectraSet, geometry: AcquisitionGeometry) -> np.ndarray:
    """k-space transform of each substance map: returns (*spatial_dims, J) complex."""
    n, j = geometry.n_voxels, base.n_substances
    x_m = np.asarray(x_m, dtype=np.float64)
    if x_m.shape != (n * j,):
        raise ShapeError(f"x_m must have length N*J = {n * j}; got {x_m.shape}")
    cube = x_m.reshape(*geometry.spatial_dims, j).astype(np.complex128)
    # moveaxis puts substances first so the spatial axes are trailing for the DFT
    cube = np.moveaxis(cube, -1, 0)
    khat = dft_spatial(cube, "to_kspace", geometry)
    return np.moveaxis(khat, 0, -1)


def apply_forward(
    x_m: np.ndarray,
    frame_points: Sequence[SamplePoint],
    base: BaseSpectraSet,
    geometry: AcquisitionGeometry,
) -> np.ndarray:
    """Predicted complex readouts for one frame.

    For each sampled point (d, k) the output block over the readout axis
    is  sum_j  Xhat_j(k) * fid_j(d, :),  where Xhat_j is the unitary
    spatial DFT of the j-th substance map.  Output blocks follow the
    order of ``frame_points``.
    """
    base_check(base, geometry)
    khat = _spatial_spectrum(x_m, base, geometry)  # (*spatial, J)
    out = np.empty((len(frame_points), base.n_readout), dtype=np.complex128)
    for i, point in enumerate(frame_points):
        _check_point(point, geometry)
        kidx = tuple(c - 1 for c in point.k_index)
        weights = khat[kidx]  # (J,)
        out[i] = weights @ base.fid[:, point.spectral_index - 1, :]
    return out.ravel()


def apply_adjoint(
    residual: np.ndarray,
    frame_points: Sequence[SamplePoint],
    base: BaseSpectraSet,
    geometry: AcquisitionGeometry,
) -> np.ndarray:
    """Real part of the conjugate-transpose action on a residual vector.

    Accumulates, per substance, the readout-correlated weight of every
    sampled point into an otherwise empty k-space grid and transforms
    back; repeated points accumulate.  Returns a real vector of length
    N*J matching the ``x_m`` layout of :func:`apply_forward`.
    """
    base_check(base, geometry)
    residual = np.asarray(residual, dtype=np.complex128).ravel()
    n_ro = base.n_readout
    if residual.shape[0] != len(frame_points) * n_ro:
        raise ShapeError(
            f"residual has {residual.shape[0]} samples, expected "
            f"{len(frame_points) * n_ro}"
        )
    j = base.n_substances
    grid = np.zeros((j, *geometry.spatial_dims), dtype=np.complex128)
    blocks = residual.reshape(len(frame_points), n_ro)
    for point, block in zip(frame_points, blocks):
        _check_point(point, geometry)
        kidx = tuple(c - 1 for c in point.k_index)
        coeff = np.conj(base.fid[:, point.spectral_index - 1, :]) @ block  # (J,)
        grid[(slice(None), *kidx)] += coeff
    image = dft_spatial(grid, "to_image", geometry)
    out = np.moveaxis(image.real, 0, -1)  # (*spatial, J)
    return np.ascontiguousarray(out).reshape(-1)


def base_check(base: BaseSpectraSet, geometry: AcquisitionGeometry) -> None:
    if base.n_evolution != geometry.spectral_evolution_points or (
        base.n_readout != geometry.readout_points
    ):
        raise ShapeError(
            f"base spectra grid ({base.n_evolution}, {base.n_readout}) does not match "
            f"geometry ({geometry.spectral_evolution_points}, {geometry.readout_points})"
        )


def _kspace_row(point: SamplePoint, geometry: AcquisitionGeometry) -> np.ndarray:
    """Row of the unitary spatial DFT matrix at the point's k index, as a length-N vector."""
    # the k-th row of the forward transform is the conjugate of the
    # inverse transform applied to a unit impulse at k
    grid = np.zeros(geometry.spatial_dims, dtype=np.complex128)
    grid[tuple(c - 1 for c in point.k_index)] = 1.0
    return np.conj(dft_spatial(grid, "to_image", geometry).reshape(-1))


def gram_matrix(
    frame_points: Sequence[SamplePoint],
    base: BaseSpectraSet,
    geometry: AcquisitionGeometry,
) -> np.ndarray:
    """Dense real Gram matrix Re(A^H A) of one frame's operator, shape (N*J, N*J).

    Exploits the rank-one spatial structure per point: with f the sampled
    DFT row and G the readout Gram of the base spectra at the point's
    evolution index, the complex Gram is kron(conj(f) f^T, G) and its
    real part assembles from the real/imaginary parts of both factors.
    """
    base_check(base, geometry)
    n, j = geometry.n_voxels, base.n_substances
    out = np.zeros((n * j, n * j))
    for point in frame_points:
        _check_point(point, geometry)
        f = _kspace_row(point, geometry)
        phi = np.outer(np.conj(f), f)
        b = base.fid[:, point.spectral_index - 1, :]
        g = np.conj(b) @ b.T  # (J, J) Hermitian
        out += np.kron(phi.real, g.real) - np.kron(phi.imag, g.imag)
    return out


class NormalFactor:
    """Solve-capable representation of Re(A^H A) + shift*I for one frame.

    Holds the dense matrix and its Cholesky factorization; ``solve``
    applies the inverse to one or more right-hand sides.
    """

    def __init__(self, matrix: np.ndarray, shift: float):
        self.matrix = matrix
        self.shift = shift
        self._factor = cho_factor(matrix, lower=True, check_finite=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._factor, rhs, check_finite=False)


def normal_matrix(
    frame_points: Sequence[SamplePoint],
    base: BaseSpectraSet,
    geometry: AcquisitionGeometry,
    shift: float,
) -> NormalFactor:
    """Factorized Re(A^H A) + shift*I for one frame's sample points.

    The result depends only on the points (not on frame index or data),
    so it can be shared across frames and iterations.
    """
    if not shift > 0:
        raise ParameterError(f"shift must be > 0, got {shift}")
    gram = gram_matrix(frame_points, base, geometry)
    gram[np.diag_indices_from(gram)] += shift
    return NormalFactor(gram, shift)


class FactorizationCache:
    """Per-point cache of :class:`NormalFactor` objects.

    Safe for concurrent reads; insertion is serialized.  Keys are the
    frame's point tuples, so frames sampling the same points share one
    factorization.
    """

    def __init__(self, base: BaseSpectraSet, geometry: AcquisitionGeometry, shift: float):
        self.base = base
        self.geometry = geometry
        self.shift = shift
        self._store: dict[tuple[SamplePoint, ...], NormalFactor] = {}
        self._lock = threading.Lock()

    def get(self, frame_points: Iterable[SamplePoint]) -> NormalFactor:
        key = tuple(frame_points)
        found = self._store.get(key)
        if found is not None:
            return found
        factor = normal_matrix(key, self.base, self.geometry, self.shift)
        with self._lock:
            return self._store.setdefault(key, factor)

    def __len__(self) -> int:
        return len(self._store)
