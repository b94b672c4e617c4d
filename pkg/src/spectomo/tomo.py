"""2D parallel-beam projector with a matched adjoint.

The projector is ray-driven with bilinear (Joseph-style) interpolation:
every ray is sampled once per pixel row or column (whichever axis it is
closest to), and each sample interpolates linearly between the two
neighbouring pixel centers.  Forward and adjoint share the same sampling
tables, so the pair is an exact transpose of one another.

Conventions
-----------
* A projection angle ``theta`` sends rays along ``(-sin(theta), cos(theta))``;
  the detector axis is ``(cos(theta), sin(theta))``.  At ``theta = 0`` rays
  travel vertically and the detector measures offsets along x.
* Detector bin ``k`` is centered at ``(k - (n_det - 1) / 2) * det_spacing``.
* Images are stored row-major: pixel ``(ix, iy)`` maps to ``iy * nx + ix``.
* Sinogram ray index ``j = angle_index * n_det + detector_index``.

Rays that never enter the grid contribute exact zeros.  All computation is
in 64-bit floats.  The sampling tables for moderately sized geometries are
precomputed at construction (they depend only on grid and geometry); very
large geometries fall back to streaming the same chunks on the fly, so
memory stays bounded either way.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

# geometries with more sample points than this stream their tables per call
_TABLE_CACHE_LIMIT = 4_000_000
_CHUNK_BUDGET = 2_000_000


@dataclass(frozen=True)
class Grid2D:
    """Uniform pixel grid; `origin` is the physical location of its center."""

    nx: int
    ny: int
    pixel_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one pixel, got {self.nx}x{self.ny}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    def refine(self, factor: int) -> "Grid2D":
        """Grid covering the same physical area with `factor`-times finer pixels."""
        if factor < 1 or int(factor) != factor:
            raise ValueError("refinement factor must be a positive integer")
        return Grid2D(self.nx * factor, self.ny * factor,
                      self.pixel_size / factor, self.origin)


@dataclass(frozen=True)
class ParallelGeometry:
    """Parallel-beam acquisition: projection angles plus a linear detector."""

    angles: np.ndarray
    n_det: int
    det_spacing: float = 1.0

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64))
        if angles.size == 0:
            raise ValueError("angles must be nonempty")
        if not np.all(np.isfinite(angles)):
            raise ValueError("angles must be finite")
        if self.n_det < 1:
            raise ValueError(f"n_det must be >= 1, got {self.n_det}")
        if not self.det_spacing > 0:
            raise ValueError(f"det_spacing must be positive, got {self.det_spacing}")
        object.__setattr__(self, "angles", angles)

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def n_rays(self) -> int:
        return self.angles.size * self.n_det

    def det_centers(self) -> np.ndarray:
        k = np.arange(self.n_det, dtype=np.float64)
        return (k - (self.n_det - 1) / 2.0) * self.det_spacing


def equispaced_angles(count: int, start: float = 0.0, stop: float = np.pi) -> np.ndarray:
    """`count` equidistant angles in [start, stop), endpoint excluded."""
    if count < 1:
        raise ValueError("angle count must be >= 1")
    return np.linspace(start, stop, count, endpoint=False)


@dataclass(frozen=True)
class TomoOperator:
    """Matrix-free discrete line-integral operator and its exact transpose.

    Immutable after construction and safe for concurrent use; scratch
    buffers live in thread-local storage so results are bit-identical for
    identical inputs.
    """

    grid: Grid2D
    geometry: ParallelGeometry
    _tables: tuple | None = field(default=None, init=False, repr=False, compare=False)
    _scratch: threading.local = field(default_factory=threading.local,
                                      init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = (self.geometry.n_angles * self.geometry.n_det
                   * max(self.grid.nx, self.grid.ny))
        if samples <= _TABLE_CACHE_LIMIT:
            object.__setattr__(self, "_tables", tuple(self._chunks()))

    @property
    def n_image(self) -> int:
        return self.grid.n_pixels

    @property
    def n_rays(self) -> int:
        return self.geometry.n_rays

    def forward(self, image: np.ndarray) -> np.ndarray:
        """Line integrals of `image` along every ray.

        Parameters
        ----------
        image : (N,) or (N, K) array
            Flattened image(s); K columns are projected together.

        Returns
        -------
        (J,) or (J, K) array of line integrals.
        """
        x, single = self._check_vec(image, self.n_image, "image")
        if not np.all(np.isfinite(x)):
            raise ValueError("image contains non-finite entries")
        out = self._forward(x)
        return out[:, 0] if single else out

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        """Transpose of `forward` applied to a sinogram (same discrete weights)."""
        y, single = self._check_vec(sino, self.n_rays, "sinogram")
        out = self._adjoint(y)
        return out[:, 0] if single else out

    # -- internals ---------------------------------------------------------

    @staticmethod
    def _check_vec(v, n, name):
        v = np.asarray(v, dtype=np.float64)
        single = v.ndim == 1
        if single:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != n:
            raise ValueError(f"{name} must have leading dimension {n}, got shape {v.shape}")
        return np.ascontiguousarray(v), single

    def _chunks(self):
        """Sampling tables: per chunk of angles, the two neighbour pixel
        indices and interpolation weights for every (angle, sample, ray)."""
        g, geom = self.grid, self.geometry
        nx, ny, p = g.nx, g.ny, g.pixel_size
        t = geom.det_centers()[None, None, :]
        xc = (np.arange(nx) - (nx - 1) / 2.0) * p + g.origin[0]
        yc = (np.arange(ny) - (ny - 1) / 2.0) * p + g.origin[1]
        sin_all = np.sin(geom.angles)
        cos_all = np.cos(geom.angles)
        y_dom = np.abs(cos_all) >= np.abs(sin_all)

        for dominant_y in (True, False):
            group = np.flatnonzero(y_dom == dominant_y)
            if group.size == 0:
                continue
            n_along, n_across = (nx, ny) if dominant_y else (ny, nx)
            chunk = max(1, _CHUNK_BUDGET // max(n_across * geom.n_det, 1))
            for lo in range(0, group.size, chunk):
                idx = group[lo:lo + chunk]
                s = sin_all[idx][:, None, None]
                c = cos_all[idx][:, None, None]
                if dominant_y:
                    # rays closest to vertical: one sample per pixel row,
                    # interpolated along x
                    cross = (t - yc[None, :, None] * s) / c
                    frac = (cross - g.origin[0]) / p + (nx - 1) / 2.0
                    step = p / np.abs(c)
                else:
                    cross = (t - xc[None, :, None] * c) / s
                    frac = (cross - g.origin[1]) / p + (ny - 1) / 2.0
                    step = p / np.abs(s)

                i0 = np.floor(frac).astype(np.int64)
                w1 = frac - i0
                w0 = (1.0 - w1) * np.where((i0 >= 0) & (i0 < n_along), step, 0.0)
                w1 = w1 * np.where((i0 + 1 >= 0) & (i0 + 1 < n_along), step, 0.0)
                i0c = np.clip(i0, 0, n_along - 1)
                i1c = np.clip(i0 + 1, 0, n_along - 1)
                rows = np.arange(n_across)[None, :, None]
                if dominant_y:
                    lin0 = rows * nx + i0c            # (chunk, n_across, n_det)
                    lin1 = rows * nx + i1c
                else:
                    lin0 = i0c * nx + rows
                    lin1 = i1c * nx + rows
                yield (idx, np.ascontiguousarray(lin0), np.ascontiguousarray(lin1),
                       np.ascontiguousarray(w0), np.ascontiguousarray(w1))

    def _buffers(self, key, shapes):
        cache = getattr(self._scratch, "buffers", None)
        if cache is None:
            cache = {}
            self._scratch.buffers = cache
        if key not in cache:
            cache[key] = tuple(np.empty(s) for s in shapes)
        return cache[key]

    def _forward(self, flat: np.ndarray) -> np.ndarray:
        geom = self.geometry
        k = flat.shape[1]
        out = np.zeros((geom.n_angles, geom.n_det, k))
        for idx, lin0, lin1, w0, w1 in self._tables or self._chunks():
            g0, g1 = self._buffers(("f", lin0.shape, k),
                                   (lin0.shape + (k,), lin0.shape + (k,)))
            np.take(flat, lin0, axis=0, out=g0)
            np.take(flat, lin1, axis=0, out=g1)
            g0 *= w0[..., None]
            g1 *= w1[..., None]
            g0 += g1
            out[idx] = g0.sum(axis=1)
        return out.reshape(-1, k)

    def _adjoint(self, data: np.ndarray) -> np.ndarray:
        geom = self.geometry
        n = self.grid.n_pixels
        k = data.shape[1]
        out = np.zeros((n, k))
        sino = data.reshape(geom.n_angles, geom.n_det, k)
        for idx, lin0, lin1, w0, w1 in self._tables or self._chunks():
            (scr,) = self._buffers(("a", lin0.shape), (lin0.shape,))
            lin0r, lin1r = lin0.ravel(), lin1.ravel()
            vals = sino[idx]                          # (chunk, n_det, k)
            for col in range(k):
                v = vals[:, None, :, col]
                np.multiply(w0, v, out=scr)
                out[:, col] += np.bincount(lin0r, weights=scr.ravel(), minlength=n)
                np.multiply(w1, v, out=scr)
                out[:, col] += np.bincount(lin1r, weights=scr.ravel(), minlength=n)
        return out
