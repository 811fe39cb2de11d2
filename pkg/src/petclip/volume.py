"""Geometric 3D volume types and the spatial operations built on them.

A volume is a 3D scalar grid (PET uptake in SUV) tied to a physical
geometry: voxel counts, voxel spacing in mm, the world position of the
center of voxel (0, 0, 0), and an orthonormal 3x3 orientation matrix.
Masks are binary grids on the same geometry. Arrays are indexed (x, y, z)
and the public linearized form is x-fastest (Fortran ravel).

All types are immutable after construction and every operation is a pure
function of its inputs, so everything here is safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError, GeometryError

__all__ = [
    "GridGeometry",
    "Volume",
    "Mask",
    "MultiChannelVolume",
    "resample",
    "crop_to_mask",
    "stack_channels",
    "largest_component",
    "masked_max",
    "require_same_geometry",
]

RESAMPLE_MODES = ("nearest", "trilinear", "bspline3")


def _as_triple(value, name: str, dtype=float) -> tuple:
    arr = tuple(dtype(v) for v in value)
    if len(arr) != 3:
        raise ValueError(f"{name} must have exactly 3 components, got {len(arr)}")
    return arr


@dataclass(frozen=True, eq=False)
class GridGeometry:
    """Physical placement of a regular 3D grid.

    Parameters
    ----------
    dims : (nx, ny, nz) ints, each >= 1
        Voxel counts per axis.
    spacing : (sx, sy, sz) floats, each > 0
        Voxel edge lengths in mm.
    origin : (ox, oy, oz) floats
        World position in mm of the center of voxel (0, 0, 0).
    direction : (3, 3) array, optional
        Orthonormal orientation matrix mapping voxel axes to world axes.
        Defaults to identity.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_triple(self.dims, "dims", int))
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing"))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))
        if any(d < 1 for d in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"all spacings must be finite and > 0 mm, got {self.spacing}")
        if any(not np.isfinite(o) for o in self.origin):
            raise ValueError(f"origin must be finite, got {self.origin}")
        d = np.eye(3) if self.direction is None else np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3, 3):
            raise ValueError(f"direction must be 3x3, got shape {d.shape}")
        if not np.allclose(d @ d.T, np.eye(3), rtol=0.0, atol=1e-6):
            raise ValueError("direction matrix is not orthonormal within 1e-6")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "direction", d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridGeometry):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.direction, other.direction)
        )

    def allclose(self, other: "GridGeometry", atol: float = 1e-6) -> bool:
        """True when dims match exactly and all float fields agree within atol."""
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0.0, atol=atol)
            and np.allclose(self.origin, other.origin, rtol=0.0, atol=atol)
            and np.allclose(self.direction, other.direction, rtol=0.0, atol=atol)
        )

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def is_diagonal(self) -> bool:
        """True when the direction matrix has no off-axis terms (axis-aligned grid)."""
        off = self.direction - np.diag(np.diag(self.direction))
        return bool(np.all(np.abs(off) <= 1e-9))

    def diagonal_mm(self) -> float:
        """Distance in mm between the centers of the two opposite corner voxels."""
        extent = (np.asarray(self.dims, dtype=np.float64) - 1.0) * np.asarray(self.spacing)
        return float(np.linalg.norm(extent))

    def voxel_center(self, index: Sequence[float]) -> np.ndarray:
        """World coordinates in mm of the center of the given voxel index."""
        idx = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + self.direction @ (np.asarray(self.spacing) * idx)

    def voxel_centers_world(self) -> np.ndarray:
        """World coordinates of every voxel center, shaped (3, nx, ny, nz)."""
        idx = np.indices(self.dims, dtype=np.float64)
        sc = idx * np.asarray(self.spacing).reshape(3, 1, 1, 1)
        return np.einsum("ab,b...->a...", self.direction, sc) + np.asarray(self.origin).reshape(
            3, 1, 1, 1
        )

    def affine(self) -> np.ndarray:
        """4x4 voxel-index-to-world affine (homogeneous, mm)."""
        out = np.eye(4)
        out[:3, :3] = self.direction * np.asarray(self.spacing)[np.newaxis, :]
        out[:3, 3] = self.origin
        return out


def _coerce_grid(data, dims: tuple[int, int, int], dtype) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim == 1:
        if arr.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"flat data length {arr.size} does not match dims {dims}")
        arr = arr.reshape(dims, order="F")
    elif arr.shape != dims:
        raise ValueError(f"data shape {arr.shape} does not match dims {dims}")
    arr = np.array(arr, dtype=dtype, copy=True, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """A finite scalar field (SUV per voxel) on a :class:`GridGeometry`.

    ``data`` may be passed as a 3D array of shape ``dims`` or as a flat
    x-fastest vector; it is stored as read-only float64.
    """

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        arr = _coerce_grid(self.data, self.geometry.dims, np.float64)
        if not np.isfinite(arr).all():
            raise ValueError("volume data must be finite (no NaN/Inf)")
        object.__setattr__(self, "data", arr)

    @property
    def linear(self) -> np.ndarray:
        """Values linearized x-fastest (the public on-disk order)."""
        return self.data.ravel(order="F")

    def with_data(self, data) -> "Volume":
        """Same geometry, new values."""
        return Volume(self.geometry, data)


@dataclass(frozen=True, eq=False)
class Mask:
    """A binary field on a :class:`GridGeometry`; stored as read-only uint8."""

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        arr = _coerce_grid(arr, self.geometry.dims, np.uint8)
        bad = (arr != 0) & (arr != 1)
        if bad.any():
            raise ValueError("mask data must contain only 0 and 1")
        object.__setattr__(self, "data", arr)

    @property
    def linear(self) -> np.ndarray:
        return self.data.ravel(order="F")

    @property
    def as_bool(self) -> np.ndarray:
        return self.data.astype(bool)

    @property
    def count(self) -> int:
        """Number of foreground voxels."""
        return int(self.data.sum(dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True, eq=False)
class MultiChannelVolume:
    """An ordered stack of scalar grids sharing one geometry.

    Channel 0 is the PET intensity channel; when a second channel is
    present it is the prostate mask and carries only {0, 1} values
    (guaranteed when built via :func:`stack_channels`).
    """

    geometry: GridGeometry
    channels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.channels) < 1:
            raise ValueError("at least one channel required")
        coerced = tuple(_coerce_grid(c, self.geometry.dims, np.float64) for c in self.channels)
        for i, c in enumerate(coerced):
            if not np.isfinite(c).all():
                raise ValueError(f"channel {i} contains non-finite values")
        object.__setattr__(self, "channels", coerced)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def channel(self, i: int) -> np.ndarray:
        return self.channels[i]


def require_same_geometry(a, b, what: str = "operands") -> None:
    """Raise :class:`GeometryError` unless both grids agree within 1e-6."""
    ga = a.geometry if hasattr(a, "geometry") else a
    gb = b.geometry if hasattr(b, "geometry") else b
    if not ga.allclose(gb):
        raise GeometryError(
            f"{what} must share grid geometry: "
            f"dims {ga.dims} vs {gb.dims}, spacing {ga.spacing} vs {gb.spacing}"
        )


def _output_dims(dims, spacing, target) -> tuple[int, int, int]:
    out = []
    for n, s_in, s_out in zip(dims, spacing, target):
        # round half away from zero; all quantities positive here
        out.append(max(1, int(np.floor(n * s_in / s_out + 0.5))))
    return tuple(out)


def resample(vol: Volume, target_spacing, mode: str = "trilinear") -> Volume:
    """Resample onto a grid with the requested spacing.

    Output dims are ``round(old_dim * old_spacing / new_spacing)`` per axis
    (half away from zero, floor 1). The center of voxel (0, 0, 0) is kept
    fixed, so output sample i maps to input coordinate
    ``i * new_spacing / old_spacing`` along each axis.

    Modes: ``nearest`` (half-up index snap, clamped at the grid edge),
    ``trilinear``, and ``bspline3`` (separable cubic B-spline with
    coefficient prefiltering and mirror boundary). Grids with off-axis
    direction terms are rejected.
    """
    if mode not in RESAMPLE_MODES:
        raise ValueError(f"mode must be one of {RESAMPLE_MODES}, got {mode!r}")
    target = _as_triple(target_spacing, "target_spacing")
    if any(not np.isfinite(s) or s <= 0 for s in target):
        raise ValueError(f"target_spacing must be finite and > 0, got {target}")
    geo = vol.geometry
    if not geo.is_diagonal:
        raise GeometryError("resampling requires an axis-aligned grid (diagonal direction matrix)")
    if target == geo.spacing:
        return Volume(geo, vol.data)

    out_dims = _output_dims(geo.dims, geo.spacing, target)
    out_geo = GridGeometry(out_dims, target, geo.origin, geo.direction)
    axes = [
        np.arange(n_out, dtype=np.float64) * (s_out / s_in)
        for n_out, s_out, s_in in zip(out_dims, target, geo.spacing)
    ]
    if mode == "nearest":
        idx = [
            np.clip(np.floor(ax + 0.5).astype(np.intp), 0, n_in - 1)
            for ax, n_in in zip(axes, geo.dims)
        ]
        data = vol.data[np.ix_(idx[0], idx[1], idx[2])]
        return Volume(out_geo, data)
    coords = np.stack(np.meshgrid(axes[0], axes[1], axes[2], indexing="ij"))
    if mode == "trilinear":
        data = ndimage.map_coordinates(vol.data, coords, order=1, mode="nearest")
    else:
        data = ndimage.map_coordinates(
            vol.data, coords, order=3, mode="mirror", prefilter=True
        )
    return Volume(out_geo, data)


def crop_to_mask(vol, mask: Mask, margin_voxels: int = 0):
    """Crop to the mask's tight bounding box dilated by a voxel margin.

    Accepts a :class:`Volume` or a :class:`Mask` as the grid to crop and
    returns ``(cropped, crop_offset)`` of the same type, where
    ``crop_offset`` is the index of the crop's corner in the input grid.
    The output origin is shifted so every retained voxel keeps its world
    position.
    """
    if margin_voxels < 0 or int(margin_voxels) != margin_voxels:
        raise ValueError(f"margin_voxels must be a nonnegative integer, got {margin_voxels}")
    require_same_geometry(vol, mask, "volume and mask")
    fg = mask.data != 0
    if not fg.any():
        raise EmptyMaskError("cannot crop to an empty mask")
    margin = int(margin_voxels)
    geo = vol.geometry
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        line = fg.any(axis=other)
        nz = np.flatnonzero(line)
        lo.append(max(0, int(nz[0]) - margin))
        hi.append(min(geo.dims[axis] - 1, int(nz[-1]) + margin))
    slices = tuple(slice(l, h + 1) for l, h in zip(lo, hi))
    new_dims = tuple(h - l + 1 for l, h in zip(lo, hi))
    new_origin = tuple(geo.voxel_center(lo))
    new_geo = GridGeometry(new_dims, geo.spacing, new_origin, geo.direction)
    cropped = type(vol)(new_geo, vol.data[slices])
    return cropped, tuple(lo)


def stack_channels(pet: Volume, prostate: Mask) -> MultiChannelVolume:
    """Stack PET (channel 0) and prostate mask (channel 1) on one geometry."""
    require_same_geometry(pet, prostate, "PET volume and prostate mask")
    return MultiChannelVolume(
        pet.geometry, (pet.data, prostate.data.astype(np.float64))
    )


def largest_component(mask: Mask, connectivity: int = 6) -> Mask:
    """Keep only the largest connected foreground component.

    ``connectivity`` is 6 (faces) or 26 (faces, edges, corners). Ties on
    component size keep the component whose first voxel comes earliest in
    scan order. An empty mask is returned unchanged.
    """
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    structure = ndimage.generate_binary_structure(3, 1 if connectivity == 6 else 3)
    labels, n = ndimage.label(mask.data, structure=structure)
    if n == 0:
        return Mask(mask.geometry, mask.data)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    keep = int(np.argmax(counts))
    return Mask(mask.geometry, labels == keep)


def masked_max(vol: Volume, mask: Mask) -> float:
    """Maximum of the volume over the mask's foreground voxels."""
    require_same_geometry(vol, mask, "volume and mask")
    fg = mask.data != 0
    if not fg.any():
        raise EmptyMaskError("masked_max over an empty mask is undefined")
    return float(vol.data[fg].max())
