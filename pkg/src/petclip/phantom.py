"""Deterministic synthetic PET phantoms with analytically known optima.

A phantom is an ellipsoidal prostate filled with uniform background
uptake, plus ellipsoidal lesions whose radial profile is
``peak * (1 - rho^exponent)`` (rho = normalized ellipsoidal radius,
clamped at 0, zero outside the lesion). The tumor label is the superlevel
set of the noiseless field at ``gt_fraction`` of the case's
intra-prostatic maximum, so the optimal threshold percentage is known by
construction. Gaussian noise, when requested, is added only after the
label is computed.

Randomness uses numpy's PCG64 generator. Families derive one child seed
stream per case index via ``SeedSequence.spawn``, so case i's content
does not depend on how many cases are generated, and identical seeds
reproduce identical files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import PhantomSpecError
from .nifti import DatasetDescriptor, DatasetLayout, write_descriptor, write_volume
from .volume import GridGeometry, Mask, Volume

__all__ = [
    "LesionSpec",
    "PhantomSpec",
    "generate",
    "generate_family",
    "designed_optimum",
    "read_phantom_spec",
    "write_phantom_spec",
    "DEFAULT_INTENSITY_JITTER",
    "DEFAULT_CENTER_JITTER_VOX",
]

DEFAULT_INTENSITY_JITTER = 0.05
DEFAULT_CENTER_JITTER_VOX = 2


def _triple(value, name: str) -> tuple[float, float, float]:
    vals = tuple(float(v) for v in value)
    if len(vals) != 3:
        raise PhantomSpecError(f"{name} must have 3 components, got {len(vals)}")
    if not all(np.isfinite(v) for v in vals):
        raise PhantomSpecError(f"{name} must be finite, got {vals}")
    return vals


@dataclass(frozen=True)
class LesionSpec:
    """One ellipsoidal lesion: center and radii in mm, peak uptake added on
    top of the background, and the radial profile exponent."""

    center_mm: tuple[float, float, float]
    radii_mm: tuple[float, float, float]
    peak_suv: float
    exponent: float = 2.0


@dataclass(frozen=True)
class PhantomSpec:
    """Full description of one synthetic case (or the base of a family)."""

    grid: GridGeometry
    prostate_center_mm: tuple[float, float, float]
    prostate_radii_mm: tuple[float, float, float]
    lesions: tuple[LesionSpec, ...]
    background_suv: float = 1.0
    noise_sigma: float = 0.0
    gt_fraction: float = 0.35
    rng_seed: int = 0

    def __post_init__(self):
        if not isinstance(self.grid, GridGeometry):
            raise PhantomSpecError("grid must be a GridGeometry")
        if not self.grid.is_diagonal:
            raise PhantomSpecError("phantom grids must be axis-aligned (diagonal direction)")
        object.__setattr__(self, "prostate_center_mm", _triple(self.prostate_center_mm, "prostate center"))
        object.__setattr__(self, "prostate_radii_mm", _triple(self.prostate_radii_mm, "prostate radii"))
        object.__setattr__(self, "lesions", tuple(self.lesions))
        if any(r <= 0 for r in self.prostate_radii_mm):
            raise PhantomSpecError(f"prostate radii must be > 0, got {self.prostate_radii_mm}")
        if not (np.isfinite(self.background_suv) and self.background_suv >= 0):
            raise PhantomSpecError(f"background_suv must be >= 0, got {self.background_suv}")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise PhantomSpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not (0.0 < self.gt_fraction < 1.0):
            raise PhantomSpecError(f"gt_fraction must be in (0, 1), got {self.gt_fraction}")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise PhantomSpecError(f"rng_seed must be a nonnegative integer, got {self.rng_seed}")
        pc = np.asarray(self.prostate_center_mm)
        pr = np.asarray(self.prostate_radii_mm)
        for k, lesion in enumerate(self.lesions):
            if not isinstance(lesion, LesionSpec):
                raise PhantomSpecError(f"lesion {k} must be a LesionSpec")
            lc = np.asarray(_triple(lesion.center_mm, f"lesion {k} center"))
            lr = np.asarray(_triple(lesion.radii_mm, f"lesion {k} radii"))
            if any(lr <= 0):
                raise PhantomSpecError(f"lesion {k}: radii must be > 0, got {lesion.radii_mm}")
            if not lesion.peak_suv > self.background_suv:
                raise PhantomSpecError(
                    f"lesion {k}: peak_suv {lesion.peak_suv} must exceed "
                    f"background_suv {self.background_suv}"
                )
            if not (np.isfinite(lesion.exponent) and lesion.exponent > 0):
                raise PhantomSpecError(f"lesion {k}: exponent must be > 0, got {lesion.exponent}")
            # sufficient containment bound: center offset in prostate-normalized
            # coordinates plus the worst-case normalized lesion extent
            reach = float(np.linalg.norm((lc - pc) / pr) + np.max(lr / pr))
            if reach > 1.0 + 1e-12:
                raise PhantomSpecError(
                    f"lesion {k} is not certainly inside the prostate ellipsoid "
                    f"(containment bound {reach:.4f} > 1)"
                )


def _lesion_field(w: np.ndarray, lesion: LesionSpec) -> np.ndarray:
    c = np.asarray(lesion.center_mm).reshape(3, 1, 1, 1)
    r = np.asarray(lesion.radii_mm).reshape(3, 1, 1, 1)
    rho2 = (((w - c) / r) ** 2).sum(axis=0)
    profile = lesion.peak_suv * (1.0 - rho2 ** (lesion.exponent / 2.0))
    return np.where(rho2 <= 1.0, np.maximum(profile, 0.0), 0.0)


def _noiseless_field(spec: PhantomSpec):
    """Returns (field, prostate boolean array)."""
    w = spec.grid.voxel_centers_world()
    pc = np.asarray(spec.prostate_center_mm).reshape(3, 1, 1, 1)
    pr = np.asarray(spec.prostate_radii_mm).reshape(3, 1, 1, 1)
    prostate = (((w - pc) / pr) ** 2).sum(axis=0) <= 1.0
    field = np.where(prostate, spec.background_suv, 0.0)
    for lesion in spec.lesions:
        field = field + _lesion_field(w, lesion)
    return field, prostate


def generate(spec: PhantomSpec) -> tuple[Volume, Mask, Mask]:
    """Build one case: (pet, prostate mask, tumor label).

    The label is cut from the noiseless field at
    ``gt_fraction * max(field inside prostate)`` before noise is added, so
    thresholding the noiseless PET at that value reproduces it exactly.
    """
    field, prostate = _noiseless_field(spec)
    if not prostate.any():
        raise PhantomSpecError("prostate ellipsoid contains no voxel centers")
    suvmax = float(field[prostate].max())
    label = prostate & (field >= spec.gt_fraction * suvmax)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        pet_data = np.maximum(field + rng.normal(0.0, spec.noise_sigma, spec.grid.dims), 0.0)
    else:
        pet_data = field
    return (
        Volume(spec.grid, pet_data),
        Mask(spec.grid, prostate),
        Mask(spec.grid, label),
    )


def _family_params(seed: int, n_cases: int, intensity_jitter: float, center_jitter_vox: int):
    """Per-case (scale, voxel offset, case seed), one child stream per index."""
    children = np.random.SeedSequence(seed).spawn(n_cases)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        scale = float(1.0 + rng.uniform(-intensity_jitter, intensity_jitter))
        offset = rng.integers(-center_jitter_vox, center_jitter_vox + 1, size=3)
        case_seed = int(rng.integers(0, 2**63 - 1))
        out.append((scale, offset, case_seed))
    return out


def _jittered_spec(spec: PhantomSpec, scale: float, offset_vox, case_seed: int) -> PhantomSpec:
    """Scale all intensities and rigidly shift the whole constellation
    (prostate and lesions together) by a whole-voxel offset."""
    geo = spec.grid
    delta = geo.direction @ (np.asarray(geo.spacing) * np.asarray(offset_vox, dtype=np.float64))
    lesions = tuple(
        replace(
            lesion,
            center_mm=tuple(np.asarray(lesion.center_mm) + delta),
            peak_suv=lesion.peak_suv * scale,
        )
        for lesion in spec.lesions
    )
    return replace(
        spec,
        prostate_center_mm=tuple(np.asarray(spec.prostate_center_mm) + delta),
        lesions=lesions,
        background_suv=spec.background_suv * scale,
        noise_sigma=spec.noise_sigma * scale,
        rng_seed=case_seed,
    )


def generate_family(
    spec: PhantomSpec,
    n_cases: int,
    seed: int,
    out_dir,
    intensity_jitter: float = DEFAULT_INTENSITY_JITTER,
    center_jitter_vox: int = DEFAULT_CENTER_JITTER_VOX,
    file_ending: str = ".nii.gz",
    tracer_tag: str = "phantom",
) -> list[str]:
    """Write a jittered family of cases as an on-disk dataset.

    Each case scales every intensity (background, lesion peaks, noise
    sigma) by a factor drawn uniformly from 1 +/- intensity_jitter and
    shifts the prostate and lesion centers together by a whole-voxel
    offset of up to ``center_jitter_vox`` per axis, keeping the
    constellation on the voxel lattice. Returns the case ids written.
    """
    if n_cases < 1:
        raise ValueError(f"n_cases must be >= 1, got {n_cases}")
    layout = DatasetLayout(Path(out_dir))
    for d in (layout.images, layout.labels, layout.prostate_masks):
        d.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, (scale, offset, case_seed) in enumerate(
        _family_params(seed, n_cases, intensity_jitter, center_jitter_vox)
    ):
        case_spec = _jittered_spec(spec, scale, offset, case_seed)
        pet, prostate, label = generate(case_spec)
        cid = f"case_{i:03d}"
        write_volume(pet, layout.images / f"{cid}{file_ending}")
        write_volume(label, layout.labels / f"{cid}{file_ending}")
        write_volume(prostate, layout.prostate_masks / f"{cid}{file_ending}")
        ids.append(cid)
    write_descriptor(
        DatasetDescriptor(
            channel_names=("PET", "prostate_mask"),
            normalization_schemes=("none", "none"),
            file_ending=file_ending,
            tracer_tag=tracer_tag,
        ),
        layout.root,
        layout,
    )
    return ids


def _analytic_suvmax(spec: PhantomSpec) -> float:
    """Sampled maximum of the noiseless field, without building the volume.

    Each lesion's profile decreases radially, so its sampled maximum sits
    at the voxel center nearest the lesion center (per-axis rounding is
    exact for the axis-aligned grids phantoms require). Assumes lesion
    supports do not overlap; the fallback maximum is the background.
    """
    geo = spec.grid
    origin = np.asarray(geo.origin)
    spacing = np.asarray(geo.spacing)
    best = spec.background_suv
    for lesion in spec.lesions:
        c = np.asarray(lesion.center_mm)
        u = geo.direction.T @ (c - origin)
        idx = np.clip(np.rint(u / spacing), 0, np.asarray(geo.dims) - 1)
        w = geo.voxel_center(idx)
        r = np.asarray(lesion.radii_mm)
        rho2 = float((((w - c) / r) ** 2).sum())
        if rho2 <= 1.0:
            value = spec.background_suv + lesion.peak_suv * (
                1.0 - rho2 ** (lesion.exponent / 2.0)
            )
            best = max(best, value)
    return float(best)


def designed_optimum(
    spec: PhantomSpec,
    n_cases: int | None = None,
    seed: int | None = None,
    intensity_jitter: float = DEFAULT_INTENSITY_JITTER,
    center_jitter_vox: int = DEFAULT_CENTER_JITTER_VOX,
) -> tuple[float, float]:
    """Closed-form sweep optimum for a noiseless spec: (p_expected, maxT_expected).

    ``p_expected`` is 100 * gt_fraction. ``maxT_expected`` is gt_fraction
    times the case SUVmax, averaged over the family when ``n_cases`` and
    ``seed`` are given (replaying exactly the jitter stream that
    :func:`generate_family` consumes, so it predicts that family's mean
    threshold without running any sweep).
    """
    if spec.noise_sigma != 0:
        raise ValueError("designed_optimum is only defined for noiseless specs")
    p_expected = 100.0 * spec.gt_fraction
    if n_cases is None and seed is None:
        return p_expected, spec.gt_fraction * _analytic_suvmax(spec)
    if n_cases is None or seed is None:
        raise ValueError("give both n_cases and seed to evaluate a family, or neither")
    suvmaxes = [
        _analytic_suvmax(_jittered_spec(spec, scale, offset, 0))
        for scale, offset, _ in _family_params(seed, n_cases, intensity_jitter, center_jitter_vox)
    ]
    return p_expected, spec.gt_fraction * float(np.mean(suvmaxes))


# ---------------------------------------------------------------------------
# spec file I/O


def write_phantom_spec(spec: PhantomSpec, path) -> None:
    payload = {
        "grid": {
            "dims": list(spec.grid.dims),
            "spacing": list(spec.grid.spacing),
            "origin": list(spec.grid.origin),
            "direction": spec.grid.direction.tolist(),
        },
        "prostate": {
            "center_mm": list(spec.prostate_center_mm),
            "radii_mm": list(spec.prostate_radii_mm),
        },
        "lesions": [
            {
                "center_mm": list(lesion.center_mm),
                "radii_mm": list(lesion.radii_mm),
                "peak_suv": lesion.peak_suv,
                "exponent": lesion.exponent,
            }
            for lesion in spec.lesions
        ],
        "background_suv": spec.background_suv,
        "noise_sigma": spec.noise_sigma,
        "gt_fraction": spec.gt_fraction,
        "rng_seed": spec.rng_seed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def read_phantom_spec(path) -> PhantomSpec:
    """Parse a phantom spec JSON file; malformed content raises PhantomSpecError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as exc:
        raise PhantomSpecError(f"{path}: malformed JSON: {exc}") from exc
    try:
        grid_d = payload["grid"]
        grid = GridGeometry(
            dims=tuple(grid_d["dims"]),
            spacing=tuple(grid_d["spacing"]),
            origin=tuple(grid_d.get("origin", (0.0, 0.0, 0.0))),
            direction=np.asarray(grid_d["direction"]) if "direction" in grid_d else None,
        )
        lesions = tuple(
            LesionSpec(
                center_mm=tuple(item["center_mm"]),
                radii_mm=tuple(item["radii_mm"]),
                peak_suv=float(item["peak_suv"]),
                exponent=float(item.get("exponent", 2.0)),
            )
            for item in payload.get("lesions", [])
        )
        return PhantomSpec(
            grid=grid,
            prostate_center_mm=tuple(payload["prostate"]["center_mm"]),
            prostate_radii_mm=tuple(payload["prostate"]["radii_mm"]),
            lesions=lesions,
            background_suv=float(payload.get("background_suv", 1.0)),
            noise_sigma=float(payload.get("noise_sigma", 0.0)),
            gt_fraction=float(payload["gt_fraction"]),
            rng_seed=int(payload.get("rng_seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PhantomSpecError):
            raise
        raise PhantomSpecError(f"{path}: invalid phantom spec: {exc}") from exc
