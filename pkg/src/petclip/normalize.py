"""Intensity normalization schemes and dataset fingerprinting.

Four schemes operate on the PET channel: per-image z-scoring, global
percentile clipping followed by dataset-level standardization, fixed-bound
clipping, and feature clipping (bounds fitted from the threshold sweep).
All statistics use the population (1/N) standard deviation and linear
interpolation between order statistics for percentiles, so fingerprints
are bit-stable. The mask channel is never touched by any scheme.

Both plain functions and scikit-learn style transformers are provided;
the transformers carry fitted state in trailing-underscore attributes and
support ``get_params``/``set_params``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import EmptyMaskError, MissingFingerprintError
from .nifti import DatasetDescriptor, parse_scheme
from .sweep import SweepConfig, coerce_cases, fcn_sweep
from .volume import MultiChannelVolume, Volume, require_same_geometry

__all__ = [
    "DatasetFingerprint",
    "fingerprint",
    "zscore",
    "global_clip_standardize",
    "clip",
    "feature_clip",
    "apply_scheme",
    "read_fingerprint",
    "write_fingerprint",
    "ZScoreNormalizer",
    "GlobalClipNormalizer",
    "FixedClipNormalizer",
    "FeatureClipNormalizer",
    "make_normalizer",
]

SIGMA_DEGENERATE = 1e-8


@dataclass(frozen=True)
class DatasetFingerprint:
    """Dataset-wide intensity statistics plus the fitted clipping bounds.

    ``maxT`` stays None until the threshold sweep fills it in; ``minT``
    defaults to 0 SUV.
    """

    n_samples: int
    global_mean: float
    global_std: float
    pct_low: float
    pct_high: float
    per_image_suvmax: tuple[float, ...]
    maxT: float | None = None
    minT: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "per_image_suvmax", tuple(self.per_image_suvmax))
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.global_std < 0:
            raise ValueError(f"global_std must be >= 0, got {self.global_std}")
        if self.pct_low > self.pct_high:
            raise ValueError(
                f"pct_low must be <= pct_high, got {self.pct_low} > {self.pct_high}"
            )
        if len(self.per_image_suvmax) != self.n_samples:
            raise ValueError(
                f"per_image_suvmax has {len(self.per_image_suvmax)} entries "
                f"for {self.n_samples} samples"
            )
        if self.maxT is not None and not self.maxT > self.minT:
            raise ValueError(f"maxT must be > minT, got maxT={self.maxT}, minT={self.minT}")

    def with_maxT(self, maxT: float, minT: float | None = None) -> "DatasetFingerprint":
        """Copy with the clipping bounds filled in."""
        return replace(self, maxT=maxT, minT=self.minT if minT is None else minT)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "global_mean": self.global_mean,
            "global_std": self.global_std,
            "pct_low": self.pct_low,
            "pct_high": self.pct_high,
            "per_image_suvmax": list(self.per_image_suvmax),
            "maxT": self.maxT,
            "minT": self.minT,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetFingerprint":
        missing = {
            "n_samples",
            "global_mean",
            "global_std",
            "pct_low",
            "pct_high",
            "per_image_suvmax",
        } - set(d)
        if missing:
            raise ValueError(f"fingerprint missing keys: {sorted(missing)}")
        return cls(
            n_samples=int(d["n_samples"]),
            global_mean=float(d["global_mean"]),
            global_std=float(d["global_std"]),
            pct_low=float(d["pct_low"]),
            pct_high=float(d["pct_high"]),
            per_image_suvmax=tuple(float(x) for x in d["per_image_suvmax"]),
            maxT=None if d.get("maxT") is None else float(d["maxT"]),
            minT=float(d.get("minT", 0.0)),
        )


def read_fingerprint(path) -> DatasetFingerprint:
    with open(path, "r", encoding="utf-8") as f:
        return DatasetFingerprint.from_dict(json.load(f))


def write_fingerprint(fp: DatasetFingerprint, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(fp.to_dict(), f, indent=2)
        f.write("\n")


def fingerprint(
    cases,
    mask_scope: str = "whole_image",
    pct_low_rank: float = 0.5,
    pct_high_rank: float = 99.5,
) -> DatasetFingerprint:
    """Dataset-wide mean, population std, percentiles, and per-case SUVmax.

    Statistics pool the in-scope voxels of every case: the whole grid by
    default, or only prostate-mask voxels with ``mask_scope='prostate_only'``.
    ``maxT`` is left unset; the threshold sweep fills it in later.
    """
    if mask_scope not in ("whole_image", "prostate_only"):
        raise ValueError(f"unknown mask_scope {mask_scope!r}")
    if not 0.0 <= pct_low_rank <= pct_high_rank <= 100.0:
        raise ValueError("need 0 <= pct_low_rank <= pct_high_rank <= 100")
    normalized = coerce_cases(cases)
    if not normalized:
        raise ValueError("fingerprint needs at least one case")
    pools = []
    suvmax = []
    for pet, prostate, _, cid in normalized:
        if mask_scope == "prostate_only":
            require_same_geometry(pet, prostate, f"case {cid}: PET and prostate mask")
            fg = prostate.data != 0
            if not fg.any():
                raise EmptyMaskError(f"case {cid}: prostate mask is empty")
            values = pet.data[fg]
        else:
            values = pet.data.ravel()
        pools.append(values)
        suvmax.append(float(values.max()))
    pooled = np.concatenate(pools)
    return DatasetFingerprint(
        n_samples=len(normalized),
        global_mean=float(pooled.mean()),
        global_std=float(pooled.std()),  # population (1/N)
        pct_low=float(np.percentile(pooled, pct_low_rank, method="linear")),
        pct_high=float(np.percentile(pooled, pct_high_rank, method="linear")),
        per_image_suvmax=tuple(suvmax),
    )


def zscore(vol: Volume) -> Volume:
    """Per-image standardization (x - mean) / population std.

    Nearly constant images (std below 1e-8) map to all zeros instead of
    amplifying noise.
    """
    mu = float(vol.data.mean())
    sigma = float(vol.data.std())
    if sigma < SIGMA_DEGENERATE:
        return vol.with_data(np.zeros_like(vol.data))
    return vol.with_data((vol.data - mu) / sigma)


def global_clip_standardize(vol: Volume, fp: DatasetFingerprint) -> Volume:
    """Clip to the dataset's [0.5, 99.5] percentile band, then standardize
    with the dataset mean and population std."""
    if fp is None:
        raise MissingFingerprintError("global clip standardization needs a dataset fingerprint")
    clipped = np.clip(vol.data, fp.pct_low, fp.pct_high)
    if fp.global_std < SIGMA_DEGENERATE:
        return vol.with_data(np.zeros_like(vol.data))
    return vol.with_data((clipped - fp.global_mean) / fp.global_std)


def clip(vol: Volume, minT: float, maxT: float) -> Volume:
    """Saturate values to [minT, maxT]; in-range voxels pass through unchanged."""
    if not np.isfinite(minT) or not np.isfinite(maxT) or maxT <= minT:
        raise ValueError(f"need finite maxT > minT, got minT={minT}, maxT={maxT}")
    return vol.with_data(np.clip(vol.data, minT, maxT))


def feature_clip(vol: Volume, fp: DatasetFingerprint, rescale: bool = False) -> Volume:
    """Clip to the fitted [minT, maxT] band from the fingerprint.

    Clipping only by default; with ``rescale`` the band is mapped linearly
    onto [0, 1].
    """
    if fp is None or fp.maxT is None:
        raise MissingFingerprintError(
            "feature clipping needs a fingerprint with a fitted maxT "
            "(run the threshold sweep first)"
        )
    out = clip(vol, fp.minT, fp.maxT)
    if rescale:
        out = out.with_data((out.data - fp.minT) / (fp.maxT - fp.minT))
    return out


def apply_scheme(
    mcv: MultiChannelVolume,
    descriptor: DatasetDescriptor,
    fp: DatasetFingerprint | None = None,
    rescale_fcn: bool = False,
) -> MultiChannelVolume:
    """Apply the descriptor's channel-0 scheme; copy all other channels bitwise."""
    if len(descriptor.normalization_schemes) != mcv.n_channels:
        raise ValueError(
            f"descriptor declares {len(descriptor.normalization_schemes)} channels, "
            f"volume has {mcv.n_channels}"
        )
    parsed = parse_scheme(descriptor.normalization_schemes[0])
    pet = Volume(mcv.geometry, mcv.channel(0))
    kind = parsed[0]
    if kind == "none":
        out = pet
    elif kind == "zscore":
        out = zscore(pet)
    elif kind == "ct":
        if fp is None:
            raise MissingFingerprintError("scheme 'ct' needs a dataset fingerprint")
        out = global_clip_standardize(pet, fp)
    elif kind == "fixedclip":
        out = clip(pet, parsed[1], parsed[2])
    else:  # fcn
        out = feature_clip(pet, fp, rescale=rescale_fcn)
    return MultiChannelVolume(mcv.geometry, (out.data,) + mcv.channels[1:])


def _map_volumes(fn, X):
    """Apply a Volume->Volume function to one volume or a sequence of them."""
    if isinstance(X, Volume):
        return fn(X)
    return [fn(v) for v in X]


class ZScoreNormalizer(BaseEstimator, TransformerMixin):
    """Per-image standardization as a stateless transformer."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return _map_volumes(zscore, X)


class FixedClipNormalizer(BaseEstimator, TransformerMixin):
    """Clip every volume to a fixed [min_suv, max_suv] band (default 0..15)."""

    def __init__(self, min_suv: float = 0.0, max_suv: float = 15.0):
        self.min_suv = min_suv
        self.max_suv = max_suv

    def fit(self, X=None, y=None):
        if self.max_suv <= self.min_suv:
            raise ValueError("max_suv must be > min_suv")
        return self

    def transform(self, X):
        return _map_volumes(lambda v: clip(v, self.min_suv, self.max_suv), X)


class GlobalClipNormalizer(BaseEstimator, TransformerMixin):
    """Percentile clip + dataset standardization fitted on training cases.

    ``fit`` computes the dataset fingerprint over the given cases; the
    fitted statistics live in ``fingerprint_``.
    """

    def __init__(
        self,
        pct_low_rank: float = 0.5,
        pct_high_rank: float = 99.5,
        mask_scope: str = "whole_image",
    ):
        self.pct_low_rank = pct_low_rank
        self.pct_high_rank = pct_high_rank
        self.mask_scope = mask_scope

    def fit(self, X, y=None):
        self.fingerprint_ = fingerprint(
            X,
            mask_scope=self.mask_scope,
            pct_low_rank=self.pct_low_rank,
            pct_high_rank=self.pct_high_rank,
        )
        return self

    @classmethod
    def from_fingerprint(cls, fp: DatasetFingerprint) -> "GlobalClipNormalizer":
        est = cls()
        est.fingerprint_ = fp
        return est

    def transform(self, X):
        if not hasattr(self, "fingerprint_"):
            raise NotFittedError("GlobalClipNormalizer must be fitted before transform")
        return _map_volumes(lambda v: global_clip_standardize(v, self.fingerprint_), X)


class FeatureClipNormalizer(BaseEstimator, TransformerMixin):
    """Clipping normalizer whose upper bound is fitted by the threshold sweep.

    ``fit`` runs the full percentage sweep on the training cases and
    stores the fingerprint (with maxT filled in) in ``fingerprint_``, the
    sweep trace in ``sweep_result_``, and the bounds in ``min_t_`` /
    ``max_t_``. ``transform`` then clips volumes to [min_t_, max_t_],
    optionally rescaling the band to [0, 1].
    """

    def __init__(
        self,
        p_start: float = 20.0,
        p_end: float = 70.0,
        p_step: float = 2.0,
        mask_scope: str = "prostate_only",
        nsd_tau_mm: float = 2.0,
        rescale: bool = False,
        n_jobs: int | None = None,
    ):
        self.p_start = p_start
        self.p_end = p_end
        self.p_step = p_step
        self.mask_scope = mask_scope
        self.nsd_tau_mm = nsd_tau_mm
        self.rescale = rescale
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        config = SweepConfig(
            p_start=self.p_start,
            p_end=self.p_end,
            p_step=self.p_step,
            mask_scope=self.mask_scope,
            nsd_tau_mm=self.nsd_tau_mm,
        )
        cases = coerce_cases(X)
        base = fingerprint(cases, mask_scope=self.mask_scope)
        self.sweep_result_ = fcn_sweep(cases, config, jobs=self.n_jobs)
        self.max_t_ = self.sweep_result_.max_t
        self.min_t_ = 0.0
        self.fingerprint_ = base.with_maxT(self.max_t_, self.min_t_)
        return self

    @classmethod
    def from_fingerprint(cls, fp: DatasetFingerprint, rescale: bool = False):
        if fp.maxT is None:
            raise MissingFingerprintError("fingerprint has no fitted maxT")
        est = cls(rescale=rescale)
        est.fingerprint_ = fp
        est.max_t_ = fp.maxT
        est.min_t_ = fp.minT
        return est

    def transform(self, X):
        if not hasattr(self, "fingerprint_"):
            raise NotFittedError("FeatureClipNormalizer must be fitted before transform")
        return _map_volumes(
            lambda v: feature_clip(v, self.fingerprint_, rescale=self.rescale), X
        )


def make_normalizer(scheme: str, fp: DatasetFingerprint | None = None):
    """Build a ready-to-transform normalizer from a descriptor scheme string.

    Returns None for scheme 'none'. Schemes 'ct' and 'fcn' require a
    fingerprint (for 'fcn', one with a fitted maxT).
    """
    parsed = parse_scheme(scheme)
    kind = parsed[0]
    if kind == "none":
        return None
    if kind == "zscore":
        return ZScoreNormalizer()
    if kind == "fixedclip":
        return FixedClipNormalizer(min_suv=parsed[1], max_suv=parsed[2])
    if kind == "ct":
        if fp is None:
            raise MissingFingerprintError("scheme 'ct' needs a dataset fingerprint")
        return GlobalClipNormalizer.from_fingerprint(fp)
    if fp is None or fp.maxT is None:
        raise MissingFingerprintError("scheme 'fcn' needs a fingerprint with fitted maxT")
    return FeatureClipNormalizer.from_fingerprint(fp)
