"""Percentage-of-SUVmax threshold sweep and semi-automatic segmentation.

The sweep tries thresholds at p% of each case's (intra-prostatic) SUVmax
for p on an inclusive grid, scores every prediction against the tumor
label with DSC and NSD, and picks the percentages maximizing the per-p
average of each metric. The absolute upper clipping bound maxT is the
midpoint of the case-mean thresholds at those two optima. HD-95 is
computed and reported per p but never used for optimum selection, since
it is unbounded and degenerates on empty volumes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import EmptyMaskError
from .metrics import DEFAULT_NSD_TAU_MM, evaluate_pair
from .volume import Mask, Volume, masked_max, require_same_geometry

__all__ = [
    "SweepConfig",
    "SweepResult",
    "threshold_segment",
    "compute_threshold",
    "fcn_sweep",
    "fcn_maxT",
    "ThresholdSegmenter",
    "coerce_cases",
]

MASK_SCOPES = ("prostate_only", "whole_image")


@dataclass(frozen=True)
class SweepConfig:
    """Sweep bounds (percent, inclusive), metric scope, and NSD tolerance."""

    p_start: float = 20.0
    p_end: float = 70.0
    p_step: float = 2.0
    mask_scope: str = "prostate_only"
    nsd_tau_mm: float = DEFAULT_NSD_TAU_MM

    def __post_init__(self):
        if not (0.0 < self.p_start <= self.p_end <= 100.0):
            raise ValueError(
                f"need 0 < p_start <= p_end <= 100, got {self.p_start}..{self.p_end}"
            )
        if self.p_step <= 0:
            raise ValueError(f"p_step must be > 0, got {self.p_step}")
        if self.mask_scope not in MASK_SCOPES:
            raise ValueError(f"mask_scope must be one of {MASK_SCOPES}, got {self.mask_scope!r}")
        if self.nsd_tau_mm < 0:
            raise ValueError(f"nsd_tau_mm must be >= 0, got {self.nsd_tau_mm}")

    def p_values(self) -> tuple[float, ...]:
        """The inclusive percent grid p_start, p_start+p_step, ..., <= p_end."""
        count = int(np.floor((self.p_end - self.p_start) / self.p_step + 1e-9)) + 1
        return tuple(float(self.p_start + k * self.p_step) for k in range(count))


@dataclass(frozen=True)
class SweepResult:
    """Full trace of one sweep.

    ``thresholds[i][k]`` is the absolute SUV threshold of case i at
    ``p_values[k]``; ``avg_*`` are unweighted case means per p. Ties in
    the per-metric argmax resolve to the smallest p.
    """

    p_values: tuple[float, ...]
    avg_dsc: tuple[float, ...]
    avg_nsd: tuple[float, ...]
    avg_hd95: tuple[float, ...]
    case_ids: tuple[str, ...]
    thresholds: tuple[tuple[float, ...], ...]
    p_max_dsc: float
    p_max_nsd: float
    t_max_dsc: float
    t_max_nsd: float
    max_t: float

    def __post_init__(self):
        n_p = len(self.p_values)
        for name in ("avg_dsc", "avg_nsd", "avg_hd95"):
            if len(getattr(self, name)) != n_p:
                raise ValueError(f"{name} must have one entry per p value")
        if len(self.thresholds) != len(self.case_ids):
            raise ValueError("thresholds must have one row per case")
        if any(len(row) != n_p for row in self.thresholds):
            raise ValueError("every thresholds row must have one entry per p value")
        if self.p_max_dsc not in self.p_values or self.p_max_nsd not in self.p_values:
            raise ValueError("p_max_dsc and p_max_nsd must be members of p_values")

    def to_dict(self) -> dict:
        return {
            "p_values": list(self.p_values),
            "avg_dsc": list(self.avg_dsc),
            "avg_nsd": list(self.avg_nsd),
            "avg_hd95": list(self.avg_hd95),
            "case_ids": list(self.case_ids),
            "thresholds": [list(row) for row in self.thresholds],
            "p_maxDSC": self.p_max_dsc,
            "p_maxNSD": self.p_max_nsd,
            "t_maxDSC": self.t_max_dsc,
            "t_maxNSD": self.t_max_nsd,
            "maxT": self.max_t,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(
            p_values=tuple(float(x) for x in d["p_values"]),
            avg_dsc=tuple(float(x) for x in d["avg_dsc"]),
            avg_nsd=tuple(float(x) for x in d["avg_nsd"]),
            avg_hd95=tuple(float(x) for x in d["avg_hd95"]),
            case_ids=tuple(str(x) for x in d["case_ids"]),
            thresholds=tuple(tuple(float(x) for x in row) for row in d["thresholds"]),
            p_max_dsc=float(d["p_maxDSC"]),
            p_max_nsd=float(d["p_maxNSD"]),
            t_max_dsc=float(d["t_maxDSC"]),
            t_max_nsd=float(d["t_maxNSD"]),
            max_t=float(d["maxT"]),
        )


def compute_threshold(p: float, suvmax: float) -> float:
    """Absolute SUV threshold at p percent of a case's SUVmax: p * suvmax * 0.01."""
    if not np.isfinite(p) or p <= 0:
        raise ValueError(f"p must be a positive percent, got {p}")
    if not np.isfinite(suvmax) or suvmax < 0:
        raise ValueError(f"suvmax must be finite and >= 0, got {suvmax}")
    return float(p * suvmax * 0.01)


def threshold_segment(pet: Volume, scope_mask: Mask, threshold: float) -> Mask:
    """Voxels inside the scope with value >= threshold (inclusive)."""
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    require_same_geometry(pet, scope_mask, "PET volume and scope mask")
    pred = (pet.data >= threshold) & (scope_mask.data != 0)
    return Mask(pet.geometry, pred)


def coerce_cases(cases) -> list[tuple[Volume, Mask, Mask, str]]:
    """Normalize case records to (pet, prostate, label, case_id) tuples.

    Accepts (pet, prostate, label) triples or anything unpacking to four
    fields in that order (e.g. the dataset loader's named tuples); triples
    get positional ids case_000, case_001, ...
    """
    out = []
    for i, item in enumerate(cases):
        parts = tuple(item)
        if len(parts) == 3:
            pet, prostate, label = parts
            cid = f"case_{i:03d}"
        elif len(parts) == 4:
            pet, prostate, label, cid = parts
        else:
            raise ValueError(
                f"case {i}: expected (pet, prostate, label[, case_id]), got {len(parts)} fields"
            )
        out.append((pet, prostate, label, str(cid)))
    return out


def _full_scope(pet: Volume) -> Mask:
    return Mask(pet.geometry, np.ones(pet.geometry.dims, dtype=np.uint8))


def _sweep_case(pet, prostate, label, cid, p_values, config):
    """One case's threshold row and metric rows across all p."""
    scope = prostate if config.mask_scope == "prostate_only" else _full_scope(pet)
    if scope.is_empty:
        raise EmptyMaskError(f"case {cid}: prostate mask is empty")
    require_same_geometry(pet, label, f"case {cid}: PET and label")
    suvmax = masked_max(pet, scope)
    if config.mask_scope == "prostate_only":
        label_eval = Mask(label.geometry, label.data & scope.data)
    else:
        label_eval = label
    thresholds = np.empty(len(p_values))
    dsc_row = np.empty(len(p_values))
    nsd_row = np.empty(len(p_values))
    hd95_row = np.empty(len(p_values))
    for k, p in enumerate(p_values):
        t = compute_threshold(p, suvmax)
        pred = threshold_segment(pet, scope, t)
        m = evaluate_pair(pred, label_eval, tau_mm=config.nsd_tau_mm)
        thresholds[k] = t
        dsc_row[k] = m.dsc
        nsd_row[k] = m.nsd
        hd95_row[k] = m.hd95_mm
    return thresholds, dsc_row, nsd_row, hd95_row


def fcn_sweep(cases, config: SweepConfig | None = None, jobs: int | None = None) -> SweepResult:
    """Sweep thresholds over all cases and select the optimal percentages.

    Parameters
    ----------
    cases : sequence of (pet, prostate mask, tumor label[, case id])
        With prostate_only scope (the default), SUVmax, predictions, and
        the evaluated label are all restricted to the prostate mask.
    config : SweepConfig, optional
    jobs : int, optional
        Worker threads for per-case fan-out. Results are merged in case
        order, so the output is independent of the worker count.

    Returns
    -------
    SweepResult
        Per-p average DSC/NSD/HD-95, the per-(case, p) threshold table,
        p_maxDSC / p_maxNSD (ties -> smallest p), the case-mean thresholds
        at those optima, and their midpoint maxT.
    """
    config = config or SweepConfig()
    normalized = coerce_cases(cases)
    if not normalized:
        raise ValueError("need at least one case")
    p_values = config.p_values()

    def run(rec):
        pet, prostate, label, cid = rec
        return _sweep_case(pet, prostate, label, cid, p_values, config)

    if jobs is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, normalized))
    else:
        rows = [run(rec) for rec in normalized]

    thresholds = np.stack([r[0] for r in rows])
    avg_dsc = np.stack([r[1] for r in rows]).mean(axis=0)
    avg_nsd = np.stack([r[2] for r in rows]).mean(axis=0)
    avg_hd95 = np.stack([r[3] for r in rows]).mean(axis=0)

    idx_dsc = int(np.argmax(avg_dsc))  # first maximum -> smallest p
    idx_nsd = int(np.argmax(avg_nsd))
    t_max_dsc = float(np.mean(thresholds[:, idx_dsc]))
    t_max_nsd = float(np.mean(thresholds[:, idx_nsd]))
    return SweepResult(
        p_values=p_values,
        avg_dsc=tuple(float(x) for x in avg_dsc),
        avg_nsd=tuple(float(x) for x in avg_nsd),
        avg_hd95=tuple(float(x) for x in avg_hd95),
        case_ids=tuple(cid for _, _, _, cid in normalized),
        thresholds=tuple(tuple(float(t) for t in row) for row in thresholds),
        p_max_dsc=float(p_values[idx_dsc]),
        p_max_nsd=float(p_values[idx_nsd]),
        t_max_dsc=t_max_dsc,
        t_max_nsd=t_max_nsd,
        max_t=(t_max_dsc + t_max_nsd) / 2.0,
    )


def fcn_maxT(sweep: SweepResult) -> float:
    """The upper clipping bound: midpoint of t_maxDSC and t_maxNSD."""
    return (sweep.t_max_dsc + sweep.t_max_nsd) / 2.0


class ThresholdSegmenter(BaseEstimator):
    """Semi-automatic contouring at a fixed percent of SUVmax or absolute SUV.

    Exactly one of ``percent`` / ``threshold_suv`` must be set. With
    ``percent``, each prediction thresholds at percent% of the case's
    scope-restricted SUVmax; with ``threshold_suv`` the absolute value is
    used directly. The prediction is always confined to the scope mask.

    Examples
    --------
    >>> seg = ThresholdSegmenter(percent=35.0)
    >>> pred = seg.predict(pet, prostate)  # doctest: +SKIP
    """

    def __init__(self, percent=None, threshold_suv=None, mask_scope="prostate_only"):
        self.percent = percent
        self.threshold_suv = threshold_suv
        self.mask_scope = mask_scope

    def fit(self, X=None, y=None):
        """No-op; present for estimator-API compatibility."""
        self._check_params()
        return self

    def _check_params(self):
        if (self.percent is None) == (self.threshold_suv is None):
            raise ValueError("set exactly one of percent / threshold_suv")
        if self.mask_scope not in MASK_SCOPES:
            raise ValueError(f"mask_scope must be one of {MASK_SCOPES}")

    def predict(self, pet: Volume, scope_mask: Mask | None = None) -> Mask:
        self._check_params()
        if self.mask_scope == "prostate_only":
            if scope_mask is None:
                raise ValueError("prostate_only scope needs a scope mask")
            scope = scope_mask
        else:
            scope = scope_mask if scope_mask is not None else _full_scope(pet)
        if self.percent is not None:
            t = compute_threshold(self.percent, masked_max(pet, scope))
        else:
            t = float(self.threshold_suv)
        return threshold_segment(pet, scope, t)
