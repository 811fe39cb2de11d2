"""NIfTI-1 file I/O, on-disk dataset layout, and report emission.

Only the single-file NIfTI-1 format is handled (348-byte header, magic
``n+1``), plain or gzipped by extension. Geometry is decoded with the
precedence sform > qform > pixdim; written files always populate the
sform. Voxel payloads are stored x-fastest, matching the linearization
contract of :mod:`petclip.volume`.

A dataset directory holds PET images, tumor labels, and prostate masks in
parallel subdirectories keyed by case id, plus a JSON descriptor naming
the channels and their normalization schemes.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DatasetValidationError,
    NiftiError,
    TruncatedFileError,
    UnsupportedDatatypeError,
)
from .volume import GridGeometry, Mask, Volume

__all__ = [
    "read_volume",
    "read_mask",
    "write_volume",
    "DatasetLayout",
    "DatasetDescriptor",
    "parse_scheme",
    "Case",
    "load_dataset",
    "read_descriptor",
    "write_descriptor",
    "write_report",
    "write_curves_csv",
    "write_thresholds_csv",
    "write_sweep_json",
    "read_sweep_json",
    "write_metrics_csv",
    "read_metrics_csv",
]

HEADER_SIZE = 348
VOXEL_OFFSET = 352

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", 8),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", 8),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", 4),
    ("srow_y", "f4", 4),
    ("srow_z", "f4", 4),
    ("intent_name", "S16"),
    ("magic", "S4"),
]


def _header_dtype(byteorder: str) -> np.dtype:
    fields = []
    for entry in _HEADER_FIELDS:
        name, kind = entry[0], entry[1]
        code = kind if kind.startswith(("S", "u1")) else byteorder + kind
        fields.append((name, code, entry[2]) if len(entry) == 3 else (name, code))
    dt = np.dtype(fields)
    assert dt.itemsize == HEADER_SIZE
    return dt

_HEADER_LE = _header_dtype("<")
_HEADER_BE = _header_dtype(">")

# NIfTI-1 datatype codes accepted for voxel payloads
_DTYPE_BY_CODE = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_CODE_BY_KIND = {np.dtype(k): c for c, k in _DTYPE_BY_CODE.items()}

MAGIC_SINGLE = b"n+1"  # trailing NUL stripped by the S4 field


def _open_for_read(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_header(path: Path):
    """Return (header record, payload byte order '<' or '>', open stream)."""
    stream = _open_for_read(path)
    raw = stream.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        stream.close()
        raise TruncatedFileError(
            f"{path}: file ends inside the header ({len(raw)} of {HEADER_SIZE} bytes)"
        )
    hdr = np.frombuffer(raw, dtype=_HEADER_LE)[0]
    order = "<"
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        hdr = np.frombuffer(raw, dtype=_HEADER_BE)[0]
        order = ">"
        if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
            stream.close()
            raise BadMagicError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    if bytes(hdr["magic"]) != MAGIC_SINGLE:
        stream.close()
        raise BadMagicError(
            f"{path}: bad magic {bytes(hdr['magic'])!r}, expected single-file NIfTI-1 ('n+1')"
        )
    return hdr, order, stream


def _quaternion_rotation(b: float, c: float, d: float) -> np.ndarray:
    a = float(np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d))))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _decode_geometry(hdr, dims, path: Path) -> GridGeometry:
    try:
        if int(hdr["sform_code"]) > 0:
            rows = np.array(
                [hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]], dtype=np.float64
            )
            linear, origin = rows[:, :3], rows[:, 3]
            spacing = np.linalg.norm(linear, axis=0)
            if np.any(spacing <= 0):
                raise ValueError("sform has a zero-length column")
            direction = linear / spacing[np.newaxis, :]
            return GridGeometry(dims, tuple(spacing), tuple(origin), direction)
        if int(hdr["qform_code"]) > 0:
            rot = _quaternion_rotation(
                float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
            )
            qfac = float(hdr["pixdim"][0])
            if qfac < 0:
                rot = rot.copy()
                rot[:, 2] *= -1.0
            spacing = np.abs(np.asarray(hdr["pixdim"][1:4], dtype=np.float64))
            origin = (
                float(hdr["qoffset_x"]),
                float(hdr["qoffset_y"]),
                float(hdr["qoffset_z"]),
            )
            return GridGeometry(dims, tuple(spacing), origin, rot)
        spacing = np.abs(np.asarray(hdr["pixdim"][1:4], dtype=np.float64))
        return GridGeometry(dims, tuple(spacing))
    except ValueError as exc:
        raise NiftiError(f"{path}: invalid geometry in header: {exc}") from exc


def _read_array(path) -> tuple[GridGeometry, np.ndarray]:
    path = Path(path)
    hdr, order, stream = _read_header(path)
    with stream:
        ndim = int(hdr["dim"][0])
        if not 1 <= ndim <= 7:
            raise BadMagicError(f"{path}: corrupt dim[0] = {ndim}")
        shape = [max(1, int(hdr["dim"][k])) for k in range(1, 8)]
        if any(s != 1 for s in shape[3:ndim]):
            raise NiftiError(f"{path}: only 3D volumes are supported, dim = {shape[:ndim]}")
        dims = tuple(shape[:3])
        code = int(hdr["datatype"])
        if code not in _DTYPE_BY_CODE:
            raise UnsupportedDatatypeError(
                f"{path}: datatype code {code} not supported "
                f"(supported codes: {sorted(_DTYPE_BY_CODE)})"
            )
        dtype = _DTYPE_BY_CODE[code].newbyteorder(order)
        offset = int(hdr["vox_offset"])
        if offset < HEADER_SIZE:
            raise NiftiError(f"{path}: vox_offset {offset} overlaps the header")
        skip = offset - HEADER_SIZE
        if skip and len(stream.read(skip)) < skip:
            raise TruncatedFileError(f"{path}: file ends before the voxel payload")
        count = dims[0] * dims[1] * dims[2]
        payload = stream.read(count * dtype.itemsize)
        if len(payload) < count * dtype.itemsize:
            raise TruncatedFileError(
                f"{path}: voxel payload truncated "
                f"({len(payload)} of {count * dtype.itemsize} bytes)"
            )
        data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
        slope = float(hdr["scl_slope"])
        inter = float(hdr["scl_inter"])
        if np.isfinite(slope) and slope not in (0.0, 1.0) or (np.isfinite(inter) and inter != 0.0):
            if not np.isfinite(slope) or slope == 0.0:
                slope = 1.0
            data = data.astype(np.float64) * slope + inter
    geometry = _decode_geometry(hdr, dims, path)
    return geometry, data


def read_volume(path) -> Volume:
    """Read a NIfTI-1 scalar volume.

    Accepted voxel datatypes: uint8, int16, int32, float32, float64.
    ``scl_slope``/``scl_inter`` rescaling is applied when present.
    """
    geometry, data = _read_array(path)
    return Volume(geometry, data)


def read_mask(path) -> Mask:
    """Read a NIfTI-1 binary mask, rejecting values outside {0, 1}."""
    geometry, data = _read_array(path)
    if not np.isin(data, (0, 1)).all():
        raise ValueError(f"{path}: mask contains values outside {{0, 1}}")
    return Mask(geometry, data.astype(np.uint8))


def write_volume(vol, path, dtype=None) -> None:
    """Write a :class:`Volume` or :class:`Mask` as single-file NIfTI-1.

    Intensity volumes default to float32 on disk, masks to uint8. The
    geometry is encoded in the sform (sform_code 1); spacing is mirrored
    into pixdim. Files ending in ``.gz`` are gzip-compressed with a fixed
    zero mtime so identical inputs produce identical bytes.
    """
    path = Path(path)
    if dtype is None:
        dtype = np.uint8 if isinstance(vol, Mask) else np.float32
    dtype = np.dtype(dtype)
    if dtype not in _CODE_BY_KIND:
        raise ValueError(f"unsupported on-disk dtype {dtype}")
    geo = vol.geometry

    hdr = np.zeros((), dtype=_HEADER_LE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"][0] = 3
    hdr["dim"][1:4] = geo.dims
    hdr["dim"][4:] = 1
    hdr["datatype"] = _CODE_BY_KIND[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"][0] = 1.0
    hdr["pixdim"][1:4] = geo.spacing
    hdr["vox_offset"] = VOXEL_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["sform_code"] = 1
    hdr["qform_code"] = 0
    linear = geo.direction * np.asarray(geo.spacing)[np.newaxis, :]
    for row_name, r in (("srow_x", 0), ("srow_y", 1), ("srow_z", 2)):
        hdr[row_name][:3] = linear[r]
        hdr[row_name][3] = geo.origin[r]
    hdr["magic"] = MAGIC_SINGLE

    payload = np.ascontiguousarray(
        vol.data.ravel(order="F"), dtype=dtype.newbyteorder("<")
    ).tobytes()
    blob = hdr.tobytes() + b"\x00" * (VOXEL_OFFSET - HEADER_SIZE) + payload

    if path.suffix == ".gz":
        # fixed mtime and no embedded filename: equal volumes -> equal bytes
        with open(path, "wb") as raw:
            with gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as zf:
                zf.write(blob)
    else:
        with open(path, "wb") as f:
            f.write(blob)


# ---------------------------------------------------------------------------
# dataset layout and descriptor


@dataclass(frozen=True)
class DatasetLayout:
    """Directory names of a dataset rooted at ``root``."""

    root: Path
    images_dir: str = "images"
    labels_dir: str = "labels"
    prostate_dir: str = "prostate_masks"
    descriptor_name: str = "dataset.json"

    @property
    def images(self) -> Path:
        return Path(self.root) / self.images_dir

    @property
    def labels(self) -> Path:
        return Path(self.root) / self.labels_dir

    @property
    def prostate_masks(self) -> Path:
        return Path(self.root) / self.prostate_dir

    @property
    def descriptor(self) -> Path:
        return Path(self.root) / self.descriptor_name


_SIMPLE_SCHEMES = ("zscore", "ct", "fcn", "none")


def parse_scheme(scheme: str):
    """Parse a normalization scheme string into a structured form.

    Returns ``("zscore",)``, ``("ct",)``, ``("fcn",)``, ``("none",)`` or
    ``("fixedclip", min, max)``. Anything outside this closed vocabulary
    raises :class:`ValueError`.
    """
    if not isinstance(scheme, str):
        raise ValueError(f"scheme must be a string, got {type(scheme).__name__}")
    if scheme in _SIMPLE_SCHEMES:
        return (scheme,)
    if scheme.startswith("fixedclip:"):
        parts = scheme.split(":")
        if len(parts) != 3:
            raise ValueError(f"fixedclip scheme must be 'fixedclip:<min>:<max>', got {scheme!r}")
        try:
            lo, hi = float(parts[1]), float(parts[2])
        except ValueError:
            raise ValueError(f"fixedclip bounds must be numeric, got {scheme!r}") from None
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise ValueError(f"fixedclip requires finite max > min, got {scheme!r}")
        return ("fixedclip", lo, hi)
    raise ValueError(
        f"unknown normalization scheme {scheme!r}; "
        f"expected one of {_SIMPLE_SCHEMES} or 'fixedclip:<min>:<max>'"
    )


@dataclass(frozen=True)
class DatasetDescriptor:
    """Channel names and per-channel normalization schemes of a dataset."""

    channel_names: tuple[str, ...]
    normalization_schemes: tuple[str, ...]
    file_ending: str = ".nii.gz"
    tracer_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "normalization_schemes", tuple(self.normalization_schemes))
        if len(self.channel_names) != len(self.normalization_schemes):
            raise ValueError(
                f"{len(self.channel_names)} channel names but "
                f"{len(self.normalization_schemes)} schemes"
            )
        if not self.channel_names:
            raise ValueError("descriptor must declare at least one channel")
        for s in self.normalization_schemes:
            parse_scheme(s)
        if len(self.normalization_schemes) > 1 and self.normalization_schemes[1] != "none":
            raise ValueError(
                f"channel 1 is the mask channel and its scheme must be 'none', "
                f"got {self.normalization_schemes[1]!r}"
            )
        if self.file_ending not in (".nii", ".nii.gz"):
            raise ValueError(f"file_ending must be '.nii' or '.nii.gz', got {self.file_ending!r}")

    def to_dict(self) -> dict:
        return {
            "channel_names": list(self.channel_names),
            "normalization_schemes": list(self.normalization_schemes),
            "file_ending": self.file_ending,
            "tracer_tag": self.tracer_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetDescriptor":
        missing = {"channel_names", "normalization_schemes", "file_ending"} - set(d)
        if missing:
            raise ValueError(f"descriptor missing keys: {sorted(missing)}")
        return cls(
            channel_names=tuple(d["channel_names"]),
            normalization_schemes=tuple(d["normalization_schemes"]),
            file_ending=d["file_ending"],
            tracer_tag=d.get("tracer_tag", ""),
        )


def read_descriptor(root, layout: DatasetLayout | None = None) -> DatasetDescriptor:
    layout = layout or DatasetLayout(Path(root))
    try:
        with open(layout.descriptor, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{layout.descriptor}: malformed JSON: {exc}") from exc
    return DatasetDescriptor.from_dict(payload)


def write_descriptor(descriptor: DatasetDescriptor, root, layout: DatasetLayout | None = None):
    layout = layout or DatasetLayout(Path(root))
    with open(layout.descriptor, "w", encoding="utf-8", newline="\n") as f:
        json.dump(descriptor.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


class Case(NamedTuple):
    """One dataset case; unpacks as (pet, prostate, label, case_id)."""

    pet: Volume
    prostate: Mask
    label: Mask
    case_id: str


def _strip_ending(name: str) -> str | None:
    for ending in (".nii.gz", ".nii"):
        if name.endswith(ending):
            return name[: -len(ending)]
    return None


def load_dataset(root, layout: DatasetLayout | None = None) -> list[Case]:
    """Load all cases of a dataset directory, sorted by case id.

    Each case needs an image, a tumor label, and a prostate mask agreeing
    on grid geometry. Every malformed case is collected and reported in a
    single :class:`DatasetValidationError` naming the offending cases.
    """
    layout = layout or DatasetLayout(Path(root))
    problems: list[str] = []
    if not layout.images.is_dir():
        raise DatasetValidationError([f"images directory missing: {layout.images}"])
    try:
        read_descriptor(layout.root, layout)
    except FileNotFoundError:
        problems.append(f"descriptor missing: {layout.descriptor}")
    except ValueError as exc:
        problems.append(f"descriptor: {exc}")

    case_ids = sorted(
        {
            cid
            for entry in layout.images.iterdir()
            if entry.is_file() and (cid := _strip_ending(entry.name)) is not None
        }
    )
    if not case_ids:
        problems.append(f"no NIfTI images found under {layout.images}")

    cases: list[Case] = []
    for cid in case_ids:
        image_path = next(
            (p for e in (".nii.gz", ".nii") if (p := layout.images / f"{cid}{e}").exists()),
            None,
        )
        parts = {}
        ok = True
        for role, directory, reader in (
            ("image", layout.images, read_volume),
            ("label", layout.labels, read_mask),
            ("prostate mask", layout.prostate_masks, read_mask),
        ):
            path = (
                image_path
                if role == "image"
                else next(
                    (p for e in (".nii.gz", ".nii") if (p := directory / f"{cid}{e}").exists()),
                    None,
                )
            )
            if path is None:
                problems.append(f"{cid}: {role} file missing under {directory}")
                ok = False
                continue
            try:
                parts[role] = reader(path)
            except (OSError, ValueError) as exc:
                problems.append(f"{cid}: unreadable {role}: {exc}")
                ok = False
        if not ok:
            continue
        pet, label, prostate = parts["image"], parts["label"], parts["prostate mask"]
        for role, other in (("label", label), ("prostate mask", prostate)):
            if not pet.geometry.allclose(other.geometry):
                problems.append(
                    f"{cid}: {role} geometry differs from image "
                    f"(dims {other.geometry.dims} vs {pet.geometry.dims})"
                )
                ok = False
        if ok:
            cases.append(Case(pet=pet, prostate=prostate, label=label, case_id=cid))
    if problems:
        raise DatasetValidationError(problems)
    return cases


# ---------------------------------------------------------------------------
# report emission (curves, thresholds, metrics tables, sweep JSON)


def _fmt(x) -> str:
    """Six significant digits, '.' decimal separator."""
    return f"{float(x):.6g}"


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def write_curves_csv(sweep, path) -> None:
    """Per-p average metric curves: p_percent, avg_dsc, avg_nsd, avg_hd95."""
    lines = ["p_percent,avg_dsc,avg_nsd,avg_hd95"]
    for p, d, n, h in zip(sweep.p_values, sweep.avg_dsc, sweep.avg_nsd, sweep.avg_hd95):
        lines.append(f"{_fmt(p)},{_fmt(d)},{_fmt(n)},{_fmt(h)}")
    _write_text(path, "\n".join(lines) + "\n")


def write_thresholds_csv(sweep, path) -> None:
    """Per-image absolute thresholds: case_id, p_percent, threshold_suv."""
    lines = ["case_id,p_percent,threshold_suv"]
    for ci, cid in enumerate(sweep.case_ids):
        for pi, p in enumerate(sweep.p_values):
            lines.append(f"{cid},{_fmt(p)},{_fmt(sweep.thresholds[ci][pi])}")
    _write_text(path, "\n".join(lines) + "\n")


def write_sweep_json(sweep, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(sweep.to_dict(), f, indent=2)
        f.write("\n")


def read_sweep_json(path):
    from .sweep import SweepResult

    with open(path, "r", encoding="utf-8") as f:
        return SweepResult.from_dict(json.load(f))


METRICS_COLUMNS = ("case_id", "dsc", "nsd", "hd95_mm", "empty_pred", "empty_gt")


def write_metrics_csv(rows, path, aggregate: bool = True, wilcoxon: dict | None = None) -> None:
    """Per-case metrics table with an optional aggregate (mean) row.

    ``rows`` is a sequence of (case_id, MetricsResult). ``wilcoxon``, when
    given, maps metric column name -> (W, p) and is appended as two extra
    rows labelled ``wilcoxon_w`` and ``wilcoxon_p`` with blank flag cells.
    """
    lines = [",".join(METRICS_COLUMNS)]
    for cid, m in rows:
        lines.append(
            f"{cid},{_fmt(m.dsc)},{_fmt(m.nsd)},{_fmt(m.hd95_mm)},"
            f"{int(m.flag_empty_pred)},{int(m.flag_empty_gt)}"
        )
    if aggregate and rows:
        n = len(rows)
        means = [
            sum(m.dsc for _, m in rows) / n,
            sum(m.nsd for _, m in rows) / n,
            sum(m.hd95_mm for _, m in rows) / n,
            sum(m.flag_empty_pred for _, m in rows) / n,
            sum(m.flag_empty_gt for _, m in rows) / n,
        ]
        lines.append("mean," + ",".join(_fmt(v) for v in means))
    if wilcoxon:
        by_col = {col: wilcoxon.get(col) for col in ("dsc", "nsd", "hd95_mm")}
        w_cells = [_fmt(v[0]) if v else "" for v in by_col.values()]
        p_cells = [_fmt(v[1]) if v else "" for v in by_col.values()]
        lines.append("wilcoxon_w," + ",".join(w_cells) + ",,")
        lines.append("wilcoxon_p," + ",".join(p_cells) + ",,")
    _write_text(path, "\n".join(lines) + "\n")


_NON_CASE_ROWS = {"mean", "wilcoxon_w", "wilcoxon_p"}


def read_metrics_csv(path) -> list[tuple[str, dict]]:
    """Read back the per-case rows of a metrics CSV as (case_id, column dict)."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0].split(",")[:4] != list(METRICS_COLUMNS[:4]):
        raise ValueError(f"{path}: not a metrics CSV (unexpected header)")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        cid = cells[0]
        if cid in _NON_CASE_ROWS:
            continue
        out.append(
            (
                cid,
                {
                    "dsc": float(cells[1]),
                    "nsd": float(cells[2]),
                    "hd95_mm": float(cells[3]),
                    "empty_pred": bool(int(cells[4])),
                    "empty_gt": bool(int(cells[5])),
                },
            )
        )
    return out


def write_report(obj, path, format: str = "csv") -> None:
    """Serialize a sweep result or a metrics table.

    A sweep result goes to the per-p curves CSV (``format='csv'``) or to a
    lossless JSON mirror (``format='json'``). A metrics table (sequence of
    ``(case_id, MetricsResult)``) goes to the metrics CSV or a JSON list.
    """
    if format not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
    from .sweep import SweepResult

    if isinstance(obj, SweepResult):
        if format == "csv":
            write_curves_csv(obj, path)
        else:
            write_sweep_json(obj, path)
        return
    rows = list(obj)
    if format == "csv":
        write_metrics_csv(rows, path)
    else:
        payload = [
            {
                "case_id": cid,
                "dsc": m.dsc,
                "nsd": m.nsd,
                "hd95_mm": m.hd95_mm,
                "empty_pred": m.flag_empty_pred,
                "empty_gt": m.flag_empty_gt,
            }
            for cid, m in rows
        ]
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
