"""Batch command-line interface.

One binary, subcommand style::

    petclip phantom     --spec spec.json --n 20 --seed 7 --out data/
    petclip fingerprint --dataset data/ --scope whole --out fp.json
    petclip fcn-fit     --dataset data/ --out sweep.json --curves curves.csv
    petclip normalize   --dataset data/ --scheme fcn --fingerprint fp.json --out norm/
    petclip segment     --dataset data/ --percent 34 --out preds/
    petclip evaluate    --pred preds/ --gt data/ --out metrics.csv

Every flag can also come from a JSON config file (``--config``); explicit
flags win. Exit codes: 0 success, 1 domain/validation error, 2 I/O error.
Each successful run writes a manifest JSON recording the resolved
configuration; stdout stays silent unless ``--json`` asks for a
machine-readable summary (diagnostics go to stderr).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import MissingFingerprintError
from .metrics import evaluate_pair, wilcoxon_signed_rank
from .nifti import (
    DatasetDescriptor,
    DatasetLayout,
    load_dataset,
    parse_scheme,
    read_descriptor,
    read_mask,
    read_metrics_csv,
    write_curves_csv,
    write_descriptor,
    write_metrics_csv,
    write_sweep_json,
    write_thresholds_csv,
    write_volume,
)
from .normalize import apply_scheme, fingerprint, read_fingerprint, write_fingerprint
from .phantom import generate_family, read_phantom_spec
from .sweep import SweepConfig, ThresholdSegmenter, fcn_sweep
from .volume import Mask, stack_channels

_SCOPE_MAP = {"prostate": "prostate_only", "whole": "whole_image"}

_DEFAULTS: dict[str, dict] = {
    "phantom": {"spec": None, "n": None, "seed": None, "out": None, "json": False},
    "fingerprint": {"dataset": None, "scope": "whole", "out": None, "json": False},
    "fcn-fit": {
        "dataset": None,
        "p_start": 20.0,
        "p_end": 70.0,
        "p_step": 2.0,
        "tau": 2.0,
        "scope": "prostate",
        "out": None,
        "curves": None,
        "thresholds": None,
        "fingerprint": None,
        "jobs": None,
        "json": False,
    },
    "normalize": {
        "dataset": None,
        "scheme": None,
        "fingerprint": None,
        "rescale": False,
        "out": None,
        "jobs": None,
        "json": False,
    },
    "segment": {
        "dataset": None,
        "percent": None,
        "threshold": None,
        "out": None,
        "jobs": None,
        "json": False,
    },
    "evaluate": {
        "pred": None,
        "gt": None,
        "tau": 2.0,
        "out": None,
        "wilcoxon": None,
        "jobs": None,
        "json": False,
    },
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "phantom": ("spec", "n", "seed", "out"),
    "fingerprint": ("dataset", "out"),
    "fcn-fit": ("dataset", "out", "curves"),
    "normalize": ("dataset", "scheme", "out"),
    "segment": ("dataset", "out"),
    "evaluate": ("pred", "gt", "out"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="petclip",
        description="PET preprocessing, threshold contouring, and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"petclip {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON file of flag defaults (flags win)")
        p.add_argument("--json", action="store_const", const=True, default=None,
                       help="print a machine-readable summary to stdout")
        return p

    p = add("phantom", "generate a synthetic dataset family from a spec file")
    p.add_argument("--spec", default=None, help="phantom spec JSON")
    p.add_argument("--n", type=int, default=None, help="number of cases")
    p.add_argument("--seed", type=int, default=None, help="family seed")
    p.add_argument("--out", default=None, help="output dataset directory")

    p = add("fingerprint", "compute dataset intensity statistics")
    p.add_argument("--dataset", default=None, help="dataset directory")
    p.add_argument("--scope", choices=sorted(_SCOPE_MAP), default=None,
                   help="voxel scope for the statistics (default whole)")
    p.add_argument("--out", default=None, help="fingerprint JSON output path")

    p = add("fcn-fit", "run the threshold sweep and derive maxT")
    p.add_argument("--dataset", default=None, help="dataset directory")
    p.add_argument("--p-start", dest="p_start", type=float, default=None)
    p.add_argument("--p-end", dest="p_end", type=float, default=None)
    p.add_argument("--p-step", dest="p_step", type=float, default=None)
    p.add_argument("--tau", type=float, default=None, help="NSD tolerance in mm")
    p.add_argument("--scope", choices=sorted(_SCOPE_MAP), default=None,
                   help="SUVmax / evaluation scope (default prostate)")
    p.add_argument("--out", default=None, help="sweep result JSON output path")
    p.add_argument("--curves", default=None, help="per-p average metrics CSV output path")
    p.add_argument("--thresholds", default=None, help="optional per-case threshold CSV path")
    p.add_argument("--fingerprint", default=None,
                   help="existing fingerprint JSON to update with the fitted maxT")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: all cores)")

    p = add("normalize", "apply an intensity normalization scheme to a dataset")
    p.add_argument("--dataset", default=None, help="input dataset directory")
    p.add_argument("--scheme", default=None,
                   help="zscore | ct | fixedclip:MIN:MAX | fcn | none")
    p.add_argument("--fingerprint", default=None, help="fingerprint JSON (needed by ct/fcn)")
    p.add_argument("--rescale", action="store_const", const=True, default=None,
                   help="with scheme fcn, map the clip band onto [0, 1]")
    p.add_argument("--out", default=None, help="output dataset directory")
    p.add_argument("--jobs", type=int, default=None)

    p = add("segment", "threshold-based semi-automatic contouring")
    p.add_argument("--dataset", default=None, help="dataset directory")
    p.add_argument("--percent", type=float, default=None,
                   help="threshold at this percent of per-case intra-prostatic SUVmax")
    p.add_argument("--threshold", type=float, default=None, help="absolute SUV threshold")
    p.add_argument("--out", default=None, help="output directory for predicted masks")
    p.add_argument("--jobs", type=int, default=None)

    p = add("evaluate", "score predictions against ground truth")
    p.add_argument("--pred", default=None, help="directory of predicted masks")
    p.add_argument("--gt", default=None, help="dataset root or directory of ground-truth masks")
    p.add_argument("--tau", type=float, default=None, help="NSD tolerance in mm")
    p.add_argument("--out", default=None, help="metrics CSV output path")
    p.add_argument("--wilcoxon", default=None,
                   help="metrics CSV of another run for a paired signed-rank test")
    p.add_argument("--jobs", type=int, default=None)

    return parser


def _load_config_file(path, defaults: dict) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    unknown = set(payload) - set(defaults)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return payload


def _resolve(args: argparse.Namespace, command: str) -> dict:
    defaults = _DEFAULTS[command]
    file_cfg = _load_config_file(args.config, defaults)
    merged = {}
    for key, builtin in defaults.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
        elif key in file_cfg:
            merged[key] = file_cfg[key]
        else:
            merged[key] = builtin
    missing = [k for k in _REQUIRED[command] if merged[k] is None]
    if missing:
        raise ValueError(
            f"{command}: missing required option(s): "
            + ", ".join("--" + m.replace("_", "-") for m in missing)
        )
    return merged


def _jobs(cfg) -> int:
    return int(cfg.get("jobs") or os.cpu_count() or 1)


def _map_ordered(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _write_manifest(path: Path, command: str, cfg: dict, inputs, outputs, started, n_cases: int):
    payload = {
        "command": command,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "duration_seconds": round(time.monotonic() - started, 6),
        "n_cases": n_cases,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _emit(cfg: dict, summary: dict) -> None:
    if cfg.get("json"):
        print(json.dumps(summary, sort_keys=True))


def _mask_endings(directory: Path) -> dict[str, Path]:
    out = {}
    for entry in sorted(directory.iterdir()):
        name = entry.name
        for ending in (".nii.gz", ".nii"):
            if name.endswith(ending):
                out[name[: -len(ending)]] = entry
                break
    return out


def _run_phantom(cfg: dict, started: float) -> dict:
    spec = read_phantom_spec(cfg["spec"])
    out = Path(cfg["out"])
    ids = generate_family(spec, int(cfg["n"]), int(cfg["seed"]), out)
    _write_manifest(out / "manifest.json", "phantom", cfg, [cfg["spec"]], [out], started, len(ids))
    return {"command": "phantom", "out": str(out), "case_ids": ids}


def _run_fingerprint(cfg: dict, started: float) -> dict:
    cases = load_dataset(cfg["dataset"])
    fp = fingerprint(cases, mask_scope=_SCOPE_MAP[cfg["scope"]])
    if fp.global_std < 1e-8:
        print("warning: global std is 0 (constant-intensity dataset)", file=sys.stderr)
    write_fingerprint(fp, cfg["out"])
    _write_manifest(
        Path(str(cfg["out"]) + ".manifest.json"),
        "fingerprint", cfg, [cfg["dataset"]], [cfg["out"]], started, len(cases),
    )
    return {"command": "fingerprint", **fp.to_dict()}


def _run_fcn_fit(cfg: dict, started: float) -> dict:
    cases = load_dataset(cfg["dataset"])
    config = SweepConfig(
        p_start=float(cfg["p_start"]),
        p_end=float(cfg["p_end"]),
        p_step=float(cfg["p_step"]),
        mask_scope=_SCOPE_MAP[cfg["scope"]],
        nsd_tau_mm=float(cfg["tau"]),
    )
    result = fcn_sweep(cases, config, jobs=_jobs(cfg))
    write_sweep_json(result, cfg["out"])
    write_curves_csv(result, cfg["curves"])
    outputs = [cfg["out"], cfg["curves"]]
    if cfg["thresholds"]:
        write_thresholds_csv(result, cfg["thresholds"])
        outputs.append(cfg["thresholds"])
    if cfg["fingerprint"]:
        fp = read_fingerprint(cfg["fingerprint"])
        write_fingerprint(fp.with_maxT(result.max_t), cfg["fingerprint"])
        outputs.append(cfg["fingerprint"])
    _write_manifest(
        Path(str(cfg["out"]) + ".manifest.json"),
        "fcn-fit", cfg, [cfg["dataset"]], outputs, started, len(cases),
    )
    return {
        "command": "fcn-fit",
        "p_maxDSC": result.p_max_dsc,
        "p_maxNSD": result.p_max_nsd,
        "t_maxDSC": result.t_max_dsc,
        "t_maxNSD": result.t_max_nsd,
        "maxT": result.max_t,
        "n_cases": len(cases),
    }


def _run_normalize(cfg: dict, started: float) -> dict:
    scheme = cfg["scheme"]
    kind = parse_scheme(scheme)[0]
    if kind in ("ct", "fcn") and not cfg["fingerprint"]:
        raise MissingFingerprintError(f"--scheme {kind} requires --fingerprint")
    fp = read_fingerprint(cfg["fingerprint"]) if cfg["fingerprint"] else None
    root = cfg["dataset"]
    cases = load_dataset(root)
    descriptor = read_descriptor(root)
    schemes = (scheme,) + ("none",) * (len(descriptor.channel_names) - 1)
    out_descriptor = DatasetDescriptor(
        channel_names=descriptor.channel_names,
        normalization_schemes=schemes,
        file_ending=descriptor.file_ending,
        tracer_tag=descriptor.tracer_tag,
    )
    out = Path(cfg["out"])
    layout = DatasetLayout(out)
    for d in (layout.images, layout.labels, layout.prostate_masks):
        d.mkdir(parents=True, exist_ok=True)
    ending = descriptor.file_ending
    rescale = bool(cfg["rescale"])

    def work(case):
        mcv = apply_scheme(
            stack_channels(case.pet, case.prostate), out_descriptor, fp, rescale_fcn=rescale
        )
        write_volume(case.pet.with_data(mcv.channel(0)), layout.images / f"{case.case_id}{ending}")
        write_volume(
            Mask(case.prostate.geometry, mcv.channel(1)),
            layout.prostate_masks / f"{case.case_id}{ending}",
        )
        write_volume(case.label, layout.labels / f"{case.case_id}{ending}")
        return case.case_id

    ids = _map_ordered(work, cases, _jobs(cfg))
    write_descriptor(out_descriptor, out, layout)
    _write_manifest(out / "manifest.json", "normalize", cfg, [root], [out], started, len(ids))
    summary = {"command": "normalize", "scheme": scheme, "n_cases": len(ids), "out": str(out)}
    if fp is not None and kind == "fcn":
        summary["minT"] = fp.minT
        summary["maxT"] = fp.maxT
    return summary


def _run_segment(cfg: dict, started: float) -> dict:
    percent, threshold = cfg["percent"], cfg["threshold"]
    if (percent is None) == (threshold is None):
        raise ValueError("set exactly one of --percent / --threshold")
    cases = load_dataset(cfg["dataset"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    segmenter = ThresholdSegmenter(
        percent=percent, threshold_suv=threshold, mask_scope="prostate_only"
    )

    def work(case):
        pred = segmenter.predict(case.pet, case.prostate)
        write_volume(pred, out / f"{case.case_id}.nii.gz")
        return case.case_id

    ids = _map_ordered(work, cases, _jobs(cfg))
    _write_manifest(out / "manifest.json", "segment", cfg, [cfg["dataset"]], [out], started, len(ids))
    mode = {"percent": percent} if percent is not None else {"threshold": threshold}
    return {"command": "segment", "n_cases": len(ids), "out": str(out), **mode}


def _run_evaluate(cfg: dict, started: float) -> dict:
    pred_dir = Path(cfg["pred"])
    gt_root = Path(cfg["gt"])
    gt_dir = gt_root / "labels" if (gt_root / "labels").is_dir() else gt_root
    if not pred_dir.is_dir():
        raise ValueError(f"prediction directory not found: {pred_dir}")
    if not gt_dir.is_dir():
        raise ValueError(f"ground-truth directory not found: {gt_dir}")
    preds = _mask_endings(pred_dir)
    gts = _mask_endings(gt_dir)
    if not preds:
        raise ValueError(f"no prediction masks found under {pred_dir}")
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        raise ValueError(
            "unmatched case ids between pred and gt"
            + (f"; missing ground truth for {only_pred}" if only_pred else "")
            + (f"; missing predictions for {only_gt}" if only_gt else "")
        )
    tau = float(cfg["tau"])
    case_ids = sorted(preds)

    def work(cid):
        return cid, evaluate_pair(read_mask(preds[cid]), read_mask(gts[cid]), tau_mm=tau)

    rows = _map_ordered(work, case_ids, _jobs(cfg))
    wilc = None
    wilc_summary = {}
    if cfg["wilcoxon"]:
        other = dict(read_metrics_csv(cfg["wilcoxon"]))
        if sorted(other) != case_ids:
            raise ValueError(
                f"case ids in {cfg['wilcoxon']} do not match the evaluated cases"
            )
        wilc = {}
        for col, get in (
            ("dsc", lambda m: m.dsc),
            ("nsd", lambda m: m.nsd),
            ("hd95_mm", lambda m: m.hd95_mm),
        ):
            ours = [get(m) for _, m in rows]
            theirs = [other[cid][col] for cid in case_ids]
            res = wilcoxon_signed_rank(ours, theirs)
            wilc[col] = (res.statistic, res.p_value)
            wilc_summary[f"wilcoxon_p_{col}"] = res.p_value
            wilc_summary[f"wilcoxon_degenerate_{col}"] = res.degenerate
    write_metrics_csv(rows, cfg["out"], aggregate=True, wilcoxon=wilc)
    _write_manifest(
        Path(str(cfg["out"]) + ".manifest.json"),
        "evaluate", cfg,
        [str(pred_dir), str(gt_dir)] + ([cfg["wilcoxon"]] if cfg["wilcoxon"] else []),
        [cfg["out"]], started, len(rows),
    )
    n = len(rows)
    return {
        "command": "evaluate",
        "n_cases": n,
        "mean_dsc": sum(m.dsc for _, m in rows) / n,
        "mean_nsd": sum(m.nsd for _, m in rows) / n,
        "mean_hd95_mm": sum(m.hd95_mm for _, m in rows) / n,
        **wilc_summary,
    }


_RUNNERS = {
    "phantom": _run_phantom,
    "fingerprint": _run_fingerprint,
    "fcn-fit": _run_fcn_fit,
    "normalize": _run_normalize,
    "segment": _run_segment,
    "evaluate": _run_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap to 1
        code = exc.code or 0
        return 0 if code == 0 else 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    started = time.monotonic()
    try:
        cfg = _resolve(args, args.command)
        summary = _RUNNERS[args.command](cfg, started)
    except OSError as exc:
        print(f"petclip {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"petclip {args.command}: {exc}", file=sys.stderr)
        return 1
    _emit(cfg, summary)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
