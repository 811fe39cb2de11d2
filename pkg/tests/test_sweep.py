"""Threshold sweep, maxT selection, and the segmenter front end."""

import numpy as np
import pytest

from petclip import (
    Case,
    EmptyMaskError,
    GeometryError,
    GridGeometry,
    Mask,
    SweepConfig,
    SweepResult,
    ThresholdSegmenter,
    Volume,
    compute_threshold,
    fcn_maxT,
    fcn_sweep,
    threshold_segment,
)
from petclip.sweep import coerce_cases


def line_volume(values, spacing=2.0):
    values = np.asarray(values, dtype=float)
    g = GridGeometry(dims=(values.size, 1, 1), spacing=(spacing,) * 3)
    return Volume(g, values)


def toy_case():
    pet = line_volume([10, 5, 4, 1, 0, 0, 0, 0])
    g = pet.geometry
    prostate = Mask(g, np.ones(8, dtype=np.uint8))
    label = Mask(g, np.array([1, 1, 0, 0, 0, 0, 0, 0], dtype=np.uint8))
    return pet, prostate, label


def test_config_grid():
    cfg = SweepConfig()
    grid = cfg.p_values()
    assert len(grid) == 26
    assert grid[0] == 20.0 and grid[-1] == 70.0
    assert all(b - a == 2.0 for a, b in zip(grid, grid[1:]))
    assert SweepConfig(p_start=35.0, p_end=35.0).p_values() == (35.0,)
    assert SweepConfig(p_start=10.0, p_end=20.0, p_step=3.0).p_values() == (10.0, 13.0, 16.0, 19.0)
    for bad in (
        dict(p_start=0.0),
        dict(p_start=50.0, p_end=40.0),
        dict(p_end=101.0),
        dict(p_step=0.0),
        dict(mask_scope="everything"),
        dict(nsd_tau_mm=-1.0),
    ):
        with pytest.raises(ValueError):
            SweepConfig(**bad)


def test_compute_threshold():
    assert compute_threshold(20.0, 10.0) == 2.0
    assert compute_threshold(35.0, 8.4) == pytest.approx(2.94, abs=1e-15)
    assert compute_threshold(100.0, 7.0) == 7.0
    with pytest.raises(ValueError):
        compute_threshold(0.0, 5.0)
    with pytest.raises(ValueError):
        compute_threshold(20.0, -1.0)
    with pytest.raises(ValueError):
        compute_threshold(np.nan, 5.0)


def test_threshold_segment():
    pet, prostate, _ = toy_case()
    pred = threshold_segment(pet, prostate, 4.0)
    assert np.array_equal(pred.data.ravel(), [1, 1, 1, 0, 0, 0, 0, 0])  # >= is inclusive
    scope = Mask(pet.geometry, np.array([0, 1, 1, 1, 1, 1, 1, 1], dtype=np.uint8))
    pred = threshold_segment(pet, scope, 4.0)
    assert np.array_equal(pred.data.ravel(), [0, 1, 1, 0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        threshold_segment(pet, prostate, np.inf)
    other = Mask(GridGeometry(dims=(8, 1, 1), spacing=(1.0, 1.0, 1.0)), np.ones(8))
    with pytest.raises(GeometryError):
        threshold_segment(pet, other, 1.0)


def test_coerce_cases():
    pet, prostate, label = toy_case()
    out = coerce_cases([(pet, prostate, label)])
    assert out[0][3] == "case_000"
    out = coerce_cases([Case(pet, prostate, label, "patient_7")])
    assert out[0][3] == "patient_7"
    with pytest.raises(ValueError):
        coerce_cases([(pet, prostate)])


def test_sweep_toy_fixture_frozen():
    res = fcn_sweep([toy_case()])
    # hand-derived on the 8-voxel line (spacing 2 mm, label = {10, 5}):
    # DSC is 0.8 from p=20 (pred {10,5,4}) and first reaches 1.0 at p=42;
    # NSD is already 1.0 at p=20 because the extra voxel lies 2 mm = tau
    # from the label surface. Ties resolve to the smallest p.
    assert res.p_max_dsc == 42.0
    assert res.p_max_nsd == 20.0
    assert res.t_max_dsc == pytest.approx(4.2, abs=1e-12)
    assert res.t_max_nsd == pytest.approx(2.0, abs=1e-12)
    assert res.max_t == pytest.approx(3.1, abs=1e-12)
    assert fcn_maxT(res) == res.max_t
    by_p = dict(zip(res.p_values, res.avg_dsc))
    assert by_p[20.0] == 0.8
    assert all(by_p[p] == 1.0 for p in (42.0, 44.0, 46.0, 48.0, 50.0))
    assert all(v == 1.0 for v in res.avg_nsd)
    assert res.case_ids == ("case_000",)
    assert res.thresholds[0][0] == 2.0 and res.thresholds[0][-1] == 7.0


def test_sweep_scales_with_intensity():
    pet, prostate, label = toy_case()
    scaled = pet.with_data(pet.data * 2.0)
    a = fcn_sweep([(pet, prostate, label)])
    b = fcn_sweep([(scaled, prostate, label)])
    assert a.p_max_dsc == b.p_max_dsc and a.p_max_nsd == b.p_max_nsd
    assert a.avg_dsc == b.avg_dsc and a.avg_nsd == b.avg_nsd and a.avg_hd95 == b.avg_hd95
    assert b.max_t == 2.0 * a.max_t  # exact: scaling by a power of two
    assert all(tb == 2.0 * ta for ta, tb in zip(a.thresholds[0], b.thresholds[0]))


def test_sweep_case_order_and_jobs_invariance():
    pet, prostate, label = toy_case()
    shifted = pet.with_data(pet.data * 0.75)
    c1 = (pet, prostate, label, "a")
    c2 = (shifted, prostate, label, "b")
    fwd = fcn_sweep([c1, c2])
    rev = fcn_sweep([c2, c1])
    assert fwd.avg_dsc == rev.avg_dsc
    assert fwd.max_t == rev.max_t  # two-term means commute exactly
    assert fwd.case_ids == ("a", "b") and rev.case_ids == ("b", "a")
    threaded = fcn_sweep([c1, c2], jobs=4)
    assert threaded == fwd


def test_sweep_mask_scope():
    # hottest voxel outside the prostate: only whole_image sees it
    pet = line_volume([20, 10, 5, 4, 1, 0, 0, 0])
    g = pet.geometry
    prostate = Mask(g, np.array([0, 1, 1, 1, 1, 1, 1, 1], dtype=np.uint8))
    label = Mask(g, np.array([0, 1, 1, 0, 0, 0, 0, 0], dtype=np.uint8))
    case = (pet, prostate, label)
    inside = fcn_sweep([case], SweepConfig(mask_scope="prostate_only"))
    outside = fcn_sweep([case], SweepConfig(mask_scope="whole_image"))
    assert inside.thresholds[0][0] == 2.0  # 20% of intra-prostatic max 10
    assert outside.thresholds[0][0] == 4.0  # 20% of global max 20
    # p=20 prostate_only: pred {10,5,4} vs label {10,5} -> 0.8; the hot voxel
    # stays out. whole_image admits it: pred {20,10,5,4} vs {10,5} -> 2/3
    assert inside.avg_dsc[0] == 0.8
    assert outside.avg_dsc[0] == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_sweep_label_restricted_to_scope():
    pet = line_volume([10, 5, 1, 1, 1, 1, 1, 1])
    g = pet.geometry
    prostate = Mask(g, np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.uint8))
    # one labeled voxel outside the prostate is ignored under prostate_only
    label = Mask(g, np.array([1, 1, 0, 0, 1, 0, 0, 0], dtype=np.uint8))
    res = fcn_sweep([(pet, prostate, label)], SweepConfig(p_start=50.0, p_end=50.0))
    assert res.avg_dsc == (1.0,)


def test_sweep_errors():
    pet, prostate, label = toy_case()
    with pytest.raises(ValueError):
        fcn_sweep([])
    empty = Mask(pet.geometry, np.zeros(8, dtype=np.uint8))
    with pytest.raises(EmptyMaskError, match="case_000"):
        fcn_sweep([(pet, empty, label)])


def test_sweep_prediction_volume_monotone_in_p():
    rng = np.random.default_rng(101)
    dims = (6, 6, 6)
    g = GridGeometry(dims=dims, spacing=(2.0, 2.0, 2.0))
    pet = Volume(g, rng.uniform(0.0, 10.0, dims))
    prostate = Mask(g, np.ones(dims, dtype=np.uint8))
    suvmax = pet.data.max()
    counts = []
    for p in SweepConfig().p_values():
        pred = threshold_segment(pet, prostate, compute_threshold(p, suvmax))
        counts.append(pred.count)
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_sweep_result_validation_and_roundtrip():
    res = fcn_sweep([toy_case()])
    assert SweepResult.from_dict(res.to_dict()) == res
    with pytest.raises(ValueError):
        SweepResult(
            p_values=(20.0,), avg_dsc=(1.0, 0.5), avg_nsd=(1.0,), avg_hd95=(0.0,),
            case_ids=("a",), thresholds=((2.0,),),
            p_max_dsc=20.0, p_max_nsd=20.0, t_max_dsc=2.0, t_max_nsd=2.0, max_t=2.0,
        )
    with pytest.raises(ValueError):
        SweepResult(
            p_values=(20.0,), avg_dsc=(1.0,), avg_nsd=(1.0,), avg_hd95=(0.0,),
            case_ids=("a",), thresholds=((2.0,),),
            p_max_dsc=30.0, p_max_nsd=20.0, t_max_dsc=2.0, t_max_nsd=2.0, max_t=2.0,
        )
    with pytest.raises(ValueError):
        SweepResult(
            p_values=(20.0,), avg_dsc=(1.0,), avg_nsd=(1.0,), avg_hd95=(0.0,),
            case_ids=("a", "b"), thresholds=((2.0,),),
            p_max_dsc=20.0, p_max_nsd=20.0, t_max_dsc=2.0, t_max_nsd=2.0, max_t=2.0,
        )


def test_threshold_segmenter():
    pet, prostate, label = toy_case()
    seg = ThresholdSegmenter(percent=40.0)
    assert seg.fit() is seg
    pred = seg.predict(pet, prostate)
    assert np.array_equal(pred.data.ravel(), [1, 1, 1, 0, 0, 0, 0, 0])
    absolute = ThresholdSegmenter(threshold_suv=4.2).predict(pet, prostate)
    assert np.array_equal(absolute.data.ravel(), [1, 1, 0, 0, 0, 0, 0, 0])
    scope = Mask(pet.geometry, np.array([0, 1, 1, 1, 1, 1, 1, 1], dtype=np.uint8))
    scoped = ThresholdSegmenter(percent=50.0).predict(pet, scope)
    # 50% of the in-scope max 5 is 2.5: voxels {5, 4} qualify
    assert np.array_equal(scoped.data.ravel(), [0, 1, 1, 0, 0, 0, 0, 0])
    whole = ThresholdSegmenter(percent=40.0, mask_scope="whole_image").predict(pet)
    assert np.array_equal(whole.data.ravel(), [1, 1, 1, 0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        ThresholdSegmenter().predict(pet, prostate)
    with pytest.raises(ValueError):
        ThresholdSegmenter(percent=40.0, threshold_suv=2.0).predict(pet, prostate)
    with pytest.raises(ValueError):
        ThresholdSegmenter(percent=40.0).predict(pet)
    params = ThresholdSegmenter(percent=40.0).get_params()
    assert params == {"percent": 40.0, "threshold_suv": None, "mask_scope": "prostate_only"}
