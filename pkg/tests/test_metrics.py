"""Overlap and surface metrics against brute-force oracles."""

import math

import numpy as np
import pytest

from petclip import (
    DEFAULT_NSD_TAU_MM,
    EmptyMaskError,
    GeometryError,
    GridGeometry,
    Mask,
    dsc,
    evaluate_pair,
    hd95,
    nsd,
    surface_distances,
)


def geo(dims, spacing=(1.0, 1.0, 1.0)):
    return GridGeometry(dims=dims, spacing=spacing)


def _boundary_points(fg):
    """Foreground voxels with a face neighbor that is background or off-grid."""
    dims = fg.shape
    pts = []
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                if not fg[i, j, k]:
                    continue
                for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    q = (i + d[0], j + d[1], k + d[2])
                    if not all(0 <= q[a] < dims[a] for a in range(3)):
                        pts.append((i, j, k))
                        break
                    if not fg[q]:
                        pts.append((i, j, k))
                        break
    return pts


def _directed(src, dst, spacing):
    out = []
    for a in src:
        best = math.inf
        for b in dst:
            d = math.sqrt(sum(((a[x] - b[x]) * spacing[x]) ** 2 for x in range(3)))
            best = min(best, d)
        out.append(best)
    return out


def _pct95(vals):
    v = sorted(vals)
    h = (len(v) - 1) * 0.95
    lo = int(math.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def _random_pair(rng, dims, p=0.3):
    a = rng.random(dims) < p
    b = rng.random(dims) < p
    if not a.any():
        a[tuple(rng.integers(0, dims))] = True
    if not b.any():
        b[tuple(rng.integers(0, dims))] = True
    return a, b


def test_dsc_matches_set_oracle():
    rng = np.random.default_rng(47)
    g = geo((5, 4, 3))
    for _ in range(50):
        a, b = _random_pair(rng, (5, 4, 3))
        expected = 2 * np.sum(a & b) / (np.sum(a) + np.sum(b))
        got = dsc(Mask(g, a), Mask(g, b))
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == dsc(Mask(g, b), Mask(g, a))


def test_dsc_empty_conventions():
    g = geo((3, 3, 3))
    empty = Mask(g, np.zeros((3, 3, 3)))
    full = Mask(g, np.ones((3, 3, 3)))
    assert dsc(empty, empty) == 1.0
    assert dsc(empty, full) == 0.0
    assert dsc(full, empty) == 0.0
    assert dsc(full, full) == 1.0


def test_surface_distances_match_allpairs_oracle():
    rng = np.random.default_rng(53)
    for trial in range(20):
        dims = tuple(int(d) for d in rng.integers(2, 6, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
        g = geo(dims, spacing)
        a, b = _random_pair(rng, dims)
        dists = surface_distances(Mask(g, a), Mask(g, b))
        pa = _boundary_points(a)
        pb = _boundary_points(b)
        assert dists.d_pred_to_gt.size == len(pa)
        assert dists.d_gt_to_pred.size == len(pb)
        assert np.allclose(
            np.sort(dists.d_pred_to_gt), np.sort(_directed(pa, pb, spacing)), atol=1e-10
        ), trial
        assert np.allclose(
            np.sort(dists.d_gt_to_pred), np.sort(_directed(pb, pa, spacing)), atol=1e-10
        ), trial


def test_nsd_and_hd95_match_oracle():
    rng = np.random.default_rng(59)
    for trial in range(20):
        dims = tuple(int(d) for d in rng.integers(2, 6, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
        g = geo(dims, spacing)
        a, b = _random_pair(rng, dims)
        pa = _boundary_points(a)
        pb = _boundary_points(b)
        d_ab = _directed(pa, pb, spacing)
        d_ba = _directed(pb, pa, spacing)
        tau = float(rng.uniform(0.0, 4.0))
        want_nsd = (sum(d <= tau for d in d_ab) + sum(d <= tau for d in d_ba)) / (
            len(d_ab) + len(d_ba)
        )
        want_hd = max(_pct95(d_ab), _pct95(d_ba))
        ma, mb = Mask(g, a), Mask(g, b)
        assert nsd(ma, mb, tau_mm=tau) == pytest.approx(want_nsd, abs=1e-12), trial
        assert hd95(ma, mb) == pytest.approx(want_hd, abs=1e-10), trial
        m = evaluate_pair(ma, mb, tau_mm=tau)
        assert m.dsc == dsc(ma, mb)
        assert m.nsd == pytest.approx(want_nsd, abs=1e-12)
        assert m.hd95_mm == pytest.approx(want_hd, abs=1e-10)
        assert m.nsd_tau_mm == tau
        assert not m.flag_empty_pred and not m.flag_empty_gt


def test_metrics_symmetry_and_identity():
    rng = np.random.default_rng(61)
    g = geo((4, 4, 4), (1.5, 2.0, 1.0))
    for _ in range(10):
        a, b = _random_pair(rng, (4, 4, 4))
        ma, mb = Mask(g, a), Mask(g, b)
        assert nsd(ma, mb) == pytest.approx(nsd(mb, ma), abs=1e-15)
        assert hd95(ma, mb) == pytest.approx(hd95(mb, ma), abs=1e-12)
        assert dsc(ma, ma) == 1.0 and nsd(ma, ma) == 1.0 and hd95(ma, ma) == 0.0


def test_metrics_translation_invariance():
    rng = np.random.default_rng(67)
    base = np.zeros((10, 10, 10), dtype=bool)
    a_core, b_core = _random_pair(rng, (3, 3, 3))
    g = geo((10, 10, 10), (1.0, 2.0, 3.0))
    results = []
    for shift in ((0, 0, 0), (2, 1, 0), (5, 6, 4)):
        a = base.copy()
        b = base.copy()
        sl = tuple(slice(s, s + 3) for s in shift)
        a[sl] = a_core
        b[sl] = b_core
        m = evaluate_pair(Mask(g, a), Mask(g, b))
        results.append((m.dsc, m.nsd, m.hd95_mm))
    assert results[0] == results[1] == results[2]


def test_empty_mask_conventions():
    g = geo((4, 3, 2), (2.0, 1.0, 1.5))
    empty = Mask(g, np.zeros((4, 3, 2)))
    ball = np.zeros((4, 3, 2), dtype=bool)
    ball[1:3, 1:2, 0:2] = True
    some = Mask(g, ball)

    m = evaluate_pair(empty, empty)
    assert (m.dsc, m.nsd, m.hd95_mm) == (1.0, 1.0, 0.0)
    assert m.flag_empty_pred and m.flag_empty_gt

    sentinel = g.diagonal_mm()
    assert sentinel == pytest.approx(math.sqrt((3 * 2.0) ** 2 + (2 * 1.0) ** 2 + 1.5**2))
    m = evaluate_pair(empty, some)
    assert (m.dsc, m.nsd, m.hd95_mm) == (0.0, 0.0, sentinel)
    assert m.flag_empty_pred and not m.flag_empty_gt
    m = evaluate_pair(some, empty)
    assert (m.dsc, m.nsd, m.hd95_mm) == (0.0, 0.0, sentinel)
    assert not m.flag_empty_pred and m.flag_empty_gt
    assert hd95(empty, some) == sentinel and nsd(empty, some) == 0.0
    with pytest.raises(EmptyMaskError):
        surface_distances(empty, some)


def test_nsd_tau_zero_counts_exact_contact():
    g = geo((4, 1, 1))
    a = Mask(g, np.array([1, 1, 0, 0]))
    b = Mask(g, np.array([0, 1, 1, 0]))
    # boundaries in a 1-voxel column are every fg voxel; only the shared
    # voxel x=1 sits at distance 0 in each direction: 2 of 4 pooled
    assert nsd(a, b, tau_mm=0.0) == 0.5
    assert nsd(a, b, tau_mm=1.0) == 1.0


def test_metric_validation():
    g = geo((3, 3, 3))
    other = GridGeometry(dims=(3, 3, 3), spacing=(2.0, 1.0, 1.0))
    a = Mask(g, np.ones((3, 3, 3)))
    b = Mask(other, np.ones((3, 3, 3)))
    with pytest.raises(GeometryError):
        dsc(a, b)
    with pytest.raises(GeometryError):
        evaluate_pair(a, b)
    with pytest.raises(ValueError):
        nsd(a, a, tau_mm=-1.0)
    with pytest.raises(ValueError):
        evaluate_pair(a, a, tau_mm=-0.5)
    assert DEFAULT_NSD_TAU_MM == 2.0
