"""Geometry, volume/mask containers, and spatial operations."""

import numpy as np
import pytest

from petclip import (
    EmptyMaskError,
    GeometryError,
    GridGeometry,
    Mask,
    MultiChannelVolume,
    Volume,
    crop_to_mask,
    largest_component,
    masked_max,
    require_same_geometry,
    resample,
    stack_channels,
)


def geo(dims=(4, 3, 2), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), direction=None):
    return GridGeometry(dims=dims, spacing=spacing, origin=origin, direction=direction)


def test_geometry_validation():
    with pytest.raises(ValueError):
        geo(dims=(0, 3, 2))
    with pytest.raises(ValueError):
        geo(spacing=(1.0, -2.0, 1.0))
    with pytest.raises(ValueError):
        geo(spacing=(1.0, np.inf, 1.0))
    with pytest.raises(ValueError):
        geo(origin=(np.nan, 0.0, 0.0))
    with pytest.raises(ValueError):
        geo(direction=np.ones((3, 3)))
    with pytest.raises(ValueError):
        geo(dims=(4, 3))


def test_geometry_equality_and_allclose():
    a = geo(origin=(1.0, 2.0, 3.0))
    b = geo(origin=(1.0, 2.0, 3.0))
    c = geo(origin=(1.0, 2.0, 3.0 + 5e-7))
    assert a == b
    assert a != c
    assert a.allclose(c)
    assert not a.allclose(geo(origin=(1.0, 2.0, 3.1)))
    assert a != geo(dims=(4, 3, 3), origin=(1.0, 2.0, 3.0))


def test_geometry_world_coordinates():
    perm = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    g = geo(dims=(3, 4, 5), spacing=(1.5, 2.0, 2.5), origin=(10.0, -4.0, 7.0), direction=perm)
    w = g.voxel_centers_world()
    assert w.shape == (3, 3, 4, 5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        i, j, k = rng.integers(0, (3, 4, 5))
        expected = np.asarray(g.origin) + perm @ (np.asarray(g.spacing) * [i, j, k])
        assert np.allclose(w[:, i, j, k], expected)
        assert np.allclose(g.voxel_center((i, j, k)), expected)
        hom = g.affine() @ np.array([i, j, k, 1.0])
        assert np.allclose(hom[:3], expected)
    assert not g.is_diagonal
    assert geo().is_diagonal


def test_geometry_diagonal_mm():
    g = geo(dims=(3, 4, 5), spacing=(2.0, 1.0, 1.0))
    # corner-center to corner-center: (2*2, 3*1, 4*1)
    assert g.diagonal_mm() == pytest.approx(np.sqrt(16 + 9 + 16))
    assert geo(dims=(1, 1, 1)).diagonal_mm() == 0.0


def test_volume_container():
    g = geo(dims=(2, 2, 2))
    flat = np.arange(8.0)
    v = Volume(g, flat)
    assert v.data.shape == (2, 2, 2)
    # flat input is x-fastest
    assert v.data[1, 0, 0] == 1.0 and v.data[0, 1, 0] == 2.0 and v.data[0, 0, 1] == 4.0
    assert np.array_equal(v.linear, flat)
    with pytest.raises(ValueError):
        Volume(g, np.full(8, np.nan))
    with pytest.raises(ValueError):
        Volume(g, np.zeros(7))
    with pytest.raises((ValueError, RuntimeError)):
        v.data[0, 0, 0] = 5.0
    v2 = v.with_data(flat[::-1].copy())
    assert v2.geometry == g and v2.data[0, 0, 0] == 7.0


def test_mask_container():
    g = geo(dims=(2, 2, 1))
    m = Mask(g, np.array([[[1], [0]], [[0], [1]]], dtype=np.uint8))
    assert m.count == 2 and not m.is_empty
    assert m.as_bool.dtype == bool
    assert Mask(g, np.zeros((2, 2, 1))).is_empty
    with pytest.raises(ValueError):
        Mask(g, np.full((2, 2, 1), 2, dtype=np.uint8))


def test_multichannel_and_stack():
    g = geo(dims=(2, 2, 2))
    v = Volume(g, np.arange(8.0))
    m = Mask(g, np.ones((2, 2, 2), dtype=np.uint8))
    mcv = stack_channels(v, m)
    assert isinstance(mcv, MultiChannelVolume) and mcv.n_channels == 2
    assert np.array_equal(mcv.channel(0), v.data)
    assert np.array_equal(mcv.channel(1), np.ones((2, 2, 2)))
    other = Mask(geo(dims=(2, 2, 2), origin=(5.0, 0.0, 0.0)), np.ones((2, 2, 2), dtype=np.uint8))
    with pytest.raises(GeometryError):
        stack_channels(v, other)
    with pytest.raises(GeometryError):
        require_same_geometry(v, other)


def test_resample_output_dims():
    g = geo(dims=(5, 4, 1), spacing=(1.0, 1.0, 1.0))
    v = Volume(g, np.zeros((5, 4, 1)))
    out = resample(v, (2.0, 2.5, 1.0), mode="nearest")
    # 5*1/2 = 2.5 rounds half away to 3; 4/2.5 = 1.6 rounds to 2
    assert out.geometry.dims == (3, 2, 1)
    assert out.geometry.spacing == (2.0, 2.5, 1.0)
    assert out.geometry.origin == g.origin
    tiny = resample(v, (100.0, 100.0, 100.0), mode="nearest")
    assert tiny.geometry.dims == (1, 1, 1)


def test_resample_identity_is_copy():
    rng = np.random.default_rng(3)
    g = geo(dims=(4, 5, 6), spacing=(1.5, 2.0, 2.5))
    v = Volume(g, rng.normal(size=(4, 5, 6)))
    for mode in ("nearest", "trilinear", "bspline3"):
        out = resample(v, (1.5, 2.0, 2.5), mode=mode)
        assert out.geometry == g
        assert np.array_equal(out.data, v.data)


def test_resample_nearest_matches_bruteforce():
    rng = np.random.default_rng(7)
    for _ in range(25):
        dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
        s_in = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
        s_out = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
        v = Volume(geo(dims=dims, spacing=s_in), rng.normal(size=dims))
        out = resample(v, s_out, mode="nearest")
        n_out = out.geometry.dims
        expected = np.empty(n_out)
        for i in range(n_out[0]):
            for j in range(n_out[1]):
                for k in range(n_out[2]):
                    src = [
                        min(dims[a] - 1, max(0, int(np.floor(idx * s_out[a] / s_in[a] + 0.5))))
                        for a, idx in enumerate((i, j, k))
                    ]
                    expected[i, j, k] = v.data[src[0], src[1], src[2]]
        assert np.array_equal(out.data, expected)


def test_resample_trilinear_matches_bruteforce():
    rng = np.random.default_rng(11)
    for _ in range(10):
        dims = tuple(int(d) for d in rng.integers(2, 7, size=3))
        s_in = tuple(float(s) for s in rng.uniform(0.8, 2.5, size=3))
        s_out = tuple(float(s) for s in rng.uniform(0.8, 2.5, size=3))
        v = Volume(geo(dims=dims, spacing=s_in), rng.normal(size=dims))
        out = resample(v, s_out, mode="trilinear")
        n_out = out.geometry.dims
        for i in range(n_out[0]):
            for j in range(n_out[1]):
                for k in range(n_out[2]):
                    # clamp then interpolate; edge replication and clamping agree for order 1
                    xs = [
                        min(dims[a] - 1.0, idx * s_out[a] / s_in[a])
                        for a, idx in enumerate((i, j, k))
                    ]
                    lo = [int(np.floor(x)) for x in xs]
                    hi = [min(dims[a] - 1, lo[a] + 1) for a in range(3)]
                    f = [x - l for x, l in zip(xs, lo)]
                    acc = 0.0
                    for dx in (0, 1):
                        for dy in (0, 1):
                            for dz in (0, 1):
                                wgt = (
                                    (f[0] if dx else 1 - f[0])
                                    * (f[1] if dy else 1 - f[1])
                                    * (f[2] if dz else 1 - f[2])
                                )
                                acc += wgt * v.data[
                                    hi[0] if dx else lo[0],
                                    hi[1] if dy else lo[1],
                                    hi[2] if dz else lo[2],
                                ]
                    assert out.data[i, j, k] == pytest.approx(acc, abs=1e-12)


def test_resample_all_modes_exact_on_lattice():
    # downsampling by exactly 2 lands every output sample on an input voxel,
    # where interpolating schemes must reproduce the stored value
    rng = np.random.default_rng(13)
    dims = (8, 8, 8)
    v = Volume(geo(dims=dims, spacing=(1.0, 1.0, 1.0)), rng.normal(size=dims))
    strided = v.data[::2, ::2, ::2]
    for mode, tol in (("nearest", 0.0), ("trilinear", 1e-12), ("bspline3", 1e-9)):
        out = resample(v, (2.0, 2.0, 2.0), mode=mode)
        assert out.geometry.dims == (4, 4, 4)
        assert np.allclose(out.data, strided, rtol=0.0, atol=tol)


def test_resample_rejections():
    v = Volume(geo(), np.zeros((4, 3, 2)))
    with pytest.raises(ValueError):
        resample(v, (1.0, 1.0, 1.0), mode="lanczos")
    with pytest.raises(ValueError):
        resample(v, (0.0, 1.0, 1.0))
    rot = np.array(
        [
            [np.cos(0.3), -np.sin(0.3), 0.0],
            [np.sin(0.3), np.cos(0.3), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    tilted = Volume(geo(direction=rot), np.zeros((4, 3, 2)))
    with pytest.raises(GeometryError):
        resample(tilted, (2.0, 2.0, 2.0))


def test_crop_to_mask_preserves_world_positions():
    rng = np.random.default_rng(17)
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(3, 10, size=3))
        g = geo(dims=dims, spacing=tuple(rng.uniform(0.5, 3.0, size=3)),
                origin=tuple(rng.uniform(-50, 50, size=3)))
        v = Volume(g, rng.normal(size=dims))
        fg = rng.random(dims) < 0.2
        if not fg.any():
            fg[tuple(rng.integers(0, dims))] = True
        m = Mask(g, fg)
        margin = int(rng.integers(0, 3))
        cropped, lo = crop_to_mask(v, m, margin_voxels=margin)
        # retained voxel (0,0,0) sits where input voxel lo sat
        assert np.allclose(cropped.geometry.voxel_center((0, 0, 0)), g.voxel_center(lo))
        sl = tuple(slice(l, l + d) for l, d in zip(lo, cropped.geometry.dims))
        assert np.array_equal(cropped.data, v.data[sl])
        # the mask is fully inside the crop
        outside = fg.copy()
        outside[sl] = False
        assert not outside.any()
        cm, lo2 = crop_to_mask(m, m, margin_voxels=margin)
        assert lo2 == lo and isinstance(cm, Mask)
        assert cm.count == m.count


def test_crop_to_mask_margin_and_errors():
    g = geo(dims=(5, 5, 5))
    v = Volume(g, np.zeros((5, 5, 5)))
    fg = np.zeros((5, 5, 5), dtype=np.uint8)
    fg[2, 2, 2] = 1
    cropped, lo = crop_to_mask(v, Mask(g, fg), margin_voxels=1)
    assert cropped.geometry.dims == (3, 3, 3) and lo == (1, 1, 1)
    # margin clamps at the grid edge
    cropped, lo = crop_to_mask(v, Mask(g, fg), margin_voxels=10)
    assert cropped.geometry.dims == (5, 5, 5) and lo == (0, 0, 0)
    with pytest.raises(EmptyMaskError):
        crop_to_mask(v, Mask(g, np.zeros((5, 5, 5))), margin_voxels=0)
    with pytest.raises(ValueError):
        crop_to_mask(v, Mask(g, fg), margin_voxels=-1)


def _components_bruteforce(fg, connectivity):
    # flood fill in C scan order; returns list of voxel-index sets
    if connectivity == 6:
        offsets = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    else:
        offsets = [
            (dx, dy, dz)
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)
        ]
    seen = np.zeros_like(fg, dtype=bool)
    comps = []
    dims = fg.shape
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                if not fg[i, j, k] or seen[i, j, k]:
                    continue
                stack = [(i, j, k)]
                seen[i, j, k] = True
                comp = set()
                while stack:
                    p = stack.pop()
                    comp.add(p)
                    for off in offsets:
                        q = (p[0] + off[0], p[1] + off[1], p[2] + off[2])
                        if all(0 <= q[a] < dims[a] for a in range(3)):
                            if fg[q] and not seen[q]:
                                seen[q] = True
                                stack.append(q)
                comps.append(comp)
    return comps


def test_largest_component_matches_floodfill():
    rng = np.random.default_rng(23)
    g = geo(dims=(6, 6, 6))
    for trial in range(25):
        fg = rng.random((6, 6, 6)) < 0.25
        m = Mask(g, fg)
        for connectivity in (6, 26):
            kept = largest_component(m, connectivity=connectivity)
            comps = _components_bruteforce(fg, connectivity)
            if not comps:
                assert kept.is_empty
                continue
            best = max(range(len(comps)), key=lambda c: len(comps[c]))
            # ties keep the earliest component in scan order, which is how
            # both the flood fill above and the label pass enumerate them
            expected = np.zeros((6, 6, 6), dtype=bool)
            for p in comps[best]:
                expected[p] = True
            assert np.array_equal(kept.as_bool, expected), (trial, connectivity)


def test_largest_component_validation():
    m = Mask(geo(), np.zeros((4, 3, 2)))
    with pytest.raises(ValueError):
        largest_component(m, connectivity=18)
    out = largest_component(m)
    assert out.is_empty and out.geometry == m.geometry


def test_masked_max():
    g = geo(dims=(3, 1, 1))
    v = Volume(g, np.array([5.0, 9.0, 2.0]))
    assert masked_max(v, Mask(g, np.array([1, 0, 1], dtype=np.uint8))) == 5.0
    assert masked_max(v, Mask(g, np.ones(3, dtype=np.uint8))) == 9.0
    with pytest.raises(EmptyMaskError):
        masked_max(v, Mask(g, np.zeros(3, dtype=np.uint8)))
