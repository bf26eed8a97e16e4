import filecmp
import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semedge.dataset import DatasetManifest, sample_rng, synth_sample
from semedge.errors import ConfigError, DataError
from semedge.labels import (
    augment, downsample_half, eval_stack, gen_synthetic, mirror, multiclass_labels, read_label_stack,
    seg_to_eval_boundaries, seg_to_training_edges, training_stack, write_label_set,
)

segs = arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(0, 3))


def brute_training(seg, radius, k):
    h, w = seg.shape
    out = np.zeros((k, h, w), np.uint8)
    for y in range(h):
        for x in range(w):
            for qy in range(max(0, y - radius), min(h, y + radius + 1)):
                for qx in range(max(0, x - radius), min(w, x + radius + 1)):
                    if seg[qy, qx] != seg[y, x]:
                        out[seg[y, x], y, x] = 1
                        out[seg[qy, qx], y, x] = 1
    return out


def brute_rim(seg, k):
    h, w = seg.shape
    out = np.zeros((k, h, w), np.uint8)
    for y in range(h):
        for x in range(w):
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                qy, qx = y + dy, x + dx
                if 0 <= qy < h and 0 <= qx < w and seg[qy, qx] != seg[y, x]:
                    out[seg[y, x], y, x] = 1
    return out


# ----------------------------------------------------------- training edges


def test_half_planes_radius1():
    seg = np.array([[0, 0, 1, 1]] * 4, np.uint8)
    out = seg_to_training_edges(seg, radius=1, k=2)
    expected = np.zeros((4, 4), np.uint8)
    expected[:, 1:3] = 1
    assert np.array_equal(out[0], expected) and np.array_equal(out[1], expected)
    assert out[:, 0, 0].sum() == 0


def test_constant_map_has_no_edges():
    assert not seg_to_training_edges(np.full((5, 6), 2, np.uint8), 2, 3).any()


def test_stripe_radius2_band():
    seg = np.zeros((7, 9), np.uint8)
    seg[:, 4] = 1
    out = seg_to_training_edges(seg, radius=2, k=2)
    assert np.array_equal(out, brute_training(seg, 2, 2))
    cols = np.nonzero(out[0].any(axis=0))[0]
    assert list(cols) == [2, 3, 4, 5, 6]  # two pixels each side of the stripe
    assert list(np.nonzero(out[1].any(axis=0))[0]) == [2, 3, 4, 5, 6]


@given(seg=segs, radius=st.integers(1, 3))
def test_training_matches_brute_force(seg, radius):
    assert np.array_equal(seg_to_training_edges(seg, radius, 4), brute_training(seg, radius, 4))


@given(seg=segs, radius=st.integers(2, 4))
def test_monotone_in_radius(seg, radius):
    big = seg_to_training_edges(seg, radius, 4)
    small = seg_to_training_edges(seg, radius - 1, 4)
    assert np.all(big >= small)


@given(seg=segs, perm=st.permutations(range(4)))
def test_relabel_equivariance(seg, perm):
    perm = np.array(perm)
    out = seg_to_training_edges(seg, 2, 4)
    relabeled = seg_to_training_edges(perm[seg].astype(np.uint8), 2, 4)
    # channel perm[c] of the relabeled stack is channel c of the original
    assert np.array_equal(relabeled[perm], out)
    ev = seg_to_eval_boundaries(seg, 4)
    assert np.array_equal(seg_to_eval_boundaries(perm[seg].astype(np.uint8), 4)[perm], ev)


@given(seg=segs)
def test_two_sided(seg):
    out = seg_to_training_edges(seg, 1, 4)
    h, w = seg.shape
    for y in range(h):
        for x in range(w):
            for qy in range(max(0, y - 1), min(h, y + 2)):
                for qx in range(max(0, x - 1), min(w, x + 2)):
                    a, b = seg[y, x], seg[qy, qx]
                    if a != b:
                        assert out[a, y, x] and out[b, y, x] and out[a, qy, qx] and out[b, qy, qx]


@given(seg=segs, radius=st.integers(1, 3))
def test_eval_subset_of_training(seg, radius):
    assert np.all(seg_to_training_edges(seg, radius, 4) >= seg_to_eval_boundaries(seg, 4))


def test_radius_must_be_positive():
    with pytest.raises(ConfigError):
        seg_to_training_edges(np.zeros((3, 3), np.uint8), 0, 1)


def test_seg_id_out_of_range():
    with pytest.raises(DataError):
        seg_to_training_edges(np.array([[0, 5]]), 1, 3)


# ------------------------------------------------------------ eval boundaries


def test_eval_half_planes():
    seg = np.array([[0, 0, 0, 1, 1, 1]] * 5, np.uint8)
    out = seg_to_eval_boundaries(seg, 2)
    assert np.array_equal(out, brute_rim(seg, 2))
    assert list(np.nonzero(out[0].any(axis=0))[0]) == [2]
    assert list(np.nonzero(out[1].any(axis=0))[0]) == [3]


def test_eval_isolated_pixel():
    seg = np.zeros((5, 5), np.uint8)
    seg[2, 2] = 2
    out = seg_to_eval_boundaries(seg, 3)
    assert out[2].sum() == 1 and out[2, 2, 2] == 1


def test_eval_constant():
    assert not seg_to_eval_boundaries(np.ones((4, 4), np.uint8), 2).any()


@given(seg=segs)
def test_eval_is_thinned_rim(seg):
    from semedge.bench import thin

    out = seg_to_eval_boundaries(seg, 4)
    rim = brute_rim(seg, 4)
    assert np.all(out <= rim)
    for c in range(4):
        assert np.array_equal(thin(out[c]), out[c])


def test_background_channel_selection():
    seg = np.array([[0, 0, 1, 2]] * 3, np.uint8)
    full = seg_to_training_edges(seg, 1, 3)
    assert np.array_equal(training_stack(seg, 2, 1), full[1:])
    assert np.array_equal(training_stack(seg, 2, 1, background_as_class=True), full)
    assert eval_stack(seg, 2).shape == (2, 3, 4)


def test_multiclass_labels_prefer_own_class():
    seg = np.array([[1, 1, 2, 2]] * 2, np.uint8)
    stack = training_stack(seg, 2, 1)
    lab = multiclass_labels(seg, stack)
    assert lab.tolist() == [[0, 1, 2, 0]] * 2


def test_multiclass_background_pixel_takes_lowest_edge_class():
    seg = np.array([[0, 2, 1]], np.uint8)
    stack = training_stack(seg, 2, 1)
    lab = multiclass_labels(seg, stack)
    # background pixel at 0 only touches class 2; pixel 1 is class 2 itself
    assert lab.tolist() == [[2, 2, 1]]


# ------------------------------------------------------------------- halving


def test_halve_binary_or():
    b = np.zeros((2, 2), np.uint8)
    b[1, 0] = 1
    assert downsample_half(b).tolist() == [[1]]


def test_halve_constant_prob():
    p = np.full((5, 7), 0.3, np.float32)
    out = downsample_half(p)
    assert out.shape == (3, 4)
    np.testing.assert_allclose(out, 0.3, rtol=1e-6)


def test_halve_checkerboard():
    p = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.float64)
    out = downsample_half(p)
    # half-pixel bilinear at scale 1/2 samples the centre of each 2x2 cell
    np.testing.assert_array_equal(out, np.full((2, 2), 0.5))


@given(arrays(np.uint8, st.tuples(st.integers(1, 3), st.integers(1, 9), st.integers(1, 9)),
              elements=st.integers(0, 1)))
def test_halve_preserves_any_edge(stack):
    out = downsample_half(stack)
    assert out.shape == (stack.shape[0], -(-stack.shape[1] // 2), -(-stack.shape[2] // 2))
    assert np.array_equal(out.any(axis=(1, 2)), stack.any(axis=(1, 2)))


# ---------------------------------------------------------------- augmentation


def test_mirror_twice_identity():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 255, (6, 7, 3), dtype=np.uint8)
    lab = rng.integers(0, 2, (3, 6, 7), dtype=np.uint8)
    i2, l2 = mirror(*mirror(img, lab))
    assert np.array_equal(i2, img) and np.array_equal(l2, lab)


def test_full_crop_no_mirror_identity():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 255, (6, 7, 3), dtype=np.uint8)
    lab = rng.integers(0, 2, (3, 6, 7), dtype=np.uint8)
    i2, l2 = augment(img, lab, False, (6, 7), rng)
    assert np.array_equal(i2, img) and np.array_equal(l2, lab)


def test_seeded_crop_matches_region():
    img = np.arange(10 * 12 * 3, dtype=np.int64).reshape(10, 12, 3).astype(np.uint16)
    lab = np.arange(2 * 10 * 12).reshape(2, 10, 12)
    rng = np.random.default_rng(42)
    ci, cl = augment(img, lab, True, (4, 5), rng)
    # replay the same draws to recover the transform
    r = np.random.default_rng(42)
    flip = bool(r.integers(2))
    top, left = int(r.integers(7)), int(r.integers(8))
    exp_l = lab[:, top:top + 4, left:left + 5]
    exp_i = img[top:top + 4, left:left + 5]
    if flip:
        exp_l, exp_i = exp_l[..., ::-1], exp_i[:, ::-1]
    assert np.array_equal(cl, exp_l) and np.array_equal(ci, exp_i)
    # image and labels moved together: the pixel index encoded in both agrees
    assert np.array_equal(ci[..., 0] // 3 % 120, cl[0] % 120)


def test_oversize_crop():
    with pytest.raises(ConfigError):
        augment(np.zeros((4, 4, 3)), np.zeros((1, 4, 4)), False, (5, 4), np.random.default_rng(0))


# ------------------------------------------------------------------ synthetic


def test_gen_synthetic_deterministic(tmp_path):
    a = gen_synthetic(tmp_path / "a", seed=5, n_images=4, h=32, w=32, k=3)
    gen_synthetic(tmp_path / "b", seed=5, n_images=4, h=32, w=32, k=3)
    assert len(a) == 4
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("images", "segs"):
        names = sorted(os.listdir(tmp_path / "a" / sub))
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub, names, shallow=False)
        assert not mismatch and not errors
    assert (tmp_path / "a" / "train.json").read_bytes() == (tmp_path / "b" / "train.json").read_bytes()


def test_gen_synthetic_zero_shapes(tmp_path):
    m = gen_synthetic(tmp_path, seed=1, n_images=2, h=16, w=16, k=3, shapes_per_image=0)
    for i in range(2):
        _, seg = m.load(i)
        assert not seg.any()
        assert not training_stack(seg, 3).any()


def test_gen_synthetic_zero_images(tmp_path):
    m = gen_synthetic(tmp_path, seed=1, n_images=0)
    assert len(m) == 0
    assert len(DatasetManifest.read(tmp_path / "train.json")) == 0


def test_gen_synthetic_count(tmp_path):
    m = gen_synthetic(tmp_path, seed=1, n_images=200, h=8, w=8, k=3, shapes_per_image=1)
    assert len(DatasetManifest.read(tmp_path / "train.json")) == 200 == len(m)


def test_occlusion_boundary_is_multilabel():
    seg = None
    for i in range(50):
        _, s = synth_sample(sample_rng(1, "train", i), 64, 64, 3, 4)
        a, b = s[:, :-1], s[:, 1:]
        if np.any((a != b) & (a > 0) & (b > 0)):
            seg = s
            break
    assert seg is not None
    stack = seg_to_training_edges(seg, 2, 4)
    ys, xs = np.nonzero((seg[:, :-1] != seg[:, 1:]) & (seg[:, :-1] > 0) & (seg[:, 1:] > 0))
    for y, x in zip(ys, xs):
        a, b = seg[y, x], seg[y, x + 1]
        for px in (x, x + 1):
            assert stack[a, y, px] and stack[b, y, px]


def test_sample_streams_independent():
    a = synth_sample(sample_rng(3, "train", 7), 16, 16, 3, 2)[1]
    b = synth_sample(sample_rng(3, "train", 7), 16, 16, 3, 2)[1]
    c = synth_sample(sample_rng(3, "test", 7), 16, 16, 3, 2)[1]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) or not a.any()


# ---------------------------------------------------------------- label files


def test_label_files_roundtrip(tmp_path):
    m = gen_synthetic(tmp_path / "d", seed=2, n_images=3, h=16, w=16, k=2)
    write_label_set(m, tmp_path / "lab", radius=2)
    _, seg = m.load(1)
    tr = read_label_stack(tmp_path / "lab", m.stem(1), "train", False, radius=2)
    ev = read_label_stack(tmp_path / "lab", m.stem(1), "eval", False)
    assert np.array_equal(tr, training_stack(seg, 2, 2))
    assert np.array_equal(ev, eval_stack(seg, 2))
    with pytest.raises(ConfigError):
        read_label_stack(tmp_path / "lab", m.stem(1), "train", False, radius=1)
    with pytest.raises(DataError):
        read_label_stack(tmp_path / "nowhere", m.stem(1), "train", False)


def test_label_dir_shared_between_splits(tmp_path):
    tr = gen_synthetic(tmp_path / "d", seed=2, n_images=2, h=16, w=16, k=2, split="train")
    te = gen_synthetic(tmp_path / "d", seed=2, n_images=1, h=16, w=16, k=2, split="test")
    write_label_set(tr, tmp_path / "lab")
    write_label_set(te, tmp_path / "lab")
    meta = json.loads((tmp_path / "lab" / "labels.json").read_text())
    assert meta["files"] == sorted([f"{tr.stem(0)}.npz", f"{tr.stem(1)}.npz", f"{te.stem(0)}.npz"])
    with pytest.raises(ConfigError):
        write_label_set(te, tmp_path / "lab", radius=3)
