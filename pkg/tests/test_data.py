import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrpose.data.coco import load_keypoint_annotations
from mrpose.data.loader import AugmentationConfig, batch_iterator, normalise, prepare_item
from mrpose.data.manifest import DatasetManifest, Record
from mrpose.data.skeleton import coco17, get_skeleton, mpii16, synthetic12
from mrpose.data.synthetic import SyntheticConfig, generate_synthetic_dataset
from mrpose.data.transforms import (
    crop_affine,
    crop_matrix,
    expand_box_to_aspect,
    flip_keypoints,
    transform_keypoints,
)
from mrpose.heatmap import decode_keypoints, encode_heatmaps
from mrpose.metrics import PersonInstance


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_dataset(SyntheticConfig(n_train=10, n_val=4), seed=3)


# ----------------------------------------------------------------------------
# boxes and affine crops


def test_expand_examples():
    assert expand_box_to_aspect((0, 0, 100, 100)) == pytest.approx((0, -50 / 3, 100, 400 / 3))
    assert expand_box_to_aspect((5, 5, 30, 40)) == (5, 5, 30, 40)
    x, y, w, h = expand_box_to_aspect((0, 0, 200, 100))
    assert (w, h) == pytest.approx((200, 800 / 3))
    with pytest.raises(ValueError):
        expand_box_to_aspect((0, 0, 0, 10))


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 500), st.floats(0.5, 500),
       st.sampled_from([4 / 3, 1.0, 0.5]))
def test_expand_property(x, y, w, h, ratio):
    bx, by, bw, bh = expand_box_to_aspect((x, y, w, h), ratio)
    assert bw >= w and bh >= h
    assert bh / bw == pytest.approx(ratio, rel=1e-9)
    assert (bx + bw / 2, by + bh / 2) == pytest.approx((x + w / 2, y + h / 2))
    assert bw == w or bh == h


def test_pure_resize_maps_corners():
    t = crop_matrix((0, 0, 96, 128), (64, 48))
    np.testing.assert_allclose(t.apply([[0, 0], [96, 128], [48, 64]]), [[0, 0], [48, 64], [24, 32]],
                               atol=1e-12)


def test_flip_mirror_formula_and_swap():
    sk = coco17()
    kps = np.zeros((17, 3))
    kps[5] = (10, 50, 2)  # left shoulder
    out = flip_keypoints(kps, 256, sk.flip_permutation())
    assert out[6].tolist() == [245, 50, 2] and out[5, 2] == 0
    t = crop_matrix((0, 0, 256, 256), (256, 256), flip=True)
    crop_kps = transform_keypoints(kps, t, sk.flip_permutation())
    assert crop_kps[6, :2].tolist() == pytest.approx([245, 50])


def test_rotation_fixes_centre():
    t = crop_matrix((10, 20, 60, 80), (64, 48), rotation=90)
    assert t.apply([[40, 60]])[0] == pytest.approx([24, 32])
    # a point right of centre rotates onto the vertical axis
    p = t.apply([[50, 60]])[0]
    assert p[0] == pytest.approx(24)


def test_off_canvas_demoted():
    t = crop_matrix((0, 0, 48, 64), (64, 48))
    kps = np.array([[10, 10, 2], [-5, 10, 2], [10, 70, 1]], dtype=float)
    assert transform_keypoints(kps, t)[:, 2].tolist() == [2, 0, 0]


def test_degenerate_box():
    with pytest.raises(ValueError):
        crop_matrix((0, 0, 10, 0), (64, 48))
    with pytest.raises(ValueError):
        crop_matrix((0, 0, 10, 10), (64, 48), scale=0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(5, 300), st.floats(-180, 180),
       st.floats(0.5, 1.5), st.booleans(),
       st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)), min_size=1, max_size=8))
def test_transform_roundtrip(x, y, w, rot, scale, flip, pts):
    t = crop_matrix((x, y, w, w * 4 / 3), (256, 192), rot, scale, flip)
    pts = np.array(pts)
    np.testing.assert_allclose(t.apply_inverse(t.apply(pts)), pts, atol=1e-6)
    full = np.vstack([t.matrix, [0, 0, 1]]) @ np.vstack([t.inverse, [0, 0, 1]])
    np.testing.assert_allclose(full, np.eye(3), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["coco17", "mpii16", "synthetic12"]))
def test_flip_involution(seed, name):
    sk = get_skeleton(name)
    rng = np.random.default_rng(seed)
    kps = np.column_stack([rng.uniform(0, 100, (sk.k, 2)), rng.integers(0, 3, sk.k)])
    perm = sk.flip_permutation()
    twice = flip_keypoints(flip_keypoints(kps, 192, perm), 192, perm)
    np.testing.assert_allclose(twice, kps, atol=1e-12)


def test_crop_affine_image_and_keypoints_agree():
    img = np.zeros((100, 80))
    img[40, 30] = 255.0
    crop, t, kps = crop_affine(img, (0, 0, 80, 100), np.array([[30, 40, 2]]), (100, 80),
                               rotation=0, scale=1.0)
    assert np.unravel_index(np.argmax(crop), crop.shape) == (40, 30)
    assert kps[0].tolist() == [30, 40, 2]


@pytest.mark.parametrize("crop_size,cell_centre,tol", [
    ((256, 192), False, 2.0), ((64, 48), True, 1.0), ((64, 48), False, 2.0)])
def test_encode_decode_roundtrip_through_crop(crop_size, cell_centre, tol):
    rng = np.random.default_rng(0)
    h, w = crop_size
    box = (0.0, 0.0, float(w), float(h))
    t = crop_matrix(box, crop_size)
    for _ in range(50):
        if cell_centre:
            kps = np.column_stack([rng.integers(0, w // 4, 5) * 4, rng.integers(0, h // 4, 5) * 4,
                                   np.full(5, 2)]).astype(float)
        else:
            kps = np.column_stack([rng.uniform(0, w - 2, 5), rng.uniform(0, h - 2, 5), np.full(5, 2)])
        crop_kps = transform_keypoints(kps, t)
        maps, _ = encode_heatmaps(crop_kps, (h // 4, w // 4))
        got, _, _ = decode_keypoints(maps, t.inverse)
        assert np.abs(got - kps[:, :2]).max() <= tol


# ----------------------------------------------------------------------------
# skeletons


def test_skeleton_presets():
    assert coco17().k == 17 and mpii16().k == 16 and synthetic12().k == 12
    sk = synthetic12()
    assert sk.joint_names[sk.torso[0]] == "right_hip"
    assert sk.joint_names[sk.torso[1]] == "left_shoulder"
    perm = sk.flip_permutation()
    assert sorted(perm) == list(range(12)) and [perm[i] for i in perm] == list(range(12))
    with pytest.raises(ValueError):
        type(sk)(["a", "b", "c"], [(0, 1), (1, 2)], (0, 1), (0, 1))


# ----------------------------------------------------------------------------
# synthetic generator


def test_generator_deterministic(small):
    again = generate_synthetic_dataset(SyntheticConfig(n_train=10, n_val=4), seed=3)
    a = json.dumps(small.to_dict(), sort_keys=True)
    assert a == json.dumps(again.to_dict(), sort_keys=True)
    for r1, r2 in zip(small.records, again.records):
        assert r1.raster.tobytes() == r2.raster.tobytes()
    other = generate_synthetic_dataset(SyntheticConfig(n_train=10, n_val=4), seed=4)
    assert any(r1.raster.tobytes() != r2.raster.tobytes()
               for r1, r2 in zip(small.records, other.records))


def test_generator_split_sizes(small):
    assert len(small.split("train")) == 10 and len(small.split("val")) == 4
    assert small.skeleton.k == 12


def test_generator_no_occlusion_all_visible():
    m = generate_synthetic_dataset(SyntheticConfig(n_train=8, n_val=0, occlusion_rate=0.0,
                                                   drop_rate=0.0), seed=1)
    assert all(np.all(r.instance.keypoints[:, 2] == 2) for r in m.records)


def test_generator_rates_and_torso_kept():
    m = generate_synthetic_dataset(SyntheticConfig(n_train=60, n_val=0, occlusion_rate=0.2,
                                                   drop_rate=0.2), seed=2)
    v = np.concatenate([r.instance.keypoints[:, 2] for r in m.records])
    assert set(np.unique(v)) == {0.0, 1.0, 2.0}
    torso = list(m.skeleton.torso)
    assert all(np.all(r.instance.keypoints[torso, 2] > 0) for r in m.records)


def test_generator_keypoints_inside_image(small):
    for r in small.records:
        h, w = r.raster.shape
        kps = r.instance.keypoints
        lab = kps[:, 2] > 0
        assert np.all((kps[lab, 0] >= 0) & (kps[lab, 0] < w) & (kps[lab, 1] >= 0) & (kps[lab, 1] < h))
        x, y, bw, bh = r.instance.box
        assert bw > 0 and bh > 0 and r.instance.head_size > 0


def test_manifest_save_load(tmp_path):
    m = generate_synthetic_dataset(SyntheticConfig(n_train=3, n_val=1), seed=5, out_dir=tmp_path)
    assert (tmp_path / "manifest.json").exists()
    back = DatasetManifest.load(tmp_path / "manifest.json")
    assert len(back) == 4 and back.skeleton.joint_names == m.skeleton.joint_names
    for r1, r2 in zip(m.records, back.records):
        np.testing.assert_array_equal(r1.instance.keypoints, r2.instance.keypoints)
        np.testing.assert_array_equal(r1.load_image(m.root), r2.load_image(back.root))


def test_manifest_rejects_wrong_k():
    inst = PersonInstance(np.zeros((5, 3)), (0, 0, 1, 1))
    with pytest.raises(ValueError):
        DatasetManifest([Record(inst)], synthetic12())


# ----------------------------------------------------------------------------
# loader


def test_batch_sizes(small):
    train = small.split("train")
    sizes = [b.images.shape[0] for b in batch_iterator(train, 4, seed=0)]
    assert sizes == [4, 4, 2]
    b = next(batch_iterator(train, 4, augmentation=AugmentationConfig(crop_size=(128, 96))))
    assert b.images.shape == (4, 3, 128, 96) and b.images.dtype == np.float32
    assert b.targets.shape == (4, 12, 32, 24) and b.weights.shape == (4, 12)


def test_batch_errors(small):
    with pytest.raises(ValueError):
        next(batch_iterator(small, 0))
    with pytest.raises(ValueError):
        next(batch_iterator(small.split("nothing"), 4))


def _stream(m, **kw):
    return [(b.images.tobytes(), b.targets.tobytes(), b.weights.tobytes())
            for b in batch_iterator(m, 3, **kw)]


def test_stream_determinism(small):
    off = AugmentationConfig(enabled=False, crop_size=(64, 48))
    assert _stream(small, seed=1, augmentation=off) == _stream(small, seed=1, augmentation=off)
    on = AugmentationConfig(crop_size=(64, 48))
    assert _stream(small, seed=1, augmentation=on) == _stream(small, seed=1, augmentation=on)
    assert _stream(small, seed=1, augmentation=on) != _stream(small, seed=2, augmentation=on)
    assert (_stream(small, seed=1, epoch=1, augmentation=on)
            != _stream(small, seed=1, epoch=0, augmentation=on))


def test_workers_preserve_order(small):
    on = AugmentationConfig(crop_size=(64, 48))
    assert (_stream(small, seed=4, augmentation=on, workers=3)
            == _stream(small, seed=4, augmentation=on, workers=1))


def test_normalisation():
    raster = np.array([[0, 255], [127, 128]], dtype=np.uint8)
    x = normalise(raster, 0.5, 0.25)
    assert x.shape == (3, 2, 2) and np.array_equal(x[0], x[2])
    assert x[0, 0, 0] == pytest.approx(-2.0) and x[0, 0, 1] == pytest.approx(2.0)


def test_normalised_channel_means_near_zero():
    m = generate_synthetic_dataset(SyntheticConfig(n_train=40, n_val=0), seed=9)
    aug = AugmentationConfig(enabled=False, crop_size=(128, 96))
    imgs = np.concatenate([b.images for b in batch_iterator(m, 20, augmentation=aug)])
    means = imgs.mean(axis=(0, 2, 3))
    assert np.all(np.abs(means) < 0.25), means


def test_prepare_item_targets_follow_keypoints(small):
    aug = AugmentationConfig(enabled=False, crop_size=(128, 96))
    _, target, weight, t = prepare_item(small, 0, aug, None)
    kps = small.records[0].instance.keypoints
    got, _, _ = decode_keypoints(target, t.inverse)
    lab = weight > 0
    # half a heatmap cell (2 crop px), scaled back to the original frame
    scale = expand_box_to_aspect(small.records[0].instance.box)[3] / 128
    assert np.abs(got[lab] - kps[lab, :2]).max() <= 2 * scale + 1e-6


def test_augmentation_ranges(small):
    aug = AugmentationConfig(rotation_max=30, scale_max=0.4, flip_prob=1.0, crop_size=(64, 48))
    _, _, _, t = prepare_item(small, 0, aug, np.random.default_rng(0))
    assert t.flipped
    aug_defaults = AugmentationConfig.coco()
    assert (aug_defaults.rotation_max, aug_defaults.scale_max, aug_defaults.flip_prob,
            aug_defaults.crop_size) == (30.0, 0.4, 0.5, (256, 192))
    mpii = AugmentationConfig.mpii()
    assert (mpii.scale_max, mpii.crop_size) == (0.25, (256, 256))


# ----------------------------------------------------------------------------
# COCO-style annotations


def _doc(k=17, **ann):
    base = {"id": 7, "image_id": 1, "bbox": [10, 20, 30, 40],
            "keypoints": [5, 6, 1] + [0, 0, 0] * (k - 1)}
    base.update(ann)
    return {"images": [{"id": 1, "file_name": "a.pgm"}], "annotations": [base]}


def test_coco_minimal(tmp_path):
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(_doc()))
    m = load_keypoint_annotations(p)
    assert len(m) == 1
    inst = m.records[0].instance
    assert inst.keypoints[0].tolist() == [5, 6, 1]  # v=1 stays labeled-not-visible
    assert inst.box == (10, 20, 30, 40) and inst.object_scale == pytest.approx(np.sqrt(1200))
    assert m.records[0].image_path == "a.pgm"


def test_coco_errors(tmp_path):
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(_doc(keypoints=[1, 2, 2] * 16)))
    with pytest.raises(ValueError, match="record 0"):
        load_keypoint_annotations(p)
    doc = _doc()
    doc["annotations"].append({"image_id": 1})
    p.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="record 1"):
        load_keypoint_annotations(p)
    p.write_text("{not json")
    with pytest.raises(ValueError, match="malformed"):
        load_keypoint_annotations(p)


def test_coco_missing_box_skipped(tmp_path):
    doc = _doc()
    doc["annotations"].append({**doc["annotations"][0], "id": 8, "bbox": None})
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(doc))
    m = load_keypoint_annotations(p)
    assert len(m) == 1 and m.skipped == 1


def test_coco_custom_skeleton(tmp_path):
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(_doc(k=12)))
    assert load_keypoint_annotations(p, synthetic12()).skeleton.k == 12
