import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partforge import geometry, rng, synthdata


@pytest.fixture(scope="module")
def obj():
    return synthdata.generate_object(3, 4)


def test_generation_is_deterministic():
    a = synthdata.generate_object(5, 3)
    b = synthdata.generate_object(5, 3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_part_count_bounds():
    with pytest.raises(ValueError):
        synthdata.generate_object(0, 1)
    with pytest.raises(ValueError):
        synthdata.generate_object(0, 9)


def test_normalized_bounds_exact(obj):
    lo, hi = obj.bounds()
    assert np.all(lo >= -1.0 - 1e-9) and np.all(hi <= 1.0 + 1e-9)
    assert np.isclose(max(hi - lo), 2.0)  # longest axis spans exactly


def test_labels_unique_and_known(obj):
    labels = [p.label for p in obj.parts]
    assert len(set(labels)) == len(labels)
    assert set(labels) <= set(synthdata.PART_LABELS)


def test_overlap_filter(obj):
    assert synthdata._pairwise_overlap_iou(obj.parts) < synthdata.MAX_OVERLAP_IOU


def test_parts_attached(obj):
    for p in obj.parts:
        assert any(synthdata._boxes_touch(p, q, synthdata.ATTACH_TOL)
                   for q in obj.parts if q is not p)


def test_every_part_visible_somewhere(obj):
    seen = set()
    for view in synthdata.canonical_views():
        r = synthdata.render_depth(obj, view)
        seen |= set(np.unique(r.part_mask)) - {0}
    assert seen == set(range(1, obj.n_parts + 1))


def test_render_depth_consistent_with_mask(obj):
    r = synthdata.render_depth(obj, (45.0, 20.0))
    assert r.depth.shape == (synthdata.RENDER_SIZE, synthdata.RENDER_SIZE)
    assert np.all(np.isfinite(r.depth) == (r.part_mask > 0))


def test_depth_values_plausible(obj):
    r = synthdata.render_depth(obj, (0.0, 20.0))
    d = r.depth[np.isfinite(r.depth)]
    # camera sits 3 canonical units out; the object fits in [-1,1]^3
    assert d.min() >= 3.0 - np.sqrt(3.0) - 1e-6
    assert d.max() <= 3.0 + np.sqrt(3.0) + 1e-6


def test_sample_points_on_surface(obj):
    part = obj.parts[0]
    cloud = synthdata.sample_points(part, 200, rng.stream(0, "s"))
    v, f = part.mesh()
    d = geometry.point_triangle_distances(cloud.points, v, f)
    assert d.max() < 0.05 * part.scale + 1e-9


def test_object_sampling_area_weighted(obj):
    cloud = synthdata.sample_object_points(obj, 1000, rng.stream(0, "o"))
    areas = np.array([synthdata._part_surface_area(p) for p in obj.parts])
    frac = np.bincount(cloud.labels, minlength=obj.n_parts) / len(cloud.labels)
    assert np.allclose(frac, areas / areas.sum(), atol=0.05)


def test_pointcloud_roundtrip(tmp_path, obj):
    cloud = synthdata.sample_points(obj.parts[0], 64, rng.stream(1, "rt"))
    synthdata.write_pointcloud(tmp_path / "c.prtf", cloud)
    back = synthdata.read_pointcloud(tmp_path / "c.prtf")
    assert np.allclose(back.points, cloud.points, atol=1e-6)  # f32 storage


def test_export_and_load_roundtrip(tmp_path, obj):
    synthdata.export_object(obj, tmp_path / "o1", points_per_part=16)
    back = synthdata.load_object(tmp_path / "o1")
    assert json.dumps(back.to_dict()) == json.dumps(obj.to_dict())
    meta = json.loads((tmp_path / "o1" / "view_00.json").read_text())
    assert meta["H"] == synthdata.RENDER_SIZE
    raw = np.frombuffer((tmp_path / "o1" / "view_00.depth").read_bytes(),
                        dtype="<f4")
    assert raw.size == meta["H"] * meta["W"]
    assert (raw == meta["background_depth"]).any()


def test_bad_magic_rejected(tmp_path):
    (tmp_path / "bad.prtf").write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ValueError):
        synthdata.read_pointcloud(tmp_path / "bad.prtf")


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 5))
def test_generated_objects_satisfy_invariants(seed, n_parts):
    obj = synthdata.generate_object(seed, n_parts)
    assert obj.n_parts == n_parts == len(obj.parts)
    lo, hi = obj.bounds()
    assert np.all(lo >= -1.0 - 1e-9) and np.all(hi <= 1.0 + 1e-9)
    assert synthdata._pairwise_overlap_iou(obj.parts) < 0.5


def test_corpus_items_complete():
    corpus = synthdata.build_corpus(1, 2, points_per_part=32)
    assert len(corpus) == 2
    item = corpus[0]
    assert len(item.renders) == synthdata.N_VIEWS
    assert len(item.part_clouds) == item.obj.n_parts
    assert item.part_labels == [p.label for p in item.obj.parts]
