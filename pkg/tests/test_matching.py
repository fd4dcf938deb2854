import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_nn, brute_reciprocal, random_pointmap_pair
from relocgeo.errors import EmptyInputError, EmptyInstanceError, InsufficientMatchesWarning, InvalidInputError
from relocgeo.matching import (
    GLOBAL,
    CorrespondenceMap,
    InstanceMask,
    PointMap,
    build_spatial_index,
    match_global,
    match_instance,
    merge_maps,
    nn_match,
    shared_instances,
)

sizes = st.tuples(st.integers(1, 64), st.integers(1, 64))


@settings(max_examples=60)
@given(sizes, st.booleans(), st.integers(0, 2**32 - 1))
def test_nn_match_equals_brute_force(hw, lattice, seed):
    rng = np.random.default_rng(seed)
    (p1, v1), (p2, v2) = random_pointmap_pair(rng, *hw, lattice=lattice)
    pm1, pm2 = PointMap(p1, v1), PointMap(p2, v2)
    got = nn_match(pm1, build_spatial_index(pm2))
    src, dst = brute_nn(p1, v1, p2, v2)
    assert np.array_equal(got.src_idx, src)
    assert np.array_equal(got.dst_idx, dst)


@settings(max_examples=60)
@given(sizes, st.booleans(), st.integers(0, 2**32 - 1))
def test_reciprocal_equals_brute_force(hw, lattice, seed):
    rng = np.random.default_rng(seed)
    (p1, v1), (p2, v2) = random_pointmap_pair(rng, *hw, lattice=lattice)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientMatchesWarning)
        cmap = match_global(PointMap(p1, v1), PointMap(p2, v2))
    assert sorted(zip(cmap.idx1.tolist(), cmap.idx2.tolist())) == brute_reciprocal(p1, v1, p2, v2)
    assert cmap.is_injective()
    assert np.all(cmap.tags == GLOBAL)


def test_all_equidistant_ties_go_to_smallest_index():
    # every destination point is at the same distance from the query
    dst = np.zeros((3, 3, 3))
    src = np.ones((1, 1, 3))
    got = nn_match(PointMap.from_points(src), build_spatial_index(PointMap.from_points(dst)))
    assert got.dst_idx.tolist() == [0]
    ring = np.array([[[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]]])
    got = nn_match(PointMap.from_points(np.zeros((1, 1, 3))), build_spatial_index(PointMap.from_points(ring)))
    assert got.dst_idx.tolist() == [0]


def test_reciprocal_filter_drops_one_sided():
    # 0 and 1 both want 0 on the other side; only 0 <-> 0 is mutual
    p1 = np.array([[[0.0, 0, 0], [0.4, 0, 0]]])
    p2 = np.array([[[0.1, 0, 0], [5.0, 0, 0]]])
    with pytest.warns(InsufficientMatchesWarning):
        cmap = match_global(PointMap.from_points(p1), PointMap.from_points(p2))
    assert cmap.pairs() == [((0, 0), (0, 0))]


def test_identical_maps_match_pixel_to_itself(rng):
    pts = rng.normal(size=(8, 10, 3))
    cmap = match_global(PointMap.from_points(pts), PointMap.from_points(pts))
    assert len(cmap) == 80
    assert np.array_equal(cmap.idx1, cmap.idx2)


def test_confidence_gate_and_stride(rng):
    pts = rng.normal(size=(6, 6, 3))
    conf = np.zeros((6, 6))
    conf[:3] = 1.0
    pm = PointMap(pts, np.ones((6, 6), bool), conf)
    assert pm.gated(0.5).sum() == 18
    assert pm.gated(0.0, stride=2).sum() == 9
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientMatchesWarning)
        cmap = match_global(pm, pm, min_confidence=0.5, stride=2)
    assert set(cmap.pix1[:, 1].tolist()) <= {0, 2}
    assert set(cmap.pix1[:, 0].tolist()) <= {0, 2, 4}


def test_pointmap_validation():
    with pytest.raises(InvalidInputError):
        PointMap(np.zeros((4, 4, 2)), np.ones((4, 4), bool))
    with pytest.raises(InvalidInputError):
        PointMap(np.zeros((4, 4, 3)), np.ones((3, 4), bool))
    bad = np.zeros((2, 2, 3))
    bad[0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        PointMap(bad, np.ones((2, 2), bool))
    assert not PointMap.from_points(bad).valid[0, 0]


def test_empty_inputs_raise():
    empty = PointMap(np.zeros((2, 2, 3)), np.zeros((2, 2), bool))
    full = PointMap(np.zeros((2, 2, 3)), np.ones((2, 2), bool))
    with pytest.raises(EmptyInputError):
        build_spatial_index(empty)
    with pytest.raises(EmptyInputError):
        nn_match(empty, build_spatial_index(full))


def test_instance_matching_restricted_to_mask(rng):
    pts = rng.normal(size=(6, 8, 3))
    labels = np.zeros((6, 8), np.uint8)
    labels[:, :4] = 2
    m = InstanceMask(labels)
    cmap = match_instance(PointMap.from_points(pts), PointMap.from_points(pts), m, m, 2)
    assert len(cmap) == 24
    assert np.all(cmap.tags == 2)
    assert np.all(cmap.pix1[:, 0] < 4) and np.all(cmap.pix2[:, 0] < 4)
    with pytest.raises(EmptyInstanceError):
        match_instance(PointMap.from_points(pts), PointMap.from_points(pts), m, m, 7)
    with pytest.raises(InvalidInputError):
        match_instance(PointMap.from_points(pts), PointMap.from_points(pts), InstanceMask(labels[:5]), m, 2)


def test_shared_instances():
    a = InstanceMask(np.array([[0, 1], [3, 3]]))
    b = InstanceMask(np.array([[3, 2], [1, 0]]))
    assert shared_instances(a, b) == [1, 3]


def conflict_scene(h=6, w=8):
    """Half-image mask; the global map disagrees with the instance map everywhere.

    Global pairs send pixel (u, v) to (w-1-u, v); instance pairs inside the left
    half send it to (u, v).
    """
    labels = np.zeros((h, w), np.uint8)
    labels[:, : w // 2] = 1
    mask = InstanceMask(labels)
    all_idx = np.arange(h * w)
    u, v = all_idx % w, all_idx // w
    glob = CorrespondenceMap(all_idx, v * w + (w - 1 - u), np.zeros(h * w, np.int16), (h, w), (h, w))
    inside = np.flatnonzero(labels.ravel() == 1)
    inst = CorrespondenceMap(inside, inside.copy(), np.ones(len(inside), np.int16), (h, w), (h, w))
    return glob, inst, mask


def check_merge_conformance(glob, per, mask, merged):
    """Pixel-by-pixel oracle for the merge rule; returns a list of violations."""
    bad = []
    inside = mask.labels.ravel() != 0
    got = {i: (j, t) for i, j, t in zip(merged.idx1.tolist(), merged.idx2.tolist(), merged.tags.tolist())}
    inst = {}
    for p in per:
        inst.update({i: (j, t) for i, j, t in zip(p.idx1.tolist(), p.idx2.tolist(), p.tags.tolist())})
    gmap = dict(zip(glob.idx1.tolist(), glob.idx2.tolist()))
    used2 = {}
    for i, (j, t) in got.items():
        if inside[i] and t == GLOBAL:
            bad.append(f"global pair inside mask at {i}")
        if inside[i] and inst.get(i) != (j, t):
            bad.append(f"pixel {i} does not carry its instance pair")
        if not inside[i] and (t != GLOBAL or gmap.get(i) != j):
            bad.append(f"pixel {i} outside masks is not its global pair")
        if j in used2:
            bad.append(f"image-2 pixel {j} used twice")
        used2[j] = i
    for i, (j, t) in inst.items():
        if i not in got:
            bad.append(f"instance pair at {i} dropped")
    for i in np.flatnonzero(inside).tolist():
        if i not in inst and i in got:
            bad.append(f"inside pixel {i} without instance pair got a match")
    return bad


def test_merge_conflict_case_pixel_by_pixel():
    glob, inst, mask = conflict_scene()
    merged = merge_maps(glob, [inst], mask)
    # the right half keeps global pairs whose targets the instance pairs do not claim
    assert check_merge_conformance(glob, [inst], mask, merged) == []
    assert np.all(merged.tags[mask.labels.ravel()[merged.idx1] != 0] == 1)
    expect_inside = {(i, i) for i in np.flatnonzero(mask.labels.ravel())}
    got = set(zip(merged.idx1.tolist(), merged.idx2.tolist()))
    assert expect_inside <= got


def test_merge_inside_without_instance_pair_is_dropped():
    glob, inst, mask = conflict_scene()
    keep = np.arange(len(inst)) % 2 == 0
    merged = merge_maps(glob, [inst.subset(keep)], mask)
    inside = mask.labels.ravel()[merged.idx1] != 0
    assert inside.sum() == keep.sum()
    assert check_merge_conformance(glob, [inst.subset(keep)], mask, merged) == []


def test_merge_image2_collision_prefers_instance():
    shape = (1, 4)
    mask = InstanceMask(np.array([[1, 0, 0, 0]]))
    glob = CorrespondenceMap(np.array([1, 2]), np.array([0, 3]), np.zeros(2, np.int16), shape, shape)
    inst = CorrespondenceMap(np.array([0]), np.array([0]), np.ones(1, np.int16), shape, shape)
    merged = merge_maps(glob, [inst], mask)
    assert list(zip(merged.idx1.tolist(), merged.idx2.tolist(), merged.tags.tolist())) == [(0, 0, 1), (2, 3, 0)]


def test_merge_with_no_instances_is_global():
    glob, _, _ = conflict_scene()
    empty = InstanceMask(np.zeros((6, 8), np.uint8))
    merged = merge_maps(glob, [], empty)
    assert np.array_equal(merged.idx1, glob.idx1) and np.array_equal(merged.idx2, glob.idx2)


def test_dump_lines_format():
    cmap = CorrespondenceMap(np.array([5, 1]), np.array([2, 7]), np.array([0, 3], np.int16), (2, 4), (2, 4))
    assert cmap.dump_lines() == ["1 1 2 0 global", "1 0 3 1 instance(3)"]
