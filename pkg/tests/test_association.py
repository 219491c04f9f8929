import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumentrack.association import (
    Gallery,
    build_subgraph,
    estimate_roll,
    hierarchy_violations,
    initialize,
    localize,
    propagate_labels,
    update_gallery,
)
from lumentrack.errors import InsufficientTracklets, NoLabeledSeed, NotAtCarina, NoVotes
from lumentrack.geometry import rotate2d, wrap_angle


def centers(boxes):
    return [(b[0], b[1]) for b in boxes]


# -- subgraph ---------------------------------------------------------------


def test_disjoint_boxes_are_primaries():
    s = build_subgraph(np.array([[10, 10, 5, 5], [100, 100, 5, 5]], float))
    assert s.primary == [0, 1] and s.parent_of == {}


def test_nested_box_is_child():
    s = build_subgraph(np.array([[50, 50, 40, 40], [55, 50, 10, 10]], float))
    assert s.primary == [0] and s.parent_of == {1: 0} and s.level == {0: 1, 1: 2}


def test_chain_is_transitively_reduced():
    s = build_subgraph(np.array([[50, 50, 80, 80], [50, 50, 40, 40], [50, 50, 10, 10]], float))
    assert s.parent_of == {1: 0, 2: 1}
    assert s.children[0] == [1]


def test_near_duplicate_child_is_pruned():
    s = build_subgraph(np.array([[50, 50, 40, 40], [50, 50, 39, 39]], float))
    assert s.pruned == [1] and s.nodes == [0]


def test_partial_overlap_below_containment_is_not_an_edge():
    s = build_subgraph(np.array([[50, 50, 40, 40], [70, 50, 20, 20]], float), containment=0.7)
    assert s.parent_of == {}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(2, 60), st.floats(2, 60)), max_size=8))
def test_subgraph_is_a_forest(boxes):
    s = build_subgraph(np.array(boxes, float).reshape(-1, 4))
    for j in s.nodes:
        seen = set()
        k = j
        while k in s.parent_of:
            assert k not in seen
            seen.add(k)
            k = s.parent_of[k]
        assert k in s.primary
    for c, p in s.parent_of.items():
        assert s.level[c] == s.level[p] + 1


# -- initialization and roll -----------------------------------------------


def test_initialize_examples():
    boxes = [[50, 100, 20, 20], [150, 100, 20, 20]]
    roll, (left, right) = initialize(build_subgraph(np.array(boxes, float)), centers(boxes))
    assert roll == 0.0 and (left, right) == (0, 1)
    boxes = [[100, 150, 20, 20], [100, 50, 20, 20]]
    roll, _ = initialize(build_subgraph(np.array(boxes, float)), centers(boxes))
    assert abs(roll) == pytest.approx(math.pi / 2)
    with pytest.raises(NotAtCarina):
        initialize(build_subgraph(np.array([[1, 1, 2, 2]], float)), [(1, 1)])


def test_initialize_prefers_upright_and_follows_hint():
    boxes = [[150, 100, 20, 20], [50, 100, 20, 20]]  # listed right first
    roll, (left, right) = initialize(build_subgraph(np.array(boxes, float)), centers(boxes))
    assert roll == 0.0 and (left, right) == (1, 0)
    roll, (left, right) = initialize(build_subgraph(np.array(boxes, float)), centers(boxes), roll_hint=math.pi)
    assert abs(roll) == pytest.approx(math.pi) and (left, right) == (0, 1)


def _gallery(roll, c1, c2):
    g = Gallery()
    g.put("trachea", {1: c1, 2: c2}, roll)
    return g


def test_estimate_roll_examples():
    g = _gallery(0.3, (10, 10), (50, 10))
    assert estimate_roll(g, [(1, 0, (10, 10)), (2, 0, (50, 10))]) == pytest.approx(0.3)
    mid = np.array([30, 10])
    rot = [tuple(mid + rotate2d(np.subtract(c, mid), math.pi / 2)) for c in [(10, 10), (50, 10)]]
    assert estimate_roll(g, [(1, 0, rot[0]), (2, 0, rot[1])]) == pytest.approx(0.3 + math.pi / 2)
    with pytest.raises(InsufficientTracklets):
        estimate_roll(g, [(1, 0, (10, 10)), (3, 0, (50, 10))])


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_estimate_roll_recovers_rotation(roll0, theta, tx, ty):
    pts = [np.array([10.0, 20.0]), np.array([80.0, 35.0])]
    g = _gallery(roll0, *pts)
    moved = [rotate2d(p, theta) + (tx, ty) for p in pts]
    est = estimate_roll(g, [(1, 0, moved[0]), (2, 0, moved[1])])
    assert abs(wrap_angle(est - roll0 - theta)) < 1e-9
    assert -math.pi < est <= math.pi


def test_estimate_roll_uses_oldest_pair_and_prefers_separated_pairs():
    g = Gallery()
    g.put("b", {1: (0, 0), 2: (10, 0), 3: (100, 0)}, 0.0)
    vis = [(1, 0, (0, 0)), (2, 1, (0, 10)), (3, 2, (100, 0))]
    # oldest pair (1, 2) sees a quarter turn
    assert estimate_roll(g, vis) == pytest.approx(math.pi / 2)
    # (1, 2) is only 10 px apart: (1, 3) is used instead
    assert estimate_roll(g, vis, min_separation=50) == pytest.approx(0.0)
    # nothing clears the bar: oldest pair is the fallback
    assert estimate_roll(g, vis, min_separation=500) == pytest.approx(math.pi / 2)


def test_update_gallery_rules():
    g = Gallery()
    update_gallery(g, {1: (0, 0), 2: (1, 1)}, 0.1, "RMB", 5)
    assert g["RMB"].tracklet_ids == {1, 2}
    update_gallery(g, {3: (0, 0)}, 0.2, "RMB", 6)
    assert g["RMB"].tracklet_ids == {1, 2} and g["RMB"].roll == 0.1
    update_gallery(g, {3: (0, 0), 4: (1, 1), 5: (2, 2)}, 0.3, "RMB", 7)
    assert g["RMB"].tracklet_ids == {3, 4, 5} and g["RMB"].roll == 0.3
    assert g.records_with(1) == set() and g.records_with(4) == {"RMB"}


# -- label propagation ------------------------------------------------------

TRACHEA_VIEW = [[256, 256, 400, 400], [150, 256, 80, 80], [362, 256, 80, 80]]


def test_children_follow_projected_directions(graph):
    sub = build_subgraph(np.array(TRACHEA_VIEW, float))
    out = propagate_labels(sub, ["trachea", None, None], centers(TRACHEA_VIEW), [5, 1, 1], graph, 0.0)
    assert out == ["trachea", "LMB", "RMB"]
    out = propagate_labels(sub, ["trachea", None, None], centers(TRACHEA_VIEW), [5, 1, 1], graph, math.pi)
    assert out == ["trachea", "RMB", "LMB"]


def test_leaf_reference_labels_nothing(graph):
    boxes = [[100, 100, 80, 80], [100, 100, 20, 20]]
    sub = build_subgraph(np.array(boxes, float))
    out = propagate_labels(sub, ["LB1", None], centers(boxes), [3, 1], graph, 0.0)
    assert out == ["LB1", None]


def test_parent_and_siblings_from_one_seed(graph):
    sub = build_subgraph(np.array(TRACHEA_VIEW, float))
    out = propagate_labels(sub, [None, None, "RMB"], centers(TRACHEA_VIEW), [1, 1, 5], graph, 0.0)
    assert out == ["trachea", "LMB", "RMB"]
    assert hierarchy_violations(sub, out, graph) == 0


def test_existing_labels_are_never_overwritten(graph):
    sub = build_subgraph(np.array(TRACHEA_VIEW, float))
    # the older tracklet's wrong label stays; the other node cannot reuse it
    out = propagate_labels(sub, ["trachea", "RMB", None], centers(TRACHEA_VIEW), [5, 4, 1], graph, 0.0)
    assert out[1] == "RMB" and out[2] in (None, "LMB")
    assert hierarchy_violations(sub, ["trachea", "RB1", None], graph) == 1


def test_reserved_labels_are_not_reassigned(graph):
    sub = build_subgraph(np.array(TRACHEA_VIEW, float))
    out = propagate_labels(sub, ["trachea", None, None], centers(TRACHEA_VIEW), [5, 1, 1], graph, 0.0, reserved={"RMB"})
    assert out == ["trachea", "LMB", None]


def test_no_seed_raises(graph):
    sub = build_subgraph(np.array(TRACHEA_VIEW, float))
    with pytest.raises(NoLabeledSeed):
        propagate_labels(sub, [None] * 3, centers(TRACHEA_VIEW), [1] * 3, graph, 0.0)


# -- voting -----------------------------------------------------------------


def test_vote_two_primaries_means_parent(graph):
    boxes = [[150, 256, 80, 80], [362, 256, 80, 80]]
    est = localize(build_subgraph(np.array(boxes, float)), ["LMB", "RMB"], graph)
    assert est.votes == {"trachea": 2} and est.branch == "trachea"


def test_vote_single_primary_means_inside_it(graph):
    est = localize(build_subgraph(np.array([[256, 256, 200, 200]], float)), ["RMB"], graph)
    assert est.votes == {"RMB": 1} and est.branch == "RMB"


def test_vote_single_primary_with_children_is_unanimous(graph):
    boxes = [[256, 256, 300, 300], [200, 256, 60, 60], [320, 256, 60, 60]]
    est = localize(build_subgraph(np.array(boxes, float)), ["RMB", "RB1", "RB2"], graph)
    assert est.votes == {"RMB": 3} and est.branch == "RMB"


def test_vote_above_root_clamps_and_ties_prefer_depth(graph):
    boxes = [[150, 256, 80, 80], [362, 256, 80, 80]]
    est = localize(build_subgraph(np.array(boxes, float)), ["trachea", "RB1"], graph)
    # trachea votes above the root (clamped to trachea), RB1 votes RMB: tie
    assert est.votes == {"trachea": 1, "RMB": 1} and est.branch == "RMB"
    with pytest.raises(NoVotes):
        localize(build_subgraph(np.array(boxes, float)), [None, None], graph)


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(3)))
def test_vote_is_permutation_invariant(perm):
    from conftest import raw_tree
    from lumentrack.airway import load_and_normalize

    g = load_and_normalize(raw_tree())
    boxes = np.array([[256, 256, 300, 300], [200, 256, 60, 60], [320, 256, 60, 60]], float)
    labels = ["RMB", "RB1", None]
    base = localize(build_subgraph(boxes), labels, g)
    p = list(perm)
    moved = localize(build_subgraph(boxes[p]), [labels[k] for k in p], g)
    assert (moved.branch, moved.votes) == (base.branch, base.votes)
