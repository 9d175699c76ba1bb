import itertools
import math

import numpy as np
import pytest

from spermseg.errors import SameOwner
from spermseg.raster import Ellipse
from spermseg.splice import (
    HEAD,
    TAIL,
    Endpoint,
    Match,
    SpliceThresholds,
    angular_similarity,
    assemble,
    bridge_deviation,
    extract_endpoints,
    head_endpoints,
    instances_json,
    match_endpoints,
    skeleton_endpoints,
)


def ep(x, y, ang, kind=TAIL, owner=0, end=0):
    return Endpoint((float(x), float(y)), float(ang), kind, owner, end)


def hline(shape, y, x0, x1):
    m = np.zeros(shape, bool)
    m[y, x0:x1 + 1] = True
    return m


# --------------------------------------------------------------------------
# endpoints


def test_horizontal_head_endpoints():
    e = Ellipse(center=(100.0, 100.0), major_semiaxis=20.0, minor_semiaxis=8.0, orientation=0.0)
    a, b = head_endpoints(e, 0)
    assert a.position == pytest.approx((80.0, 100.0))
    assert b.position == pytest.approx((120.0, 100.0))
    assert a.terminal_angle == b.terminal_angle == 0.0
    assert a.kind == HEAD and a.owner == (HEAD, 0)


def test_vertical_skeleton_endpoints():
    sk = np.zeros((40, 20), bool)
    sk[5:30, 10] = True
    eps = skeleton_endpoints(sk, 3)
    assert sorted(e.position for e in eps) == [(10.0, 5.0), (10.0, 29.0)]
    assert all(e.terminal_angle == pytest.approx(90.0) for e in eps)
    assert all(e.owner == (TAIL, 3) for e in eps)


def test_l_shape_endpoints():
    sk = np.zeros((40, 40), bool)
    sk[5, 5:30] = True
    sk[5:30, 29] = True
    eps = sorted(skeleton_endpoints(sk, 0), key=lambda e: e.position)
    assert [e.position for e in eps] == [(5.0, 5.0), (29.0, 29.0)]
    assert eps[0].terminal_angle == pytest.approx(0.0, abs=1e-9)
    assert eps[1].terminal_angle == pytest.approx(90.0)


def test_closed_loop_has_no_endpoints():
    sk = np.zeros((20, 20), bool)
    sk[5, 5:15] = sk[14, 5:15] = True
    sk[5:15, 5] = sk[5:15, 14] = True
    assert skeleton_endpoints(sk, 0) == []


def test_diagonal_endpoint_angle():
    sk = np.zeros((30, 30), bool)
    sk[np.arange(3, 25), np.arange(3, 25)] = True
    assert all(e.terminal_angle == pytest.approx(45.0) for e in skeleton_endpoints(sk, 0))


def test_spur_pruning_gives_one_endpoint_per_end():
    sk = hline((20, 40), 10, 5, 30)
    sk[9, 31] = sk[8, 32] = sk[11, 31] = sk[12, 32] = True
    assert len(skeleton_endpoints(sk, 0)) == 3
    eps = skeleton_endpoints(sk, 0, spur_len=4)
    assert sorted(e.position for e in eps) == [(5.0, 10.0), (30.0, 10.0)]


def test_extract_endpoints_skips_missing_heads():
    e = Ellipse((50.0, 50.0), 10.0, 4.0, 0.0)
    eps = extract_endpoints([None, e], [hline((60, 60), 20, 5, 40)])
    assert [x.owner for x in eps] == [(HEAD, 1), (HEAD, 1), (TAIL, 0), (TAIL, 0)]


# --------------------------------------------------------------------------
# angular similarity


@pytest.mark.parametrize("a,b,expected", [(10, 30, 20), (5, 175, 10), (40, 40, 0), (0, 90, 90)])
def test_angular_similarity(a, b, expected):
    assert angular_similarity(ep(0, 0, a, owner=0), ep(0, 0, b, owner=1)) == pytest.approx(expected)


def test_same_owner_rejected():
    with pytest.raises(SameOwner):
        angular_similarity(ep(0, 0, 0, owner=2), ep(5, 5, 10, owner=2, end=1))


def test_bridge_deviation():
    assert bridge_deviation(ep(0, 0, 0), ep(10, 0, 0, owner=1)) == pytest.approx(0.0)
    # two parallel horizontal ends stacked vertically: the bridge is perpendicular to both
    assert bridge_deviation(ep(0, 0, 0), ep(0, 10, 0, owner=1)) == pytest.approx(90.0)


# --------------------------------------------------------------------------
# matching


def test_close_and_aligned_is_matched():
    t = ep(100, 100, 0)
    h = ep(112, 100, 8, HEAD, 0)
    (m,) = match_endpoints([t, h])
    assert {m.a, m.b} == {t, h}
    assert m.distance == pytest.approx(12.0) and m.angle == pytest.approx(8.0)


def test_close_but_misaligned_is_not_matched():
    assert match_endpoints([ep(100, 100, 0), ep(112, 100, 50, HEAD, 0)]) == []


def test_too_far_is_not_matched():
    assert match_endpoints([ep(100, 100, 0), ep(131, 100, 0, HEAD, 0)]) == []


def test_angle_preferred_over_distance():
    t = ep(100, 100, 0)
    near = ep(92, 100, 20, HEAD, 0)
    aligned = ep(125, 100, 5, HEAD, 1)
    (m,) = match_endpoints([t, near, aligned])
    assert {m.a, m.b} == {t, aligned}


def test_equal_angles_prefer_shorter_bridge():
    t = ep(100, 100, 0)
    (m,) = match_endpoints([t, ep(120, 100, 0, HEAD, 0), ep(90, 100, 0, HEAD, 1)])
    assert m.distance == pytest.approx(10.0)


def test_heads_never_pair_with_heads():
    assert match_endpoints([ep(0, 0, 0, HEAD, 0), ep(5, 0, 0, HEAD, 1)]) == []


def test_parallel_side_by_side_ends_rejected():
    # 10 px apart, both horizontal, but stacked: the joining line is vertical
    assert match_endpoints([ep(50, 50, 0, owner=0), ep(50, 60, 0, owner=1)]) == []
    off = SpliceThresholds(bridge_check_px=None)
    assert len(match_endpoints([ep(50, 50, 0, owner=0), ep(50, 60, 0, owner=1)], off)) == 1


def random_endpoints(seed, n=14):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind = HEAD if i < 3 else TAIL
        owner = i if kind == HEAD else i // 2
        end = 0 if kind == HEAD else i % 2
        out.append(Endpoint(tuple(map(float, rng.integers(0, 60, 2))), float(rng.uniform(0, 180)), kind, owner, end))
    return out


@pytest.mark.parametrize("seed", range(12))
def test_matching_properties(seed):
    eps = random_endpoints(seed)
    th = SpliceThresholds()
    ms = match_endpoints(eps, th)
    key = lambda ms: {frozenset((m.a, m.b)) for m in ms}
    # order invariance
    perm = list(np.random.default_rng(seed + 100).permutation(len(eps)))
    assert key(match_endpoints([eps[i] for i in perm], th)) == key(ms)
    assert key(match_endpoints(eps[::-1], th)) == key(ms)
    used = [e for m in ms for e in (m.a, m.b)]
    assert len(used) == len(set(used))
    heads = [e.owner_id for e in used if e.kind == HEAD]
    assert len(heads) == len(set(heads))
    for m in ms:
        # thresholds re-checked independently of the matcher
        assert math.dist(m.a.position, m.b.position) < th.lambda1
        d = abs(m.a.terminal_angle - m.b.terminal_angle) % 180
        assert min(d, 180 - d) < th.lambda2
        assert not (m.a.kind == HEAD and m.b.kind == HEAD)
        assert m.a.owner != m.b.owner


@pytest.mark.parametrize("seed", range(12))
def test_no_owner_cycles(seed):
    ms = match_endpoints(random_endpoints(seed, 20))
    owners = {o for m in ms for o in (m.a.owner, m.b.owner)}
    # a forest has fewer edges than nodes in every component
    assert len(ms) <= max(len(owners) - 1, 0)


# --------------------------------------------------------------------------
# assembly


def head_blob(shape, cx, cy, a=6, b=3):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1


def test_head_and_tail_assembled_with_bridge():
    shape = (40, 80)
    head = head_blob(shape, 12, 20)
    tail = hline(shape, 20, 25, 70)
    m = Match(ep(18, 20, 0, HEAD, 0, 1), ep(25, 20, 0, TAIL, 0), 0.0, 7.0)
    (inst,) = assemble([head], [tail], [tail], [m])
    bridge = hline(shape, 20, 18, 25)
    assert (inst.full_mask == (head | tail | bridge)).all()
    assert inst.head_idx == 0 and inst.tail_clusters == [0]
    assert len(inst.bridges) == 1 and len(inst.bridges[0]) == 8
    assert len(inst.skeleton_polyline) == tail.sum()


def test_broken_tail_joined_to_head():
    shape = (40, 120)
    head = head_blob(shape, 12, 20)
    t0, t1 = hline(shape, 20, 25, 60), hline(shape, 20, 66, 110)
    matches = [
        Match(ep(18, 20, 0, HEAD, 0, 1), ep(25, 20, 0, TAIL, 0, 0), 0.0, 7.0),
        Match(ep(60, 20, 0, TAIL, 0, 1), ep(66, 20, 0, TAIL, 1, 0), 0.0, 6.0),
    ]
    (inst,) = assemble([head], [t0, t1], [t0, t1], matches)
    assert inst.tail_clusters == [0, 1] and inst.head_idx == 0
    assert inst.full_mask[20, 18:111].all()


def test_unmatched_parts_stand_alone():
    shape = (100, 100)
    heads = [head_blob(shape, 10, 10), head_blob(shape, 90, 90)]
    tails = [hline(shape, 50, 5, 30), hline(shape, 70, 60, 95)]
    inst = assemble(heads, tails, tails, [])
    assert len(inst) == 4
    assert all(not s.bridges for s in inst)
    assert [s.head_idx for s in inst] == [0, 1, None, None]
    assert [s.tail_clusters for s in inst] == [[], [], [0], [1]]


def test_two_head_group_split_at_weakest_match():
    shape = (40, 160)
    heads = [head_blob(shape, 10, 20), head_blob(shape, 150, 20)]
    t0, t1 = hline(shape, 20, 22, 70), hline(shape, 20, 76, 138)
    matches = [
        Match(ep(16, 20, 0, HEAD, 0, 1), ep(22, 20, 2, TAIL, 0, 0), 2.0, 6.0),
        Match(ep(70, 20, 0, TAIL, 0, 1), ep(76, 20, 25, TAIL, 1, 0), 25.0, 6.0),
        Match(ep(138, 20, 0, TAIL, 1, 1), ep(144, 20, 4, HEAD, 1, 0), 4.0, 6.0),
    ]
    inst = assemble(heads, [t0, t1], [t0, t1], matches)
    assert [(s.head_idx, s.tail_clusters) for s in inst] == [(0, [0]), (1, [1])]
    assert all(len(s.bridges) == 1 for s in inst)


@pytest.mark.parametrize("seed", range(8))
def test_assembled_instances_have_at_most_one_head_and_short_bridges(seed):
    rng = np.random.default_rng(seed)
    shape = (60, 60)
    eps = random_endpoints(seed, 16)
    heads = [head_blob(shape, *rng.integers(5, 55, 2)) for _ in range(3)]
    tails = [hline(shape, int(rng.integers(0, 60)), 0, 10) for _ in range(1 + max(e.owner_id for e in eps if e.kind == TAIL))]
    # let heads pair with several tails so the splitter has work to do
    ms = match_endpoints(eps, SpliceThresholds(one_tail_per_head=False))
    inst = assemble(heads, tails, tails, ms)
    assert sum(s.head_idx is not None for s in inst) == 3
    for s in inst:
        for br in s.bridges:
            (x0, y0), (x1, y1) = br[0], br[-1]
            assert math.hypot(x1 - x0, y1 - y0) <= SpliceThresholds().lambda1
    covered = sorted(j for s in inst for j in s.tail_clusters)
    assert covered == list(range(len(tails)))


def test_instances_json():
    shape = (20, 20)
    inst = assemble([], [hline(shape, 5, 2, 10)], [hline(shape, 5, 2, 10)], [])
    js = instances_json(inst, ["masks/a.png"])
    assert js == {"instances": [{"head_idx": None, "tail_clusters": [0], "area": 9, "bridges": 0, "mask_png": "masks/a.png"}]}
