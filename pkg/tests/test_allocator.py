import itertools
import math

import numpy as np
import pytest

from dntsim.allocator import (
    allocate_all,
    build_weights,
    hungarian_max_weight,
    select_uplink_rb,
)
from dntsim.radio import (
    Allocation,
    RadioParams,
    Topology,
    audit_allocation,
    downlink_rate,
    unit_fading,
    draw_fading,
)
from dntsim.twin import coverage_sets


def brute_force_total(w: np.ndarray) -> float:
    """Exhaustive max over all maximal matchings of a square matrix, summing
    in row order so float totals are comparable exactly."""
    n = w.shape[0]
    best = -math.inf
    for perm in itertools.permutations(range(n)):
        total = w[np.arange(n), perm].sum()
        if total > best:
            best = total
    return float(best)


def test_two_by_two_example():
    res = hungarian_max_weight(np.array([[5.0, 3.0], [4.0, 1.0]]))
    assert res.total_weight == 7.0
    assert sorted(res.pairs) == [(0, 1), (1, 0)]


def test_single_entry():
    res = hungarian_max_weight(np.array([[2.5]]))
    assert res.pairs == [(0, 0)] and res.total_weight == 2.5


def test_empty_matrix():
    res = hungarian_max_weight(np.zeros((0, 3)))
    assert res.pairs == [] and res.total_weight == 0.0


def test_zero_weight_pairs_dropped():
    res = hungarian_max_weight(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert res.pairs == [(0, 0)]
    assert res.total_weight == 1.0


def test_rectangular_covers_smaller_side():
    w = np.array([[1.0, 9.0, 2.0]])
    res = hungarian_max_weight(w)
    assert res.pairs == [(0, 1)] and res.total_weight == 9.0
    tall = hungarian_max_weight(w.T)
    assert tall.pairs == [(1, 0)] and tall.total_weight == 9.0


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        hungarian_max_weight(np.array([[1.0, -0.1]]))


def test_matches_brute_force_small_sizes():
    rng = np.random.default_rng(0)
    for size in range(2, 7):
        for _ in range(60):
            w = rng.uniform(0, 100, size=(size, size))
            res = hungarian_max_weight(w)
            assert res.total_weight == brute_force_total(w)
            # matching property: no shared rows or columns
            rows = [r for r, _ in res.pairs]
            cols = [c for _, c in res.pairs]
            assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)


def setup_scene(num_users=4, num_rbs=3, seed=0, unit=True):
    topo = Topology(np.array([[-100.0, 0.0], [0.0, 0.0], [100.0, 0.0]]),
                    np.array([0.0, 50.0]), 60.0)
    params = RadioParams(num_rbs=num_rbs)
    rng = np.random.default_rng(seed)
    pos = rng.uniform([-140, -40], [140, 40], size=(num_users, 2))
    fad = unit_fading(num_users, 3) if unit else draw_fading(num_users, 3, rng)
    return topo, params, pos, fad


def test_build_weights_first_bs_is_clean_rate():
    topo, params, pos, fad = setup_scene()
    empty = Allocation.empty(3, 4, 3)
    w = build_weights(0, [1, 2], [0, 1, 2], empty, pos, topo, fad, params)
    assert w.shape == (2, 3)
    # no interference fixed yet: every RB gives the same clean Shannon rate
    for i, u in enumerate([1, 2]):
        probe = Allocation.empty(3, 4, 3)
        probe.x[0, u, 0] = 1
        clean = downlink_rate(u, 0, probe, pos, topo, fad, params)
        assert np.allclose(w[i], clean, rtol=1e-12)


def test_build_weights_jammed_rb_lower():
    topo, params, pos, fad = setup_scene()
    fixed = Allocation.empty(3, 4, 3)
    fixed.x[1, 3, 0] = 1   # earlier cell busy on rb 0
    w = build_weights(2, [0], [0, 1], fixed, pos, topo, fad, params)
    assert w[0, 0] < w[0, 1]


def test_build_weights_empty_users():
    topo, params, pos, fad = setup_scene()
    w = build_weights(0, [], [0, 1, 2], Allocation.empty(3, 4, 3), pos, topo, fad, params)
    assert w.shape == (0, 3)


def test_select_uplink_rb():
    topo, params, pos, fad = setup_scene()
    empty = Allocation.empty(3, 4, 3)
    rb, delay = select_uplink_rb(0, False, empty, pos, topo, fad, params)
    assert rb is None and delay is None
    # all RBs equally clean -> lowest index
    rb, delay = select_uplink_rb(0, True, empty, pos, topo, fad, params)
    assert rb == 0 and delay > 0
    # jam rb 0 at another cell -> rb 1 wins
    fixed = Allocation.empty(3, 4, 3)
    fixed.y[1, 0] = 1
    rb, _ = select_uplink_rb(0, True, fixed, pos, topo, fad, params)
    assert rb == 1


def test_select_uplink_rb_delay_cap():
    topo, params, pos, fad = setup_scene()
    tight = RadioParams(num_rbs=3, delay_cap=1e-9)
    rb, delay = select_uplink_rb(0, True, Allocation.empty(3, 4, 3), pos, topo, fad, tight)
    assert rb is None and delay > tight.delay_cap


def test_allocate_single_bs_reduces_to_matching():
    topo1 = Topology(np.array([[0.0, 0.0]]), np.array([0.0, 50.0]), 200.0)
    params = RadioParams(num_rbs=2)
    rng = np.random.default_rng(3)
    pos = rng.uniform([-50, -40], [50, 40], size=(2, 2))
    fad = unit_fading(2, 1)
    out = allocate_all([False], [[0, 1]], pos, topo1, fad, params)
    w = build_weights(0, [0, 1], [0, 1], Allocation.empty(1, 2, 2), pos, topo1, fad, params)
    match = hungarian_max_weight(w)
    got_pairs = sorted((u, n) for u in range(2) for n in range(2) if out.alloc.x[0, u, n])
    expect = sorted((([0, 1])[r], ([0, 1])[c]) for r, c in match.pairs)
    assert got_pairs == expect
    assert audit_allocation(out.alloc) == []


def test_all_sync_single_rb_serves_nobody():
    topo, _, pos, fad = setup_scene()
    # generous delay cap isolates the RB-consumption effect from delay failures
    params = RadioParams(num_rbs=1, delay_cap=1e6)
    out = allocate_all([True, True, True], [[0], [1], [2]], pos, topo, fad, params)
    assert out.alloc.x.sum() == 0
    assert out.alloc.y.sum() == 3
    assert all(out.sync_success)
    assert audit_allocation(out.alloc) == []


def test_surplus_users_logged():
    topo, _, pos, fad = setup_scene(num_users=4)
    params = RadioParams(num_rbs=2)
    out = allocate_all([True, False, False], [[0, 1, 2, 3], [], []], pos, topo, fad, params)
    # cell 0 kept one RB for the uplink, so at most 1 of 4 users served
    assert out.alloc.x[0].sum() <= 1
    assert any(ev.startswith("no_rb bs=0") for ev in out.events)
    assert audit_allocation(out.alloc) == []


def test_uncovered_association_rejected():
    topo, params, pos, fad = setup_scene()
    cov = coverage_sets(pos, topo)
    outside = [u for u in range(4) if u not in set(cov[0])]
    if not outside:
        pytest.skip("every user covered by cell 0 under this seed")
    with pytest.raises(ValueError):
        allocate_all([False, False, False], [[outside[0]], [], []], pos, topo,
                     fad, params, coverage=cov)


def test_random_instances_respect_constraints():
    rng = np.random.default_rng(42)
    topo = Topology(np.array([[-100.0, 0.0], [0.0, 0.0], [100.0, 0.0]]),
                    np.array([0.0, 50.0]), 60.0)
    params = RadioParams(num_rbs=3)
    for _ in range(200):
        num_users = int(rng.integers(1, 7))
        pos = rng.uniform([-140, -40], [140, 40], size=(num_users, 2))
        fad = draw_fading(num_users, 3, rng)
        cov = coverage_sets(pos, topo)
        syncs = rng.random(3) < 0.5
        assoc = []
        for m in range(3):
            pool = list(cov[m])
            take = int(rng.integers(0, len(pool) + 1)) if pool else 0
            chosen = list(rng.choice(pool, size=take, replace=False)) if take else []
            assoc.append(chosen)
        out = allocate_all(list(syncs), assoc, pos, topo, fad, params, coverage=cov)
        assert audit_allocation(out.alloc) == []
        for m in range(3):
            if out.sync_success[m]:
                assert out.delays[m] <= params.delay_cap
            # served users are a subset of the association choice
            served = set(np.flatnonzero(out.alloc.x[m].sum(axis=1)))
            assert served <= set(int(u) for u in assoc[m])


def test_multi_claimed_user_served_once():
    topo, params, pos, fad = setup_scene(num_users=1)
    # put the user where two cells cover it
    pos[0] = [-50.0, 0.0]
    out = allocate_all([False, False, False], [[0], [0], []], pos, topo, fad, params)
    assert out.alloc.x[:, 0, :].sum() == 1
    assert out.alloc.x[0, 0, :].sum() == 1  # earlier cell wins
    assert any(ev.startswith("already_served bs=1") for ev in out.events)
    assert audit_allocation(out.alloc) == []


def test_refinement_never_lowers_realized_total():
    from dntsim.radio import all_downlink_rates

    rng = np.random.default_rng(7)
    topo = Topology(np.array([[-100.0, 0.0], [0.0, 0.0], [100.0, 0.0]]),
                    np.array([0.0, 50.0]), 60.0)
    params = RadioParams(num_rbs=3)
    for _ in range(40):
        num_users = int(rng.integers(2, 7))
        pos = rng.uniform([-140, -40], [140, 40], size=(num_users, 2))
        fad = draw_fading(num_users, 3, rng)
        cov = coverage_sets(pos, topo)
        assoc = [list(cov[m][: int(rng.integers(0, len(cov[m]) + 1))]) for m in range(3)]
        syncs = list(rng.random(3) < 0.5)
        single = allocate_all(syncs, assoc, pos, topo, fad, params, refine_rounds=1)
        refined = allocate_all(syncs, assoc, pos, topo, fad, params, refine_rounds=3)
        t1 = all_downlink_rates(single.alloc, pos, topo, fad, params).sum()
        t2 = all_downlink_rates(refined.alloc, pos, topo, fad, params).sum()
        assert t2 >= t1 - 1e-9
