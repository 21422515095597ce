"""Per-cell RB allocation: exact max-weight user/RB matching plus the
sequential cross-cell pass.

Cells are processed in index order.  Each syncing cell first reserves its
best uplink RB (released again if even the optimistic delay breaks the cap),
then matches its associated users to the remaining RBs by maximum-weight
bipartite matching, where a pair's weight is the downlink rate against the
interference implied by the cells already processed; later cells contribute
no interference in this pass.  The output satisfies the per-slot allocation
constraints by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import radio
from .radio import Allocation, FadingDraw, RadioParams, Topology


@dataclass
class MatchResult:
    pairs: list          # (row, col) index pairs into the weight matrix
    total_weight: float


def hungarian_max_weight(weights: np.ndarray) -> MatchResult:
    """Maximum-weight bipartite matching of a (rows x cols) nonnegative
    matrix.  Rectangular inputs are fine; with all-positive weights the
    matching covers the smaller side.  Zero-weight pairs are dropped: they
    contribute nothing and an RB should not be burned on them."""
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if weights.size == 0:
        return MatchResult([], 0.0)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    rows, cols = linear_sum_assignment(weights, maximize=True)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if weights[r, c] > 0.0]
    total = float(weights[rows, cols].sum())
    return MatchResult(pairs, total)


def build_weights(bs: int, assoc_users, free_rbs, fixed_alloc: Allocation,
                  positions, topology: Topology, fading: FadingDraw,
                  params: RadioParams) -> np.ndarray:
    """Candidate-edge weights: rate of each associated user on each free RB
    given the allocation fixed so far."""
    if len(assoc_users) == 0 or len(free_rbs) == 0:
        return np.zeros((len(assoc_users), len(free_rbs)))
    return radio.downlink_rate_grid(bs, assoc_users, free_rbs, fixed_alloc,
                                    positions, topology, fading, params)


def select_uplink_rb(bs: int, sync_flag: bool, fixed_alloc: Allocation,
                     positions, topology: Topology, fading: FadingDraw,
                     params: RadioParams):
    """Pick the RB with the best uplink rate under the interference fixed so
    far (lowest index on ties).  Returns (rb or None, delay): rb is None when
    not syncing or when even this optimistic delay exceeds the cap."""
    if not sync_flag:
        return None, None
    rates = radio.uplink_rate_candidates(bs, fixed_alloc, positions, topology, fading, params)
    rb = int(np.argmax(rates))
    rate = float(rates[rb])
    delay = params.payload / rate if rate > 0 else float("inf")
    if delay > params.delay_cap:
        return None, delay
    return rb, delay


@dataclass
class SlotAllocation:
    """allocate_all outcome: the allocation plus per-cell sync bookkeeping."""

    alloc: Allocation
    sync_requested: list
    sync_success: list
    uplink_rb: list          # chosen RB per cell, None where unused
    delays: list             # realized uplink delay per cell (inf if no uplink)
    events: list = field(default_factory=list)


def allocate_all(sync_flags, assoc_lists, positions, topology: Topology,
                 fading: FadingDraw, params: RadioParams,
                 coverage=None, refine_rounds: int = 1) -> SlotAllocation:
    """Run the sequential allocation pass for all cells.

    ``sync_flags``: per-cell booleans; ``assoc_lists``: per-cell iterables of
    user indices the cell chose to serve (must be inside its coverage when
    ``coverage`` sets are given).  ``refine_rounds`` > 1 re-matches each cell
    against everyone else's fixed choices; a round is kept only if it does
    not lower the realized total matched rate.
    """
    num_bs = topology.num_bs
    num_users = np.asarray(positions).shape[0]
    if coverage is not None:
        for m in range(num_bs):
            outside = set(assoc_lists[m]) - set(int(u) for u in coverage[m])
            if outside:
                raise ValueError(f"cell {m} associates uncovered users {sorted(outside)}")

    alloc = Allocation.empty(num_bs, num_users, params.num_rbs)
    events: list[str] = []
    sync_success = [False] * num_bs
    uplink_rb: list = [None] * num_bs

    for m in range(num_bs):
        rb, delay = select_uplink_rb(m, bool(sync_flags[m]), alloc, positions,
                                     topology, fading, params)
        if sync_flags[m] and rb is None:
            events.append(f"sync_delay_fail bs={m} delay={delay}")
        if rb is not None:
            alloc.y[m, rb] = 1
            sync_success[m] = True
            uplink_rb[m] = rb
        _match_cell(m, assoc_lists[m], alloc, positions, topology, fading, params, events)

    for _ in range(max(0, refine_rounds - 1)):
        before = _realized_total(alloc, positions, topology, fading, params)
        saved = alloc.x.copy()
        for m in range(num_bs):
            alloc.x[m] = 0
            _match_cell(m, assoc_lists[m], alloc, positions, topology, fading, params, None)
        after = _realized_total(alloc, positions, topology, fading, params)
        if after < before:
            alloc.x[:] = saved
            break

    # realized delays; a sync that no longer meets the cap under the full
    # interference pattern failed (the RB is spent, the update arrived late)
    delays = []
    for m in range(num_bs):
        d = radio.uplink_delay(m, alloc, positions, topology, fading, params)
        delays.append(d)
        if sync_success[m] and d > params.delay_cap:
            sync_success[m] = False
            events.append(f"sync_delay_fail bs={m} delay={d} stage=realized")
    return SlotAllocation(alloc, [bool(s) for s in sync_flags], sync_success,
                          uplink_rb, delays, events)


def _match_cell(m, assoc_users, alloc, positions, topology, fading, params, events):
    claimed = sorted(int(u) for u in assoc_users)
    # a user already served by an earlier cell keeps that claim against it in
    # the reward's multi-claim count but cannot receive a second RB
    taken = np.flatnonzero(alloc.x.sum(axis=(0, 2)) > 0)
    assoc_users = [u for u in claimed if u not in set(int(v) for v in taken)]
    if events is not None and len(assoc_users) < len(claimed):
        dup = sorted(set(claimed) - set(assoc_users))
        events.append(f"already_served bs={m} users={dup}")
    free_rbs = [n for n in range(params.num_rbs) if alloc.y[m, n] == 0]
    if not assoc_users or not free_rbs:
        if assoc_users and events is not None:
            events.append(f"no_rb bs={m} users={assoc_users}")
        return
    w = build_weights(m, assoc_users, free_rbs, alloc, positions, topology, fading, params)
    match = hungarian_max_weight(w)
    served = set()
    for r, c in match.pairs:
        alloc.x[m, assoc_users[r], free_rbs[c]] = 1
        served.add(assoc_users[r])
    unserved = [u for u in assoc_users if u not in served]
    if unserved and events is not None:
        events.append(f"no_rb bs={m} users={unserved}")


def _realized_total(alloc, positions, topology, fading, params) -> float:
    return float(radio.all_downlink_rates(alloc, positions, topology, fading, params).sum())
