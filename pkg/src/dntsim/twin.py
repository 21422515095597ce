"""Physical and twin state bookkeeping.

The physical state of the network is the positions of all users; each cell
observes only the users inside its coverage disc.  The cloud's twin mirrors
the physical state per cell: exact where a cell synchronized this slot,
predicted elsewhere.  The team reward trades the twin's squared error against
the total served data rate, with a hard penalty branch when any user is
claimed by several cells at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .radio import Topology

RECEIVED = "received"
PREDICTED = "predicted"


@dataclass(frozen=True)
class LocalObservation:
    """What one cell sees: the users inside its disc, with true positions."""

    bs: int
    covered_users: np.ndarray   # sorted indices
    positions: np.ndarray       # (len(covered_users), 2)


def coverage_sets(positions, topology: Topology) -> list[np.ndarray]:
    """Covered-user index sets for every cell (boundary inclusive)."""
    positions = np.asarray(positions, dtype=np.float64)
    d = np.linalg.norm(positions[:, None, :] - topology.bs_positions[None, :, :], axis=2)
    return [np.flatnonzero(d[:, m] <= topology.coverage_radius) for m in range(topology.num_bs)]


def observe(bs: int, positions, topology: Topology) -> LocalObservation:
    positions = np.asarray(positions, dtype=np.float64)
    covered = coverage_sets(positions, topology)[bs]
    return LocalObservation(bs, covered, positions[covered].copy())


@dataclass
class TwinState:
    """Cloud-side mirror: per-user position plus how it was obtained."""

    positions: np.ndarray  # (U, 2)
    provenance: list[str]  # RECEIVED or PREDICTED per user

    def copy(self) -> "TwinState":
        return TwinState(self.positions.copy(), list(self.provenance))


def compose_twin(prev_twin: TwinState | None, predictions, observations,
                 sync_success) -> TwinState:
    """Assemble this slot's twin state.

    Users covered by a cell whose sync succeeded take their observed true
    positions; everyone else (including users covered by no cell) takes the
    prediction.  ``prev_twin`` is accepted for interface continuity; the
    composed values derive only from predictions and fresh observations.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    num_users = predictions.shape[0]
    positions = predictions.copy()
    provenance = [PREDICTED] * num_users
    for obs, ok in zip(observations, sync_success):
        if not ok:
            continue
        for idx, u in enumerate(obs.covered_users):
            positions[u] = obs.positions[idx]
            provenance[u] = RECEIVED
    return TwinState(positions, provenance)


def sync_error(physical, twin: TwinState) -> float:
    """Squared Euclidean gap over all coordinates, normalized by the user
    count."""
    physical = np.asarray(physical, dtype=np.float64)
    if physical.shape != twin.positions.shape:
        raise ValueError("state shapes differ")
    num_users = physical.shape[0]
    return float(np.sum((physical - twin.positions) ** 2) / num_users)


def team_reward(physical, twin: TwinState, rates, assoc_counts,
                epsilon: float, rho: float) -> float:
    """Team reward for one slot.

    When no user is claimed by more than one cell: a weighted sum of the
    (negated) twin error and the total rate; unclaimed users simply
    contribute no rate.  When any user is multi-claimed: the penalty, rho
    per claim on each over-claimed user.  The penalty exists to punish one
    user drawing RBs from several cells at once, so over-claiming is the
    branch trigger; a reading that also zeroes the reward whenever some
    user goes unclaimed starves the learning signal entirely (the weighted
    branch would almost never fire) and is deliberately not used.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    if rho >= 0:
        raise ValueError("rho must be negative")
    assoc_counts = np.asarray(assoc_counts)
    over = assoc_counts > 1
    if np.any(over):
        return float(np.sum(assoc_counts[over]) * rho)
    err = sync_error(physical, twin)
    return float(-(1.0 - epsilon) * err + epsilon * np.sum(rates))
