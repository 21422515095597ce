"""Seeded random-walk user movement and trajectory dataset generation.

Each slot a user either stays or moves exactly ``step`` meters along one
axis, with per-user probabilities over the five outcomes
[stay, forward(+y), backward(-y), left(-x), right(+x)].  Moves that would
leave the rectangular arena are replaced by a stay, which keeps every user
inside serviceable range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

N_MOVES = 5
# displacement of each move, in profile order
_MOVES = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])


@dataclass(frozen=True)
class MobilityProfile:
    """Move distribution [p_stay, p_forward, p_back, p_left, p_right] and
    per-slot step length in meters."""

    probabilities: np.ndarray
    step: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", p)
        if p.shape != (N_MOVES,):
            raise ValueError(f"expected {N_MOVES} probabilities, got {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if self.step <= 0:
            raise ValueError("step must be positive")


def uniform_profile(step: float = 1.0) -> MobilityProfile:
    return MobilityProfile(np.full(N_MOVES, 0.2), step)


def random_profiles(num_users: int, rng: np.random.Generator, concentration: float = 0.3,
                    step: float = 1.0) -> list[MobilityProfile]:
    """Heterogeneous per-user profiles drawn from a Dirichlet; small
    concentrations give users pronounced drift."""
    draws = rng.dirichlet(np.full(N_MOVES, concentration), size=num_users)
    return [MobilityProfile(p, step) for p in draws]


@dataclass(frozen=True)
class Arena:
    """Axis-aligned service area centered on the origin."""

    half_width: float = 150.0
    half_height: float = 50.0

    def contains(self, pos) -> bool:
        x, y = pos
        return abs(x) <= self.half_width and abs(y) <= self.half_height


def step_user(pos, profile: MobilityProfile, rng: np.random.Generator,
              arena: Arena | None = None) -> np.ndarray:
    """Advance one user by one slot; out-of-arena moves degrade to a stay."""
    pos = np.asarray(pos, dtype=np.float64)
    move = rng.choice(N_MOVES, p=profile.probabilities)
    new = pos + profile.step * _MOVES[move]
    if arena is not None and not arena.contains(new):
        return pos.copy()
    return new


def step_all(positions, profiles, rng: np.random.Generator,
             arena: Arena | None = None) -> np.ndarray:
    """Advance every user by one slot with a single uniform draw per user
    (inverse-CDF over each profile); distribution matches per-user
    ``step_user`` calls."""
    positions = np.asarray(positions, dtype=np.float64)
    cum = np.cumsum(np.stack([p.probabilities for p in profiles]), axis=1)
    moves = (rng.random((len(profiles), 1)) > cum[:, :-1]).sum(axis=1)
    steps = np.array([p.step for p in profiles])
    new = positions + steps[:, None] * _MOVES[moves]
    if arena is not None:
        ok = (np.abs(new[:, 0]) <= arena.half_width) & (np.abs(new[:, 1]) <= arena.half_height)
        new = np.where(ok[:, None], new, positions)
    return new


def initial_positions(num_users: int, bs_positions, coverage_radius: float,
                      rng: np.random.Generator, arena: Arena | None = None) -> np.ndarray:
    """Draw starting positions uniformly over the union of coverage discs
    (clipped to the arena) by rejection sampling, so every user begins
    observable by some base station."""
    bs = np.asarray(bs_positions, dtype=np.float64)
    lo = bs.min(axis=0) - coverage_radius
    hi = bs.max(axis=0) + coverage_radius
    if arena is not None:
        lo = np.maximum(lo, [-arena.half_width, -arena.half_height])
        hi = np.minimum(hi, [arena.half_width, arena.half_height])
    out = np.empty((num_users, 2))
    filled = 0
    while filled < num_users:
        cand = rng.uniform(lo, hi, size=(4 * (num_users - filled), 2))
        dists = np.linalg.norm(cand[:, None, :] - bs[None, :, :], axis=2)
        ok = cand[(dists <= coverage_radius).any(axis=1)]
        take = min(len(ok), num_users - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
    return out


@dataclass(frozen=True)
class UserPopulation:
    """A fixed roster of users: home positions and movement profiles.

    Trajectories for predictor training and live episodes both start the
    users at their homes, so the model meets the same position distribution
    it was trained on."""

    homes: np.ndarray            # (U, 2)
    profiles: list

    @property
    def num_users(self) -> int:
        return len(self.homes)


def make_population(num_users: int, bs_positions, coverage_radius: float,
                    rng: np.random.Generator, arena: Arena | None = None,
                    concentration: float = 0.3, step: float = 1.0,
                    heterogeneous: bool = True) -> UserPopulation:
    homes = initial_positions(num_users, bs_positions, coverage_radius, rng, arena)
    if heterogeneous:
        profiles = random_profiles(num_users, rng, concentration, step)
    else:
        profiles = [uniform_profile(step)] * num_users
    return UserPopulation(homes, profiles)


def generate_trajectories(start_positions, profiles, traj_len: int, num_traj: int,
                          rng: np.random.Generator, arena: Arena | None = None,
                          restart_positions=None) -> np.ndarray:
    """Simulate ``num_traj`` independent walks of all users.

    Returns an array of shape (num_traj, traj_len, num_users, 2).  Every
    trajectory restarts from ``start_positions`` unless ``restart_positions``
    supplies a per-trajectory start of shape (num_traj, num_users, 2).
    """
    if traj_len < 1 or num_traj < 1:
        raise ValueError("traj_len and num_traj must be positive")
    start_positions = np.asarray(start_positions, dtype=np.float64)
    num_users = start_positions.shape[0]
    if len(profiles) != num_users:
        raise ValueError("one profile per user required")
    out = np.empty((num_traj, traj_len, num_users, 2))
    for k in range(num_traj):
        pos = (restart_positions[k] if restart_positions is not None else start_positions).copy()
        out[k, 0] = pos
        for t in range(1, traj_len):
            pos = step_all(pos, profiles, rng, arena)
            out[k, t] = pos
    return out


def write_trajectories_csv(path, trajectories: np.ndarray) -> None:
    """Columnar dump, one row per (trajectory, slot): traj,slot,u0x,u0y,..."""
    num_traj, traj_len, num_users, _ = trajectories.shape
    header = ["traj", "slot"]
    for u in range(num_users):
        header += [f"u{u}x", f"u{u}y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(num_traj):
            for t in range(traj_len):
                row = [k, t] + [repr(float(v)) for v in trajectories[k, t].ravel()]
                writer.writerow(row)


def read_trajectories_csv(path) -> np.ndarray:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        num_users = (len(header) - 2) // 2
        rows = [(int(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in reader]
    num_traj = max(r[0] for r in rows) + 1
    traj_len = max(r[1] for r in rows) + 1
    out = np.empty((num_traj, traj_len, num_users, 2))
    for k, t, vals in rows:
        out[k, t] = np.array(vals).reshape(num_users, 2)
    return out
