"""Channel gains, SINR rates for downlink service and cloud uplink,
interference aggregation, and uplink delay.

The gain model is implemented exactly as specified: gain = o * d^-2 with
d = sqrt(||target - bs||_2), i.e. gain = o / ||target - bs||_2.  That scaling
is physically unusual but intentional; ``pathloss_mode="squared"`` switches to
the conventional o / ||.||^2 for sensitivity checks.

Interference on an RB is the power of every other cell's occupant of that RB
(user-serving or uplink) seen through the victim's channel.  The victim
user's own allocations at other cells are excluded on the downlink; the
uplink sum runs over all users.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MIN_NORM = 1e-6  # zero-distance guard; unreachable under arena clamping


@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray     # (M, 2)
    cloud_position: np.ndarray   # (2,)
    coverage_radius: float

    def __post_init__(self):
        object.__setattr__(self, "bs_positions", np.atleast_2d(np.asarray(self.bs_positions, dtype=np.float64)))
        object.__setattr__(self, "cloud_position", np.asarray(self.cloud_position, dtype=np.float64))
        if len(self.bs_positions) < 1 or self.coverage_radius <= 0:
            raise ValueError("need at least one BS and a positive radius")

    @property
    def num_bs(self) -> int:
        return len(self.bs_positions)


@dataclass(frozen=True)
class RadioParams:
    bandwidth: float = 1.0       # B, per-RB bandwidth
    power: float = 1.0           # P, fixed transmit power
    noise_psd: float = 1e-5      # N0
    payload: float = 1.0         # D_m, bits per twin update
    delay_cap: float = 1.0       # alpha, uplink delay bound
    num_rbs: int = 12            # N
    pathloss_mode: str = "paper"

    def __post_init__(self):
        if min(self.bandwidth, self.power, self.noise_psd, self.payload, self.delay_cap) <= 0:
            raise ValueError("radio parameters must be positive")
        if self.num_rbs < 1:
            raise ValueError("need at least one RB")
        if self.pathloss_mode not in ("paper", "squared"):
            raise ValueError(f"unknown pathloss mode {self.pathloss_mode!r}")


@dataclass
class FadingDraw:
    """Per-slot fading coefficients o: one per (user, BS) link and one per
    (BS, cloud) link.  Nonnegative, unit mean."""

    user: np.ndarray   # (U, M)
    cloud: np.ndarray  # (M,)

    def __post_init__(self):
        if np.any(self.user < 0) or np.any(self.cloud < 0):
            raise ValueError("fading coefficients must be nonnegative")


def draw_fading(num_users: int, num_bs: int, rng: np.random.Generator) -> FadingDraw:
    """i.i.d. unit-mean exponential draws (squared Rayleigh envelope)."""
    return FadingDraw(user=rng.exponential(1.0, size=(num_users, num_bs)),
                      cloud=rng.exponential(1.0, size=num_bs))


def unit_fading(num_users: int, num_bs: int) -> FadingDraw:
    """Deterministic all-ones draw, handy for closed-form checks."""
    return FadingDraw(user=np.ones((num_users, num_bs)), cloud=np.ones(num_bs))


def channel_gain(target, bs_index: int, topology: Topology, o: float,
                 pathloss_mode: str = "paper") -> float:
    """o * d^-2 with d = sqrt(||target - bs||): o / ||target - bs||."""
    norm = float(np.linalg.norm(np.asarray(target, dtype=np.float64)
                                - topology.bs_positions[bs_index]))
    if norm < MIN_NORM:
        log.debug("norm %.3g below guard at BS %d; clamping", norm, bs_index)
        norm = MIN_NORM
    if pathloss_mode == "squared":
        return o / norm ** 2
    return o / norm


def gain_matrices(positions, topology: Topology, fading: FadingDraw,
                  params: RadioParams):
    """All link gains at once: (U, M) user-side and (M,) cloud-side."""
    positions = np.asarray(positions, dtype=np.float64)
    d_user = np.linalg.norm(positions[:, None, :] - topology.bs_positions[None, :, :], axis=2)
    d_cloud = np.linalg.norm(topology.bs_positions - topology.cloud_position[None, :], axis=1)
    d_user = np.maximum(d_user, MIN_NORM)
    d_cloud = np.maximum(d_cloud, MIN_NORM)
    expo = 2 if params.pathloss_mode == "squared" else 1
    return fading.user / d_user ** expo, fading.cloud / d_cloud ** expo


@dataclass
class Allocation:
    """Per-slot RB assignment: x[m, u, n] = 1 if cell m serves user u on RB n,
    y[m, n] = 1 if cell m uses RB n for its twin-sync uplink."""

    x: np.ndarray  # (M, U, N) of {0, 1}
    y: np.ndarray  # (M, N) of {0, 1}

    @classmethod
    def empty(cls, num_bs: int, num_users: int, num_rbs: int) -> "Allocation":
        return cls(np.zeros((num_bs, num_users, num_rbs), dtype=np.int8),
                   np.zeros((num_bs, num_rbs), dtype=np.int8))

    @property
    def num_bs(self):
        return self.x.shape[0]

    def occupancy(self) -> np.ndarray:
        """(M, N) count of occupants per RB: served users plus the uplink."""
        return self.x.sum(axis=1) + self.y

    def serving_of(self, user: int):
        """(bs, rb) serving ``user`` or None."""
        hits = np.argwhere(self.x[:, user, :] == 1)
        if len(hits) == 0:
            return None
        return tuple(hits[0])


def downlink_interference(user: int, serving_bs: int, rb: int, alloc: Allocation,
                          positions, topology: Topology, fading: FadingDraw,
                          params: RadioParams) -> float:
    """Power received by ``user`` on ``rb`` from every other cell's use of it,
    excluding the user's own allocations elsewhere."""
    gains_u, _ = gain_matrices(positions, topology, fading, params)
    total = 0.0
    for j in range(topology.num_bs):
        if j == serving_bs:
            continue
        others = int(alloc.x[j, :, rb].sum() - alloc.x[j, user, rb])
        total += params.power * gains_u[user, j] * (others + int(alloc.y[j, rb]))
    return total


def uplink_interference(bs: int, rb: int, alloc: Allocation, positions,
                        topology: Topology, fading: FadingDraw,
                        params: RadioParams) -> float:
    """Power at the cloud on ``rb`` from every other cell's occupant of it;
    the user sum has no exclusions."""
    _, gains_c = gain_matrices(positions, topology, fading, params)
    total = 0.0
    for j in range(topology.num_bs):
        if j == bs:
            continue
        total += params.power * gains_c[j] * (int(alloc.x[j, :, rb].sum()) + int(alloc.y[j, rb]))
    return total


def downlink_rate(user: int, bs: int, alloc: Allocation, positions,
                  topology: Topology, fading: FadingDraw, params: RadioParams) -> float:
    """Shannon rate summed over the RBs cell ``bs`` assigns to ``user``."""
    gains_u, _ = gain_matrices(positions, topology, fading, params)
    rate = 0.0
    for n in range(params.num_rbs):
        if alloc.x[bs, user, n]:
            inter = downlink_interference(user, bs, n, alloc, positions, topology, fading, params)
            snr = params.power * gains_u[user, bs] / (inter + params.bandwidth * params.noise_psd)
            rate += params.bandwidth * np.log2(1.0 + snr)
    return rate


def uplink_rate(bs: int, alloc: Allocation, positions, topology: Topology,
                fading: FadingDraw, params: RadioParams) -> float:
    _, gains_c = gain_matrices(positions, topology, fading, params)
    rate = 0.0
    for n in range(params.num_rbs):
        if alloc.y[bs, n]:
            inter = uplink_interference(bs, n, alloc, positions, topology, fading, params)
            snr = params.power * gains_c[bs] / (inter + params.bandwidth * params.noise_psd)
            rate += params.bandwidth * np.log2(1.0 + snr)
    return rate


def uplink_delay(bs: int, alloc: Allocation, positions, topology: Topology,
                 fading: FadingDraw, params: RadioParams) -> float:
    """payload / uplink rate; +inf encodes an unusable uplink."""
    rate = uplink_rate(bs, alloc, positions, topology, fading, params)
    if rate <= 0.0:
        return float("inf")
    return params.payload / rate


# -- vectorized forms used by the allocator and the episode loop ------------

def all_downlink_rates(alloc: Allocation, positions, topology: Topology,
                       fading: FadingDraw, params: RadioParams) -> np.ndarray:
    """(U,) realized downlink rate per user under a full allocation."""
    gains_u, _ = gain_matrices(positions, topology, fading, params)
    occ = alloc.occupancy()                       # (M, N)
    num_users = alloc.x.shape[1]
    rates = np.zeros(num_users)
    noise = params.bandwidth * params.noise_psd
    for u in range(num_users):
        serving = alloc.serving_of(u)
        if serving is None:
            continue
        m, n = serving
        inter = 0.0
        for j in range(topology.num_bs):
            if j == m:
                continue
            inter += params.power * gains_u[u, j] * (occ[j, n] - alloc.x[j, u, n])
        snr = params.power * gains_u[u, m] / (inter + noise)
        rates[u] = params.bandwidth * np.log2(1.0 + snr)
    return rates


def downlink_rate_grid(bs: int, users, rbs, alloc: Allocation, positions,
                       topology: Topology, fading: FadingDraw,
                       params: RadioParams) -> np.ndarray:
    """Candidate rates (len(users), len(rbs)) for cell ``bs`` serving each
    listed user on each listed RB, against the given partial allocation."""
    gains_u, _ = gain_matrices(positions, topology, fading, params)
    occ = alloc.occupancy()  # (M, N)
    users = np.asarray(users, dtype=int)
    rbs = np.asarray(rbs, dtype=int)
    noise = params.bandwidth * params.noise_psd
    # interference[u, n] = P * sum_{j != bs} g[u, j] * (occ[j, n] - x[j, u, n])
    inter = np.zeros((len(users), len(rbs)))
    for j in range(topology.num_bs):
        if j == bs:
            continue
        counts = occ[j][rbs][None, :] - alloc.x[j][np.ix_(users, rbs)]
        inter += params.power * gains_u[users, j][:, None] * counts
    snr = params.power * gains_u[users, bs][:, None] / (inter + noise)
    return params.bandwidth * np.log2(1.0 + snr)


def uplink_rate_candidates(bs: int, alloc: Allocation, positions,
                           topology: Topology, fading: FadingDraw,
                           params: RadioParams) -> np.ndarray:
    """(N,) uplink rate cell ``bs`` would get on each RB under the given
    partial allocation."""
    gains_u, gains_c = gain_matrices(positions, topology, fading, params)
    occ = alloc.occupancy()
    noise = params.bandwidth * params.noise_psd
    inter = np.zeros(params.num_rbs)
    for j in range(topology.num_bs):
        if j == bs:
            continue
        inter += params.power * gains_c[j] * occ[j]
    snr = params.power * gains_c[bs] / (inter + noise)
    return params.bandwidth * np.log2(1.0 + snr)


# -- allocation constraint auditor ------------------------------------------

def audit_allocation(alloc: Allocation) -> list[str]:
    """Check the per-slot allocation constraints; returns violated codes.

    8a: x binary            8b: user served at most once overall
    8c: RB granted to at most one user per cell
    8d: y binary            8e: at most one uplink RB per cell
    8f: an RB carries either one user or the uplink, not both
    """
    violations = []
    x, y = alloc.x, alloc.y
    if not np.isin(x, (0, 1)).all():
        violations.append("8a")
    if np.any(x.sum(axis=(0, 2)) > 1):
        violations.append("8b")
    if np.any(x.sum(axis=1) > 1):
        violations.append("8c")
    if not np.isin(y, (0, 1)).all():
        violations.append("8d")
    if np.any(y.sum(axis=1) > 1):
        violations.append("8e")
    if np.any(x.sum(axis=1) + y > 1):
        violations.append("8f")
    return violations
