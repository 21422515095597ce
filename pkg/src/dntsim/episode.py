"""The per-slot environment loop and scripted policies.

Slot flow: the cloud predicts this slot's state from the twin history; each
cell observes its coverage, picks an action (sync bit plus association
claims) from its masked action space; the sequential allocator turns the
joint action into a concrete RB assignment and sync outcomes; the twin is
composed from fresh observations where syncs succeeded and predictions
elsewhere; the team reward and per-cell local rewards are computed; then the
users move.

The twin history is seeded with the initial physical state (the twin starts
from a full snapshot taken when the episode begins).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import allocator, marl, mobility, radio, twin
from .config import ExperimentConfig
from .predictor import PredictorModel, predict_next
from .rng import StreamBundle


@dataclass
class Environment:
    """Scenario bound to a concrete seeded user population."""

    cfg: ExperimentConfig
    topology: radio.Topology
    params: radio.RadioParams
    arena: mobility.Arena
    population: mobility.UserPopulation

    @classmethod
    def from_seed(cls, cfg: ExperimentConfig, seed: int) -> "Environment":
        topo = cfg.topology()
        arena = cfg.arena()
        pop_rng = StreamBundle(seed).get("population")
        pop = mobility.make_population(cfg.num_users, topo.bs_positions,
                                       cfg.coverage_radius, pop_rng, arena,
                                       concentration=cfg.profile_concentration,
                                       step=cfg.step_len,
                                       heterogeneous=cfg.heterogeneous_profiles)
        return cls(cfg, topo, cfg.radio_params(), arena, pop)


# -- policies -----------------------------------------------------------------

class QNetPolicy:
    """Epsilon-greedy over the agents' recurrent Q networks."""

    def __init__(self, nets, explore_eps: float, rng: np.random.Generator):
        self.nets = nets
        self.eps = explore_eps
        self.rng = rng

    def reset(self):
        for net in self.nets:
            net.reset_hidden()

    def act(self, bs: int, enc, valid_mask) -> int:
        return marl.act_epsilon_greedy(self.nets[bs], enc, valid_mask, self.eps, self.rng)


class RandomPolicy:
    """Uniform over the valid actions; the exploration-only baseline."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def reset(self):
        pass

    def act(self, bs: int, enc, valid_mask) -> int:
        valid = np.flatnonzero(valid_mask)
        return int(valid[self.rng.integers(len(valid))])


class ScriptedPolicy:
    """Fixed per-cell behavior, e.g. always-sync or never-sync."""

    def __init__(self, sync: bool, assoc_covered: bool = False):
        self.sync = sync
        self.assoc_covered = assoc_covered  # claim every covered user

    def reset(self):
        pass

    def act(self, bs: int, enc, valid_mask) -> int:
        num_users = len(enc) // 3
        covered = [u for u in range(num_users) if enc[2 * num_users + u] > 0]
        assoc = covered if self.assoc_covered else []
        action = marl.encode_action(self.sync, assoc, num_users)
        if not valid_mask[action]:
            action = marl.encode_action(self.sync, [], num_users)
        return action


def all_sync_policy() -> ScriptedPolicy:
    return ScriptedPolicy(sync=True)


def no_sync_policy() -> ScriptedPolicy:
    return ScriptedPolicy(sync=False)


# -- predictors ---------------------------------------------------------------

def persistence_predictor(history) -> np.ndarray:
    """Twin prediction fallback: repeat the latest known state."""
    return np.asarray(history[-1], dtype=np.float64).copy()


def model_predictor(model: PredictorModel):
    return lambda history: predict_next(model, history)


# -- the loop -----------------------------------------------------------------

@dataclass
class SlotRecord:
    slot: int
    actions: list            # per-cell action ids
    sync_requested: list
    sync_success: list
    uplink_rb: list
    delays: list
    rates: np.ndarray        # per-user realized downlink rate
    serving: list            # per user, (cell, rb) or None
    sync_error: float
    reward: float
    local_rewards: np.ndarray
    assoc_counts: np.ndarray
    violations: list
    events: list
    physical: np.ndarray     # (U, 2)
    twin_positions: np.ndarray
    twin_provenance: list


def audit_constraints(slot_alloc: allocator.SlotAllocation,
                      params: radio.RadioParams) -> list[str]:
    """Every per-slot constraint on a concrete slot: the allocation rules
    plus the delay cap.  A sync that was DOWNGRADED to a failure is an
    event, not a violation; a sync still marked successful past the cap is."""
    violations = radio.audit_allocation(slot_alloc.alloc)
    for m, ok in enumerate(slot_alloc.sync_success):
        if ok and slot_alloc.delays[m] > params.delay_cap:
            violations.append("8g")
    return violations


def local_rewards(cfg: ExperimentConfig, observations, served_rates, assoc_lists,
                  assoc_counts, physical, twin_state) -> np.ndarray:
    """Per-cell reward decomposition for independent training: own served
    rate minus own covered-user twin error, with the multi-claim penalty
    charged to every cell claiming an over-claimed user."""
    eps_w, rho = cfg.epsilon_weight, cfg.penalty_rho
    out = np.zeros(cfg.num_bs)
    for m, obs in enumerate(observations):
        claimed = assoc_lists[m]
        over = [u for u in claimed if assoc_counts[u] > 1]
        if over:
            out[m] = sum(assoc_counts[u] for u in over) * rho
            continue
        rate_sum = float(sum(served_rates[u] for u in claimed))
        err = float(np.sum((physical[obs.covered_users] -
                            twin_state.positions[obs.covered_users]) ** 2))
        out[m] = eps_w * rate_sum - (1.0 - eps_w) / cfg.num_users * err
    return out


def run_episode(env: Environment, policy, predict_fn, mob_rng, fad_rng,
                collect: bool = True):
    """Play one fixed-horizon episode.  Returns (EpisodeRecord or None,
    list of SlotRecords)."""
    cfg = env.cfg
    num_users, num_bs = cfg.num_users, cfg.num_bs
    policy.reset()
    positions = env.population.homes.copy()
    history = [positions.copy()]          # twin bootstrap snapshot
    slots = []
    enc_log = np.zeros((cfg.horizon, num_bs, 3 * num_users))
    cov_log = np.zeros((cfg.horizon, num_bs), dtype=np.int64)
    act_log = np.zeros((cfg.horizon, num_bs), dtype=np.int64)
    reward_log = np.zeros(cfg.horizon)
    local_log = np.zeros((cfg.horizon, num_bs))

    for t in range(cfg.horizon):
        fading = radio.draw_fading(num_users, num_bs, fad_rng)
        predictions = predict_fn(np.asarray(history[-cfg.window:]))

        observations = [twin.observe(m, positions, env.topology) for m in range(num_bs)]
        actions = []
        for m in range(num_bs):
            enc, cov = marl.encode_local_state(m, positions, env.topology,
                                               scale=cfg.arena_half_width)
            mask = marl.valid_action_mask(cov, num_users, cfg.num_rbs)
            a = policy.act(m, enc, mask)
            if not mask[a]:
                raise ValueError(f"policy produced masked action {a} for cell {m}")
            actions.append(a)
            enc_log[t, m] = enc
            cov_log[t, m] = cov
            act_log[t, m] = a

        sync_flags = [marl.action_sync(a, num_users) for a in actions]
        assoc_lists = [marl.action_assoc(a, num_users) for a in actions]
        coverage = [obs.covered_users for obs in observations]
        slot_alloc = allocator.allocate_all(sync_flags, assoc_lists, positions,
                                            env.topology, fading, env.params,
                                            coverage=coverage,
                                            refine_rounds=cfg.refine_rounds)
        rates = radio.all_downlink_rates(slot_alloc.alloc, positions,
                                         env.topology, fading, env.params)
        twin_state = twin.compose_twin(None, predictions, observations,
                                       slot_alloc.sync_success)
        err = twin.sync_error(positions, twin_state)
        assoc_counts = np.zeros(num_users, dtype=int)
        for lst in assoc_lists:
            for u in lst:
                assoc_counts[u] += 1
        reward = twin.team_reward(positions, twin_state, rates, assoc_counts,
                                  cfg.epsilon_weight, cfg.penalty_rho)
        locals_m = local_rewards(cfg, observations, rates, assoc_lists,
                                 assoc_counts, positions, twin_state)
        violations = audit_constraints(slot_alloc, env.params)

        serving = [slot_alloc.alloc.serving_of(u) for u in range(num_users)]
        slots.append(SlotRecord(
            slot=t, actions=list(map(int, actions)),
            sync_requested=slot_alloc.sync_requested,
            sync_success=slot_alloc.sync_success,
            uplink_rb=slot_alloc.uplink_rb, delays=slot_alloc.delays,
            rates=rates, serving=serving, sync_error=err, reward=reward,
            local_rewards=locals_m, assoc_counts=assoc_counts,
            violations=violations, events=list(slot_alloc.events),
            physical=positions.copy(), twin_positions=twin_state.positions.copy(),
            twin_provenance=list(twin_state.provenance)))

        reward_log[t] = reward
        local_log[t] = locals_m
        history.append(twin_state.positions.copy())
        positions = mobility.step_all(positions, env.population.profiles,
                                      mob_rng, env.arena)

    record = marl.EpisodeRecord(enc_log, cov_log, act_log, reward_log,
                                local_log) if collect else None
    return record, slots
