"""Per-cell recurrent Q agents and the cooperative training machinery.

Each cell runs a GRU whose input is its encoded local view and whose dense
head scores every action in a fixed space of size 2^(U+1): U association
bits plus one sync bit.  Invalid actions (claiming uncovered users, or more
claims than RBs can carry) are excluded at selection time by a mask, never
zeroed in the raw outputs.

Training is cooperative: the team TD target uses the sum of per-agent target
maxima (the joint argmax decomposes under additive value decomposition), and
each agent's parameters move along the gradient of the shared squared TD
error through its own Q value only.  The independent baseline trains each
agent on its local reward instead.  Both replay whole episodes and rebuild
hidden states from the episode start, so recurrent credit assignment stays
correct under replay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import nncore
from .errors import DivergenceError
from .nncore import GruCellParams, GruTape, gru_bptt, gru_cell_forward

COORD_SCALE = 150.0  # half the arena width; shared by all state encodings


# -- action space ------------------------------------------------------------

@lru_cache(maxsize=None)
def action_tables(num_users: int, num_rbs: int):
    """Precomputed per-action-id assoc bitmask, sync flag and claim count.

    Action id layout: bits 0..U-1 are the association vector (bit u set means
    the cell claims user u), bit U is the sync flag.
    """
    ids = np.arange(1 << (num_users + 1), dtype=np.int64)
    assoc = ids & ((1 << num_users) - 1)
    sync = ids >> num_users
    pop = np.zeros_like(ids)
    for u in range(num_users):
        pop += (assoc >> u) & 1
    usable = pop + sync <= num_rbs
    return assoc, sync.astype(bool), pop, usable


def num_actions(num_users: int) -> int:
    return 1 << (num_users + 1)


def encode_action(sync: bool, assoc_users, num_users: int) -> int:
    a = 0
    for u in assoc_users:
        a |= 1 << int(u)
    if sync:
        a |= 1 << num_users
    return a


def action_sync(action: int, num_users: int) -> bool:
    return bool((action >> num_users) & 1)


def action_assoc(action: int, num_users: int) -> list[int]:
    return [u for u in range(num_users) if (action >> u) & 1]


def coverage_int(covered_users) -> int:
    c = 0
    for u in covered_users:
        c |= 1 << int(u)
    return c


def valid_action_mask(cov: int, num_users: int, num_rbs: int) -> np.ndarray:
    """Boolean mask over the action space: claims must lie inside the
    coverage and, together with the sync flag, fit into the RB budget."""
    assoc, _, _, usable = action_tables(num_users, num_rbs)
    return usable & ((assoc & ~np.int64(cov)) == 0)


# -- local state encoding ----------------------------------------------------

def encode_local_state(bs: int, positions, topology, scale: float = COORD_SCALE):
    """Fixed-size encoding of a cell's partial view: normalized positions of
    covered users in their slots (zeros elsewhere) plus the U coverage bits.
    Returns (vector of 3U reals, coverage bitmask int)."""
    from .twin import observe  # local import; twin depends on radio only

    positions = np.asarray(positions, dtype=np.float64)
    num_users = positions.shape[0]
    obs = observe(bs, positions, topology)
    enc = np.zeros(3 * num_users)
    for idx, u in enumerate(obs.covered_users):
        enc[2 * u:2 * u + 2] = obs.positions[idx] / scale
        enc[2 * num_users + u] = 1.0
    return enc, coverage_int(obs.covered_users)


# -- agents ------------------------------------------------------------------

@dataclass
class AgentNet:
    """One cell's Q network: GRU over local views plus a linear action head.
    ``hidden`` is episode-scoped state, reset at episode start."""

    gru: GruCellParams
    head: np.ndarray          # (num_actions, hidden_dim)
    num_users: int
    num_rbs: int
    hidden: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.head.shape != (num_actions(self.num_users), self.gru.hidden_dim):
            raise ValueError("head shape does not match the action space")
        if self.hidden is None:
            self.hidden = np.zeros(self.gru.hidden_dim)

    def reset_hidden(self):
        self.hidden = np.zeros(self.gru.hidden_dim)

    def copy(self) -> "AgentNet":
        return AgentNet(self.gru.copy(), self.head.copy(), self.num_users,
                        self.num_rbs, self.hidden.copy())


def init_agent(num_users: int, num_rbs: int, hidden: int,
               rng: np.random.Generator) -> AgentNet:
    return AgentNet(nncore.init_gru(3 * num_users, hidden, rng),
                    nncore.init_dense(num_actions(num_users), hidden, rng),
                    num_users, num_rbs)


def q_values(net: AgentNet, encoded_state) -> np.ndarray:
    """All action values for the current step; advances the episode hidden
    state as a side effect."""
    h, _ = gru_cell_forward(net.gru, encoded_state, net.hidden)
    net.hidden = h
    return net.head @ h


def act_epsilon_greedy(net: AgentNet, encoded_state, valid_mask, explore_eps: float,
                       rng: np.random.Generator) -> int:
    """Epsilon-greedy over the valid actions; the hidden state advances on
    every call (the observation was consumed either way)."""
    valid_idx = np.flatnonzero(valid_mask)
    if len(valid_idx) == 0:
        raise ValueError("no valid action (the empty action should always be valid)")
    q = q_values(net, encoded_state)
    if rng.random() < explore_eps:
        return int(valid_idx[rng.integers(len(valid_idx))])
    masked = np.where(valid_mask, q, -np.inf)
    return int(np.argmax(masked))


def q_tot(per_agent_q) -> float:
    """Additive decomposition: the team value is the sum of local values."""
    return float(np.sum(per_agent_q))


# -- episode storage and replay ----------------------------------------------

@dataclass
class EpisodeRecord:
    """Everything replay needs to rebuild hidden states and targets."""

    enc: np.ndarray            # (T, M, 3U) local encodings
    cov: np.ndarray            # (T, M) coverage bitmask ints
    actions: np.ndarray        # (T, M) chosen action ids
    rewards: np.ndarray        # (T,) team reward
    local_rewards: np.ndarray  # (T, M) per-cell decomposed reward

    def __len__(self):
        return len(self.rewards)


class ReplayMemory:
    """Whole episodes, FIFO-evicted once the transition count would exceed
    capacity."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: list[EpisodeRecord] = []
        self.total = 0

    def add(self, episode: EpisodeRecord):
        self.episodes.append(episode)
        self.total += len(episode)
        while self.total > self.capacity and len(self.episodes) > 1:
            dropped = self.episodes.pop(0)
            self.total -= len(dropped)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform sample of (episode, slot) pairs without replacement."""
        if self.total == 0:
            raise ValueError("empty replay memory")
        take = min(batch_size, self.total)
        flat = rng.choice(self.total, size=take, replace=False)
        bounds = np.cumsum([len(e) for e in self.episodes])
        out = []
        for f in flat:
            ep = int(np.searchsorted(bounds, f, side="right"))
            t = int(f - (bounds[ep - 1] if ep else 0))
            out.append((ep, t))
        return out


# -- batched recurrent Q evaluation ------------------------------------------

def _stack_sequences(episodes, samples, agent: int, steps: int) -> np.ndarray:
    """(steps, B, 3U) input tensor for one agent; sequences shorter than
    ``steps`` are padded with zeros beyond their episode length (those rows
    are never read)."""
    dim = episodes[0].enc.shape[2]
    xs = np.zeros((steps, len(samples), dim))
    for b, (ep, _) in enumerate(samples):
        e = episodes[ep].enc
        upto = min(steps, e.shape[0])
        xs[:upto, b, :] = e[:upto, agent, :]
    return xs


def _forward_collect(params: GruCellParams, xs: np.ndarray, collect_at):
    """Run the recurrence over (steps, B, d); return the tape and a
    (B, hidden) array of the hidden states after each sample's own step."""
    out_dummy = np.zeros((1, params.hidden_dim))
    _, tape = nncore.gru_sequence_forward(params, out_dummy, xs)
    hs = np.concatenate([tape.h_prev[1:], tape.h_final[None]], axis=0)
    gathered = np.empty((xs.shape[1], params.hidden_dim))
    for b, t in enumerate(collect_at):
        gathered[b] = hs[t, b]
    return tape, gathered


def _target_maxima(net: AgentNet, target: AgentNet, agent: int, episodes, samples):
    """Per-sample max over valid next actions of the target net at slot t+1;
    zero on terminal slots (the bootstrap is dropped there)."""
    maxima = np.zeros(len(samples))
    live = [(b, ep, t) for b, (ep, t) in enumerate(samples)
            if t + 1 < len(episodes[ep])]
    if not live:
        return maxima
    steps = max(t + 2 for _, _, t in live)
    sub = [(ep, t) for _, ep, t in live]
    xs = _stack_sequences(episodes, sub, agent, steps)
    _, h_next = _forward_collect(target.gru, xs, [t + 1 for _, _, t in live])
    qs = h_next @ target.head.T          # (B_live, A)
    for row, (b, ep, t) in enumerate(live):
        mask = valid_action_mask(int(episodes[ep].cov[t + 1, agent]),
                                 net.num_users, net.num_rbs)
        maxima[b] = np.max(qs[row][mask])
    return maxima


def _chosen_q_with_tape(net: AgentNet, agent: int, episodes, samples):
    """Online-net Q of the chosen action at each sampled slot, plus the tape
    and bookkeeping needed to push gradients back through the prefixes."""
    steps = max(t + 1 for _, t in samples)
    xs = _stack_sequences(episodes, samples, agent, steps)
    tape, h_at = _forward_collect(net.gru, xs, [t for _, t in samples])
    actions = np.array([episodes[ep].actions[t, agent] for ep, t in samples])
    q = np.einsum("bh,bh->b", h_at, net.head[actions])
    return q, tape, h_at, actions


def vdn_loss_and_grads(nets, target_nets, episodes, samples, gamma: float):
    """Squared team TD error and its exact gradients.

    loss = mean_b (y_b - Q_tot,b)^2 with y from the target nets; the
    gradient w.r.t. each agent's parameters flows through that agent's own
    chosen-action Q only, replayed from the episode start.
    """
    batch = len(samples)
    rewards = np.array([episodes[ep].rewards[t] for ep, t in samples])
    per_agent = []
    q_tot_b = np.zeros(batch)
    y_b = rewards.copy()
    for m, (net, tgt) in enumerate(zip(nets, target_nets)):
        q, tape, h_at, actions = _chosen_q_with_tape(net, m, episodes, samples)
        q_tot_b += q
        y_b += gamma * _target_maxima(net, tgt, m, episodes, samples)
        per_agent.append((net, tape, h_at, actions, [t for _, t in samples]))
    err = q_tot_b - y_b
    loss = float(np.mean(err ** 2))
    coeff = 2.0 * err / batch            # dJ/dQ_m,b, shared across agents
    grads = [_agent_grads(net, tape, h_at, actions, ts, coeff)
             for net, tape, h_at, actions, ts in per_agent]
    return loss, grads


def iql_loss_and_grads(nets, target_nets, episodes, samples, gamma: float):
    """Independent per-agent TD errors against local rewards."""
    batch = len(samples)
    losses = []
    grads = []
    for m, (net, tgt) in enumerate(zip(nets, target_nets)):
        r_local = np.array([episodes[ep].local_rewards[t, m] for ep, t in samples])
        q, tape, h_at, actions = _chosen_q_with_tape(net, m, episodes, samples)
        y = r_local + gamma * _target_maxima(net, tgt, m, episodes, samples)
        err = q - y
        losses.append(float(np.mean(err ** 2)))
        coeff = 2.0 * err / batch
        grads.append(_agent_grads(net, tape, h_at, actions,
                                  [t for _, t in samples], coeff))
    return float(np.mean(losses)), grads


def _agent_grads(net: AgentNet, tape: GruTape, h_at, actions, sample_steps, coeff):
    """Gradients of sum_b coeff_b * Q_b(chosen) through head and recurrence."""
    head_grad = np.zeros_like(net.head)
    np.add.at(head_grad, actions, coeff[:, None] * h_at)
    steps, batch = tape.xs.shape[0], tape.xs.shape[1]
    inject = []
    rows = net.head[actions] * coeff[:, None]     # (B, hidden)
    for t in range(steps):
        sel = np.array([b for b, tb in enumerate(sample_steps) if tb == t], dtype=int)
        if len(sel) == 0:
            inject.append(None)
        else:
            d = np.zeros((batch, net.gru.hidden_dim))
            d[sel] = rows[sel]
            inject.append(d)
    gru_grads = gru_bptt(tape, net.gru, inject)
    return gru_grads, head_grad


def apply_grads(net: AgentNet, grads, lr: float) -> AgentNet:
    gru_grads, head_grad = grads
    return AgentNet(nncore.sgd_step_gru(net.gru, gru_grads, lr),
                    nncore.sgd_step(net.head, head_grad, lr),
                    net.num_users, net.num_rbs, net.hidden.copy())


def vdn_train_step(nets, target_nets, replay: ReplayMemory, batch_size: int,
                   lr: float, gamma: float, rng: np.random.Generator):
    """One sampled-batch update of all agents against the team TD error."""
    samples = replay.sample(batch_size, rng)
    loss, grads = vdn_loss_and_grads(nets, target_nets, replay.episodes, samples, gamma)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite team TD loss {loss}")
    return [apply_grads(n, g, lr) for n, g in zip(nets, grads)], loss


def iql_train_step(nets, target_nets, replay: ReplayMemory, batch_size: int,
                   lr: float, gamma: float, rng: np.random.Generator):
    samples = replay.sample(batch_size, rng)
    loss, grads = iql_loss_and_grads(nets, target_nets, replay.episodes, samples, gamma)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite local TD loss {loss}")
    return [apply_grads(n, g, lr) for n, g in zip(nets, grads)], loss


def sync_targets(nets, target_nets, epoch: int, period: int):
    """Hard-copy online parameters into the targets every ``period`` epochs."""
    if period < 1:
        raise ValueError("period must be positive")
    if epoch % period == 0:
        return [n.copy() for n in nets]
    return target_nets
