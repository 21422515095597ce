"""Experiment orchestration: predictor training, cooperative/independent
agent training, greedy evaluation, parameter sweeps, and constraint audits.

All randomness flows through named streams derived from one master seed
(see ``rng``), with separate lanes for the environment (population, walks,
fading) and the agents (init, exploration, replay), so runs of different
methods under the same seed see identical environment randomness.

Emitted files are deterministic byte-for-byte given (config, seed): reals
are written as shortest round-trip decimals and no timestamps are recorded.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from . import marl, mobility, predictor
from .config import ExperimentConfig
from .episode import (Environment, QNetPolicy, RandomPolicy, model_predictor,
                      persistence_predictor, run_episode)
from .errors import ConfigError, DivergenceError
from .rng import StreamBundle


def eps_schedule(cfg: ExperimentConfig, epoch: int) -> float:
    """Linear decay from eps_start to eps_end over the first
    eps_decay_frac of the training epochs, flat afterwards."""
    decay_epochs = max(1, int(round(cfg.epochs * cfg.eps_decay_frac)))
    frac = min(1.0, epoch / decay_epochs)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


# -- predictor ----------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig, seed: int):
    """Seeded training and holdout trajectories for the config's population."""
    env = Environment.from_seed(cfg, seed)
    walks = StreamBundle(seed).get("dataset-walks")
    total = cfg.num_traj + cfg.holdout_traj
    data = mobility.generate_trajectories(env.population.homes, env.population.profiles,
                                          cfg.traj_len, total, walks, env.arena)
    return data[:cfg.num_traj], data[cfg.num_traj:]


def train_predictor(cfg: ExperimentConfig, seed: int, data=None):
    """Train the state predictor.

    Trajectories are generated fresh for (config, seed) unless ``data``
    supplies them, in which case the last holdout_traj trajectories become
    the holdout split.  Returns (model, per-epoch loss curve, holdout report
    dict).  The schedule is the configured epochs at pred_lr followed by
    pred_anneal_epochs at pred_lr / 4 to settle the SGD noise floor.
    """
    if data is None:
        train_traj, holdout_traj = build_dataset(cfg, seed)
    else:
        if len(data) <= cfg.holdout_traj:
            raise ConfigError("dataset smaller than the holdout split")
        train_traj, holdout_traj = data[:-cfg.holdout_traj], data[-cfg.holdout_traj:]
    tr_in, tr_tg = predictor.build_windows(train_traj, cfg.window)
    ho_in, ho_tg = predictor.build_windows(holdout_traj, cfg.window)
    init_rng = StreamBundle(seed).get("predictor-init")
    shuffle_rng = StreamBundle(seed).get("predictor-shuffle")
    model = predictor.init_predictor(cfg.num_users, cfg.pred_hidden, cfg.window, init_rng)
    curve = []
    if cfg.pred_epochs:
        model, curve = predictor.train(model, tr_in, tr_tg, cfg.pred_lr,
                                       cfg.pred_batch, cfg.pred_epochs,
                                       shuffle_rng, gain=cfg.pred_gain)
    if cfg.pred_anneal_epochs:
        model, tail = predictor.train(model, tr_in, tr_tg, cfg.pred_lr / 4.0,
                                      cfg.pred_batch, cfg.pred_anneal_epochs,
                                      shuffle_rng, standardize=False)
        curve = curve + tail
    per_user, model_mse = predictor.evaluate_mse(model, ho_in, ho_tg)
    _, base_mse = predictor.persistence_mse(ho_in, ho_tg)
    report = {"holdout_mse": model_mse, "persistence_mse": base_mse,
              "per_user_mse": [float(v) for v in per_user]}
    return model, curve, report


# -- agent training -----------------------------------------------------------

def train_agents(cfg: ExperimentConfig, model: predictor.PredictorModel,
                 seed: int, method: str = "vdn"):
    """G epochs of collect-then-train.  Returns (nets, curve rows), where a
    row is (epoch, td_loss, mean_reward, exploration_eps)."""
    if method not in ("vdn", "iql"):
        raise ValueError(f"unknown method {method!r}")
    step_fn = marl.vdn_train_step if method == "vdn" else marl.iql_train_step
    env = Environment.from_seed(cfg, seed)
    bundle = StreamBundle(seed)
    init_rng = bundle["agent-init"]
    nets = [marl.init_agent(cfg.num_users, cfg.num_rbs, cfg.q_hidden, init_rng)
            for _ in range(cfg.num_bs)]
    targets = [n.copy() for n in nets]
    replay = marl.ReplayMemory(cfg.replay_capacity)
    mob, fad = bundle["mobility"], bundle["fading"]
    explore, rep = bundle["explore"], bundle["replay"]
    predict_fn = model_predictor(model)
    rows = []
    for g in range(cfg.epochs):
        eps = eps_schedule(cfg, g)
        policy = QNetPolicy(nets, eps, explore)
        episode, slots = run_episode(env, policy, predict_fn, mob, fad, collect=True)
        replay.add(episode)
        loss = math.nan
        for _ in range(cfg.updates_per_epoch):
            nets, loss = step_fn(nets, targets, replay, cfg.batch, cfg.q_lr,
                                 cfg.gamma, rep)
        targets = marl.sync_targets(nets, targets, epoch=g + 1, period=cfg.target_period)
        mean_reward = float(np.mean([s.reward for s in slots]))
        rows.append((g, loss, mean_reward, eps))
    return nets, rows


def train_vdn(cfg: ExperimentConfig, model, seed: int):
    return train_agents(cfg, model, seed, "vdn")


def train_iql(cfg: ExperimentConfig, model, seed: int):
    return train_agents(cfg, model, seed, "iql")


# -- evaluation ---------------------------------------------------------------

def evaluate(cfg: ExperimentConfig, nets, model, seed: int,
             episodes: int | None = None):
    """Greedy rollouts; returns (summary dict, list of per-episode slot
    lists)."""
    episodes = cfg.eval_episodes if episodes is None else episodes
    env = Environment.from_seed(cfg, seed)
    bundle = StreamBundle(seed)
    mob, fad = bundle["eval-mobility"], bundle["eval-fading"]
    policy = QNetPolicy(nets, 0.0, bundle["eval-explore"])
    predict_fn = model_predictor(model)
    all_slots = []
    for _ in range(episodes):
        _, slots = run_episode(env, policy, predict_fn, mob, fad, collect=False)
        all_slots.append(slots)
    return summarize(cfg, all_slots), all_slots


def summarize(cfg: ExperimentConfig, episode_slots) -> dict:
    flat = [s for slots in episode_slots for s in slots]
    hist = [0] * (cfg.num_bs + 1)
    delay_failures = 0
    violations = 0
    for s in flat:
        hist[sum(s.sync_success)] += 1
        delay_failures += sum(1 for e in s.events if e.startswith("sync_delay_fail"))
        violations += len(s.violations)
    return {
        "episodes": len(episode_slots),
        "slots": len(flat),
        "mean_reward": float(np.mean([s.reward for s in flat])),
        "mean_dnt_error": float(np.mean([s.sync_error for s in flat])),
        "mean_total_rate": float(np.mean([float(np.sum(s.rates)) for s in flat])),
        "syncs_per_slot_hist": hist,
        "delay_failures": delay_failures,
        "constraint_violations": violations,
    }


# -- scripted runs ------------------------------------------------------------

def run_scripted(cfg: ExperimentConfig, policy, predict_fn, seed: int,
                 episodes: int = 1):
    """Roll episodes under a fixed policy (audits, twin checks)."""
    env = Environment.from_seed(cfg, seed)
    bundle = StreamBundle(seed)
    mob, fad = bundle["mobility"], bundle["fading"]
    out = []
    for _ in range(episodes):
        _, slots = run_episode(env, policy, predict_fn, mob, fad, collect=False)
        out.append(slots)
    return out


def audit_random_policy(cfg: ExperimentConfig, seed: int, slots_target: int):
    """Fuzz audit: random-policy slots, counting constraint violations and
    delay-cap events."""
    env = Environment.from_seed(cfg, seed)
    bundle = StreamBundle(seed)
    mob, fad = bundle["mobility"], bundle["fading"]
    policy = RandomPolicy(bundle["explore"])
    total = 0
    violations = 0
    delay_events = 0
    episode_slots = []
    while total < slots_target:
        _, slots = run_episode(env, policy, persistence_predictor, mob, fad,
                               collect=False)
        episode_slots.append(slots)
        for s in slots:
            violations += len(s.violations)
            delay_events += sum(1 for e in s.events if e.startswith("sync_delay_fail"))
        total += len(slots)
    return {"slots": total, "violations": violations,
            "delay_events": delay_events}, episode_slots


# -- sweeps -------------------------------------------------------------------

def sweep(cfg: ExperimentConfig, axis: str, grid, seeds,
          methods=("vdn", "iql")):
    """Retrain and evaluate on each grid point with matched seeds across
    methods.  Returns rows of dicts (axis value, method, mean rate, mean
    twin error, mean reward)."""
    if axis not in ("epsilon", "users"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    rows = []
    predictor_cache: dict = {}
    for value in grid:
        if axis == "epsilon":
            point = cfg.replace(epsilon_weight=float(value))
        else:
            point = cfg.replace(num_users=int(value))
        for method in methods:
            rates, errors, rewards = [], [], []
            for seed in seeds:
                key = (point.num_users, seed)
                if key not in predictor_cache:
                    predictor_cache[key] = train_predictor(point, seed)[0]
                model = predictor_cache[key]
                nets, _ = train_agents(point, model, seed, method)
                summary, _ = evaluate(point, nets, model, seed)
                rates.append(summary["mean_total_rate"])
                errors.append(summary["mean_dnt_error"])
                rewards.append(summary["mean_reward"])
            rows.append({"axis": axis, "value": float(value), "method": method,
                         "mean_rate": float(np.mean(rates)),
                         "mean_dnt_error": float(np.mean(errors)),
                         "mean_reward": float(np.mean(rewards))})
    return rows


# -- deterministic file emission ----------------------------------------------

def _fmt(x) -> str:
    """Shortest round-trip decimal for reals; plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_trace_csv(path, cfg: ExperimentConfig, episode_slots) -> None:
    """One row per slot: actions, sync outcomes, delays, per-user rates,
    twin error, reward, violations and events."""
    num_bs, num_users = cfg.num_bs, cfg.num_users
    header = ["episode", "slot"]
    header += [f"act_m{m}" for m in range(num_bs)]
    header += [f"sync_req_m{m}" for m in range(num_bs)]
    header += [f"sync_ok_m{m}" for m in range(num_bs)]
    header += [f"uplink_rb_m{m}" for m in range(num_bs)]
    header += [f"delay_m{m}" for m in range(num_bs)]
    header += [f"rate_u{u}" for u in range(num_users)]
    header += [f"serve_u{u}" for u in range(num_users)]
    header += ["sync_error", "reward", "violations", "events"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for e, slots in enumerate(episode_slots):
            for s in slots:
                row = [e, s.slot]
                row += [s.actions[m] for m in range(num_bs)]
                row += [int(s.sync_requested[m]) for m in range(num_bs)]
                row += [int(s.sync_success[m]) for m in range(num_bs)]
                row += [-1 if s.uplink_rb[m] is None else s.uplink_rb[m]
                        for m in range(num_bs)]
                row += [_fmt(s.delays[m]) for m in range(num_bs)]
                row += [_fmt(r) for r in s.rates]
                row += ["" if p is None else f"{p[0]}:{p[1]}" for p in s.serving]
                row += [_fmt(s.sync_error), _fmt(s.reward),
                        ";".join(s.violations), ";".join(s.events)]
                w.writerow(row)


def write_twin_trace_csv(path, cfg: ExperimentConfig, episode_slots) -> None:
    """Per-slot twin detail: true and mirrored position plus provenance per
    user, and the slot's twin error."""
    num_users = cfg.num_users
    header = ["episode", "slot"]
    for u in range(num_users):
        header += [f"u{u}_true_x", f"u{u}_true_y", f"u{u}_twin_x", f"u{u}_twin_y",
                   f"u{u}_src"]
    header.append("sync_error")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for e, slots in enumerate(episode_slots):
            for s in slots:
                row = [e, s.slot]
                for u in range(num_users):
                    row += [_fmt(s.physical[u, 0]), _fmt(s.physical[u, 1]),
                            _fmt(s.twin_positions[u, 0]), _fmt(s.twin_positions[u, 1]),
                            s.twin_provenance[u][0]]
                row.append(_fmt(s.sync_error))
                w.writerow(row)


def write_curve_csv(path, rows, header=("epoch", "loss", "mean_reward", "eps")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "method", "mean_rate", "mean_dnt_error",
                    "mean_reward"])
        for r in rows:
            w.writerow([r["axis"], _fmt(r["value"]), r["method"],
                        _fmt(r["mean_rate"]), _fmt(r["mean_dnt_error"]),
                        _fmt(r["mean_reward"])])


def save_agents(out_dir, nets) -> None:
    from . import nncore

    for m, net in enumerate(nets):
        arrays = nncore.gru_to_arrays(net.gru, "gru.")
        arrays["head"] = net.head
        nncore.save_arrays(f"{out_dir}/agent_{m}.json", arrays,
                           meta={"kind": "agent", "num_users": net.num_users,
                                 "num_rbs": net.num_rbs})


def load_agents(out_dir, num_bs: int):
    from . import nncore

    nets = []
    for m in range(num_bs):
        arrays, meta = nncore.load_arrays(f"{out_dir}/agent_{m}.json")
        if meta.get("kind") != "agent":
            raise ValueError(f"agent_{m}.json is not an agent checkpoint")
        nets.append(marl.AgentNet(nncore.gru_from_arrays(arrays, "gru."),
                                  arrays["head"], int(meta["num_users"]),
                                  int(meta["num_rbs"])))
    return nets
