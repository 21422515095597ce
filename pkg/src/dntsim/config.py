"""Experiment configuration: one flat, typed key-value document.

Configs load from TOML (top-level keys only).  Unknown keys are rejected so
typos fail loudly; every field has a default matching the standard scenario
(three cells on a 300 x 100 m strip, twelve RBs each, a cloud at mid-field).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from .errors import ConfigError
from .mobility import Arena
from .radio import RadioParams, Topology


@dataclass
class ExperimentConfig:
    # scenario
    num_users: int = 12                      # U
    bs_positions: list = field(default_factory=lambda: [[-100.0, 0.0], [0.0, 0.0], [100.0, 0.0]])
    cloud_position: list = field(default_factory=lambda: [0.0, 50.0])
    coverage_radius: float = 60.0
    arena_half_width: float = 150.0
    arena_half_height: float = 50.0

    # radio
    bandwidth: float = 1.0                   # B
    power: float = 1.0                       # P
    noise_psd: float = 1e-5                  # N0
    payload: float = 1.0                     # D_m
    delay_cap: float = 1.0                   # alpha
    num_rbs: int = 12                        # N
    pathloss_mode: str = "paper"

    # mobility / dataset
    step_len: float = 1.0                    # delta-l
    heterogeneous_profiles: bool = True
    profile_concentration: float = 0.15
    num_traj: int = 2000
    traj_len: int = 30

    # predictor
    pred_hidden: int = 128                   # N_h
    window: int = 5                          # K
    pred_lr: float = 1e-3                    # lambda_G
    pred_epochs: int = 50
    pred_batch: int = 32
    pred_gain: float = 4.0
    pred_anneal_epochs: int = 5              # extra epochs at pred_lr / 4
    holdout_traj: int = 100

    # agents
    q_hidden: int = 128                      # theta_h
    q_lr: float = 1e-4                       # lambda_Q
    gamma: float = 0.2
    epochs: int = 75                         # G
    horizon: int = 30                        # T
    replay_capacity: int = 10000
    batch: int = 64                          # sampled transitions per update
    target_period: int = 10
    updates_per_epoch: int = 4
    eps_start: float = 0.9
    eps_end: float = 0.05
    eps_decay_frac: float = 0.6
    refine_rounds: int = 1

    # reward
    epsilon_weight: float = 0.3              # epsilon
    penalty_rho: float = -5.0                # rho

    # evaluation
    eval_episodes: int = 20

    def validate(self) -> "ExperimentConfig":
        c = self
        checks = [
            (c.num_users >= 1, "num_users must be positive"),
            (len(c.bs_positions) >= 1, "need at least one BS"),
            (all(len(p) == 2 for p in c.bs_positions), "bs_positions must be 2-D points"),
            (len(c.cloud_position) == 2, "cloud_position must be a 2-D point"),
            (c.coverage_radius > 0, "coverage_radius must be positive"),
            (c.arena_half_width > 0 and c.arena_half_height > 0, "arena extents must be positive"),
            (min(c.bandwidth, c.power, c.noise_psd, c.payload, c.delay_cap) > 0,
             "radio parameters must be positive"),
            (c.num_rbs >= 1, "num_rbs must be positive"),
            (c.pathloss_mode in ("paper", "squared"), "pathloss_mode must be paper|squared"),
            (c.step_len > 0, "step_len must be positive"),
            (c.profile_concentration > 0, "profile_concentration must be positive"),
            (c.num_traj >= 1 and c.traj_len >= 2, "dataset dimensions too small"),
            (c.traj_len > c.window, "traj_len must exceed window"),
            (c.pred_hidden >= 1 and c.window >= 1, "predictor dimensions must be positive"),
            (c.pred_lr > 0 and c.pred_epochs >= 0 and c.pred_batch >= 1, "bad predictor training params"),
            (c.pred_gain > 0 and c.pred_anneal_epochs >= 0, "bad predictor schedule"),
            (c.holdout_traj >= 1, "holdout_traj must be positive"),
            (c.q_hidden >= 1, "q_hidden must be positive"),
            (c.q_lr > 0, "q_lr must be positive"),
            (0.0 <= c.gamma < 1.0, "gamma must lie in [0, 1)"),
            (c.epochs >= 1 and c.horizon >= 1, "epochs and horizon must be positive"),
            (c.replay_capacity >= 1 and c.batch >= 1, "replay sizes must be positive"),
            (c.target_period >= 1, "target_period must be positive"),
            (c.updates_per_epoch >= 1, "updates_per_epoch must be positive"),
            (0.0 <= c.eps_end <= c.eps_start <= 1.0, "exploration bounds disordered"),
            (0.0 < c.eps_decay_frac <= 1.0, "eps_decay_frac must lie in (0, 1]"),
            (c.refine_rounds >= 1, "refine_rounds must be positive"),
            (0.0 < c.epsilon_weight < 1.0, "epsilon_weight must lie in (0, 1)"),
            (c.penalty_rho < 0, "penalty_rho must be negative"),
            (c.eval_episodes >= 1, "eval_episodes must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    # derived views -----------------------------------------------------
    def topology(self) -> Topology:
        return Topology(np.array(self.bs_positions, dtype=np.float64),
                        np.array(self.cloud_position, dtype=np.float64),
                        float(self.coverage_radius))

    def radio_params(self) -> RadioParams:
        return RadioParams(self.bandwidth, self.power, self.noise_psd,
                           self.payload, self.delay_cap, self.num_rbs,
                           self.pathloss_mode)

    def arena(self) -> Arena:
        return Arena(self.arena_half_width, self.arena_half_height)

    @property
    def num_bs(self) -> int:
        return len(self.bs_positions)

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs).validate()


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**doc).validate()
    except TypeError as exc:
        raise ConfigError(str(exc))


def default_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig(**overrides).validate()
