"""dntsim: seeded simulator and learning stack for twin-synchronized wireless
networks.

Subpackages by concern:

- ``nncore``     dense/GRU kernel with analytic gradients and SGD
- ``mobility``   random-walk user movement and trajectory datasets
- ``radio``      channel gains, SINR rates, interference, uplink delay
- ``twin``       physical/twin state bookkeeping, sync error, team reward
- ``predictor``  cloud-side GRU training and next-state inference
- ``allocator``  per-cell max-weight user/RB matching and the cross-cell loop
- ``marl``       recurrent Q agents, replay, VDN and IQL training steps
- ``episode``    the environment loop and scripted policies
- ``harness``    training runs, evaluation, sweeps, constraint audits
- ``config``     experiment configuration and presets
- ``cli``        command-line entry points
"""

__version__ = "0.1.0"
