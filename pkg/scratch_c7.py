import sys
import time

import numpy as np

from dntsim import mobility
from dntsim.predictor import (build_windows, evaluate_mse, init_predictor,
                              persistence_mse, train)

conc = float(sys.argv[1]) if len(sys.argv) > 1 else 0.15
epochs_chunks = int(sys.argv[2]) if len(sys.argv) > 2 else 16
seeds = [int(s) for s in (sys.argv[3:] or [0, 1, 2])]

bs = np.array([[-100.0, 0.0], [0.0, 0.0], [100.0, 0.0]])
ar = mobility.Arena()

for seed in seeds:
    rng = np.random.default_rng(seed)
    pop = mobility.make_population(10, bs, 60.0, rng, ar, concentration=conc)
    data = mobility.generate_trajectories(pop.homes, pop.profiles, 30, 2200, rng, ar)
    tr, ho = data[:2000], data[2000:]
    tr_in, tr_tg = build_windows(tr, 5)
    ho_in, ho_tg = build_windows(ho, 5)
    _, p_mse = persistence_mse(ho_in, ho_tg)
    model = init_predictor(10, 128, 5, np.random.default_rng(1000 + seed))
    t0 = time.time()
    rng_t = np.random.default_rng(2000 + seed)
    first_win = None
    for ep in range(epochs_chunks):
        model, curve = train(model, tr_in, tr_tg, lr=1e-3, batch_size=32,
                             epochs=1, rng=rng_t, standardize=(ep == 0))
        _, m_mse = evaluate_mse(model, ho_in, ho_tg)
        if m_mse < p_mse and first_win is None:
            first_win = ep
        print(f"  seed={seed} ep={ep}: loss={curve[0]:.3e} holdout={m_mse:.4f} "
              f"persist={p_mse:.4f} win={m_mse < p_mse}", flush=True)
    print(f"seed={seed} conc={conc}: persist={p_mse:.4f} final={m_mse:.4f} "
          f"first_win={first_win} total={time.time()-t0:.0f}s", flush=True)
