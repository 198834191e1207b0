"""Generate a batch of synthetic identification datasets from random ground truths.

Each dataset directory gets the usual schedule/trace/hypothesis files plus a
truth.json model file holding the generating pair, so fits can be scored later.
"""
import os
import random
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from spinlab.app import create_app
from spinlab.dynamics import random_perturbed_state
from spinlab.file_utils import save_dataset, save_pair
from spinlab.identify import design_schedules, simulate_dataset
from spinlab.models import Hypothesis, ModelStatePair, SpinNetwork

OUT_DIR = "datasets"
SEED = 7
COUNT = 10
SCHEDULES = 6
SIZES = (2, 3)

config = create_app()
rng = np.random.default_rng(SEED)
random.seed(SEED)

for i in range(COUNT):
    n = random.choice(SIZES)
    # chain keeps every ground truth connected
    couplings = {(k, k + 1): float(rng.choice([-1, 1]) * rng.uniform(0.5, 1.5)) for k in range(1, n)}
    gamma = tuple(float(g) for g in np.sort(rng.uniform(0.5, 2.5, size=n)))
    net = SpinNetwork(n, couplings, gamma)
    rho0 = random_perturbed_state(n, 0.05, rng)
    known = i % 2 == 0

    schedules = design_schedules(n, SCHEDULES, seed=SEED + i)
    hypothesis = Hypothesis(n, tuple(net.edges), known_state=known)
    data = simulate_dataset(net, rho0, schedules, hypothesis, config.grid)

    directory = os.path.join(OUT_DIR, f"dataset_{i}")
    save_dataset(directory, data, rho0 if known else None)
    save_pair(os.path.join(directory, "truth.json"), ModelStatePair(net, rho0))
    print(f"Created: {directory} | n={n} | known_state={known}")
