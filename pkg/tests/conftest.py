import time

import pytest

from marginlab.data import gen_combes
from marginlab.model import ModelKind
from marginlab.optim import PolynomialStep, init_weights, run_sgd_ensemble

PROP2_DATASET_SEEDS = list(range(1, 11))
PROP2_MEMBER_SEEDS = list(range(1, 21))
PROP2_T = 1_000_000
PROP2_ALPHA = 0.6


@pytest.fixture(scope="session")
def prop2_runs():
    """The shared Prop-2 experiment: 10 two-cone datasets x 20 SGD seeds at
    T = 1e6, alpha = 0.6, started misclassified. Used by acceptance criteria
    7-10; built once per session."""
    start = time.perf_counter()
    runs = []
    for dseed in PROP2_DATASET_SEEDS:
        ds = gen_combes(4, 4, 4, dseed)
        w0 = init_weights(ds, "neg-mean", scale=0.5)
        ens = run_sgd_ensemble(
            ds, ModelKind.relu(), w0, PolynomialStep(PROP2_ALPHA),
            PROP2_T, PROP2_MEMBER_SEEDS,
        )
        runs.append((ds, ens))
    elapsed = time.perf_counter() - start
    return {"runs": runs, "elapsed": elapsed}
