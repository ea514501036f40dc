"""Canned experiment setups shared by the CLI repro commands and the tests."""

from __future__ import annotations

import numpy as np

from .data import Dataset, gen_combes
from .model import MultiNeuronNet

__all__ = [
    "EXAMPLE1_W0",
    "EXAMPLE2_W0",
    "two_cone_instance",
]

# Initialization for the three-sample configuration: activates x1 only
# (w0.x1 > 0, w0.x2 < 0, w0.x3 < 0), the start that locks GD onto x1.
EXAMPLE1_W0 = (1.0, -0.3)

# Initialization for the two-sample configuration: w0.x1 > 0, w0.x2 < 0,
# the start from which GD drifts across the x2 boundary and oscillates.
EXAMPLE2_W0 = (0.0, 1.0)


def two_cone_instance(
    seed: int = 0,
    n_per: int = 6,
    dim: int = 3,
    jitter: float = 0.05,
    init_norm: float = 0.25,
) -> tuple[Dataset, MultiNeuronNet]:
    """Two antipodal cones of samples and a K = 4 net aligned with them.

    Neurons 1-2 (positive output weights) start inside the positive cone and
    neurons 3-4 (negative output weights) inside the negative cone, so each
    sample activates exactly the neuron pair of its own cone: patterns
    (1,1,0,0) and (0,0,1,1), pairwise disjoint, and every update moves each
    neuron further into its cone, keeping the patterns stable for the whole
    run. Initial neuron norms are kept small (scaling cannot change the
    activation signs) so the running averages shed the initialization early.
    """
    ds = gen_combes(n_per, n_per, dim, seed)
    rng = np.random.Generator(np.random.Philox(int(seed) + 7919))
    axis_pos = ds.points[ds.pos_indices].mean(axis=0)
    axis_pos /= np.linalg.norm(axis_pos)
    axis_neg = ds.points[ds.neg_indices].mean(axis=0)
    axis_neg /= np.linalg.norm(axis_neg)

    def near(axis):
        w = axis + jitter * rng.standard_normal(dim)
        return init_norm * w / np.linalg.norm(w)

    W0 = np.stack([near(axis_pos), near(axis_pos),
                   near(axis_neg), near(axis_neg)], axis=1)
    v = np.array([1.0, 0.5, -1.0, -0.5])
    net = MultiNeuronNet(W0, v)
    pats = (ds.points @ net.W > 0).astype(int)
    want_pos = np.array([1, 1, 0, 0])
    want_neg = np.array([0, 0, 1, 1])
    ok = all(
        np.array_equal(pats[i], want_pos if ds.labels[i] == 1 else want_neg)
        for i in range(ds.n)
    )
    if not ok:
        # Jitter pushed a neuron across a sample's boundary; retry clean.
        return two_cone_instance(seed + 1, n_per, dim, jitter / 2, init_norm)
    return ds, net
