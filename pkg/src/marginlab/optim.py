"""Deterministic GD and with-replacement SGD runners with trajectory recording.

Runners advance in chunks between recorded steps; the inner loops live in
compiled kernels (_kernels). Region labels are tracked per step (not just at
recorded steps) so oscillation between sign regions cannot hide between
records. SGD index streams come from Philox keyed by the run seed, so a
trajectory is a deterministic function of its arguments.

Recording stride: stride = 0 (default) records geometrically at
t in {0} + {ceil(1.1^j)} + {T}, matching the log-time scale of every rate
claim; a positive stride records every `stride` steps.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset, _atomic_write_text
from .margin import RegionLabel, region_of
from .model import LossEval, ModelKind, MultiNeuronNet, loss, net_loss

__all__ = [
    "ConstantStep",
    "PolynomialStep",
    "TrajectoryRecord",
    "Trajectory",
    "NetRecord",
    "NetTrajectory",
    "EnsembleSummary",
    "record_steps",
    "default_gd_stepsize",
    "init_weights",
    "run_gd",
    "run_sgd",
    "run_sgd_ensemble",
    "run_gd_net",
    "run_sgd_net",
    "effective_weight",
    "save_trajectory_csv",
    "load_trajectory_csv",
    "TrajectoryTable",
    "save_ensemble_json",
]

GEOM_RATIO = 1.1
MAX_TRACKED_POSITIVES = 62  # per-step region codes use an int64 bitmask


@dataclass(frozen=True)
class ConstantStep:
    """eta_k = eta for every step; the GD schedule."""

    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")

    def at(self, k: int) -> float:
        return self.eta


@dataclass(frozen=True)
class PolynomialStep:
    """eta_k = (k+1)^(-alpha) with 0.5 < alpha < 1; the SGD schedule."""

    alpha: float

    def __post_init__(self):
        if not 0.5 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0.5, 1), got {self.alpha}")

    def at(self, k: int) -> float:
        return (k + 1.0) ** (-self.alpha)


def default_gd_stepsize(ds: Dataset) -> float:
    """0.1 / B^2: safely below the smoothness heuristic 2 / (B^2 * max loss)."""
    return 0.1 / ds.norm_bound**2


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    w: np.ndarray
    loss: float
    avg_w: np.ndarray
    norm: float
    region: RegionLabel
    var_sum: float
    overflow: bool
    flips: int  # cumulative per-step region-label changes up to step t


@dataclass
class Trajectory:
    """Recorded run of GD or SGD on the single-neuron model.

    avg_w at step t is the running mean (1/t) sum_{k<t} w_k (at t = 0 the
    empty mean is recorded as w_0). var_sum accumulates eta_k^2 ||grad_k||^2
    per step for SGD and stays 0 for GD. flips / last_flip_step come from
    per-step region tracking inside the kernels. tainted means the exponent
    clamp fired somewhere, which invalidates rate fitting for the run.
    """

    records: list[TrajectoryRecord]
    final_w: np.ndarray
    algorithm: str  # "gd" | "sgd"
    kind: ModelKind
    schedule: ConstantStep | PolynomialStep
    T: int
    stride: int
    rng_seed: int | None
    early_terminated_at: int | None
    tainted: bool
    flip_count: int
    last_flip_step: int  # -1 when the region never changed

    @property
    def ts(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=np.int64)

    def record_at(self, t: int) -> TrajectoryRecord:
        for r in self.records:
            if r.t == t:
                return r
        raise KeyError(f"no record at step {t}")


@dataclass(frozen=True)
class NetRecord:
    t: int
    W: np.ndarray
    avg_W: np.ndarray
    loss: float
    patterns: np.ndarray  # (n, K) uint8 activation bits
    overflow: bool


@dataclass
class NetTrajectory:
    """Recorded run of GD or SGD on the hidden layer of a multi-neuron net.

    v is fixed throughout. avg_W is the running mean of W, so the running
    average of any pattern's effective weight is avg_W @ (v * bits) by
    linearity. pattern_change_steps lists every step t at which some sample's
    activation pattern differed from step t-1.
    """

    records: list[NetRecord]
    v: np.ndarray
    algorithm: str  # "gd-net" | "sgd-net"
    schedule: ConstantStep | PolynomialStep
    T: int
    stride: int
    rng_seed: int | None
    early_terminated_at: int | None
    tainted: bool
    pattern_change_steps: np.ndarray

    @property
    def ts(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=np.int64)

    def effective_map(self, record_index: int) -> dict:
        """pattern -> (effective weight, its running average) at a record.

        The effective weight of pattern h is sum_{k in h} v_k w_k; because it
        is linear in W, its running average over all steps is the same
        combination of the stored running-average matrix."""
        r = self.records[record_index]
        out = {}
        for pattern in np.unique(r.patterns, axis=0):
            key = tuple(int(b) for b in pattern)
            out[key] = (
                effective_weight(r.W, self.v, pattern),
                effective_weight(r.avg_W, self.v, pattern),
            )
        return out


def record_steps(T: int, stride: int = 0) -> list[int]:
    """Recorded step indices: geometric (stride = 0) or every `stride` steps,
    always including 0 and T."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if stride < 0:
        raise ValueError("stride must be >= 0")
    if stride > 0:
        steps = set(range(0, T + 1, stride))
    else:
        steps = set()
        j = 0
        while True:
            t = math.ceil(GEOM_RATIO**j)
            if t > T:
                break
            steps.add(t)
            j += 1
    steps.update((0, T))
    return sorted(steps)


def init_weights(
    ds: Dataset, mode: str = "neg-mean", scale: float = 1.0, seed: int = 0
) -> np.ndarray:
    """Deterministic initializations used by the canned experiments.

    "zeros":     the all-zero vector (a finite local minimum under ReLU)
    "first-pos": first positive sample, normalized
    "neg-mean":  mean of the negative samples, normalized; on two-cone data
                 this starts misclassified so stabilization is non-trivial
    "random":    Philox(seed) unit vector
    """
    if mode == "zeros":
        return np.zeros(ds.dim)
    if mode == "first-pos":
        x = ds.points[ds.pos_indices[0]]
        return scale * x / np.linalg.norm(x)
    if mode == "neg-mean":
        m = ds.points[ds.neg_indices].mean(axis=0)
        nrm = np.linalg.norm(m)
        if nrm < 1e-12:
            raise ValueError("negative samples average to ~0; pick another mode")
        return scale * m / nrm
    if mode == "random":
        rng = np.random.Generator(np.random.Philox(int(seed)))
        v = rng.standard_normal(ds.dim)
        return scale * v / np.linalg.norm(v)
    raise ValueError(f"unknown init mode {mode!r}")


def _check_runner_inputs(ds: Dataset, w0, T: int) -> np.ndarray:
    if T < 1:
        raise ValueError("T must be >= 1")
    if ds.n_pos > MAX_TRACKED_POSITIVES:
        raise ValueError(
            f"per-step region tracking supports at most {MAX_TRACKED_POSITIVES} "
            f"positive samples, got {ds.n_pos}"
        )
    w0 = np.array(w0, dtype=np.float64)
    if w0.shape != (ds.dim,):
        raise ValueError(f"w0 shape {w0.shape} does not match dim {ds.dim}")
    return w0


def _initial_code(points, w, pos_idx, neg_idx) -> np.int64:
    prods = points @ w
    return _kernels._region_code(prods, pos_idx, neg_idx)


def _boundary_flip_check(prods, pos_idx, neg_idx, istate, t) -> None:
    # The kernels compare a step's region code at the START of the next
    # iteration, so the change caused by a chunk's final update would only be
    # counted by the next chunk. Settle it here so every record carries the
    # flip count up to and including its own step.
    code = _kernels._region_code(prods, pos_idx, neg_idx)
    if code != istate[0]:
        istate[0] = code
        istate[1] += 1
        istate[2] = t


def run_gd(
    ds: Dataset,
    kind: ModelKind,
    w0,
    schedule: ConstantStep,
    T: int,
    stride: int = 0,
) -> Trajectory:
    """T full-gradient steps w <- w - eta * grad(w); constant stepsize only.

    Terminates early, recording the fact, as soon as the gradient is exactly
    zero (the finite-local-minimum case). Overflowing exponent clamps taint
    the trajectory but do not stop it.
    """
    if not isinstance(schedule, ConstantStep):
        raise ValueError("run_gd requires a ConstantStep schedule")
    w = _check_runner_inputs(ds, w0, T)
    points = ds.points
    ylab = ds.labels.astype(np.float64)
    pos_idx = ds.pos_indices.astype(np.int64)
    neg_idx = ds.neg_indices.astype(np.int64)

    avg_w = w.copy()  # empty-mean convention at t = 0
    istate = np.array([_initial_code(points, w, pos_idx, neg_idx), 0, -1],
                      dtype=np.int64)
    steps = record_steps(T, stride)
    records: list[TrajectoryRecord] = []
    tainted = False
    early = None

    def snap(t: int, losseval: LossEval):
        nonlocal tainted
        tainted = tainted or losseval.overflow
        records.append(
            TrajectoryRecord(
                t=t,
                w=w.copy(),
                loss=losseval.value,
                avg_w=avg_w.copy(),
                norm=float(np.linalg.norm(w)),
                region=region_of(w, ds),
                var_sum=0.0,
                overflow=losseval.overflow,
                flips=int(istate[1]),
            )
        )

    snap(0, loss(w, ds, kind))
    for prev_t, next_t in zip(steps, steps[1:]):
        overflow, stopped = _kernels.gd_chunk(
            points, ylab, pos_idx, neg_idx, kind.slope, schedule.eta,
            w, avg_w, prev_t, next_t - prev_t, istate,
        )
        tainted = tainted or overflow
        if stopped >= 0:
            early = int(stopped)
            if records[-1].t != early:
                snap(early, loss(w, ds, kind))
            break
        _boundary_flip_check(points @ w, pos_idx, neg_idx, istate, next_t)
        snap(next_t, loss(w, ds, kind))

    return Trajectory(
        records=records,
        final_w=w.copy(),
        algorithm="gd",
        kind=kind,
        schedule=schedule,
        T=T,
        stride=stride,
        rng_seed=None,
        early_terminated_at=early,
        tainted=tainted,
        flip_count=int(istate[1]),
        last_flip_step=int(istate[2]),
    )


def sample_indices(n: int, T: int, seed: int) -> np.ndarray:
    """The full uniform with-replacement index stream a run with this seed uses."""
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return rng.integers(0, n, size=T, dtype=np.int64)


def run_sgd(
    ds: Dataset,
    kind: ModelKind,
    w0,
    schedule: PolynomialStep,
    T: int,
    seed: int,
    stride: int = 0,
) -> Trajectory:
    """T single-sample steps w <- w - eta_t * sample_grad(w, z_xi) with xi
    drawn uniformly with replacement from a Philox stream keyed by seed."""
    if not isinstance(schedule, PolynomialStep):
        raise ValueError("run_sgd requires a PolynomialStep schedule")
    w = _check_runner_inputs(ds, w0, T)
    points = ds.points
    gram = np.ascontiguousarray(points @ points.T)
    norms2 = np.einsum("ij,ij->i", points, points)
    ylab = ds.labels.astype(np.float64)
    pos_idx = ds.pos_indices.astype(np.int64)
    neg_idx = ds.neg_indices.astype(np.int64)

    avg_w = w.copy()
    istate = np.array([_initial_code(points, w, pos_idx, neg_idx), 0, -1],
                      dtype=np.int64)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    steps = record_steps(T, stride)
    records: list[TrajectoryRecord] = []
    tainted = False
    var_sum = 0.0

    def snap(t: int, losseval: LossEval):
        nonlocal tainted
        tainted = tainted or losseval.overflow
        records.append(
            TrajectoryRecord(
                t=t,
                w=w.copy(),
                loss=losseval.value,
                avg_w=avg_w.copy(),
                norm=float(np.linalg.norm(w)),
                region=region_of(w, ds),
                var_sum=var_sum,
                overflow=losseval.overflow,
                flips=int(istate[1]),
            )
        )

    snap(0, loss(w, ds, kind))
    prods = points @ w
    for prev_t, next_t in zip(steps, steps[1:]):
        m = next_t - prev_t
        idxs = rng.integers(0, ds.n, size=m, dtype=np.int64)
        etas = (np.arange(prev_t, next_t, dtype=np.float64) + 1.0) ** (-schedule.alpha)
        var_sum, overflow = _kernels.sgd_chunk(
            points, gram, norms2, ylab, pos_idx, neg_idx, kind.slope,
            w, avg_w, prods, idxs, etas, prev_t, var_sum, istate,
        )
        tainted = tainted or overflow
        prods = points @ w  # refresh incremental products at the boundary
        _boundary_flip_check(prods, pos_idx, neg_idx, istate, next_t)
        snap(next_t, loss(w, ds, kind))

    return Trajectory(
        records=records,
        final_w=w.copy(),
        algorithm="sgd",
        kind=kind,
        schedule=schedule,
        T=T,
        stride=stride,
        rng_seed=int(seed),
        early_terminated_at=None,
        tainted=tainted,
        flip_count=int(istate[1]),
        last_flip_step=int(istate[2]),
    )


@dataclass
class EnsembleSummary:
    """Across-seed summary of aligned SGD runs (Monte-Carlo expectations).

    mean_avg_w[r] estimates E wbar_t at recorded step ts[r]; mean_loss_avg_w
    estimates E L(wbar_t) (loss evaluated per member on its own average, then
    averaged across seeds). Standard errors use ddof=1 over seeds. Any
    tainted member taints the whole ensemble.
    """

    seeds: tuple
    ts: np.ndarray
    mean_avg_w: np.ndarray      # (records, d)
    se_avg_w: np.ndarray        # (records, d)
    mean_loss_avg_w: np.ndarray
    se_loss_avg_w: np.ndarray
    mean_var_sum: np.ndarray
    se_var_sum: np.ndarray
    tainted: bool
    members: tuple = field(repr=False)

    @property
    def kind(self) -> ModelKind:
        return self.members[0].kind

    @property
    def schedule(self):
        return self.members[0].schedule

    def mean_avg_norm(self) -> np.ndarray:
        return np.linalg.norm(self.mean_avg_w, axis=1)


def _resolve_workers(n_tasks: int) -> int:
    env = os.environ.get("MARGINLAB_THREADS", "").strip()
    if env:
        cap = max(1, int(env))
    else:
        cap = min(4, os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def run_sgd_ensemble(
    ds: Dataset,
    kind: ModelKind,
    w0,
    schedule: PolynomialStep,
    T: int,
    seeds,
    stride: int = 0,
) -> EnsembleSummary:
    """Run one SGD trajectory per seed and summarize across seeds.

    Seeds are processed in canonical (sorted) order; duplicates are allowed
    and simply repeat a member. Members run concurrently up to the
    MARGINLAB_THREADS cap; the summary is deterministic regardless of
    scheduling because members are merged in seed order.
    """
    seeds = sorted(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("an ensemble needs at least 2 seeds")
    workers = _resolve_workers(len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            members = list(
                pool.map(
                    lambda s: run_sgd(ds, kind, w0, schedule, T, s, stride), seeds
                )
            )
    else:
        members = [run_sgd(ds, kind, w0, schedule, T, s, stride) for s in seeds]

    ts = members[0].ts
    for m in members[1:]:
        if not np.array_equal(m.ts, ts):
            raise RuntimeError("ensemble members recorded at different steps")

    n_rec = len(ts)
    m_seeds = len(members)
    avg_ws = np.stack([[r.avg_w for r in m.records] for m in members])  # (m, rec, d)
    var_sums = np.array([[r.var_sum for r in m.records] for m in members])
    loss_avg = np.empty((m_seeds, n_rec))
    for a, member in enumerate(members):
        for r, rec in enumerate(member.records):
            loss_avg[a, r] = loss(rec.avg_w, ds, kind).value

    def mean_se(arr):
        mean = arr.mean(axis=0)
        se = arr.std(axis=0, ddof=1) / math.sqrt(m_seeds)
        return mean, se

    mean_avg_w, se_avg_w = mean_se(avg_ws)
    mean_loss_avgw, se_loss_avgw = mean_se(loss_avg)
    mean_var, se_var = mean_se(var_sums)
    return EnsembleSummary(
        seeds=tuple(seeds),
        ts=ts,
        mean_avg_w=mean_avg_w,
        se_avg_w=se_avg_w,
        mean_loss_avg_w=mean_loss_avgw,
        se_loss_avg_w=se_loss_avgw,
        mean_var_sum=mean_var,
        se_var_sum=se_var,
        tainted=any(m.tainted for m in members),
        members=tuple(members),
    )


def effective_weight(W: np.ndarray, v: np.ndarray, pattern) -> np.ndarray:
    """sum over active neurons of v_k w_k for a K-bit activation pattern."""
    bits = np.asarray(pattern, dtype=np.float64)
    return W @ (v * bits)


def _net_patterns(points: np.ndarray, W: np.ndarray) -> np.ndarray:
    return (points @ W > 0.0).astype(np.uint8)


def run_gd_net(
    ds: Dataset,
    net0: MultiNeuronNet,
    eta: float,
    T: int,
    stride: int = 0,
) -> NetTrajectory:
    """Constant-step GD on the hidden layer; output weights v never move.

    Pattern stability is monitored per step, not assumed: every step at which
    any sample's activation pattern changes is listed in the trajectory.
    """
    if ds.dim != net0.dim:
        raise ValueError(f"dataset dim {ds.dim} does not match net dim {net0.dim}")
    if not eta > 0:
        raise ValueError("eta must be > 0")
    if T < 1:
        raise ValueError("T must be >= 1")
    points = ds.points
    ylab = ds.labels.astype(np.float64)
    W = net0.W.copy()
    avg_W = W.copy()
    prevA = _net_patterns(points, W)
    steps = record_steps(T, stride)
    records: list[NetRecord] = []
    change_steps: list[int] = []
    tainted = False
    early = None

    def snap(t: int):
        nonlocal tainted
        le = net_loss(MultiNeuronNet(W, net0.v), ds)
        tainted = tainted or le.overflow
        records.append(
            NetRecord(
                t=t,
                W=W.copy(),
                avg_W=avg_W.copy(),
                loss=le.value,
                patterns=_net_patterns(points, W),
                overflow=le.overflow,
            )
        )

    snap(0)
    for prev_t, next_t in zip(steps, steps[1:]):
        nsteps = next_t - prev_t
        buf = np.empty(nsteps, dtype=np.int64)
        n_changes, overflow, stopped = _kernels.gd_net_chunk(
            points, ylab, net0.v, eta, W, avg_W, prevA, prev_t, nsteps, buf
        )
        change_steps.extend(buf[:n_changes].tolist())
        tainted = tainted or overflow
        if stopped >= 0:
            early = int(stopped)
            if records[-1].t != early:
                snap(early)
            break
        current = _net_patterns(points, W)
        if not np.array_equal(current, prevA):  # chunk's final update flipped a bit
            change_steps.append(next_t)
            prevA[:] = current
        snap(next_t)

    return NetTrajectory(
        records=records,
        v=net0.v,
        algorithm="gd-net",
        schedule=ConstantStep(eta),
        T=T,
        stride=stride,
        rng_seed=None,
        early_terminated_at=early,
        tainted=tainted,
        pattern_change_steps=np.array(change_steps, dtype=np.int64),
    )


def run_sgd_net(
    ds: Dataset,
    net0: MultiNeuronNet,
    schedule: PolynomialStep,
    T: int,
    seed: int,
    stride: int = 0,
) -> NetTrajectory:
    """Polynomial-stepsize SGD on the hidden layer with per-step pattern checks."""
    if ds.dim != net0.dim:
        raise ValueError(f"dataset dim {ds.dim} does not match net dim {net0.dim}")
    if not isinstance(schedule, PolynomialStep):
        raise ValueError("run_sgd_net requires a PolynomialStep schedule")
    if T < 1:
        raise ValueError("T must be >= 1")
    points = ds.points
    ylab = ds.labels.astype(np.float64)
    W = net0.W.copy()
    avg_W = W.copy()
    prevA = _net_patterns(points, W)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    steps = record_steps(T, stride)
    records: list[NetRecord] = []
    change_steps: list[int] = []
    tainted = False

    def snap(t: int):
        nonlocal tainted
        le = net_loss(MultiNeuronNet(W, net0.v), ds)
        tainted = tainted or le.overflow
        records.append(
            NetRecord(
                t=t,
                W=W.copy(),
                avg_W=avg_W.copy(),
                loss=le.value,
                patterns=_net_patterns(points, W),
                overflow=le.overflow,
            )
        )

    snap(0)
    for prev_t, next_t in zip(steps, steps[1:]):
        m = next_t - prev_t
        idxs = rng.integers(0, ds.n, size=m, dtype=np.int64)
        etas = (np.arange(prev_t, next_t, dtype=np.float64) + 1.0) ** (-schedule.alpha)
        buf = np.empty(m, dtype=np.int64)
        n_changes, overflow = _kernels.sgd_net_chunk(
            points, ylab, net0.v, W, avg_W, prevA, idxs, etas, prev_t, buf
        )
        change_steps.extend(buf[:n_changes].tolist())
        tainted = tainted or overflow
        current = _net_patterns(points, W)
        if not np.array_equal(current, prevA):  # chunk's final update flipped a bit
            change_steps.append(next_t)
            prevA[:] = current
        snap(next_t)

    return NetTrajectory(
        records=records,
        v=net0.v,
        algorithm="sgd-net",
        schedule=schedule,
        T=T,
        stride=stride,
        rng_seed=int(seed),
        early_terminated_at=None,
        tainted=tainted,
        pattern_change_steps=np.array(change_steps, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Serialization: trajectory CSV (+ optional weight sidecar), ensemble JSON.
# Floats are written with repr(), the shortest round-trip form.

CSV_COLUMNS = "t,loss,norm_w,var_sum,region,dir_err_global,dir_err_target,overflow"


def _dir_err(w: np.ndarray, target: np.ndarray | None) -> str:
    if target is None:
        return ""
    nrm = np.linalg.norm(w)
    if nrm < 1e-12:
        return ""
    return repr(float(np.linalg.norm(w / nrm - target)))


def save_trajectory_csv(
    traj: Trajectory,
    path: str,
    dir_global: np.ndarray | None = None,
    dir_target: np.ndarray | None = None,
    weights_sidecar: bool = False,
) -> list[str]:
    """Write the trajectory table; returns the list of files written.

    dir_global / dir_target are unit vectors against which per-record
    direction errors are emitted (empty fields when absent). With
    weights_sidecar, raw w and avg_w snapshots go to `<path>.weights.csv`.
    """
    lines = [CSV_COLUMNS]
    for r in traj.records:
        lines.append(
            ",".join(
                [
                    str(r.t),
                    repr(float(r.loss)),
                    repr(float(r.norm)),
                    repr(float(r.var_sum)),
                    str(r.region),
                    _dir_err(r.w, dir_global),
                    _dir_err(r.w, dir_target),
                    "1" if r.overflow else "0",
                ]
            )
        )
    _atomic_write_text(path, "\n".join(lines) + "\n")
    written = [path]
    if weights_sidecar:
        d = traj.records[0].w.shape[0]
        head = ",".join(
            ["t"] + [f"w{j}" for j in range(d)] + [f"avg{j}" for j in range(d)]
        )
        rows = [head]
        for r in traj.records:
            rows.append(
                ",".join(
                    [str(r.t)]
                    + [repr(float(x)) for x in r.w]
                    + [repr(float(x)) for x in r.avg_w]
                )
            )
        side = path + ".weights.csv"
        _atomic_write_text(side, "\n".join(rows) + "\n")
        written.append(side)
    return written


@dataclass
class TrajectoryTable:
    """Column view of a trajectory CSV, for offline analysis."""

    ts: np.ndarray
    loss: np.ndarray
    norm_w: np.ndarray
    var_sum: np.ndarray
    regions: list[RegionLabel]
    dir_err_global: np.ndarray  # NaN where absent
    dir_err_target: np.ndarray
    overflow: np.ndarray


def load_trajectory_csv(path: str) -> TrajectoryTable:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != CSV_COLUMNS:
        raise ValueError(f"{path}: not a trajectory CSV (bad header)")
    ts, lo, nw, vs, rg, dg, dt, ov = [], [], [], [], [], [], [], []
    for ln in lines[1:]:
        f = ln.split(",")
        if len(f) != 8:
            raise ValueError(f"{path}: malformed row {ln!r}")
        ts.append(int(f[0]))
        lo.append(float(f[1]))
        nw.append(float(f[2]))
        vs.append(float(f[3]))
        rg.append(RegionLabel.parse(f[4]))
        dg.append(float(f[5]) if f[5] else math.nan)
        dt.append(float(f[6]) if f[6] else math.nan)
        ov.append(f[7] == "1")
    return TrajectoryTable(
        ts=np.array(ts, dtype=np.int64),
        loss=np.array(lo),
        norm_w=np.array(nw),
        var_sum=np.array(vs),
        regions=rg,
        dir_err_global=np.array(dg),
        dir_err_target=np.array(dt),
        overflow=np.array(ov, dtype=bool),
    )


def save_ensemble_json(ens: EnsembleSummary, path: str) -> None:
    doc = {
        "schema_version": 1,
        "seeds": list(ens.seeds),
        "t": ens.ts.tolist(),
        "mean_loss_avg_w": ens.mean_loss_avg_w.tolist(),
        "se_loss_avg_w": ens.se_loss_avg_w.tolist(),
        "mean_var_sum": ens.mean_var_sum.tolist(),
        "se_var_sum": ens.se_var_sum.tolist(),
        "mean_avg_w": ens.mean_avg_w.tolist(),
        "se_avg_w": ens.se_avg_w.tolist(),
        "mean_norm_avg_w": ens.mean_avg_norm().tolist(),
        "tainted": ens.tainted,
    }
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
