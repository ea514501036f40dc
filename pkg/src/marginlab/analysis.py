"""Direction/trajectory classification, asymptotic-rate checks, and
multi-neuron partition verification.

Asymptotic O(.) claims are verified as boundedness of observed/model ratios
over the final window of a run: the model shape is fitted with a single
multiplicative constant (Chebyshev in log space, i.e. the geometric midpoint
of the ratio range) and the claim holds when the resulting sup ratio stays
under an explicit cap. That is the only falsifiable desk-scale reading of a
bound with unstated constants.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .margin import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    MarginResult,
    RegionLabel,
    _region_from_products,
    local_margin,
    max_margin,
)
from .model import EXP_CLAMP
from .optim import (
    EnsembleSummary,
    NetTrajectory,
    PolynomialStep,
    Trajectory,
    effective_weight,
    sample_indices,
)

__all__ = [
    "AnalysisError",
    "LandscapeCase",
    "RegimeReport",
    "RateFit",
    "VarianceBoundReport",
    "PartitionEntry",
    "PartitionReport",
    "classify_direction",
    "classify_trajectory",
    "direction_error_series",
    "ensemble_direction_error_series",
    "fit_rate",
    "verify_variance_bound",
    "norm_growth",
    "norm_growth_passes",
    "verify_partition_claims",
]

log = logging.getLogger(__name__)

DEFAULT_FLIP_THRESHOLD = 4
DEFAULT_RATIO_CAP = 1.5
DEFAULT_SCALE_GRID = (1.0, 10.0, 100.0, 1000.0)


class AnalysisError(ValueError):
    """Analysis refused: precondition on the input trajectory not met."""


# ---------------------------------------------------------------------------
# Landscape cases


@dataclass(frozen=True)
class LandscapeCase:
    """Asymptotic landscape case of a direction with its exact limit loss.

    case is one of
      "global"            all samples strictly correctly classified;
                          limit n-/n
      "asymptotic_local"  a proper activation subset of the positives, no
                          negative strictly positive; limit n-/n + (n+-|J|)/n
      "finite_local"      no activation at all; loss is exactly 1 at every
                          scale
      "divergent"         some negative sample has w.x > 0, so the loss grows
                          without bound along the ray (no landscape case
                          applies); limit_loss is +inf

    scale_losses holds (alpha, loss(alpha*w)) cross-checks along the grid,
    reported rather than asserted because the approach speed depends on the
    margins.
    """

    case: str
    subset: frozenset | None
    limit_loss: float
    scale_losses: tuple


def _relu_loss_from_products(prods: np.ndarray, labels: np.ndarray) -> float:
    margins = labels * np.maximum(prods, 0.0)
    total = 0.0
    for m in margins:
        total += math.exp(min(-m, EXP_CLAMP))
    return total / labels.shape[0]


def classify_direction(w, ds: Dataset, scale_grid=DEFAULT_SCALE_GRID) -> LandscapeCase:
    """Classify a unit direction by its exact sign pattern under ReLU.

    The limit loss is computed analytically from the case formula; losses at
    the grid scales are attached as a cross-check. An empty grid skips the
    cross-check.
    """
    w = np.asarray(w, dtype=np.float64)
    prods = ds.points @ w
    labels = ds.labels
    region = _region_from_products(prods, labels)
    n = ds.n
    n_neg = ds.n_neg
    n_pos = ds.n_pos
    if region.kind == "separable":
        case, subset, limit = "global", None, n_neg / n
    elif region.kind == "local":
        j = len(region.subset)
        case, subset, limit = "asymptotic_local", region.subset, (n_neg + n_pos - j) / n
    elif region.kind == "finite":
        case, subset, limit = "finite_local", None, 1.0
    else:
        case, subset, limit = "divergent", None, math.inf
    scales = tuple(
        (float(a), _relu_loss_from_products(a * prods, labels)) for a in scale_grid
    )
    return LandscapeCase(case=case, subset=subset, limit_loss=limit, scale_losses=scales)


# ---------------------------------------------------------------------------
# Trajectory regimes


@dataclass(frozen=True)
class RegimeReport:
    """Which convergence regime a GD/SGD trajectory fell into.

    regime is one of "global_max_margin", "local_max_margin", "oscillation",
    "finite_termination". region_flip_count counts per-step region-label
    changes in the final half of the run (the oscillation statistic).
    stabilization_step is the first recorded step from which the region label
    never changes again. A trajectory that settles permanently into the
    negative-misclassified sign region is reported as "oscillation" (the
    non-convergent umbrella), with a note.
    """

    regime: str
    subset: frozenset | None
    target_direction: np.ndarray | None
    stabilization_step: int | None
    final_direction_error: float
    region_flip_count: int
    membership: bool | None
    margin: MarginResult | None
    note: str = ""


def _flips_in_final_half(traj: Trajectory) -> int:
    half = traj.records[-1].t / 2.0
    base = 0
    for r in traj.records:
        if r.t <= half:
            base = r.flips
        else:
            break
    return traj.records[-1].flips - base


def _stabilization_step(traj: Trajectory) -> int:
    if traj.last_flip_step < 0:
        return 0
    for r in traj.records:
        if r.t >= traj.last_flip_step:
            return r.t
    return traj.records[-1].t


def classify_trajectory(
    traj: Trajectory,
    ds: Dataset,
    flip_threshold: int = DEFAULT_FLIP_THRESHOLD,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegimeReport:
    """Match a trajectory to its regime and measure the direction error."""
    if traj.tainted:
        raise AnalysisError("trajectory is tainted by exponent clamping")
    if len(traj.records) < 10:
        raise AnalysisError("need at least 10 recorded steps to classify")

    flips_final = _flips_in_final_half(traj)

    def finish(regime, subset=None, target=None, membership=None, margin=None,
               stab=None, note=""):
        if target is not None:
            wlast = traj.records[-1].w
            nrm = np.linalg.norm(wlast)
            err = float(np.linalg.norm(wlast / nrm - target)) if nrm > 1e-12 else math.nan
        else:
            err = math.nan
        return RegimeReport(
            regime=regime,
            subset=subset,
            target_direction=target,
            stabilization_step=stab,
            final_direction_error=err,
            region_flip_count=flips_final,
            membership=membership,
            margin=margin,
            note=note,
        )

    if traj.early_terminated_at is not None:
        return finish("finite_termination", stab=traj.early_terminated_at,
                      note="gradient exactly zero")
    if flips_final >= flip_threshold:
        return finish("oscillation")

    stab = _stabilization_step(traj)
    label = traj.records[-1].region
    if label.kind == "separable":
        result = max_margin(ds.points[ds.pos_indices], tol=tol, max_iter=max_iter)
        return finish("global_max_margin", target=result.direction,
                      margin=result, stab=stab)
    if label.kind == "local":
        result, member = local_margin(ds, label.subset, tol=tol, max_iter=max_iter)
        return finish("local_max_margin", subset=label.subset,
                      target=result.direction, membership=member,
                      margin=result, stab=stab)
    if label.kind == "finite":
        return finish("finite_termination", stab=stab,
                      note="settled in the all-inactive sign region")
    return finish("oscillation",
                  note="settled in the negative-misclassified region; "
                       "no convergent regime applies")


# ---------------------------------------------------------------------------
# Direction error and rate fitting


def direction_error_series(
    traj: Trajectory, target, use_average: bool = False
) -> list[tuple[int, float]]:
    """(t, ||u_t/||u_t|| - target||) per record; u = avg_w when use_average.

    Records whose iterate norm is below 1e-12 are skipped (logged)."""
    target = np.asarray(target, dtype=np.float64)
    out = []
    for r in traj.records:
        u = r.avg_w if use_average else r.w
        nrm = np.linalg.norm(u)
        if nrm < 1e-12:
            log.debug("direction_error_series: skipping t=%d (norm %.3g)", r.t, nrm)
            continue
        out.append((r.t, float(np.linalg.norm(u / nrm - target))))
    return out


def ensemble_direction_error_series(
    ens: EnsembleSummary, target
) -> list[tuple[int, float]]:
    """Direction error of the normalized across-seed mean of wbar_t
    (the normalized mean, not the mean of normalized members)."""
    target = np.asarray(target, dtype=np.float64)
    out = []
    for t, u in zip(ens.ts, ens.mean_avg_w):
        nrm = np.linalg.norm(u)
        if nrm < 1e-12:
            log.debug("ensemble direction error: skipping t=%d", t)
            continue
        out.append((int(t), float(np.linalg.norm(u / nrm - target))))
    return out


@dataclass(frozen=True)
class RateFit:
    """Chebyshev (log-space) fit of a series to c * shape(t) on a window.

    sup_ratio = max over the window of observed / (c * shape); with the
    geometric-midpoint c this equals sqrt(max ratio / min ratio), so it is 1
    exactly when the series is a pure multiple of the shape. An O(shape)
    claim is accepted when sup_ratio <= ratio_cap.
    """

    model: str
    coefficient: float
    sup_ratio: float
    window: tuple

    def passes(self, ratio_cap: float = DEFAULT_RATIO_CAP) -> bool:
        return self.sup_ratio <= ratio_cap


def _rate_shape(model: str, alpha: float | None):
    if model == "inv_log":
        return lambda t: 1.0 / np.log(t), 2
    if model == "loglog_over_log":
        return lambda t: np.log(np.log(t)) / np.log(t), 3
    if model == "poly_log":
        if alpha is None:
            raise ValueError("poly_log needs the run's stepsize exponent alpha")
        return lambda t: np.log(t) ** 2 / t ** (1.0 - alpha), 2
    raise ValueError(f"unknown rate model {model!r}")


def fit_rate(
    series,
    model: str,
    alpha: float | None = None,
    window_fraction: float = 0.5,
) -> RateFit:
    """Fit c minimizing the max log deviation of observed/(c*shape) from 0
    over the final window_fraction of the series entries."""
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window_fraction must be in (0, 1]")
    shape, t_min = _rate_shape(model, alpha)
    pts = [(int(t), float(v)) for t, v in series if t >= t_min]
    if len(pts) < 2:
        raise AnalysisError("need at least 2 usable series entries")
    start = len(pts) - max(2, math.ceil(window_fraction * len(pts)))
    window = pts[start:]
    ts = np.array([t for t, _ in window], dtype=np.float64)
    vals = np.array([v for _, v in window])
    if np.any(vals <= 0.0):
        raise AnalysisError("series must be strictly positive on the fit window")
    ratios = vals / shape(ts)
    c = math.sqrt(float(ratios.max()) * float(ratios.min()))
    sup_ratio = float(ratios.max()) / c
    return RateFit(
        model=model,
        coefficient=c,
        sup_ratio=sup_ratio,
        window=(int(ts[0]), int(ts[-1])),
    )


# ---------------------------------------------------------------------------
# Variance bound and norm growth


@dataclass(frozen=True)
class VarianceBoundReport:
    sup_ratio: float     # max of var_sum(t)/ln t on the final window
    median_ratio: float
    passes: bool         # sup_ratio <= cap * median_ratio
    gamma: float         # margin of the stabilized region's point set
    window: tuple
    stabilization_step: int


def _stab_or_refuse(traj: Trajectory, flip_threshold: int) -> int:
    if traj.tainted:
        raise AnalysisError("trajectory is tainted by exponent clamping")
    if _flips_in_final_half(traj) >= flip_threshold:
        raise AnalysisError("region did not stabilize (oscillation)")
    return _stabilization_step(traj)


def _stabilized_gamma(traj: Trajectory, ds: Dataset) -> float:
    label = traj.records[-1].region
    if label.kind == "separable":
        return max_margin(ds.points[ds.pos_indices]).gamma
    if label.kind == "local":
        return max_margin(ds.points[sorted(label.subset)]).gamma
    raise AnalysisError(f"no margin is defined for stabilized region {label}")


def verify_variance_bound(
    traj_or_ensemble,
    ds: Dataset,
    cap: float = 2.0,
    window_fraction: float = 0.5,
    flip_threshold: int = DEFAULT_FLIP_THRESHOLD,
) -> VarianceBoundReport:
    """Shape check of the accumulated stochastic-gradient variance.

    Requires a polynomial-stepsize SGD run whose region stabilized; the ratio
    var_sum(t)/ln t is computed over post-stabilization records and passes
    when its final-window max is at most cap times the same window's median.
    Accepts a single Trajectory or an EnsembleSummary (which uses the
    across-seed mean var_sum, the Monte-Carlo estimate of the expectation).
    """
    if isinstance(traj_or_ensemble, EnsembleSummary):
        ens = traj_or_ensemble
        if not isinstance(ens.schedule, PolynomialStep):
            raise AnalysisError("variance bound requires the polynomial schedule")
        stab = max(_stab_or_refuse(m, flip_threshold) for m in ens.members)
        gamma = _stabilized_gamma(ens.members[0], ds)
        ts = ens.ts
        var = ens.mean_var_sum
    else:
        traj = traj_or_ensemble
        if not isinstance(traj.schedule, PolynomialStep):
            raise AnalysisError("variance bound requires the polynomial schedule")
        if traj.algorithm != "sgd":
            raise AnalysisError("variance bound applies to SGD trajectories")
        stab = _stab_or_refuse(traj, flip_threshold)
        gamma = _stabilized_gamma(traj, ds)
        ts = traj.ts
        var = np.array([r.var_sum for r in traj.records])

    keep = (ts >= max(stab, 2)) & (ts >= 2)
    ts_k = ts[keep].astype(np.float64)
    ratios = var[keep] / np.log(ts_k)
    if ratios.size < 4:
        raise AnalysisError("too few post-stabilization records for the shape check")
    start = ratios.size - max(2, math.ceil(window_fraction * ratios.size))
    window = ratios[start:]
    sup = float(window.max())
    med = float(np.median(window))
    return VarianceBoundReport(
        sup_ratio=sup,
        median_ratio=med,
        passes=sup <= cap * med,
        gamma=float(gamma),
        window=(int(ts_k[start]), int(ts_k[-1])),
        stabilization_step=stab,
    )


def norm_growth(traj_or_ensemble) -> list[tuple[int, float]]:
    """(t, ||u_t|| / ln t) for the averaged iterate (ensemble mean when given).

    The associated pass predicate is norm_growth_passes: the final-window
    minimum must stay above a positive floor."""
    if isinstance(traj_or_ensemble, EnsembleSummary):
        ts = traj_or_ensemble.ts
        norms = traj_or_ensemble.mean_avg_norm()
    else:
        ts = traj_or_ensemble.ts
        norms = np.array([np.linalg.norm(r.avg_w) for r in traj_or_ensemble.records])
    out = [
        (int(t), float(nrm / math.log(t)))
        for t, nrm in zip(ts, norms)
        if t >= 2
    ]
    if len(out) < 3:
        raise AnalysisError("need at least 3 records with t >= 2")
    return out


def norm_growth_passes(
    series, window_fraction: float = 0.5, floor_factor: float = 0.5
) -> tuple[float, float, bool]:
    """(min ratio, floor, passes).

    The minimum of ||u_t||/ln t over the final window_fraction of the series
    must stay at or above floor_factor times the median of the whole series.
    A logarithmically growing norm keeps the ratio level and passes; a ratio
    that keeps decaying through the run drops below the floor."""
    vals = np.array([v for _, v in series])
    start = vals.size - max(2, math.ceil(window_fraction * vals.size))
    floor = floor_factor * float(np.median(vals))
    lo = float(vals[start:].min())
    return lo, floor, lo >= floor and lo > 0.0


# ---------------------------------------------------------------------------
# Multi-neuron partition verification


@dataclass(frozen=True)
class PartitionEntry:
    """One activation-pattern partition at the reference step.

    label is +1 / -1 when uniform, 0 when mixed. margin is computed on the
    label-signed samples {y_i x_i} so its direction matches the orientation
    the effective classifier converges to (for a negative partition the
    classifier points away from the samples).
    """

    pattern: tuple
    sample_indices: tuple
    label: int
    v_sign_ok: bool
    margin: MarginResult | None
    direction_errors: tuple


@dataclass(frozen=True)
class PartitionReport:
    partitions: tuple
    disjointness_ok: bool
    pattern_stable_after: int | None
    stable_ok: bool
    first_violation_step: int | None
    labels_uniform_ok: bool
    v_signs_ok: bool
    recursion_max_rel_err: float
    recursion_ok: bool
    loss_at_reference: float
    loss_below_1_over_n: bool
    reference_step: int


def _replay_recursion(
    ntraj: NetTrajectory,
    ds: Dataset,
    pattern: np.ndarray,
    members: np.ndarray,
    sv2: float,
    start_idx: int,
    idxs: np.ndarray | None,
) -> float:
    """Integrate the per-partition effective-weight recursion from the
    reference record to the end of the run and return the max relative
    deviation from the recorded effective weights at each record.

    GD step:  w~ += (eta * sum v_k^2 / n) * sum_{i in B_h} e_i y_i x_i
    SGD step: w~ += eta_t * (sum v_k^2) * e y x_xi   when xi lands in B_h
    with e = exp(-y w~.x) clamped like the runners.
    """
    pts = ds.points[members]
    ys = ds.labels[members].astype(np.float64)
    in_part = np.zeros(ds.n, dtype=bool)
    in_part[members] = True
    recs = ntraj.records
    eta_const = ntraj.schedule.eta if idxs is None else None
    alpha = None if idxs is None else ntraj.schedule.alpha
    worst = 0.0
    w = effective_weight(recs[start_idx].W, ntraj.v, pattern)
    for r0, r1 in zip(recs[start_idx:], recs[start_idx + 1:]):
        for t in range(r0.t, r1.t):
            if idxs is None:
                prods = pts @ w
                args = np.minimum(-ys * prods, EXP_CLAMP)
                coefs = ys * np.exp(args)
                w = w + (eta_const * sv2 / ds.n) * (coefs @ pts)
            else:
                xi = idxs[t]
                if in_part[xi]:
                    x = ds.points[xi]
                    y = float(ds.labels[xi])
                    arg = min(-y * float(w @ x), EXP_CLAMP)
                    eta = (t + 1.0) ** (-alpha)
                    w = w + (eta * sv2 * y * math.exp(arg)) * x
        actual = effective_weight(r1.W, ntraj.v, pattern)
        denom = max(float(np.linalg.norm(actual)), 1e-300)
        worst = max(worst, float(np.linalg.norm(w - actual)) / denom)
    return worst


def verify_partition_claims(
    ntraj: NetTrajectory,
    ds: Dataset,
    reference_step: int,
    recursion_rel_tol: float = 1e-8,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PartitionReport:
    """Check the pattern-partition claims of a multi-neuron trajectory.

    Builds the partitions at the first record at or after reference_step and
    checks: pairwise disjoint patterns, uniform labels, uniform sign of the
    active output weights, the per-partition effective-weight recursion
    replayed step by step between records, and the direction-error series of
    the effective weight (GD) or its running average (SGD) against the
    partition's own max-margin direction. Problems are reported through the
    ok-flags rather than raised.
    """
    ref_idx = None
    for i, r in enumerate(ntraj.records):
        if r.t >= reference_step:
            ref_idx = i
            break
    if ref_idx is None or ref_idx >= len(ntraj.records) - 1:
        raise AnalysisError("reference_step leaves no records to analyze")
    ref = ntraj.records[ref_idx]

    late = ntraj.pattern_change_steps[ntraj.pattern_change_steps > ref.t]
    stable_ok = late.size == 0
    first_violation = int(late[0]) if late.size else None
    stable_after = (
        int(ntraj.pattern_change_steps[-1]) if ntraj.pattern_change_steps.size else 0
    )

    patterns = ref.patterns
    uniq, inverse = np.unique(patterns, axis=0, return_inverse=True)
    groups = [np.flatnonzero(inverse == g) for g in range(uniq.shape[0])]

    nonzero = [h for h in range(uniq.shape[0]) if uniq[h].any()]
    disjoint = True
    for a in range(len(nonzero)):
        for b in range(a + 1, len(nonzero)):
            if np.any(uniq[nonzero[a]] & uniq[nonzero[b]]):
                disjoint = False

    use_avg = ntraj.algorithm == "sgd-net"
    idxs = (
        sample_indices(ds.n, ntraj.records[-1].t, ntraj.rng_seed)
        if ntraj.algorithm == "sgd-net"
        else None
    )

    entries = []
    labels_ok = True
    vsigns_ok = True
    worst_rel = 0.0
    for h, members in zip(uniq, groups):
        labs = set(int(v) for v in ds.labels[members])
        label = labs.pop() if len(labs) == 1 else 0
        if label == 0:
            labels_ok = False
        active = np.flatnonzero(h)
        if active.size:
            signs = np.sign(ntraj.v[active])
            v_ok = bool(np.all(signs == signs[0]))
        else:
            v_ok = True
        vsigns_ok = vsigns_ok and v_ok

        margin_res = None
        errors = []
        if active.size and label != 0:
            signed = ds.points[members] * ds.labels[members, None].astype(np.float64)
            margin_res = max_margin(signed, tol=tol, max_iter=max_iter)
            target = margin_res.direction
            for r in ntraj.records[ref_idx:]:
                u = effective_weight(r.avg_W if use_avg else r.W, ntraj.v, h)
                nrm = np.linalg.norm(u)
                if nrm < 1e-12:
                    continue
                errors.append((r.t, float(np.linalg.norm(u / nrm - target))))

        if active.size and stable_ok and disjoint:
            sv2 = float(np.sum(ntraj.v[active] ** 2))
            rel = _replay_recursion(ntraj, ds, h, members, sv2, ref_idx, idxs)
            worst_rel = max(worst_rel, rel)

        entries.append(
            PartitionEntry(
                pattern=tuple(int(b) for b in h),
                sample_indices=tuple(int(i) for i in members),
                label=label,
                v_sign_ok=v_ok,
                margin=margin_res,
                direction_errors=tuple(errors),
            )
        )

    return PartitionReport(
        partitions=tuple(entries),
        disjointness_ok=disjoint,
        pattern_stable_after=stable_after,
        stable_ok=stable_ok,
        first_violation_step=first_violation,
        labels_uniform_ok=labels_ok,
        v_signs_ok=vsigns_ok,
        recursion_max_rel_err=worst_rel,
        recursion_ok=(stable_ok and disjoint and worst_rel <= recursion_rel_tol),
        loss_at_reference=ref.loss,
        loss_below_1_over_n=ref.loss < 1.0 / ds.n,
        reference_step=ref.t,
    )
