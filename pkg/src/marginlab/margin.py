"""Certified max-margin directions via the dual over the probability simplex.

The margin of a point set {x_i} is gamma = max_{||w||=1} min_i w.x_i. Its
dual is min_{q in simplex} ||X^T q|| (the min-norm point of the convex hull);
when gamma > 0 strong duality holds and the optimal direction is the
normalized dual optimum. The solver is Frank-Wolfe with away steps and exact
line search on ||X^T q||^2, which gives a computable primal-dual gap at every
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .data import Dataset

__all__ = [
    "MarginResult",
    "RegionLabel",
    "ConvergenceError",
    "max_margin",
    "local_margin",
    "enumerate_local_minima",
    "LocalMinimaReport",
    "region_of",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10**6
ENUMERATION_CAP = 15  # 2^15 subsets


@dataclass(frozen=True)
class MarginResult:
    """Max-margin direction with its dual certificate.

    direction:   unit vector (||.|| = 1 to 1e-12)
    gamma:       min_i direction.x_i
    dual_q:      point on the simplex; X^T dual_q is the dual iterate
    duality_gap: ||X^T dual_q|| - gamma (>= 0 by weak duality)
    iterations:  solver iterations used
    certified:   True when the gap certificate applies (dual norm > tol);
                 False means the origin is in the hull up to tol and only
                 the best primal candidate is reported (gamma <= tol)
    """

    direction: np.ndarray
    gamma: float
    dual_q: np.ndarray
    duality_gap: float
    iterations: int
    certified: bool
    trace: tuple = field(default=(), compare=False)


class ConvergenceError(RuntimeError):
    """Solver hit max_iter before reaching the gap tolerance.

    The best result so far is attached as .result.
    """

    def __init__(self, message: str, result: MarginResult):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class RegionLabel:
    """Sign-pattern region of a weight vector against a dataset.

    kind is one of:
      "negative_misclassified"  some negative sample has w.x > 0
      "separable"               y_i w.x_i > 0 for every sample
      "local"                   w.x > 0 exactly on subset (of positives),
                                w.x <= 0 elsewhere
      "finite"                  w.x <= 0 for every sample (subset empty)

    subset holds the activating positive sample indices for kind "local".
    All comparisons are exact (tolerance 0): boundary inputs are knife-edge
    by design, matching the strict activation indicator.
    """

    kind: str
    subset: frozenset | None = None

    def __str__(self) -> str:
        if self.kind == "local":
            inner = "|".join(str(i) for i in sorted(self.subset))
            return f"local:{inner}"
        return {"separable": "separable", "finite": "finite",
                "negative_misclassified": "negmis"}[self.kind]

    @staticmethod
    def parse(text: str) -> "RegionLabel":
        if text == "separable":
            return RegionLabel("separable")
        if text == "finite":
            return RegionLabel("finite")
        if text == "negmis":
            return RegionLabel("negative_misclassified")
        if text.startswith("local:"):
            body = text[len("local:"):]
            idx = frozenset(int(p) for p in body.split("|") if p)
            return RegionLabel("local", idx)
        raise ValueError(f"unrecognized region label {text!r}")


def max_margin(
    points,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    trace: bool = False,
) -> MarginResult:
    """Solve min_{q in simplex} ||X^T q|| to a primal-dual gap <= tol.

    points: (n, d) array, one point per row. Returns a certified MarginResult
    when the dual optimum has norm > tol; otherwise a non-certified result
    whose direction is the best primal candidate seen (the origin lies in the
    hull, so gamma <= tol and strong duality does not apply).
    """
    X = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("points must be a non-empty (n, d) array")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    n, d = X.shape

    q = np.zeros(n)
    start = int(np.argmin(np.einsum("ij,ij->i", X, X)))
    q[start] = 1.0
    g = X[start].copy()  # g = X^T q, maintained incrementally

    best_dir = None
    best_primal = -np.inf
    history = []

    iterations = 0
    for iterations in range(1, max_iter + 1):
        scores = X @ g  # x_i . g
        i_fw = int(np.argmin(scores))
        gnorm = float(np.linalg.norm(g))

        if gnorm > 0:
            primal = scores[i_fw] / gnorm
            if primal > best_primal:
                best_primal = primal
                best_dir = g / gnorm
            gap = gnorm - primal
        else:
            gap = np.inf
        if trace:
            history.append((gnorm, best_primal))

        if gnorm <= tol:
            # Origin in the hull: report the best primal candidate, uncertified.
            if best_dir is None:
                best_dir = np.zeros(d)
                best_dir[0] = 1.0
                best_primal = float(np.min(X @ best_dir))
            return MarginResult(
                direction=best_dir,
                gamma=float(best_primal),
                dual_q=q,
                duality_gap=float(gnorm - best_primal),
                iterations=iterations,
                certified=False,
                trace=tuple(history),
            )
        if gap <= tol:
            direction = g / gnorm
            gamma = float(np.min(X @ direction))
            # weak duality makes the true gap nonnegative; clamp roundoff
            return MarginResult(
                direction=direction,
                gamma=gamma,
                dual_q=q,
                duality_gap=max(0.0, float(gnorm - gamma)),
                iterations=iterations,
                certified=True,
                trace=tuple(history),
            )

        # Objective f(q) = ||X^T q||^2, grad_i = 2 x_i . g.
        support = np.flatnonzero(q > 0)
        i_away = int(support[np.argmax(scores[support])])
        fw_decrease = float(g @ g - scores[i_fw])        # -<grad, d_fw>/2
        away_decrease = float(scores[i_away] - g @ g)    # -<grad, d_away>/2

        if fw_decrease >= away_decrease:
            # Toward vertex i_fw: q <- q + s (e_i - q), g <- g + s (x_i - g).
            delta = X[i_fw] - g
            denom = float(delta @ delta)
            if denom <= 0:
                s = 0.0
            else:
                s = min(1.0, max(0.0, -float(g @ delta) / denom))
            if s == 1.0:
                q = np.zeros(n)
                q[i_fw] = 1.0
            else:
                q *= 1.0 - s
                q[i_fw] += s
            g = g + s * delta
        else:
            # Away from vertex i_away: q <- q + s (q - e_i), capped to keep q >= 0.
            delta = g - X[i_away]
            denom = float(delta @ delta)
            s_max = q[i_away] / (1.0 - q[i_away]) if q[i_away] < 1.0 else 0.0
            if denom <= 0 or s_max <= 0:
                s = 0.0
            else:
                s = min(s_max, max(0.0, -float(g @ delta) / denom))
            q *= 1.0 + s
            q[i_away] -= s
            np.clip(q, 0.0, None, out=q)
            q /= q.sum()
            g = g + s * delta
        if iterations % 256 == 0:
            g = X.T @ q  # refresh against incremental drift

    gnorm = float(np.linalg.norm(g))
    direction = g / gnorm if gnorm > 0 else best_dir
    gamma = float(np.min(X @ direction)) if direction is not None else -np.inf
    partial = MarginResult(
        direction=direction,
        gamma=gamma,
        dual_q=q,
        duality_gap=float(gnorm - gamma),
        iterations=iterations,
        certified=False,
        trace=tuple(history),
    )
    raise ConvergenceError(
        f"no certificate after {max_iter} iterations (gap {gnorm - gamma:.3e})",
        partial,
    )


def local_margin(
    ds: Dataset,
    subset,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[MarginResult, bool]:
    """Max-margin direction of the positive subset J, plus region membership.

    membership is True iff the direction activates exactly the samples in J:
    w.x_i > 0 for i in J and w.x_i <= 0 for every other sample (the remaining
    positives and all negatives). Exact sign comparisons.
    """
    J = sorted(set(int(i) for i in subset))
    if not J:
        raise ValueError("subset must be non-empty")
    pos = set(ds.pos_indices.tolist())
    if not set(J) <= pos:
        raise ValueError(f"subset {J} is not a subset of the positive indices")
    result = max_margin(ds.points[J], tol=tol, max_iter=max_iter)
    prods = ds.points @ result.direction
    inside = all(prods[i] > 0.0 for i in J)
    others = [i for i in range(ds.n) if i not in set(J)]
    outside = all(prods[i] <= 0.0 for i in others)
    return result, bool(inside and outside)


@dataclass(frozen=True)
class LocalMinimaReport:
    """Enumeration of subset margin directions that sit inside their own region.

    locals:       (J, MarginResult) for strict subsets J of the positives with
                  membership true, ordered by subset bitmask
    global_entry: (I+, MarginResult) when the full-positive margin direction
                  lies in its region (all other samples <= 0), else None
    """

    locals: tuple
    global_entry: tuple | None


def enumerate_local_minima(
    ds: Dataset,
    max_subset_size: int | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    cap: int = ENUMERATION_CAP,
) -> LocalMinimaReport:
    """Enumerate all non-empty positive subsets whose margin direction is a member.

    Search is exponential in the number of positives; it refuses (rather than
    silently truncating) when the subset count would exceed 2^cap.
    """
    pos = [int(i) for i in ds.pos_indices]
    npos = len(pos)
    size_cap = npos if max_subset_size is None else min(max_subset_size, npos)
    count = sum(comb(npos, k) for k in range(1, size_cap + 1))
    if count > 2**cap:
        raise ValueError(
            f"enumeration of {count} subsets exceeds the 2^{cap} cap; "
            "restrict max_subset_size or raise cap explicitly"
        )
    found = []
    global_entry = None
    for size in range(1, size_cap + 1):
        for J in combinations(pos, size):
            result, member = local_margin(ds, J, tol=tol, max_iter=max_iter)
            if not member:
                continue
            if size == npos:
                global_entry = (frozenset(J), result)
            else:
                found.append((frozenset(J), result))
    found.sort(key=lambda item: sum(1 << pos.index(i) for i in item[0]))
    return LocalMinimaReport(locals=tuple(found), global_entry=global_entry)


def region_of(w, ds: Dataset) -> RegionLabel:
    """Label the sign-pattern region of w. Deterministic, exact comparisons.

    The zero vector lands in "finite" (all products are exactly zero), the
    convention implied by the strict activation indicator.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (ds.dim,):
        raise ValueError(f"weight shape {w.shape} does not match dim {ds.dim}")
    prods = ds.points @ w
    return _region_from_products(prods, ds.labels)


def _region_from_products(prods: np.ndarray, labels: np.ndarray) -> RegionLabel:
    neg = labels == -1
    pos = labels == 1
    if np.any(prods[neg] > 0.0):
        return RegionLabel("negative_misclassified")
    active = np.flatnonzero(pos & (prods > 0.0))
    if active.size == 0:
        return RegionLabel("finite")
    if active.size == np.count_nonzero(pos) and np.all(prods[neg] < 0.0):
        return RegionLabel("separable")
    return RegionLabel("local", frozenset(int(i) for i in active))
