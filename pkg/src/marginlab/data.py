"""Linearly separable datasets: generators, condition checks, transforms, CSV I/O.

A dataset is a set of labeled points (x_i, y_i) with y_i in {+1, -1}, both
classes non-empty, intended to be separable by a hyperplane through the
origin. Generators are pure functions of their seed.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "ConditionReport",
    "DatasetError",
    "DatasetFormatError",
    "GenerationError",
    "gen_separable",
    "gen_combes",
    "gen_example1",
    "gen_example2",
    "check_combes",
    "augment",
    "leaky_transform",
    "save",
    "load",
]

# Strict sign tests for the two-cone condition: |x_i.x_j| must exceed this
# with the correct sign; ties count as violations.
STRICT_TOL = 1e-12


class DatasetError(ValueError):
    """Invalid dataset contents or parameters."""


class DatasetFormatError(DatasetError):
    """Malformed dataset file; carries line/field diagnostics."""


class GenerationError(RuntimeError):
    """A generator exhausted its retry budget without meeting its postcondition."""


@dataclass(frozen=True)
class Dataset:
    """Labeled points in R^d with cached class index sets and norm bound.

    points:     (n, d) float64, one sample per row
    labels:     (n,) int64 with values in {+1, -1}
    dim:        d
    norm_bound: exact max Euclidean norm over the points
    """

    points: np.ndarray
    labels: np.ndarray
    dim: int = field(init=False)
    norm_bound: float = field(init=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        lab = np.asarray(self.labels, dtype=np.int64)
        if pts.ndim != 2:
            raise DatasetError(f"points must be a 2-D array, got shape {pts.shape}")
        if lab.shape != (pts.shape[0],):
            raise DatasetError(
                f"labels length {lab.shape} does not match {pts.shape[0]} points"
            )
        if not np.all(np.isfinite(pts)):
            raise DatasetError("points contain non-finite values")
        if not np.all(np.isin(lab, (-1, 1))):
            bad = lab[~np.isin(lab, (-1, 1))][0]
            raise DatasetError(f"labels must be +1 or -1, got {bad}")
        if not np.any(lab == 1) or not np.any(lab == -1):
            raise DatasetError("both label classes must be non-empty")
        if pts.shape[1] < 1:
            raise DatasetError("points must have dimension >= 1")
        pts.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "dim", int(pts.shape[1]))
        object.__setattr__(
            self, "norm_bound", float(np.max(np.linalg.norm(pts, axis=1)))
        )

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def pos_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    @property
    def neg_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == -1)

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.count_nonzero(self.labels == -1))

    def signed_points(self) -> np.ndarray:
        """y_i * x_i rows; separability of the dataset = pointedness of these."""
        return self.points * self.labels[:, None].astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(
            self.labels, other.labels
        )


@dataclass(frozen=True)
class ConditionReport:
    """Result of the two-cone (within-class acute / cross-class obtuse) check.

    combes_ok:            True iff violating_pairs is empty
    violating_pairs:      (i, j, inner_product) triples breaking the strict signs
    separable:            gamma > 0 for the signed point set {y_i x_i}
    separability_witness: unit vector w with y_i w.x_i > 0 for all i, when separable
    """

    combes_ok: bool
    violating_pairs: tuple
    separable: bool
    separability_witness: np.ndarray | None


def _rng(seed: int) -> np.random.Generator:
    # Philox: counter-based, reproducible, independent streams per seed.
    return np.random.Generator(np.random.Philox(int(seed)))


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            return v / nrm


def gen_separable(
    n_pos: int, n_neg: int, dim: int, min_margin: float, seed: int
) -> Dataset:
    """Generate a dataset separable through the origin by a hidden unit vector.

    Positives satisfy u.x >= min_margin and negatives u.x <= -min_margin for a
    hidden unit u, so the signed margin max_w min_i y_i w.x_i is at least
    min_margin. Deterministic for a fixed seed.
    """
    if n_pos < 1 or n_neg < 1:
        raise DatasetError("n_pos and n_neg must both be >= 1")
    if dim < 2:
        raise DatasetError("dim must be >= 2")
    if not min_margin > 0:
        raise DatasetError("min_margin must be > 0")
    rng = _rng(seed)
    u = _random_unit(rng, dim)
    n = n_pos + n_neg
    g = rng.standard_normal((n, dim))
    g -= np.outer(g @ u, u)  # tangential part
    offsets = min_margin + np.abs(rng.standard_normal(n))
    signs = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    pts = g + np.outer(signs * offsets, u)
    labels = np.concatenate([np.ones(n_pos, np.int64), -np.ones(n_neg, np.int64)])
    return Dataset(pts, labels)


def gen_combes(n_pos: int, n_neg: int, dim: int, seed: int) -> Dataset:
    """Generate a dataset meeting the two-cone condition exactly.

    All within-class inner products strictly positive, all cross-class inner
    products strictly negative, and the set is linearly separable. Built by
    sampling inside two antipodal cones of 40 degree half-aperture around a
    hidden axis (within-class angles <= 80 deg, cross-class >= 100 deg); the
    postcondition is re-verified by check_combes before returning.
    """
    if n_pos < 1 or n_neg < 1:
        raise DatasetError("n_pos and n_neg must both be >= 1")
    if dim < 2:
        raise DatasetError("dim must be >= 2")
    rng = _rng(seed)
    aperture = np.deg2rad(40.0)
    max_retries = 1000
    for _ in range(max_retries):
        u = _random_unit(rng, dim)
        pts = np.empty((n_pos + n_neg, dim))
        for row, axis in enumerate([u] * n_pos + [-u] * n_neg):
            phi = rng.uniform(0.0, aperture)
            perp = rng.standard_normal(dim)
            perp -= (perp @ axis) * axis
            nrm = np.linalg.norm(perp)
            if nrm < 1e-12:
                direction = axis
            else:
                direction = np.cos(phi) * axis + np.sin(phi) * (perp / nrm)
            pts[row] = rng.uniform(0.5, 1.5) * direction
        labels = np.concatenate(
            [np.ones(n_pos, np.int64), -np.ones(n_neg, np.int64)]
        )
        ds = Dataset(pts, labels)
        report = check_combes(ds)
        if report.combes_ok and report.separable:
            return ds
    raise GenerationError(
        f"could not generate a conforming dataset in {max_retries} attempts"
    )


# Fixed coordinates for the two hand-picked configurations. Only the sign /
# inequality constraints matter (asserted in tests); the numbers are one
# convenient instance.
_EXAMPLE1_POINTS = ((1.0, 0.0), (-0.6, 1.0), (-0.9, -0.8))
_EXAMPLE1_LABELS = (1, 1, -1)
_EXAMPLE2_POINTS = ((1.0, 0.6), (1.0, -0.6))
_EXAMPLE2_LABELS = (1, -1)


def gen_example1() -> Dataset:
    """Three samples {(x1,+1),(x2,+1),(x3,-1)} with x1.x2 < 0 and x1.x3 < 0.

    Separable, but GD started with only x1 active converges to the max-margin
    direction of x1 alone and misclassifies x2 forever.
    """
    return Dataset(np.array(_EXAMPLE1_POINTS), np.array(_EXAMPLE1_LABELS))


def gen_example2() -> Dataset:
    """Two samples {(x1,+1),(x2,-1)} with 0 < x1.x2 <= 0.5*||x2||^2.

    Separable, but GD started between the two samples oscillates around the
    direction of x2 and never settles.
    """
    return Dataset(np.array(_EXAMPLE2_POINTS), np.array(_EXAMPLE2_LABELS))


def check_combes(ds: Dataset) -> ConditionReport:
    """Check the strict two-cone sign conditions and assess separability.

    Within-class pairs (including i == j, which catches zero vectors) must
    have inner product > STRICT_TOL; cross-class pairs < -STRICT_TOL.
    Separability is established by running the max-margin solver on the
    signed point set and testing gamma > 0.
    """
    from .margin import max_margin  # local import; margin depends on this module

    gramian = ds.points @ ds.points.T
    same = np.equal.outer(ds.labels, ds.labels)
    violations = []
    n = ds.n
    for i in range(n):
        for j in range(i, n):
            ip = gramian[i, j]
            if same[i, j]:
                if not ip > STRICT_TOL:
                    violations.append((i, j, float(ip)))
            else:
                if not ip < -STRICT_TOL:
                    violations.append((i, j, float(ip)))
    result = max_margin(ds.signed_points())
    separable = bool(result.certified and result.gamma > 0.0)
    witness = result.direction if separable else None
    return ConditionReport(
        combes_ok=not violations,
        violating_pairs=tuple(violations),
        separable=separable,
        separability_witness=witness,
    )


def augment(ds: Dataset) -> Dataset:
    """Pad a trailing +1 onto positive samples and -1 onto negative samples.

    Raises within-class inner products by exactly 1 and lowers cross-class
    ones by exactly 1; whether the result meets the two-cone condition is
    checked by check_combes, not assumed.
    """
    pad = ds.labels.astype(np.float64)[:, None]
    return Dataset(np.hstack([ds.points, pad]), ds.labels)


def leaky_transform(ds: Dataset, lam: float) -> Dataset:
    """Scale negative samples by lam in [0, 1]; positives and labels unchanged.

    With lam in (0, 1] a dataset separable through the origin stays separable
    (positive scaling preserves the sign of w.x). lam = 0 collapses negatives
    to the origin, which Dataset still accepts but downstream sign conditions
    will flag.
    """
    if not 0.0 <= lam <= 1.0:
        raise DatasetError(f"lambda must be in [0, 1], got {lam}")
    scale = np.where(ds.labels == -1, lam, 1.0)[:, None]
    return Dataset(ds.points * scale, ds.labels)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(ds: Dataset, path: str) -> None:
    """Write UTF-8 CSV: header x0,...,x{d-1},label; shortest round-trip floats."""
    lines = [",".join([f"x{j}" for j in range(ds.dim)] + ["label"])]
    for row, lab in zip(ds.points, ds.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(lab))]))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load(path: str) -> Dataset:
    """Read a dataset CSV written by save(); round trip is exact."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = [line.rstrip("\n") for line in fh]
    rows = [(i + 1, line) for i, line in enumerate(raw) if line.strip()]
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header_no, header = rows[0]
    cols = header.split(",")
    if cols[-1] != "label" or any(c != f"x{j}" for j, c in enumerate(cols[:-1])):
        raise DatasetFormatError(
            f"{path}:{header_no}: bad header {header!r}; expected x0,...,label"
        )
    dim = len(cols) - 1
    points, labels = [], []
    for line_no, line in rows[1:]:
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise DatasetFormatError(
                f"{path}:{line_no}: row has {len(fields)} fields, expected {dim + 1}"
            )
        try:
            vec = [float(f) for f in fields[:-1]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{line_no}: {exc}") from exc
        lab_text = fields[-1].strip()
        if lab_text not in ("1", "-1", "+1"):
            raise DatasetFormatError(
                f"{path}:{line_no}: label must be 1 or -1, got {lab_text!r}"
            )
        points.append(vec)
        labels.append(int(lab_text))
    if not points:
        raise DatasetFormatError(f"{path}: no data rows")
    try:
        return Dataset(np.array(points), np.array(labels))
    except DatasetError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
