"""Confusion matrices: validation, per-class metrics, and precision/recall
parameterized synthesis.

Matrices are column-stochastic: entry ``C[i][j]`` is the probability that the
classifier reports class ``i`` when the true class is ``j``. Entries are kept
as exact :class:`fractions.Fraction` values whenever the inputs are rational
(ints, Fractions, or strings like ``"10/15"``) and as 64-bit floats otherwise.
"""

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

Number = Fraction | float

COLUMN_SUM_TOL = 1e-9


class ConfusionMatrixError(ValueError):
    """Base class for confusion-matrix validation and metric errors."""


class DimensionMismatch(ConfusionMatrixError):
    pass


class NegativeEntry(ConfusionMatrixError):
    pass


class ColumnNotStochastic(ConfusionMatrixError):
    def __init__(self, column: int, total: float):
        self.column = column
        self.total = total
        super().__init__(f"column {column} sums to {total!r}, expected 1 within {COLUMN_SUM_TOL}")


class IndexOutOfRange(ConfusionMatrixError):
    pass


class EmptyOffClassPartition(ConfusionMatrixError):
    pass


class WeightsNotNormalized(ConfusionMatrixError):
    pass


class InfeasiblePair(ConfusionMatrixError):
    pass


@dataclass(frozen=True)
class ClassLabel:
    """A named class with its 0-based position in the matrix ordering."""

    name: str
    index: int


@dataclass(frozen=True)
class ClassSizes:
    """Per-class datapoint counts used by the size-weighted precision metric."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ConfusionMatrixError(f"class sizes must all be positive, got {self.sizes}")

    @classmethod
    def equal(cls, n: int, size: int = 1) -> "ClassSizes":
        """Convenience constructor: ``n`` classes of identical size."""
        return cls(tuple(size for _ in range(n)))


@dataclass(frozen=True)
class ConfusionMatrix:
    """A validated column-stochastic classifier summary.

    Immutable after construction; every operation below is a pure function,
    so instances are safe to share across concurrent analyses.
    """

    labels: tuple[ClassLabel, ...]
    entries: tuple[tuple[Number, ...], ...]

    @property
    def n(self) -> int:
        return len(self.labels)

    def label_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.labels)

    def index_of(self, name: str) -> int:
        for lab in self.labels:
            if lab.name == name:
                return lab.index
        raise IndexOutOfRange(f"unknown class label {name!r}; have {self.label_names()}")

    def column(self, j: int) -> tuple[float, ...]:
        """Observation distribution for true class ``j``, as floats."""
        _check_index(self, j)
        return tuple(float(self.entries[i][j]) for i in range(self.n))

    def as_floats(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.entries]


def _check_index(cm: ConfusionMatrix, i: int) -> None:
    if not 0 <= i < cm.n:
        raise IndexOutOfRange(f"class index {i} outside [0, {cm.n})")


def _coerce_entry(value) -> Number:
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, bool):
        raise ConfusionMatrixError(f"entry {value!r} is not a number")
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, float):
        return value
    raise ConfusionMatrixError(f"entry {value!r} is not a number")


def validate(matrix, labels) -> ConfusionMatrix:
    """Validate raw square matrix values and wrap them as a ConfusionMatrix.

    ``matrix`` is an n-by-n nested sequence with rows = predicted class and
    columns = true class. ``labels`` is a sequence of n class names or
    ClassLabel objects. Raises DimensionMismatch, NegativeEntry, or
    ColumnNotStochastic (reporting the offending column and its sum).
    """
    labs = tuple(
        lab if isinstance(lab, ClassLabel) else ClassLabel(str(lab), i)
        for i, lab in enumerate(labels)
    )
    n = len(labs)
    if n < 2:
        raise DimensionMismatch(f"need at least 2 classes, got {n}")
    if len(set(lab.name for lab in labs)) != n:
        raise ConfusionMatrixError(f"duplicate class names in {tuple(l.name for l in labs)}")
    for i, lab in enumerate(labs):
        if lab.index != i:
            raise ConfusionMatrixError(f"label {lab.name!r} has index {lab.index}, expected {i}")

    if len(matrix) != n:
        raise DimensionMismatch(f"matrix has {len(matrix)} rows for {n} labels")
    rows = []
    for i, row in enumerate(matrix):
        if len(row) != n:
            raise DimensionMismatch(f"row {i} has {len(row)} entries, expected {n}")
        rows.append(tuple(_coerce_entry(v) for v in row))

    # Mixed rational/float input degrades the whole matrix to floats so the
    # stored entries stay homogeneous.
    if any(isinstance(v, float) for row in rows for v in row):
        rows = [tuple(float(v) for v in row) for row in rows]

    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            if v < 0:
                raise NegativeEntry(f"entry [{i}][{j}] = {v} is negative")
            if float(v) > 1 + COLUMN_SUM_TOL:
                raise ConfusionMatrixError(f"entry [{i}][{j}] = {v} exceeds 1")
    for j in range(n):
        total = sum(rows[i][j] for i in range(n))
        if abs(float(total) - 1.0) > COLUMN_SUM_TOL:
            raise ColumnNotStochastic(j, float(total))

    return ConfusionMatrix(labels=labs, entries=tuple(rows))


def recall(cm: ConfusionMatrix, i: int) -> float:
    """Recall of class ``i``: correct detections over the whole true-class
    column. Because columns are stochastic this equals the diagonal entry."""
    _check_index(cm, i)
    tp = cm.entries[i][i]
    fn = sum(cm.entries[j][i] for j in range(cm.n) if j != i)
    return float(tp / (tp + fn)) if (tp + fn) else 0.0


def precision(cm: ConfusionMatrix, i: int, weights=None) -> float:
    """Standard precision of class ``i`` under a prior over true classes:
    ``w_i*C(i,i) / sum_j w_j*C(i,j)``. ``weights`` defaults to uniform and
    must sum to 1.
    """
    _check_index(cm, i)
    if weights is None:
        weights = [Fraction(1, cm.n)] * cm.n
    else:
        weights = [_coerce_entry(w) for w in weights]
        if len(weights) != cm.n:
            raise DimensionMismatch(f"{len(weights)} weights for {cm.n} classes")
        if abs(float(sum(weights)) - 1.0) > COLUMN_SUM_TOL:
            raise WeightsNotNormalized(f"weights sum to {float(sum(weights))!r}")
    num = weights[i] * cm.entries[i][i]
    den = sum(weights[j] * cm.entries[i][j] for j in range(cm.n))
    return float(num / den) if den else 0.0


def precision_mean_rate(cm: ConfusionMatrix, i: int, sizes: ClassSizes) -> float:
    """Precision variant that charges class ``i`` with the mean off-class
    false-positive rate, weighted by class sizes:

        C(i,i) / (C(i,i) + sum_{j!=i} C(i,j)|D_j| / sum_{j!=i} |D_j|)

    With equal sizes this differs from :func:`precision`: rates are averaged
    over off classes instead of pooled with the true-class column.
    """
    _check_index(cm, i)
    if len(sizes.sizes) != cm.n:
        raise DimensionMismatch(f"{len(sizes.sizes)} sizes for {cm.n} classes")
    off = [j for j in range(cm.n) if j != i]
    total_off = sum(sizes.sizes[j] for j in off)
    if total_off == 0:
        raise EmptyOffClassPartition("every off-class partition is empty")
    fp_rate = sum(cm.entries[i][j] * sizes.sizes[j] for j in off) / Fraction(total_off)
    tp = cm.entries[i][i]
    return float(tp / (tp + fp_rate)) if (tp + fp_rate) else 0.0


PED_OBJ_EMPTY = ("ped", "obj", "empty")


def from_precision_recall(p, r) -> ConfusionMatrix:
    """Build the 3-class (ped, obj, empty) matrix parameterized by the ped
    class's precision ``p`` and recall ``r``.

    Rates: TP = r, FP = TP*(1/p - 1), TN = 2 - FP, FN = 1 - TP. The false
    positives split evenly over the two off classes; each off-class column
    puts 4/5 of its true-negative mass on the correct class and 1/5 on the
    other. Infeasible when FP > 2 (TN would go negative).
    """
    p = _coerce_entry(p)
    r = _coerce_entry(r)
    if isinstance(p, float) or isinstance(r, float):
        p, r = float(p), float(r)
        one = 1.0
    else:
        one = Fraction(1)
    if not 0 < p <= 1 or not 0 < r <= 1:
        raise InfeasiblePair(f"need precision and recall in (0, 1], got ({float(p)}, {float(r)})")
    tp = r
    fp = tp * (one / p - 1)
    if float(fp) > 2 + COLUMN_SUM_TOL:
        raise InfeasiblePair(
            f"false-positive mass {float(fp):.6g} exceeds 2; no valid matrix for "
            f"p={float(p)}, r={float(r)}"
        )
    tn = 2 - fp
    fn = 1 - tp
    matrix = [
        [tp, fp / 2, fp / 2],
        [fn / 2, 4 * tn / 10, tn / 10],
        [fn / 2, tn / 10, 4 * tn / 10],
    ]
    return validate(matrix, PED_OBJ_EMPTY)


def cm1() -> ConfusionMatrix:
    """Reference 3-class matrix (exact fifteenths) used by the bundled
    scenario and the regression sweeps."""
    f = Fraction
    return validate(
        [
            [f(10, 15), f(2, 15), f(3, 15)],
            [f(2, 15), f(11, 15), f(2, 15)],
            [f(3, 15), f(2, 15), f(10, 15)],
        ],
        PED_OBJ_EMPTY,
    )


def identity(labels=PED_OBJ_EMPTY) -> ConfusionMatrix:
    """Perfect classifier over the given labels."""
    n = len(labels)
    return validate(
        [[Fraction(1) if i == j else Fraction(0) for j in range(n)] for i in range(n)],
        labels,
    )
