"""Quantitative diagnostics: pass@1, oracle gap, cross-difficulty curves,
distribution-shift gains, and counterfactual collapse.

All accuracies are carried as exact fractions; rounding happens only at
render time (see report.py).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .corpus import PASS, EvalSet
from .errors import MetricsError
from .records import as_fraction
from .splits import SplitManifest

SPECIALISTS = ("L1", "L2", "L3", "L4", "L5")
BASELINE_ROW = "original"

OPG_NEGLIGIBLE = Fraction(2, 100)
OPG_SUBSTANTIAL = Fraction(10, 100)
COLLAPSE_DROP = Fraction(25, 100)


@dataclass(frozen=True)
class AccuracyCell:
    model_id: str
    split_name: str
    passes: int
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise MetricsError(f"cell ({self.model_id}, {self.split_name}): total must be >= 1")
        if not 0 <= self.passes <= self.total:
            raise MetricsError(
                f"cell ({self.model_id}, {self.split_name}): passes {self.passes} outside [0, {self.total}]"
            )

    @property
    def accuracy(self) -> Fraction:
        return Fraction(self.passes, self.total)

    @property
    def percent(self) -> Fraction:
        return self.accuracy * 100

    @classmethod
    def from_percent(cls, model_id: str, split_name: str, percent) -> "AccuracyCell":
        acc = as_fraction(percent) / 100
        if not 0 <= acc <= 1:
            raise MetricsError(f"percent {percent!r} outside [0, 100]")
        return cls(model_id=model_id, split_name=split_name, passes=acc.numerator, total=acc.denominator)


@dataclass
class CurveSeries:
    kind: str
    x: list[str]
    y: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise MetricsError(f"curve {self.kind!r}: x and y lengths differ")


@dataclass(frozen=True)
class OPGReport:
    algorithm_tag: str
    label: str
    p_test_oracle: Fraction  # percent
    p_train: Fraction        # percent
    opg: Fraction            # fraction of 1
    classification: str
    thresholds: tuple[Fraction, Fraction]


@dataclass(frozen=True)
class CollapseReport:
    p_bal: Fraction          # percent
    p_cf: Fraction           # percent
    drop_pp: Fraction        # percentage points
    retention: Fraction      # fraction of 1
    relative_drop: Fraction  # fraction of 1
    collapsed: bool
    threshold: Fraction


@dataclass
class CrossMatrix:
    """Accuracy (percent) per (trained-on row, evaluated level column)."""

    model_order: tuple[str, ...]
    level_order: tuple[str, ...]
    values: dict[tuple[str, str], Fraction]
    row_averages: dict[str, Fraction]


def pass_at_1(eval_set: EvalSet, model_id: str, split: SplitManifest) -> AccuracyCell:
    """Single-attempt accuracy of one model over one split's members."""
    missing = [pid for pid in split.member_ids if (model_id, pid) not in eval_set.outcomes]
    if missing:
        raise MetricsError(
            f"model {model_id!r} has no record for split {split.name!r} members: {missing[:10]}"
        )
    passes = sum(1 for pid in split.member_ids if eval_set.outcomes[(model_id, pid)] == PASS)
    return AccuracyCell(model_id=model_id, split_name=split.name, passes=passes, total=len(split.member_ids))


def opg(
    p_test_oracle,
    p_train,
    thresholds: tuple = (OPG_NEGLIGIBLE, OPG_SUBSTANTIAL),
    algorithm_tag: str = "",
    label: str = "",
) -> OPGReport:
    """Normalized gap between the test-trained oracle and the train-trained model.

    Inputs are percents. The gap is (oracle - train) / oracle, classified
    negligible below t_neg, substantial above t_sub, else indeterminate.
    """
    oracle = as_fraction(p_test_oracle)
    train = as_fraction(p_train)
    if oracle <= 0:
        raise MetricsError("p_test_oracle must be > 0")
    t_neg, t_sub = (as_fraction(thresholds[0]), as_fraction(thresholds[1]))
    if t_neg > t_sub:
        raise MetricsError("negligible threshold must not exceed substantial threshold")
    gap = (oracle - train) / oracle
    if gap <= t_neg:
        classification = "negligible"
    elif gap >= t_sub:
        classification = "substantial"
    else:
        classification = "indeterminate"
    return OPGReport(
        algorithm_tag=algorithm_tag,
        label=label,
        p_test_oracle=oracle,
        p_train=train,
        opg=gap,
        classification=classification,
        thresholds=(t_neg, t_sub),
    )


def _index_cells(cells: Iterable[AccuracyCell]) -> dict[tuple[str, str], AccuracyCell]:
    indexed: dict[tuple[str, str], AccuracyCell] = {}
    for cell in cells:
        key = (cell.model_id, cell.split_name)
        if key in indexed:
            raise MetricsError(f"duplicate cell for {key}")
        indexed[key] = cell
    return indexed


def cross_matrix(
    cells: Iterable[AccuracyCell],
    model_order: Sequence[str] = SPECIALISTS + (BASELINE_ROW,),
    level_order: Sequence[str] = SPECIALISTS,
) -> CrossMatrix:
    """Assemble the trained-on x evaluated-on matrix with unweighted row means."""
    indexed = _index_cells(cells)
    values: dict[tuple[str, str], Fraction] = {}
    for model in model_order:
        for level in level_order:
            cell = indexed.get((model, level))
            if cell is None:
                raise MetricsError(f"missing cell for model {model!r} on level {level!r}")
            values[(model, level)] = cell.percent
    row_averages = {
        model: sum(values[(model, lv)] for lv in level_order) / len(level_order)
        for model in model_order
    }
    return CrossMatrix(
        model_order=tuple(model_order),
        level_order=tuple(level_order),
        values=values,
        row_averages=row_averages,
    )


def p_cross(matrix: CrossMatrix) -> tuple[CurveSeries, bool]:
    """Per-specialist mean accuracy over the levels it was NOT trained on,
    plus whether that score is non-decreasing in training difficulty."""
    levels = matrix.level_order
    for spec in levels:
        if spec not in matrix.model_order:
            raise MetricsError(f"specialist row {spec!r} missing from matrix")
    scores = []
    for spec in levels:
        others = [matrix.values[(spec, lv)] for lv in levels if lv != spec]
        scores.append(sum(others) / len(others))
    monotonic = all(scores[i] <= scores[i + 1] for i in range(len(scores) - 1))
    series = CurveSeries(
        kind="p_cross",
        x=list(levels),
        y=scores,
        metadata={"monotonic_non_decreasing": monotonic},
    )
    return series, monotonic


def specialist_gap(matrix: CrossMatrix) -> CurveSeries:
    """Per evaluation level: the specialist's edge over the mean of the other
    specialists on that level."""
    levels = matrix.level_order
    gaps = []
    for level in levels:
        own = matrix.values[(level, level)]
        others = [matrix.values[(spec, level)] for spec in levels if spec != level]
        gaps.append(own - sum(others) / len(others))
    return CurveSeries(kind="specialist_gap", x=list(levels), y=gaps)


def gain_curve(
    cells: Iterable[AccuracyCell],
    core_model: str,
    base_model: str,
    bin_order: Sequence[str] | None = None,
) -> tuple[CurveSeries, list[int]]:
    """Specialist-minus-baseline accuracy per distance bin, with the 1-based
    indices of bins where the gain inverts below zero."""
    indexed = _index_cells(cells)
    if bin_order is None:
        bin_order = sorted({split for _, split in indexed})
    gains = []
    for name in bin_order:
        for model in (core_model, base_model):
            if (model, name) not in indexed:
                raise MetricsError(f"missing cell for model {model!r} on bin {name!r}")
        gains.append(indexed[(core_model, name)].percent - indexed[(base_model, name)].percent)
    inversions = [k + 1 for k, g in enumerate(gains) if g < 0]
    series = CurveSeries(
        kind="gain",
        x=list(bin_order),
        y=gains,
        metadata={"core_model": core_model, "base_model": base_model, "inversions": inversions},
    )
    return series, inversions


def lift_curve(
    cells: Iterable[AccuracyCell],
    groups: Mapping[str, Sequence[str]] = {"L1-L3": ("L1", "L2", "L3"), "L4-L5": ("L4", "L5")},
    baseline_model: str = BASELINE_ROW,
    level_order: Sequence[str] = SPECIALISTS,
) -> list[CurveSeries]:
    """Mean accuracy lift over the untuned baseline, per model group and level."""
    indexed = _index_cells(cells)

    def lift(model: str, level: str) -> Fraction:
        for m in (model, baseline_model):
            if (m, level) not in indexed:
                raise MetricsError(f"missing cell for model {m!r} on level {level!r}")
        return indexed[(model, level)].percent - indexed[(baseline_model, level)].percent

    curves = []
    for group_name, members in groups.items():
        ys = [sum(lift(m, lv) for m in members) / len(members) for lv in level_order]
        curves.append(
            CurveSeries(
                kind="lift",
                x=list(level_order),
                y=ys,
                metadata={"group": group_name, "models": list(members), "baseline": baseline_model},
            )
        )
    return curves


def collapse(p_bal, p_cf, drop_threshold=COLLAPSE_DROP) -> CollapseReport:
    """Flag a relative accuracy drop from the balanced set to the
    counterfactual set at or beyond the threshold."""
    bal = as_fraction(p_bal)
    cf = as_fraction(p_cf)
    if bal <= 0:
        raise MetricsError("p_bal must be > 0")
    threshold = as_fraction(drop_threshold)
    relative = (bal - cf) / bal
    return CollapseReport(
        p_bal=bal,
        p_cf=cf,
        drop_pp=bal - cf,
        retention=cf / bal,
        relative_drop=relative,
        collapsed=relative >= threshold,
        threshold=threshold,
    )
