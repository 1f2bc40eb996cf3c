"""Problem corpora, model responses, and exact-match grading.

The canonical on-disk form is a line-delimited record file: one problem per
line with fields ``id``, ``statement``, ``answer``, ``source``, optional
``difficulty`` ("L1".."L5") and ``meta``. Eval records carry ``model_id``,
``problem_id``, and exactly one of ``outcome`` ("pass"/"fail") or ``response``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CorpusError
from .records import dumps_record, read_records, sha256_text, write_records

LEVELS = ("L1", "L2", "L3", "L4", "L5")

PASS = "pass"
FAIL = "fail"

DEFAULT_SCHEMA = {
    "id": "id",
    "statement": "statement",
    "answer": "answer",
    "source": "source",
    "difficulty": "difficulty",
    "meta": "meta",
}


@dataclass(frozen=True)
class Problem:
    id: str
    statement: str
    gold_answer: str
    source: str = ""
    difficulty: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise CorpusError("problem id must be non-empty")
        if not self.statement:
            raise CorpusError(f"problem {self.id}: statement must be non-empty")
        if not self.gold_answer:
            raise CorpusError(f"problem {self.id}: gold answer must be non-empty")
        if self.difficulty is not None and self.difficulty not in LEVELS:
            raise CorpusError(
                f"problem {self.id}: difficulty {self.difficulty!r} not one of {LEVELS}"
            )


@dataclass(frozen=True)
class SourceManifest:
    path: str
    record_count: int
    digest: str


@dataclass
class Dataset:
    problems: list[Problem]
    source_manifest: SourceManifest

    def __post_init__(self):
        seen = set()
        for p in self.problems:
            if p.id in seen:
                raise CorpusError(f"duplicate problem id: {p.id}")
            seen.add(p.id)
        if len(self.problems) != self.source_manifest.record_count:
            raise CorpusError(
                f"dataset holds {len(self.problems)} problems but manifest records "
                f"{self.source_manifest.record_count}"
            )

    def __len__(self) -> int:
        return len(self.problems)

    def by_id(self) -> dict[str, Problem]:
        return {p.id: p for p in self.problems}

    def content_digest(self) -> str:
        return sha256_text("".join(dumps_record(_problem_record(p)) + "\n" for p in self.problems))


@dataclass(frozen=True)
class EvalRecord:
    model_id: str
    problem_id: str
    outcome: str | None = None
    raw_response: str | None = None

    def __post_init__(self):
        if (self.outcome is None) == (self.raw_response is None):
            raise CorpusError(
                f"eval record ({self.model_id}, {self.problem_id}): exactly one of "
                "outcome/raw_response must be set"
            )
        if self.outcome is not None and self.outcome not in (PASS, FAIL):
            raise CorpusError(f"outcome must be '{PASS}' or '{FAIL}', got {self.outcome!r}")


def _problem_record(p: Problem) -> dict:
    rec = {"id": p.id, "statement": p.statement, "answer": p.gold_answer, "source": p.source}
    if p.difficulty is not None:
        rec["difficulty"] = p.difficulty
    if p.metadata:
        rec["meta"] = dict(p.metadata)
    return rec


def load_problems(path: str | Path, schema: Mapping[str, str] | None = None) -> Dataset:
    """Read a problem file into a Dataset, preserving file order.

    `schema` maps canonical field names (id/statement/answer/...) to the names
    used in the file; unset entries fall back to the canonical names.
    """
    path = Path(path)
    names = dict(DEFAULT_SCHEMA)
    if schema:
        names.update(schema)
    records = read_records(path)
    problems = []
    for lineno, rec in enumerate(records, start=1):
        fields = {}
        for canon in ("id", "statement", "answer"):
            value = rec.get(names[canon])
            if not isinstance(value, str) or not value:
                raise CorpusError(f"{path}:{lineno}: missing required field {names[canon]!r}")
            fields[canon] = value
        meta = rec.get(names["meta"]) or {}
        if not isinstance(meta, dict):
            raise CorpusError(f"{path}:{lineno}: {names['meta']!r} must be an object")
        problems.append(
            Problem(
                id=fields["id"],
                statement=fields["statement"],
                gold_answer=fields["answer"],
                source=rec.get(names["source"], "") or "",
                difficulty=rec.get(names["difficulty"]),
                metadata={str(k): str(v) for k, v in meta.items()},
            )
        )
    manifest = SourceManifest(path=str(path), record_count=len(problems), digest=sha256_text(path.read_text(encoding="utf-8")))
    return Dataset(problems=problems, source_manifest=manifest)


def save_problems(dataset: Dataset, path: str | Path) -> str:
    """Write the dataset in the canonical record format; returns the file digest."""
    return write_records(path, (_problem_record(p) for p in dataset.problems))


def load_eval_records(path: str | Path) -> list[EvalRecord]:
    out = []
    for lineno, rec in enumerate(read_records(path), start=1):
        model_id = rec.get("model_id")
        problem_id = rec.get("problem_id")
        if not model_id or not problem_id:
            raise CorpusError(f"{path}:{lineno}: model_id and problem_id are required")
        try:
            out.append(
                EvalRecord(
                    model_id=model_id,
                    problem_id=problem_id,
                    outcome=rec.get("outcome"),
                    raw_response=rec.get("response"),
                )
            )
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_eval_records(records: Iterable[EvalRecord], path: str | Path) -> str:
    def rec(r: EvalRecord) -> dict:
        base = {"model_id": r.model_id, "problem_id": r.problem_id}
        if r.outcome is not None:
            base["outcome"] = r.outcome
        else:
            base["response"] = r.raw_response
        return base

    return write_records(path, (rec(r) for r in records))


# ---------------------------------------------------------------------------
# Grading


@dataclass(frozen=True)
class GradingPolicy:
    """How to pull an answer out of a raw response before comparing.

    extraction: "auto" (last boxed expression, else last number/fraction),
    "boxed", "last_number", or "verbatim".
    """

    extraction: str = "auto"

    def __post_init__(self):
        if self.extraction not in ("auto", "boxed", "last_number", "verbatim"):
            raise CorpusError(f"unknown extraction rule: {self.extraction!r}")


DEFAULT_POLICY = GradingPolicy()

_DELIM_PAIRS = [("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")]
_NUMBERISH_RE = re.compile(
    r"(\\[dt]?frac\{[^{}]+\}\{[^{}]+\}"
    r"|\\[dt]?frac\d\d"
    r"|-?\d+\s*/\s*\d+"
    r"|-?\d{1,3}(?:,\d{3})+(?:\.\d+)?"
    r"|-?\d*\.\d+"
    r"|-?\d+)"
)
_PURE_NUMBER_RE = re.compile(r"^[-+]?[\d,]+(\.\d+)?$")


def _strip_math_delims(s: str) -> str:
    changed = True
    while changed:
        changed = False
        s = s.strip()
        for left, right in _DELIM_PAIRS:
            if len(s) > len(left) + len(right) and s.startswith(left) and s.endswith(right):
                s = s[len(left) : len(s) - len(right)]
                changed = True
    return s


def normalize_answer(text: str) -> str:
    """Canonical comparison form: lowercased, delimiter-free, fractions as a/b."""
    s = _strip_math_delims(text.strip()).lower()
    s = s.replace("\\left", "").replace("\\right", "")
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    s = re.sub(r"\\frac\{([^{}]+)\}\{([^{}]+)\}", r"\1/\2", s)
    s = re.sub(r"\\frac(\d)(\d)", r"\1/\2", s)
    s = re.sub(r"\s+", "", s)
    s = s.rstrip(".")
    if _PURE_NUMBER_RE.match(s):
        s = s.replace(",", "")
    return s


def _as_rational(s: str) -> Fraction | None:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def answers_match(candidate: str, gold: str) -> bool:
    a, b = normalize_answer(candidate), normalize_answer(gold)
    if a == b:
        return True
    ra, rb = _as_rational(a), _as_rational(b)
    return ra is not None and rb is not None and ra == rb


def extract_answer(response: str, rule: str = "auto") -> str | None:
    """Apply the policy's extraction rule; None when nothing extractable."""
    if rule == "verbatim":
        return response.strip() or None
    boxed = _last_boxed(response) if rule in ("auto", "boxed") else None
    if boxed is not None:
        return boxed
    if rule == "boxed":
        return None
    matches = _NUMBERISH_RE.findall(response)
    return matches[-1] if matches else None


def _last_boxed(text: str) -> str | None:
    starts = [m.start() for m in re.finditer(r"\\boxed", text)]
    for idx in reversed(starts):
        scan = idx + len("\\boxed")
        while scan < len(text) and text[scan].isspace():
            scan += 1
        if scan >= len(text) or text[scan] != "{":
            continue
        depth, scan = 1, scan + 1
        content = []
        while scan < len(text):
            ch = text[scan]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return "".join(content).strip()
            content.append(ch)
            scan += 1
    return None


def grade_response(
    raw_response: str,
    gold_answer: str,
    policy: GradingPolicy = DEFAULT_POLICY,
    log: list[str] | None = None,
) -> str:
    """Exact-match grade. Unextractable answers fail (with a log note), never error."""
    extracted = extract_answer(raw_response, policy.extraction)
    if extracted is None:
        if log is not None:
            log.append(f"unextractable answer under rule {policy.extraction!r}: {raw_response[:80]!r}")
        return FAIL
    return PASS if answers_match(extracted, gold_answer) else FAIL


# ---------------------------------------------------------------------------
# Joining eval records against a dataset


@dataclass
class EvalSet:
    """Validated, fully graded outcomes keyed by (model_id, problem_id)."""

    outcomes: dict[tuple[str, str], str]
    coverage: dict[str, int]
    grading_log: list[str] = field(default_factory=list)

    def outcome(self, model_id: str, problem_id: str) -> str | None:
        return self.outcomes.get((model_id, problem_id))


def join_eval(
    dataset: Dataset,
    records: Sequence[EvalRecord],
    policy: GradingPolicy = DEFAULT_POLICY,
) -> EvalSet:
    """Resolve records against the dataset, grading raw responses on the way."""
    by_id = dataset.by_id()
    outcomes: dict[tuple[str, str], str] = {}
    coverage: dict[str, int] = {}
    log: list[str] = []
    for index, rec in enumerate(records):
        problem = by_id.get(rec.problem_id)
        if problem is None:
            raise CorpusError(f"record {index}: unknown problem_id {rec.problem_id!r}")
        key = (rec.model_id, rec.problem_id)
        if key in outcomes:
            raise CorpusError(f"record {index}: duplicate (model_id, problem_id) pair {key}")
        if rec.outcome is not None:
            outcomes[key] = rec.outcome
        else:
            outcomes[key] = grade_response(rec.raw_response, problem.gold_answer, policy, log)
        coverage[rec.model_id] = coverage.get(rec.model_id, 0) + 1
    return EvalSet(outcomes=outcomes, coverage=coverage, grading_log=log)


def annotate(dataset: Dataset, levels: Mapping[str, str]) -> Dataset:
    """Return a copy of the dataset with difficulty levels applied by id."""
    problems = []
    for p in dataset.problems:
        level = levels.get(p.id)
        problems.append(replace(p, difficulty=level) if level is not None else p)
    return Dataset(problems=problems, source_manifest=dataset.source_manifest)
