"""Checkpointed LLM pipelines: difficulty annotation and counterfactual
problem generation against a chat-completions-style endpoint.

Failure semantics matter here. A response that arrives but cannot be parsed
consumes an attempt and, once attempts run out, is recorded as `failed` in
the checkpoint. Transport-level trouble (timeouts, 429/5xx, unreachable
endpoint) never fabricates a `failed` record: if it persists past the attempt
budget the whole job aborts, so a later resume re-requests exactly the items
that were in flight and produces the same output an uninterrupted run would.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import requests

from .corpus import LEVELS, PASS, Dataset, GradingPolicy, annotate, grade_response
from .errors import CheckpointError, JobError
from .records import dumps_record, sha256_text

log = logging.getLogger(__name__)

TRANSIENT_STATUS = frozenset({429, 500, 502, 503, 504})

KEPT = "kept"
DROPPED = "dropped"

DIFFICULTY_RUBRIC = """\
Level 1 - Direct single-rule computation: solvable in one or two steps, each an
immediate application of a basic formula or operational rule; no planning.
Level 2 - Standard-model recognition: the solver must spot which classic
technique or formula family the problem instantiates, then apply it.
Level 3 - Multi-step cross-topic planning: no single standard recipe fits; the
solution chains several concepts, often from different mathematical areas.
Level 4 - Abstract-theory application: hinges on a deep, flexible use of a
major abstract result or structure; the path is non-obvious without it.
Level 5 - First-principles construction: requires reasoning inside an
axiomatic framework - building proofs, derivations, or counterexamples from
the ground rules themselves."""

DIFFICULTY_PROMPT_TEMPLATE = (
    "You are rating the difficulty of one mathematics problem.\n\n"
    "Rubric (reconstructed in-house wording; replace via prompt_template if you have your own):\n"
    + DIFFICULTY_RUBRIC
    + "\n\nProblem:\n{statement}\n\n"
    "Reply with the single most appropriate level, formatted as \"Level N\" with N in 1-5, and nothing else."
)

COUNTERFACTUAL_PROMPT_TEMPLATE = """\
You will transform one mathematics problem into a counterfactual variant.

Steps:
1. Identify the core real-world mathematical rule the problem relies on.
2. Invent a plausible but contrary-to-fact replacement rule.
3. Rewrite the problem statement so it states the new rule explicitly; the new
   rule's text must appear verbatim in the rewritten statement.
4. Solve the rewritten problem using only the new rule, and separately give
   the answer the original rule would produce.

Problem:
{statement}

Original gold answer: {gold_answer}

Respond with exactly one fenced JSON block of the form:
```json
{{"c_real": "...", "c_fake": "...", "rewritten_statement": "...", "a_fake": "...", "a_real": "..."}}
```
"""


@dataclass
class ChatClient:
    url: str
    model_tag: str
    timeout: float = 60.0
    backoff_base: float = 0.5
    api_key_env: str = "BENCHGAP_LLM_KEY"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers


@dataclass
class GenerationJob:
    kind: str  # "difficulty" | "counterfactual"
    prompt_template: str
    items: list[str]
    client: ChatClient
    checkpoint_path: str | Path
    concurrency: int = 4
    max_attempts: int = 3

    def __post_init__(self):
        if self.kind not in ("difficulty", "counterfactual"):
            raise JobError(f"unknown job kind: {self.kind!r}")
        if self.concurrency < 1:
            raise JobError("concurrency must be >= 1")
        if self.max_attempts < 1:
            raise JobError("max_attempts must be >= 1")


@dataclass(frozen=True)
class CounterfactualItem:
    source_id: str
    c_real: str
    c_fake: str
    rewritten_statement: str
    a_fake: str
    a_real: str
    status: str = "pending"
    drop_reason: str | None = None


# ---------------------------------------------------------------------------
# Checkpoint: append-only line records, replayable


def _payload_digest(payload: dict) -> str:
    return sha256_text(dumps_record(payload))


@dataclass
class Checkpoint:
    path: Path
    done: dict[str, dict] = field(default_factory=dict)     # item id -> payload
    failed: dict[str, str] = field(default_factory=dict)    # item id -> reason
    attempts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path, recover_torn_tail: bool = True) -> "Checkpoint":
        """Replay a checkpoint file.

        A malformed line anywhere but the very end means the file is corrupt
        and the job refuses to run. An incomplete final line is an interrupted
        write that never committed; it is dropped (loudly) and the file is
        truncated back to the last complete record.
        """
        path = Path(path)
        cp = cls(path=path)
        if not path.exists():
            return cp
        raw = path.read_bytes()
        if not raw:
            return cp
        lines = raw.split(b"\n")
        complete, tail = lines[:-1], lines[-1]
        for lineno, line in enumerate(complete, start=1):
            if not line.strip():
                raise CheckpointError(f"{path}:{lineno}: blank line inside checkpoint")
            cp._replay_line(line, lineno)
        if tail:
            if not recover_torn_tail:
                raise CheckpointError(f"{path}: incomplete final record")
            log.warning("checkpoint %s: dropping incomplete final record (%d bytes)", path, len(tail))
            with open(path, "r+b") as fh:
                fh.truncate(len(raw) - len(tail))
        return cp

    def _replay_line(self, line: bytes, lineno: int) -> None:
        try:
            rec = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{self.path}:{lineno}: unreadable record: {exc}") from exc
        item_id = rec.get("item_id")
        outcome = rec.get("outcome")
        if not item_id or outcome not in ("done", "failed"):
            raise CheckpointError(f"{self.path}:{lineno}: malformed record")
        self.attempts[item_id] = int(rec.get("attempt", 0))
        if outcome == "done":
            if item_id in self.done:
                raise CheckpointError(f"{self.path}:{lineno}: duplicate done record for {item_id!r}")
            payload = rec.get("payload")
            if not isinstance(payload, dict) or rec.get("digest") != _payload_digest(payload):
                raise CheckpointError(f"{self.path}:{lineno}: payload digest mismatch for {item_id!r}")
            self.done[item_id] = payload
        else:
            self.failed[item_id] = str(rec.get("reason", ""))

    def seen(self, item_id: str) -> bool:
        return item_id in self.done or item_id in self.failed


class _CheckpointWriter:
    """Single writer, per-record flush, safe to call from worker threads."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "ab")
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = (dumps_record(record) + "\n").encode("utf-8")
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


# ---------------------------------------------------------------------------
# Response parsing


_LEVEL_EXPLICIT_RE = re.compile(r"(?i)\blevel[\s:]*([1-5])\b|\bl([1-5])\b")
_LEVEL_DIGIT_RE = re.compile(r"\b([1-5])\b")
_FENCED_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)

_CF_FIELDS = ("c_real", "c_fake", "rewritten_statement", "a_fake", "a_real")


def parse_level(text: str) -> str | None:
    """Pull a difficulty level out of free text: 'Level N', 'LN', or a bare digit."""
    explicit = _LEVEL_EXPLICIT_RE.findall(text)
    if explicit:
        a, b = explicit[-1]
        return f"L{a or b}"
    digits = _LEVEL_DIGIT_RE.findall(text)
    return f"L{digits[-1]}" if digits else None


def parse_counterfactual(text: str) -> dict | None:
    """First fenced block that parses as a complete counterfactual payload."""
    for block in _FENCED_RE.findall(text):
        try:
            obj = json.loads(block)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and all(isinstance(obj.get(k), str) and obj[k] for k in _CF_FIELDS):
            return {k: obj[k] for k in _CF_FIELDS}
    return None


# ---------------------------------------------------------------------------
# Transport


def _post_chat(client: ChatClient, prompt: str) -> str | None:
    """One request. Returns the reply text, or None on a transient failure."""
    body = {
        "model": client.model_tag,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": 0,
    }
    try:
        resp = requests.post(client.url, json=body, headers=client._headers(), timeout=client.timeout)
    except requests.RequestException as exc:
        log.warning("chat request failed: %s", exc)
        return None
    if resp.status_code in TRANSIENT_STATUS:
        log.warning("chat request got transient HTTP %d", resp.status_code)
        return None
    if resp.status_code != 200:
        raise JobError(f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise JobError(f"chat endpoint returned an unexpected body: {exc}") from exc


# ---------------------------------------------------------------------------
# Job runner


def _run_job(
    job: GenerationJob,
    dataset: Dataset,
    parse: Callable[[str], object | None],
) -> tuple[dict[str, dict], dict[str, str], Checkpoint]:
    by_id = dataset.by_id()
    unknown = [pid for pid in job.items if pid not in by_id]
    if unknown:
        raise JobError(f"job items not present in dataset: {unknown[:10]}")
    checkpoint = Checkpoint.load(job.checkpoint_path)
    pending = [pid for pid in job.items if not checkpoint.seen(pid)]
    writer = _CheckpointWriter(Path(job.checkpoint_path))
    lock = threading.Lock()

    def work(item_id: str) -> None:
        problem = by_id[item_id]
        prompt = job.prompt_template.format(
            statement=problem.statement, gold_answer=problem.gold_answer, id=problem.id
        )
        got_response = False
        for attempt in range(1, job.max_attempts + 1):
            if attempt > 1:
                time.sleep(job.client.backoff_base * (2 ** (attempt - 2)))
            text = _post_chat(job.client, prompt)
            if text is None:
                continue
            got_response = True
            parsed = parse(text)
            if parsed is not None:
                payload = parsed if isinstance(parsed, dict) else {"level": parsed}
                writer.append(
                    {
                        "item_id": item_id,
                        "attempt": attempt,
                        "outcome": "done",
                        "payload": payload,
                        "digest": _payload_digest(payload),
                        "ts": time.time(),
                    }
                )
                with lock:
                    checkpoint.done[item_id] = payload
                    checkpoint.attempts[item_id] = attempt
                return
        if not got_response:
            raise JobError(f"endpoint unreachable for item {item_id!r} after {job.max_attempts} attempts")
        reason = "no parseable payload in any response"
        writer.append(
            {
                "item_id": item_id,
                "attempt": job.max_attempts,
                "outcome": "failed",
                "reason": reason,
                "ts": time.time(),
            }
        )
        with lock:
            checkpoint.failed[item_id] = reason
            checkpoint.attempts[item_id] = job.max_attempts

    error: Exception | None = None
    try:
        with ThreadPoolExecutor(max_workers=job.concurrency) as pool:
            futures = {pool.submit(work, pid): pid for pid in pending}
            for future in as_completed(futures):
                try:
                    future.result()
                except JobError as exc:
                    error = exc
                    pool.shutdown(wait=False, cancel_futures=True)
                    break
    finally:
        writer.close()
    if error is not None:
        raise error
    return checkpoint.done, checkpoint.failed, checkpoint


@dataclass
class AnnotationResult:
    dataset: Dataset
    checkpoint: Checkpoint
    failed: dict[str, str]


def annotate_difficulty(job: GenerationJob, dataset: Dataset) -> AnnotationResult:
    """Assign one difficulty level per item, resuming from the checkpoint."""
    if job.kind != "difficulty":
        raise JobError("annotate_difficulty requires a job of kind 'difficulty'")

    done, failed, checkpoint = _run_job(job, dataset, parse_level)
    levels: dict[str, str] = {}
    for item_id, payload in done.items():
        level = payload.get("level")
        if level not in LEVELS:
            raise CheckpointError(f"checkpoint payload for {item_id!r} is not a difficulty level")
        levels[item_id] = level
    return AnnotationResult(dataset=annotate(dataset, levels), checkpoint=checkpoint, failed=failed)


@dataclass
class CounterfactualResult:
    items: list[CounterfactualItem]
    checkpoint: Checkpoint
    failed: dict[str, str]


def generate_counterfactuals(job: GenerationJob, dataset: Dataset) -> CounterfactualResult:
    """Produce one counterfactual transformation per item, resuming from the checkpoint."""
    if job.kind != "counterfactual":
        raise JobError("generate_counterfactuals requires a job of kind 'counterfactual'")

    done, failed, checkpoint = _run_job(job, dataset, parse_counterfactual)
    items = []
    for item_id in job.items:
        payload = done.get(item_id)
        if payload is None:
            continue
        if not all(isinstance(payload.get(k), str) and payload[k] for k in _CF_FIELDS):
            raise CheckpointError(f"checkpoint payload for {item_id!r} is not a counterfactual item")
        items.append(CounterfactualItem(source_id=item_id, **{k: payload[k] for k in _CF_FIELDS}))
    return CounterfactualResult(items=items, checkpoint=checkpoint, failed=failed)


VERBATIM_POLICY = GradingPolicy(extraction="verbatim")


def validate_counterfactual(
    item: CounterfactualItem, policy: GradingPolicy = VERBATIM_POLICY
) -> CounterfactualItem:
    """Keep only items whose two answers are distinguishable by the grader and
    whose invented premise is embedded verbatim in the rewritten statement."""
    if grade_response(item.a_fake, item.a_real, policy) == PASS:
        return replace(item, status=DROPPED, drop_reason="indistinguishable")
    if item.c_fake not in item.rewritten_statement:
        return replace(item, status=DROPPED, drop_reason="premise not embedded")
    return replace(item, status=KEPT, drop_reason=None)
