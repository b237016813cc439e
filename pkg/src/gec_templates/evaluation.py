"""Character-level edit extraction and precision / recall / F-beta scoring."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

# backtrace operations
_MATCH, _SUB, _DEL, _INS = "M", "S", "D", "I"


@dataclass(frozen=True, order=True)
class Edit:
    start: int
    end: int
    replacement: str = ""
    type_label: str | None = field(default=None, compare=False)

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.start, self.end, self.replacement)


def _alignment(source: str, target: str) -> list[str]:
    n, m = len(source), len(target)
    # trailing common characters always align as matches under this tie-break
    while n and m and source[n - 1] == target[m - 1]:
        n -= 1
        m -= 1
    tail = len(source) - n
    prev = list(range(m + 1))
    table = [prev]
    for i in range(1, n + 1):
        row = [i] + [0] * m
        si = source[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (si != target[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(diag, up, left)
        table.append(row)
        prev = row
    ops: list[str] = []
    i, j = n, m
    while i or j:
        cur = table[i][j]
        if i and j and source[i - 1] == target[j - 1] and table[i - 1][j - 1] == cur:
            ops.append(_MATCH)
            i, j = i - 1, j - 1
        elif i and j and table[i - 1][j - 1] + 1 == cur:
            ops.append(_SUB)
            i, j = i - 1, j - 1
        elif i and table[i - 1][j] + 1 == cur:
            ops.append(_DEL)
            i -= 1
        else:
            ops.append(_INS)
            j -= 1
    ops.reverse()
    ops.extend(_MATCH * tail)
    return ops


def extract_edits(source: str, target: str) -> list[Edit]:
    """Minimal unit-cost alignment, with each run of non-match operations merged into one Edit."""
    edits: list[Edit] = []
    i = j = 0
    run_start: int | None = None
    run_repl: list[str] = []
    for op in _alignment(source, target):
        if op == _MATCH:
            if run_start is not None:
                edits.append(Edit(run_start, i, "".join(run_repl)))
                run_start, run_repl = None, []
            i += 1
            j += 1
            continue
        if run_start is None:
            run_start = i
        if op in (_SUB, _DEL):
            i += 1
        if op in (_SUB, _INS):
            run_repl.append(target[j])
            j += 1
    if run_start is not None:
        edits.append(Edit(run_start, i, "".join(run_repl)))
    return edits


def apply_edits(source: str, edits: Sequence[Edit]) -> str:
    last = 0
    for e in edits:
        if not (0 <= e.start <= e.end <= len(source)):
            raise ValueError(f"edit {e.key} out of bounds for length {len(source)}")
        if e.start < last:
            raise ValueError(f"edit {e.key} overlaps the previous edit or is out of order")
        last = e.end
    out = source
    for e in reversed(edits):
        out = out[: e.start] + e.replacement + out[e.end :]
    return out


def fbeta(p: float, r: float, beta: float = 0.5) -> float:
    b2 = beta * beta
    denom = b2 * p + r
    return (1 + b2) * p * r / denom if denom else 0.0


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


@dataclass
class TypeStats:
    tp: int = 0
    fn: int = 0

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)


@dataclass
class ScoreReport:
    tp: int
    fp: int
    fn: int
    beta: float
    per_type: dict[str, TypeStats] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f(self) -> float:
        return fbeta(self.precision, self.recall, self.beta)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "beta": self.beta,
            "precision": round(self.precision * 100, 2),
            "recall": round(self.recall * 100, 2),
            "f": round(self.f * 100, 2),
            "per_type": {
                label: {"tp": s.tp, "fn": s.fn, "recall": round(s.recall * 100, 2)}
                for label, s in sorted(self.per_type.items())
            },
        }

    def table(self) -> str:
        rows = [
            f"{'P':>8} {'R':>8} {f'F{self.beta:g}':>8} {'TP':>6} {'FP':>6} {'FN':>6}",
            f"{self.precision * 100:8.2f} {self.recall * 100:8.2f} {self.f * 100:8.2f} "
            f"{self.tp:6d} {self.fp:6d} {self.fn:6d}",
        ]
        if self.per_type:
            rows.append("")
            rows.append(f"{'type':<24} {'TP':>6} {'FN':>6} {'R':>8}")
            for label, s in sorted(self.per_type.items()):
                rows.append(f"{label:<24} {s.tp:6d} {s.fn:6d} {s.recall * 100:8.2f}")
        return "\n".join(rows)


def score(
    sources: Sequence[str],
    hypotheses: Sequence[str],
    references: Sequence[str] | None = None,
    beta: float = 0.5,
    gold: Sequence[Sequence[Edit]] | None = None,
) -> ScoreReport:
    """Micro-averaged correction-level scores.

    Gold edits come from ``gold`` when given (typed, e.g. from an annotated
    file), otherwise from aligning each source with its reference.
    """
    if gold is None:
        if references is None:
            raise ValueError("need references or gold edits")
        if len(references) != len(sources):
            raise ValueError(f"{len(sources)} sources but {len(references)} references")
        gold = [extract_edits(s, r) for s, r in zip(sources, references)]
    if len(hypotheses) != len(sources) or len(gold) != len(sources):
        raise ValueError(
            f"length mismatch: {len(sources)} sources, {len(hypotheses)} hypotheses, {len(gold)} gold"
        )
    tp = fp = fn = 0
    per_type: dict[str, TypeStats] = {}
    for src, hyp, gold_edits in zip(sources, hypotheses, gold):
        proposed = {e.key for e in extract_edits(src, hyp)}
        gold_keys = {e.key for e in gold_edits}
        tp += len(proposed & gold_keys)
        fp += len(proposed - gold_keys)
        fn += len(gold_keys - proposed)
        for e in gold_edits:
            if e.type_label is None:
                continue
            stats = per_type.setdefault(e.type_label, TypeStats())
            if e.key in proposed:
                stats.tp += 1
            else:
                stats.fn += 1
    return ScoreReport(tp, fp, fn, beta, per_type)


def read_gold(path: str | Path) -> tuple[list[str], list[list[Edit]]]:
    """Annotated gold JSONL: ``{"source": ..., "edits": [{"start", "end", "replacement", "type"}]}``."""
    sources, gold = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                src = obj["source"]
                edits = sorted(
                    Edit(int(e["start"]), int(e["end"]), e.get("replacement") or "", e.get("type"))
                    for e in obj.get("edits", [])
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad gold record ({exc})") from None
            for e in edits:
                if not 0 <= e.start <= e.end <= len(src):
                    raise ValueError(f"{path}:{lineno}: edit {e.key} out of bounds")
            sources.append(src)
            gold.append(edits)
    return sources, gold


@dataclass
class UsageReport:
    per_template: dict[str, int]
    histogram: dict[int, int]
    templates_used: int
    corrections: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "templates_used": self.templates_used,
            "corrections": self.corrections,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "per_template": dict(sorted(self.per_template.items())),
        }


def usage_report(applied: Iterable[Any]) -> UsageReport:
    """Template use frequencies from correction logs.

    ``applied`` may hold template ids, objects with a ``template_id``, or
    nested per-sentence lists of either.
    """
    counts: Counter = Counter()

    def visit(item: Any) -> None:
        if isinstance(item, str):
            counts[item] += 1
        elif hasattr(item, "template_id"):
            counts[item.template_id] += 1
        else:
            for sub in item:
                visit(sub)

    for item in applied:
        visit(item)
    histogram = Counter(counts.values())
    return UsageReport(dict(counts), dict(histogram), len(counts), sum(counts.values()))
