"""Error templates of the form ``A.*B``: parsing, matching and deletion.

A template pairs two literals, ``left`` and ``right``, separated by a bounded
character gap.  All positions count Unicode code points.  Matching for a whole
set goes through one Aho-Corasick scan over the left literals; the right
literal is then verified per template with a lazy (shortest-gap) search.
"""

from __future__ import annotations

import enum
import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

TERMINALS = frozenset("。！？")
GAP_MIN_DEFAULT = 0
GAP_MAX_DEFAULT = 20

# Longer aliases first so "……" is not read as two "…" markers.
_GAP_MARKER = re.compile(r"\.\*|……|\.\.\.|…")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


class TemplateError(ValueError):
    """Raised for malformed templates, template files or invalid spans."""


class CorrectiveAction(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: str | CorrectiveAction | None) -> CorrectiveAction | None:
        if value is None or isinstance(value, CorrectiveAction):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise TemplateError(f"unknown corrective action: {value!r}") from None


@dataclass(frozen=True)
class Template:
    id: str
    left: str
    right: str
    gap_min: int = GAP_MIN_DEFAULT
    gap_max: int = GAP_MAX_DEFAULT
    action: CorrectiveAction | None = None
    dppl_left: float | None = None
    dppl_right: float | None = None
    support: int | None = None
    source: str = ""
    # keys found in a template file that we do not interpret; kept on rewrite
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", CorrectiveAction.parse(self.action))
        for name in ("left", "right"):
            part = getattr(self, name)
            if not part:
                raise TemplateError(f"template {self.id!r}: empty {name} part")
            if "\n" in part or "\r" in part or TERMINALS.intersection(part):
                raise TemplateError(
                    f"template {self.id!r}: {name} part {part!r} contains a newline "
                    "or sentence-terminal punctuation"
                )
        if self.gap_min < 0 or self.gap_max < 0:
            raise TemplateError(f"template {self.id!r}: negative gap bound")
        if self.gap_min > self.gap_max:
            raise TemplateError(
                f"template {self.id!r}: gap_min {self.gap_min} > gap_max {self.gap_max}"
            )

    @property
    def pattern(self) -> str:
        return f"{self.left}.*{self.right}"

    @property
    def literal_length(self) -> int:
        return len(self.left) + len(self.right)


@dataclass(frozen=True, order=True)
class MatchSpan:
    """One located template occurrence; spans are half-open ``(start, end)``."""

    left_span: tuple[int, int]
    right_span: tuple[int, int]
    template_id: str
    sentence_index: int = 0

    @property
    def start(self) -> int:
        return self.left_span[0]

    @property
    def end(self) -> int:
        return self.right_span[1]

    @property
    def gap(self) -> int:
        return self.right_span[0] - self.left_span[1]


def parse_template(text: str, id: str, **kwargs: Any) -> Template:
    """Parse ``"大约.*左右"`` (or ``…``, ``...``, ``……`` as the marker) into a Template."""
    parts = _GAP_MARKER.split(text)
    if len(parts) != 2:
        raise TemplateError(
            f"template {text!r} must contain exactly one gap marker, found {len(parts) - 1}"
        )
    left, right = parts
    return Template(id=id, left=left, right=right, **kwargs)


class _LiteralIndex:
    """Aho-Corasick automaton over a set of literals.

    ``scan`` yields ``(end, literal_no)`` for every occurrence, overlapping
    ones included, in increasing end order.
    """

    def __init__(self, literals: Sequence[str]) -> None:
        self._goto: list[dict[str, int]] = [{}]
        self._out: list[list[int]] = [[]]
        for no, lit in enumerate(literals):
            node = 0
            for ch in lit:
                nxt = self._goto[node].get(ch)
                if nxt is None:
                    nxt = len(self._goto)
                    self._goto[node][ch] = nxt
                    self._goto.append({})
                    self._out.append([])
                node = nxt
            self._out[node].append(no)
        self._fail = [0] * len(self._goto)
        queue = deque(self._goto[0].values())
        while queue:
            node = queue.popleft()
            for ch, child in self._goto[node].items():
                queue.append(child)
                f = self._fail[node]
                while f and ch not in self._goto[f]:
                    f = self._fail[f]
                target = self._goto[f].get(ch, 0)
                self._fail[child] = target if target != child else 0
                self._out[child] = self._out[child] + self._out[self._fail[child]]

    def scan(self, text: str) -> Iterator[tuple[int, int]]:
        goto, fail, out = self._goto, self._fail, self._out
        node = 0
        for i, ch in enumerate(text):
            while node and ch not in goto[node]:
                node = fail[node]
            node = goto[node].get(ch, 0)
            for no in out[node]:
                yield i + 1, no


def _next_terminal(sentence: str) -> list[int]:
    """``nxt[i]`` = smallest ``j >= i`` with a terminal at ``sentence[j]``, else ``len``."""
    n = len(sentence)
    nxt = [n] * (n + 1)
    for i in range(n - 1, -1, -1):
        nxt[i] = i if sentence[i] in TERMINALS else nxt[i + 1]
    return nxt


def match_sort_key(m: MatchSpan, literal_length: int) -> tuple[int, int, str]:
    return (m.start, -literal_length, m.template_id)


def resolve_overlaps(candidates: Iterable[MatchSpan], literal_lengths: dict[str, int]) -> list[MatchSpan]:
    """Greedy selection of non-overlapping full extents.

    Candidates are ordered by start, then longer combined literal, then id.
    """
    ordered = sorted(candidates, key=lambda m: match_sort_key(m, literal_lengths[m.template_id]))
    chosen: list[MatchSpan] = []
    reach = -1
    for m in ordered:
        if m.start >= reach:
            chosen.append(m)
            reach = m.end
    return chosen


class TemplateSet:
    """Immutable compiled collection of templates."""

    def __init__(self, templates: Iterable[Template]) -> None:
        self._templates: tuple[Template, ...] = tuple(templates)
        self._by_id: dict[str, Template] = {}
        for t in self._templates:
            if t.id in self._by_id:
                raise TemplateError(f"duplicate template id {t.id!r}")
            self._by_id[t.id] = t
        lefts: dict[str, list[Template]] = {}
        for t in self._templates:
            lefts.setdefault(t.left, []).append(t)
        self._left_literals = list(lefts)
        self._groups = [tuple(lefts[lit]) for lit in self._left_literals]
        self._index = _LiteralIndex(self._left_literals)
        self._lengths = {t.id: t.literal_length for t in self._templates}

    @property
    def templates(self) -> tuple[Template, ...]:
        return self._templates

    def __len__(self) -> int:
        return len(self._templates)

    def __iter__(self) -> Iterator[Template]:
        return iter(self._templates)

    def __getitem__(self, template_id: str) -> Template:
        return self._by_id[template_id]

    def __contains__(self, template_id: object) -> bool:
        return template_id in self._by_id

    def candidates(self, sentence: str, sentence_index: int = 0) -> list[MatchSpan]:
        """Every per-template candidate before overlap resolution.

        Each occurrence of a left literal contributes at most one candidate per
        template, using the closest right literal within the gap bounds.
        """
        if not self._templates:
            return []
        found: list[MatchSpan] = []
        nxt: list[int] | None = None
        for end, no in self._index.scan(sentence):
            if nxt is None:
                nxt = _next_terminal(sentence)
            limit = nxt[end]
            start = end - len(self._left_literals[no])
            for t in self._groups[no]:
                lo = end + t.gap_min
                hi = min(end + t.gap_max, limit)
                if lo > hi:
                    continue
                pos = sentence.find(t.right, lo, hi + len(t.right))
                if pos >= 0:
                    found.append(
                        MatchSpan((start, end), (pos, pos + len(t.right)), t.id, sentence_index)
                    )
        return found

    def find_matches(self, sentence: str, sentence_index: int = 0) -> list[MatchSpan]:
        return resolve_overlaps(self.candidates(sentence, sentence_index), self._lengths)


def compile_set(templates: Iterable[Template]) -> TemplateSet:
    return TemplateSet(templates)


def find_matches(tset: TemplateSet, sentence: str, sentence_index: int = 0) -> list[MatchSpan]:
    return tset.find_matches(sentence, sentence_index)


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def resolve_random(template_id: str, sentence: str, start: int, rng_key: int) -> CorrectiveAction:
    """Keyed coin flip for the random action: even hash deletes the left part."""
    h = fnv1a_64(f"{template_id}{sentence}{start}".encode("utf-8")) ^ (rng_key & MASK64)
    return CorrectiveAction.LEFT if h % 2 == 0 else CorrectiveAction.RIGHT


def _check_span(sentence: str, m: MatchSpan, template: Template | None) -> None:
    (ls, le), (rs, re_) = m.left_span, m.right_span
    if not (0 <= ls <= le <= rs <= re_ <= len(sentence)):
        raise TemplateError(f"match span {m.left_span}/{m.right_span} out of bounds")
    if template is not None and (
        sentence[ls:le] != template.left or sentence[rs:re_] != template.right
    ):
        raise TemplateError(f"match for {m.template_id!r} does not line up with the sentence")


def resolve_action(sentence: str, m: MatchSpan, action: CorrectiveAction, rng_key: int = 0) -> CorrectiveAction:
    if action is CorrectiveAction.RANDOM:
        return resolve_random(m.template_id, sentence, m.start, rng_key)
    return action


def apply_action(
    sentence: str,
    m: MatchSpan,
    action: CorrectiveAction,
    rng_key: int = 0,
    template: Template | None = None,
) -> str:
    """Delete the left or right literal of ``m`` from ``sentence``."""
    if action is None:
        raise TemplateError(f"template {m.template_id!r} has no corrective action")
    _check_span(sentence, m, template)
    side = resolve_action(sentence, m, action, rng_key)
    start, end = m.left_span if side is CorrectiveAction.LEFT else m.right_span
    return sentence[:start] + sentence[end:]


@dataclass(frozen=True)
class AppliedCorrection:
    template_id: str
    action: CorrectiveAction
    resolved: CorrectiveAction
    span: MatchSpan


def apply_correction(
    tset: TemplateSet,
    sentence: str,
    rng_key: int = 0,
    force: CorrectiveAction | None = None,
    sentence_index: int = 0,
) -> tuple[str, list[AppliedCorrection]]:
    """Match once on the original sentence, then delete right-to-left.

    ``force`` replaces every template's stored action.  The corrected output is
    not re-matched.
    """
    matches = tset.find_matches(sentence, sentence_index)
    plan: list[AppliedCorrection] = []
    for m in matches:
        action = force or tset[m.template_id].action
        if action is None:
            raise TemplateError(f"template {m.template_id!r} has no corrective action")
        plan.append(AppliedCorrection(m.template_id, action, resolve_action(sentence, m, action, rng_key), m))
    out = sentence
    for step in reversed(plan):
        start, end = step.span.left_span if step.resolved is CorrectiveAction.LEFT else step.span.right_span
        out = out[:start] + out[end:]
    return out, plan


# -- template files ---------------------------------------------------------

_FILE_KEYS = (
    "id",
    "left",
    "right",
    "gap_min",
    "gap_max",
    "action",
    "dppl_left",
    "dppl_right",
    "support",
    "source",
)


def template_from_dict(obj: dict[str, Any]) -> Template:
    try:
        return Template(
            id=str(obj["id"]),
            left=obj["left"],
            right=obj["right"],
            gap_min=int(obj.get("gap_min", GAP_MIN_DEFAULT)),
            gap_max=int(obj.get("gap_max", GAP_MAX_DEFAULT)),
            action=CorrectiveAction.parse(obj.get("action")),
            dppl_left=obj.get("dppl_left"),
            dppl_right=obj.get("dppl_right"),
            support=obj.get("support"),
            source=obj.get("source") or "",
            extra={k: v for k, v in obj.items() if k not in _FILE_KEYS},
        )
    except KeyError as exc:
        raise TemplateError(f"template record missing key {exc.args[0]!r}") from None
    except (TypeError, AttributeError) as exc:
        raise TemplateError(f"malformed template record: {exc}") from None


def template_to_dict(t: Template) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": t.id,
        "left": t.left,
        "right": t.right,
        "gap_min": t.gap_min,
        "gap_max": t.gap_max,
        "action": t.action.value if t.action else None,
        "dppl_left": t.dppl_left,
        "dppl_right": t.dppl_right,
        "support": t.support,
        "source": t.source,
    }
    obj.update(t.extra)
    return obj


def read_templates(path: str | Path) -> list[Template]:
    templates = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TemplateError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise TemplateError(f"{path}:{lineno}: expected a JSON object")
            try:
                templates.append(template_from_dict(obj))
            except TemplateError as exc:
                raise TemplateError(f"{path}:{lineno}: {exc}") from None
    return templates


def dump_templates(templates: Iterable[Template]) -> str:
    return "".join(
        json.dumps(template_to_dict(t), ensure_ascii=False) + "\n" for t in templates
    )


def write_templates(path: str | Path, templates: Iterable[Template]) -> None:
    Path(path).write_text(dump_templates(templates), encoding="utf-8")
