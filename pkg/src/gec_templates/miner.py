"""Harvest candidate templates from dumped question pages.

A search pattern is a question frame such as ``A...B是语法错误吗？``; the two
slots around the ellipsis become the template's left and right literals.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from .template import TERMINALS, Template

SEPARATORS = ("……", "。。。", "...", "…")
QUESTION_MARKS = "？?"
SLOT_MAX = 10

_QUOTES = "“”\"'『』「」‘’"
# characters that never belong to a slot; quotes may surround slots but not sit inside
_SLOT_EXCLUDED = "\\s。！？!?，,、；;：:…" + _QUOTES


@dataclass(frozen=True)
class SearchPattern:
    id: str
    suffix: str
    prefix: str = ""

    def __post_init__(self) -> None:
        if not self.suffix:
            raise ValueError(f"search pattern {self.id!r} needs a nonempty suffix")

    def render(self, left: str, right: str, separator: str = "...", question_mark: str = "？") -> str:
        """Build a question line that this pattern matches with slots ``left``/``right``."""
        return f"{self.prefix}{left}{separator}{right}{self._stem}{question_mark}"

    @property
    def _stem(self) -> str:
        return self.suffix.rstrip(QUESTION_MARKS)

    @cached_property
    def regex(self) -> re.Pattern[str]:
        sep = "|".join(re.escape(s) for s in SEPARATORS)
        slot = f"[^{_SLOT_EXCLUDED}]{{1,{SLOT_MAX}}}?"
        tail = re.escape(self._stem)
        if self.suffix != self._stem:
            tail += f"[{QUESTION_MARKS}]"
        pad = f"[\\s{re.escape(_QUOTES)}]*"
        return re.compile(
            f"{re.escape(self.prefix)}{pad}(?P<a>{slot}){pad}(?:{sep}){pad}(?P<b>{slot}){pad}{tail}"
        )


@dataclass(frozen=True)
class CandidateTemplate:
    left: str
    right: str
    pattern_id: str
    source_line: str


def load_default_patterns() -> list[SearchPattern]:
    return [
        SearchPattern("p1", "是语法错误吗？"),
        SearchPattern("p2", "是病句吗？"),
        SearchPattern("p3", "是语义重复吗？"),
        SearchPattern("p4", "是句式杂糅吗？"),
        SearchPattern("p5", "这句话错了吗？"),
    ]


def load_patterns(path: str | Path) -> list[SearchPattern]:
    """Custom patterns from JSON Lines with keys ``id``, ``prefix``, ``suffix``."""
    patterns = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                patterns.append(SearchPattern(str(obj["id"]), obj["suffix"], obj.get("prefix") or ""))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad search pattern ({exc})") from None
    return patterns


def trim(part: str) -> str:
    """Strip whitespace, quotation marks and punctuation from both ends."""
    start, end = 0, len(part)
    while start < end and _is_trimmable(part[start]):
        start += 1
    while end > start and _is_trimmable(part[end - 1]):
        end -= 1
    return part[start:end]


def _is_trimmable(ch: str) -> bool:
    return ch.isspace() or ch in _QUOTES or unicodedata.category(ch).startswith("P")


def extract_candidates(page_text: str, patterns: Iterable[SearchPattern]) -> list[CandidateTemplate]:
    patterns = list(patterns)
    found: list[CandidateTemplate] = []
    for line in page_text.splitlines():
        hits = []
        for order, p in enumerate(patterns):
            for m in p.regex.finditer(line):
                hits.append((m.start(), order, p.id, m.group("a"), m.group("b")))
        hits.sort()
        for _, _, pid, a, b in hits:
            left, right = trim(a), trim(b)
            if left and right:
                found.append(CandidateTemplate(left, right, pid, line))
    return found


def normalize_and_dedupe(candidates: Iterable[CandidateTemplate]) -> list[Template]:
    seen: set[tuple[str, str]] = set()
    out: list[Template] = []
    for c in candidates:
        left, right = trim(c.left), trim(c.right)
        if not left or not right:
            continue
        if TERMINALS.intersection(left + right) or "\n" in left + right:
            continue
        key = (left, right)
        if key in seen:
            continue
        seen.add(key)
        out.append(Template(id=f"t{len(out) + 1:06d}", left=left, right=right, source=c.pattern_id))
    return out


# -- page ingestion -------------------------------------------------------------

_TAG = re.compile(r"<[^>]*>")


def strip_markup(text: str) -> str:
    return _TAG.sub("", text)


class PageSource(Protocol):
    def pages(self) -> Iterator[tuple[str, str]]: ...


class DirectoryPages:
    """``.txt`` and ``.html`` page dumps in a directory, in name order."""

    suffixes = (".txt", ".html", ".htm")

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"page directory {str(self.root)!r} does not exist")

    def pages(self) -> Iterator[tuple[str, str]]:
        files = sorted(
            (f for f in self.root.rglob("*") if f.is_file() and f.suffix.lower() in self.suffixes),
            key=lambda f: f.relative_to(self.root).as_posix(),
        )
        for f in files:
            text = f.read_text(encoding="utf-8")
            if f.suffix.lower() != ".txt":
                text = strip_markup(text)
            yield f.relative_to(self.root).as_posix(), text


@dataclass
class MineResult:
    templates: list[Template]
    pages: int
    questions: int


def mine(source: PageSource, patterns: Iterable[SearchPattern] | None = None) -> MineResult:
    patterns = list(patterns) if patterns is not None else load_default_patterns()
    candidates: list[CandidateTemplate] = []
    pages = 0
    for _, text in source.pages():
        pages += 1
        candidates.extend(extract_candidates(text, patterns))
    return MineResult(normalize_and_dedupe(candidates), pages, len(candidates))
