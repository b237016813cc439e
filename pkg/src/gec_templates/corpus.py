"""Sentence segmentation and streaming corpus readers."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterator

_SENTENCE = re.compile(r"[^。！？]*[。！？]|[^。！？]+")
_NEWLINE = re.compile(r"\r\n|\r|\n")


class CorpusError(OSError):
    pass


def segment_line(line: str) -> list[str]:
    return [s for s in _SENTENCE.findall(line) if s.strip()]


def segment(text: str) -> list[str]:
    """Split after every 。！？ and at newlines; whitespace-only pieces are dropped.

    Newlines themselves are delimiters and never appear in a sentence.
    """
    out: list[str] = []
    for line in _NEWLINE.split(text):
        out.extend(segment_line(line))
    return out


def corpus_files(path: str | Path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted((f for f in p.iterdir() if f.suffix == ".txt" and f.is_file()), key=lambda f: f.name)
    if p.is_file():
        return [p]
    raise CorpusError(f"corpus path {str(p)!r} does not exist")


class SentenceStream:
    """Re-iterable, lazily read stream of sentences from a file or a directory of ``.txt`` files.

    Each iteration reads the files again line by line; nothing is held in memory
    beyond the current line.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.files = corpus_files(path)

    def __iter__(self) -> Iterator[str]:
        for f in self.files:
            try:
                with open(f, encoding="utf-8", errors="strict", newline=None) as fh:
                    for line in fh:
                        yield from segment_line(line.rstrip("\n"))
            except UnicodeDecodeError as exc:
                raise CorpusError(f"{f}: invalid UTF-8 at byte {exc.start}") from None
            except OSError as exc:
                raise CorpusError(f"{f}: {exc.strerror or exc}") from None


def open_corpus(path: str | Path) -> SentenceStream:
    return SentenceStream(path)


def read_lines(path: str | Path) -> list[str]:
    """Line-per-sentence file as a list, without line terminators."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: invalid UTF-8 at byte {exc.start}") from None
    except OSError as exc:
        raise CorpusError(f"{path}: {exc.strerror or exc}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line[:-1] if line.endswith("\r") else line for line in lines]
