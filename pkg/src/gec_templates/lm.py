"""Sentence scoring for perplexity: a character n-gram model and an external-scorer client.

Anything with ``score(sentence) -> ScoreResult`` works as a language model.
Tokens are code points; ``order - 1`` BOS symbols pad the context and one EOS
closes the sentence.  EOS is counted in the token count, BOS is not.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Protocol

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

MAGIC = "NGRAM"
UNIFORM_MAGIC = "UNIFORM"
VERSION = "v1"

# special symbols as they appear in model files
_FILE_SPECIALS = {BOS: "\\x01", EOS: "\\x02"}
_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}


class ModelFormatError(ValueError):
    pass


class ScorerError(RuntimeError):
    """Scoring failed, e.g. the external scorer answered ``err``."""


@dataclass(frozen=True)
class ScoreResult:
    total_nll: float
    token_count: int

    @property
    def perplexity(self) -> float:
        return math.exp(self.total_nll / self.token_count)


class LanguageModel(Protocol):
    def score(self, sentence: str) -> ScoreResult: ...


def tokenize(sentence: str, order: int = 1) -> list[str]:
    return [BOS] * (order - 1) + list(sentence) + [EOS]


class NgramModel:
    """Add-k smoothed character n-gram model.

    ``p(x | ctx) = (c(ctx, x) + k) / (c(ctx) + k * (|V| + 2))`` where the two
    extra outcomes are EOS and UNK.
    """

    def __init__(self, order: int, k: float, counts: dict[tuple[str, ...], Counter], vocabulary: Iterable[str]):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not k > 0:
            raise ValueError("smoothing k must be > 0")
        self.order = order
        self.k = float(k)
        self.counts = counts
        self.vocabulary = frozenset(vocabulary)
        self.context_totals = {ctx: sum(c.values()) for ctx, c in counts.items()}
        self._denom_extra = self.k * (len(self.vocabulary) + 2)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def outcomes(self) -> list[str]:
        return sorted(self.vocabulary) + [EOS, UNK]

    def prob(self, context: tuple[str, ...], symbol: str) -> float:
        c = self.counts.get(context)
        hits = c[symbol] if c is not None else 0
        return (hits + self.k) / (self.context_totals.get(context, 0) + self._denom_extra)

    def _map(self, tok: str) -> str:
        if tok in (BOS, EOS) or tok in self.vocabulary:
            return tok
        return UNK

    def score(self, sentence: str) -> ScoreResult:
        toks = [self._map(t) for t in tokenize(sentence, self.order)]
        h = self.order - 1
        nll = 0.0
        for i in range(h, len(toks)):
            nll -= math.log(self.prob(tuple(toks[i - h : i]), toks[i]))
        return ScoreResult(nll, len(toks) - h)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NgramModel):
            return NotImplemented
        return (self.order, self.k, self.vocabulary, self.counts) == (
            other.order,
            other.k,
            other.vocabulary,
            other.counts,
        )

    # -- serialization --------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{MAGIC} {VERSION} {self.order} {self.k!r} {self.vocab_size}"]
        rows = []
        for ctx, c in self.counts.items():
            ectx = "".join(_encode_symbol(s) for s in ctx)
            for sym, n in c.items():
                if n:
                    rows.append((ectx, _encode_symbol(sym), n))
        rows.sort()
        lines.extend(f"{c}\t{s}\t{n}" for c, s, n in rows)
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


class UniformModel:
    """Assigns ``1 / size`` to every token; a test fixture for perplexity identities."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("uniform model needs size >= 1")
        self.size = size

    def score(self, sentence: str) -> ScoreResult:
        t = len(sentence) + 1
        return ScoreResult(t * math.log(self.size), t)

    def dumps(self) -> str:
        return f"{UNIFORM_MAGIC} {VERSION} {self.size}\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def train_ngram(corpus: Iterable[str], order: int = 3, k: float = 0.01) -> NgramModel:
    if order < 1:
        raise ValueError("order must be >= 1")
    if not k > 0:
        raise ValueError("smoothing k must be > 0")
    counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    vocab: set[str] = set()
    h = order - 1
    seen = 0
    for sentence in corpus:
        seen += 1
        vocab.update(sentence)
        toks = tokenize(sentence, order)
        for i in range(h, len(toks)):
            counts[tuple(toks[i - h : i])][toks[i]] += 1
    if not seen:
        raise ValueError("cannot train on an empty corpus")
    return NgramModel(order, k, dict(counts), vocab)


def score(model: LanguageModel, sentence: str) -> ScoreResult:
    return model.score(sentence)


def perplexity(model: LanguageModel, sentence: str) -> float:
    return model.score(sentence).perplexity


# -- model files -------------------------------------------------------------


def _encode_symbol(sym: str) -> str:
    if sym in _FILE_SPECIALS:
        return _FILE_SPECIALS[sym]
    return _ESCAPES.get(sym, sym)


_DECODE = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r", "x01": BOS, "x02": EOS}


def _decode_symbols(field_text: str) -> list[str]:
    out = []
    i = 0
    while i < len(field_text):
        ch = field_text[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if field_text.startswith("x01", i + 1) or field_text.startswith("x02", i + 1):
            out.append(_DECODE[field_text[i + 1 : i + 4]])
            i += 4
        elif i + 1 < len(field_text) and field_text[i + 1] in _DECODE:
            out.append(_DECODE[field_text[i + 1]])
            i += 2
        else:
            raise ModelFormatError(f"bad escape in {field_text!r}")
    return out


def loads_model(text: str) -> NgramModel | UniformModel:
    lines = text.split("\n")
    header = lines[0].split(" ")
    if header[:2] == [UNIFORM_MAGIC, VERSION] and len(header) == 3:
        try:
            return UniformModel(int(header[2]))
        except ValueError as exc:
            raise ModelFormatError(f"bad uniform header: {exc}") from None
    if len(header) != 5 or header[:2] != [MAGIC, VERSION]:
        raise ModelFormatError(f"unrecognised model header {lines[0]!r}")
    try:
        order, k, vocab_size = int(header[2]), float(header[3]), int(header[4])
    except ValueError:
        raise ModelFormatError(f"bad model header {lines[0]!r}") from None
    counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    vocab: set[str] = set()
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ModelFormatError(f"line {lineno}: expected 3 tab-separated fields")
        ctx = tuple(_decode_symbols(parts[0]))
        sym = _decode_symbols(parts[1])
        if len(ctx) != order - 1 or len(sym) != 1:
            raise ModelFormatError(f"line {lineno}: context/symbol does not fit order {order}")
        try:
            n = int(parts[2])
        except ValueError:
            raise ModelFormatError(f"line {lineno}: bad count {parts[2]!r}") from None
        counts[ctx][sym[0]] += n
        if sym[0] != EOS:
            vocab.add(sym[0])
    if len(vocab) != vocab_size:
        raise ModelFormatError(f"header says {vocab_size} symbols, counts define {len(vocab)}")
    try:
        return NgramModel(order, k, dict(counts), vocab)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def load_model(path: str | Path) -> NgramModel | UniformModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))


# -- external scorer protocol -------------------------------------------------


def format_response(result: ScoreResult | None = None, error: str | None = None) -> str:
    if error is not None:
        return "err " + " ".join(error.split())
    assert result is not None
    return f"ok {result.total_nll!r} {result.token_count}"


def parse_response(line: str) -> ScoreResult:
    line = line.rstrip("\n")
    if line.startswith("err"):
        raise ScorerError(line[3:].strip() or "scorer error")
    parts = line.split(" ")
    if len(parts) != 3 or parts[0] != "ok":
        raise ScorerError(f"malformed scorer response {line!r}")
    try:
        nll, count = float(parts[1]), int(parts[2])
    except ValueError:
        raise ScorerError(f"malformed scorer response {line!r}") from None
    if count < 1:
        raise ScorerError(f"scorer reported token_count {count}")
    return ScoreResult(nll, count)


def serve(model: LanguageModel, stdin: IO[str], stdout: IO[str]) -> int:
    """Answer one response line per request line until EOF."""
    served = 0
    for line in stdin:
        sentence = line[:-1] if line.endswith("\n") else line
        try:
            stdout.write(format_response(model.score(sentence)) + "\n")
        except Exception as exc:  # report and keep serving
            stdout.write(format_response(error=f"{type(exc).__name__}: {exc}") + "\n")
        stdout.flush()
        served += 1
    return served


class ExternalScorer:
    """Client for a line-oriented scorer process or stream pair.

    Requests on one connection are serialized by a lock.
    """

    def __init__(self, command: str | list[str] | None = None, *, reader: IO[str] | None = None, writer: IO[str] | None = None):
        self._proc: subprocess.Popen | None = None
        if command is not None:
            argv = shlex.split(command) if isinstance(command, str) else list(command)
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
            reader, writer = self._proc.stdout, self._proc.stdin
        if reader is None or writer is None:
            raise ValueError("need a command or a reader/writer pair")
        self._reader = reader
        self._writer = writer
        self._lock = threading.Lock()

    def score(self, sentence: str) -> ScoreResult:
        if "\n" in sentence or "\r" in sentence:
            raise ScorerError("sentences sent to a scorer may not contain newlines")
        with self._lock:
            try:
                self._writer.write(sentence + "\n")
                self._writer.flush()
                line = self._reader.readline()
            except (BrokenPipeError, OSError, ValueError) as exc:
                raise ScorerError(f"scorer connection failed: {exc}") from None
        if not line:
            raise ScorerError("scorer closed the connection")
        return parse_response(line)

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def __enter__(self) -> ExternalScorer:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
