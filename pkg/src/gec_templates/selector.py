"""Pick each template's corrective action from perplexity evidence.

For a template we take the first ``N`` corpus sentences it matches, delete the
left and then the right literal, and compare the average perplexity drop of
the two deletions.  A side wins only when its drop exceeds the other's by more
than ``alpha``; otherwise the template gets the random action.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .lm import LanguageModel
from .template import CorrectiveAction, MatchSpan, Template, TemplateSet, apply_action

log = logging.getLogger(__name__)

Sample = tuple[str, MatchSpan]


@dataclass(frozen=True)
class SelectorConfig:
    n: int = 20
    alpha: float = 5.0
    rng_key: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("N must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class ActionDecision:
    template_id: str
    dppl_left: float | None
    dppl_right: float | None
    support: int
    chosen: CorrectiveAction
    error: str | None = None

    @property
    def insufficient_evidence(self) -> bool:
        return self.support == 0


def select_action(dppl_left: float, dppl_right: float, alpha: float) -> CorrectiveAction:
    if dppl_left - dppl_right > alpha:
        return CorrectiveAction.LEFT
    if dppl_right - dppl_left > alpha:
        return CorrectiveAction.RIGHT
    return CorrectiveAction.RANDOM


def sample_matching_sentences(corpus: Iterable[str], template: Template, n: int) -> list[Sample]:
    if n < 1:
        raise ValueError("N must be >= 1")
    tset = TemplateSet([template])
    out: list[Sample] = []
    for sentence in corpus:
        matches = tset.find_matches(sentence)
        if matches:
            out.append((sentence, matches[0]))
            if len(out) == n:
                break
    return out


def collect_samples(corpus: Iterable[str], templates: Sequence[Template], n: int) -> dict[str, list[Sample]]:
    """Single-pass equivalent of ``sample_matching_sentences`` for many templates."""
    tset = TemplateSet(templates)
    samples: dict[str, list[Sample]] = {t.id: [] for t in templates}
    open_ids = set(samples)
    for sentence in corpus:
        if not open_ids:
            break
        first: dict[str, MatchSpan] = {}
        for m in tset.candidates(sentence):
            if m.template_id in open_ids and (
                m.template_id not in first or m.start < first[m.template_id].start
            ):
                first[m.template_id] = m
        for tid, m in first.items():
            bucket = samples[tid]
            bucket.append((sentence, m))
            if len(bucket) == n:
                open_ids.discard(tid)
    return samples


def delta_ppl(
    model: LanguageModel,
    samples: Sequence[Sample],
    action: CorrectiveAction,
    cache: dict[str, float] | None = None,
) -> float:
    """Mean of ``PPL(before) - PPL(after)`` over the samples for one deletion side."""
    if action not in (CorrectiveAction.LEFT, CorrectiveAction.RIGHT):
        raise ValueError("delta_ppl needs the left or right action")
    if not samples:
        raise ValueError("delta_ppl needs at least one sample")
    cache = {} if cache is None else cache

    def ppl(s: str) -> float:
        if s not in cache:
            cache[s] = model.score(s).perplexity
        return cache[s]

    total = 0.0
    for sentence, m in samples:
        total += ppl(sentence) - ppl(apply_action(sentence, m, action))
    return total / len(samples)


def decide(template: Template, samples: Sequence[Sample], model: LanguageModel, cfg: SelectorConfig, cache: dict[str, float] | None = None) -> ActionDecision:
    if not samples:
        return ActionDecision(template.id, None, None, 0, CorrectiveAction.RANDOM)
    left = delta_ppl(model, samples, CorrectiveAction.LEFT, cache)
    right = delta_ppl(model, samples, CorrectiveAction.RIGHT, cache)
    return ActionDecision(template.id, left, right, len(samples), select_action(left, right, cfg.alpha))


def select_actions_batch(
    templates: Sequence[Template],
    corpus: Iterable[str],
    model: LanguageModel,
    cfg: SelectorConfig = SelectorConfig(),
) -> list[ActionDecision]:
    """One decision per template, in input order.

    A scorer failure only affects the template being scored; it comes back
    with zero support and the error message attached.
    """
    samples = collect_samples(corpus, templates, cfg.n)
    cache: dict[str, float] = {}
    decisions = []
    for t in templates:
        try:
            d = decide(t, samples[t.id], model, cfg, cache)
        except Exception as exc:
            log.warning("scoring failed for template %s: %s", t.id, exc)
            d = ActionDecision(t.id, None, None, 0, CorrectiveAction.RANDOM, error=str(exc))
        decisions.append(d)
    return decisions


def _clean(x: float | None) -> float | None:
    return None if x is None or math.isnan(x) else x


def apply_decisions(templates: Sequence[Template], decisions: Sequence[ActionDecision]) -> list[Template]:
    """Templates with action, dppl values and support filled in from ``decisions``."""
    by_id = {d.template_id: d for d in decisions}
    out = []
    for t in templates:
        d = by_id[t.id]
        extra = dict(t.extra)
        extra["insufficient_evidence"] = d.insufficient_evidence
        if d.error:
            extra["error"] = d.error
        else:
            extra.pop("error", None)
        out.append(
            replace(
                t,
                action=d.chosen,
                dppl_left=_clean(d.dppl_left),
                dppl_right=_clean(d.dppl_right),
                support=d.support,
                extra=extra,
            )
        )
    return out


def summarize(decisions: Iterable[ActionDecision]) -> dict[str, int]:
    """Counts per chosen action; zero-support templates also count under ``insufficient``."""
    counts: Counter = Counter()
    for d in decisions:
        counts[d.chosen.value] += 1
        counts["insufficient"] += d.insufficient_evidence
    return {key: counts[key] for key in ("left", "right", "random", "insufficient")}


def validate_templates(templates: Iterable[Template], alpha: float = 5.0) -> list[str]:
    """Problems where a stored action disagrees with its stored perplexity evidence."""
    problems = []
    for t in templates:
        if t.action is None or t.dppl_left is None or t.dppl_right is None:
            continue
        expected = select_action(t.dppl_left, t.dppl_right, alpha)
        if t.action in (CorrectiveAction.LEFT, CorrectiveAction.RIGHT) and t.action is not expected:
            problems.append(
                f"{t.id}: action {t.action.value} but evidence "
                f"({t.dppl_left:.4g}, {t.dppl_right:.4g}) at alpha={alpha} gives {expected.value}"
            )
    return problems
