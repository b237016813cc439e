"""Command-line entry point: mine, lm, select-actions, correct, evaluate, stats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 external-command failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import subprocess
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Callable, Sequence

from . import evaluation, lm, miner
from .corpus import CorpusError, open_corpus, read_lines
from .selector import SelectorConfig, apply_decisions, select_actions_batch, summarize, validate_templates
from .template import (
    CorrectiveAction,
    TemplateError,
    TemplateSet,
    apply_correction,
    dump_templates,
    read_templates,
)

log = logging.getLogger("gec_templates")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ExternalCommandError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _need(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=False) + "\n"


def run_model_cmd(command: str, lines: Sequence[str]) -> list[str]:
    """Pipe ``lines`` through an external line filter, one output line per input line."""
    try:
        proc = subprocess.run(
            shlex.split(command),
            input="".join(line + "\n" for line in lines),
            capture_output=True,
            text=True,
            encoding="utf-8",
        )
    except OSError as exc:
        raise ExternalCommandError(f"cannot run model command {command!r}: {exc}") from None
    if proc.returncode != 0:
        raise ExternalCommandError(
            f"model command exited with status {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    out = proc.stdout.split("\n")
    if out and out[-1] == "":
        out.pop()
    if len(out) != len(lines):
        raise ExternalCommandError(f"model command returned {len(out)} lines for {len(lines)} input lines")
    return out


def _open_scorer(args: argparse.Namespace) -> lm.LanguageModel:
    if getattr(args, "scorer_cmd", None):
        try:
            return lm.ExternalScorer(args.scorer_cmd)
        except OSError as exc:
            raise ExternalCommandError(f"cannot start scorer {args.scorer_cmd!r}: {exc}") from None
    if getattr(args, "model", None):
        return lm.load_model(args.model)
    raise UsageError("give --model or --scorer-cmd")


def _close(model: object) -> None:
    close = getattr(model, "close", None)
    if close is not None:
        close()


# -- commands -------------------------------------------------------------------


def cmd_mine(args: argparse.Namespace) -> int:
    _need(args, "input", "output")
    patterns = miner.load_patterns(args.patterns) if args.patterns else miner.load_default_patterns()
    try:
        result = miner.mine(miner.DirectoryPages(args.input), patterns)
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read pages under {args.input}: {exc}") from None
    _write(args.output, dump_templates(result.templates))
    print(
        f"pages scanned: {result.pages}\tquestions matched: {result.questions}\t"
        f"templates emitted: {len(result.templates)}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_lm_train(args: argparse.Namespace) -> int:
    _need(args, "corpus", "output")
    try:
        model = lm.train_ngram(open_corpus(args.corpus), order=args.order, k=args.k)
    except ValueError as exc:
        raise CorpusError(str(exc)) from None
    model.save(args.output)
    print(f"trained order-{model.order} model, {model.vocab_size} symbols", file=sys.stderr)
    return EXIT_OK


def cmd_lm_score(args: argparse.Namespace) -> int:
    sentences = read_lines(args.input) if args.input else [line.rstrip("\r\n") for line in sys.stdin]
    model = _open_scorer(args)
    try:
        out = [f"{lm.perplexity(model, s)!r}\t{s}\n" for s in sentences]
    finally:
        _close(model)
    _write(args.output, "".join(out))
    return EXIT_OK


def cmd_lm_serve(args: argparse.Namespace) -> int:
    _need(args, "model")
    lm.serve(lm.load_model(args.model), sys.stdin, sys.stdout)
    return EXIT_OK


def cmd_select_actions(args: argparse.Namespace) -> int:
    _need(args, "templates", "corpus", "output")
    cfg = SelectorConfig(n=args.n, alpha=args.alpha, rng_key=args.seed)
    templates = read_templates(args.templates)
    TemplateSet(templates)  # reject duplicate ids up front
    corpus = open_corpus(args.corpus)
    model = _open_scorer(args)
    try:
        decisions = select_actions_batch(templates, corpus, model, cfg)
    finally:
        _close(model)
    _write(args.output, dump_templates(apply_decisions(templates, decisions)))
    summary = _json(summarize(decisions))
    if args.summary:
        _write(args.summary, summary)
    sys.stderr.write(summary)
    return EXIT_OK


def _correct_lines(tset: TemplateSet, lines: Sequence[str], seed: int, force: CorrectiveAction | None):
    out, log_ = [], []
    for i, line in enumerate(lines):
        fixed, applied = apply_correction(tset, line, rng_key=seed, force=force, sentence_index=i)
        out.append(fixed)
        log_.append(applied)
    return out, log_


def cmd_correct(args: argparse.Namespace) -> int:
    _need(args, "templates", "input", "output")
    if args.stage not in ("pre", "post", "both"):
        raise UsageError(f"--stage must be pre, post or both, not {args.stage!r}")
    if args.stage in ("post", "both") and not args.model_cmd:
        raise UsageError(f"--stage {args.stage} needs --model-cmd")
    force = CorrectiveAction.parse(args.force_action) if args.force_action else None
    tset = TemplateSet(read_templates(args.templates))
    lines = read_lines(args.input)
    logs = {}
    if args.stage in ("pre", "both"):
        lines, logs["pre"] = _correct_lines(tset, lines, args.seed, force)
    if args.model_cmd:
        lines = run_model_cmd(args.model_cmd, lines)
    if args.stage in ("post", "both"):
        lines, logs["post"] = _correct_lines(tset, lines, args.seed, force)
    _write(args.output, "".join(line + "\n" for line in lines))
    if args.report:
        report = {"stage": args.stage}
        report.update({k: evaluation.usage_report(v).to_dict() for k, v in logs.items()})
        _write(args.report, _json(report))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    _need(args, "src", "hyp")
    if bool(args.ref) == bool(args.gold):
        raise UsageError("give exactly one of --ref and --gold")
    sources = read_lines(args.src)
    hyps = read_lines(args.hyp)
    if args.gold:
        gold_sources, gold = evaluation.read_gold(args.gold)
        if gold_sources != sources[: len(gold_sources)] or len(gold_sources) != len(sources):
            raise ValueError("gold file sources do not line up with --src")
        report = evaluation.score(sources, hyps, beta=args.beta, gold=gold)
    else:
        report = evaluation.score(sources, hyps, read_lines(args.ref), beta=args.beta)
    _write(args.output, _json(report.to_dict()))
    print(report.table(), file=sys.stderr)
    return EXIT_OK


def action_stats(templates) -> dict[str, dict[str, float]]:
    counts = Counter(t.action.value if t.action else "unset" for t in templates)
    total = sum(counts.values())
    keys = ["left", "right", "random"] + (["unset"] if counts["unset"] else [])
    return {
        k: {"count": counts[k], "proportion": round(counts[k] / total * 100, 2) if total else 0.0}
        for k in keys
    }


def cmd_stats(args: argparse.Namespace) -> int:
    _need(args, "templates")
    templates = read_templates(args.templates)
    stats = action_stats(templates)
    if args.json:
        sys.stdout.write(_json({"total": len(templates), "actions": stats}))
    else:
        for k, v in stats.items():
            print(f"{k}\t{v['count']}\t{v['proportion']:.2f}%")
        print(f"total\t{len(templates)}")
    problems = validate_templates(templates, args.alpha)
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="gec-templates", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option defaults; flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    leaves: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("mine", help="extract templates from question-page dumps")
    p.add_argument("--input", help="directory of .txt/.html page dumps")
    p.add_argument("--output", help="template JSONL to write")
    p.add_argument("--patterns", help="JSONL of custom search patterns (id, prefix, suffix)")
    p.set_defaults(func=cmd_mine)
    leaves["mine"] = p

    p = sub.add_parser("lm", help="train or query a language model")
    lsub = p.add_subparsers(dest="lm_command", parser_class=_Parser)
    q = lsub.add_parser("train", help="train a character n-gram model")
    q.add_argument("--corpus", help="text file or directory of .txt files")
    q.add_argument("--output", help="model file to write")
    q.add_argument("--order", type=int, default=3)
    q.add_argument("--k", type=float, default=0.01, help="add-k smoothing constant")
    q.set_defaults(func=cmd_lm_train)
    leaves["lm train"] = q
    q = lsub.add_parser("score", help="print <ppl>\\t<sentence> per input line")
    q.add_argument("--model")
    q.add_argument("--scorer-cmd", help="external scorer speaking the line protocol")
    q.add_argument("--input", help="sentences, one per line (default: stdin)")
    q.add_argument("--output", default="-")
    q.set_defaults(func=cmd_lm_score)
    leaves["lm score"] = q
    q = lsub.add_parser("serve", help="answer scorer-protocol requests on stdin/stdout")
    q.add_argument("--model")
    q.set_defaults(func=cmd_lm_serve)
    leaves["lm serve"] = q

    p = sub.add_parser("select-actions", help="choose each template's corrective action")
    p.add_argument("--templates")
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--scorer-cmd")
    p.add_argument("-N", "--n", type=int, default=20, help="sentences sampled per template")
    p.add_argument("--alpha", type=float, default=5.0, help="decision margin on PPL reduction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="enriched template JSONL")
    p.add_argument("--summary", help="JSON file for per-action counts")
    p.set_defaults(func=cmd_select_actions)
    leaves["select-actions"] = p

    p = sub.add_parser("correct", help="apply templates around an optional model command")
    p.add_argument("--templates")
    p.add_argument("--input")
    p.add_argument("--output", default="-")
    p.add_argument("--stage", default="pre", choices=["pre", "post", "both"])
    p.add_argument("--model-cmd", help="line filter standing in for the correction model")
    p.add_argument("--force-action", choices=[a.value for a in CorrectiveAction])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="JSON file for template usage counts")
    p.set_defaults(func=cmd_correct)
    leaves["correct"] = p

    p = sub.add_parser("evaluate", help="precision / recall / F-beta against references")
    p.add_argument("--src")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--gold", help="annotated gold JSONL instead of --ref")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_evaluate)
    leaves["evaluate"] = p

    p = sub.add_parser("stats", help="count and proportion of each action in a template file")
    p.add_argument("--templates")
    p.add_argument("--json", action="store_true")
    p.add_argument("--alpha", type=float, default=5.0, help="margin used to cross-check stored evidence")
    p.set_defaults(func=cmd_stats)
    leaves["stats"] = p
    return parser, leaves


def _load_config(argv: Sequence[str]) -> dict[str, Any]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, leaves = build_parser()
        config = _load_config(argv)
        if config:
            for leaf in leaves.values():
                known = {a.dest for a in leaf._actions}
                leaf.set_defaults(**{k: v for k, v in config.items() if k in known})
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        func: Callable[[argparse.Namespace], int] | None = getattr(args, "func", None)
        if func is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExternalCommandError, lm.ScorerError) as exc:
        print(f"external command failed: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    except (TemplateError, lm.ModelFormatError, CorpusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
