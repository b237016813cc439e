import json
import math
import shlex
import sys

import pytest

from gec_templates.cli import main
from gec_templates.lm import train_ngram
from gec_templates.template import Template, read_templates, write_templates

import synthetic

PY = shlex.quote(sys.executable)


@pytest.fixture
def run(capsys):
    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return _run


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def filter_cmd(tmp_path, body):
    script = write(tmp_path / "filter.py", "import sys\n" + body)
    return f"{PY} {shlex.quote(str(script))}"


# -- mine -------------------------------------------------------------------------


def test_mine(tmp_path, run):
    pages = tmp_path / "pages"
    pages.mkdir()
    write(pages / "q1.txt", "因为...为由是语法错误吗？\n")
    out = tmp_path / "t.jsonl"
    code, _, err = run("mine", "--input", pages, "--output", out)
    assert code == 0
    [t] = read_templates(out)
    assert t.pattern == "因为.*为由" and t.action is None and t.source == "p1"
    assert "templates emitted: 1" in err


def test_mine_empty_and_duplicates(tmp_path, run):
    empty = tmp_path / "empty"
    empty.mkdir()
    out = tmp_path / "t.jsonl"
    assert run("mine", "--input", empty, "--output", out)[0] == 0
    assert read_templates(out) == []
    dup = tmp_path / "dup"
    dup.mkdir()
    for i in range(3):
        write(dup / f"{i}.html", "<p>大约...左右是病句吗？</p>")
    assert run("mine", "--input", dup, "--output", out)[0] == 0
    assert [t.pattern for t in read_templates(out)] == ["大约.*左右"]


def test_mine_errors(tmp_path, run):
    assert run("mine", "--input", tmp_path / "nope", "--output", tmp_path / "o")[0] == 2
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "x.txt").write_bytes(b"\xff\xfe")
    assert run("mine", "--input", bad, "--output", tmp_path / "o")[0] == 2
    assert run("mine", "--input", bad)[0] == 1


# -- lm -------------------------------------------------------------------------------


def test_lm_train_and_score(tmp_path, run):
    corpus = write(tmp_path / "c.txt", "ab\nb\n")
    model = tmp_path / "m.ngram"
    assert run("lm", "train", "--corpus", corpus, "--order", 1, "--output", model)[0] == 0
    sentences = write(tmp_path / "s.txt", "ab\n")
    code, out, _ = run("lm", "score", "--model", model, "--input", sentences)
    assert code == 0
    ppl, sentence = out.rstrip("\n").split("\t")
    # unigram counts a:1 b:2 EOS:2 over 5 tokens, |V| + 2 = 4 outcomes
    expected = math.exp(-(math.log(1.01 / 5.04) + 2 * math.log(2.01 / 5.04)) / 3)
    assert sentence == "ab"
    assert float(ppl) == pytest.approx(expected, rel=1e-12)


def test_lm_score_uniform(tmp_path, run):
    model = write(tmp_path / "u.model", "UNIFORM v1 6\n")
    sentences = write(tmp_path / "s.txt", "他大约五岁左右。\n\nabc\n")
    code, out, _ = run("lm", "score", "--model", model, "--input", sentences)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 3
    assert all(float(line.split("\t")[0]) == pytest.approx(6, rel=1e-12) for line in lines)


def test_lm_score_via_scorer_cmd(tmp_path, run):
    m = train_ngram(["我们大约", "他大约五岁"], order=2)
    model = tmp_path / "m.ngram"
    m.save(model)
    sentences = write(tmp_path / "s.txt", "他大约五岁左右。\n我们\n")
    scorer = f"{PY} -m gec_templates lm serve --model {shlex.quote(str(model))}"
    direct = run("lm", "score", "--model", model, "--input", sentences)
    remote = run("lm", "score", "--scorer-cmd", scorer, "--input", sentences)
    assert direct[0] == remote[0] == 0
    assert direct[1] == remote[1]


def test_lm_errors(tmp_path, run):
    empty = write(tmp_path / "e.txt", "")
    assert run("lm", "train", "--corpus", empty, "--output", tmp_path / "m")[0] == 2
    bad = write(tmp_path / "bad.model", "NGRAM v1 x\n")
    s = write(tmp_path / "s.txt", "a\n")
    assert run("lm", "score", "--model", bad, "--input", s)[0] == 2
    failing = filter_cmd(tmp_path, "for line in sys.stdin:\n    print('err no model', flush=True)\n")
    assert run("lm", "score", "--scorer-cmd", failing, "--input", s)[0] == 3


# -- select-actions -----------------------------------------------------------------


@pytest.fixture
def selection_inputs(tmp_path):
    model = tmp_path / "lm.ngram"
    train_ngram(synthetic.lm_corpus(), order=2).save(model)
    templates, sentences = synthetic.planted(seed=8, count=4, side="left")
    templates.append(Template("nomatch", "乌有", "子虚"))
    tfile = tmp_path / "templates.jsonl"
    write_templates(tfile, templates)
    corpus = write(tmp_path / "corpus.txt", "\n".join(sentences) + "\n")
    return tfile, corpus, model


def test_select_actions(tmp_path, run, selection_inputs):
    tfile, corpus, model = selection_inputs
    out, summary = tmp_path / "out.jsonl", tmp_path / "summary.json"
    args = ["select-actions", "--templates", tfile, "--corpus", corpus, "--model", model, "--output", out, "--summary", summary]
    assert run(*args)[0] == 0
    records = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert [r["action"] for r in records] == ["left"] * 4 + ["random"]
    assert all(r["support"] == 20 and r["insufficient_evidence"] is False for r in records[:4])
    assert records[4]["insufficient_evidence"] is True and records[4]["support"] == 0
    assert json.loads(summary.read_text()) == {"left": 4, "right": 0, "random": 1, "insufficient": 1}
    first = out.read_bytes(), summary.read_bytes()
    assert run(*args)[0] == 0
    assert (out.read_bytes(), summary.read_bytes()) == first


def test_select_actions_with_external_scorer(tmp_path, run, selection_inputs):
    tfile, corpus, model = selection_inputs
    local, remote = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    scorer = f"{PY} -m gec_templates lm serve --model {shlex.quote(str(model))}"
    assert run("select-actions", "--templates", tfile, "--corpus", corpus, "--model", model, "--output", local)[0] == 0
    assert run("select-actions", "--templates", tfile, "--corpus", corpus, "--scorer-cmd", scorer, "--output", remote)[0] == 0
    assert local.read_bytes() == remote.read_bytes()


def test_select_actions_needs_a_scorer(tmp_path, run, selection_inputs):
    tfile, corpus, _ = selection_inputs
    assert run("select-actions", "--templates", tfile, "--corpus", corpus, "--output", tmp_path / "o")[0] == 1


# -- correct -----------------------------------------------------------------------------


@pytest.fixture
def worked_examples(tmp_path):
    tfile = tmp_path / "t.jsonl"
    write_templates(
        tfile,
        [Template("a", "大约", "左右", action="right"), Template("b", "起因是", "因为", gap_max=0, action="right")],
    )
    src = write(tmp_path / "src.txt", "他大约五岁左右。\n杀人事件的起因是因为打牌争执。\n今天天气很好。\n")
    return tfile, src


def test_correct_pre(tmp_path, run, worked_examples):
    tfile, src = worked_examples
    out, report = tmp_path / "out.txt", tmp_path / "report.json"
    assert run("correct", "--templates", tfile, "--input", src, "--output", out, "--report", report)[0] == 0
    assert out.read_text(encoding="utf-8").splitlines() == ["他大约五岁。", "杀人事件的起因是打牌争执。", "今天天气很好。"]
    rep = json.loads(report.read_text(encoding="utf-8"))
    assert rep["stage"] == "pre"
    assert rep["pre"]["corrections"] == 2 and rep["pre"]["per_template"] == {"a": 1, "b": 1}


def test_correct_force_action(tmp_path, run, worked_examples):
    tfile, src = worked_examples
    out = tmp_path / "out.txt"
    assert run("correct", "--templates", tfile, "--input", src, "--output", out, "--force-action", "left")[0] == 0
    assert out.read_text(encoding="utf-8").splitlines()[0] == "他五岁左右。"


def test_correct_stages_with_model_cmd(tmp_path, run, worked_examples):
    tfile, src = worked_examples
    identity = filter_cmd(tmp_path, "for line in sys.stdin:\n    sys.stdout.write(line)\n")
    outs = {}
    for stage in ("pre", "post", "both"):
        out = tmp_path / f"{stage}.txt"
        assert run("correct", "--templates", tfile, "--input", src, "--output", out, "--stage", stage, "--model-cmd", identity)[0] == 0
        outs[stage] = out.read_text(encoding="utf-8")
        assert len(outs[stage].splitlines()) == 3
    assert outs["both"] == outs["pre"] == outs["post"]


def test_correct_post_sees_model_output(tmp_path, run, worked_examples):
    tfile, src = worked_examples
    # the stand-in model introduces a redundancy that only post-processing can fix
    model = filter_cmd(tmp_path, "for line in sys.stdin:\n    sys.stdout.write(line.replace('今天', '大约今天左右'))\n")
    pre, post = tmp_path / "pre.txt", tmp_path / "post.txt"
    assert run("correct", "--templates", tfile, "--input", src, "--output", pre, "--stage", "pre", "--model-cmd", model)[0] == 0
    assert run("correct", "--templates", tfile, "--input", src, "--output", post, "--stage", "post", "--model-cmd", model)[0] == 0
    assert pre.read_text(encoding="utf-8").splitlines()[2] == "大约今天左右天气很好。"
    assert post.read_text(encoding="utf-8").splitlines()[2] == "大约今天天气很好。"


def test_correct_errors(tmp_path, run, worked_examples):
    tfile, src = worked_examples
    out = tmp_path / "o.txt"
    assert run("correct", "--templates", tfile, "--input", src, "--output", out, "--stage", "post")[0] == 1
    crash = filter_cmd(tmp_path, "sys.exit(4)\n")
    assert run("correct", "--templates", tfile, "--input", src, "--output", out, "--model-cmd", crash)[0] == 3
    short = filter_cmd(tmp_path, "print('one line')\n")
    code, _, err = run("correct", "--templates", tfile, "--input", src, "--output", out, "--model-cmd", short)
    assert code == 3 and "1 lines for 3" in err
    unset = tmp_path / "unset.jsonl"
    write_templates(unset, [Template("a", "大约", "左右")])
    assert run("correct", "--templates", unset, "--input", src, "--output", out)[0] == 2
    assert run("correct", "--templates", tfile, "--input", src, "--stage", "sideways")[0] == 1


# -- evaluate / stats / config ----------------------------------------------------------


def test_evaluate(tmp_path, run):
    src = write(tmp_path / "src.txt", "他大约五岁左右。\n杀人事件的起因是因为打牌争执。\n")
    ref = write(tmp_path / "ref.txt", "他大约五岁。\n杀人事件的起因是打牌争执。\n")
    hyp = write(tmp_path / "hyp.txt", "他大约五岁。\n杀人事件的起因是因为打牌争执。\n")
    code, out, err = run("evaluate", "--src", src, "--hyp", hyp, "--ref", ref, "--beta", 1)
    assert code == 0
    report = json.loads(out)
    assert (report["tp"], report["fp"], report["fn"]) == (1, 0, 1)
    assert (report["precision"], report["recall"], report["f"]) == (100.0, 50.0, 66.67)
    assert "66.67" in err
    short = write(tmp_path / "short.txt", "x\n")
    assert run("evaluate", "--src", src, "--hyp", short, "--ref", ref)[0] == 2
    assert run("evaluate", "--src", src, "--hyp", hyp)[0] == 1


def test_evaluate_gold(tmp_path, run):
    src = write(tmp_path / "src.txt", "他大约五岁左右。\n")
    hyp = write(tmp_path / "hyp.txt", "他大约五岁。\n")
    gold = write(tmp_path / "gold.jsonl", '{"source": "他大约五岁左右。", "edits": [{"start": 5, "end": 7, "replacement": "", "type": "dup"}]}\n')
    code, out, _ = run("evaluate", "--src", src, "--hyp", hyp, "--gold", gold)
    assert code == 0
    assert json.loads(out)["per_type"] == {"dup": {"tp": 1, "fn": 0, "recall": 100.0}}


def test_stats(tmp_path, run):
    tfile = tmp_path / "t.jsonl"
    write_templates(tfile, [Template(f"t{i}", "甲", "乙", action=a) for i, a in enumerate(["left", "left", "right", "random"])])
    code, out, _ = run("stats", "--templates", tfile, "--json")
    assert code == 0
    stats = json.loads(out)
    assert stats["total"] == 4
    assert {k: v["proportion"] for k, v in stats["actions"].items()} == {"left": 50.0, "right": 25.0, "random": 25.0}
    code, out, _ = run("stats", "--templates", tfile)
    assert "left\t2\t50.00%" in out
    empty = write(tmp_path / "e.jsonl", "")
    code, out, _ = run("stats", "--templates", empty, "--json")
    assert json.loads(out) == {
        "total": 0,
        "actions": {k: {"count": 0, "proportion": 0.0} for k in ("left", "right", "random")},
    }
    bad = write(tmp_path / "bad.jsonl", "{oops\n")
    assert run("stats", "--templates", bad)[0] == 2


def test_config_file_and_flag_precedence(tmp_path, run, worked_examples):
    tfile, src = worked_examples
    out = tmp_path / "o.txt"
    cfg = write(tmp_path / "cfg.json", json.dumps({"templates": str(tfile), "input": str(src), "output": str(out), "force-action": "left"}))
    assert run("--config", cfg, "correct")[0] == 0
    assert out.read_text(encoding="utf-8").splitlines()[0] == "他五岁左右。"
    assert run("--config", cfg, "correct", "--force-action", "right")[0] == 0
    assert out.read_text(encoding="utf-8").splitlines()[0] == "他大约五岁。"


def test_usage_errors(run):
    assert run()[0] == 1
    assert run("correct", "--no-such-flag")[0] == 1
    assert run("select-actions", "-N", "zero")[0] == 1
