"""CLI surface tests.  Most calls go through cli_main in-process; one
subprocess run covers the installed entry point."""

import json
import shutil
import subprocess
import sys

import pytest

from hiertag.cli import cli_main
from hiertag.corpus import read_corpus, read_vocab, validate_document
from hiertag.checkpoint import load_checkpoint

GEN_SMALL = ["--paragraphs", "1", "2", "--sentences-per-paragraph", "2", "3",
             "--words-per-sentence", "3", "6", "--events-per-doc", "1", "2"]


def _gen(tmp_path, docs=6, seed=3, extra=()):
    out = tmp_path / "corpus.jsonl"
    rc = cli_main(["gen", "--out", str(out), "--docs", str(docs),
                   "--seed", str(seed), *GEN_SMALL, *extra])
    assert rc == 0
    return out


def _train(tmp_path, corpus, extra=()):
    ckpt = tmp_path / "model.ckpt"
    rc = cli_main(["train", "--corpus", str(corpus), "--out", str(ckpt),
                   "--sup-epochs", "1", "--rl-epochs", "0",
                   "--embed-dim", "4", "--word-hidden", "2", "--sent-hidden", "2",
                   "--controller-hidden", "4", "--head-hidden", "4", *extra])
    assert rc == 0
    return ckpt


def test_gen_writes_parse_valid_lines(tmp_path):
    out = _gen(tmp_path, docs=10, seed=7)
    lines = out.read_text().splitlines()
    assert len(lines) == 10
    for line in lines:
        json.loads(line)
    for doc in read_corpus(out):
        validate_document(doc)


def test_gen_vocab_out(tmp_path):
    vocab = tmp_path / "vocab.txt"
    _gen(tmp_path, extra=["--vocab-size", "40", "--trigger-pool", "6",
                          "--filler-pool", "30", "--vocab-out", str(vocab)])
    assert len(read_vocab(vocab)) == 40


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli_main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli_main(["gen", "--out", "x.jsonl", "--bogus", "1"])
    assert exc.value.code == 2


def test_missing_corpus_exits_1(tmp_path, capsys):
    rc = cli_main(["train", "--corpus", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "m.ckpt")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_pipeline_gen_train_eval(tmp_path, capsys):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus, extra=["--metrics", str(tmp_path / "m.csv")])
    capsys.readouterr()

    rc = cli_main(["eval", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--report", "json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_documents"] == 6
    assert set(report) >= {"token_accuracy", "span_precision", "span_recall",
                           "span_f1", "mean_actions_per_word", "per_document"}

    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "epoch,phase,mean_loss,mean_reward,token_acc,span_f1,actions_per_word"
    assert len(lines) == 2  # header + one supervised epoch


def test_eval_text_report_to_file(tmp_path):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    out = tmp_path / "report.txt"
    rc = cli_main(["eval", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--out", str(out)])
    assert rc == 0
    assert "token accuracy" in out.read_text()


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text(
        "# corpus recipe\n"
        "docs = 5\n"
        "seed = 3\n"
        "paragraphs = 1,2\n"
        "sentences_per_paragraph = 2,3\n"
        "words_per_sentence = 3,6\n"
        "events_per_doc = 1,2\n"
    )
    out = tmp_path / "c.jsonl"
    rc = cli_main(["gen", "--out", str(out), "--config", str(cfg), "--docs", "7"])
    assert rc == 0
    assert len(read_corpus(out)) == 7  # flag beats file

    # Same settings spelled entirely as flags must agree byte-for-byte.
    out2 = tmp_path / "c2.jsonl"
    cli_main(["gen", "--out", str(out2), "--docs", "7", "--seed", "3", *GEN_SMALL])
    assert out.read_bytes() == out2.read_bytes()


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("docs: 5\n")
    rc = cli_main(["gen", "--out", str(tmp_path / "c.jsonl"), "--config", str(bad)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "bad.cfg:1" in err

    bad.write_text("mystery = 5\n")
    assert cli_main(["gen", "--out", str(tmp_path / "c.jsonl"),
                     "--config", str(bad)]) == 1
    bad.write_text("docs = many\n")
    assert cli_main(["gen", "--out", str(tmp_path / "c.jsonl"),
                     "--config", str(bad)]) == 1


def test_train_config_file(tmp_path):
    corpus = _gen(tmp_path)
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "sup_epochs = 1\nrl_epochs = 0\nembed_dim = 4\nword_hidden = 2\n"
        "sent_hidden = 2\ncontroller_hidden = 4\nhead_hidden = 4\nword_only = true\n"
    )
    ckpt = tmp_path / "m.ckpt"
    rc = cli_main(["train", "--corpus", str(corpus), "--out", str(ckpt),
                   "--config", str(cfg)])
    assert rc == 0
    assert load_checkpoint(ckpt).dims.word_only is True


def test_train_dim_flags_conflict_with_init_ckpt(tmp_path, capsys):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    rc = cli_main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "n.ckpt"),
                   "--init-ckpt", str(ckpt), "--sup-epochs", "0", "--rl-epochs", "1",
                   "--embed-dim", "8"])
    assert rc == 1
    assert "conflict" in capsys.readouterr().err


def test_train_continue_from_checkpoint(tmp_path):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    out = tmp_path / "cont.ckpt"
    rc = cli_main(["train", "--corpus", str(corpus), "--out", str(out),
                   "--init-ckpt", str(ckpt), "--sup-epochs", "0", "--rl-epochs", "1"])
    assert rc == 0
    assert load_checkpoint(out).dims == load_checkpoint(ckpt).dims


def test_tag_writes_predictions(tmp_path):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    out = tmp_path / "tagged.jsonl"
    rc = cli_main(["tag", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--out", str(out)])
    assert rc == 0
    originals = read_corpus(corpus)
    tagged = read_corpus(out)
    assert len(tagged) == len(originals)
    for before, after in zip(originals, tagged):
        assert after.tokens == before.tokens
        assert after.gold_tags is not None
        assert len(after.gold_tags) == before.n_words
        validate_document(after)


def test_trace_stdout_jsonl(tmp_path, capsys):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    capsys.readouterr()
    rc = cli_main(["trace", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--doc-index", "2"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    steps = [json.loads(l) for l in lines]
    assert all("action_level" in s for s in steps[:-1])
    assert "predicted_tags" in steps[-1]
    doc = read_corpus(corpus)[2]
    assert sum(s["segment_len"] for s in steps[:-1]) == doc.n_words


def test_trace_doc_index_out_of_bounds(tmp_path, capsys):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    rc = cli_main(["trace", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--doc-index", "99"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_failure_leaves_no_partial_output(tmp_path):
    corpus = _gen(tmp_path)
    ckpt = _train(tmp_path, corpus)
    target = tmp_path / "no-such-dir" / "report.txt"
    rc = cli_main(["eval", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--out", str(target)])
    assert rc == 1
    assert not target.exists()
    assert not target.parent.exists()


def test_console_entry_point_subprocess(tmp_path):
    assert shutil.which("hiertag") is not None
    out = tmp_path / "c.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "hiertag.cli", "gen", "--out", str(out),
         "--docs", "3", "--seed", "1", *GEN_SMALL],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert len(read_corpus(out)) == 3
