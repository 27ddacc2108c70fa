import json

import pytest

from absapair.cli import main, read_config_file
from absapair.transform import CategoryConfig, read_reviews

from conftest import EXAMPLE_TEXT

TINY = """
seed = 5
num_layers = 1
hidden_size = 8
max_positions = 40
max_seq_len = 40
learning_rate = 1e-3
batch_size = 16
epochs = 1   # inline comment
categories = cats.txt
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "cats.txt").write_text("ac\nwifi\n")
    (tmp_path / "run.cfg").write_text(TINY)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_config_file_parsing(workdir):
    cfg = read_config_file("run.cfg")
    assert cfg["epochs"] == "1" and cfg["categories"] == "cats.txt"


def test_generate_n_zero_and_determinism(workdir):
    assert run("generate", "--n", 0, "--out", "empty.jsonl") == 0
    assert (workdir / "empty.jsonl").read_bytes() == b""
    run("generate", "--config", "run.cfg", "--n", 50, "--out", "a.jsonl", "--vocab-out", "va.txt")
    run("generate", "--config", "run.cfg", "--n", 50, "--out", "b.jsonl", "--vocab-out", "vb.txt")
    assert (workdir / "a.jsonl").read_bytes() == (workdir / "b.jsonl").read_bytes()
    assert (workdir / "va.txt").read_bytes() == (workdir / "vb.txt").read_bytes()
    assert {c for r in read_reviews("a.jsonl") for c, _ in r.gold} <= {"ac", "wifi"}


def test_generate_bad_lexicon(workdir, capsys):
    (workdir / "lex.json").write_text(json.dumps({"ac": {"keywords": [], "positive": ["x"], "negative": ["y"]}}))
    assert run("generate", "--lexicon", "lex.json", "--out", "x.jsonl") != 0
    assert "error" in capsys.readouterr().err


def test_config_errors_are_enumerated(workdir, capsys):
    (workdir / "bad.cfg").write_text("epochs = -1\nbatch_size = many\nbogus = 1\n")
    assert run("train", "--config", "bad.cfg", "--vocab", "missing.txt") == 2
    err = capsys.readouterr().err
    for needle in ("batch_size", "bogus", "epochs", "missing.txt", "dataset is required", "checkpoint is required"):
        assert needle in err


def test_tokenize_text_and_oov(workdir, capsys):
    (workdir / "v.txt").write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nkamar\n##nya\nbersih\n")
    assert run("tokenize", "--vocab", "v.txt", "--text", "kamarnya bersih zzz") == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "kamar ##nya bersih [UNK]"
    assert "oov occurrences 1" in out


def test_tokenize_empty_file(workdir, capsys):
    (workdir / "v.txt").write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n")
    (workdir / "in.txt").write_text("")
    assert run("tokenize", "--vocab", "v.txt", "--input", "in.txt", "--out", "tok.txt") == 0
    assert (workdir / "tok.txt").read_text() == ""
    assert "words 0  oov occurrences 0" in capsys.readouterr().out


def test_tokenize_unreadable_vocab(workdir, capsys):
    (workdir / "v.txt").write_text("[PAD]\n[PAD]\n")
    assert run("tokenize", "--vocab", "v.txt", "--text", "x") == 1
    assert "duplicate" in capsys.readouterr().err


def test_transform_example_and_empty(workdir, capsys):
    (workdir / "one.jsonl").write_text(json.dumps({
        "id": "t1", "text": EXAMPLE_TEXT,
        "labels": [{"category": "service", "polarity": "positive"}, {"category": "kebersihan", "polarity": "positive"}],
    }) + "\n")
    (workdir / "sk.txt").write_text("service\nkebersihan\n")
    assert run("transform", "--dataset", "one.jsonl", "--categories", "sk.txt", "--out", "p.jsonl") == 0
    rows = [json.loads(line) for line in (workdir / "p.jsonl").read_text().splitlines()]
    assert [(r["text_a"], r["label"]) for r in rows] == [
        ("service-positif", 1), ("service-negatif", 0), ("service-none", 0),
        ("kebersihan-positif", 1), ("kebersihan-negatif", 0), ("kebersihan-none", 0),
    ]
    assert "6 instances" in capsys.readouterr().out
    (workdir / "empty.jsonl").write_text("")
    assert run("transform", "--dataset", "empty.jsonl", "--out", "e.jsonl") == 0
    assert (workdir / "e.jsonl").read_text() == ""


def test_transform_malformed_line(workdir, capsys):
    (workdir / "bad.jsonl").write_text('{"id": "a", "text": "x", "labels": []}\n{oops\n')
    assert run("transform", "--dataset", "bad.jsonl", "--out", "p.jsonl") == 1
    assert "bad.jsonl:2" in capsys.readouterr().err


def test_train_with_zero_epochs_keeps_checkpoint(workdir):
    run("generate", "--config", "run.cfg", "--n", 40, "--out", "r.jsonl", "--vocab-out", "v.txt")
    assert run("pretrain", "--config", "run.cfg", "--vocab", "v.txt", "--dataset", "r.jsonl", "--out", "enc.ckpt") == 0
    assert run("train", "--config", "run.cfg", "--vocab", "v.txt", "--dataset", "r.jsonl",
               "--checkpoint", "enc.ckpt", "--epochs", 0, "--out", "run0") == 0
    assert (workdir / "run0/models/pair.ckpt").read_bytes() == (workdir / "enc.ckpt").read_bytes()
    assert (workdir / "run0/history.csv").read_text() == "model,epoch,train_loss,val_loss,val_f1\n"


def test_train_rejects_unknown_categories(workdir, capsys):
    run("generate", "--n", 20, "--out", "r.jsonl", "--vocab-out", "v.txt")
    (workdir / "cfg10.cfg").write_text(TINY.replace("categories = cats.txt\n", ""))
    run("pretrain", "--config", "cfg10.cfg", "--vocab", "v.txt", "--dataset", "r.jsonl", "--out", "enc.ckpt")
    assert run("train", "--config", "run.cfg", "--vocab", "v.txt", "--dataset", "r.jsonl",
               "--checkpoint", "enc.ckpt", "--out", "run") == 1
    assert "unknown category" in capsys.readouterr().err


def test_eval_and_report(workdir, capsys):
    run("generate", "--config", "run.cfg", "--n", 30, "--out", "r.jsonl")
    reviews = read_reviews("r.jsonl")
    with open("pred.jsonl", "w") as fh:
        for r in reviews:
            fh.write(json.dumps({"id": r.id, "predicted": [[c, p.value] for c, p in r.gold]}) + "\n")
    assert run("eval", "--dataset", "r.jsonl", "--predictions", "pred.jsonl", "--out", "ev") == 0
    assert json.loads((workdir / "ev/report.json").read_text())["micro_f1"] == 1.0
    assert (workdir / "ev/errors.jsonl").read_text() == ""
    for name, f1 in (("a", 0.9), ("b", 0.8)):
        (workdir / name).mkdir()
        approach = "pair" if name == "a" else "single"
        (workdir / name / "report.json").write_text(json.dumps(
            {"approach": approach, "strategy": "fine_tuning", "report": {"micro_f1": f1}}))
    capsys.readouterr()
    assert run("report", "a", "b", "--out", "cmp.txt") == 0
    text = (workdir / "cmp.txt").read_text()
    assert "ordering fine_tuning: pair > single: satisfied" in text
    assert run("report", "--out", "cmp.txt") == 2


def test_categories_file_matches_config(workdir):
    assert CategoryConfig.from_file("cats.txt").categories == ("ac", "wifi")
