import json

import pytest

import synth
from cwseg.cli import main, read_config_file, write_config_file
from cwseg.corpus import FormatError, from_bmes

FAST = ["--dim", "8", "--window", "3", "--epochs", "2", "--batch-size", "4",
        "--lr", "0.02", "--bigram-min-count", "1"]


def write_corpus(path, sentences):
    lines = [" ".join(from_bmes(ts)) for ts in sentences]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_raw(path, sentences):
    lines = ["".join(ts.chars) for ts in sentences]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture()
def corpus_file(tmp_path):
    path = tmp_path / "train.txt"
    write_corpus(path, synth.toy_corpus(seed=21, count=10))
    return path


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    values = {
        "dim": 8, "window": 3, "lr": 0.02, "use_bigrams": False,
        "mode": "async", "threads": 4, "mix": 0.25,
    }
    write_config_file(path, values)
    assert read_config_file(path) == values


def test_config_file_comments_and_errors(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n\ndim=16\nuse_bigrams=true\n", encoding="utf-8")
    assert read_config_file(path) == {"dim": 16, "use_bigrams": True}
    path.write_text("dim 16\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_config_file(path)
    path.write_text("bogus=1\n", encoding="utf-8")
    with pytest.raises(FormatError) as exc:
        read_config_file(path)
    assert exc.value.line == 1
    path.write_text("dim=abc\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_config_file(path)


def test_main_usage_errors(corpus_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    # threads conflict with serial mode
    with pytest.raises(SystemExit) as exc:
        main(["train", "--corpus", str(corpus_file), "--threads", "4"])
    assert exc.value.code == 2
    # config problems are usage errors too
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus=1\n", encoding="utf-8")
    with pytest.raises(SystemExit) as exc:
        main(["train", "--corpus", str(corpus_file), "--config", str(cfg)])
    assert exc.value.code == 2


def test_main_io_errors_exit_3(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "missing.txt")]) == 3
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_bytes(b"\xff\xfe\n")
    assert main(["train", "--corpus", str(bad)]) == 3


def test_train_predict_score_round_trip(tmp_path, capsys):
    sentences = synth.toy_corpus(seed=22, count=10)
    corpus = tmp_path / "train.txt"
    write_corpus(corpus, sentences)
    raw = tmp_path / "raw.txt"
    write_raw(raw, sentences)
    model = tmp_path / "model.cwseg"

    rc = main(["train", "--corpus", str(corpus), "--model-out", str(model), *FAST])
    out = capsys.readouterr().out
    assert rc == 0
    assert model.exists()
    assert "epoch 0 loss" in out and "epoch 1 loss" in out
    assert "saved model to" in out

    pred = tmp_path / "pred.txt"
    rc = main(["predict", "--model", str(model), "--input", str(raw), "--output", str(pred)])
    assert rc == 0
    pred_lines = pred.read_text(encoding="utf-8").splitlines()
    raw_lines = raw.read_text(encoding="utf-8").splitlines()
    assert len(pred_lines) == len(raw_lines)
    for p, r in zip(pred_lines, raw_lines):
        assert p.replace(" ", "") == r

    rc = main(["score", "--gold", str(corpus), "--pred", str(pred)])
    assert rc == 0
    assert "F=" in capsys.readouterr().out


def test_train_is_deterministic_per_seed(tmp_path, capsys):
    corpus = tmp_path / "train.txt"
    write_corpus(corpus, synth.toy_corpus(seed=23, count=8))
    m1, m2 = tmp_path / "a.cwseg", tmp_path / "b.cwseg"
    assert main(["train", "--corpus", str(corpus), "--model-out", str(m1), *FAST]) == 0
    assert main(["train", "--corpus", str(corpus), "--model-out", str(m2), *FAST]) == 0
    capsys.readouterr()
    assert m1.read_bytes() == m2.read_bytes()


def test_score_reference_output(tmp_path, capsys):
    gold = tmp_path / "gold.txt"
    pred = tmp_path / "pred.txt"
    gold.write_text("他 来到 北京\n", encoding="utf-8")
    pred.write_text("他 来 到 北京\n", encoding="utf-8")
    assert main(["score", "--gold", str(gold), "--pred", str(pred)]) == 0
    out = capsys.readouterr().out
    assert "P=50.0 R=66.7 F=57.1" in out
    assert main(["score", "--gold", str(gold), "--pred", str(pred), "--tsv"]) == 0
    header, row = capsys.readouterr().out.strip().split("\n")
    assert header.startswith("precision\t")
    assert row.split("\t")[:3] == ["50.0", "66.7", "57.1"]


def test_predict_preserves_raw_text_and_blank_lines(tmp_path, capsys):
    corpus = tmp_path / "train.txt"
    write_corpus(corpus, synth.toy_corpus(seed=24, count=8))
    model = tmp_path / "model.cwseg"
    assert main(["train", "--corpus", str(corpus), "--model-out", str(model), *FAST]) == 0
    raw = tmp_path / "raw.txt"
    raw.write_text("他说abc了123\n\n天 地\n", encoding="utf-8")
    out_file = tmp_path / "seg.txt"
    assert main(["predict", "--model", str(model), "--input", str(raw),
                 "--output", str(out_file)]) == 0
    capsys.readouterr()
    lines = out_file.read_text(encoding="utf-8").split("\n")
    # digit/latin runs come back as raw text, blank lines survive
    assert lines[0].replace(" ", "") == "他说abc了123"
    assert lines[1] == ""
    assert lines[2].replace(" ", "") == "天地"


def test_predict_vocab_cross_check(tmp_path, capsys):
    corpus_a = tmp_path / "a.txt"
    corpus_b = tmp_path / "b.txt"
    write_corpus(corpus_a, synth.toy_corpus(seed=25, count=8))
    write_corpus(corpus_b, synth.transfer_task(9, n_high=8, n_low=4, n_dev=2)[0][:8])
    model = tmp_path / "model.cwseg"
    vocab_a = tmp_path / "va.json"
    vocab_b = tmp_path / "vb.json"
    assert main(["train", "--corpus", str(corpus_a), "--model-out", str(model),
                 "--save-vocab", str(vocab_a), *FAST]) == 0
    assert main(["train", "--corpus", str(corpus_b), "--model-out", str(tmp_path / "x.cwseg"),
                 "--save-vocab", str(vocab_b), *FAST]) == 0
    raw = tmp_path / "raw.txt"
    raw.write_text("他来\n", encoding="utf-8")
    assert main(["predict", "--model", str(model), "--input", str(raw),
                 "--vocab", str(vocab_a)]) == 0
    assert main(["predict", "--model", str(model), "--input", str(raw),
                 "--vocab", str(vocab_b)]) == 3
    assert "vocab hash mismatch" in capsys.readouterr().err
    assert json.loads(vocab_a.read_text(encoding="utf-8"))["chars"]


def test_save_config_then_config_reproduces_model(tmp_path, capsys):
    corpus = tmp_path / "train.txt"
    write_corpus(corpus, synth.toy_corpus(seed=26, count=8))
    cfg = tmp_path / "run.cfg"
    m1, m2 = tmp_path / "a.cwseg", tmp_path / "b.cwseg"
    assert main(["train", "--corpus", str(corpus), "--model-out", str(m1),
                 "--save-config", str(cfg), *FAST]) == 0
    values = read_config_file(cfg)
    assert values["dim"] == 8 and values["epochs"] == 2
    # a run configured purely by file matches the flag-configured run
    assert main(["train", "--corpus", str(corpus), "--model-out", str(m2),
                 "--config", str(cfg)]) == 0
    capsys.readouterr()
    assert m1.read_bytes() == m2.read_bytes()


def test_config_flags_override_file(tmp_path, capsys):
    corpus = tmp_path / "train.txt"
    write_corpus(corpus, synth.toy_corpus(seed=27, count=8))
    cfg = tmp_path / "run.cfg"
    write_config_file(cfg, {"dim": 8, "window": 3, "epochs": 1, "batch_size": 4,
                            "lr": 0.02, "bigram_min_count": 1, "seed": 3})
    m1, m2 = tmp_path / "a.cwseg", tmp_path / "b.cwseg"
    assert main(["train", "--corpus", str(corpus), "--model-out", str(m1),
                 "--config", str(cfg), "--seed", "9"]) == 0
    assert main(["train", "--corpus", str(corpus), "--model-out", str(m2),
                 "--config", str(cfg), "--seed", "3"]) == 0
    capsys.readouterr()
    assert m1.read_bytes() != m2.read_bytes()


def test_bench_table_and_figures(tmp_path, capsys):
    corpus = tmp_path / "train.txt"
    write_corpus(corpus, synth.toy_corpus(seed=28, count=8))
    table = tmp_path / "bench.tsv"
    figs = tmp_path / "figs"
    rc = main(["bench", "--corpus", str(corpus), "--modes", "serial,async",
               "--threads-list", "1,2", "--out", str(table), "--figures", str(figs),
               "--dim", "8", "--window", "3", "--epochs", "1", "--batch-size", "4",
               "--bigram-min-count", "1"])
    out = capsys.readouterr().out
    assert rc == 0
    lines = table.read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == "mode\tthreads\tepoch_seconds\tfinal_f"
    assert len(lines) == 4  # serial + async x {1, 2}
    assert lines[1].startswith("serial\t1\t")
    assert (figs / "bench.png").exists()
    assert "wrote" in out
    assert main(["bench", "--corpus", str(corpus), "--modes", "serial,warp"]) == 3


def test_transfer_end_to_end(tmp_path, capsys):
    high, low, dev = synth.transfer_task(30, n_high=12, n_low=8, n_dev=4)
    high_f, low_f, dev_f = tmp_path / "high.txt", tmp_path / "low.txt", tmp_path / "dev.txt"
    write_corpus(high_f, high)
    write_corpus(low_f, low)
    write_corpus(dev_f, dev)
    model = tmp_path / "student.cwseg"
    hist = tmp_path / "hist.tsv"
    figs = tmp_path / "figs"
    rc = main(["transfer", "--high", str(high_f), "--low", str(low_f), "--dev", str(dev_f),
               "--model-out", str(model), "--history-out", str(hist), "--figures", str(figs),
               "--teacher-epochs", "1", "--mix", "0.5", *FAST])
    out = capsys.readouterr().out
    assert rc == 0
    assert model.exists()
    lines = hist.read_text(encoding="utf-8").strip().split("\n")
    assert lines[0].startswith("epoch\terror_rate")
    assert len(lines) == 3  # header + 2 epochs
    assert (figs / "similarity.png").exists()
    assert "dev F" in out

    # the student file is a regular model: predict must accept it
    raw = tmp_path / "raw.txt"
    write_raw(raw, dev[:2])
    assert main(["predict", "--model", str(model), "--input", str(raw)]) == 0
