"""CLI: artifacts, pipeline smoke, exit codes, config files, reproducibility."""

import json
from pathlib import Path

import pytest

from hdrnmt.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip()
    return code, json.loads(out) if out else None


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    code = main(["gen-data", "--pairs", "120", "--homographs", "2",
                 "--fillers", "20", "--nli", "90", "--seed", "7",
                 "--out-dir", str(out)])
    assert code == 0
    return out


class TestGenData:
    def test_artifacts_exist(self, data_dir, capsys):
        for name in ("train.src", "train.tgt", "wordnet.jsonl",
                     "annotations.jsonl", "eval_list.jsonl", "nli.tsv"):
            assert (data_dir / name).exists(), name

    def test_counts_reported(self, capsys, tmp_path):
        code, report = run(capsys, "gen-data", "--pairs", "30",
                           "--homographs", "3", "--seed", "1",
                           "--out-dir", str(tmp_path))
        assert code == 0
        assert report["pairs"] == 30
        assert report["homographs"] == 3
        assert report["synsets"] == 6

    def test_deterministic_bytes(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            code, _ = run(capsys, "gen-data", "--pairs", "25", "--seed", "9",
                          "--out-dir", str(d))
            assert code == 0
        for name in ("train.src", "train.tgt", "wordnet.jsonl",
                     "annotations.jsonl", "eval_list.jsonl", "nli.tsv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_missing_required_flag_is_config_error(self, capsys, tmp_path):
        code = main(["gen-data", "--out-dir", str(tmp_path)])
        assert code == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, data_dir):
    """Small end-to-end run shared by the CLI tests."""
    work = tmp_path_factory.mktemp("pipeline")
    sr = work / "sr.ckpt"
    wdr = work / "wdr.ckpt"
    arch = ["--d-model", "32", "--heads", "2", "--enc-layers", "1",
            "--d-ff", "64", "--max-len", "32"]
    assert main(["pretrain-sr", "--nli", str(data_dir / "nli.tsv"),
                 "--src", str(data_dir / "train.src"), "--out", str(sr),
                 "--epochs", "2", "--seed", "5", *arch]) == 0
    assert main(["pretrain-wdr", "--wordnet", str(data_dir / "wordnet.jsonl"),
                 "--annotations", str(data_dir / "annotations.jsonl"),
                 "--init", str(sr), "--steps", "15", "--out", str(wdr),
                 "--seed", "5", "--dropout", "0.1"]) == 0
    train_dir = work / "gate"
    assert main(["train", "--src", str(data_dir / "train.src"),
                 "--tgt", str(data_dir / "train.tgt"),
                 "--scheme", "gate", "--gate", "fixed:0.5",
                 "--hdr", str(wdr), "--steps", "30", "--max-tokens", "512",
                 "--patience", "0", "--seed", "5", "--bleu-cap", "20",
                 "--dec-layers", "1", *arch,
                 "--out-dir", str(train_dir)]) == 0
    return {"work": work, "sr": sr, "wdr": wdr, "train_dir": train_dir}


class TestPipeline:
    def test_training_artifacts(self, pipeline):
        d = pipeline["train_dir"]
        assert (d / "model.ckpt").exists()
        assert (d / "metrics.jsonl").exists()
        assert (d / "curves.png").exists()
        records = [json.loads(l) for l in (d / "metrics.jsonl").read_text().splitlines()]
        assert records[0]["step"] == 0
        assert {"step", "train_loss", "heldout_loss", "heldout_bleu"} <= set(records[0])

    def test_frozen_hdr_matches_checkpoint_bits(self, pipeline):
        from hdrnmt.checkpoint import load_encoder_checkpoint, load_model_checkpoint

        _, hdr_params, _, _ = load_encoder_checkpoint(pipeline["wdr"])
        model, _, _, _ = load_model_checkpoint(pipeline["train_dir"] / "model.ckpt")
        named = dict(model.named_parameters())
        for name, arr in hdr_params.items():
            p = named[f"second_encoder.{name}"]
            assert p.frozen
            assert p.data.tobytes() == arr.tobytes()

    def test_translate_and_evaluate(self, pipeline, data_dir, capsys, tmp_path):
        hyp = tmp_path / "hyp.txt"
        code, rep = run(capsys, "translate",
                        "--model", str(pipeline["train_dir"] / "model.ckpt"),
                        "--input", str(data_dir / "train.src"),
                        "--output", str(hyp))
        assert code == 0 and rep["sentences"] == 120
        code, rep = run(capsys, "evaluate", "--hyp", str(hyp),
                        "--ref", str(data_dir / "train.tgt"),
                        "--src", str(data_dir / "train.src"),
                        "--annotations", str(data_dir / "annotations.jsonl"),
                        "--eval-list", str(data_dir / "eval_list.jsonl"),
                        "--out-dir", str(tmp_path / "eval"))
        assert code == 0
        assert 0.0 <= rep["bleu"]["score"] <= 100.0
        assert "recall" in rep["homograph"]
        assert (tmp_path / "eval" / "metrics.json").exists()

    def test_inspect_outputs(self, pipeline, data_dir, capsys, tmp_path):
        sent_file = tmp_path / "sents.txt"
        lines = (data_dir / "train.src").read_text().splitlines()
        picked = [l for l in lines if "hw0" in l.split()][:6]
        sent_file.write_text("\n".join(picked) + "\n")
        out = tmp_path / "inspect"
        code, rep = run(capsys, "inspect", "--model", str(pipeline["wdr"]),
                        "--sentences", str(sent_file), "--lemma", "hw0",
                        "--out-dir", str(out))
        assert code == 0 and rep["checkpoint_kind"] == "encoder"
        for f in ("heatmap.tsv", "heatmap.png", "vectors.tsv",
                  "projection.tsv", "projection.png"):
            assert (out / f).exists(), f

    def test_inspect_model_checkpoint_second_encoder(self, pipeline, data_dir,
                                                     capsys, tmp_path):
        sent_file = tmp_path / "sents.txt"
        lines = (data_dir / "train.src").read_text().splitlines()
        sent_file.write_text("\n".join([l for l in lines if "hw1" in l.split()][:4]))
        code, rep = run(capsys, "inspect",
                        "--model", str(pipeline["train_dir"] / "model.ckpt"),
                        "--which", "second",
                        "--sentences", str(sent_file), "--lemma", "hw1",
                        "--out-dir", str(tmp_path / "i2"))
        assert code == 0 and rep["checkpoint_kind"] == "seq2seq"

    def test_inputs_not_mutated(self, pipeline, data_dir):
        # generator files were read by every stage; confirm bytes unchanged
        code = main(["gen-data", "--pairs", "120", "--homographs", "2",
                     "--fillers", "20", "--nli", "90", "--seed", "7",
                     "--out-dir", str(pipeline["work"] / "regen")])
        assert code == 0
        for name in ("train.src", "train.tgt", "wordnet.jsonl"):
            assert (data_dir / name).read_bytes() == \
                (pipeline["work"] / "regen" / name).read_bytes()


class TestExitCodes:
    def test_data_error_is_2(self, capsys, tmp_path):
        (tmp_path / "bad.tsv").write_text("x\ty\tmaybe\n")
        code = main(["pretrain-sr", "--nli", str(tmp_path / "bad.tsv"),
                     "--out", str(tmp_path / "o.ckpt")])
        assert code == 2

    def test_missing_file_is_2(self, tmp_path):
        code = main(["translate", "--model", str(tmp_path / "none.ckpt"),
                     "--input", str(tmp_path / "none.txt"),
                     "--output", str(tmp_path / "o.txt")])
        assert code == 2

    def test_bad_scheme_flag_requires_checkpoint(self, data_dir, tmp_path):
        code = main(["train", "--src", str(data_dir / "train.src"),
                     "--tgt", str(data_dir / "train.tgt"), "--scheme", "gate",
                     "--steps", "2", "--out-dir", str(tmp_path)])
        assert code == 1  # hdr_pretrained needs --hdr

    def test_runtime_error_is_3(self, tmp_path, data_dir):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code = main(["translate", "--model", str(bad),
                     "--input", str(data_dir / "train.src"),
                     "--output", str(tmp_path / "o.txt")])
        assert code == 3


class TestConfigFile:
    def test_config_supplies_and_cli_overrides(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("pairs=40\nhomographs=3\nseed=11\n")
        code, rep = run(capsys, "gen-data", "--config", str(cfg),
                        "--homographs", "2", "--out-dir", str(tmp_path / "d"))
        assert code == 0
        assert rep["pairs"] == 40  # from config
        assert rep["homographs"] == 2  # command line wins

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("not_a_flag=1\n")
        code = main(["gen-data", "--config", str(cfg), "--pairs", "5",
                     "--out-dir", str(tmp_path / "d")])
        assert code == 1


def test_seeded_training_bit_reproducible(tmp_path, data_dir):
    outs = []
    for tag in ("r1", "r2"):
        d = tmp_path / tag
        code = main(["train", "--src", str(data_dir / "train.src"),
                     "--tgt", str(data_dir / "train.tgt"),
                     "--scheme", "baseline", "--steps", "12",
                     "--max-tokens", "256", "--seed", "21", "--patience", "0",
                     "--d-model", "32", "--heads", "2", "--enc-layers", "1",
                     "--dec-layers", "1", "--d-ff", "64", "--max-len", "32",
                     "--bleu-cap", "10", "--out-dir", str(d)])
        assert code == 0
        outs.append(d)
    assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()
    assert (outs[0] / "metrics.jsonl").read_text() == (outs[1] / "metrics.jsonl").read_text()
