import csv
import json
from pathlib import Path

import pytest

from winmt.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = run_cli("gen-data", "--out", out, "--seed", "7", "--docs", "60",
                   "--vocab-size", "32")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("runs") / "r1"
    code = run_cli("train", "--data", data_dir, "--out", out, "--seed", "3",
                   "--hidden", "16", "--ffn", "32", "--heads", "2", "--layers", "1",
                   "--warmup", "10", "--max-steps", "10", "--val-interval", "5",
                   "--batch-tokens", "256", "--dropout", "0.1")
    assert code == 0
    return out


class TestGenData:
    def test_outputs_and_manifest(self, data_dir):
        names = {p.name for p in data_dir.iterdir()}
        assert {"train.txt", "dev.txt", "test.txt", "contrastive_dev.jsonl",
                "contrastive_test.jsonl", "manifest.json"} <= names
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 7

    def test_same_seed_identical_files(self, data_dir, tmp_path):
        other = tmp_path / "again"
        assert run_cli("gen-data", "--out", other, "--seed", "7", "--docs", "60",
                       "--vocab-size", "32") == 0
        for name in ("train.txt", "dev.txt", "test.txt", "contrastive_dev.jsonl",
                     "contrastive_test.jsonl"):
            assert (other / name).read_bytes() == (data_dir / name).read_bytes()

    def test_split_ratios(self, tmp_path):
        out = tmp_path / "splits"
        assert run_cli("gen-data", "--out", out, "--seed", "1", "--docs", "100",
                       "--vocab-size", "32", "--split", "80/10/10") == 0
        count = lambda p: sum(1 for block in p.read_text().split("\n\n") if block.strip())
        assert count(out / "train.txt") == 80
        assert count(out / "dev.txt") == 10
        assert count(out / "test.txt") == 10

    def test_refuses_nonempty_without_force(self, data_dir):
        assert run_cli("gen-data", "--out", data_dir, "--seed", "7") == 1

    def test_force_overwrites(self, tmp_path):
        out = tmp_path / "f"
        assert run_cli("gen-data", "--out", out, "--seed", "1", "--docs", "10",
                       "--vocab-size", "32") == 0
        assert run_cli("gen-data", "--out", out, "--seed", "1", "--docs", "10",
                       "--vocab-size", "32", "--force") == 0


class TestTrain:
    def test_run_dir_contents(self, run_dir):
        names = {p.name for p in run_dir.iterdir()}
        assert {"manifest.json", "config.txt", "vocab.json", "log.csv",
                "ckpt_avg.bin", "trainer_state.json", "checkpoints"} <= names

    def test_invalid_config_key_lists_valid(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("sponge = 42\n")
        code = run_cli("train", "--config", cfg, "--data", data_dir,
                       "--out", tmp_path / "x")
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "valid keys" in err["message"]

    def test_config_file_with_flag_override(self, data_dir, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("hidden = 16\nffn = 32\nheads = 2\nlayers = 1\n"
                       "max_steps = 4\nval_interval = 2\nwarmup = 5\n"
                       "batch_tokens = 256\ndropout = 0.0\n")
        out = tmp_path / "run"
        assert run_cli("train", "--config", cfg, "--data", data_dir, "--out", out,
                       "--seed", "5") == 0
        text = (out / "config.txt").read_text()
        assert "seed = 5" in text and "hidden = 16" in text

    def test_shifted_scheme_logs_shift(self, data_dir, tmp_path, capsys):
        out = tmp_path / "shifted"
        code = run_cli("train", "--data", data_dir, "--out", out, "--seed", "2",
                       "--hidden", "16", "--ffn", "32", "--heads", "2", "--layers", "1",
                       "--max-steps", "2", "--val-interval", "2", "--warmup", "5",
                       "--batch-tokens", "256",
                       "--position-scheme", "shifted", "--shift-strategy", "avg-corpus")
        assert code == 0
        assert "segment shift:" in capsys.readouterr().out

    def test_missing_dirs_is_usage_error(self):
        assert run_cli("train", "--seed", "1") == 1


class TestEvaluate:
    def test_robustness_table(self, data_dir, run_dir):
        code = run_cli("evaluate", "--run", run_dir, "--data", data_dir,
                       "--split", "test", "--window-sizes", "2,3", "--beam", "2",
                       "--limit", "3")
        assert code == 0
        table = run_dir / "robustness_test.csv"
        rows = list(csv.DictReader(table.open()))
        assert [r["size"] for r in rows] == ["2", "3"]
        assert (run_dir / "hyps_test_k2.txt").exists()
        assert (run_dir / "refs_test.txt").exists()

    def test_vocab_digest_mismatch_rejected(self, data_dir, run_dir, tmp_path, capsys):
        # a checkpoint trained on different data has a different vocab digest
        other_data = tmp_path / "otherdata"
        assert run_cli("gen-data", "--out", other_data, "--seed", "50", "--docs", "40",
                       "--vocab-size", "24") == 0
        other_run = tmp_path / "otherrun"
        assert run_cli("train", "--data", other_data, "--out", other_run, "--seed", "1",
                       "--hidden", "16", "--ffn", "32", "--heads", "2", "--layers", "1",
                       "--max-steps", "2", "--val-interval", "2", "--warmup", "5",
                       "--batch-tokens", "256") == 0
        code = run_cli("evaluate", "--run", run_dir, "--data", data_dir,
                       "--checkpoint", other_run / "ckpt_avg.bin", "--limit", "2")
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "digest" in err["message"]


class TestContrastive:
    def test_report_internally_consistent(self, data_dir, run_dir):
        code = run_cli("contrastive", "--run", run_dir, "--data", data_dir,
                       "--split", "test")
        assert code == 0
        summary = json.loads((run_dir / "contrastive_test.json").read_text())
        rows = list(csv.DictReader((run_dir / "contrastive_test_categories.csv").open()))
        # disc recomputable from the per-category CSV
        ctx = [(float(r["accuracy"]), int(r["n"])) for r in rows if r["category"] != "0"]
        disc = sum(a * n for a, n in ctx) / sum(n for _, n in ctx)
        assert summary["disc"] == pytest.approx(disc, abs=1e-9)
        per_example = list(csv.DictReader(
            (run_dir / "contrastive_test_examples.csv").open()))
        overall = 100.0 * sum(int(r["correct"]) for r in per_example) / len(per_example)
        assert summary["overall_accuracy"] == pytest.approx(overall, abs=1e-9)


class TestDiagnose:
    def test_diagnostics_emitted(self, data_dir, run_dir):
        code = run_cli("diagnose", "--run", run_dir, "--data", data_dir,
                       "--split", "dev", "--limit", "20")
        assert code == 0
        summary = json.loads((run_dir / "diagnose_dev.json").read_text())
        assert 0 <= summary["attention_mass"] <= 1
        assert summary["attention_entropy"] > 0
        assert len(summary["series"]) >= 1
        assert (run_dir / "entropies_dev.csv").exists()


class TestStats:
    def test_mcnemar_self_comparison_p_one(self, data_dir, run_dir, capsys):
        assert run_cli("contrastive", "--run", run_dir, "--data", data_dir,
                       "--split", "test") == 0
        capsys.readouterr()
        examples_csv = run_dir / "contrastive_test_examples.csv"
        code = run_cli("stats", "--test", "mcnemar", "--a", examples_csv,
                       "--b", examples_csv)
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["p_value"] == 1.0

    def test_ar_self_comparison_p_one(self, data_dir, run_dir, capsys):
        assert run_cli("diagnose", "--run", run_dir, "--data", data_dir,
                       "--split", "dev", "--limit", "10") == 0
        capsys.readouterr()
        ent = run_dir / "entropies_dev.csv"
        code = run_cli("stats", "--test", "ar", "--a", ent, "--b", ent,
                       "--permutations", "50")
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["p_value"] == 1.0
        assert payload["permutations"] == 50

    def test_ar_bleu_defaults_to_10000_perms(self, run_dir, capsys, tmp_path):
        hyps = tmp_path / "h.txt"
        refs = tmp_path / "r.txt"
        hyps.write_text("a b c d\n" * 3)
        refs.write_text("a b c d\n" * 3)
        code = run_cli("stats", "--test", "ar-bleu", "--a", hyps, "--b", hyps,
                       "--refs", refs)
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["permutations"] == 10000
        assert payload["p_value"] == 1.0

    def test_ar_defaults_to_1000_perms(self, tmp_path, capsys):
        scores = tmp_path / "s.txt"
        scores.write_text("1.0\n2.0\n3.0\n")
        assert run_cli("stats", "--test", "ar", "--a", scores, "--b", scores) == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["permutations"] == 1000


class TestSweep:
    def test_degenerate_sweep(self, data_dir, tmp_path, capsys):
        out = tmp_path / "sweep"
        code = run_cli("sweep", "--data", data_dir, "--out", out,
                       "--cd-values", "1.0", "--seed", "2", "--hidden", "16",
                       "--layers", "1", "--heads", "2", "--ffn", "32",
                       "--max-steps", "4", "--val-interval", "2", "--warmup", "5",
                       "--batch-tokens", "256")
        assert code == 0
        rows = list(csv.DictReader((out / "sweep.csv").open()))
        assert len(rows) == 1 and rows[0]["cd"] == "1.0"
        assert rows[0]["error"] == ""


def test_usage_error_exit_code():
    assert main(["definitely-not-a-command"]) == 1


def test_usage_error_is_machine_readable(capsys):
    main(["definitely-not-a-command"])
    err = capsys.readouterr().err.strip()
    payload = json.loads(err.splitlines()[-1])
    assert "error" in payload and "message" in payload
