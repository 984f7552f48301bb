import json
import math
from pathlib import Path

import numpy as np
import pytest

from winmt import corpus as C
from winmt import synth
from winmt import trainer as TR
from winmt.checkpoint import load_checkpoint
from winmt.model import TransformerModel
from winmt.tensor import Tensor


def write_data(tmp_path, n_docs=60, seed=0):
    data = tmp_path / "data"
    data.mkdir(exist_ok=True)
    docs, examples = synth.gen_synthetic(seed, n_docs=n_docs, vocab_size=32)
    train, dev, test = C.split_documents(docs, (80, 10, 10))
    dev_ids = {d.doc_id for d in dev}
    test_ids = {d.doc_id for d in test}
    C.write_corpus(data / "train.txt", train)
    C.write_corpus(data / "dev.txt", dev)
    C.write_corpus(data / "test.txt", test)
    C.write_contrastive(data / "contrastive_dev.jsonl",
                        [e for e in examples if e.doc_id in dev_ids])
    C.write_contrastive(data / "contrastive_test.jsonl",
                        [e for e in examples if e.doc_id in test_ids])
    return data


def tiny_config(data, out, **kw):
    defaults = dict(data_dir=str(data), out_dir=str(out), seed=3, k=2, cd=1.0,
                    layers=1, heads=2, hidden=16, ffn=32, dropout=0.1,
                    warmup=20, peak_lr=1e-3, batch_tokens=256, max_epochs=2,
                    val_interval=5, patience=12, ckpt_avg=3)
    defaults.update(kw)
    return TR.TrainConfig(**defaults)


class TestLrSchedule:
    def test_peak_at_warmup(self):
        w, h = 400, 64
        # both min-branches meet at step == warmup
        assert TR.lr_at(w, h, w) == pytest.approx(w ** -0.5 * h ** -0.5)

    def test_step_4w_is_half_peak(self):
        w, h = 100, 64
        assert TR.lr_at(4 * w, h, w) == pytest.approx(TR.lr_at(w, h, w) / 2)

    def test_monotone_up_then_down(self):
        w, h = 50, 32
        values = [TR.lr_at(s, h, w) for s in range(1, 200)]
        peak = w - 1  # 0-indexed position of step == warmup
        assert all(a < b for a, b in zip(values[:peak], values[1:peak + 1]))
        assert all(a > b for a, b in zip(values[peak:], values[peak + 1:]))

    def test_step_zero_rejected(self):
        with pytest.raises(TR.ConfigError):
            TR.lr_at(0, 64, 100)

    def test_peak_lr_scaling(self):
        cfg = TR.TrainConfig(peak_lr=3e-3, warmup=100, hidden=64)
        assert TR.lr_at(100, 64, 100, cfg.scale()) == pytest.approx(3e-3)


class TestAdam:
    def test_converges_on_quadratic(self):
        x = Tensor(np.array([5.0, -3.0], dtype=np.float32))
        opt = TR.Adam({"x": x})
        for _ in range(500):
            x.grad = 2 * x.data
            opt.step(0.05)
            x.grad = None
        np.testing.assert_allclose(x.data, 0.0, atol=1e-2)

    def test_state_round_trip(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        opt = TR.Adam({"x": x})
        x.grad = np.ones(3, dtype=np.float32)
        opt.step(0.1)
        state = {k: v.copy() for k, v in opt.state_tensors().items()}
        opt2 = TR.Adam({"x": x})
        opt2.load_state(state, t=opt.t)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m["x"], opt.m["x"])


class TestConfig:
    def test_parse_and_coerce(self):
        text = "cd = 0.01\nk = 3\n# comment\nposition_scheme = shifted\n"
        cfg = TR.config_from_sources(TR.parse_config_text(text))
        assert cfg.cd == 0.01 and cfg.k == 3 and cfg.position_scheme == "shifted"

    def test_unknown_key_lists_valid_keys(self):
        with pytest.raises(TR.ConfigError, match="valid keys.*batch_tokens"):
            TR.config_from_sources({"sponge": "yes"})

    def test_overrides_beat_file(self):
        cfg = TR.config_from_sources({"cd": "0.5"}, {"cd": 0.25})
        assert cfg.cd == 0.25

    def test_invariants_enforced(self):
        with pytest.raises(TR.ConfigError):
            TR.TrainConfig(patience=0)
        with pytest.raises(TR.ConfigError):
            TR.TrainConfig(warmup=0)
        with pytest.raises(TR.ConfigError):
            TR.TrainConfig(cd=1.5)

    def test_round_trip_text(self):
        cfg = TR.TrainConfig(cd=0.01, k=3)
        again = TR.config_from_sources(TR.parse_config_text(TR.config_to_text(cfg)))
        assert again == cfg


def test_pack_batches_respects_budget():
    class W:
        def __init__(self, n):
            self.tgt_ids = tuple(range(n))

    windows = [W(5) for _ in range(10)]
    batches = TR.pack_batches(windows, 12)
    assert all(sum(len(w.tgt_ids) for w in b) <= 12 for b in batches)
    assert sum(len(b) for b in batches) == 10


class TestTraining:
    def test_determinism_bitwise(self, tmp_path):
        data = write_data(tmp_path)
        r1 = TR.train(tiny_config(data, tmp_path / "run1", max_steps=12))
        r2 = TR.train(tiny_config(data, tmp_path / "run2", max_steps=12))
        assert r1.log_path.read_bytes() == r2.log_path.read_bytes()
        assert r1.averaged_checkpoint.read_bytes() == r2.averaged_checkpoint.read_bytes()
        assert r1.best_checkpoint.read_bytes() == r2.best_checkpoint.read_bytes()

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        data = write_data(tmp_path)
        full = TR.train(tiny_config(data, tmp_path / "full", max_steps=20))
        half_cfg = tiny_config(data, tmp_path / "half", max_steps=10)
        TR.train(half_cfg)
        resumed = TR.train(tiny_config(data, tmp_path / "half", max_steps=20),
                           resume=True)
        assert resumed.log_path.read_bytes() == full.log_path.read_bytes()
        assert resumed.averaged_checkpoint.read_bytes() == \
            full.averaged_checkpoint.read_bytes()

    def test_patience_one_stops_at_first_non_improvement(self, tmp_path):
        data = write_data(tmp_path)
        # zero learning rate: dev loss is exactly constant, so the second
        # validation is the first non-improvement (ties do not improve)
        cfg = tiny_config(data, tmp_path / "run", patience=1, max_epochs=50,
                          val_interval=2, peak_lr=0.0)
        result = TR.train(cfg)
        log = result.log_path.read_text().strip().splitlines()[1:]
        losses = [float(line.split(",")[2]) for line in log]
        assert len(losses) == 2
        assert losses[0] == losses[1]
        assert result.stopped_early
        # equal dev loss: the earlier step stays best
        assert result.best_step == 2

    def test_never_stops_before_patience_times_interval(self, tmp_path):
        data = write_data(tmp_path)
        cfg = tiny_config(data, tmp_path / "run", patience=3, val_interval=4,
                          max_epochs=50, peak_lr=0.0)
        result = TR.train(cfg)
        assert result.stopped_early
        assert result.final_step >= 3 * 4

    def test_log_has_fixed_columns(self, tmp_path):
        data = write_data(tmp_path)
        result = TR.train(tiny_config(data, tmp_path / "run", max_steps=6))
        header = result.log_path.read_text().splitlines()[0]
        assert header == "epoch,step,current_loss,context_loss,ratio,cd"

    def test_divergence_aborts_with_diagnostics(self, tmp_path):
        data = write_data(tmp_path)
        cfg = tiny_config(data, tmp_path / "run", peak_lr=1e9, warmup=1)
        with np.errstate(all="ignore"), pytest.raises(TR.TrainingDiverged) as err:
            TR.train(cfg)
        assert err.value.step >= 1
        assert err.value.lr > 0
        assert math.isnan(err.value.grad_norm) or err.value.grad_norm >= 0

    def test_averaged_checkpoint_is_mean_of_neighbors(self, tmp_path):
        data = write_data(tmp_path)
        cfg = tiny_config(data, tmp_path / "run", max_steps=20, val_interval=4,
                          ckpt_avg=3)
        result = TR.train(cfg)
        state = json.loads((result.run_dir / "trainer_state.json").read_text())
        saved = state["saved"]
        best = state["best_step"]
        closest = sorted(sorted(saved, key=lambda s: (abs(s - best), s))[:3])
        avg, _, _ = load_checkpoint(result.averaged_checkpoint)
        partials = [load_checkpoint(result.run_dir / "checkpoints" / f"ckpt_{s:07d}.bin")[0]
                    for s in closest]
        for name in avg:
            expected = np.mean([p[name].astype(np.float64) for p in partials], axis=0)
            np.testing.assert_allclose(avg[name], expected.astype(avg[name].dtype),
                                       atol=1e-7)

    def test_loss_decreases_on_learnable_corpus(self, tmp_path):
        data = write_data(tmp_path, n_docs=120)
        cfg = tiny_config(data, tmp_path / "run", max_epochs=6, val_interval=10,
                          max_steps=120, hidden=32, ffn=64, dropout=0.0,
                          warmup=40, peak_lr=3e-3)
        result = TR.train(cfg)
        log = result.log_path.read_text().strip().splitlines()[1:]
        losses = [float(line.split(",")[2]) for line in log]
        assert losses[-1] < losses[0]

    def test_shift_resolved_and_stored(self, tmp_path):
        data = write_data(tmp_path)
        cfg = tiny_config(data, tmp_path / "run", max_steps=4,
                          position_scheme="shifted", shift_strategy="avg-corpus")
        result = TR.train(cfg)
        model = TransformerModel.load(result.averaged_checkpoint)
        docs = C.read_corpus(data / "train.txt")
        assert model.config.shift_value == C.compute_shift("avg-corpus", corpus=docs)


def test_cd_sweep_degenerate_single_value(tmp_path):
    data = write_data(tmp_path)
    base = tiny_config(data, tmp_path / "sweep", max_steps=8, val_interval=4)
    rows = TR.cd_sweep(base, [1.0], diag_windows=10)
    assert len(rows) == 1
    row = rows[0]
    assert row["cd"] == 1.0 and "error" not in row
    assert 0 <= row["contrastive_accuracy"] <= 100
    assert 0 <= row["attention_mass"] <= 1
    # identical to plain training with the same seed/config
    plain = TR.train(tiny_config(data, tmp_path / "plain", max_steps=8, val_interval=4,
                                 cd=1.0))
    sweep_ckpt = Path(row["run_dir"]) / "ckpt_avg.bin"
    assert sweep_ckpt.read_bytes() == plain.averaged_checkpoint.read_bytes()


def test_cd_sweep_continues_after_failure(tmp_path):
    data = write_data(tmp_path)
    base = tiny_config(data, tmp_path / "sweep2", max_steps=4, val_interval=2,
                       peak_lr=1e9, warmup=1)  # diverges
    with np.errstate(all="ignore"):
        rows = TR.cd_sweep(base, [1.0, 0.5], diag_windows=5)
    assert all("error" in row for row in rows)
    assert len(rows) == 2
