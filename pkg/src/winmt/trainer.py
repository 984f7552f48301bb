"""Training loop: warmup LR schedule, early stopping, checkpoint averaging.

One run trains a single model into a run directory containing the
resolved config, vocab, a CSV validation log, rolling checkpoints and an
averaged checkpoint of the validation checkpoints closest to the best.
Runs are bitwise reproducible for a given seed and config in
single-threaded mode, and can be resumed from the last checkpoint.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .corpus import (ContrastiveExample, Document, Vocab, compute_shift,
                     make_windows, read_contrastive, read_corpus)
from .model import Batch, ModelConfig, TransformerModel, build_batch
from .objective import (loss_ratio, masked_discounted_loss, normalized_training_loss,
                        smoothed_nll)
from .rng import stream
from .tensor import Graph, Tensor, backward, record

LOG_COLUMNS = ("epoch", "step", "current_loss", "context_loss", "ratio", "cd")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, lr: float, grad_norm: float):
        super().__init__(f"non-finite loss at step {step} (lr={lr:.3e}, "
                         f"grad_norm={grad_norm:.3e})")
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm


@dataclass
class TrainConfig:
    data_dir: str = ""
    out_dir: str = ""
    seed: int = 1
    k: int = 2
    cd: float = 1.0
    label_smoothing: float = 0.1
    layers: int = 2
    heads: int = 4
    hidden: int = 128
    ffn: int = 256
    dropout: float = 0.3
    max_window: int = 4
    max_len: int = 512
    position_scheme: str = "plain"
    shift_strategy: str = "avg-corpus"
    segment_variant: str = "none"
    peak_lr: float = 1e-3
    lr_scale: float = 0.0  # overrides peak_lr when > 0
    warmup: int = 400
    batch_tokens: int = 1024
    max_epochs: int = 20
    max_steps: int = 0  # 0 = no cap
    patience: int = 12
    val_interval: int = 200
    ckpt_avg: int = 5
    dtype: str = "float32"

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.warmup < 1:
            raise ConfigError(f"warmup must be >= 1, got {self.warmup}")
        if self.batch_tokens < 1:
            raise ConfigError(f"batch_tokens must be >= 1, got {self.batch_tokens}")
        if not 0.0 <= self.cd <= 1.0:
            raise ConfigError(f"cd must be in [0, 1], got {self.cd}")

    def scale(self) -> float:
        if self.lr_scale > 0:
            return self.lr_scale
        return self.peak_lr * math.sqrt(self.hidden) * math.sqrt(self.warmup)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_config_text(text: str) -> dict:
    """Flat key = value lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def config_from_sources(file_values: dict | None = None,
                        overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig from flat string maps; overrides beat file values."""
    merged: dict = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in _FIELD_TYPES:
                valid = ", ".join(sorted(_FIELD_TYPES))
                raise ConfigError(f"unknown config key {key!r}; valid keys: {valid}")
            merged[key] = value
    coerced = {}
    for key, value in merged.items():
        ftype = _FIELD_TYPES[key]
        if isinstance(value, str):
            if ftype in ("int", int):
                value = int(value)
            elif ftype in ("float", float):
                value = float(value)
        coerced[key] = value
    return TrainConfig(**coerced)


def config_to_text(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(config).items())


def lr_at(step: int, hidden: int, warmup: int, scale: float = 1.0) -> float:
    """Inverse-square-root schedule with linear warmup; peaks at step == warmup."""
    if step < 1:
        raise ConfigError(f"schedule is defined for steps >= 1, got {step}")
    return scale * hidden ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    """Adaptive moment estimation, beta = (0.9, 0.98), eps = 1e-9."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> float:
        """Apply one update; returns the global gradient norm."""
        self.t += 1
        sq_sum = 0.0
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            g = g.astype(p.data.dtype, copy=False)
            sq_sum += float((g.astype(np.float64) ** 2).sum())
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return math.sqrt(sq_sum)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.params:
            self.m[name] = tensors[f"opt.m.{name}"].copy()
            self.v[name] = tensors[f"opt.v.{name}"].copy()


def pack_batches(windows: Sequence, batch_tokens: int,
                 order: np.ndarray | None = None) -> list[list]:
    """Greedy packing by target-token budget; at least one window per batch."""
    idx = np.arange(len(windows)) if order is None else order
    batches: list[list] = []
    cur: list = []
    used = 0
    for i in idx:
        w = windows[int(i)]
        n = len(w.tgt_ids)
        if cur and used + n > batch_tokens:
            batches.append(cur)
            cur, used = [], 0
        cur.append(w)
        used += n
    if cur:
        batches.append(cur)
    return batches


@dataclass
class TrainResult:
    run_dir: Path
    best_step: int
    best_checkpoint: Path
    averaged_checkpoint: Path
    log_path: Path
    stopped_early: bool
    final_step: int


def _float_repr(x: float) -> str:
    return repr(float(x))


class Trainer:
    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.run_dir = Path(config.out_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "checkpoints").mkdir(exist_ok=True)

        data = Path(config.data_dir)
        self.train_docs = read_corpus(data / "train.txt")
        self.dev_docs = read_corpus(data / "dev.txt")
        self.vocab = Vocab.from_documents(self.train_docs)
        self.train_windows = [w for d in self.train_docs
                              for w in make_windows(d, config.k, self.vocab)]
        self.dev_windows = [w for d in self.dev_docs
                            for w in make_windows(d, config.k, self.vocab)]

        shift_value = None
        if config.position_scheme == "shifted" and config.shift_strategy != "avg-sequence":
            if config.shift_strategy == "avg-corpus":
                shift_value = compute_shift("avg-corpus", corpus=self.train_docs)
            else:
                shift_value = compute_shift(config.shift_strategy)
        self.model_config = ModelConfig(
            vocab_size=len(self.vocab), layers=config.layers, heads=config.heads,
            hidden=config.hidden, ffn=config.ffn, dropout=config.dropout,
            max_window=max(config.max_window, config.k), max_len=config.max_len,
            window_size=config.k,
            position_scheme=config.position_scheme, shift_strategy=config.shift_strategy,
            shift_value=shift_value, segment_variant=config.segment_variant,
            dtype=config.dtype, vocab_digest=self.vocab.digest)
        self.model = TransformerModel(self.model_config, seed=config.seed)
        self.opt = Adam(self.model.params)
        self.dev_batches = pack_batches(self.dev_windows, config.batch_tokens)

    # ------------------------------------------------------------------

    def _epoch_batches(self, epoch: int) -> list[list]:
        order = stream(self.cfg.seed, "shuffle", epoch).permutation(len(self.train_windows))
        return pack_batches(self.train_windows, self.cfg.batch_tokens, order)

    def _train_step(self, batch_windows: list, step: int) -> float:
        cfg = self.cfg
        batch = build_batch(batch_windows, self.model_config)
        self.model.zero_grad()
        with record(Graph()):
            log_probs, _ = self.model.forward(batch, train=True, step=step, seed=cfg.seed)
            per_tok = smoothed_nll(log_probs, batch.tgt_out, cfg.label_smoothing,
                                   batch.tgt_valid)
            bd = masked_discounted_loss(per_tok, batch.current_mask, batch.context_mask,
                                        cfg.cd)
            loss = normalized_training_loss(bd)
        loss_val = loss.item()
        backward(loss)
        lr = lr_at(step, cfg.hidden, cfg.warmup, self.cfg.scale())
        grad_norm = self.opt.step(lr)
        if not math.isfinite(loss_val):
            raise TrainingDiverged(step=step, lr=lr, grad_norm=grad_norm)
        return loss_val

    def _validate(self) -> tuple[float, float, float]:
        """Dev per-token current loss, per-token context loss, per-sentence ratio."""
        cfg = self.cfg
        cur_sum = ctx_sum = 0.0
        cur_tok = ctx_tok = 0
        breakdowns = []
        ctx_counts = []
        for batch_windows in self.dev_batches:
            batch = build_batch(batch_windows, self.model_config)
            log_probs, _ = self.model.forward(batch)
            per_tok = smoothed_nll(log_probs, batch.tgt_out, cfg.label_smoothing,
                                   batch.tgt_valid)
            token_losses = per_tok.data
            for i, w in enumerate(batch.windows):
                cur_mask = batch.current_mask[i]
                ctx_mask = batch.context_mask[i]
                cur = float((token_losses[i] * cur_mask).sum())
                ctx = float((token_losses[i] * ctx_mask).sum())
                cur_sum += cur
                ctx_sum += ctx
                cur_tok += int(cur_mask.sum())
                ctx_tok += int(ctx_mask.sum())
                breakdowns.append(_EvalBreakdown(cur, ctx))
                ctx_counts.append(w.size - 1)
        current_loss = cur_sum / max(1, cur_tok)
        context_loss = ctx_sum / ctx_tok if ctx_tok else float("nan")
        try:
            ratio = loss_ratio(breakdowns, ctx_counts)
        except Exception:
            ratio = float("nan")
        return current_loss, context_loss, ratio

    def _save_checkpoint(self, step: int) -> Path:
        path = self.run_dir / "checkpoints" / f"ckpt_{step:07d}.bin"
        params = {k: v.data for k, v in self.model.params.items()}
        params.update(self.opt.state_tensors())
        ckpt.save_checkpoint(path, params, self.model_config.to_dict())
        return path

    def _prune_checkpoints(self, saved: list[int], best_step: int) -> list[int]:
        cfg = self.cfg
        keep_last = cfg.patience + cfg.ckpt_avg
        margin = cfg.ckpt_avg * cfg.val_interval
        kept = []
        for s in saved:
            recent = s in saved[-keep_last:]
            near_best = abs(s - best_step) <= margin
            if recent or near_best:
                kept.append(s)
            else:
                path = self.run_dir / "checkpoints" / f"ckpt_{s:07d}.bin"
                path.unlink(missing_ok=True)
        return kept

    def train(self, resume: bool = False) -> TrainResult:
        cfg = self.cfg
        log_path = self.run_dir / "log.csv"
        state_path = self.run_dir / "trainer_state.json"
        self.vocab.save(self.run_dir / "vocab.json")
        (self.run_dir / "config.txt").write_text(config_to_text(cfg))

        step = 0
        epoch = 0
        batch_idx = 0
        best = math.inf
        best_step = -1
        bad = 0
        saved: list[int] = []
        early_stopped = False
        hit_cap = False

        if resume and state_path.exists():
            state = json.loads(state_path.read_text())
            step, epoch, batch_idx = state["step"], state["epoch"], state["batch_idx"]
            best, best_step, bad = state["best"], state["best_step"], state["bad"]
            saved = list(state["saved"])
            early_stopped = state.get("stopped", False)
            params, _, _ = ckpt.load_checkpoint(
                self.run_dir / "checkpoints" / f"ckpt_{step:07d}.bin")
            for name, p in self.model.params.items():
                p.data = params[name].copy()
            self.opt.load_state(params, t=step)
        else:
            log_path.write_text(",".join(LOG_COLUMNS) + "\n")

        def write_state():
            state_path.write_text(json.dumps({
                "step": step, "epoch": epoch, "batch_idx": batch_idx,
                "best": best, "best_step": best_step, "bad": bad,
                "saved": saved, "stopped": early_stopped}, indent=0, sort_keys=True))

        while not early_stopped and not hit_cap and epoch < cfg.max_epochs:
            batches = self._epoch_batches(epoch)
            if batch_idx >= len(batches):
                epoch += 1
                batch_idx = 0
                continue
            for i in range(batch_idx, len(batches)):
                step += 1
                batch_idx = i + 1
                self._train_step(batches[i], step)
                if step % cfg.val_interval == 0:
                    cur, ctx, ratio = self._validate()
                    with open(log_path, "a") as fh:
                        fh.write(",".join([str(epoch), str(step), _float_repr(cur),
                                           _float_repr(ctx), _float_repr(ratio),
                                           _float_repr(cfg.cd)]) + "\n")
                    self._save_checkpoint(step)
                    saved.append(step)
                    if cur < best:
                        best, best_step, bad = cur, step, 0
                    else:
                        bad += 1
                    saved = self._prune_checkpoints(saved, best_step)
                    if bad >= cfg.patience:
                        early_stopped = True
                    write_state()
                    if early_stopped:
                        break
                if cfg.max_steps and step >= cfg.max_steps:
                    hit_cap = True
                    break
            else:
                epoch += 1
                batch_idx = 0
                continue
            break

        if best_step < 0:
            # no validation happened: checkpoint the final state as best
            cur, ctx, ratio = self._validate()
            with open(log_path, "a") as fh:
                fh.write(",".join([str(epoch), str(step), _float_repr(cur),
                                   _float_repr(ctx), _float_repr(ratio),
                                   _float_repr(cfg.cd)]) + "\n")
            self._save_checkpoint(max(step, 1))
            saved.append(max(step, 1))
            best_step = max(step, 1)
        write_state()

        by_distance = sorted(saved, key=lambda s: (abs(s - best_step), s))
        to_average = sorted(by_distance[:max(1, cfg.ckpt_avg)])
        avg_path = self.run_dir / "ckpt_avg.bin"
        ckpt.average_checkpoints(
            [self.run_dir / "checkpoints" / f"ckpt_{s:07d}.bin" for s in to_average],
            avg_path)
        best_path = self.run_dir / "checkpoints" / f"ckpt_{best_step:07d}.bin"
        return TrainResult(run_dir=self.run_dir, best_step=best_step,
                           best_checkpoint=best_path, averaged_checkpoint=avg_path,
                           log_path=log_path, stopped_early=early_stopped,
                           final_step=step)


@dataclass
class _EvalBreakdown:
    """Duck-typed stand-in for LossBreakdown in eval-only paths."""
    current: float
    context: float


def train(config: TrainConfig, resume: bool = False) -> TrainResult:
    return Trainer(config).train(resume=resume)


DEFAULT_SWEEP = (1.0, 0.9, 0.7, 0.5, 0.3, 0.1, 0.01, 0.0)


def cd_sweep(base: TrainConfig, cd_values: Sequence[float] = DEFAULT_SWEEP,
             diag_windows: int = 200) -> list[dict]:
    """Train one model per context discount with shared seed and data.

    Emits, per cd: best dev current-loss, overall dev contrastive accuracy
    and mean attention mass on the current sentence. Failures are recorded
    per run and the sweep continues.
    """
    from .evaluation import (attention_entropy, current_attention_mass,
                             evaluate_contrastive)

    base_out = Path(base.out_dir)
    data = Path(base.data_dir)
    rows: list[dict] = []
    for cd in cd_values:
        row: dict = {"cd": cd}
        try:
            cfg = config_from_sources(
                {k: v for k, v in asdict(base).items()},
                {"cd": cd, "out_dir": str(base_out / f"cd_{cd:g}")})
            result = train(cfg)
            model = TransformerModel.load(result.averaged_checkpoint)
            vocab = Vocab.load(result.run_dir / "vocab.json")
            dev_examples = read_contrastive(data / "contrastive_dev.jsonl")
            results = evaluate_contrastive(model, dev_examples, vocab)
            accuracy = 100.0 * sum(r.correct for r in results) / len(results)
            dev_docs = read_corpus(data / "dev.txt")
            windows = [w for d in dev_docs for w in make_windows(d, cfg.k, vocab)]
            windows = windows[:diag_windows]
            records = []
            for lo in range(0, len(windows), 32):
                batch = build_batch(windows[lo:lo + 32], model.config)
                _, recs = model.forward(batch, capture=True)
                records.extend(recs)
            log_rows = [line.split(",") for line
                        in result.log_path.read_text().strip().splitlines()[1:]]
            row.update({
                "best_dev_current_loss": min(float(r[2]) for r in log_rows),
                "contrastive_accuracy": accuracy,
                "attention_mass": current_attention_mass(records),
                "attention_entropy": attention_entropy(records),
                "run_dir": str(result.run_dir),
            })
        except Exception as exc:  # keep sweeping remaining values
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows
