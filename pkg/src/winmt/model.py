"""Encoder-decoder transformer over concatenated sentence windows.

Pre-norm residual blocks at small-scale default dimensions. The decoder
input is the target shifted right with <E> doubling as the start token.
Position encodings are closed-form sinusoids over effective positions,
optionally segment-shifted; segment embeddings (sinusoidal or learned)
can be added on top. Attention weights can be captured per layer, head
and kind for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .corpus import EOS_ID, PAD_ID, SEP_ID, Window, compute_shift
from .positions import sinusoidal_pe, init_segment_table
from .rng import stream
from .tensor import (Graph, Tensor, add, add_const, dropout, embedding, layer_norm,
                     log_softmax, matmul, mul_const, record, reduce_sum, relu,
                     reshape, softmax, transpose)

NEG_INF = -np.inf


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    hidden: int = 128
    ffn: int = 256
    dropout: float = 0.3
    max_window: int = 4
    max_len: int = 512
    window_size: int = 2  # K the model was trained at
    position_scheme: str = "plain"  # plain | shifted
    shift_strategy: str = "fixed:0"  # fixed:<n> | avg-corpus | avg-sequence
    shift_value: int | None = None  # resolved for fixed / avg-corpus
    segment_variant: str = "none"  # none | sin | learned
    dtype: str = "float32"  # float32 for training, float64 for test/oracle mode
    vocab_digest: str = ""

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ModelError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.position_scheme not in ("plain", "shifted"):
            raise ModelError(f"unknown position scheme {self.position_scheme!r}")
        if self.segment_variant not in ("none", "sin", "learned"):
            raise ModelError(f"unknown segment variant {self.segment_variant!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class AttentionRecord:
    """One example's attention weights for a (layer, head, kind) triple.

    Rows are probability distributions over unpadded keys; masked keys
    carry exactly zero weight.
    """

    layer: int
    head: int
    kind: str  # enc-self | dec-self | cross
    weights: np.ndarray  # (queries, keys)
    query_seg: np.ndarray
    key_seg: np.ndarray
    current_seg: int


@dataclass
class Batch:
    windows: list[Window]
    src: np.ndarray
    src_seg: np.ndarray
    src_pos: np.ndarray
    src_valid: np.ndarray  # 1.0 at real tokens
    tgt_in: np.ndarray
    tgt_in_seg: np.ndarray
    tgt_in_pos: np.ndarray
    tgt_out: np.ndarray
    tgt_valid: np.ndarray
    current_mask: np.ndarray
    context_mask: np.ndarray
    shifts: np.ndarray  # resolved shift per window

    @property
    def size(self) -> int:
        return len(self.windows)


def resolve_window_shift(config: ModelConfig, window: Window) -> int:
    if config.position_scheme != "shifted":
        return 0
    if config.shift_strategy == "avg-sequence":
        return compute_shift("avg-sequence", window=window)
    if config.shift_value is None:
        raise ModelError("shifted scheme needs a resolved shift value")
    return config.shift_value


def build_batch(windows: Sequence[Window], config: ModelConfig) -> Batch:
    from .objective import partition_masks

    if not windows:
        raise ModelError("empty batch")
    s_max = max(len(w.src_ids) for w in windows)
    t_max = max(len(w.tgt_ids) for w in windows)
    if s_max > config.max_len or t_max > config.max_len:
        raise ModelError(
            f"sequence length {max(s_max, t_max)} exceeds configured max {config.max_len}")
    b = len(windows)
    src = np.full((b, s_max), PAD_ID, dtype=np.int64)
    src_seg = np.zeros((b, s_max), dtype=np.int64)
    src_valid = np.zeros((b, s_max))
    tgt_in = np.full((b, t_max), PAD_ID, dtype=np.int64)
    tgt_in_seg = np.zeros((b, t_max), dtype=np.int64)
    tgt_out = np.full((b, t_max), PAD_ID, dtype=np.int64)
    tgt_valid = np.zeros((b, t_max))
    current = np.zeros((b, t_max))
    context = np.zeros((b, t_max))
    shifts = np.zeros(b, dtype=np.int64)
    for i, w in enumerate(windows):
        ns, nt = len(w.src_ids), len(w.tgt_ids)
        src[i, :ns] = w.src_ids
        src_seg[i, :ns] = w.src_seg
        src_valid[i, :ns] = 1.0
        tgt_in[i, 0] = EOS_ID
        tgt_in[i, 1:nt] = w.tgt_ids[:-1]
        tgt_in_seg[i, 1:nt] = w.tgt_seg[:-1]
        tgt_out[i, :nt] = w.tgt_ids
        tgt_valid[i, :nt] = 1.0
        cur, ctx = partition_masks(w, t_max)
        current[i] = cur
        context[i] = ctx
        shifts[i] = resolve_window_shift(config, w)
    src_pos = np.arange(s_max)[None, :] + src_seg * shifts[:, None]
    tgt_in_pos = np.arange(t_max)[None, :] + tgt_in_seg * shifts[:, None]
    return Batch(windows=list(windows), src=src, src_seg=src_seg, src_pos=src_pos,
                 src_valid=src_valid, tgt_in=tgt_in, tgt_in_seg=tgt_in_seg,
                 tgt_in_pos=tgt_in_pos, tgt_out=tgt_out, tgt_valid=tgt_valid,
                 current_mask=current, context_mask=context, shifts=shifts)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _key_mask(valid: np.ndarray, dtype) -> np.ndarray:
    """Additive mask (..., keys): 0 at real tokens, -inf at padding."""
    return np.where(valid > 0, 0.0, NEG_INF).astype(dtype)


class TransformerModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else self._init_params(seed)

    # ------------------------------------------------------------------
    # parameters

    def _init_params(self, seed: int) -> dict[str, Tensor]:
        cfg = self.config
        dt = cfg.np_dtype
        params: dict[str, Tensor] = {}

        def glorot(name, fan_in, fan_out, bias=True):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            rng = stream(seed, "init/" + name)
            params[name] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dt))
            if bias:
                params[name + "&bias"] = Tensor(np.zeros(fan_out, dtype=dt))

        def norm(name, dim):
            params[name + ".g"] = Tensor(np.ones(dim, dtype=dt))
            params[name + ".b"] = Tensor(np.zeros(dim, dtype=dt))

        d, f = cfg.hidden, cfg.ffn
        for side in ("src_emb", "tgt_emb"):
            rng = stream(seed, "init/" + side)
            params[side] = Tensor((rng.normal(0.0, d ** -0.5, (cfg.vocab_size, d))).astype(dt))
        glorot("out", d, cfg.vocab_size)
        if cfg.segment_variant == "learned":
            params["seg_table"] = Tensor(
                init_segment_table(cfg.max_window, d, stream(seed, "init/seg_table"), dt))
        for i in range(cfg.layers):
            for blk, names in ((f"enc{i}", ("self",)), (f"dec{i}", ("self", "cross"))):
                for kind in names:
                    for proj in ("q", "k", "v", "o"):
                        # a key bias shifts every score in a row equally and
                        # cancels in the softmax, so it stays out
                        glorot(f"{blk}.{kind}.{proj}", d, d, bias=proj != "k")
                norm(f"{blk}.ln1", d)
                norm(f"{blk}.ln2", d)
                if blk.startswith("dec"):
                    norm(f"{blk}.ln3", d)
                glorot(f"{blk}.ffn.w1", d, f)
                glorot(f"{blk}.ffn.w2", f, d)
        norm("enc_ln", d)
        norm("dec_ln", d)
        return params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # ------------------------------------------------------------------
    # forward

    def _embed(self, ids, seg, pos, table_name, drop_site, train, step, seed):
        cfg = self.config
        x = embedding(self.params[table_name], ids)
        x = mul_const(x, math.sqrt(cfg.hidden))
        pe = sinusoidal_pe(pos, cfg.hidden, cfg.np_dtype)
        x = add_const(x, pe)
        if cfg.segment_variant == "sin":
            x = add_const(x, sinusoidal_pe(seg, cfg.hidden, cfg.np_dtype))
        elif cfg.segment_variant == "learned":
            capped = np.minimum(seg, cfg.max_window - 1)
            x = add(x, embedding(self.params["seg_table"], capped))
        if train and cfg.dropout > 0:
            x = dropout(x, cfg.dropout, stream(seed, f"drop/{drop_site}", step))
        return x

    def _split_heads(self, x: Tensor, b: int, t: int) -> Tensor:
        cfg = self.config
        dh = cfg.hidden // cfg.heads
        return transpose(reshape(x, (b, t, cfg.heads, dh)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor, b: int, t: int) -> Tensor:
        return reshape(transpose(x, (0, 2, 1, 3)), (b, t, self.config.hidden))

    def _attention(self, name, q_in, kv_in, mask_add, *, train, step, seed,
                   capture, records, layer, kind, batch):
        cfg = self.config
        p = self.params
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]
        dh = cfg.hidden // cfg.heads
        q = self._split_heads(_linear(q_in, p[f"{name}.q"], p[f"{name}.q&bias"]), b, tq)
        k = self._split_heads(matmul(kv_in, p[f"{name}.k"]), b, tk)
        v = self._split_heads(_linear(kv_in, p[f"{name}.v"], p[f"{name}.v&bias"]), b, tk)
        scores = mul_const(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        scores = add_const(scores, mask_add)
        attn = softmax(scores, axis=-1)
        if capture:
            self._capture(records, attn.data, layer, kind, batch)
        if train and cfg.dropout > 0:
            attn = dropout(attn, cfg.dropout, stream(seed, f"drop/{name}.attn", step))
        out = self._merge_heads(matmul(attn, v), b, tq)
        return _linear(out, p[f"{name}.o"], p[f"{name}.o&bias"])

    def _capture(self, records, attn, layer, kind, batch):
        for i, w in enumerate(batch.windows):
            ns, nt = len(w.src_ids), len(w.tgt_ids)
            if kind == "enc-self":
                q_seg = k_seg = np.asarray(w.src_seg)
                rows, cols = ns, ns
            elif kind == "dec-self":
                q_seg = k_seg = batch.tgt_in_seg[i, :nt]
                rows, cols = nt, nt
            else:
                q_seg = batch.tgt_in_seg[i, :nt]
                k_seg = np.asarray(w.src_seg)
                rows, cols = nt, ns
            for h in range(self.config.heads):
                records.append(AttentionRecord(
                    layer=layer, head=h, kind=kind,
                    weights=attn[i, h, :rows, :cols].copy(),
                    query_seg=np.asarray(q_seg), key_seg=np.asarray(k_seg),
                    current_seg=w.current_index))

    def _ffn(self, name, x, *, train, step, seed):
        p = self.params
        h = relu(_linear(x, p[f"{name}.w1"], p[f"{name}.w1&bias"]))
        return _linear(h, p[f"{name}.w2"], p[f"{name}.w2&bias"])

    def _residual(self, x, sub, site, train, step, seed):
        if train and self.config.dropout > 0:
            sub = dropout(sub, self.config.dropout, stream(seed, f"drop/{site}", step))
        return add(x, sub)

    def encode(self, batch: Batch, *, train=False, step=0, seed=0,
               capture=False, records=None) -> Tensor:
        cfg = self.config
        p = self.params
        key_mask = _key_mask(batch.src_valid[:, None, None, :], cfg.np_dtype)
        x = self._embed(batch.src, batch.src_seg, batch.src_pos, "src_emb",
                        "src_emb", train, step, seed)
        for i in range(cfg.layers):
            blk = f"enc{i}"
            h = layer_norm(x, p[f"{blk}.ln1.g"], p[f"{blk}.ln1.b"])
            a = self._attention(f"{blk}.self", h, h, key_mask, train=train, step=step,
                                seed=seed, capture=capture, records=records,
                                layer=i, kind="enc-self", batch=batch)
            x = self._residual(x, a, f"{blk}.self", train, step, seed)
            h = layer_norm(x, p[f"{blk}.ln2.g"], p[f"{blk}.ln2.b"])
            x = self._residual(x, self._ffn(f"{blk}.ffn", h, train=train, step=step, seed=seed),
                               f"{blk}.ffn", train, step, seed)
        return layer_norm(x, p["enc_ln.g"], p["enc_ln.b"])

    def forward(self, batch: Batch, *, train: bool = False, step: int = 0, seed: int = 0,
                capture: bool = False) -> tuple[Tensor, list[AttentionRecord]]:
        """Teacher-forced forward pass: per-position log-probabilities over the vocab."""
        cfg = self.config
        p = self.params
        records: list[AttentionRecord] = []
        enc = self.encode(batch, train=train, step=step, seed=seed,
                          capture=capture, records=records)
        b, t = batch.tgt_in.shape
        causal = _key_mask(np.tril(np.ones((t, t))), cfg.np_dtype)[None, None, :, :]
        self_mask = causal + _key_mask(batch.tgt_valid[:, None, None, :], cfg.np_dtype)
        cross_mask = _key_mask(batch.src_valid[:, None, None, :], cfg.np_dtype)
        x = self._embed(batch.tgt_in, batch.tgt_in_seg, batch.tgt_in_pos, "tgt_emb",
                        "tgt_emb", train, step, seed)
        for i in range(cfg.layers):
            blk = f"dec{i}"
            h = layer_norm(x, p[f"{blk}.ln1.g"], p[f"{blk}.ln1.b"])
            a = self._attention(f"{blk}.self", h, h, self_mask, train=train, step=step,
                                seed=seed, capture=capture, records=records,
                                layer=i, kind="dec-self", batch=batch)
            x = self._residual(x, a, f"{blk}.self", train, step, seed)
            h = layer_norm(x, p[f"{blk}.ln2.g"], p[f"{blk}.ln2.b"])
            a = self._attention(f"{blk}.cross", h, enc, cross_mask, train=train, step=step,
                                seed=seed, capture=capture, records=records,
                                layer=i, kind="cross", batch=batch)
            x = self._residual(x, a, f"{blk}.cross", train, step, seed)
            h = layer_norm(x, p[f"{blk}.ln3.g"], p[f"{blk}.ln3.b"])
            x = self._residual(x, self._ffn(f"{blk}.ffn", h, train=train, step=step, seed=seed),
                               f"{blk}.ffn", train, step, seed)
        x = layer_norm(x, p["dec_ln.g"], p["dec_ln.b"])
        logits = _linear(x, p["out"], p["out&bias"])
        return log_softmax(logits, axis=-1), records

    # ------------------------------------------------------------------
    # scoring and decoding

    def score_windows(self, windows: Sequence[Window], mode: str = "full") -> np.ndarray:
        """Teacher-forced total log-probability per window.

        mode "full" sums over the whole target window, "current" over the
        current-sentence span only.
        """
        if mode not in ("full", "current"):
            raise ModelError(f"unknown scoring mode {mode!r}")
        batch = build_batch(windows, self.config)
        log_probs, _ = self.forward(batch)
        token_lp = np.take_along_axis(log_probs.data, batch.tgt_out[..., None], axis=-1)[..., 0]
        mask = batch.current_mask if mode == "current" else batch.tgt_valid
        return (token_lp * mask).sum(axis=-1)

    def decode(self, windows: Sequence[Window], beam: int = 4, alpha: float = 0.6,
               max_len: int | None = None) -> list[list[int]]:
        """Batched beam search; returns generated token ids (with <E> when emitted).

        Hypotheses are ranked by log-prob / lp(n) with lp(n) = ((5+n)/6)^alpha.
        Generation stops at <E> or max-len.
        """
        if beam < 1:
            raise ModelError(f"beam must be >= 1, got {beam}")
        cfg = self.config
        caps = [min(cfg.max_len, 2 * len(w.src_ids) + 8) for w in windows]
        if max_len is not None:
            if max_len < 1:
                raise ModelError(f"max-len must be >= 1, got {max_len}")
            caps = [min(c, max_len) for c in caps]
        t_cap = max(caps)

        batch = build_batch(windows, cfg)
        enc = self.encode(batch).data
        b = batch.size
        d, heads = cfg.hidden, cfg.heads
        dh = d // heads
        p = {k: v.data for k, v in self.params.items()}

        rep = lambda a: np.repeat(a, beam, axis=0)
        r = b * beam
        enc_r = rep(enc)
        src_key_mask = _key_mask(rep(batch.src_valid)[:, None, None, :], cfg.np_dtype)
        shifts = rep(batch.shifts)

        def split(x):
            return x.reshape(r, -1, heads, dh).transpose(0, 2, 1, 3)

        cross_k, cross_v = [], []
        for i in range(cfg.layers):
            cross_k.append(split(enc_r @ p[f"dec{i}.cross.k"]))
            cross_v.append(split(enc_r @ p[f"dec{i}.cross.v"] + p[f"dec{i}.cross.v&bias"]))
        self_k = [np.zeros((r, heads, t_cap, dh), dtype=cfg.np_dtype) for _ in range(cfg.layers)]
        self_v = [np.zeros((r, heads, t_cap, dh), dtype=cfg.np_dtype) for _ in range(cfg.layers)]

        def ln(x, name):
            mean = x.mean(axis=-1, keepdims=True)
            cent = x - mean
            var = (cent * cent).mean(axis=-1, keepdims=True)
            return cent / np.sqrt(var + 1e-5) * p[name + ".g"] + p[name + ".b"]

        def step_logits(tokens, segs, t):
            x = p["tgt_emb"][tokens] * math.sqrt(d)
            pos = t + segs * shifts
            x = x + sinusoidal_pe(pos, d, cfg.np_dtype)
            if cfg.segment_variant == "sin":
                x = x + sinusoidal_pe(segs, d, cfg.np_dtype)
            elif cfg.segment_variant == "learned":
                x = x + p["seg_table"][np.minimum(segs, cfg.max_window - 1)]
            x = x[:, None, :]  # (r, 1, d)
            for i in range(cfg.layers):
                blk = f"dec{i}"
                h = ln(x, f"{blk}.ln1")
                q = split(h @ p[f"{blk}.self.q"] + p[f"{blk}.self.q&bias"])
                self_k[i][:, :, t] = split(h @ p[f"{blk}.self.k"])[:, :, 0]
                self_v[i][:, :, t] = split(h @ p[f"{blk}.self.v"] + p[f"{blk}.self.v&bias"])[:, :, 0]
                x = x + self._np_attn(q, self_k[i][:, :, :t + 1], self_v[i][:, :, :t + 1],
                                      0.0, p, f"{blk}.self")
                h = ln(x, f"{blk}.ln2")
                q = split(h @ p[f"{blk}.cross.q"] + p[f"{blk}.cross.q&bias"])
                x = x + self._np_attn(q, cross_k[i], cross_v[i], src_key_mask, p, f"{blk}.cross")
                h = ln(x, f"{blk}.ln3")
                x = x + np.maximum(h @ p[f"{blk}.ffn.w1"] + p[f"{blk}.ffn.w1&bias"], 0.0) \
                    @ p[f"{blk}.ffn.w2"] + p[f"{blk}.ffn.w2&bias"]
            x = ln(x, "dec_ln")
            logits = x[:, 0, :] @ p["out"] + p["out&bias"]
            shifted = logits - logits.max(axis=-1, keepdims=True)
            return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

        def lp(n):
            return ((5.0 + n) / 6.0) ** alpha

        tokens = np.full((r, t_cap + 1), EOS_ID, dtype=np.int64)  # column 0 = start token
        segs = np.zeros(r, dtype=np.int64)
        cum = np.full((b, beam), NEG_INF)
        cum[:, 0] = 0.0
        alive = np.ones((b, beam), dtype=bool)
        finished: list[list[tuple[float, list[int]]]] = [[] for _ in range(b)]

        identity = np.arange(r, dtype=np.int64)
        for t in range(t_cap):
            logp = step_logits(tokens[:, t], segs, t)
            logp[:, PAD_ID] = NEG_INF  # padding is never a valid continuation
            cand = cum.reshape(r, 1) + logp
            cand[~alive.reshape(r)] = NEG_INF
            cand = cand.reshape(b, beam * cfg.vocab_size)
            top = np.argsort(-cand, axis=1, kind="stable")[:, :2 * beam]
            new_tokens = np.full((r,), PAD_ID, dtype=np.int64)
            new_segs = np.zeros(r, dtype=np.int64)
            new_cum = np.full((b, beam), NEG_INF)
            new_alive = np.zeros((b, beam), dtype=bool)
            reorder = identity.copy()
            for row in range(b):
                if not alive[row].any():
                    continue
                if t >= caps[row]:
                    # length cap reached: finalize live hypotheses truncated
                    for slot in range(beam):
                        if alive[row, slot]:
                            seq = tokens[row * beam + slot, 1:t + 1].tolist()
                            finished[row].append((cum[row, slot] / lp(len(seq)), seq))
                    continue
                filled = 0
                for rank, cidx in enumerate(top[row]):
                    score = cand[row, cidx]
                    if score == NEG_INF:
                        break
                    slot, tok = divmod(int(cidx), cfg.vocab_size)
                    src_flat = row * beam + slot
                    if tok == EOS_ID:
                        # finalize <E> only from the first `beam` ranks; this
                        # keeps beam=1 exactly equal to greedy decoding
                        if rank < beam and len(finished[row]) < beam:
                            seq = tokens[src_flat, 1:t + 1].tolist() + [tok]
                            finished[row].append((score / lp(len(seq)), seq))
                        continue
                    if filled < beam:
                        dst = row * beam + filled
                        reorder[dst] = src_flat
                        new_tokens[dst] = tok
                        new_segs[dst] = segs[src_flat] + (1 if tokens[src_flat, t] == SEP_ID else 0)
                        new_cum[row, filled] = score
                        new_alive[row, filled] = True
                        filled += 1
                if len(finished[row]) >= beam:
                    new_alive[row] = False
            if not new_alive.any():
                alive = new_alive
                break
            if not np.array_equal(reorder, identity):
                for i in range(cfg.layers):
                    self_k[i] = self_k[i][reorder]
                    self_v[i] = self_v[i][reorder]
                tokens = tokens[reorder]
            tokens[:, t + 1] = new_tokens
            segs = new_segs
            cum, alive = new_cum, new_alive

        results = []
        for row in range(b):
            hyps = list(finished[row])
            for slot in range(beam):
                if alive[row, slot]:
                    seq = tokens[row * beam + slot, 1:caps[row] + 1].tolist()
                    hyps.append((cum[row, slot] / lp(len(seq)), seq))
            if not hyps:
                hyps = [(float(NEG_INF), [EOS_ID])]
            results.append(max(hyps, key=lambda h: h[0])[1])
        return results

    @staticmethod
    def _np_attn(q, k, v, mask_add, p, name):
        dh = q.shape[-1]
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + mask_add
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        out = (w @ v).transpose(0, 2, 1, 3)
        out = out.reshape(out.shape[0], out.shape[1], -1)
        return out @ p[f"{name}.o"] + p[f"{name}.o&bias"]

    # ------------------------------------------------------------------
    # persistence

    def save(self, path) -> None:
        ckpt.save_checkpoint(path, {k: v.data for k, v in self.params.items()},
                             self.config.to_dict())

    @staticmethod
    def load(path, expect_vocab_digest: str | None = None) -> "TransformerModel":
        params, config_dict, _ = ckpt.load_checkpoint(path)
        config = ModelConfig.from_dict(config_dict)
        if expect_vocab_digest is not None and config.vocab_digest != expect_vocab_digest:
            raise ModelError(
                "vocab digest mismatch between checkpoint and data: "
                f"{config.vocab_digest[:12]} vs {expect_vocab_digest[:12]}")
        tensors = {k: Tensor(v) for k, v in params.items() if not k.startswith("opt.")}
        return TransformerModel(config, tensors)
