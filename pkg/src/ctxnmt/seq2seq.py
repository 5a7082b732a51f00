"""Attention encoder-decoder with input feeding and context-aware source embeddings."""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .context import (
    ConfigurationError,
    ContextKind,
    ContextParams,
    IntegrationKind,
    check_combination,
    contextual_embed_sequence,
    run_lstm,
)
from .data import HELDOUT
from .numerics import ContractError, DomainError, LstmWeights, Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings.

    ``hidden`` is the decoder width and the width of each encoder state; a
    bidirectional encoder gives each direction ``hidden // 2`` units.
    ``context_hidden`` is the BiLSTM context width per direction (default
    ``d // 2``); the HoLSTM context always has ``d`` units.
    """

    src_vocab: int
    tgt_vocab: int
    d: int = 500
    hidden: int = 500
    enc_layers: int = 2
    dec_layers: int = 2
    bidirectional: bool = True
    context: ContextKind = ContextKind.NONE
    integration: IntegrationKind = IntegrationKind.CONCAT
    context_hidden: int | None = None
    dropout: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "context", ContextKind(self.context))
        object.__setattr__(self, "integration", IntegrationKind(self.integration))
        if self.context is ContextKind.BILSTM and self.context_hidden is None:
            object.__setattr__(self, "context_hidden", self.d // 2)
        for name in ("src_vocab", "tgt_vocab", "d", "hidden", "enc_layers", "dec_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.bidirectional and self.hidden % 2:
            raise ConfigurationError("a bidirectional encoder needs an even hidden size")
        if self.context is ContextKind.HOLSTM and self.src_vocab <= HELDOUT:
            raise ConfigurationError("source vocabulary lacks the held-out symbol")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        check_combination(self.context, self.integration, self.d, self.context_dim)

    @property
    def enc_hidden(self) -> int:
        return self.hidden // 2 if self.bidirectional else self.hidden

    @property
    def context_dim(self) -> int | None:
        if self.context is ContextKind.BILSTM:
            return 2 * self.context_hidden
        if self.context is ContextKind.HOLSTM:
            return self.d
        if self.context is ContextKind.NBOW:
            return self.d
        return None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["context"] = self.context.value
        out["integration"] = self.integration.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _lstm_size(d_in: int, h: int) -> int:
    return 4 * h * (d_in + h + 1)


def param_count(cfg: ModelConfig) -> int:
    """Number of trainable scalars, computed from the configuration alone."""
    h, d = cfg.hidden, cfg.d
    total = cfg.src_vocab * d + cfg.tgt_vocab * d
    dirs = 2 if cfg.bidirectional else 1
    for layer in range(cfg.enc_layers):
        d_in = d if layer == 0 else h
        total += dirs * _lstm_size(d_in, cfg.enc_hidden)
    for layer in range(cfg.dec_layers):
        d_in = d + h if layer == 0 else h
        total += _lstm_size(d_in, h)
    total += h * h + h * 2 * h + cfg.tgt_vocab * h
    if cfg.context is ContextKind.BILSTM:
        total += 2 * _lstm_size(d, cfg.context_hidden)
    elif cfg.context is ContextKind.HOLSTM:
        total += _lstm_size(d, d)
    if cfg.context is not ContextKind.NONE and cfg.integration is IntegrationKind.CONCAT:
        total += d * (d + cfg.context_dim)
    return total


@dataclass
class EncoderStates:
    states: list[Tensor]  # top layer, one (B, hidden) per position
    stacked: Tensor  # (B, n, hidden)
    finals: list[tuple[Tensor, Tensor]]  # per layer (h, c), width hidden

    @property
    def summary(self) -> Tensor:
        return self.states[-1]


@dataclass
class DecoderState:
    layers: list[tuple[Tensor, Tensor]]
    feed: Tensor  # previous attentional vector

    @property
    def top(self) -> Tensor:
        return self.layers[-1][0]


class Seq2Seq:
    """Parameter container plus the forward computations.

    ``params`` maps names to leaf tensors. The source embedding table
    ``src_emb`` is used both for the encoder input and inside the context
    network.
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    # --------------------------------------------------------------- set-up

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64, scale: float = 0.1):
        p: dict[str, Tensor] = {}

        def dense(name, shape):
            p[name] = Tensor(rng.uniform(-scale, scale, shape).astype(dtype), True, name)

        def lstm(prefix, d_in, h):
            for key, t in LstmWeights.init(rng, d_in, h, dtype, scale).tensors().items():
                t.name = f"{prefix}.{key}"
                p[t.name] = t

        h, d = cfg.hidden, cfg.d
        dense("src_emb", (cfg.src_vocab, d))
        dense("tgt_emb", (cfg.tgt_vocab, d))
        for layer in range(cfg.enc_layers):
            d_in = d if layer == 0 else h
            lstm(f"enc.{layer}.fwd", d_in, cfg.enc_hidden)
            if cfg.bidirectional:
                lstm(f"enc.{layer}.bwd", d_in, cfg.enc_hidden)
        for layer in range(cfg.dec_layers):
            lstm(f"dec.{layer}", d + h if layer == 0 else h, h)
        dense("att.W", (h, h))
        dense("out.W1", (h, 2 * h))
        dense("out.W2", (cfg.tgt_vocab, h))
        if cfg.context is ContextKind.BILSTM:
            lstm("ctx.fwd", d, cfg.context_hidden)
            lstm("ctx.bwd", d, cfg.context_hidden)
        elif cfg.context is ContextKind.HOLSTM:
            lstm("ctx.fwd", d, d)
        if cfg.context is not ContextKind.NONE and cfg.integration is IntegrationKind.CONCAT:
            dense("ctx.W3", (d, d + cfg.context_dim))
        return cls(cfg, p)

    def zero_(self) -> "Seq2Seq":
        for t in self.params.values():
            t.data[...] = 0.0
        return self

    def copy(self) -> "Seq2Seq":
        return Seq2Seq(self.cfg, {k: Tensor(t.data.copy(), True, k) for k, t in self.params.items()})

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def _lstm(self, prefix: str) -> LstmWeights:
        p = self.params
        return LstmWeights(p[f"{prefix}.w_x"], p[f"{prefix}.w_h"], p[f"{prefix}.b"])

    def context_params(self) -> ContextParams | None:
        kind = self.cfg.context
        if kind is ContextKind.NONE:
            return None
        return ContextParams(
            kind=kind,
            fwd=self._lstm("ctx.fwd") if "ctx.fwd.w_x" in self.params else None,
            bwd=self._lstm("ctx.bwd") if "ctx.bwd.w_x" in self.params else None,
            w3=self.params.get("ctx.W3"),
            heldout_id=HELDOUT,
        )

    def _dtype(self):
        return self.params["att.W"].data.dtype

    # -------------------------------------------------------------- encoder

    def embed_source(self, src) -> list[Tensor]:
        return contextual_embed_sequence(
            src, self.params["src_emb"], self.cfg.context, self.cfg.integration, self.context_params()
        )

    def encode(self, src, train: bool = False, rng: np.random.Generator | None = None) -> EncoderStates:
        """Run the stacked encoder over ``(batch, n)`` source ids."""
        src = np.asarray(src, dtype=np.int64)
        if src.ndim == 1:
            src = src[None, :]
        if src.shape[1] == 0:
            raise DomainError("cannot encode an empty sentence")
        drop_rng = rng if train else None
        inputs = self.embed_source(src)
        finals = []
        for layer in range(self.cfg.enc_layers):
            if layer > 0:
                inputs = [nx.dropout(x, self.cfg.dropout, drop_rng) for x in inputs]
            fwd, (hf, cf) = run_lstm(inputs, self._lstm(f"enc.{layer}.fwd"))
            if self.cfg.bidirectional:
                bwd, (hb, cb) = run_lstm(inputs, self._lstm(f"enc.{layer}.bwd"), reverse=True)
                inputs = [nx.concat([f, b]) for f, b in zip(fwd, bwd)]
                finals.append((nx.concat([hf, hb]), nx.concat([cf, cb])))
            else:
                inputs = fwd
                finals.append((hf, cf))
        return EncoderStates(inputs, nx.stack(inputs, axis=1), finals)

    # ------------------------------------------------------------ attention

    def attention(self, g_prev: Tensor, enc: EncoderStates) -> tuple[Tensor, Tensor]:
        """Weights over source positions scored against the previous decoder state,
        and the weighted sum of encoder states."""
        q = nx.matmul(g_prev, self.params["att.W"])
        alpha = nx.softmax(nx.bmv(enc.stacked, q))
        return nx.weighted_sum(alpha, enc.stacked), alpha

    # -------------------------------------------------------------- decoder

    def initial_state(self, enc: EncoderStates) -> DecoderState:
        batch = enc.stacked.shape[0]
        zeros = np.zeros((batch, self.cfg.hidden), dtype=self._dtype())
        layers = []
        for layer in range(self.cfg.dec_layers):
            if layer < len(enc.finals):
                layers.append(enc.finals[layer])
            else:
                layers.append((Tensor(zeros), Tensor(zeros)))
        return DecoderState(layers, Tensor(zeros))

    def decoder_step(self, state: DecoderState, y_prev, enc: EncoderStates,
                     drop_rng: np.random.Generator | None = None) -> tuple[DecoderState, Tensor]:
        """Advance the decoder one token; returns the new state and the attentional vector."""
        y_prev = np.asarray(y_prev, dtype=np.int64).reshape(-1)
        if y_prev.size and (y_prev.min() < 0 or y_prev.max() >= self.cfg.tgt_vocab):
            raise ContractError("previous token outside the target vocabulary")
        a, _ = self.attention(state.top, enc)
        x = nx.concat([nx.take_rows(self.params["tgt_emb"], y_prev), state.feed])
        layers = []
        for layer, (h, c) in enumerate(state.layers):
            if layer > 0:
                x = nx.dropout(x, self.cfg.dropout, drop_rng)
            h, c = nx.lstm_cell(x, h, c, self._lstm(f"dec.{layer}"))
            layers.append((h, c))
            x = h
        g_hat = nx.tanh(nx.linear(nx.concat([x, a]), self.params["out.W1"]))
        return DecoderState(layers, g_hat), g_hat

    def decode_step(self, state: DecoderState, y_prev, enc: EncoderStates):
        """One inference step: ``(new state, next-token distribution, attentional vector)``."""
        state, g_hat = self.decoder_step(state, y_prev, enc)
        logits = nx.linear(g_hat, self.params["out.W2"])
        return state, nx.softmax_array(logits.data), g_hat

    def log_probs(self, state: DecoderState, y_prev, enc: EncoderStates):
        state, g_hat = self.decoder_step(state, y_prev, enc)
        logits = g_hat.data @ self.params["out.W2"].data.T
        return state, nx.log_softmax_array(logits)

    # ----------------------------------------------------------------- loss

    def forward_loss(self, src, tgt, train: bool = False, rng: np.random.Generator | None = None):
        """Teacher-forced summed cross-entropy of ``tgt[:, 1:]`` given ``tgt[:, :-1]``.

        ``tgt`` rows are bos-prefixed and eos-terminated. Returns the loss
        tensor and the number of predicted tokens.
        """
        src = np.asarray(src, dtype=np.int64)
        tgt = np.asarray(tgt, dtype=np.int64)
        if src.ndim == 1:
            src, tgt = src[None, :], tgt[None, :]
        if tgt.shape[1] < 2:
            raise ContractError("target must hold at least bos and eos")
        drop_rng = rng if train else None
        enc = self.encode(src, train=train, rng=rng)
        state = self.initial_state(enc)
        outs = []
        for t in range(tgt.shape[1] - 1):
            state, g_hat = self.decoder_step(state, tgt[:, t], enc, drop_rng)
            outs.append(g_hat)
        batch, steps = tgt.shape[0], tgt.shape[1] - 1
        flat = nx.reshape(nx.stack(outs, axis=1), (batch * steps, self.cfg.hidden))
        logits = nx.linear(flat, self.params["out.W2"])
        loss = nx.cross_entropy(logits, tgt[:, 1:].reshape(-1))
        return loss, batch * steps


# ------------------------------------------------------------- checkpoints

MAGIC = b"CTXNMT-CKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(path, model: Seq2Seq, meta: dict | None = None) -> None:
    """Write ``model`` (and optional JSON-able ``meta``) to ``path``.

    Layout: ``MAGIC``, an 8-byte little-endian header length, a UTF-8 JSON
    header (sorted keys), then every tensor's raw little-endian C-order bytes
    back to back in header order.
    """
    entries, blobs, offset = [], [], 0
    for name, t in model.params.items():
        arr = np.ascontiguousarray(t.data)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"format": FORMAT_VERSION, "config": model.cfg.to_dict(), "meta": meta or {},
              "tensors": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[Seq2Seq, dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", blob[pos : pos + 8])
    pos += 8
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
    params = {}
    for e in header["tensors"]:
        start = pos + e["offset"]
        arr = np.frombuffer(blob[start : start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        params[e["name"]] = Tensor(arr.reshape(e["shape"]).copy(), True, e["name"])
    return Seq2Seq(ModelConfig.from_dict(header["config"]), params), header["meta"]
