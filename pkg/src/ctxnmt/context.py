"""Context networks and their fusion with Lookup embeddings.

Every function takes token ids as a ``(batch, n)`` integer array and returns
one ``(batch, dim)`` tensor per position. The embedding table is shared by the
encoder input and the context network.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numerics as nx
from .numerics import ContractError, DomainError, LstmWeights, ShapeError, Tensor


class ContextKind(str, Enum):
    NONE = "none"
    NBOW = "nbow"
    BILSTM = "bilstm"
    HOLSTM = "holstm"


class IntegrationKind(str, Enum):
    GATE = "gate"
    CONCAT = "concat"


class ConfigurationError(ValueError):
    """An invalid combination of model settings."""


@dataclass
class ContextParams:
    """Trainable pieces of a context network beyond the shared embedding table.

    ``fwd`` is the forward LSTM for BiLSTM and the only LSTM for HoLSTM; ``bwd``
    is BiLSTM's backward LSTM. ``w3`` is the Concat projection.
    """

    kind: ContextKind
    fwd: LstmWeights | None = None
    bwd: LstmWeights | None = None
    w3: Tensor | None = None
    heldout_id: int | None = None

    @property
    def dim(self) -> int | None:
        if self.kind is ContextKind.BILSTM:
            return 2 * self.fwd.hidden
        if self.kind is ContextKind.HOLSTM:
            return self.fwd.hidden
        return None


def _as_ids(x) -> np.ndarray:
    ids = np.asarray(x, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ShapeError(f"expected (batch, n) token ids, got shape {ids.shape}")
    if ids.shape[1] == 0:
        raise DomainError("empty token sequence")
    return ids


def lookup_embed(x, table: Tensor) -> Tensor:
    """Rows of the embedding table for token ids ``x`` (any shape)."""
    return nx.take_rows(table, x)


def nbow_context(x, table: Tensor) -> Tensor:
    """Average Lookup embedding of each sentence, ``(batch, d)``."""
    ids = _as_ids(x)
    n = ids.shape[1]
    emb = nx.take_rows(table, ids)  # (B, n, d)
    total = nx.weighted_sum(Tensor(np.ones(ids.shape, dtype=table.data.dtype)), emb)
    return nx.scale(total, 1.0 / n)


def run_lstm(inputs: list[Tensor], w: LstmWeights, reverse: bool = False):
    """Unroll one LSTM layer from zero state.

    Returns the hidden states in input order and the final ``(h, c)`` of the
    recurrence (for ``reverse`` that is the state after reading position 0).
    """
    batch = inputs[0].shape[0]
    dtype = w.w_x.data.dtype
    h = Tensor(np.zeros((batch, w.hidden), dtype=dtype))
    c = Tensor(np.zeros((batch, w.hidden), dtype=dtype))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    outs: list[Tensor | None] = [None] * len(inputs)
    for t in order:
        h, c = nx.lstm_cell(inputs[t], h, c, w)
        outs[t] = h
    return outs, (h, c)


def bilstm_context(x, table: Tensor, params: ContextParams) -> list[Tensor]:
    """Per-position ``[forward ; backward]`` hidden states over the Lookup embeddings."""
    ids = _as_ids(x)
    if params.fwd.input_size != table.shape[1]:
        raise ShapeError(
            f"context LSTM expects inputs of {params.fwd.input_size}, table has {table.shape[1]}"
        )
    emb = [nx.take_rows(table, ids[:, t]) for t in range(ids.shape[1])]
    fwd, _ = run_lstm(emb, params.fwd)
    bwd, _ = run_lstm(emb, params.bwd, reverse=True)
    return [nx.concat([f, b]) for f, b in zip(fwd, bwd)]


def heldout_batch(ids: np.ndarray, heldout_id: int) -> np.ndarray:
    """All single-position replacements: row ``b * n + t`` is sentence ``b`` with
    position ``t`` set to ``heldout_id``."""
    batch, n = ids.shape
    rep = np.repeat(ids, n, axis=0)
    rep[np.arange(batch * n), np.tile(np.arange(n), batch)] = heldout_id
    return rep


def holstm_context(x, t: int, table: Tensor, params: ContextParams) -> Tensor:
    """Final state of a left-to-right LSTM over the sentence with position ``t``
    (0-based) replaced by the held-out symbol."""
    ids = _as_ids(x)
    n = ids.shape[1]
    if not 0 <= t < n:
        raise ContractError(f"position {t} outside sentence of length {n}")
    rep = ids.copy()
    rep[:, t] = params.heldout_id
    emb = [nx.take_rows(table, rep[:, k]) for k in range(n)]
    _, (h, _) = run_lstm(emb, params.fwd)
    return h


def holstm_contexts(x, table: Tensor, params: ContextParams) -> list[Tensor]:
    """HoLSTM context for every position, as one batched recurrence of ``batch * n`` rows."""
    ids = _as_ids(x)
    batch, n = ids.shape
    rep = heldout_batch(ids, params.heldout_id)
    emb = [nx.take_rows(table, rep[:, k]) for k in range(n)]
    _, (h, _) = run_lstm(emb, params.fwd)
    return [nx.take_rows(h, np.arange(batch) * n + t) for t in range(n)]


def gate_integrate(e: Tensor, c: Tensor) -> Tensor:
    """``e * sigmoid(c)``."""
    if e.shape != c.shape:
        raise ShapeError(f"gate: embedding {e.shape} vs context {c.shape}")
    return nx.mul(e, nx.sigmoid(c))


def concat_integrate(e: Tensor, c: Tensor, w3: Tensor) -> Tensor:
    """``W3 [e ; c]`` projecting back to the embedding width."""
    d = e.shape[-1]
    if w3.shape != (d, d + c.shape[-1]):
        raise ShapeError(f"concat: W3 {w3.shape} for embedding {d} and context {c.shape[-1]}")
    return nx.linear(nx.concat([e, c]), w3)


def check_combination(kind: ContextKind, integration: IntegrationKind, d: int, ctx_dim: int | None) -> None:
    if kind is ContextKind.NONE or integration is IntegrationKind.CONCAT:
        return
    if ctx_dim is not None and ctx_dim != d:
        raise ConfigurationError(
            f"gate integration needs a context of width {d}, {kind.value} gives {ctx_dim}"
        )


def contextual_embed_sequence(
    x,
    table: Tensor,
    kind: ContextKind,
    integration: IntegrationKind,
    params: ContextParams | None,
) -> list[Tensor]:
    """Context-aware embeddings for every position of a batch of sentences."""
    ids = _as_ids(x)
    kind = ContextKind(kind)
    n = ids.shape[1]
    embeds = [nx.take_rows(table, ids[:, t]) for t in range(n)]
    if kind is ContextKind.NONE:
        return embeds
    integration = IntegrationKind(integration)
    check_combination(kind, integration, table.shape[1], params.dim)

    if kind is ContextKind.NBOW:
        shared = nbow_context(ids, table)
        contexts = [shared] * n
    elif kind is ContextKind.BILSTM:
        contexts = bilstm_context(ids, table, params)
    else:
        contexts = holstm_contexts(ids, table, params)

    if integration is IntegrationKind.GATE:
        return [gate_integrate(e, c) for e, c in zip(embeds, contexts)]
    return [concat_integrate(e, c, params.w3) for e, c in zip(embeds, contexts)]
