"""Patch significance scores from a teacher's classification-token attention.

Given the token features and per-head projection weights of one attention
layer (the teacher itself is never run here), the score of patch token j is
the classification token's attention weight to j times the norm of j's value
vector, normalized over the patch tokens:

    S_j = A[0, j] * ||V_j|| / sum_i A[0, i] * ||V_i||

with the classification token (row/column 0) excluded from the sum. Per-head
scores are averaged so the result stays a distribution.

Two file formats belong to this module:

* score cache, text: header ``PPMS 1 P=<P>``, then one ``<id>\\t<s_1> ...
  <s_P>`` line per sample with 17-significant-digit decimals (exact float64
  round-trip).
* attention export ``ppma``, binary little-endian: magic ``PPMA``, version
  u16 = 1, kind u16 (0 = tokens+weights, 1 = precomputed rows), P u32, d u32,
  H u32, then float32 payload: tokens then per-head W_q, W_k, W_v (kind 0),
  or per-head attention row (P+1 floats) and value norms (P floats) (kind 1).

How the exporter orders its patch tokens relative to this toolkit's patch
indices is the exporter's contract; nothing here reorders tokens.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import readonly_view
from .errors import CacheError, FormatError, NumericError, ParameterError, ScoreError, ValidationError

SCORE_SUM_TOL_READ = 1e-6
ATTN_ROW_SUM_TOL = 1e-6

PPMA_MAGIC = b"PPMA"
PPMA_VERSION = 1
KIND_TOKENS = 0
KIND_ROWS = 1
_PPMA_HEADER = struct.Struct("<4sHHIII")  # magic, version, kind, P, d, H


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """P non-negative patch scores summing to 1."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] < 1:
            raise ValidationError(f"scores must be a (P,) vector, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValidationError("scores contain non-finite values")
        if (s < 0).any():
            raise ValidationError("scores must be non-negative")
        total = float(s.sum())
        if abs(total - 1.0) > SCORE_SUM_TOL_READ:
            raise ValidationError(f"scores sum to {total!r}, expected 1")
        object.__setattr__(self, "scores", readonly_view(s))

    def __len__(self) -> int:
        return int(self.scores.shape[0])

    @property
    def entropy(self) -> float:
        """Shannon entropy in nats; zero entries contribute nothing."""
        s = self.scores[self.scores > 0]
        return float(-(s * np.log(s)).sum())


def uniform_scores(num_patches: int) -> ScoreVector:
    """Every patch equally significant; reproduces the ratio-based target."""
    if num_patches < 1:
        raise ParameterError(f"need at least one patch, got {num_patches}")
    return ScoreVector(np.full(num_patches, 1.0 / num_patches))


@dataclass(frozen=True, eq=False)
class AttentionInputs:
    """One layer's token features plus per-head projection weights.

    ``tokens`` is (P+1, d) with row 0 the classification token; ``w_q``,
    ``w_k``, ``w_v`` are (H, d, d_h) stacks with d == H * d_h.
    """

    tokens: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        tok = np.asarray(self.tokens, dtype=np.float64)
        if tok.ndim != 2 or tok.shape[0] < 2:
            raise ValidationError(f"tokens must be (P+1 >= 2, d), got shape {tok.shape}")
        d = tok.shape[1]
        mats = []
        for name in ("w_q", "w_k", "w_v"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.ndim != 3 or w.shape[1] != d:
                raise ValidationError(f"{name} must be (H, d={d}, d_h), got shape {w.shape}")
            mats.append(w)
        if not (mats[0].shape == mats[1].shape == mats[2].shape):
            raise ValidationError("w_q, w_k, w_v must share a shape")
        heads, _, head_dim = mats[0].shape
        if heads < 1 or head_dim < 1 or heads * head_dim != d:
            raise ValidationError(
                f"head layout inconsistent: d={d}, H={heads}, d_h={head_dim} (need d = H*d_h)"
            )
        for name, arr in zip(("tokens", "w_q", "w_k", "w_v"), [tok] + mats):
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains non-finite values")
        object.__setattr__(self, "tokens", readonly_view(tok))
        for name, arr in zip(("w_q", "w_k", "w_v"), mats):
            object.__setattr__(self, name, readonly_view(arr))

    @property
    def num_patches(self) -> int:
        return int(self.tokens.shape[0]) - 1

    @property
    def model_dim(self) -> int:
        return int(self.tokens.shape[1])

    @property
    def num_heads(self) -> int:
        return int(self.w_q.shape[0])

    @property
    def head_dim(self) -> int:
        return int(self.w_q.shape[2])


@dataclass(frozen=True, eq=False)
class AttentionState:
    """Per-head attention matrices, value vectors and outputs, stacked on H."""

    attn: np.ndarray     # (H, P+1, P+1), row-stochastic
    values: np.ndarray   # (H, P+1, d_h)
    output: np.ndarray   # (H, P+1, d_h)

    def __post_init__(self):
        a = np.asarray(self.attn, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        o = np.asarray(self.output, dtype=np.float64)
        if a.ndim != 3 or a.shape[1] != a.shape[2] or a.shape[1] < 2:
            raise ValidationError(f"attention must be (H, T, T), got shape {a.shape}")
        if v.shape[:2] != a.shape[:2] or o.shape != v.shape:
            raise ValidationError("values/output shapes inconsistent with attention")
        if not (np.isfinite(a).all() and np.isfinite(v).all() and np.isfinite(o).all()):
            raise NumericError("attention state contains non-finite values")
        if (a < 0).any() or (a > 1).any():
            raise ValidationError("attention weights must lie in [0, 1]")
        rowsum = a.sum(axis=2)
        if np.abs(rowsum - 1.0).max() > ATTN_ROW_SUM_TOL:
            raise ValidationError("attention rows must sum to 1")
        object.__setattr__(self, "attn", readonly_view(a))
        object.__setattr__(self, "values", readonly_view(v))
        object.__setattr__(self, "output", readonly_view(o))

    @property
    def num_heads(self) -> int:
        return int(self.attn.shape[0])

    @property
    def num_patches(self) -> int:
        return int(self.attn.shape[1]) - 1


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(inp: AttentionInputs) -> AttentionState:
    """One self-attention pass per head: A = softmax(Q K^T / sqrt(d_h)), O = A V."""
    tok = inp.tokens
    q = np.einsum("td,hdk->htk", tok, inp.w_q)
    k = np.einsum("td,hdk->htk", tok, inp.w_k)
    v = np.einsum("td,hdk->htk", tok, inp.w_v)
    logits = q @ k.transpose(0, 2, 1) / math.sqrt(inp.head_dim)
    if not np.isfinite(logits).all():
        raise NumericError("attention logits overflowed to non-finite values")
    attn = _softmax_rows(logits)
    out = attn @ v
    if not np.isfinite(out).all():
        raise NumericError("attention output contains non-finite values")
    return AttentionState(attn, v, out)


def scores_from_row(attn_row, value_norms) -> ScoreVector:
    """Score formula applied to one head's classification-token attention row
    over the P patch tokens (classification entry already dropped) and the
    matching value norms."""
    a = np.asarray(attn_row, dtype=np.float64)
    n = np.asarray(value_norms, dtype=np.float64)
    if a.shape != n.shape or a.ndim != 1 or a.shape[0] < 1:
        raise ParameterError(f"attention row and value norms must align, got {a.shape} vs {n.shape}")
    if (n < 0).any():
        raise ParameterError("value norms must be non-negative")
    weighted = a * n
    denom = float(weighted.sum())
    if denom <= 0.0:
        raise ScoreError("degenerate scores: all attention-weighted value norms are zero")
    return ScoreVector(weighted / denom)


def head_scores(state: AttentionState, head: int = 0) -> ScoreVector:
    """Significance scores of one head, classification token excluded."""
    if not 0 <= head < state.num_heads:
        raise ParameterError(f"head {head} outside [0, {state.num_heads})")
    attn_row = state.attn[head, 0, 1:]
    value_norms = np.linalg.norm(state.values[head, 1:, :], axis=1)
    return scores_from_row(attn_row, value_norms)


def aggregate_head_scores(per_head: list[ScoreVector]) -> ScoreVector:
    """Sum per-head score vectors and divide by H so the result sums to 1."""
    if not per_head:
        raise ParameterError("need at least one head")
    stacked = np.stack([sv.scores for sv in per_head])
    return ScoreVector(stacked.sum(axis=0) / len(per_head))


def significance_scores(inp: AttentionInputs) -> ScoreVector:
    """Full scoring pass: forward, per-head scores, aggregate across heads."""
    state = attention_forward(inp)
    return aggregate_head_scores([head_scores(state, h) for h in range(state.num_heads)])


@dataclass(frozen=True, eq=False)
class AttentionRows:
    """Kind-1 export: per-head classification-token rows and patch value norms.

    ``attn_rows`` is (H, P+1) including the classification entry (dropped at
    scoring time); ``value_norms`` is (H, P) over the patch tokens.
    """

    attn_rows: np.ndarray
    value_norms: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.attn_rows, dtype=np.float64)
        norms = np.asarray(self.value_norms, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] < 2:
            raise ValidationError(f"attn_rows must be (H, P+1 >= 2), got shape {rows.shape}")
        if norms.shape != (rows.shape[0], rows.shape[1] - 1):
            raise ValidationError(
                f"value_norms must be (H, P) = ({rows.shape[0]}, {rows.shape[1] - 1}), "
                f"got {norms.shape}"
            )
        if not (np.isfinite(rows).all() and np.isfinite(norms).all()):
            raise ValidationError("attention rows export contains non-finite values")
        if (rows < 0).any() or (rows > 1).any():
            raise ValidationError("attention weights must lie in [0, 1]")
        if np.abs(rows.sum(axis=1) - 1.0).max() > ATTN_ROW_SUM_TOL:
            raise ValidationError("attention rows must sum to 1")
        if (norms < 0).any():
            raise ValidationError("value norms must be non-negative")
        object.__setattr__(self, "attn_rows", readonly_view(rows))
        object.__setattr__(self, "value_norms", readonly_view(norms))

    @property
    def num_heads(self) -> int:
        return int(self.attn_rows.shape[0])

    @property
    def num_patches(self) -> int:
        return int(self.attn_rows.shape[1]) - 1


def scores_from_rows(rows: AttentionRows) -> ScoreVector:
    per_head = [scores_from_row(rows.attn_rows[h, 1:], rows.value_norms[h])
                for h in range(rows.num_heads)]
    return aggregate_head_scores(per_head)


# ---------------------------------------------------------------------------
# attention export files

def write_attention_inputs(inp: AttentionInputs, path) -> None:
    """Write a kind-0 (tokens + weights) ppma file."""
    parts = [_PPMA_HEADER.pack(PPMA_MAGIC, PPMA_VERSION, KIND_TOKENS,
                               inp.num_patches, inp.model_dim, inp.num_heads)]
    parts.append(np.ascontiguousarray(inp.tokens, dtype="<f4").tobytes())
    for h in range(inp.num_heads):
        for w in (inp.w_q, inp.w_k, inp.w_v):
            parts.append(np.ascontiguousarray(w[h], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def write_attention_rows(rows: AttentionRows, path) -> None:
    """Write a kind-1 (precomputed rows) ppma file; d is recorded as 0."""
    parts = [_PPMA_HEADER.pack(PPMA_MAGIC, PPMA_VERSION, KIND_ROWS,
                               rows.num_patches, 0, rows.num_heads)]
    for h in range(rows.num_heads):
        parts.append(np.ascontiguousarray(rows.attn_rows[h], dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(rows.value_norms[h], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_attention_file(path) -> AttentionInputs | AttentionRows:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _PPMA_HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(data)} bytes")
    magic, version, kind, p, d, h = _PPMA_HEADER.unpack_from(data, 0)
    if magic != PPMA_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if version != PPMA_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if p < 1 or h < 1:
        raise FormatError(f"{path}: invalid P={p} or H={h} in header")
    offset = _PPMA_HEADER.size
    avail = (len(data) - offset) // 4
    if kind == KIND_TOKENS:
        if d < 1 or d % h:
            raise FormatError(f"{path}: d={d} not divisible into H={h} heads (byte 8)")
        d_h = d // h
        need = (p + 1) * d + 3 * h * d * d_h
        if avail != need or (len(data) - offset) % 4:
            raise FormatError(f"{path}: expected {offset + 4 * need} bytes, found {len(data)}")
        floats = np.frombuffer(data, dtype="<f4", offset=offset)
        tokens = floats[:(p + 1) * d].reshape(p + 1, d)
        cursor = (p + 1) * d
        w_q = np.empty((h, d, d_h), dtype=np.float64)
        w_k = np.empty_like(w_q)
        w_v = np.empty_like(w_q)
        for head in range(h):
            for w in (w_q, w_k, w_v):
                w[head] = floats[cursor:cursor + d * d_h].reshape(d, d_h)
                cursor += d * d_h
        try:
            return AttentionInputs(tokens, w_q, w_k, w_v)
        except ValidationError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if kind == KIND_ROWS:
        need = h * (2 * p + 1)
        if avail != need or (len(data) - offset) % 4:
            raise FormatError(f"{path}: expected {offset + 4 * need} bytes, found {len(data)}")
        floats = np.frombuffer(data, dtype="<f4", offset=offset)
        attn_rows = np.empty((h, p + 1), dtype=np.float64)
        value_norms = np.empty((h, p), dtype=np.float64)
        cursor = 0
        for head in range(h):
            attn_rows[head] = floats[cursor:cursor + p + 1]
            cursor += p + 1
            value_norms[head] = floats[cursor:cursor + p]
            cursor += p
        try:
            return AttentionRows(attn_rows, value_norms)
        except ValidationError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    raise FormatError(f"{path}: unknown payload kind {kind} at byte 6")


def scores_from_attention_file(path) -> ScoreVector:
    """Read either export kind and produce the aggregated score vector."""
    obj = read_attention_file(path)
    if isinstance(obj, AttentionInputs):
        return significance_scores(obj)
    return scores_from_rows(obj)


# ---------------------------------------------------------------------------
# score cache

def write_score_cache(entries: Mapping[str, ScoreVector], path) -> None:
    """Write a score cache; ids are sorted so output is deterministic."""
    items = sorted(entries.items())
    sizes = {len(sv) for _, sv in items}
    if len(sizes) > 1:
        raise CacheError(f"score vectors disagree on P: {sorted(sizes)}")
    p = sizes.pop() if sizes else 0
    lines = [f"PPMS 1 P={p}"]
    for sid, sv in items:
        if "\t" in sid or "\n" in sid or not sid:
            raise CacheError(f"sample id {sid!r} not storable")
        lines.append(sid + "\t" + " ".join(f"{v:.17g}" for v in sv.scores))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_score_cache(path) -> dict[str, ScoreVector]:
    """Read a score cache back into an id -> ScoreVector map.

    Rejects duplicate ids, malformed lines, and vectors whose sum strays
    beyond 1e-6 from 1. Values round-trip at full float64 precision.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CacheError(f"cannot read score cache {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise CacheError(f"{path}: empty cache file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "PPMS" or header[1] != "1" or not header[2].startswith("P="):
        raise CacheError(f"{path}: bad header {lines[0]!r}")
    try:
        p = int(header[2][2:])
    except ValueError:
        raise CacheError(f"{path}: bad patch count in header {lines[0]!r}") from None
    entries: dict[str, ScoreVector] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        sid, sep, rest = line.partition("\t")
        if not sep or not sid:
            raise CacheError(f"{path}: line {lineno}: expected '<id>\\t<scores>'")
        if sid in entries:
            raise CacheError(f"{path}: line {lineno}: duplicate id {sid!r}")
        fields = rest.split()
        if len(fields) != p:
            raise CacheError(f"{path}: line {lineno}: expected {p} scores, got {len(fields)}")
        try:
            values = np.array([float(f) for f in fields], dtype=np.float64)
        except ValueError:
            raise CacheError(f"{path}: line {lineno}: unparsable score") from None
        try:
            entries[sid] = ScoreVector(values)
        except ValidationError as exc:
            raise CacheError(f"{path}: line {lineno}: {exc}") from exc
    return entries
