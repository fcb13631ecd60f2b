"""Toy decoder transformer with hand-derived gradients, splittable at any
block boundary.

Architecture: token + learned positional embeddings (both frozen), then
``n_blocks`` pre-norm causal self-attention blocks. Each block has exactly
four trainable weights {Q, K, V, O} (no MLP sublayer) so every trainable
weight is LoRA-addressable. A frozen linear head projects to the vocab.
LayerNorm carries no affine parameters.

Hidden states cross module boundaries as 2-D matrices of shape
(batch*seq, d_model), row-major by (batch, position).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lora
from .linalg import Matrix, ShapeError, check_finite, derive_seed, gaussian_init
from .lora import LoraAdapter
from .weights import SplitPoint, WeightId, all_weight_ids

SIGMA_BASE = 0.02  # Gaussian std-dev of all frozen base weights
LN_EPS = 1e-5

AdapterSet = dict[WeightId, LoraAdapter]
AdapterGrads = dict[WeightId, tuple[Matrix, Matrix]]
BaseGrads = dict[WeightId, Matrix]


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int
    d_model: int
    n_heads: int
    vocab_size: int
    seq_len: int

    def validate(self) -> "ModelConfig":
        errs = []
        if self.n_blocks < 2:
            errs.append(f"n_blocks must be >= 2, got {self.n_blocks}")
        if self.d_model <= 0 or self.n_heads <= 0 or self.d_model % self.n_heads:
            errs.append(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.vocab_size <= 0:
            errs.append(f"vocab_size must be positive, got {self.vocab_size}")
        if self.seq_len <= 0:
            errs.append(f"seq_len must be positive, got {self.seq_len}")
        if errs:
            raise ValueError("; ".join(errs))
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def split_points(self) -> list[SplitPoint]:
        return [SplitPoint(j) for j in range(1, self.n_blocks)]


@dataclass
class ModelParams:
    config: ModelConfig
    tok_emb: Matrix  # vocab x d_model, frozen
    pos_emb: Matrix  # seq_len x d_model, frozen
    attn: dict[WeightId, Matrix]  # d_model x d_model each; mutated only by merge_update
    out_proj: Matrix  # d_model x vocab, frozen

    def weight(self, wid: WeightId) -> Matrix:
        return self.attn[wid]


def build_model(config: ModelConfig, seed: int) -> ModelParams:
    config.validate()
    d = config.d_model
    tok = gaussian_init(config.vocab_size, d, SIGMA_BASE, derive_seed(seed, "tok_emb"))
    pos = gaussian_init(config.seq_len, d, SIGMA_BASE, derive_seed(seed, "pos_emb"))
    attn = {
        wid: gaussian_init(d, d, SIGMA_BASE, derive_seed(seed, "attn", wid.block, wid.kind))
        for wid in all_weight_ids(config.n_blocks)
    }
    out = gaussian_init(d, config.vocab_size, SIGMA_BASE, derive_seed(seed, "out_proj"))
    return ModelParams(config, tok, pos, attn, out)


@dataclass
class BlockCache:
    x: np.ndarray  # (b, L, d) block input
    xn2: Matrix  # (b*L, d) normalized input, fed to Q/K/V
    ln_y: np.ndarray  # (b, L, d) same values as xn2, 3-D view for LN backward
    ln_inv: np.ndarray  # (b, L, 1) 1/sqrt(var+eps)
    q: np.ndarray  # (b, h, L, dh)
    k: np.ndarray
    v: np.ndarray
    p: np.ndarray  # (b, h, L, L) attention probabilities
    ctx2: Matrix  # (b*L, d) head-concatenated context, fed to O


@dataclass
class ActivationCache:
    params: ModelParams
    batch: int
    seq: int
    split: SplitPoint
    blocks: dict[int, BlockCache] = field(default_factory=dict)
    final_hidden: Matrix | None = None  # server side only, input to the vocab head


def _layer_norm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    return (x - mu) * inv, inv


def _layer_norm_backward(dy: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    # No-affine LN: dx = inv * (dy - mean(dy) - y * mean(dy * y))
    return inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))


def _split_heads(x2: Matrix, b: int, L: int, h: int, dh: int) -> np.ndarray:
    return x2.reshape(b, L, h, dh).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray, b: int, L: int, d: int) -> Matrix:
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b * L, d)


def _check_adapter_side(adapters: AdapterSet, split: SplitPoint, client: bool) -> None:
    for wid in adapters:
        if split.client_side(wid) != client:
            side = "client" if client else "server"
            raise ValueError(f"adapter {wid} is not on the {side} side of split j={split.j}")


def _block_forward(
    params: ModelParams, adapters: AdapterSet, x: np.ndarray, block: int
) -> tuple[np.ndarray, BlockCache]:
    cfg = params.config
    b, L, d = x.shape
    h, dh = cfg.n_heads, cfg.d_head
    ln_y, ln_inv = _layer_norm(x)
    xn2 = ln_y.reshape(b * L, d)

    proj = {
        kind: lora.adapted_forward(xn2, params.attn[WeightId(block, kind)], adapters.get(WeightId(block, kind)))
        for kind in ("Q", "K", "V")
    }
    q = _split_heads(proj["Q"], b, L, h, dh)
    k = _split_heads(proj["K"], b, L, h, dh)
    v = _split_heads(proj["V"], b, L, h, dh)

    scores = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(dh)
    mask = np.triu(np.ones((L, L), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.where(mask, 0.0, np.exp(scores))
    p = e / e.sum(axis=-1, keepdims=True)

    ctx2 = _merge_heads(p @ v, b, L, d)
    wid_o = WeightId(block, "O")
    out2 = lora.adapted_forward(ctx2, params.attn[wid_o], adapters.get(wid_o))
    y = x + out2.reshape(b, L, d)
    return y, BlockCache(x, xn2, ln_y, ln_inv, q, k, v, p, ctx2)


def _block_backward(
    params: ModelParams,
    adapters: AdapterSet,
    dy: np.ndarray,
    cache: BlockCache,
    block: int,
    adapter_grads: AdapterGrads,
    base_grads: BaseGrads,
) -> np.ndarray:
    cfg = params.config
    b, L, d = cache.x.shape
    h, dh = cfg.n_heads, cfg.d_head

    d_out2 = dy.reshape(b * L, d)
    wid_o = WeightId(block, "O")
    base_grads[wid_o] = cache.ctx2.T @ d_out2
    ad_o = adapters.get(wid_o)
    if ad_o is not None:
        adapter_grads[wid_o] = lora.adapter_grads(cache.ctx2, d_out2, ad_o)
    d_ctx = _split_heads(lora.adapted_input_grad(d_out2, params.attn[wid_o], ad_o), b, L, h, dh)

    dp = d_ctx @ cache.v.transpose(0, 1, 3, 2)
    dv = cache.p.transpose(0, 1, 3, 2) @ d_ctx
    ds = cache.p * (dp - (dp * cache.p).sum(axis=-1, keepdims=True))
    ds /= np.sqrt(dh)
    dq = ds @ cache.k
    dk = ds.transpose(0, 1, 3, 2) @ cache.q

    dxn2 = np.zeros((b * L, d))
    for kind, g in (("Q", dq), ("K", dk), ("V", dv)):
        wid = WeightId(block, kind)
        g2 = _merge_heads(g, b, L, d)
        base_grads[wid] = cache.xn2.T @ g2
        ad = adapters.get(wid)
        if ad is not None:
            adapter_grads[wid] = lora.adapter_grads(cache.xn2, g2, ad)
        dxn2 += lora.adapted_input_grad(g2, params.attn[wid], ad)

    dxn = dxn2.reshape(b, L, d)
    return dy + _layer_norm_backward(dxn, cache.ln_y, cache.ln_inv)


def forward_client(
    params: ModelParams, adapters: AdapterSet, tokens: np.ndarray, split: SplitPoint
) -> tuple[Matrix, ActivationCache]:
    cfg = params.config
    split.validate(cfg.n_blocks)
    _check_adapter_side(adapters, split, client=True)
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be batch x seq, got ndim={tokens.ndim}")
    b, L = tokens.shape
    if L > cfg.seq_len:
        raise ShapeError(f"sequence length {L} exceeds configured {cfg.seq_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")

    x = params.tok_emb[tokens] + params.pos_emb[None, :L, :]
    cache = ActivationCache(params, batch=b, seq=L, split=split)
    for blk in range(split.j):
        x, cache.blocks[blk] = _block_forward(params, adapters, x, blk)
    cut = x.reshape(b * L, cfg.d_model)
    return check_finite(cut, "cut activations"), cache


def forward_server(
    params: ModelParams, adapters: AdapterSet, cut_activations: Matrix, split: SplitPoint
) -> tuple[Matrix, ActivationCache]:
    cfg = params.config
    split.validate(cfg.n_blocks)
    _check_adapter_side(adapters, split, client=False)
    n, d = cut_activations.shape
    if d != cfg.d_model:
        raise ShapeError("cut activation width mismatch", cut_activations.shape)
    # Rows are batch*seq; recover seq from the configured length when it
    # divides, else treat the whole thing as one sequence.
    L = cfg.seq_len if n % cfg.seq_len == 0 else n
    b = n // L
    x = cut_activations.reshape(b, L, d)
    cache = ActivationCache(params, batch=b, seq=L, split=split)
    for blk in range(split.j, cfg.n_blocks):
        x, cache.blocks[blk] = _block_forward(params, adapters, x, blk)
    cache.final_hidden = x.reshape(n, d)
    logits = cache.final_hidden @ params.out_proj
    return check_finite(logits, "logits"), cache


def loss_and_grad_server(
    logits: Matrix,
    targets: np.ndarray,
    server_cache: ActivationCache,
    adapters: AdapterSet,
) -> tuple[float, AdapterGrads, BaseGrads, Matrix]:
    targets = np.asarray(targets).reshape(-1)
    n, V = logits.shape
    if targets.shape[0] != n:
        raise ShapeError("targets/logits mismatch", targets.shape, logits.shape)
    if server_cache.final_hidden is None:
        raise ValueError("cache was not produced by forward_server")

    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    z = exps.sum(axis=1)
    loss = float(np.mean(np.log(z) - shifted[np.arange(n), targets]))

    dlogits = exps / z[:, None]
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n

    params = server_cache.params
    cfg = params.config
    b, L = server_cache.batch, server_cache.seq
    dx = (dlogits @ params.out_proj.T).reshape(b, L, cfg.d_model)

    adapter_grads: AdapterGrads = {}
    base_grads: BaseGrads = {}
    for blk in range(cfg.n_blocks - 1, server_cache.split.j - 1, -1):
        dx = _block_backward(params, adapters, dx, server_cache.blocks[blk], blk, adapter_grads, base_grads)
    cut_grad = dx.reshape(n, cfg.d_model)
    return loss, adapter_grads, base_grads, check_finite(cut_grad, "cut gradient")


def backward_client(
    cut_activation_grad: Matrix, client_cache: ActivationCache, adapters: AdapterSet
) -> tuple[AdapterGrads, BaseGrads]:
    params = client_cache.params
    cfg = params.config
    b, L = client_cache.batch, client_cache.seq
    if cut_activation_grad.shape != (b * L, cfg.d_model):
        raise ShapeError("cut gradient shape mismatch", cut_activation_grad.shape, (b * L, cfg.d_model))
    dx = cut_activation_grad.reshape(b, L, cfg.d_model)
    adapter_grads: AdapterGrads = {}
    base_grads: BaseGrads = {}
    for blk in range(client_cache.split.j - 1, -1, -1):
        dx = _block_backward(params, adapters, dx, client_cache.blocks[blk], blk, adapter_grads, base_grads)
    return adapter_grads, base_grads


def perplexity(mean_ce_loss: float) -> float:
    if not np.isfinite(mean_ce_loss):
        raise ValueError(f"loss must be finite, got {mean_ce_loss}")
    return float(np.exp(mean_ce_loss))


def merge_update(W: Matrix, delta: Matrix) -> Matrix:
    if W.shape != delta.shape:
        raise ShapeError("merge shape mismatch", W.shape, delta.shape)
    return W + delta
