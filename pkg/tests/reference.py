"""Independent straight-line oracles used by the test suite.

These deliberately avoid the library's computation paths: the transformer
reference materializes every effective weight W + B A and backpropagates
with explicit per-token Jacobians; the planner reference is a direct
transliteration of the greedy procedure with no shared helpers.
"""

from __future__ import annotations

import numpy as np

from splitft.weights import KIND_ORDER, KINDS, WeightId

LN_EPS = 1e-5


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _ln_token(x):
    mu = x.mean()
    var = x.var()
    inv = 1.0 / np.sqrt(var + LN_EPS)
    return (x - mu) * inv, inv


def _ln_jacobian(y, inv, d):
    # d LN / d x for one token: inv * (I - 1/d * 11^T - y y^T / d)
    return inv * (np.eye(d) - np.ones((d, d)) / d - np.outer(y, y) / d)


def unsplit_forward_backward(params, adapters, tokens, targets=None):
    """Monolithic forward (and backward when targets given) of the whole
    model, with materialized effective weights.

    Returns (logits, loss, adapter_grads, base_grads) where the gradient
    dicts are None when targets is None.
    """
    cfg = params.config
    b, L = tokens.shape
    d, h, dh = cfg.d_model, cfg.n_heads, cfg.d_head

    w_eff = {}
    for wid, W in params.attn.items():
        ad = adapters.get(wid)
        w_eff[wid] = W + ad.B @ ad.A if ad is not None else W.copy()

    x = np.zeros((b, L, d))
    for bi in range(b):
        for li in range(L):
            x[bi, li] = params.tok_emb[tokens[bi, li]] + params.pos_emb[li]

    caches = []
    for blk in range(cfg.n_blocks):
        xn = np.zeros_like(x)
        invs = np.zeros((b, L))
        for bi in range(b):
            for li in range(L):
                xn[bi, li], invs[bi, li] = _ln_token(x[bi, li])
        q = xn @ w_eff[WeightId(blk, "Q")]
        k = xn @ w_eff[WeightId(blk, "K")]
        v = xn @ w_eff[WeightId(blk, "V")]
        ctx = np.zeros_like(x)
        probs = np.zeros((b, h, L, L))
        for bi in range(b):
            for hi in range(h):
                qs = q[bi, :, hi * dh:(hi + 1) * dh]
                ks = k[bi, :, hi * dh:(hi + 1) * dh]
                vs = v[bi, :, hi * dh:(hi + 1) * dh]
                s = qs @ ks.T / np.sqrt(dh)
                for i in range(L):
                    s[i, i + 1:] = -np.inf
                p = _softmax_rows(s)
                probs[bi, hi] = p
                ctx[bi, :, hi * dh:(hi + 1) * dh] = p @ vs
        out = ctx @ w_eff[WeightId(blk, "O")]
        caches.append((x.copy(), xn, invs, q, k, v, probs, ctx))
        x = x + out

    hidden = x.reshape(b * L, d)
    logits = hidden @ params.out_proj
    if targets is None:
        return logits, None, None, None

    flat_t = np.asarray(targets).reshape(-1)
    n = b * L
    p = _softmax_rows(logits)
    loss = float(np.mean(-np.log(p[np.arange(n), flat_t])))
    dlogits = p.copy()
    dlogits[np.arange(n), flat_t] -= 1.0
    dlogits /= n
    dx = (dlogits @ params.out_proj.T).reshape(b, L, d)

    eff_grads = {}
    for blk in range(cfg.n_blocks - 1, -1, -1):
        x_in, xn, invs, q, k, v, probs, ctx = caches[blk]
        d_out = dx.copy()
        eff_grads[WeightId(blk, "O")] = ctx.reshape(b * L, d).T @ d_out.reshape(b * L, d)
        d_ctx = d_out @ w_eff[WeightId(blk, "O")].T
        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros_like(v)
        for bi in range(b):
            for hi in range(h):
                sl = slice(hi * dh, (hi + 1) * dh)
                p_ = probs[bi, hi]
                dctx_s = d_ctx[bi, :, sl]
                dp = dctx_s @ v[bi, :, sl].T
                dv[bi, :, sl] += p_.T @ dctx_s
                ds = np.zeros_like(dp)
                for i in range(L):
                    row = p_[i]
                    ds[i] = (np.diag(row) - np.outer(row, row)) @ dp[i]
                ds /= np.sqrt(dh)
                dq[bi, :, sl] = ds @ k[bi, :, sl]
                dk[bi, :, sl] = ds.T @ q[bi, :, sl]
        eff_grads[WeightId(blk, "Q")] = xn.reshape(b * L, d).T @ dq.reshape(b * L, d)
        eff_grads[WeightId(blk, "K")] = xn.reshape(b * L, d).T @ dk.reshape(b * L, d)
        eff_grads[WeightId(blk, "V")] = xn.reshape(b * L, d).T @ dv.reshape(b * L, d)
        dxn = (
            dq @ w_eff[WeightId(blk, "Q")].T
            + dk @ w_eff[WeightId(blk, "K")].T
            + dv @ w_eff[WeightId(blk, "V")].T
        )
        dx_new = dx.copy()
        for bi in range(b):
            for li in range(L):
                J = _ln_jacobian(xn[bi, li], invs[bi, li], d)
                dx_new[bi, li] += J.T @ dxn[bi, li]
        dx = dx_new

    adapter_grads = {}
    for wid, ad in adapters.items():
        g = eff_grads[wid]
        adapter_grads[wid] = (g @ ad.A.T, ad.B.T @ g)
    return logits, loss, adapter_grads, eff_grads


def naive_greedy_assign(budget, candidates, ranks_ascending, cost_per_rank_unit):
    """Direct transliteration of the greedy rank assignment.

    candidates: list of weight ids already sorted by importance descending.
    cost_per_rank_unit: cost of a rank-1 adapter (cost is linear in rank).
    """
    remaining = budget
    out = {}
    for wid in candidates:
        for r in sorted(ranks_ascending, reverse=True):
            cost = r * cost_per_rank_unit
            if cost <= remaining:
                out[wid] = r
                remaining = remaining - cost
                break
    return out


def naive_sort(weight_ids, numerators):
    order = []
    for wid in weight_ids:
        order.append((-numerators.get(wid, 0.0), wid.block, KIND_ORDER[wid.kind], wid))
    order.sort(key=lambda t: t[:3])
    return [t[3] for t in order]


def naive_select_split(
    split_js, n_blocks, client_budgets, server_budget, numerators,
    ranks, cost_per_rank_unit, base_cost_per_block,
):
    """Exhaustive evaluation over candidate splits with the naive greedy.

    Returns (best_j, client_assignments, server_assignment, best_ig).
    """
    wids = [WeightId(bk, kd) for bk in range(n_blocks) for kd in KINDS]
    best = None
    for j in split_js:
        cw = naive_sort([w for w in wids if w.block < j], numerators)
        sw = naive_sort([w for w in wids if w.block >= j], numerators)
        cas = {}
        for cid in sorted(client_budgets):
            rem = client_budgets[cid] - base_cost_per_block * j
            cas[cid] = naive_greedy_assign(rem, cw, ranks, cost_per_rank_unit) if rem >= 0 else {}
        srem = server_budget - base_cost_per_block * (n_blocks - j)
        sas = naive_greedy_assign(srem, sw, ranks, cost_per_rank_unit) if srem >= 0 else {}

        nc = sum(len(a) for a in cas.values())
        ig = 0.0
        if nc:
            ig += sum(
                numerators.get(w, 0.0) / (r * cost_per_rank_unit)
                for a in cas.values() for w, r in a.items()
            ) / nc
        if sas:
            ig += sum(numerators.get(w, 0.0) / (r * cost_per_rank_unit) for w, r in sas.items()) / len(sas)
        if best is None or ig > best[3] or (ig == best[3] and j < best[0]):
            best = (j, cas, sas, ig)
    return best
