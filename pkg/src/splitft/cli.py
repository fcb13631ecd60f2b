"""Command-line entry point.

Subcommands:
  run        full experiment (in-process or over TCP) emitting a metrics CSV
  plan       one-shot budget/importance -> split + rank assignment inspection
  agg-check  aggregation property suites (exact concat vs. noisy averaging)
  grad-check finite-difference validation of all hand-derived gradients

Every subcommand is non-interactive and returns a nonzero exit status when
any check fails.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import aggregation, lora, model, net, orchestrator, planner
from .aggregation import AdapterUpload, RankMismatchError
from .config import ExperimentConfig, parse_config
from .importance import ImportanceTable
from .linalg import derive_seed
from .metrics import emit_csv, ranks_string
from .planner import RankSet
from .weights import SplitPoint, WeightId


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _load_config(args) -> ExperimentConfig:
    config = parse_config(args.config) if args.config else ExperimentConfig().validate()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    return config


def cmd_run(args) -> int:
    config = _load_config(args)
    if args.mode == "sim":
        reports, summary = orchestrator.run_experiment(config)
    elif args.mode == "net-server":
        if args.listen is None:
            print("run --mode net-server requires --listen host:port", file=sys.stderr)
            return 2
        host, port = args.listen
        reports, summary = net.serve(config, host, port)
    else:  # net-client
        if args.connect is None or args.client_id is None:
            print("run --mode net-client requires --connect host:port and --client-id", file=sys.stderr)
            return 2
        host, port = args.connect
        rounds = net.run_client(config, args.client_id, host, port)
        print(f"client {args.client_id} finished after {rounds} rounds")
        return 0
    emit_csv(reports, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {args.out}")
    return 0


def _parse_importance(text: str) -> dict[WeightId, float]:
    out: dict[WeightId, float] = {}
    for entry in filter(None, (e.strip() for e in text.split(";"))):
        name, _, val = entry.partition("=")
        block_kind = name.strip()
        if not block_kind.startswith("b") or "." not in block_kind:
            raise ValueError(f"expected b<block>.<kind>=<value>, got {entry!r}")
        block_s, _, kind = block_kind[1:].partition(".")
        out[WeightId(int(block_s), kind)] = float(val)
    return out


def cmd_plan(args) -> int:
    config = _load_config(args)
    cm = config.cost_model()
    rank_set = RankSet(config.rank_set)

    if args.client_budgets:
        budgets = {i: float(b) for i, b in enumerate(args.client_budgets.split(","))}
    else:
        budgets = {
            cid: orchestrator.budget_trace(config.client_budget, cid, 1, config.seed)
            for cid in range(config.n_clients)
        }
    server_budget = (
        float(args.server_budget)
        if args.server_budget is not None
        else orchestrator.budget_trace(config.server_budget, None, 1, config.seed)
    )

    table = ImportanceTable.for_model(config.model.n_blocks, config.total_rounds)
    if args.importance:
        table.update_round(_parse_importance(args.importance), 1)

    plan = planner.select_split(
        config.model.split_points(), budgets, server_budget, table, rank_set, cm
    )
    print(f"split_j = {plan.split.j}")
    print(f"I_g = {plan.global_importance:.17g}")
    for cid in sorted(plan.client_assignments):
        feas = "" if plan.client_feasible.get(cid, True) else "  (base blocks exceed budget)"
        print(f"client {cid} (budget {budgets[cid]:g}): {ranks_string(plan.client_assignments[cid])}{feas}")
    feas = "" if plan.server_feasible else "  (base blocks exceed budget)"
    print(f"server (budget {server_budget:g}): {ranks_string(plan.server_assignment)}{feas}")
    return 0


def cmd_agg_check(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    ranks_pool = (1, 2, 4, 8, 16, 32)

    max_err = 0.0
    for _ in range(args.trials):
        n = int(rng.integers(2, 6))
        d = int(rng.integers(8, 65))
        wid = WeightId(0, "Q")
        uploads = []
        for cid in range(n):
            r = int(ranks_pool[rng.integers(0, len(ranks_pool))])
            r = min(r, d)
            B = rng.standard_normal((d, r))
            A = rng.standard_normal((r, d))
            uploads.append(AdapterUpload(cid, wid, B, A, int(rng.integers(1, 100))))
        got = aggregation.naa_delta(uploads, "sum")
        want = sum(u.B @ u.A for u in uploads)
        max_err = max(max_err, float(np.abs(got - want).max()))
    naa_ok = max_err <= 1e-9
    print(f"concat aggregation: max abs error {max_err:.3e} over {args.trials} trials "
          f"-> {'PASS' if naa_ok else 'FAIL'} (<= 1e-9)")

    noisy = 0
    haa_trials = 100
    for _ in range(haa_trials):
        n, d, r = int(rng.integers(2, 6)), 16, 4
        uploads = [
            AdapterUpload(cid, WeightId(0, "Q"), rng.standard_normal((d, r)),
                          rng.standard_normal((r, d)), 1)
            for cid in range(n)
        ]
        got = aggregation.haa_delta(uploads)
        true_mean = sum(u.B @ u.A for u in uploads) / n
        rel = float(np.linalg.norm(got - true_mean) / np.linalg.norm(true_mean))
        noisy += rel > 0.01
    haa_ok = noisy >= 99
    print(f"factor averaging: deviated >1% from the true mean update in {noisy}/{haa_trials} trials "
          f"-> {'PASS' if haa_ok else 'FAIL'} (>= 99)")

    try:
        aggregation.haa_delta([
            AdapterUpload(0, WeightId(0, "Q"), np.zeros((8, 2)), np.zeros((2, 8)), 1),
            AdapterUpload(1, WeightId(0, "Q"), np.zeros((8, 4)), np.zeros((4, 8)), 1),
        ])
        het_ok = False
    except RankMismatchError:
        het_ok = True
    print(f"factor averaging rejects mixed ranks -> {'PASS' if het_ok else 'FAIL'}")

    return 0 if naa_ok and haa_ok and het_ok else 1


def _gradcheck_setup(seed: int):
    """Small 2-block model with inflated scales so every gradient is well
    above finite-difference roundoff noise."""
    cfg = model.ModelConfig(n_blocks=2, d_model=8, n_heads=2, vocab_size=11, seq_len=4)
    params = model.build_model(cfg, seed)
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "gradcheck")))
    for wid in list(params.attn):
        params.attn[wid] = 0.5 * rng.standard_normal((8, 8))
    params.tok_emb = 0.5 * rng.standard_normal(params.tok_emb.shape)
    params.pos_emb = 0.5 * rng.standard_normal(params.pos_emb.shape)
    params.out_proj = 0.5 * rng.standard_normal(params.out_proj.shape)

    split = SplitPoint(1)
    adapters = {}
    for i, wid in enumerate(sorted(params.attn, key=WeightId.sort_key)):
        r = (1, 2, 4, 2)[i % 4]
        ad = lora.new_adapter(wid, r, 8, 8, derive_seed(seed, "ad", i))
        ad.B = 0.3 * rng.standard_normal(ad.B.shape)
        ad.A = 0.3 * rng.standard_normal(ad.A.shape)
        adapters[wid] = ad
    c_ads = {w: a for w, a in adapters.items() if split.client_side(w)}
    s_ads = {w: a for w, a in adapters.items() if not split.client_side(w)}
    tokens = rng.integers(0, cfg.vocab_size, size=(2, 4))
    return params, split, c_ads, s_ads, tokens


def _pipeline_loss(params, split, c_ads, s_ads, tokens) -> float:
    acts, _ = model.forward_client(params, c_ads, tokens, split)
    logits, scache = model.forward_server(params, s_ads, acts, split)
    loss, _, _, _ = model.loss_and_grad_server(logits, tokens, scache, s_ads)
    return loss


def grad_check_seed(seed: int, h: float, tol: float) -> float:
    """Max relative error between analytic and central-difference gradients
    for one seeded instance."""
    params, split, c_ads, s_ads, tokens = _gradcheck_setup(seed)

    acts, ccache = model.forward_client(params, c_ads, tokens, split)
    logits, scache = model.forward_server(params, s_ads, acts, split)
    _, s_ad_grads, s_base_grads, cut_grad = model.loss_and_grad_server(logits, tokens, scache, s_ads)
    c_ad_grads, c_base_grads = model.backward_client(cut_grad, ccache, c_ads)

    worst = 0.0

    def rel(analytic: float, fd: float) -> float:
        return abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-8)

    def fd_entry(mat, i, j) -> float:
        orig = mat[i, j]
        mat[i, j] = orig + h
        up = _pipeline_loss(params, split, c_ads, s_ads, tokens)
        mat[i, j] = orig - h
        down = _pipeline_loss(params, split, c_ads, s_ads, tokens)
        mat[i, j] = orig
        return (up - down) / (2 * h)

    for ads, grads in ((c_ads, c_ad_grads), (s_ads, s_ad_grads)):
        for wid, (dB, dA) in grads.items():
            for mat, g in ((ads[wid].B, dB), (ads[wid].A, dA)):
                for i in range(mat.shape[0]):
                    for j in range(mat.shape[1]):
                        worst = max(worst, rel(g[i, j], fd_entry(mat, i, j)))

    for grads in (c_base_grads, s_base_grads):
        for wid, g in grads.items():
            mat = params.attn[wid]
            for i, j in ((0, 0), (3, 5), (7, 7), (2, 6)):
                worst = max(worst, rel(g[i, j], fd_entry(mat, i, j)))

    # Cut activations: loss as a function of the values crossing the split.
    def cut_loss(a):
        lg, sc = model.forward_server(params, s_ads, a, split)
        loss, _, _, _ = model.loss_and_grad_server(lg, tokens, sc, s_ads)
        return loss

    for i in range(acts.shape[0]):
        for j in range(acts.shape[1]):
            orig = acts[i, j]
            acts[i, j] = orig + h
            up = cut_loss(acts)
            acts[i, j] = orig - h
            down = cut_loss(acts)
            acts[i, j] = orig
            worst = max(worst, rel(cut_grad[i, j], (up - down) / (2 * h)))
    return worst


def cmd_grad_check(args) -> int:
    worst = 0.0
    for seed in range(args.seeds):
        worst = max(worst, grad_check_seed(seed, args.h, args.tol))
    ok = worst <= args.tol
    print(f"gradient check: max relative error {worst:.3e} over {args.seeds} seeds "
          f"-> {'PASS' if ok else 'FAIL'} (<= {args.tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitft", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a full experiment and emit the metrics CSV")
    run.add_argument("--config", help="path to a key = value config file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    run.add_argument("--mode", choices=("sim", "net-server", "net-client"), default="sim")
    run.add_argument("--listen", type=_parse_address, help="host:port to serve on (net-server)")
    run.add_argument("--connect", type=_parse_address, help="host:port to connect to (net-client)")
    run.add_argument("--client-id", type=int, help="this client's id (net-client)")
    run.set_defaults(func=cmd_run)

    plan = sub.add_parser("plan", help="print the split/rank plan for given budgets")
    plan.add_argument("--config", help="path to a key = value config file")
    plan.add_argument("--seed", type=int, help="override the config seed")
    plan.add_argument("--client-budgets", help="comma-separated per-client budgets")
    plan.add_argument("--server-budget", type=float)
    plan.add_argument("--importance", help='importance numerators, e.g. "b0.Q=2.5;b1.V=1.0"')
    plan.set_defaults(func=cmd_plan)

    agg = sub.add_parser("agg-check", help="aggregation property suites")
    agg.add_argument("--trials", type=int, default=1000)
    agg.add_argument("--seed", type=int, default=0)
    agg.set_defaults(func=cmd_agg_check)

    grad = sub.add_parser("grad-check", help="finite-difference gradient validation")
    grad.add_argument("--seeds", type=int, default=20)
    grad.add_argument("--h", type=float, default=1e-5)
    grad.add_argument("--tol", type=float, default=1e-4)
    grad.set_defaults(func=cmd_grad_check)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
