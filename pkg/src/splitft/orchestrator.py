"""Synchronous split-federated training loop.

Each round: (1) refresh the importance table from last round's gradients
and re-plan (full split re-selection when the trigger fires or no plan
exists yet, otherwise a rank-only re-fit to the round's budgets); (2) every
client runs its forward half, the server finishes the forward, computes
loss and gradients, and both sides take one plain-SGD step on their
adapters; (3) on aggregation rounds the fed server concatenates client
uploads per weight, merges the exact delta into the frozen base, and hands
out fresh adapters.

The server keeps one shared adapter set: gradients are accumulated across
client batches within the round and applied as a single averaged step.
Base weights change only through the aggregation merge.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import aggregation, importance, lora, model, planner
from .config import BudgetSpec, ExperimentConfig
from .importance import ImportanceTable
from .linalg import derive_seed
from .lora import LoraAdapter
from .model import AdapterSet, ModelParams
from .planner import RankSet, RoundPlan
from .weights import SplitPoint, WeightId, all_weight_ids


def make_shard(config: ExperimentConfig, client_id: int) -> np.ndarray:
    """Synthetic copy task: each target equals its input token, so the loss
    is bounded below by zero and the task is fully learnable."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "data", client_id)))
    return rng.integers(0, config.model.vocab_size, size=(config.shard_size, config.model.seq_len))


def budget_trace(spec: BudgetSpec, client_id: int | None, t: int, seed: int) -> float:
    spec.validate()
    if spec.kind == "fixed":
        return spec.value
    if spec.kind == "uniform":
        tag = -1 if client_id is None else client_id
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "budget", tag)))
        return spec.lo + (spec.hi - spec.lo) * rng.random()
    if t not in spec.table:
        raise KeyError(f"scripted budget table has no entry for round {t}")
    return spec.table[t]


@dataclass
class ClientSim:
    client_id: int
    shard: np.ndarray  # shard_size x seq_len token ids
    adapters: AdapterSet = field(default_factory=dict)
    cursor: int = 0

    def next_batch(self, batch: int) -> np.ndarray:
        n = self.shard.shape[0]
        idx = [(self.cursor + i) % n for i in range(batch)]
        self.cursor = (self.cursor + batch) % n
        return self.shard[idx]


@dataclass
class ServerSim:
    adapters: AdapterSet = field(default_factory=dict)


@dataclass
class RoundReport:
    t: int
    losses: dict[int, float]
    ppls: dict[int, float]
    split_j: int
    client_ranks: dict[int, dict[WeightId, int]]
    server_ranks: dict[WeightId, int]
    global_importance: float
    delta_I: float
    tau: float
    aggregated: bool
    replanned: bool
    replan_reason: str  # "", "initial", "threshold", "infeasible"
    infeasible_clients: list[int]
    duration_s: float


@dataclass
class ExperimentState:
    config: ExperimentConfig
    params: ModelParams
    clients: list[ClientSim]
    server: ServerSim
    table: ImportanceTable
    split_set: list[SplitPoint]
    rank_set: RankSet
    plan: RoundPlan | None = None
    tau: float = 0.0
    last_numerators: dict[WeightId, float] = field(default_factory=dict)
    replan_count: int = 0
    budget_violations: int = 0


def init_state(config: ExperimentConfig) -> ExperimentState:
    config.validate()
    params = model.build_model(config.model, derive_seed(config.seed, "model"))
    clients = [ClientSim(cid, make_shard(config, cid)) for cid in range(config.n_clients)]
    table = ImportanceTable.for_model(config.model.n_blocks, config.total_rounds)
    return ExperimentState(
        config=config,
        params=params,
        clients=clients,
        server=ServerSim(),
        table=table,
        split_set=config.model.split_points(),
        rank_set=RankSet(config.rank_set),
        tau=config.tau0,
    )


def _reconcile_adapters(
    current: AdapterSet, assignment: dict[WeightId, int], d: int, seed_parts: tuple
) -> AdapterSet:
    """Keep adapters whose rank is unchanged; create fresh ones otherwise.
    In-flight low-rank state of re-ranked or dropped weights is discarded."""
    out: AdapterSet = {}
    for wid in sorted(assignment, key=WeightId.sort_key):
        r = assignment[wid]
        old = current.get(wid)
        if old is not None and old.r == r:
            out[wid] = old
        else:
            out[wid] = lora.new_adapter(wid, r, d, d, derive_seed(*seed_parts, wid.block, wid.kind))
    return out


def _round_budgets(config: ExperimentConfig, t: int) -> tuple[dict[int, float], float]:
    cb = {cid: budget_trace(config.client_budget, cid, t, config.seed) for cid in range(config.n_clients)}
    sb = budget_trace(config.server_budget, None, t, config.seed)
    return cb, sb


def plan_round(state: ExperimentState, t: int) -> tuple[RoundPlan, float, bool, str]:
    """Returns (plan, delta_I, replanned, reason)."""
    config = state.config
    cm = config.cost_model()
    client_budgets, server_budget = _round_budgets(config, t)

    if t > 1 and state.last_numerators:
        state.table.update_round(state.last_numerators, t)

    if state.plan is None:
        plan = planner.select_split(state.split_set, client_budgets, server_budget, state.table, state.rank_set, cm)
        return plan, 0.0, True, "initial"

    current = state.plan.split
    delta_I = 0.0
    if len(state.split_set) >= 2:
        delta_I = planner.delta_importance(
            current, state.split_set, client_budgets, server_budget, state.table, state.rank_set, cm
        )
    state.tau = planner.threshold_update(state.tau, delta_I, config.epsilon)

    rank_only = planner.plan_for_split(current, client_budgets, server_budget, state.table, state.rank_set, cm)
    feasible = rank_only.server_feasible and all(rank_only.client_feasible.values())
    if planner.decide_adjustment(delta_I, state.tau, feasible):
        plan = planner.select_split(state.split_set, client_budgets, server_budget, state.table, state.rank_set, cm)
        reason = "threshold" if feasible else "infeasible"
        return plan, delta_I, True, reason
    return rank_only, delta_I, False, ""


def _check_budgets(state: ExperimentState, plan: RoundPlan, t: int) -> None:
    cm = state.config.cost_model()
    client_budgets, server_budget = _round_budgets(state.config, t)
    for cid, assignment in plan.client_assignments.items():
        if plan.client_feasible.get(cid, True):
            if planner.side_cost(plan.split, "client", assignment, cm) > client_budgets[cid]:
                state.budget_violations += 1
    if plan.server_feasible:
        if planner.side_cost(plan.split, "server", plan.server_assignment, cm) > server_budget:
            state.budget_violations += 1


def run_round(state: ExperimentState, t: int) -> RoundReport:
    t0 = time.perf_counter()
    config = state.config
    d = config.model.d_model

    # (1) importance refresh + planning
    plan, delta_I, replanned, reason = plan_round(state, t)
    if replanned:
        state.replan_count += 1
    state.plan = plan
    _check_budgets(state, plan, t)

    for client in state.clients:
        client.adapters = _reconcile_adapters(
            client.adapters, plan.client_assignments[client.client_id], d,
            (config.seed, "adapter", t, client.client_id),
        )
    state.server.adapters = _reconcile_adapters(
        state.server.adapters, plan.server_assignment, d, (config.seed, "adapter", t, -1)
    )

    # (2) forward/backward per client, SGD on adapters
    lr = config.learning_rate
    losses: dict[int, float] = {}
    numerators: dict[WeightId, float] = {w: 0.0 for w in all_weight_ids(config.model.n_blocks)}
    server_grad_acc: dict[WeightId, tuple] = {}

    for client in state.clients:
        tokens = client.next_batch(config.batch)
        targets = tokens  # copy task
        acts, ccache = model.forward_client(state.params, client.adapters, tokens, plan.split)
        logits, scache = model.forward_server(state.params, state.server.adapters, acts, plan.split)
        loss, s_ad_grads, s_base_grads, cut_grad = model.loss_and_grad_server(
            logits, targets, scache, state.server.adapters
        )
        c_ad_grads, c_base_grads = model.backward_client(cut_grad, ccache, client.adapters)
        losses[client.client_id] = loss

        for wid, (dB, dA) in c_ad_grads.items():
            ad = client.adapters[wid]
            ad.B = ad.B - lr * dB
            ad.A = ad.A - lr * dA
        for wid, (dB, dA) in s_ad_grads.items():
            acc = server_grad_acc.get(wid)
            server_grad_acc[wid] = (dB, dA) if acc is None else (acc[0] + dB, acc[1] + dA)
        for grads in (c_base_grads, s_base_grads):
            for wid, g in grads.items():
                numerators[wid] += importance.gw_numerator(state.params.attn[wid], g)

    n = len(state.clients)
    for wid, (dB, dA) in server_grad_acc.items():
        ad = state.server.adapters[wid]
        ad.B = ad.B - lr * (dB / n)
        ad.A = ad.A - lr * (dA / n)
    state.last_numerators = numerators

    # (3) periodic fed-server aggregation of client-side adapters
    aggregated = False
    if t % config.agg_period == 0:
        agg_seed = derive_seed(config.seed, "agg", t)
        wids = sorted({w for c in state.clients for w in c.adapters}, key=WeightId.sort_key)
        for wid in wids:
            owners = {c.client_id: c for c in state.clients if wid in c.adapters}
            uploads = [
                aggregation.AdapterUpload(cid, wid, c.adapters[wid].B, c.adapters[wid].A, config.shard_size)
                for cid, c in owners.items()
            ]
            if config.aggregator == "haa":
                delta = aggregation.haa_delta(uploads)
                state.params.attn[wid] = model.merge_update(state.params.attn[wid], delta)
                fresh = {
                    cid: lora.reinit(c.adapters[wid], derive_seed(agg_seed, "reinit", cid, wid.block, wid.kind))
                    for cid, c in owners.items()
                }
            else:
                delta = aggregation.naa_delta(uploads, config.agg_mode)
                fresh = aggregation.apply_and_reinit(
                    state.params, wid, delta, {cid: c.adapters[wid] for cid, c in owners.items()}, agg_seed
                )
            for cid, ad in fresh.items():
                owners[cid].adapters[wid] = ad
        aggregated = True

    return RoundReport(
        t=t,
        losses=losses,
        ppls={cid: model.perplexity(v) for cid, v in losses.items()},
        split_j=plan.split.j,
        client_ranks={cid: dict(a) for cid, a in plan.client_assignments.items()},
        server_ranks=dict(plan.server_assignment),
        global_importance=plan.global_importance,
        delta_I=delta_I,
        tau=state.tau,
        aggregated=aggregated,
        replanned=replanned,
        replan_reason=reason,
        infeasible_clients=sorted(cid for cid, ok in plan.client_feasible.items() if not ok),
        duration_s=time.perf_counter() - t0,
    )


def run_experiment(config: ExperimentConfig) -> tuple[list[RoundReport], dict]:
    state = init_state(config)
    reports = [run_round(state, t) for t in range(1, config.total_rounds + 1)]
    first, last = reports[0], reports[-1]
    summary = {
        "initial_mean_ppl": float(np.mean(list(first.ppls.values()))),
        "final_mean_ppl": float(np.mean(list(last.ppls.values()))),
        "final_ppl_per_client": {cid: last.ppls[cid] for cid in sorted(last.ppls)},
        "replan_count": state.replan_count,
        "budget_violations": state.budget_violations,
    }
    return reports, summary
