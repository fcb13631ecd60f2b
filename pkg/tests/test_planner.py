import numpy as np
import pytest

import reference
from splitft import planner
from splitft.importance import ImportanceTable
from splitft.planner import CostModel, RankSet, adapter_cost, base_side_cost, side_cost
from splitft.weights import SplitPoint, WeightId

CM = CostModel(d_model=16, n_blocks=4, batch=2, seq_len=8, kappa_opt=3.0, beta_act=1.0)


def _table(n_blocks, numerators, T=10):
    t = ImportanceTable.for_model(n_blocks, T)
    if numerators:
        t.update_round(numerators, 1)
    return t


def test_rank_set_validation():
    RankSet((1, 2, 4))
    with pytest.raises(ValueError):
        RankSet((2, 1))
    with pytest.raises(ValueError):
        RankSet((1, 1, 2))
    with pytest.raises(ValueError):
        RankSet(())
    assert RankSet((1, 4, 8)).descending() == (8, 4, 1)


def test_adapter_cost_linear_in_rank_and_width():
    assert adapter_cost(WeightId(0, "Q"), 1, CM) == 3.0 * 1 * 32
    assert adapter_cost(WeightId(0, "Q"), 8, CM) == 8 * adapter_cost(WeightId(0, "Q"), 1, CM)
    with pytest.raises(ValueError):
        adapter_cost(WeightId(0, "Q"), 0, CM)


def test_base_side_cost_counts_blocks():
    s = SplitPoint(1)
    assert base_side_cost(s, "client", CM) == 2 * 8 * 16 * 1
    assert base_side_cost(s, "server", CM) == 2 * 8 * 16 * 3
    with pytest.raises(ValueError):
        base_side_cost(s, "middle", CM)


def test_side_cost_rejects_weights_across_the_cut():
    s = SplitPoint(1)
    with pytest.raises(ValueError):
        side_cost(s, "client", {WeightId(2, "Q"): 1}, CM)


def test_sort_candidates_importance_then_canonical_order():
    table = _table(2, {WeightId(0, "V"): 5.0, WeightId(1, "K"): 5.0, WeightId(0, "Q"): 9.0})
    wids = [WeightId(0, k) for k in ("Q", "K", "V", "O")] + [WeightId(1, "K")]
    order = planner.sort_candidates(wids, table)
    assert order[:3] == [WeightId(0, "Q"), WeightId(0, "V"), WeightId(1, "K")]
    # zero-importance ties fall back to block asc then Q<K<V<O
    assert order[3:] == [WeightId(0, "K"), WeightId(0, "O")]


def test_greedy_assign_takes_largest_fitting_rank():
    table = _table(2, {WeightId(0, "Q"): 3.0, WeightId(0, "K"): 2.0})
    cands = planner.sort_candidates([WeightId(0, "Q"), WeightId(0, "K")], table)
    unit = adapter_cost(WeightId(0, "Q"), 1, CM)
    got = planner.greedy_assign(5 * unit, cands, RankSet((1, 2, 4)), CM)
    assert got == {WeightId(0, "Q"): 4, WeightId(0, "K"): 1}


def test_greedy_assign_empty_when_nothing_fits():
    table = _table(2, {})
    cands = planner.sort_candidates([WeightId(0, "Q")], table)
    assert planner.greedy_assign(1.0, cands, RankSet((1, 2)), CM) == {}


def test_global_importance_zero_over_zero_is_zero():
    table = _table(4, {})
    assert planner.global_importance(SplitPoint(1), {0: {}}, {}, table, CM) == 0.0


def test_plan_for_split_marks_infeasible_sides():
    table = _table(4, {})
    split = SplitPoint(2)
    base = base_side_cost(split, "client", CM)
    plan = planner.plan_for_split(split, {0: base - 1, 1: base + 1}, 1e9, table, RankSet((1,)), CM)
    assert plan.client_feasible == {0: False, 1: True}
    assert plan.client_assignments[0] == {}
    assert plan.server_feasible


def test_select_split_prefers_smallest_j_on_ties():
    table = _table(4, {})  # all-zero importance: every split scores 0
    plan = planner.select_split(
        [SplitPoint(j) for j in (1, 2, 3)], {0: 1e9}, 1e9, table, RankSet((1,)), CM
    )
    assert plan.split.j == 1


def test_threshold_update_examples():
    assert planner.threshold_update(0.05, 0.2, 0.01) == pytest.approx(0.05 * 0.8, abs=1e-15)
    # large shifts floor the multiplier at epsilon
    assert planner.threshold_update(0.05, 2.0, 0.01) == pytest.approx(0.05 * 0.01, abs=1e-15)
    with pytest.raises(ValueError):
        planner.threshold_update(0.0, 0.1, 0.01)


def test_decide_adjustment():
    assert planner.decide_adjustment(0.2, 0.1, True)
    assert not planner.decide_adjustment(0.05, 0.1, True)
    assert planner.decide_adjustment(0.0, 0.1, False)  # infeasible forces a re-plan


def test_delta_importance_requires_choices():
    table = _table(2, {})
    with pytest.raises(ValueError):
        planner.delta_importance(SplitPoint(1), [SplitPoint(1)], {0: 1e9}, 1e9, table, RankSet((1,)), CM)


def _random_instance(rng):
    n_blocks = int(rng.integers(2, 5))
    n_clients = int(rng.integers(1, 4))
    cm = CostModel(
        d_model=int(rng.integers(1, 9)) * 8,
        n_blocks=n_blocks,
        batch=int(rng.integers(1, 4)),
        seq_len=int(rng.integers(2, 17)),
        kappa_opt=float(rng.integers(1, 5)),
        beta_act=float(rng.integers(1, 3)),
    )
    numerators = {
        WeightId(b, k): float(np.round(rng.uniform(0, 10), 3))
        for b in range(n_blocks) for k in ("Q", "K", "V", "O")
        if rng.random() < 0.8
    }
    unit = planner.adapter_cost(WeightId(0, "Q"), 1, cm)
    max_base = planner.base_side_cost(SplitPoint(1), "server", cm)
    budgets = {cid: float(rng.uniform(0, max_base + 40 * unit)) for cid in range(n_clients)}
    server_budget = float(rng.uniform(0, max_base + 80 * unit))
    return cm, numerators, budgets, server_budget


def test_planner_matches_naive_oracle_on_random_instances():
    rng = np.random.default_rng(42)
    ranks = (1, 2, 4, 8, 16, 32)
    for _ in range(300):
        cm, numerators, budgets, server_budget = _random_instance(rng)
        table = _table(cm.n_blocks, numerators)
        plan = planner.select_split(
            [SplitPoint(j) for j in range(1, cm.n_blocks)],
            budgets, server_budget, table, RankSet(ranks), cm,
        )
        unit = planner.adapter_cost(WeightId(0, "Q"), 1, cm)
        base_per_block = cm.beta_act * cm.batch * cm.seq_len * cm.d_model
        ref_j, ref_cas, ref_sas, _ = reference.naive_select_split(
            list(range(1, cm.n_blocks)), cm.n_blocks, budgets, server_budget,
            numerators, ranks, unit, base_per_block,
        )
        assert plan.split.j == ref_j
        assert plan.server_assignment == ref_sas
        assert plan.client_assignments == ref_cas
        # feasibility: emitted plans respect the budgets
        for cid, a in plan.client_assignments.items():
            if plan.client_feasible[cid]:
                assert planner.side_cost(plan.split, "client", a, cm) <= budgets[cid]
        if plan.server_feasible:
            assert planner.side_cost(plan.split, "server", plan.server_assignment, cm) <= server_budget
