"""Plan model, validation, pipeline decomposition, and JSON round trips."""
from __future__ import annotations

import pytest

from conftest import make_table, scan_node, sort_over_scan
from qres.plan import (
    BLOCKING_OPS,
    JOIN_OPS,
    LEAF_OPS,
    NO_PARENT,
    OperatorType,
    PlanError,
    PlanNode,
    QueryPlan,
    decompose_pipelines,
    operator_arity,
    parse_plan,
    plan_to_json,
)


def test_operator_codes_stable():
    # [TRIVIAL] one-byte, dense, stable codes
    codes = [int(op) for op in OperatorType]
    assert codes == list(range(1, 12))
    assert OperatorType.TableScan == 1
    assert OperatorType.ComputeScalar == 11
    assert NO_PARENT == 0


def test_operator_arity():
    for op in OperatorType:
        arity = operator_arity(op)
        if op in LEAF_OPS:
            assert arity == 0
        elif op in JOIN_OPS:
            assert arity == 2
        else:
            assert arity == 1


def test_validate_rejects_arity_violation():
    node = PlanNode(op=OperatorType.Filter, children=[])
    with pytest.raises(PlanError, match="arity"):
        node.validate()


def test_validate_rejects_leaf_without_table():
    node = PlanNode(op=OperatorType.TableScan, children=[])
    with pytest.raises(PlanError, match="table"):
        node.validate()


def test_validate_rejects_negative_cardinality():
    node = scan_node(make_table())
    node.true_out_cardinality = -1
    with pytest.raises(PlanError, match="negative"):
        node.validate()


def test_validate_error_names_offending_path():
    plan = sort_over_scan()
    plan.root.children[0].table = None
    with pytest.raises(PlanError, match=r"root\.children\[0\]"):
        plan.validate()


def test_pipeline_sort_over_scan():
    # [PAPER-style worked example] Sort over Scan decomposes into two
    # pipelines: the scan feeding the sort boundary first, the root last.
    plan = sort_over_scan()
    pipes = decompose_pipelines(plan)
    assert len(pipes) == 2
    assert [n.op for n in pipes[0].nodes] == [OperatorType.TableScan]
    assert pipes[0].boundary is plan.root
    assert [n.op for n in pipes[1].nodes] == [OperatorType.Sort]
    assert pipes[1].boundary is None


def test_pipeline_hash_join_build_side_blocks():
    build = scan_node(make_table(table_id="b"))
    probe = scan_node(make_table(table_id="p"))
    join = PlanNode(
        op=OperatorType.HashJoin, children=[build, probe],
        true_out_cardinality=10, est_out_cardinality=10,
        join_inner_columns=1, join_outer_columns=1, hash_ops_per_tuple=1.0,
    )
    plan = QueryPlan(query_id="hj", root=join)
    plan.validate()
    pipes = decompose_pipelines(plan)
    assert len(pipes) == 2
    # Build child (index 0) forms its own pipeline; probe runs with the join.
    assert pipes[0].nodes[0] is build
    assert {id(n) for n in pipes[1].nodes} == {id(join), id(probe)}


def test_pipeline_partition_is_exact_cover(small_corpus):
    # Invariant: pipelines partition the node set.
    for plan in small_corpus:
        pipes = decompose_pipelines(plan)
        seen = [id(n) for p in pipes for n in p.nodes]
        assert sorted(seen) == sorted(id(n) for n in plan.nodes())
        assert pipes[-1].boundary is None


def test_non_blocking_ops_never_cut(small_corpus):
    for plan in small_corpus:
        for pipe in decompose_pipelines(plan):
            if pipe.boundary is not None:
                assert pipe.boundary.op in BLOCKING_OPS | {OperatorType.HashJoin}


def test_json_round_trip_is_identity(small_corpus):
    for plan in small_corpus:
        text = plan_to_json(plan)
        again = plan_to_json(parse_plan(text))
        assert text == again


def test_json_round_trip_preserves_fields():
    plan = sort_over_scan(tuples=777, sort_cols=3)
    plan.root.observed = {"cpu_us": 12.5, "logical_io": 0.0}
    back = parse_plan(plan_to_json(plan))
    assert back.root.sort_columns == 3
    assert back.root.observed == {"cpu_us": 12.5, "logical_io": 0.0}
    assert back.root.children[0].table.tuple_count == 777


def test_parse_rejects_unknown_operator():
    with pytest.raises(PlanError, match="operator"):
        parse_plan('{"root": {"op": "Sortt", "card_true": 1, "card_est": 1}}')


def test_parse_rejects_non_object():
    with pytest.raises(PlanError):
        parse_plan("[1,2,3]")


def test_observed_total_and_has_labels():
    plan = sort_over_scan()
    assert not plan.has_labels("cpu_us")
    with pytest.raises(PlanError, match="missing observed"):
        plan.observed_total("cpu_us")
    for node in plan.nodes():
        node.observed = {"cpu_us": 2.0}
    assert plan.has_labels("cpu_us")
    assert plan.observed_total("cpu_us") == 4.0
