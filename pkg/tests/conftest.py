"""Shared fixtures: small plans, corpora, and trained registries."""
from __future__ import annotations

import pytest

from qres.gbrt import TrainConfig
from qres.plan import OperatorType, PlanNode, QueryPlan, TableMeta
from qres.synth import CorpusSpec, TableSpec, generate_corpus


def make_table(tuples: int = 10_000, row_bytes: float = 100.0, columns: int = 8,
               table_id: str = "t", index_depth: int = 3) -> TableMeta:
    pages = max(1, -(-int(tuples * row_bytes) // 8192))
    return TableMeta(table_id=table_id, tuple_count=tuples, page_count=pages,
                     column_count=columns, avg_row_bytes=row_bytes,
                     index_depth=index_depth)


def scan_node(table: TableMeta, out: int | None = None) -> PlanNode:
    out = table.tuple_count if out is None else out
    return PlanNode(
        op=OperatorType.TableScan, children=[],
        true_out_cardinality=out, est_out_cardinality=out,
        out_row_bytes=table.avg_row_bytes, table=table,
        est_io_cost=float(table.page_count),
    )


def sort_over_scan(tuples: int = 1024, sort_cols: int = 1) -> QueryPlan:
    table = make_table(tuples=tuples)
    scan = scan_node(table)
    sort = PlanNode(
        op=OperatorType.Sort, children=[scan],
        true_out_cardinality=tuples, est_out_cardinality=tuples,
        out_row_bytes=table.avg_row_bytes, est_io_cost=1.0,
        sort_columns=sort_cols,
    )
    plan = QueryPlan(query_id="sort-scan", root=sort)
    plan.validate()
    return plan


@pytest.fixture(scope="session")
def tiny_tables() -> list[TableSpec]:
    return [
        TableSpec("big", 20_000, 100.0, 8),
        TableSpec("small", 4_000, 120.0, 6),
    ]


@pytest.fixture(scope="session")
def all_template_spec(tiny_tables) -> CorpusSpec:
    return CorpusSpec(
        templates={name: 1.0 for name in (
            "scan", "filter_scan", "sort_scan", "seek",
            "hash_agg", "hash_join", "merge_join", "nested_loop",
        )},
        tables=tiny_tables,
        scales=[1.0, 2.0, 4.0],
        query_count=64,
        rng_seed=1234,
        noise_sigma=0.05,
        card_sigma=0.1,
    )


@pytest.fixture(scope="session")
def small_corpus(all_template_spec):
    return generate_corpus(all_template_spec)


@pytest.fixture(scope="session")
def fast_cfg() -> TrainConfig:
    return TrainConfig(iterations=60, rng_seed=3)
