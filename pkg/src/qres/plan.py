"""Physical query plan trees, operator taxonomy, and pipeline decomposition."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Iterator, Optional


class PlanError(ValueError):
    """Raised when a plan document is malformed or violates a structural invariant."""


class OperatorType(IntEnum):
    """Physical operator codes. Codes are stable, dense, and fit in one byte."""

    TableScan = 1
    IndexScan = 2
    IndexSeek = 3
    Filter = 4
    Sort = 5
    HashAggregate = 6
    StreamAggregate = 7
    HashJoin = 8
    MergeJoin = 9
    NestedLoopJoin = 10
    ComputeScalar = 11


#: Sentinel parent-operator code used for the root node of a plan.
NO_PARENT = 0

#: Operators with no children (access paths over a base table).
LEAF_OPS = frozenset({OperatorType.TableScan, OperatorType.IndexScan, OperatorType.IndexSeek})

#: Operators with exactly two children (child 0 = outer/build, child 1 = inner/probe).
JOIN_OPS = frozenset({OperatorType.HashJoin, OperatorType.MergeJoin, OperatorType.NestedLoopJoin})

#: Fully blocking operators: their input subtree forms a separate pipeline.
BLOCKING_OPS = frozenset({OperatorType.Sort, OperatorType.HashAggregate})


def operator_arity(op: OperatorType) -> int:
    if op in LEAF_OPS:
        return 0
    if op in JOIN_OPS:
        return 2
    return 1


@dataclass(frozen=True)
class TableMeta:
    """Metadata of a base table or index used by a scan/seek operator."""

    table_id: str
    tuple_count: int
    page_count: int
    column_count: int
    avg_row_bytes: float
    index_depth: int = 0

    def validate(self, path: str) -> None:
        if self.tuple_count < 0:
            raise PlanError(f"{path}: negative tuple_count {self.tuple_count}")
        if self.tuple_count > 0 and self.page_count < 1:
            raise PlanError(f"{path}: page_count must be >= 1 for a non-empty table")
        if self.index_depth < 0:
            raise PlanError(f"{path}: negative index_depth")


@dataclass
class PlanNode:
    op: OperatorType
    children: list["PlanNode"] = field(default_factory=list)
    true_out_cardinality: int = 0
    est_out_cardinality: int = 0
    out_row_bytes: float = 0.0
    table: Optional[TableMeta] = None
    est_io_cost: float = 0.0
    sort_columns: int = 0
    hash_columns: int = 0
    join_inner_columns: int = 0
    join_outer_columns: int = 0
    hash_ops_per_tuple: float = 0.0
    observed: Optional[dict[str, float]] = None

    def validate(self, path: str = "root") -> None:
        arity = operator_arity(self.op)
        if len(self.children) != arity:
            raise PlanError(
                f"{path}: arity violation: {self.op.name} requires {arity} "
                f"child(ren), got {len(self.children)}"
            )
        if self.true_out_cardinality < 0 or self.est_out_cardinality < 0:
            raise PlanError(f"{path}: negative cardinality")
        if self.op in LEAF_OPS:
            if self.table is None:
                raise PlanError(f"{path}: {self.op.name} requires table metadata")
            self.table.validate(path)
            if self.op is OperatorType.IndexSeek and self.table.index_depth < 1:
                raise PlanError(f"{path}: IndexSeek access path requires index_depth >= 1")
        if self.est_io_cost < 0:
            raise PlanError(f"{path}: negative est_io_cost")
        if self.observed is not None:
            for res, value in self.observed.items():
                if value < 0:
                    raise PlanError(f"{path}: negative observed value for {res}")
        for i, child in enumerate(self.children):
            child.validate(f"{path}.children[{i}]")

    def walk(self) -> Iterator["PlanNode"]:
        """Pre-order traversal of the subtree rooted at this node."""
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class QueryPlan:
    query_id: str
    root: PlanNode
    scale: Optional[float] = None
    template: Optional[str] = None

    def validate(self) -> None:
        self.root.validate()

    def nodes(self) -> list[PlanNode]:
        return list(self.root.walk())

    def observed_total(self, resource: str) -> float:
        total = 0.0
        for node in self.root.walk():
            if node.observed is None or resource not in node.observed:
                raise PlanError(
                    f"plan {self.query_id}: missing observed label for {resource!r}"
                )
            total += node.observed[resource]
        return total

    def has_labels(self, resource: str) -> bool:
        return all(
            node.observed is not None and resource in node.observed
            for node in self.root.walk()
        )


@dataclass
class Pipeline:
    """A maximal subtree of concurrently executing operators.

    ``boundary`` is the blocking operator consuming this pipeline's output
    (None for the pipeline containing the plan root).
    """

    nodes: list[PlanNode]
    boundary: Optional[PlanNode] = None


def _blocking_child_edges(node: PlanNode) -> list[int]:
    """Child indices whose edge to this node is a pipeline boundary."""
    if node.op in BLOCKING_OPS:
        return [0]
    if node.op is OperatorType.HashJoin:
        return [0]  # build side
    return []


def decompose_pipelines(plan: QueryPlan) -> list[Pipeline]:
    """Partition the plan's nodes into pipelines separated by blocking edges.

    Ordering is deterministic: pipelines below a blocking boundary are listed
    by pre-order position of the boundary operator; the root pipeline is last.
    """
    preorder_index = {id(n): i for i, n in enumerate(plan.root.walk())}
    pending: list[tuple[PlanNode, Optional[PlanNode]]] = [(plan.root, None)]
    pipelines: list[Pipeline] = []

    while pending:
        start, boundary = pending.pop(0)
        members: list[PlanNode] = []
        stack = [start]
        while stack:
            node = stack.pop(0)
            members.append(node)
            blocked = _blocking_child_edges(node)
            for i, child in enumerate(node.children):
                if i in blocked:
                    pending.append((child, node))
                else:
                    stack.append(child)
        pipelines.append(Pipeline(nodes=members, boundary=boundary))

    def sort_key(p: Pipeline) -> tuple[int, int]:
        if p.boundary is None:
            return (1, 0)
        return (0, preorder_index[id(p.boundary)])

    pipelines.sort(key=sort_key)
    return pipelines


# ---------------------------------------------------------------------------
# External line-delimited JSON plan format


def _table_from_dict(doc: dict, path: str) -> TableMeta:
    try:
        return TableMeta(
            table_id=str(doc["table_id"]),
            tuple_count=int(doc["tuple_count"]),
            page_count=int(doc["page_count"]),
            column_count=int(doc["column_count"]),
            avg_row_bytes=float(doc["avg_row_bytes"]),
            index_depth=int(doc.get("index_depth", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PlanError(f"{path}: malformed table metadata: {exc}") from None


def _node_from_dict(doc: dict, path: str) -> PlanNode:
    if not isinstance(doc, dict):
        raise PlanError(f"{path}: node must be an object")
    try:
        op = OperatorType[doc["op"]]
    except KeyError:
        raise PlanError(f"{path}: unknown or missing operator {doc.get('op')!r}") from None
    cols = doc.get("cols", {})
    observed = doc.get("observed")
    if observed is not None:
        observed = {str(k): float(v) for k, v in observed.items()}
    try:
        node = PlanNode(
            op=op,
            true_out_cardinality=int(doc["card_true"]),
            est_out_cardinality=int(doc["card_est"]),
            out_row_bytes=float(doc.get("row_bytes", 0.0)),
            table=_table_from_dict(doc["table"], path) if doc.get("table") else None,
            est_io_cost=float(doc.get("est_io_cost", 0.0)),
            sort_columns=int(cols.get("sort_columns", 0)),
            hash_columns=int(cols.get("hash_columns", 0)),
            join_inner_columns=int(cols.get("join_inner_columns", 0)),
            join_outer_columns=int(cols.get("join_outer_columns", 0)),
            hash_ops_per_tuple=float(cols.get("hash_ops_per_tuple", 0.0)),
            observed=observed,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PlanError(f"{path}: malformed node: {exc}") from None
    node.children = [
        _node_from_dict(c, f"{path}.children[{i}]")
        for i, c in enumerate(doc.get("children", []))
    ]
    return node


def _node_to_dict(node: PlanNode) -> dict:
    doc: dict = {
        "op": node.op.name,
        "children": [_node_to_dict(c) for c in node.children],
        "card_true": node.true_out_cardinality,
        "card_est": node.est_out_cardinality,
        "row_bytes": node.out_row_bytes,
        "est_io_cost": node.est_io_cost,
        "cols": {
            "sort_columns": node.sort_columns,
            "hash_columns": node.hash_columns,
            "join_inner_columns": node.join_inner_columns,
            "join_outer_columns": node.join_outer_columns,
            "hash_ops_per_tuple": node.hash_ops_per_tuple,
        },
    }
    if node.table is not None:
        doc["table"] = {
            "table_id": node.table.table_id,
            "tuple_count": node.table.tuple_count,
            "page_count": node.table.page_count,
            "column_count": node.table.column_count,
            "avg_row_bytes": node.table.avg_row_bytes,
            "index_depth": node.table.index_depth,
        }
    if node.observed is not None:
        doc["observed"] = dict(sorted(node.observed.items()))
    return doc


def parse_plan(document: str) -> QueryPlan:
    """Parse and validate one plan document (a JSON object)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise PlanError(f"malformed plan document: {exc}") from None
    if not isinstance(doc, dict) or "root" not in doc:
        raise PlanError("plan document must be an object with a 'root' node")
    plan = QueryPlan(
        query_id=str(doc.get("query_id", "")),
        root=_node_from_dict(doc["root"], "root"),
        scale=float(doc["scale"]) if doc.get("scale") is not None else None,
        template=doc.get("template"),
    )
    plan.validate()
    return plan


def plan_to_json(plan: QueryPlan) -> str:
    doc: dict = {"query_id": plan.query_id, "root": _node_to_dict(plan.root)}
    if plan.scale is not None:
        doc["scale"] = plan.scale
    if plan.template is not None:
        doc["template"] = plan.template
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def load_corpus(path: str) -> list[QueryPlan]:
    """Read a line-delimited plan corpus file."""
    plans = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                plans.append(parse_plan(line))
            except PlanError as exc:
                raise PlanError(f"{path}:{lineno}: {exc}") from None
    return plans


def save_corpus(plans: Iterable[QueryPlan], path: str) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for plan in plans:
            fh.write(plan_to_json(plan))
            fh.write("\n")
            count += 1
    return count
