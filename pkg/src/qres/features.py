"""Operator feature vectors, the feature-dependency relation, and normalization."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

from .plan import JOIN_OPS, LEAF_OPS, NO_PARENT, OperatorType, PlanNode


class FeatureError(ValueError):
    """Raised for missing metadata or degenerate feature transforms."""


class FeatureId(IntEnum):
    """Numeric feature codes (one byte each).

    Per-child tuple/byte counts are materialized once per child; single-child
    operators carry only the child-1 slots.
    """

    COUT = 1
    SOUTAVG = 2
    SOUTTOT = 3
    CIN1 = 4
    SINAVG1 = 5
    SINTOT1 = 6
    CIN2 = 7
    SINAVG2 = 8
    SINTOT2 = 9
    OUTPUTUSAGE = 10
    TSIZE = 11
    PAGES = 12
    TCOLUMNS = 13
    ESTIOCOST = 14
    INDEXDEPTH = 15
    HASHOPAVG = 16
    HASHOPTOT = 17
    CHASHCOL = 18
    CINNERCOL = 19
    COUTERCOL = 20
    SSEKTABLE = 21
    MINCOMP = 22
    CSORTCOL = 23
    SINSUM = 24


F = FeatureId

#: Features irrelevant (or second-order) for logical I/O; never scaling candidates
#: for that resource.
NEVER_SCALE_IO = frozenset(
    {F.HASHOPAVG, F.HASHOPTOT, F.CHASHCOL, F.CINNERCOL, F.COUTERCOL, F.MINCOMP, F.CSORTCOL}
)

#: Features that grow with the underlying data size; only these can exceed their
#: training range when deployed on larger databases, so only these are scaling
#: candidates. Per-row widths, column counts, and per-tuple rates stay bounded.
SCALE_CANDIDATES = frozenset(
    {F.COUT, F.SOUTTOT, F.CIN1, F.SINTOT1, F.CIN2, F.SINTOT2, F.TSIZE, F.PAGES,
     F.ESTIOCOST, F.HASHOPTOT, F.MINCOMP, F.SINSUM, F.SSEKTABLE}
)

_SCAN_FEATURES = (F.TSIZE, F.PAGES, F.TCOLUMNS, F.ESTIOCOST)

#: Operator-specific feature sets layered on top of the global features.
OP_SPECIFIC: dict[OperatorType, tuple[FeatureId, ...]] = {
    OperatorType.TableScan: _SCAN_FEATURES,
    OperatorType.IndexScan: _SCAN_FEATURES,
    OperatorType.IndexSeek: _SCAN_FEATURES + (F.INDEXDEPTH,),
    OperatorType.Filter: (),
    OperatorType.Sort: (F.MINCOMP, F.CSORTCOL),
    OperatorType.HashAggregate: (F.HASHOPAVG, F.HASHOPTOT, F.CHASHCOL),
    OperatorType.StreamAggregate: (),
    OperatorType.ComputeScalar: (),
    OperatorType.HashJoin: (F.HASHOPAVG, F.HASHOPTOT, F.CINNERCOL, F.COUTERCOL),
    OperatorType.MergeJoin: (F.CINNERCOL, F.COUTERCOL, F.SINSUM),
    OperatorType.NestedLoopJoin: (F.CINNERCOL, F.COUTERCOL, F.SSEKTABLE),
}


def applicable_features(op: OperatorType) -> tuple[FeatureId, ...]:
    """The exact feature set of an operator type, ordered by feature code."""
    feats = {F.COUT, F.SOUTAVG, F.SOUTTOT, F.OUTPUTUSAGE}
    if op not in LEAF_OPS:
        feats.update({F.CIN1, F.SINAVG1, F.SINTOT1})
    if op in JOIN_OPS:
        feats.update({F.CIN2, F.SINAVG2, F.SINTOT2})
    feats.update(OP_SPECIFIC[op])
    return tuple(sorted(feats))


def lg(x: float) -> float:
    """log2 with arguments below 2 clamped to 1, keeping scale factors positive."""
    return 1.0 if x < 2.0 else math.log2(x)


# Dependents of each feature: the features whose value moves when the keyed
# feature is perturbed, either through an arithmetic identity
# (SOUTTOT = COUT x SOUTAVG, SINTOT = CIN x SINAVG, HASHOPTOT = HASHOPAVG x CIN,
# MINCOMP = CIN x CSORTCOL, SINSUM = sum of SINTOTs) or because both are tuple
# counts driven by the same input size.
_DEPENDENTS: dict[FeatureId, frozenset[FeatureId]] = {
    F.COUT: frozenset({F.SOUTTOT, F.CIN1, F.CIN2, F.SINTOT1, F.SINTOT2, F.SINSUM, F.ESTIOCOST}),
    F.SOUTAVG: frozenset({F.SOUTTOT}),
    F.SOUTTOT: frozenset(),
    F.CIN1: frozenset(
        {F.COUT, F.SOUTTOT, F.SINTOT1, F.SINTOT2, F.CIN2, F.SINSUM, F.ESTIOCOST,
         F.HASHOPTOT, F.MINCOMP, F.SSEKTABLE}
    ),
    F.SINAVG1: frozenset({F.SINTOT1, F.SINSUM}),
    F.SINTOT1: frozenset({F.SINSUM, F.ESTIOCOST}),
    F.CIN2: frozenset(
        {F.COUT, F.SOUTTOT, F.SINTOT1, F.SINTOT2, F.CIN1, F.SINSUM, F.ESTIOCOST,
         F.HASHOPTOT, F.SSEKTABLE}
    ),
    F.SINAVG2: frozenset({F.SINTOT2, F.SINSUM}),
    F.SINTOT2: frozenset({F.SINSUM, F.ESTIOCOST}),
    F.TSIZE: frozenset({F.PAGES, F.ESTIOCOST, F.INDEXDEPTH, F.COUT, F.SOUTTOT}),
    F.PAGES: frozenset({F.ESTIOCOST, F.INDEXDEPTH}),
    F.TCOLUMNS: frozenset(),
    F.ESTIOCOST: frozenset(),
    F.INDEXDEPTH: frozenset({F.TSIZE, F.PAGES}),
    F.HASHOPAVG: frozenset({F.HASHOPTOT}),
    F.HASHOPTOT: frozenset({F.CIN1, F.CIN2, F.SINTOT1, F.SINTOT2, F.SINSUM}),
    F.CHASHCOL: frozenset(),
    F.CINNERCOL: frozenset(),
    F.COUTERCOL: frozenset(),
    F.SSEKTABLE: frozenset({F.CIN2, F.SINTOT2}),
    F.MINCOMP: frozenset({F.CIN1, F.SINTOT1}),
    F.CSORTCOL: frozenset({F.MINCOMP}),
    F.SINSUM: frozenset({F.CIN1, F.CIN2, F.SINTOT1, F.SINTOT2}),
}


def dependents(f: FeatureId) -> frozenset[FeatureId]:
    """Static dependent set of a numeric feature (never contains the feature itself)."""
    if f is F.OUTPUTUSAGE:
        raise FeatureError("OUTPUTUSAGE is categorical and has no dependency entry")
    return _DEPENDENTS[f]


@dataclass
class FeatureVector:
    op: OperatorType
    values: dict[FeatureId, float]
    cardinality_source: str = "true"  # "true" | "estimated"

    def copy(self) -> "FeatureVector":
        return FeatureVector(self.op, dict(self.values), self.cardinality_source)


def _inner_table_tuple_count(node: PlanNode) -> Optional[int]:
    """Base-table tuple count (pre-predicate) of the inner subtree, if any."""
    for n in node.children[1].walk():
        if n.table is not None:
            return n.table.tuple_count
    return None


def extract_features(
    node: PlanNode,
    parent_op: int = NO_PARENT,
    source: str = "true",
) -> FeatureVector:
    """Compute the applicable feature vector of one operator instance.

    ``source`` selects true vs optimizer-estimated cardinalities for every
    tuple-count-derived feature; table-level counts (TSIZE, PAGES) are exact.
    """
    if source not in ("true", "estimated"):
        raise FeatureError(f"unknown cardinality source {source!r}")

    def card(n: PlanNode) -> float:
        return float(n.true_out_cardinality if source == "true" else n.est_out_cardinality)

    op = node.op
    v: dict[FeatureId, float] = {}
    cout = card(node)
    v[F.COUT] = cout
    v[F.SOUTAVG] = node.out_row_bytes
    v[F.SOUTTOT] = cout * node.out_row_bytes
    v[F.OUTPUTUSAGE] = float(int(parent_op))

    cins = []
    for i, child in enumerate(node.children):
        cin = card(child)
        cins.append(cin)
        slot = (F.CIN1, F.SINAVG1, F.SINTOT1) if i == 0 else (F.CIN2, F.SINAVG2, F.SINTOT2)
        v[slot[0]] = cin
        v[slot[1]] = child.out_row_bytes
        v[slot[2]] = cin * child.out_row_bytes

    if op in LEAF_OPS:
        if node.table is None:
            raise FeatureError(f"{op.name} node lacks table metadata")
        v[F.TSIZE] = float(node.table.tuple_count)
        v[F.PAGES] = float(node.table.page_count)
        v[F.TCOLUMNS] = float(node.table.column_count)
        v[F.ESTIOCOST] = node.est_io_cost
        if op is OperatorType.IndexSeek:
            v[F.INDEXDEPTH] = float(node.table.index_depth)
    if op is OperatorType.Sort:
        v[F.CSORTCOL] = float(node.sort_columns)
        v[F.MINCOMP] = cins[0] * node.sort_columns
    if op in (OperatorType.HashAggregate, OperatorType.HashJoin):
        v[F.HASHOPAVG] = node.hash_ops_per_tuple
        v[F.HASHOPTOT] = node.hash_ops_per_tuple * cins[0]
    if op is OperatorType.HashAggregate:
        v[F.CHASHCOL] = float(node.hash_columns)
    if op in JOIN_OPS:
        v[F.CINNERCOL] = float(node.join_inner_columns)
        v[F.COUTERCOL] = float(node.join_outer_columns)
    if op is OperatorType.MergeJoin:
        v[F.SINSUM] = v[F.SINTOT1] + v[F.SINTOT2]
    if op is OperatorType.NestedLoopJoin:
        inner = _inner_table_tuple_count(node)
        v[F.SSEKTABLE] = float(inner) if inner is not None else cins[1]

    assert tuple(sorted(v)) == applicable_features(op)
    return FeatureVector(op=op, values=v, cardinality_source=source)


def normalize_for_outlier(fv: FeatureVector, outlier: FeatureId) -> FeatureVector:
    """Divide the outlier's dependents by its raw value and drop the outlier.

    All other features are unchanged. The outlier must be present with a
    positive value; a zero or absent value cannot define a per-unit model.
    """
    value = fv.values.get(outlier)
    if value is None or value <= 0:
        raise FeatureError(
            f"degenerate scaling feature: {outlier.name} is absent or non-positive"
        )
    out = dict(fv.values)
    for dep in dependents(outlier):
        if dep in out:
            out[dep] = out[dep] / value
    del out[outlier]
    return FeatureVector(op=fv.op, values=out, cardinality_source=fv.cardinality_source)


def features_to_csv(vectors: Iterable[FeatureVector]) -> str:
    """Export feature vectors as CSV, one row per operator instance.

    Columns follow feature-code order over the union of present features;
    inapplicable features are left empty.
    """
    vectors = list(vectors)
    present: set[FeatureId] = set()
    for fv in vectors:
        present.update(fv.values)
    columns = sorted(present)
    buf = io.StringIO()
    buf.write("op," + ",".join(c.name for c in columns) + "\n")
    for fv in vectors:
        row = [fv.op.name]
        for c in columns:
            val = fv.values.get(c)
            row.append("" if val is None else repr(val))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
