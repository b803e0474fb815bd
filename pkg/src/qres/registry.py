"""Per-operator model families: training, runtime selection, and serialization.

Each (operator type, resource) entry holds a plain tree-ensemble model plus a
family of combined models (scaling term x per-unit ensemble). At estimation
time the model whose training ranges best cover the incoming feature values is
chosen via the out-of-range ratio heuristic. The whole registry round-trips
through a compact binary format (magic "QRES").
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gbrt
from .features import (
    NEVER_SCALE_IO,
    SCALE_CANDIDATES,
    FeatureError,
    FeatureId,
    FeatureVector,
    applicable_features,
    dependents,
    extract_features,
)
from .gbrt import MartModel, TrainConfig, Tree, TrainingError
from .plan import JOIN_OPS, NO_PARENT, OperatorType, PlanNode, QueryPlan, decompose_pipelines
from .scaling import (
    SINGLE_FEATURE_CANDIDATES,
    FormKind,
    ScalingError,
    basis,
    select_form,
)

RESOURCES = ("cpu_us", "logical_io")
_RESOURCE_CODE = {"cpu_us": 0, "logical_io": 1}
_RESOURCE_NAME = {v: k for k, v in _RESOURCE_CODE.items()}

MAGIC = b"QRES"
FORMAT_VERSION = 1


class RegistryError(ValueError):
    """Raised for missing entries, bad payloads, or invalid training input."""


@dataclass(frozen=True)
class ScaleTerm:
    """One scaling-function term of a combined model (alpha fixed at 1).

    The per-unit ensemble supplies the magnitude, so only the functional form
    and its exponent are retained.
    """

    kind: FormKind
    features: tuple[FeatureId, ...]
    beta: float = 1.0

    def unit_value(self, raw: dict[FeatureId, float]) -> float:
        vals = []
        for f in self.features:
            v = raw.get(f)
            if v is None or v <= 0:
                raise FeatureError(
                    f"degenerate scaling feature: {f.name} absent or non-positive"
                )
            vals.append(v)
        return basis(self.kind, vals, self.beta)


@dataclass
class CombinedModel:
    terms: list[ScaleTerm]
    scaled_model: MartModel

    @property
    def scale_feature_ids(self) -> list[FeatureId]:
        return [f for t in self.terms for f in t.features]


Model = "MartModel | CombinedModel"


def transform_for_scaling(
    fv: FeatureVector, terms: Sequence[ScaleTerm]
) -> FeatureVector:
    """Normalize dependents by raw scale-feature values and drop the features.

    Divisors are always the raw (pre-normalization) values, applied in scale
    feature order.
    """
    raw = fv.values
    work = dict(raw)
    for term in terms:
        for fid in term.features:
            v = raw.get(fid)
            if v is None or v <= 0:
                raise FeatureError(
                    f"degenerate scaling feature: {fid.name} absent or non-positive"
                )
            for dep in dependents(fid):
                if dep in work:
                    work[dep] = work[dep] / v
            work.pop(fid, None)
    return FeatureVector(op=fv.op, values=work, cardinality_source=fv.cardinality_source)


def build_combined(
    examples: Sequence[tuple[FeatureVector, float]],
    terms: Sequence[ScaleTerm],
    cfg: TrainConfig,
) -> CombinedModel:
    """Train a combined model: per-unit targets, normalized features.

    Every example must have positive values for all scale features.
    """
    if not examples:
        raise TrainingError("empty training set")
    transformed = []
    for fv, y in examples:
        g = 1.0
        for term in terms:
            g *= term.unit_value(fv.values)
        transformed.append((transform_for_scaling(fv, terms), y / g))
    label = "/".join(
        f"{t.kind.name}({','.join(f.name for f in t.features)})" for t in terms
    )
    scaled = gbrt.train(transformed, cfg, target_transform=f"per-unit:{label}")
    return CombinedModel(terms=list(terms), scaled_model=scaled)


def estimate_with_model(model, fv: FeatureVector) -> float:
    """Evaluate one model on a raw feature vector; negative output clamps to 0."""
    if isinstance(model, CombinedModel):
        g = 1.0
        for term in model.terms:
            g *= term.unit_value(fv.values)
        value = g * gbrt.predict(model.scaled_model, transform_for_scaling(fv, model.terms))
    else:
        value = gbrt.predict(model, fv)
    return max(0.0, value)


def out_ratio(value: float, low: float, high: float) -> float:
    """Normalized distance of a value outside the training range [low, high]."""
    if high == low:
        return 0.0 if value == high else math.inf
    excursion = max(low - value, 0.0) + max(value - high, 0.0)
    return excursion / (high - low)


def model_out_ratios(model, fv: FeatureVector) -> list[float]:
    """out_ratio of every numeric model feature against its own training stats.

    Combined models are evaluated in their normalized feature space. A vector
    that cannot be normalized (non-positive scale feature) yields [inf].
    """
    if isinstance(model, CombinedModel):
        try:
            fv = transform_for_scaling(fv, model.terms)
        except FeatureError:
            return [math.inf]
        mart = model.scaled_model
    else:
        mart = model
    ratios = []
    for f in mart.schema:
        if f is FeatureId.OUTPUTUSAGE:
            continue
        value = fv.values.get(f)
        if value is None:
            return [math.inf]
        low, high = mart.feature_stats[f]
        ratios.append(out_ratio(value, low, high))
    return ratios or [0.0]


@dataclass
class RegistryEntry:
    op: OperatorType
    resource: str
    models: list  # MartModel | CombinedModel; index 0 is always the plain model
    default_idx: int = 0


@dataclass
class ModelRegistry:
    entries: dict[tuple[OperatorType, str], RegistryEntry] = field(default_factory=dict)

    def entry(self, op: OperatorType, resource: str) -> RegistryEntry:
        try:
            return self.entries[(op, resource)]
        except KeyError:
            raise RegistryError(
                f"no model for operator {op.name} / resource {resource}"
            ) from None


def _n_scale_features(model) -> int:
    return len(model.scale_feature_ids) if isinstance(model, CombinedModel) else 0


def select_model(
    registry: ModelRegistry, op: OperatorType, resource: str, fv: FeatureVector
) -> tuple[object, int]:
    """Pick the model for one operator instance.

    The default model wins whenever every feature value lies inside its
    training ranges. Otherwise the model with the smallest maximum out_ratio
    wins; ties prefer fewer scale features, then the smaller next-largest
    out_ratio, then the lower model index.
    """
    entry = registry.entry(op, resource)
    default = entry.models[entry.default_idx]
    if max(model_out_ratios(default, fv)) == 0.0:
        return default, entry.default_idx

    best_key = None
    best: tuple[object, int] | None = None
    for idx, model in enumerate(entry.models):
        ratios = sorted(model_out_ratios(model, fv), reverse=True)
        padded = tuple(ratios[1:]) + (0.0,)
        key = (ratios[0], _n_scale_features(model), padded, idx)
        if best_key is None or key < best_key:
            best_key = key
            best = (model, idx)
    assert best is not None
    return best


def estimate_operator(
    registry: ModelRegistry,
    node: PlanNode,
    parent_op: int,
    resource: str,
    source: str = "true",
) -> float:
    fv = extract_features(node, parent_op, source)
    model, _ = select_model(registry, node.op, resource, fv)
    return estimate_with_model(model, fv)


@dataclass
class QueryEstimate:
    total: float
    per_pipeline: list[float]
    per_operator: list[tuple[str, float]]  # (operator name, estimate) in pre-order


def estimate_query(
    registry: ModelRegistry, plan: QueryPlan, resource: str, source: str = "true"
) -> QueryEstimate:
    """Operator, pipeline, and query-level estimates; the total is the exact
    sum of the pipeline subtotals."""
    estimates: dict[int, float] = {}
    per_operator: list[tuple[str, float]] = []

    def visit(node: PlanNode, parent_op: int) -> None:
        value = estimate_operator(registry, node, parent_op, resource, source)
        estimates[id(node)] = value
        per_operator.append((node.op.name, value))
        for child in node.children:
            visit(child, int(node.op))

    visit(plan.root, NO_PARENT)
    per_pipeline = [
        sum(estimates[id(n)] for n in p.nodes) for p in decompose_pipelines(plan)
    ]
    return QueryEstimate(
        total=sum(per_pipeline), per_pipeline=per_pipeline, per_operator=per_operator
    )


# ---------------------------------------------------------------------------
# Training


def collect_examples(
    plans: Sequence[QueryPlan], resource: str, source: str = "true"
) -> dict[OperatorType, list[tuple[FeatureVector, float]]]:
    """Featurize every labeled operator instance, grouped by operator type."""
    by_op: dict[OperatorType, list[tuple[FeatureVector, float]]] = {}
    for plan in plans:
        def visit(node: PlanNode, parent_op: int) -> None:
            if node.observed is None or resource not in node.observed:
                raise RegistryError(
                    f"plan {plan.query_id}: node lacks observed {resource!r} label"
                )
            fv = extract_features(node, parent_op, source)
            by_op.setdefault(node.op, []).append((fv, node.observed[resource]))
            for child in node.children:
                visit(child, int(node.op))

        visit(plan.root, NO_PARENT)
    return by_op


def eligible_scale_features(
    op: OperatorType, resource: str, examples: Sequence[tuple[FeatureVector, float]]
) -> list[FeatureId]:
    """Features usable as scaling candidates: data-size-driven counts that are
    positive everywhere and varying across the training set."""
    out = []
    for f in applicable_features(op):
        if f not in SCALE_CANDIDATES:
            continue
        if resource == "logical_io" and f in NEVER_SCALE_IO:
            continue
        vals = [fv.values[f] for fv, _ in examples]
        if min(vals) > 0 and max(vals) > min(vals):
            out.append(f)
    return out


def _join_scale_pair(op: OperatorType) -> Optional[tuple[FeatureId, FeatureId]]:
    if op is OperatorType.NestedLoopJoin:
        return (FeatureId.CIN1, FeatureId.SSEKTABLE)
    if op in JOIN_OPS:
        return (FeatureId.CIN1, FeatureId.CIN2)
    return None


def _training_sse(model, examples) -> float:
    sse = 0.0
    for fv, y in examples:
        err = estimate_with_model(model, fv) - y
        sse += err * err
    return sse


def _model_cfg(cfg: TrainConfig, salt: int) -> TrainConfig:
    return TrainConfig(
        iterations=cfg.iterations,
        max_leaves=cfg.max_leaves,
        learning_rate=cfg.learning_rate,
        subsample_fraction=cfg.subsample_fraction,
        min_examples_per_leaf=cfg.min_examples_per_leaf,
        rng_seed=(cfg.rng_seed * 1000003 + salt) % (2**31),
    )


def train_entry(
    op: OperatorType,
    resource: str,
    examples: Sequence[tuple[FeatureVector, float]],
    cfg: TrainConfig,
) -> RegistryEntry:
    """Train the model family for one operator/resource: the plain model plus
    one combined model per eligible scale feature (two-feature variant for
    joins), then designate the minimum-training-error model as default."""
    models: list = [gbrt.train(examples, _model_cfg(cfg, 0))]
    y = [t for _, t in examples]
    salt = 1
    for f in eligible_scale_features(op, resource, examples):
        obs = [([fv.values[f]], t) for fv, t in examples]
        try:
            form = select_form(SINGLE_FEATURE_CANDIDATES, [f], obs)
            term = ScaleTerm(kind=form.kind, features=(f,), beta=form.beta)
            models.append(build_combined(examples, [term], _model_cfg(cfg, salt)))
        except (ScalingError, FeatureError, TrainingError):
            pass
        salt += 1
    pair = _join_scale_pair(op)
    if pair is not None:
        f1, f2 = pair
        eligible = set(eligible_scale_features(op, resource, examples))
        if f1 in eligible and f2 in eligible:
            obs2 = [([fv.values[f1], fv.values[f2]], t) for fv, t in examples]
            try:
                form = select_form(
                    (FormKind.Product2, FormKind.Sum2, FormKind.FLogSecond),
                    (f1, f2),
                    obs2,
                )
                term = ScaleTerm(kind=form.kind, features=form.features, beta=form.beta)
                models.append(build_combined(examples, [term], _model_cfg(cfg, salt)))
            except (ScalingError, FeatureError, TrainingError):
                pass
    default_idx = min(
        range(len(models)), key=lambda i: (_training_sse(models[i], examples), i)
    )
    return RegistryEntry(op=op, resource=resource, models=models, default_idx=default_idx)


def train_registry(
    plans: Sequence[QueryPlan],
    resources: Sequence[str],
    cfg: TrainConfig,
    source: str = "true",
) -> ModelRegistry:
    registry = ModelRegistry()
    for resource in resources:
        if resource not in RESOURCES:
            raise RegistryError(f"unknown resource {resource!r}")
        by_op = collect_examples(plans, resource, source)
        for op in sorted(by_op):
            registry.entries[(op, resource)] = train_entry(
                op, resource, by_op[op], cfg
            )
    return registry


# ---------------------------------------------------------------------------
# Serialization


def _encode_tree(tree: Tree, out: bytearray) -> None:
    n = tree.n_nodes
    if n > 255:
        raise RegistryError("tree too large for one-byte node count")
    out.append(n)
    vals = np.asarray(tree.value, dtype="<f4").tobytes()
    for i in range(n):
        out.append(int(tree.child[i]))
        out.append(int(tree.feature[i]))
        out += vals[4 * i : 4 * i + 4]


def _encode_mart(model: MartModel, out: bytearray) -> None:
    out += struct.pack("<ff", np.float32(model.init), np.float32(model.learning_rate))
    out.append(len(model.schema))
    for f in model.schema:
        out.append(int(f))
    for f in model.schema:
        low, high = model.feature_stats[f]
        out += struct.pack("<ff", np.float32(low), np.float32(high))
    out += struct.pack("<H", len(model.trees))
    for tree in model.trees:
        _encode_tree(tree, out)


def encoded_tree_size(n_nodes: int) -> int:
    return 1 + 6 * n_nodes


def serialize(registry: ModelRegistry) -> bytes:
    out = bytearray(MAGIC)
    out.append(FORMAT_VERSION)
    keys = sorted(registry.entries, key=lambda k: (int(k[0]), _RESOURCE_CODE[k[1]]))
    out += struct.pack("<H", len(keys))
    for key in keys:
        entry = registry.entries[key]
        out.append(int(entry.op))
        out.append(_RESOURCE_CODE[entry.resource])
        out += struct.pack("<HH", entry.default_idx, len(entry.models))
        for model in entry.models:
            if isinstance(model, CombinedModel):
                out.append(1)
                _encode_mart(model.scaled_model, out)
                out.append(len(model.terms))
                for term in model.terms:
                    out.append(int(term.kind))
                    out += struct.pack("<f", np.float32(term.beta))
                    out.append(len(term.features))
                    for f in term.features:
                        out.append(int(f))
            else:
                out.append(0)
                _encode_mart(model, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise RegistryError("truncated model payload")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def f32(self) -> float:
        return float(np.frombuffer(self.take(4), dtype="<f4")[0])


def _decode_tree(r: _Reader) -> Tree:
    n = r.u8()
    child = np.empty(n, dtype=np.uint8)
    feat = np.empty(n, dtype=np.uint8)
    val = np.empty(n, dtype=np.float32)
    for i in range(n):
        child[i] = r.u8()
        feat[i] = r.u8()
        val[i] = np.frombuffer(r.take(4), dtype="<f4")[0]
    return Tree(child=child, feature=feat, value=val)


def _decode_mart(r: _Reader, target_transform: str = "identity") -> MartModel:
    init, lr = struct.unpack("<ff", r.take(8))
    schema = [FeatureId(r.u8()) for _ in range(r.u8())]
    stats = {}
    for f in schema:
        low, high = struct.unpack("<ff", r.take(8))
        stats[f] = (low, high)
    trees = [_decode_tree(r) for _ in range(r.u16())]
    return MartModel(
        init=float(init),
        trees=trees,
        learning_rate=float(lr),
        schema=schema,
        feature_stats=stats,
        target_transform=target_transform,
    )


def deserialize(data: bytes) -> ModelRegistry:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise RegistryError("bad magic bytes: not a model file")
    version = r.u8()
    if version != FORMAT_VERSION:
        raise RegistryError(f"unsupported model format version {version}")
    registry = ModelRegistry()
    for _ in range(r.u16()):
        op = OperatorType(r.u8())
        resource = _RESOURCE_NAME[r.u8()]
        default_idx = r.u16()
        n_models = r.u16()
        models: list = []
        for _ in range(n_models):
            kind = r.u8()
            if kind == 0:
                models.append(_decode_mart(r))
            elif kind == 1:
                scaled = _decode_mart(r)
                terms = []
                for _ in range(r.u8()):
                    fk = FormKind(r.u8())
                    beta = r.f32()
                    feats = tuple(FeatureId(r.u8()) for _ in range(r.u8()))
                    terms.append(ScaleTerm(kind=fk, features=feats, beta=beta))
                label = "/".join(
                    f"{t.kind.name}({','.join(f.name for f in t.features)})"
                    for t in terms
                )
                scaled.target_transform = f"per-unit:{label}"
                models.append(CombinedModel(terms=terms, scaled_model=scaled))
            else:
                raise RegistryError(f"unknown model kind byte {kind}")
        registry.entries[(op, resource)] = RegistryEntry(
            op=op, resource=resource, models=models, default_idx=default_idx
        )
    if r.pos != len(data):
        raise RegistryError("trailing bytes after model payload")
    return registry


def save_registry(registry: ModelRegistry, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(registry))


def load_registry(path: str) -> ModelRegistry:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
