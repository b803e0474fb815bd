"""Fixed-form asymptotic scaling functions: evaluation, fitting, selection.

Each form is y = alpha * b(x) for a basis b with at most one shape parameter
(the Power exponent). alpha has the closed-form least-squares solution
sum(b*y) / sum(b*b); the Power exponent is chosen from a small grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .features import FeatureId, lg


class ScalingError(ValueError):
    """Raised for degenerate observations or invalid form arguments."""


class FormKind(IntEnum):
    Linear = 1        # g(F) = a*F
    NLogN = 2         # g(F) = a*F*log2(F)
    Power = 3         # g(F) = a*F^b
    Log = 4           # g(F) = a*log2(F)
    Product2 = 5      # g(F1,F2) = a*F1*F2
    Sum2 = 6          # g(F1,F2) = a*(F1+F2)
    FLogSecond = 7    # g(F1,F2) = a*F1*log2(F2)


POWER_EXPONENT_GRID = (0.5, 1.25, 1.5, 2.0, 3.0)

TWO_FEATURE_KINDS = frozenset({FormKind.Product2, FormKind.Sum2, FormKind.FLogSecond})

#: Number of fitted parameters, used as a tie-break in form selection.
N_PARAMS = {k: (2 if k is FormKind.Power else 1) for k in FormKind}

SINGLE_FEATURE_CANDIDATES = (FormKind.Linear, FormKind.NLogN, FormKind.Power, FormKind.Log)


def basis(kind: FormKind, values: Sequence[float], beta: float = 1.0) -> float:
    """The form evaluated with alpha = 1."""
    if kind in TWO_FEATURE_KINDS:
        if len(values) != 2:
            raise ScalingError(f"{kind.name} takes two feature values")
        v1, v2 = float(values[0]), float(values[1])
        if v1 <= 0 or v2 <= 0:
            raise ScalingError("scaling features must be positive")
        if kind is FormKind.Product2:
            return v1 * v2
        if kind is FormKind.Sum2:
            return v1 + v2
        return v1 * lg(v2)
    if len(values) != 1:
        raise ScalingError(f"{kind.name} takes one feature value")
    v = float(values[0])
    if v <= 0:
        raise ScalingError("scaling features must be positive")
    if kind is FormKind.Linear:
        return v
    if kind is FormKind.NLogN:
        return v * lg(v)
    if kind is FormKind.Power:
        return v**beta
    return lg(v)


@dataclass(frozen=True)
class ScalingForm:
    kind: FormKind
    alpha: float
    features: tuple[FeatureId, ...]
    beta: float = 1.0


def eval_form(form: ScalingForm, values: Sequence[float]) -> float:
    return form.alpha * basis(form.kind, values, form.beta)


def _fit_alpha(b: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    denom = float(np.dot(b, b))
    if denom == 0.0:
        raise ScalingError("degenerate observations: all-zero basis")
    alpha = float(np.dot(b, y)) / denom
    resid = y - alpha * b
    return alpha, float(np.dot(resid, resid))


def fit_form(
    kind: FormKind,
    features: Sequence[FeatureId],
    observations: Sequence[tuple[Sequence[float], float]],
) -> tuple[ScalingForm, float]:
    """Least-squares fit of one candidate form; returns (form, residual SSE)."""
    if len(observations) < 2:
        raise ScalingError("need at least 2 observations")
    xs = [obs[0] for obs in observations]
    y = np.array([obs[1] for obs in observations], dtype=np.float64)
    if kind is FormKind.Power:
        best: tuple[float, float, float] | None = None  # (sse, beta, alpha)
        for beta in POWER_EXPONENT_GRID:
            b = np.array([basis(kind, x, beta) for x in xs])
            alpha, sse = _fit_alpha(b, y)
            if best is None or sse < best[0] - 1e-12 * (1 + best[0]):
                best = (sse, beta, alpha)
        assert best is not None
        sse, beta, alpha = best
        return ScalingForm(kind, alpha, tuple(features), beta), sse
    b = np.array([basis(kind, x) for x in xs])
    alpha, sse = _fit_alpha(b, y)
    return ScalingForm(kind, alpha, tuple(features)), sse


def select_form(
    candidates: Sequence[FormKind],
    features: Sequence[FeatureId],
    observations: Sequence[tuple[Sequence[float], float]],
    orientations: Sequence[Sequence[FeatureId]] | None = None,
) -> ScalingForm:
    """Fit every candidate and return the one with the smallest residual SSE.

    Ties (within relative 1e-9) prefer fewer fitted parameters, then the lower
    form code. ``orientations`` supplies feature orderings for asymmetric
    two-feature forms; observations are reordered to match.
    """
    if len(candidates) < 2:
        raise ScalingError("need at least 2 candidate forms")
    features = tuple(features)
    fitted: list[tuple[float, int, int, int, ScalingForm]] = []
    seq = 0
    for kind in candidates:
        variants: list[tuple[FeatureId, ...]]
        if kind is FormKind.FLogSecond and len(features) == 2 and orientations is None:
            variants = [features, (features[1], features[0])]
        else:
            variants = [features]
        for order in variants:
            perm = [features.index(f) for f in order]
            obs = [([x[i] for i in perm], y) for x, y in observations]
            form, sse = fit_form(kind, order, obs)
            fitted.append((sse, N_PARAMS[kind], int(kind), seq, form))
            seq += 1
    best_sse = min(f[0] for f in fitted)
    tol = 1e-9 * (1.0 + abs(best_sse))
    near = [f for f in fitted if f[0] <= best_sse + tol]
    near.sort(key=lambda f: (f[1], f[2], f[3]))
    return near[0][4]
