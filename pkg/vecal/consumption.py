"""The three microscopic consumption models.

* VT-Micro: ``exp(sum f[n1,n2] * v**n1 * a**n2)`` over ``n1, n2 in 0..3``.
* ARRB: ``f1 + f2 v + f3 v^2 + f4 v^3 + f5 v a + f6 v max(0, a)^2``.
* AA-Micro: ``L(v, a) + exp(G(v, a))`` where ``L`` and ``G`` share one
  15-term basis, nine terms ``v**n1 * a**n2`` for ``n1, n2 in 0..2`` and six
  positive-part terms ``v**n1 * max(0, a)**n2`` for ``n2 in 1..2``.
  Positive-part terms with ``n2 = 0`` are left out: on cleaned data
  (``v > 0``) they duplicate the base columns exactly.

Exponents are clamped to ``+-exponent_clamp`` before ``exp`` so predictions
stay finite for any finite coefficients. ``0**0`` evaluates to 1.
"""

from __future__ import annotations

import json
import math
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import SchemaError
from .models import (
    DEFAULT_EXPONENT_CLAMP,
    ModelCoefficients,
    ModelKind,
    Term,
    TermPart,
)

ArrayLike = Union[float, Sequence[float], np.ndarray]

AA_BASE_POWERS = tuple((n1, n2) for n1 in range(3) for n2 in range(3))
AA_POS_POWERS = tuple((n1, n2) for n1 in range(3) for n2 in (1, 2))
AA_HALF = len(AA_BASE_POWERS) + len(AA_POS_POWERS)

_POSITIVE_PARTS = (TermPart.LINEAR_POS, TermPart.EXP_POS)


def _aa_half(base: TermPart, pos: TermPart) -> Tuple[Term, ...]:
    return tuple(Term(base, n1, n2) for n1, n2 in AA_BASE_POWERS) + \
        tuple(Term(pos, n1, n2) for n1, n2 in AA_POS_POWERS)


DEFAULT_LAYOUTS: Dict[ModelKind, Tuple[Term, ...]] = {
    ModelKind.VT_MICRO: tuple(Term(TermPart.EXP, n1, n2) for n1 in range(4) for n2 in range(4)),
    ModelKind.ARRB: (
        Term(TermPart.ARRB_TERM, 0, 0),
        Term(TermPart.ARRB_TERM, 1, 0),
        Term(TermPart.ARRB_TERM, 2, 0),
        Term(TermPart.ARRB_TERM, 3, 0),
        Term(TermPart.ARRB_TERM, 1, 1),
        Term(TermPart.LINEAR_POS, 1, 2),
    ),
    ModelKind.AA_MICRO: _aa_half(TermPart.LINEAR, TermPart.LINEAR_POS) + _aa_half(TermPart.EXP, TermPart.EXP_POS),
}


def make_coefficients(
    kind: ModelKind,
    theta: Sequence[float],
    exponent_clamp: float = DEFAULT_EXPONENT_CLAMP,
    fit_meta: Optional[Mapping[str, Any]] = None,
) -> ModelCoefficients:
    return ModelCoefficients(
        kind=kind,
        theta=tuple(float(x) for x in theta),
        layout=DEFAULT_LAYOUTS[kind],
        exponent_clamp=float(exponent_clamp),
        fit_meta=dict(fit_meta or {}),
    )


def design_matrix(terms: Sequence[Term], v: ArrayLike, a: ArrayLike) -> np.ndarray:
    """Evaluate ``terms`` at every ``(v, a)``; returns shape ``(n, len(terms))``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    a_pos = np.maximum(0.0, a)
    columns = []
    for term in terms:
        accel = a_pos if term.part in _POSITIVE_PARTS else a
        columns.append(np.power(v, term.n1) * np.power(accel, term.n2))
    return np.column_stack(columns) if columns else np.empty((len(v), 0))


def _clamped_exp(x: np.ndarray, clamp: float) -> np.ndarray:
    return np.exp(np.clip(x, -clamp, clamp))


def _require(coeffs: ModelCoefficients, kind: ModelKind) -> None:
    if coeffs.kind != kind:
        raise SchemaError(f"expected {kind.value} coefficients, got {coeffs.kind.value}")


def _shape_like(result: np.ndarray, v: ArrayLike, a: ArrayLike):
    if np.ndim(v) == 0 and np.ndim(a) == 0:
        return float(result[0])
    return result


def vtmicro_predict(v: ArrayLike, a: ArrayLike, coeffs: ModelCoefficients):
    _require(coeffs, ModelKind.VT_MICRO)
    exponent = design_matrix(coeffs.layout, v, a) @ coeffs.vector
    return _shape_like(_clamped_exp(exponent, coeffs.exponent_clamp), v, a)


def arrb_predict(v: ArrayLike, a: ArrayLike, coeffs: ModelCoefficients):
    _require(coeffs, ModelKind.ARRB)
    return _shape_like(design_matrix(coeffs.layout, v, a) @ coeffs.vector, v, a)


def aamicro_features(v: ArrayLike, a: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Linear-part and exponent-part features (identical 15-term bases)."""
    layout = DEFAULT_LAYOUTS[ModelKind.AA_MICRO]
    linear = design_matrix(layout[:AA_HALF], v, a)
    if np.ndim(v) == 0 and np.ndim(a) == 0:
        linear = linear[0]
    return linear, linear.copy()


def aamicro_predict(v: ArrayLike, a: ArrayLike, coeffs: ModelCoefficients):
    _require(coeffs, ModelKind.AA_MICRO)
    theta = coeffs.vector
    features = design_matrix(coeffs.layout[:AA_HALF], v, a)
    exponent = features @ theta[AA_HALF:]
    result = features @ theta[:AA_HALF] + _clamped_exp(exponent, coeffs.exponent_clamp)
    return _shape_like(result, v, a)


_PREDICTORS = {
    ModelKind.VT_MICRO: vtmicro_predict,
    ModelKind.ARRB: arrb_predict,
    ModelKind.AA_MICRO: aamicro_predict,
}


def predict(coeffs: ModelCoefficients, v: ArrayLike, a: ArrayLike):
    return _PREDICTORS[coeffs.kind](v, a, coeffs)


def serialize(coeffs: ModelCoefficients) -> Dict[str, Any]:
    return {
        "kind": coeffs.kind.value,
        "layout": [term.to_dict() for term in coeffs.layout],
        "theta": [float(x) for x in coeffs.theta],
        "exponent_clamp": coeffs.exponent_clamp,
        "fit_meta": dict(coeffs.fit_meta),
    }


_DOCUMENT_KEYS = {"kind", "layout", "theta", "exponent_clamp", "fit_meta", "provenance"}


def _parse_term(raw: Any) -> Term:
    if not isinstance(raw, Mapping) or set(raw) != {"part", "n1", "n2"}:
        raise SchemaError(f"malformed layout entry {raw!r}")
    try:
        return Term(TermPart(raw["part"]), int(raw["n1"]), int(raw["n2"]))
    except (ValueError, TypeError) as e:
        raise SchemaError(f"malformed layout entry {raw!r}: {e}") from e


def deserialize(document: Union[str, bytes, Mapping[str, Any]]) -> ModelCoefficients:
    """Rebuild coefficients from a model document (dict or JSON text)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError(f"model document is not valid JSON: {e}") from e
    if not isinstance(document, Mapping):
        raise SchemaError("model document must be a JSON object")
    unknown = set(document) - _DOCUMENT_KEYS
    if unknown:
        raise SchemaError(f"unknown keys in model document: {sorted(unknown)}")
    for key in ("kind", "theta"):
        if key not in document:
            raise SchemaError(f"model document is missing '{key}'")

    kind = ModelKind.parse(document["kind"])
    theta = document["theta"]
    if not isinstance(theta, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in theta):
        raise SchemaError("theta must be a list of numbers")

    expected_layout = DEFAULT_LAYOUTS[kind]
    if "layout" in document:
        layout = tuple(_parse_term(raw) for raw in document["layout"])
        if len(layout) != len(theta):
            raise SchemaError(f"layout has {len(layout)} entries but theta has {len(theta)}")
        if layout != expected_layout:
            raise SchemaError(f"layout does not match the {kind.value} term structure")
    else:
        layout = expected_layout

    clamp = document.get("exponent_clamp", DEFAULT_EXPONENT_CLAMP)
    if not isinstance(clamp, (int, float)) or not math.isfinite(clamp):
        raise SchemaError("exponent_clamp must be a finite number")
    fit_meta = document.get("fit_meta") or {}
    if not isinstance(fit_meta, Mapping):
        raise SchemaError("fit_meta must be an object")

    return ModelCoefficients(
        kind=kind,
        theta=tuple(float(x) for x in theta),
        layout=layout,
        exponent_clamp=float(clamp),
        fit_meta=dict(fit_meta),
    )
