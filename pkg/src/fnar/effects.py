"""Network multiplier analysis: marginal effects, impulse responses, and the
risk key player, all as truncated propagation sums over walk lengths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import QuadratureGrid
from .errors import InvalidArgumentError
from .interaction import InteractionOperator
from .network import NetworkWeights

__all__ = [
    "ShockFunction",
    "PropagationResult",
    "gamma_power",
    "marginal_effects",
    "impulse_response",
    "total_impact",
    "risk_key_player",
]


@dataclass
class ShockFunction:
    """An external shock path on the quadrature grid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("shock values must be finite")


@dataclass
class PropagationResult:
    """Per-walk-length terms of a truncated propagation and their sum.

    ``per_order[ell]`` holds the order-ell term for every unit on the grid;
    ``cumulative`` is their exact sum, so successive partial sums can be
    reconstructed for response plots by walk length.
    """

    per_order: np.ndarray  # (S+1, n, G)
    quad: QuadratureGrid
    cumulative: np.ndarray = None

    def __post_init__(self):
        self.per_order = np.asarray(self.per_order, dtype=float)
        self.cumulative = self.per_order.sum(axis=0)

    @property
    def order(self) -> int:
        return self.per_order.shape[0] - 1

    def partial(self, upto: int) -> np.ndarray:
        """Cumulative response truncated at walk length ``upto``."""
        return self.per_order[: upto + 1].sum(axis=0)


def gamma_power(alpha: np.ndarray, operator: InteractionOperator,
                h: np.ndarray, ell: int) -> np.ndarray:
    """Iterate h -> alpha(s) A(h, s) on the grid, ell times."""
    if ell < 0:
        raise InvalidArgumentError(f"order must be non-negative, got {ell}")
    out = np.asarray(h, dtype=float).copy()
    alpha = np.asarray(alpha, dtype=float)
    for _ in range(ell):
        out = alpha * operator.apply_grid(out)
    return out


def _source_functions(source) -> tuple[np.ndarray, np.ndarray, InteractionOperator]:
    """Pull (alpha grid values, beta grid values, operator) from a fit or a truth config."""
    operator = getattr(source, "operator", None)
    if operator is not None:  # ground-truth configuration
        return source.alpha, source.beta, operator
    spec = getattr(source, "spec", None)
    if spec is None:
        raise InvalidArgumentError(
            "source must be a GmmFit or a DgpConfig-like object"
        )
    grid = spec.operator.grid
    alpha = source.alpha(grid.points)
    beta = np.stack([source.beta(j, grid.points) for j in range(source.d_x)])
    return alpha, beta, spec.operator


def _propagate(alpha: np.ndarray, operator: InteractionOperator,
               weights: NetworkWeights, unit: int, h: np.ndarray,
               order: int) -> PropagationResult:
    n = weights.n
    if not 0 <= unit < n:
        raise InvalidArgumentError(f"unit {unit} out of range for {n} units")
    if order < 0:
        raise InvalidArgumentError(f"truncation order must be non-negative, got {order}")
    reach = np.zeros(n)
    reach[unit] = 1.0  # W^0 e_i
    gamma = np.asarray(h, dtype=float).copy()
    terms = np.empty((order + 1, n, gamma.size))
    terms[0] = reach[:, None] * gamma[None, :]
    for ell in range(1, order + 1):
        reach = weights.w @ reach
        gamma = alpha * operator.apply_grid(gamma)
        terms[ell] = reach[:, None] * gamma[None, :]
    return PropagationResult(per_order=terms, quad=operator.grid)


def marginal_effects(source, weights: NetworkWeights, unit: int,
                     cov_index: int, order: int = 5) -> PropagationResult:
    """Effect of raising covariate ``cov_index`` of ``unit`` by one, by walk length.

    Order 0 is the direct effect on the unit itself; order ell reaches its
    ell-step neighbours through repeated sparse products, never forming
    matrix powers.
    """
    alpha, beta, operator = _source_functions(source)
    if beta is None or not 0 <= cov_index < beta.shape[0]:
        raise InvalidArgumentError(f"covariate index {cov_index} out of range")
    return _propagate(alpha, operator, weights, unit, beta[cov_index], order)


def impulse_response(source, weights: NetworkWeights, unit: int, eta,
                     order: int = 5) -> PropagationResult:
    """Response of all outcome functions to an error shock at one unit."""
    alpha, _, operator = _source_functions(source)
    shock = eta.values if isinstance(eta, ShockFunction) else np.asarray(eta, dtype=float)
    if shock.shape != (operator.grid.count,):
        raise InvalidArgumentError(
            f"shock must have {operator.grid.count} grid values, got {shock.shape}"
        )
    return _propagate(alpha, operator, weights, unit, shock, order)


def total_impact(result: PropagationResult) -> float:
    """Integrated aggregate response: sum over units of the integral of the sum."""
    return float(result.quad.integrate(result.cumulative).sum())


def risk_key_player(source, weights: NetworkWeights, eta, order: int = 5) -> int:
    """Unit whose shock maximizes the total impact; ties take the lowest index."""
    impacts = np.array([
        total_impact(impulse_response(source, weights, i, eta, order))
        for i in range(weights.n)
    ])
    return int(np.argmax(impacts))
