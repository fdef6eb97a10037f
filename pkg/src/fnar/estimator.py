"""Integrated-GMM estimation of the interaction-effect and coefficient functions.

The moment conditions combine instrument orthogonality (linear in the
coefficient block) with zero-diagonal quadratic forms of first-differenced
residuals, evaluated on a grid of points and averaged. First differences
are always computed directly between adjacent periods; the one-period lag
operator is never materialized outside the test oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla

from .basis import BasisSystem
from .errors import (
    CannotDifferenceError,
    InvalidArgumentError,
    MissingDataError,
    NumericalFailureError,
    SmallTWarning,
    UnderidentificationWarning,
    UnderidentifiedError,
    VarianceUnavailableError,
)
from .interaction import InteractionOperator, network_lag
from .network import NetworkWeights, QuadWeightMatrix, build_quadratic_weights
from .simulate import FunctionalPanel

__all__ = [
    "MomentSpec",
    "GmmFit",
    "InstrumentSet",
    "build_instruments",
    "moment_function",
    "moment_jacobian",
    "fit_2sls",
    "fit_gmm",
    "estimate_fixed_effects",
    "estimate_variance",
    "interpolate_response",
    "fit_report_text",
    "functional_estimate_table",
]

_SV_FLOOR = 1e-10


@dataclass
class MomentSpec:
    """Everything the moment conditions need besides the panel itself.

    Attributes
    ----------
    basis : BasisSystem
        Shared basis for the interaction-effect and coefficient functions.
    operator : InteractionOperator
        The known linear functional applied to aggregated outcomes.
    weights : NetworkWeights
        Interaction matrix, also the source of the default quadratic
        weight matrices and of the instrument lags.
    n_points : int
        Number L of moment-grid points l/(L+1), l = 1..L.
    quad_mats : list of QuadWeightMatrix
        Matrices of the quadratic moments; default: symmetrized W and
        W'W less its diagonal.
    iv_orders : tuple of int
        Network-lag orders of the covariates used as instruments.
    iv_exclude : tuple of int
        Covariate indices excluded from instrument construction (they
        still instrument themselves).
    weighting : str
        "2sls-block" for the block weight with the inverse instrument
        second moment, or "identity".
    omega : ndarray or None
        Custom positive semidefinite weight matrix; overrides ``weighting``.
    """

    basis: BasisSystem
    operator: InteractionOperator
    weights: NetworkWeights
    n_points: int = 10
    quad_mats: list[QuadWeightMatrix] | None = None
    iv_orders: tuple[int, ...] = (1, 2)
    iv_exclude: tuple[int, ...] = ()
    weighting: str = "2sls-block"
    omega: np.ndarray | None = None

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidArgumentError(f"need at least one moment point, got {self.n_points}")
        if self.weighting not in ("2sls-block", "identity"):
            raise InvalidArgumentError(f"unknown weighting {self.weighting!r}")
        if self.quad_mats is None:
            self.quad_mats = build_quadratic_weights(self.weights)
        for mat in self.quad_mats:
            if mat.n != self.weights.n:
                raise InvalidArgumentError("quadratic weight matrix size differs from network")

    @property
    def points(self) -> np.ndarray:
        """Moment-grid points, strictly interior and equally spaced."""
        L = self.n_points
        return np.arange(1, L + 1, dtype=float) / (L + 1)

    @property
    def n_quad_moments(self) -> int:
        return len(self.quad_mats)


class InstrumentSet(NamedTuple):
    b: np.ndarray  # (n, T, d_q + d_x) instrument rows, network lags first
    d_q: int


def build_instruments(panel: FunctionalPanel, weights: NetworkWeights,
                      spec: MomentSpec) -> InstrumentSet:
    """Stack network-lagged covariates and the covariates themselves.

    Lag orders come from ``spec.iv_orders``; covariates listed in
    ``spec.iv_exclude`` contribute no lags. The full covariate vector is
    always appended, so the row layout is (Q_it', X_it')'.
    """
    if weights.n != panel.n:
        raise InvalidArgumentError(
            f"network has {weights.n} units, panel has {panel.n}"
        )
    included = [j for j in range(panel.d_x) if j not in set(spec.iv_exclude)]
    if not included:
        raise UnderidentifiedError("every covariate is excluded from instrument construction")
    blocks = []
    lagged = panel.x[:, :, included]
    for _ in range(max(spec.iv_orders)):
        lagged = network_lag(weights, lagged)
        blocks.append(lagged)
    q_cols = [blocks[order - 1] for order in spec.iv_orders]
    q = np.concatenate(q_cols, axis=2) if q_cols else np.empty((panel.n, panel.T, 0))
    if q.shape[2] > 0 and np.all(q == 0.0):
        warnings.warn(
            "all network-lagged instruments are identically zero",
            UnderidentificationWarning,
        )
    return InstrumentSet(b=np.concatenate([q, panel.x], axis=2), d_q=q.shape[2])


class _Design:
    """Per-moment-point arrays and the aggregates the objective needs.

    Residual components are grid functions: at a moment point between
    nodes, the regressor block R(s) (x) phi(s) and the outcome are linear
    interpolations of their node values, so a panel that satisfies the
    model exactly on the grid has exactly zero differenced residuals at
    every moment point. Instrument rows use the basis evaluated exactly
    (instruments only need exogeneity, not grid consistency).

    All stored moment pieces carry the 1/(n(T-1)) normalization. The
    ``lin_*``/``quad_*`` aggregates are additionally averaged over the
    moment grid; the ``per_point`` variants keep the grid axis.
    """

    def __init__(self, panel: FunctionalPanel, spec: MomentSpec):
        if panel.T < 2:
            raise CannotDifferenceError(
                f"first differencing needs at least 2 periods, got T={panel.T}"
            )
        self.panel = panel
        self.spec = spec
        n, T, d_x = panel.n, panel.T, panel.d_x
        K = spec.basis.size
        instruments = build_instruments(panel, spec.weights, spec)
        self.d_q = instruments.d_q
        d_b = instruments.b.shape[2]
        self.d_theta = (1 + d_x) * K
        self.d_z = d_b * K
        self.M = spec.n_quad_moments
        self.d_g = self.d_z + self.M
        points = spec.points
        L = points.size
        self.n_obs = n * (T - 1)
        grid = panel.quad

        ybar = network_lag(spec.weights, panel.y)
        self.ay_grid = spec.operator.apply_grid(ybar)  # (n, T, G)
        phi = spec.basis.eval_many(points)  # (L, K)
        self.phi = phi
        phi_nodes = spec.basis.values_on_grid  # (G, K)

        # differenced node values, time axis first
        d_ay = np.swapaxes(self.ay_grid[:, 1:] - self.ay_grid[:, :-1], 0, 1)  # (T-1, n, G)
        d_y_nodes = np.swapaxes(panel.y[:, 1:] - panel.y[:, :-1], 0, 1)
        d_x_arr = np.swapaxes(panel.x[:, 1:] - panel.x[:, :-1], 0, 1)  # (T-1, n, d_x)

        self.dz = np.empty((L, T - 1, n, self.d_z))
        self.dh = np.empty((L, T - 1, n, self.d_theta))
        self.dy = np.empty((L, T - 1, n))
        db = np.swapaxes(instruments.b[:, 1:] - instruments.b[:, :-1], 0, 1)  # (T-1, n, d_b)
        nodes = grid.points
        for l, s in enumerate(points):
            g0 = int(np.clip(np.searchsorted(nodes, s, side="right") - 1, 0, nodes.size - 2))
            g1 = g0 + 1
            lam = float(np.clip((s - nodes[g0]) / (nodes[g1] - nodes[g0]), 0.0, 1.0))
            self.dy[l] = (1.0 - lam) * d_y_nodes[..., g0] + lam * d_y_nodes[..., g1]
            h_parts = []
            for weight, g in (((1.0 - lam), g0), (lam, g1)):
                dr = np.concatenate([d_ay[..., g][..., None], d_x_arr], axis=2)
                h_parts.append(
                    weight * np.einsum("tnr,k->tnrk", dr, phi_nodes[g])
                )
            self.dh[l] = (h_parts[0] + h_parts[1]).reshape(T - 1, n, self.d_theta)
            self.dz[l] = np.einsum("tnb,k->tnbk", db, phi[l]).reshape(T - 1, n, self.d_z)

        norm = 1.0 / self.n_obs
        zf = self.dz.reshape(L, self.n_obs, self.d_z)
        hf = self.dh.reshape(L, self.n_obs, self.d_theta)
        yf = self.dy.reshape(L, self.n_obs)
        self.a_point = norm * np.einsum("lnz,ln->lz", zf, yf)
        self.A_point = norm * np.einsum("lnz,lnt->lzt", zf, hf)
        self.s_z = norm * np.einsum("lnz,lnt->zt", zf, zf) / L

        self.c_point = np.zeros((L, self.M))
        self.b_point = np.zeros((L, self.M, self.d_theta))
        self.C_point = np.zeros((L, self.M, self.d_theta, self.d_theta))
        for m, mat in enumerate(spec.quad_mats):
            p = mat.p
            for l in range(L):
                py = np.stack([p @ self.dy[l, t] for t in range(T - 1)])  # (T-1, n)
                ph = np.stack([p @ self.dh[l, t] for t in range(T - 1)])  # (T-1, n, d_theta)
                self.c_point[l, m] = norm * np.sum(self.dy[l] * py)
                self.b_point[l, m] = norm * np.einsum("tnk,tn->k", self.dh[l], py)
                self.C_point[l, m] = norm * np.einsum("tnk,tnj->kj", self.dh[l], ph)

        self.lin_a = self.a_point.mean(axis=0)
        self.lin_A = self.A_point.mean(axis=0)
        self.quad_c = self.c_point.mean(axis=0)
        self.quad_b = self.b_point.mean(axis=0)
        self.quad_C = self.C_point.mean(axis=0)

    def moments(self, theta: np.ndarray) -> np.ndarray:
        lin = self.lin_a - self.lin_A @ theta
        quad = self.quad_c - 2.0 * self.quad_b @ theta + np.einsum(
            "mkj,k,j->m", self.quad_C, theta, theta
        )
        return np.concatenate([lin, quad])

    def moments_per_point(self, theta: np.ndarray) -> np.ndarray:
        lin = self.a_point - self.A_point @ theta
        quad = self.c_point - 2.0 * self.b_point @ theta + np.einsum(
            "lmkj,k,j->lm", self.C_point, theta, theta
        )
        return np.concatenate([lin, quad], axis=1)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        quad_rows = -2.0 * (self.quad_b - np.einsum("mkj,j->mk", self.quad_C, theta))
        return np.vstack([-self.lin_A, quad_rows])

    def jacobian_per_point(self, theta: np.ndarray) -> np.ndarray:
        quad_rows = -2.0 * (self.b_point - np.einsum("lmkj,j->lmk", self.C_point, theta))
        return np.concatenate([-self.A_point, quad_rows], axis=1)

    def omega(self) -> np.ndarray:
        if self.spec.omega is not None:
            om = np.asarray(self.spec.omega, dtype=float)
            if om.shape != (self.d_g, self.d_g):
                raise InvalidArgumentError(
                    f"custom weight matrix must be {self.d_g}x{self.d_g}, got {om.shape}"
                )
            return om
        if self.spec.weighting == "identity":
            return np.eye(self.d_g)
        om = np.zeros((self.d_g, self.d_g))
        om[: self.d_z, : self.d_z] = self._instrument_weight()
        om[self.d_z:, self.d_z:] = np.eye(self.M)
        return om

    def _instrument_weight(self) -> np.ndarray:
        try:
            chol = sla.cho_factor(self.s_z)
        except sla.LinAlgError as exc:
            hint = (
                f"; the block weight needs at least as many moment points as basis "
                f"functions (L={self.spec.n_points}, K={self.spec.basis.size})"
                if self.spec.n_points < self.spec.basis.size
                else " (collinear instruments)"
            )
            raise UnderidentifiedError(
                "instrument second-moment matrix is singular" + hint
            ) from exc
        return sla.cho_solve(chol, np.eye(self.d_z))

    def solve_2sls(self) -> tuple[np.ndarray, float]:
        """Minimize the linear-moment quadratic form; returns (theta, min sv)."""
        smin = np.linalg.svd(self.lin_A, compute_uv=False)[-1]
        if smin < _SV_FLOOR:
            raise UnderidentifiedError(
                f"instrument design is rank deficient (smallest singular value {smin:.3g})"
            )
        try:
            lz = sla.cholesky(self.s_z, lower=True)
        except sla.LinAlgError as exc:
            raise UnderidentifiedError(
                "instrument second-moment matrix is singular (collinear instruments)"
            ) from exc
        design = sla.solve_triangular(lz, self.lin_A, lower=True)
        target = sla.solve_triangular(lz, self.lin_a, lower=True)
        theta, *_ = np.linalg.lstsq(design, target, rcond=None)
        return theta, float(smin)


def _omega_sqrt(omega: np.ndarray) -> np.ndarray:
    """Factor R with R'R = omega, tolerant of semidefinite custom matrices."""
    vals, vecs = np.linalg.eigh(0.5 * (omega + omega.T))
    if vals.min() < -1e-8 * max(1.0, vals.max()):
        raise InvalidArgumentError("weight matrix must be positive semidefinite")
    return np.sqrt(np.clip(vals, 0.0, None))[:, None] * vecs.T


def moment_function(panel: FunctionalPanel, spec: MomentSpec, theta: np.ndarray,
                    *, per_point: bool = False) -> np.ndarray:
    """Averaged moment vector, or the per-grid-point stack when requested.

    Shape (d_g,) by default, (L, d_g) with ``per_point=True``.
    """
    design = _Design(panel, spec)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (design.d_theta,):
        raise InvalidArgumentError(
            f"theta must have length {design.d_theta}, got {theta.shape}"
        )
    return design.moments_per_point(theta) if per_point else design.moments(theta)


def moment_jacobian(panel: FunctionalPanel, spec: MomentSpec, theta: np.ndarray,
                    *, per_point: bool = False) -> np.ndarray:
    """Analytic Jacobian of the (averaged) moment vector in theta."""
    design = _Design(panel, spec)
    theta = np.asarray(theta, dtype=float)
    return design.jacobian_per_point(theta) if per_point else design.jacobian(theta)


@dataclass
class GmmFit:
    """Estimation result: coefficient block, evaluators, and diagnostics."""

    theta: np.ndarray
    spec: MomentSpec
    n: int
    T: int
    d_x: int
    method: str
    include_quadratic: bool
    omega: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)
    sigma: np.ndarray | None = None
    fixed_effects: np.ndarray | None = None
    _design: object = field(default=None, repr=False)

    @property
    def basis(self) -> BasisSystem:
        return self.spec.basis

    @property
    def theta_alpha(self) -> np.ndarray:
        return self.theta[: self.basis.size]

    def theta_beta(self, j: int) -> np.ndarray:
        K = self.basis.size
        if not 0 <= j < self.d_x:
            raise InvalidArgumentError(f"covariate index {j} out of range")
        return self.theta[(1 + j) * K: (2 + j) * K]

    def alpha(self, s) -> np.ndarray:
        """Interaction-effect estimate at one or many points."""
        return self.basis.eval_many(np.atleast_1d(s)) @ self.theta_alpha

    def beta(self, j: int, s) -> np.ndarray:
        """Coefficient estimate for covariate j at one or many points."""
        return self.basis.eval_many(np.atleast_1d(s)) @ self.theta_beta(j)

    def _pointwise_sigma(self, block: int, s) -> np.ndarray:
        if self.sigma is None:
            raise VarianceUnavailableError("run estimate_variance first")
        K = self.basis.size
        sub = self.sigma[block * K: (block + 1) * K, block * K: (block + 1) * K]
        phi = self.basis.eval_many(np.atleast_1d(s))
        return np.sqrt(np.maximum(np.einsum("ik,kj,ij->i", phi, sub, phi), 0.0))

    def se_alpha(self, s) -> np.ndarray:
        """Pointwise standard error of the interaction-effect estimate."""
        return self._pointwise_sigma(0, s) / np.sqrt(self.n * (self.T - 1))

    def se_beta(self, j: int, s) -> np.ndarray:
        """Pointwise standard error of the j-th coefficient estimate."""
        if not 0 <= j < self.d_x:
            raise InvalidArgumentError(f"covariate index {j} out of range")
        return self._pointwise_sigma(1 + j, s) / np.sqrt(self.n * (self.T - 1))


def fit_2sls(panel: FunctionalPanel, spec: MomentSpec) -> GmmFit:
    """Closed-form estimator from the linear moments alone.

    Numerically identical to the full GMM estimator with the quadratic
    moments dropped and the block weight matrix retained.
    """
    design = _Design(panel, spec)
    theta, smin = design.solve_2sls()
    resid = design.lin_a - design.lin_A @ theta
    omega_z = design._instrument_weight()
    return GmmFit(
        theta=theta,
        spec=spec,
        n=panel.n,
        T=panel.T,
        d_x=panel.d_x,
        method="2sls",
        include_quadratic=False,
        omega=omega_z,
        objective_value=float(resid @ omega_z @ resid),
        iterations=0,
        converged=True,
        diagnostics={"min_singular_value": smin},
        _design=design,
    )


def _gauss_newton(design: _Design, omega: np.ndarray, omega_sqrt: np.ndarray,
                  theta0: np.ndarray, max_iter: int, grad_tol: float,
                  box_bound: float | None) -> tuple[np.ndarray, float, int, bool, list]:
    """Levenberg-damped Gauss-Newton with an exact-Newton polish.

    Gauss-Newton converges only linearly once the (nonzero) moment residual
    dominates, which can stall above a tight gradient tolerance; the polish
    stage adds the analytic second-order term of the quadratic moments to
    finish the descent. Both stages keep the objective non-increasing.
    """
    def residual(th):
        return omega_sqrt @ design.moments(th)

    def curvature_fix(th):
        # second-order term: quadratic moment m contributes 2 C_m to its Hessian
        weighted = omega @ design.moments(th)
        return 4.0 * np.einsum("m,mkj->kj", weighted[design.d_z:], design.quad_C)

    theta = theta0.copy()
    r = residual(theta)
    obj = float(r @ r)
    if not np.isfinite(obj):
        raise NumericalFailureError("objective is not finite at the starting point")
    path = [obj]
    iterations = 0
    converged = False
    identity = np.eye(design.d_theta)
    floor = 4.0 * np.finfo(float).eps
    for stage in ("gauss-newton", "newton"):
        lam = 1e-8
        for _ in range(max_iter):
            jac = omega_sqrt @ design.jacobian(theta)
            grad = 2.0 * jac.T @ r
            if np.linalg.norm(grad) <= grad_tol:
                converged = True
                break
            hess = 2.0 * jac.T @ jac
            if stage == "newton":
                hess = hess + curvature_fix(theta)
            accepted = False
            for _ in range(60):
                try:
                    step = np.linalg.solve(hess + lam * identity, -grad)
                except np.linalg.LinAlgError:
                    lam = max(lam, 1e-12) * 10.0
                    continue
                predicted = -0.5 * float(grad @ step)
                if 0.0 <= predicted <= floor * (1.0 + obj):
                    # no representable descent remains: numerical stationary point
                    converged = True
                    break
                trial = theta + step
                if box_bound is not None:
                    trial = np.clip(trial, -box_bound, box_bound)
                r_trial = residual(trial)
                obj_trial = float(r_trial @ r_trial)
                if np.isfinite(obj_trial) and obj_trial < obj:
                    theta, r, obj = trial, r_trial, obj_trial
                    lam = max(lam / 3.0, 1e-12)
                    accepted = True
                    break
                lam = max(lam, 1e-12) * 10.0
            if not accepted:
                break
            iterations += 1
            path.append(obj)
        if converged:
            break
    return theta, obj, iterations, converged, path


def fit_gmm(panel: FunctionalPanel, spec: MomentSpec, *, max_iter: int = 200,
            grad_tol: float = 1e-10, box_bound: float | None = None,
            n_restarts: int = 3, restart_seed: int = 0) -> GmmFit:
    """Minimize the integrated-GMM objective by damped Gauss-Newton.

    The weight matrix is fixed (one-step GMM); optimization starts from the
    closed-form linear-moments solution, with a few perturbed restarts as a
    guarded fallback if the first run fails to meet the gradient tolerance.
    """
    design = _Design(panel, spec)
    omega = design.omega()
    omega_sqrt = _omega_sqrt(omega)
    theta0, smin = design.solve_2sls()

    theta, obj, iters, converged, path = _gauss_newton(
        design, omega, omega_sqrt, theta0, max_iter, grad_tol, box_bound
    )
    total_iters = iters
    if not converged and n_restarts > 0:
        rng = np.random.default_rng(restart_seed)
        for _ in range(n_restarts):
            start = theta0 + rng.normal(scale=0.1 * (1.0 + np.abs(theta0)))
            cand, cand_obj, cand_iters, cand_conv, cand_path = _gauss_newton(
                design, omega, omega_sqrt, start, max_iter, grad_tol, box_bound
            )
            total_iters += cand_iters
            if cand_obj < obj:
                theta, obj, converged, path = cand, cand_obj, cand_conv, cand_path
            if converged:
                break

    return GmmFit(
        theta=theta,
        spec=spec,
        n=panel.n,
        T=panel.T,
        d_x=panel.d_x,
        method="gmm-" + ("custom" if spec.omega is not None else spec.weighting),
        include_quadratic=True,
        omega=omega,
        objective_value=obj,
        iterations=total_iters,
        converged=converged,
        diagnostics={"min_singular_value": smin, "objective_path": path},
        _design=design,
    )


def estimate_fixed_effects(fit: GmmFit, panel: FunctionalPanel) -> np.ndarray:
    """Per-unit time averages of the residual functions on the grid.

    Consistency needs many periods; a single-period panel returns the lone
    residual path with a warning.
    """
    spec = fit.spec
    grid = panel.quad
    ay = spec.operator.apply_grid(network_lag(spec.weights, panel.y))  # (n, T, G)
    alpha_grid = fit.alpha(grid.points)
    beta_grid = np.stack([fit.beta(j, grid.points) for j in range(fit.d_x)])
    resid = panel.y - alpha_grid[None, None, :] * ay - np.einsum(
        "ntj,jg->ntg", panel.x, beta_grid
    )
    if panel.T == 1:
        warnings.warn(
            "fixed effects from a single period are the raw residual paths",
            SmallTWarning,
        )
    fit.fixed_effects = resid.mean(axis=1)
    return fit.fixed_effects


def _differenced_residuals(design: _Design, theta: np.ndarray) -> np.ndarray:
    """Residual first differences at every moment point, shape (L, T-1, n)."""
    return design.dy - np.einsum("ltnk,k->ltn", design.dh, theta)


def estimate_variance(fit: GmmFit, panel: FunctionalPanel, spec: MomentSpec
                      ) -> tuple[np.ndarray, Callable, Callable]:
    """Sandwich covariance of the coefficient block and pointwise sigmas.

    The long-run moment variance is estimated from differenced residuals
    with the one-period band over differenced time indices; cross blocks
    between linear and quadratic moments are zero. Returns the clipped
    positive semidefinite covariance together with callables giving the
    pointwise sigmas of the interaction-effect and coefficient estimates
    (divide by sqrt(n (T-1)) for standard errors; ``GmmFit.se_alpha`` and
    ``GmmFit.se_beta`` do this).
    """
    design = fit._design
    if design is None or design.panel is not panel or design.spec is not spec:
        design = _Design(panel, spec)
    n, T = panel.n, panel.T
    L = spec.n_points
    de = _differenced_residuals(design, fit.theta)  # (L, T-1, n)
    scale = 1.0 / (L * L * n * (T - 1))

    u = np.einsum("ltnz,ltn->tnz", design.dz, de)  # (T-1, n, d_z)
    v_z = np.zeros((design.d_z, design.d_z))
    for t in range(T - 1):
        for t2 in (t - 1, t, t + 1):
            if 0 <= t2 < T - 1:
                v_z += u[t].T @ u[t2]
    v_z *= scale

    if fit.include_quadratic:
        M = design.M
        c_mats = [de[:, t, :].T @ de[:, t, :] for t in range(T - 1)]  # each (n, n)
        v_q = np.zeros((M, M))
        pair_products = [
            [(spec.quad_mats[a].p.multiply(spec.quad_mats[b].p)) for b in range(M)]
            for a in range(M)
        ]
        for t in range(T - 1):
            for t2 in (t - 1, t, t + 1):
                if not 0 <= t2 < T - 1:
                    continue
                cc = c_mats[t] * c_mats[t2]
                for a in range(M):
                    for b in range(M):
                        v_q[a, b] += pair_products[a][b].multiply(cc).sum()
        v_q *= 2.0 * scale
        v_hat = np.zeros((design.d_g, design.d_g))
        v_hat[: design.d_z, : design.d_z] = v_z
        v_hat[design.d_z:, design.d_z:] = v_q
        jbar = design.jacobian(fit.theta)
    else:
        v_hat = v_z
        jbar = -design.lin_A

    omega = fit.omega
    bread = jbar.T @ omega @ jbar
    try:
        chol = sla.cho_factor(0.5 * (bread + bread.T))
    except sla.LinAlgError as exc:
        raise VarianceUnavailableError(
            "J' Omega J is singular; the sandwich covariance is unavailable"
        ) from exc
    meat = jbar.T @ omega @ v_hat @ omega @ jbar
    sigma = sla.cho_solve(chol, sla.cho_solve(chol, meat).T)
    sigma = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sigma)
    sigma = (vecs * np.clip(vals, 0.0, None)) @ vecs.T  # PSD clip at -1e-10 tolerance
    fit.sigma = sigma

    def sigma_alpha(s):
        return fit._pointwise_sigma(0, s)

    def sigma_beta(j, s):
        return fit._pointwise_sigma(1 + j, s)

    return sigma, sigma_alpha, sigma_beta


def interpolate_response(observations, quad) -> np.ndarray:
    """Piecewise-linear interpolant of scattered (s, y) pairs on the grid.

    Outside the observed range the first/last value is extended; a single
    observation yields a constant function.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.size == 0:
        raise MissingDataError("no observations to interpolate")
    if obs.ndim != 2 or obs.shape[1] != 2:
        raise InvalidArgumentError("observations must be (s, y) pairs")
    order = np.argsort(obs[:, 0], kind="stable")
    s_obs, y_obs = obs[order, 0], obs[order, 1]
    return np.interp(quad.points, s_obs, y_obs)


def functional_estimate_table(fit: GmmFit, target: str, j: int = 0,
                              level: float = 0.95) -> list[tuple]:
    """Rows (s, estimate, se, ci_lo, ci_hi) on the quadrature grid."""
    from scipy.stats import norm as _norm

    grid = fit.basis.quad
    s = grid.points
    if target == "alpha":
        est = fit.alpha(s)
        se = fit.se_alpha(s) if fit.sigma is not None else np.full(s.size, np.nan)
    elif target == "beta":
        est = fit.beta(j, s)
        se = fit.se_beta(j, s) if fit.sigma is not None else np.full(s.size, np.nan)
    else:
        raise InvalidArgumentError(f"unknown target {target!r}")
    z = _norm.ppf(0.5 + level / 2.0)
    return [
        (float(si), float(ei), float(sei), float(ei - z * sei), float(ei + z * sei))
        for si, ei, sei in zip(s, est, se)
    ]


def fit_report_text(fit: GmmFit, include_grids: bool = True) -> str:
    """Nested key-value report of the fit, suitable for plain-text export."""
    lines = [
        "fit:",
        f"  method: {fit.method}",
        f"  n: {fit.n}",
        f"  T: {fit.T}",
        f"  d_x: {fit.d_x}",
        f"  basis_size: {fit.basis.size}",
        f"  moment_points: {fit.spec.n_points}",
        f"  objective: {fit.objective_value:.12g}",
        f"  iterations: {fit.iterations}",
        f"  converged: {fit.converged}",
        "theta:",
        "  alpha: " + " ".join(f"{v:.12g}" for v in fit.theta_alpha),
    ]
    for j in range(fit.d_x):
        lines.append(f"  beta{j + 1}: " + " ".join(f"{v:.12g}" for v in fit.theta_beta(j)))
    lines.append("diagnostics:")
    for key, value in fit.diagnostics.items():
        if key == "objective_path":
            lines.append(f"  {key}_length: {len(value)}")
        else:
            lines.append(f"  {key}: {value}")
    if include_grids:
        grid = fit.basis.quad.points
        targets = [("alpha", fit.alpha(grid),
                    fit.se_alpha(grid) if fit.sigma is not None else None)]
        for j in range(fit.d_x):
            targets.append((f"beta{j + 1}", fit.beta(j, grid),
                            fit.se_beta(j, grid) if fit.sigma is not None else None))
        for name, values, ses in targets:
            lines.append(f"grid_{name}:")
            for g, s in enumerate(grid):
                row = f"  {s:.6g}: {values[g]:.12g}"
                if ses is not None:
                    row += f" se={ses[g]:.12g}"
                lines.append(row)
    return "\n".join(lines) + "\n"
