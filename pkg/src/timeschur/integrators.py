"""One-step time integrators as affine propagators.

A single implicit step over an element ``(t_start, t_end)`` of a linear ODE
``du/dt + A(t) u + c(t) = 0`` is the affine map ``u_out = phi @ u_in + g``.
theta-methods give ``phi`` and ``g`` directly; DG(q) assembles a
``(q+1)*m_unk`` element system on right-Radau nodes and statically condenses
every stage onto the element endpoint. For nonlinear problems the module
evaluates one-step residuals and their partial Jacobians instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularStepError, ValidationError
from .problems import OdeProblem, linear_parts


@dataclass(frozen=True)
class AffinePropagator:
    """One element's map ``u_in -> phi @ u_in + g``."""

    phi: np.ndarray
    g: np.ndarray

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.phi @ u + self.g

    @classmethod
    def identity(cls, m_unk: int) -> "AffinePropagator":
        return cls(np.eye(m_unk), np.zeros(m_unk))


@dataclass(frozen=True)
class Scheme:
    """Time-integration scheme: a theta-method or DG(0..2)."""

    kind: str  # "theta" | "dg"
    theta: float = 1.0
    order: int = 0

    def __post_init__(self):
        if self.kind == "theta":
            if not 0.0 <= self.theta <= 1.0:
                raise ValidationError("theta must lie in [0, 1]")
        elif self.kind == "dg":
            if self.order not in (0, 1, 2):
                raise ValidationError("DG order must be 0, 1, or 2")
        else:
            raise ValidationError(f"unknown scheme kind {self.kind!r}")

    @classmethod
    def theta_method(cls, value: float) -> "Scheme":
        return cls(kind="theta", theta=float(value))

    @classmethod
    def backward_euler(cls) -> "Scheme":
        return cls(kind="theta", theta=1.0)

    @classmethod
    def dg(cls, order: int) -> "Scheme":
        return cls(kind="dg", order=int(order))

    @property
    def label(self) -> str:
        if self.kind == "dg":
            return f"dg{self.order}"
        return "be" if self.theta == 1.0 else f"theta:{self.theta:g}"

    def effective_theta(self) -> float:
        """theta value for nonlinear stepping; DG(0) coincides with backward Euler."""
        if self.kind == "theta":
            return self.theta
        if self.order == 0:
            return 1.0
        raise ValidationError("nonlinear solves support theta-methods and dg0 only")


def parse_scheme(text: str) -> Scheme:
    """Parse a CLI scheme spec: ``be``, ``theta:<v>``, ``dg0``, ``dg1`` or ``dg2``."""
    text = text.strip().lower()
    if text == "be":
        return Scheme.backward_euler()
    if text.startswith("theta:"):
        try:
            return Scheme.theta_method(float(text.split(":", 1)[1]))
        except ValueError as exc:
            raise ValidationError(f"bad theta value in {text!r}") from exc
    if text in ("dg0", "dg1", "dg2"):
        return Scheme.dg(int(text[2]))
    raise ValidationError(f"unknown scheme {text!r} (expected be, theta:<v>, dg0, dg1, dg2)")


# Right-Radau nodes/weights on [-1, 1] (last node at +1), orders 0..2.
_SQRT6 = math.sqrt(6.0)
_RADAU = {
    1: (np.array([1.0]), np.array([2.0])),
    2: (np.array([-1.0 / 3.0, 1.0]), np.array([1.5, 0.5])),
    3: (
        np.array([-(1.0 + _SQRT6) / 5.0, (_SQRT6 - 1.0) / 5.0, 1.0]),
        np.array([(16.0 - _SQRT6) / 18.0, (16.0 + _SQRT6) / 18.0, 2.0 / 9.0]),
    ),
}


def _lagrange_basis(nodes: np.ndarray):
    polys = []
    for j, xj in enumerate(nodes):
        others = np.delete(nodes, j)
        if others.size:
            p = np.polynomial.Polynomial.fromroots(others)
            p = p / p(xj)
        else:
            p = np.polynomial.Polynomial([1.0])
        polys.append(p)
    return polys


def dg_element_system(problem: OdeProblem, t_start: float, t_end: float, order: int):
    """Assemble the uncondensed DG(q) element system ``K U = inflow @ u_in + forcing``.

    Nodal Lagrange basis at the (q+1) right-Radau points, quadrature at the
    same points. Returns ``(K, inflow, forcing, stage_times)`` with ``K`` of
    shape ``(s*m, s*m)``, ``inflow`` of shape ``(s*m, m)`` and ``forcing`` of
    shape ``(s*m,)``, ``s = q + 1``.
    """
    if not problem.is_linear:
        raise ValidationError("dg_element_system requires a linear problem")
    m = problem.m_unk
    dt = t_end - t_start
    nodes, weights = _RADAU[order + 1]
    basis = _lagrange_basis(nodes)
    ell0 = np.array([p(-1.0) for p in basis])  # basis values at the element inflow
    dmat = np.array([[p.deriv()(x) for p in basis] for x in nodes])

    scalar = weights[:, None] * dmat + np.outer(ell0, ell0)
    k_mat = np.kron(scalar, np.eye(m))
    forcing = np.empty((order + 1) * m)
    stage_times = t_start + (nodes + 1.0) * (dt / 2.0)
    for a, (t_a, w_a) in enumerate(zip(stage_times, weights)):
        a_mat, c_vec = linear_parts(problem, t_a)
        k_mat[a * m:(a + 1) * m, a * m:(a + 1) * m] += (dt / 2.0) * w_a * a_mat
        forcing[a * m:(a + 1) * m] = -(dt / 2.0) * w_a * c_vec
    inflow = np.kron(ell0[:, None], np.eye(m))
    return k_mat, inflow, forcing, stage_times


def condense_dg_element(
    k_mat: np.ndarray,
    inflow: np.ndarray,
    forcing: np.ndarray,
    keep_index: int,
    m_unk: int,
) -> AffinePropagator:
    """Eliminate all stages but ``keep_index``, returning the element propagator.

    Performed as a Schur complement on the kept block; interior stages remain
    recoverable by back-substitution of the eliminated block.
    """
    size = k_mat.shape[0]
    stages = size // m_unk
    keep = np.arange(keep_index * m_unk, (keep_index + 1) * m_unk)
    rest = np.setdiff1d(np.arange(size), keep)
    try:
        if rest.size == 0:
            sol = np.linalg.solve(k_mat, np.column_stack([inflow, forcing]))
            return AffinePropagator(sol[:, :m_unk], sol[:, m_unk])
        k_ii = k_mat[np.ix_(rest, rest)]
        k_ik = k_mat[np.ix_(rest, keep)]
        k_ki = k_mat[np.ix_(keep, rest)]
        k_kk = k_mat[np.ix_(keep, keep)]
        x = np.linalg.solve(k_ii, np.column_stack([k_ik, inflow[rest], forcing[rest]]))
        schur = k_kk - k_ki @ x[:, :m_unk]
        rhs_phi = inflow[keep] - k_ki @ x[:, m_unk:2 * m_unk]
        rhs_g = forcing[keep] - k_ki @ x[:, 2 * m_unk]
        phi = np.linalg.solve(schur, rhs_phi)
        g = np.linalg.solve(schur, rhs_g)
    except np.linalg.LinAlgError as exc:
        raise SingularStepError(
            f"singular DG element block ({stages} stages, keep {keep_index})"
        ) from exc
    return AffinePropagator(phi, g)


def linear_propagator(
    problem: OdeProblem,
    t_start: float,
    t_end: float,
    scheme: Scheme,
) -> AffinePropagator:
    """Explicit ``(phi, g)`` of one implicit step of a linear problem."""
    if not problem.is_linear:
        raise ValidationError("linear_propagator requires a linear problem")
    if not t_end > t_start:
        raise ValidationError("element must have positive width")
    m = problem.m_unk
    dt = t_end - t_start
    if scheme.kind == "theta":
        th = scheme.theta
        a1, c1 = linear_parts(problem, t_end)
        a0, c0 = linear_parts(problem, t_start)
        lhs = np.eye(m) + th * dt * a1
        rhs = np.column_stack([np.eye(m) - (1.0 - th) * dt * a0,
                               -dt * (th * c1 + (1.0 - th) * c0)])
        try:
            sol = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularStepError(
                f"singular step matrix on element ({t_start:g}, {t_end:g})",
                t_start, t_end,
            ) from exc
        return AffinePropagator(sol[:, :m], sol[:, m])
    k_mat, inflow, forcing, _ = dg_element_system(problem, t_start, t_end, scheme.order)
    try:
        return condense_dg_element(k_mat, inflow, forcing, scheme.order, m)
    except SingularStepError as exc:
        raise SingularStepError(
            f"singular step matrix on element ({t_start:g}, {t_end:g})", t_start, t_end
        ) from exc


def nonlinear_step_residual(
    problem: OdeProblem,
    t_start: float,
    t_end: float,
    u_in: np.ndarray,
    u_out: np.ndarray,
    scheme: Scheme,
):
    """Residual of one implicit step plus both partial Jacobians.

    ``r = u_out - u_in + dt*(th*kappa(t_end, u_out) + (1-th)*kappa(t_start, u_in))``
    for the scheme's effective theta. Returns ``(r, dr/du_out, dr/du_in)``.
    """
    th = scheme.effective_theta()
    dt = t_end - t_start
    m = problem.m_unk
    r = u_out - u_in + dt * (
        th * np.asarray(problem.kappa(t_end, u_out), dtype=float)
        + (1.0 - th) * np.asarray(problem.kappa(t_start, u_in), dtype=float)
    )
    j_out = np.eye(m) + dt * th * np.asarray(problem.jacobian(t_end, u_out), dtype=float)
    j_in = -np.eye(m) + dt * (1.0 - th) * np.asarray(problem.jacobian(t_start, u_in), dtype=float)
    return r, j_out, j_in
