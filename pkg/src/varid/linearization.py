"""Step linearization by implicit differentiation.

At a converged step the pair ``(q_{k+1}, lam_k)`` satisfies

    R1 = p_k + d1_ld + f_minus - Dh(q_k)^T lam_k = 0
    R2 = h(q_{k+1}) = 0.

Differentiating this system once and factoring its Newton matrix a
single time yields every sensitivity block with one multi-column
back-solve: the response of ``(q_{k+1}, lam_k)`` to ``q_k``, ``p_k``,
and the parameters.  The momentum rows then follow from the explicit
update ``p_{k+1} = d2_ld + f_plus``.

Parameter sensitivities come in two flavors.  With ``dx_drho=None`` the
``B`` block is the partial derivative of the single step with its start
state held fixed; this is what the backward adjoint sweep consumes.
Passing the accumulated state sensitivity of the start sample threads
the chain rule forward, so ``B`` becomes the total derivative of the
trajectory sample with respect to the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .model import MechanicalModel, slot_derivatives
from .types import DiscreteState, LinearizationPair, Trajectory
from .integrator import StepResult

__all__ = [
    "StepSensitivity",
    "linearize_step",
    "linearize_trajectory",
    "accumulate_param_sensitivity",
    "state_transition",
]


@dataclass(frozen=True)
class StepSensitivity:
    """Derivatives of one converged step.

    ``A`` is the ``(2 n_q, 2 n_q)`` state-transition block and ``B`` the
    ``(2 n_q, n_rho)`` parameter block, both over the packed state
    ``[q; p]``.  The multiplier blocks give the response of ``lam_k`` to
    the same perturbations.
    """

    A: np.ndarray
    B: np.ndarray
    step_index: int
    dlambda_dq: np.ndarray
    dlambda_dp: np.ndarray
    dlambda_drho: np.ndarray

    def as_pair(self) -> LinearizationPair:
        return LinearizationPair(A=self.A, B=self.B, step_index=self.step_index)


def linearize_step(
    model: MechanicalModel,
    state: DiscreteState,
    result: StepResult,
    rho,
    t_k: float,
    dt: float,
    dx_drho: Optional[np.ndarray] = None,
    step_index: int = 0,
) -> StepSensitivity:
    """Sensitivities of the step that took ``state`` to ``result.next``.

    ``dx_drho``, when given, is the ``(2 n_q, n_rho)`` accumulated
    parameter sensitivity of the start sample; omit it (start sample
    independent of the parameters) to get the per-step partial ``B``.
    """
    rho = np.asarray(rho, dtype=float)
    n, n_h, n_rho = model.n_q, model.n_h, model.n_rho
    q0, q1, lam = state.q, result.next.q, result.next.lam

    sd = slot_derivatives(model, q0, q1, rho, t_k, dt)
    m_block = sd.newton_matrix

    # residual derivatives with respect to the start configuration
    r1_q = sd.d11_ld + sd.d1_f_minus
    if n_h:
        ddh0 = model.constraint_hessian(q0, rho)
        r1_q = r1_q - np.einsum("c,cij->ij", lam, ddh0)
    # ... and with respect to the parameters (explicit part)
    r1_rho = sd.d3d1_ld + sd.d3_f_minus
    if n_h:
        dh_drho0 = model.constraint_jacobian_param(q0, rho)
        r1_rho = r1_rho - np.einsum("c,cim->im", lam, dh_drho0)
        r2_rho = model.constraint_param(q1, rho)

    if n_h:
        dh0_t = model.constraint_jacobian(q0, rho).T
        dh1 = model.constraint_jacobian(q1, rho)
        kkt = np.zeros((n + n_h, n + n_h))
        kkt[:n, :n] = m_block
        kkt[:n, n:] = -dh0_t
        kkt[n:, :n] = dh1
        rhs = np.zeros((n + n_h, 2 * n + n_rho))
        rhs[:n, :n] = -r1_q
        rhs[:n, n : 2 * n] = -np.eye(n)
        rhs[:n, 2 * n :] = -r1_rho
        rhs[n:, 2 * n :] = -r2_rho
    else:
        kkt = m_block
        rhs = np.zeros((n, 2 * n + n_rho))
        rhs[:, :n] = -r1_q
        rhs[:, n : 2 * n] = -np.eye(n)
        rhs[:, 2 * n :] = -r1_rho

    sol = lu_solve(lu_factor(kkt, check_finite=False), rhs, check_finite=False)
    dq1 = sol[:n]
    dlam = sol[n:]

    dq1_dq = dq1[:, :n]
    dq1_dp = dq1[:, n : 2 * n]
    dq1_drho = dq1[:, 2 * n :]

    # momentum rows from the explicit update
    n_block = sd.d22_ld + sd.d2_f_plus
    p_cross = sd.d21_ld + sd.d1_f_plus
    a = np.zeros((2 * n, 2 * n))
    a[:n, :n] = dq1_dq
    a[:n, n:] = dq1_dp
    a[n:, :n] = n_block @ dq1_dq + p_cross
    a[n:, n:] = n_block @ dq1_dp

    b = np.zeros((2 * n, n_rho))
    b[:n] = dq1_drho
    b[n:] = n_block @ dq1_drho + sd.d3d2_ld + sd.d3_f_plus

    dlam_dq = dlam[:, :n]
    dlam_dp = dlam[:, n : 2 * n]
    dlam_drho = dlam[:, 2 * n :]

    if dx_drho is not None:
        dx_drho = np.asarray(dx_drho, dtype=float)
        if dx_drho.shape != (2 * n, n_rho):
            raise ValueError(
                f"dx_drho must have shape {(2 * n, n_rho)}, got {dx_drho.shape}"
            )
        b = b + a @ dx_drho
        dlam_drho = dlam_drho + dlam_dq @ dx_drho[:n] + dlam_dp @ dx_drho[n:]

    return StepSensitivity(
        A=a,
        B=b,
        step_index=step_index,
        dlambda_dq=dlam_dq,
        dlambda_dp=dlam_dp,
        dlambda_drho=dlam_drho,
    )


def linearize_trajectory(
    model: MechanicalModel, traj: Trajectory, rho
) -> list:
    """Per-step sensitivities along a stored trajectory.

    Every entry carries the partial parameter block (no forward
    chaining); use :func:`accumulate_param_sensitivity` to thread the
    chain rule when total trajectory sensitivities are wanted.
    """
    out = []
    dt = traj.grid.dt
    for k in range(traj.grid.steps):
        result = StepResult(
            next=traj.states[k + 1], newton_iters=0, residual=float("nan")
        )
        out.append(
            linearize_step(
                model,
                traj.states[k],
                result,
                rho,
                traj.grid.t(k),
                dt,
                step_index=k,
            )
        )
    return out


def accumulate_param_sensitivity(sens: Sequence[StepSensitivity]) -> np.ndarray:
    """Total parameter sensitivity of every sample, shape
    ``(len(sens) + 1, 2 n_q, n_rho)``.

    Sample 0 is parameter-independent by definition; each later sample
    accumulates ``Z_{k+1} = A_k Z_k + B_k`` with the partial ``B_k``.
    """
    if not sens:
        raise ValueError("need at least one step sensitivity")
    two_n, n_rho = sens[0].B.shape
    z = np.zeros((len(sens) + 1, two_n, n_rho))
    for k, s in enumerate(sens):
        z[k + 1] = s.A @ z[k] + s.B
    return z


def state_transition(
    sens: Sequence[StepSensitivity], k_from: int, k_to: int
) -> np.ndarray:
    """Product of step transition blocks mapping sample ``k_from`` to
    ``k_to``; the identity when the indices coincide.

    ``sens`` must be the full per-step list of a trajectory, so that
    ``sens[k]`` is the step leaving sample ``k``.
    """
    if k_to < k_from:
        raise ValueError("k_to must be >= k_from")
    two_n = sens[0].A.shape[0]
    phi = np.eye(two_n)
    for k in range(k_from, k_to):
        phi = sens[k].A @ phi
    return phi
