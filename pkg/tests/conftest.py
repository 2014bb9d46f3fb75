"""Shared fixtures: reference models, tight solver settings, fault fixtures."""

import numpy as np
import pytest

from varid import (
    ChainModel,
    LagrangianBundle,
    MechanicalModel,
    PendulumModel,
    SolverSettings,
    StiffnessGrouping,
    regular_closed_loop,
)

# tight Newton keeps difference oracles inside discretization error
TIGHT = SolverSettings(newton_tol=1e-13, max_iters=80, predictor="hold")


class FreeParticle(MechanicalModel):
    """Planar point mass with no potential and no parameters."""

    def __init__(self, mass=1.0):
        self.mass = float(mass)

    @property
    def n_q(self):
        return 2

    @property
    def n_rho(self):
        return 0

    def kinetic_energy(self, q, v, rho):
        v = np.asarray(v, dtype=float)
        return 0.5 * self.mass * float(v @ v)

    def potential_energy(self, q, rho):
        return 0.0

    def lagrangian_derivatives(self, q, v, rho):
        v = np.asarray(v, dtype=float)
        n = self.n_q
        return LagrangianBundle(
            value=self.kinetic_energy(q, v, rho),
            q_grad=np.zeros(n),
            v_grad=self.mass * v,
            qq=np.zeros((n, n)),
            qv=np.zeros((n, n)),
            vv=self.mass * np.eye(n),
            q_rho=np.zeros((n, 0)),
            v_rho=np.zeros((n, 0)),
        )


class DegenerateMassModel(MechanicalModel):
    """Two coordinates sharing one inertia: Lvv is rank one by construction."""

    @property
    def n_q(self):
        return 2

    @property
    def n_rho(self):
        return 0

    def kinetic_energy(self, q, v, rho):
        v = np.asarray(v, dtype=float)
        return 0.5 * (v[0] + v[1]) ** 2

    def potential_energy(self, q, rho):
        return 0.0

    def lagrangian_derivatives(self, q, v, rho):
        v = np.asarray(v, dtype=float)
        s = v[0] + v[1]
        ones = np.ones((2, 2))
        return LagrangianBundle(
            value=0.5 * s * s,
            q_grad=np.zeros(2),
            v_grad=np.array([s, s]),
            qq=np.zeros((2, 2)),
            qv=np.zeros((2, 2)),
            vv=ones,
            q_rho=np.zeros((2, 0)),
            v_rho=np.zeros((2, 0)),
        )


class RedundantConstraintModel(FreeParticle):
    """Free particle with the same linear constraint stated twice."""

    @property
    def n_h(self):
        return 2

    def constraint(self, q, rho):
        q = np.asarray(q, dtype=float)
        return np.array([q[0], q[0]])

    def constraint_jacobian(self, q, rho):
        return np.array([[1.0, 0.0], [1.0, 0.0]])

    def constraint_hessian(self, q, rho):
        return np.zeros((2, 2, 2))


class CorruptedPendulum(PendulumModel):
    """Pendulum whose configuration gradient is deliberately wrong."""

    def lagrangian_derivatives(self, q, v, rho):
        b = super().lagrangian_derivatives(q, v, rho)
        return LagrangianBundle(
            value=b.value,
            q_grad=b.q_grad + 0.05,
            v_grad=b.v_grad,
            qq=b.qq,
            qv=b.qv,
            vv=b.vv,
            q_rho=b.q_rho,
            v_rho=b.v_rho,
        )


@pytest.fixture
def pendulum():
    return PendulumModel(
        mass=1.2, length=0.7, gravity=9.81, damping=0.1, spring_param=0
    )


@pytest.fixture
def chain4():
    return ChainModel(
        link_lengths=[0.4, 0.35, 0.3, 0.25],
        link_masses=[0.5, 0.4, 0.3, 0.2],
        gravity=9.81,
        stiffness_groups=StiffnessGrouping(((0, 2), (1, 3))),
        damping=0.05,
    )


@pytest.fixture
def loop6():
    return regular_closed_loop(
        n_links=6,
        radius=0.355,
        total_mass=0.132,
        stiffness_groups=StiffnessGrouping(((0, 1, 2), (3, 4, 5))),
        gravity=0.0,
        damping=0.02,
    )
