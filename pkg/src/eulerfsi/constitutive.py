"""Pointwise St Venant-Kirchhoff algebra in Eulerian variables.

All quantities are computed from the Eulerian displacement gradient
``G[i, j] = d(d_j)/d(x_i)`` (derivative index first), from which the
deformation gradient is ``F = (I - G)^{-T}``.

Lamé coefficients follow the density-scaled convention: ``lambda_s`` and
``mu_s`` are in m^2/s^2 and the Cauchy stress is ``sigma = rho * S`` where
``S`` is what :func:`stress_direct` and :func:`stress_from_ab` return.
Textbook moduli in Pa are recovered by multiplying with the reference
density.

Every function accepts a single 2x2 matrix or a stack ``(..., 2, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DET_FLOOR = 1e-8


class SingularDeformationError(ValueError):
    """det(I - grad d) fell to or below the singularity floor."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


@dataclass(frozen=True)
class MaterialParams:
    """Material data for the coupled problem.

    ``lambda_s`` and ``mu_s`` are density-scaled (m^2/s^2); ``mu_f`` is the
    dynamic viscosity in kg/(m s).
    """

    lambda_s: float
    mu_s: float
    rho0_s: float
    mu_f: float
    rho0_f: float
    epsilon_stab: float = 1e-6
    gravity: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.mu_s > 0:
            raise ValueError("mu_s must be positive")
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be non-negative")
        if not (self.rho0_s > 0 and self.rho0_f > 0):
            raise ValueError("densities must be positive")
        if self.mu_f < 0:
            raise ValueError("mu_f must be non-negative")
        if not self.epsilon_stab > 0:
            raise ValueError("epsilon_stab must be positive")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))


def scaled_lame(mu, sigma, rho_s):
    """Density-scaled (lambda, mu) from a Pa-valued shear modulus.

    Young's modulus is formed as ``E = 2 mu (1 + sigma) / rho_s`` and then
    ``lambda = E sigma / ((1 + sigma)(1 - 2 sigma))``. The returned ``mu`` is
    ``mu / rho_s`` so that both coefficients share the same scaling.
    """
    E = 2.0 * mu * (1.0 + sigma) / rho_s
    lam = E * sigma / ((1.0 + sigma) * (1.0 - 2.0 * sigma))
    return lam, mu / rho_s


def _eye(shape):
    out = np.zeros(shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    return out


def _det(M):
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def _tr(M):
    return M[..., 0, 0] + M[..., 1, 1]


def _T(M):
    return np.swapaxes(M, -1, -2)


@dataclass(frozen=True)
class Kinematics:
    G: np.ndarray
    F: np.ndarray
    J: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    B: np.ndarray
    C_tensor: np.ndarray
    E_green: np.ndarray
    gamma_closed_form: np.ndarray = field(repr=False, default=None)


def kinematics_from_grad(G, det_floor=DET_FLOOR):
    """Kinematic quantities from the displacement gradient.

    ``gamma = tr(F F^T)`` is computed twice: as the trace of ``B`` and by
    the closed form ``(2 - 2 div d + |grad d|^2) J^2``. Both are stored;
    they agree to round-off.

    Raises
    ------
    SingularDeformationError
        If ``det(I - G) <= det_floor`` anywhere in the stack.
    """
    G = np.asarray(G, dtype=float)
    shape = G.shape[:-2]
    I = _eye(shape)
    A = I - G
    detA = _det(A)
    bad = ~(detA > det_floor)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad)).ravel()
        raise SingularDeformationError(
            f"det(I - grad d) <= {det_floor:g} at {idx.size} point(s)", idx)
    J = 1.0 / detA
    # (I - G)^{-1} by the 2x2 adjugate, then transposed.
    Ainv = np.empty_like(A)
    Ainv[..., 0, 0] = A[..., 1, 1]
    Ainv[..., 1, 1] = A[..., 0, 0]
    Ainv[..., 0, 1] = -A[..., 0, 1]
    Ainv[..., 1, 0] = -A[..., 1, 0]
    Ainv *= J[..., None, None]
    F = _T(Ainv)
    B = F @ _T(F)
    gamma = _tr(B)
    gamma_cf = (2.0 - 2.0 * _tr(G) + np.sum(G * G, axis=(-1, -2))) * J**2
    C = G + _T(G) - G @ _T(G)
    E = 0.5 * (_T(F) @ F - I)
    return Kinematics(G=G, F=F, J=J, gamma=gamma, gamma_tilde=gamma / J**2,
                      B=B, C_tensor=C, E_green=E, gamma_closed_form=gamma_cf)


@dataclass(frozen=True)
class Coefficients:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def coefficients(kin, mat):
    """Scalar coefficients a, b, c with ``S = a I + 2 b C``.

    Computed as ``J^2`` times the closed-form expressions in ``gamma`` and
    ``gamma_tilde``; without the ``J^2`` factor the identity
    ``S = a I + 2 b C`` does not hold away from ``J = 1``. ``c`` is the part
    of ``a`` beyond linear elasticity, ``c = a - lambda_s tr(G)``.
    """
    lam, mu = mat.lambda_s, mat.mu_s
    g, gt, J2 = kin.gamma, kin.gamma_tilde, kin.J**2
    a = J2 * (lam * (0.5 * g - 1.0) * (gt - 1.0) + mu * (g - J2 - 1.0) * gt)
    # (lam/2 + mu)(g - 1)/2 - lam/4, grouped so that b(0) = mu/2 exactly
    b = J2 * (0.5 * mu * (g - 1.0) + 0.25 * lam * (g - 2.0))
    c = a - lam * _tr(kin.G)
    return Coefficients(a=a, b=b, c=c)


def psi(kin, mat):
    """Stored energy per unit reference mass, (lambda/2) tr(E)^2 + mu tr(E^2)."""
    E = kin.E_green
    return 0.5 * mat.lambda_s * _tr(E) ** 2 + mat.mu_s * np.sum(E * E, axis=(-1, -2))


def stress_direct(kin, mat):
    """``F (lambda tr(E) I + 2 mu E) F^T``, the Cauchy stress divided by rho."""
    E = kin.E_green
    inner = mat.lambda_s * _tr(E)[..., None, None] * _eye(E.shape[:-2]) + 2.0 * mat.mu_s * E
    S = kin.F @ inner @ _T(kin.F)
    return 0.5 * (S + _T(S))


def stress_from_ab(kin, coef):
    """``a I + 2 b (Dd - grad d grad^T d)``; equals :func:`stress_direct`."""
    a = np.asarray(coef.a)[..., None, None]
    b = np.asarray(coef.b)[..., None, None]
    return a * _eye(kin.C_tensor.shape[:-2]) + 2.0 * b * kin.C_tensor
