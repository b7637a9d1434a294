"""Extended Kalman filter estimating joint angles and velocities from tendon lengths.

State x = [q; qdot] (2 * n_act), observation z = [l; ldot] (2 * n_motors).
The transition model is constant-velocity; the observation model is
h(x) = [f(q); J_m(q) qdot] with f the joint->tendon map from the tendon module.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .handmodel import HandModel
from .tendon import Calibration, TendonLengths, muscle_jacobian, muscle_jacobian_dot, tendon_lengths


class EstimatorError(Exception):
    pass


@dataclass(frozen=True)
class EkfNoise:
    """Diagonal process/measurement noise (variances), all config-overridable."""
    q_process: float = 1e-8      # rad^2 per step on the position block
    qdot_process: float = 1e-4   # (rad/s)^2 per step on the velocity block
    l_meas: float = 1e-8         # m^2 on tendon lengths
    ldot_meas: float = 1e-6      # (m/s)^2 on tendon velocities


@dataclass(frozen=True)
class EkfState:
    x: np.ndarray        # (2n,) mean [q; qdot]
    P: np.ndarray        # (2n, 2n) covariance
    Q: np.ndarray        # (2n, 2n) process noise
    R: np.ndarray        # (2m, 2m) measurement noise
    dt: float
    exact_h: bool = False  # include the curvature block of H instead of the
                           # block-triangular approximation

    @property
    def n(self):
        return self.x.shape[0] // 2

    @property
    def q(self):
        return self.x[: self.n]

    @property
    def qdot(self):
        return self.x[self.n:]


def ekf_init(q0, dt: float, p0_scale: float = 1e-2, noise: EkfNoise = EkfNoise(),
             n_motors: int = 16, exact_h: bool = False) -> EkfState:
    """Initial filter state: x = [q0; 0], P = p0_scale * I."""
    q0 = np.asarray(q0, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n = q0.shape[0]
    x = np.concatenate([q0, np.zeros(n)])
    P = p0_scale * np.eye(2 * n)
    Q = np.diag(np.concatenate([np.full(n, noise.q_process), np.full(n, noise.qdot_process)]))
    R = np.diag(np.concatenate([np.full(n_motors, noise.l_meas), np.full(n_motors, noise.ldot_meas)]))
    return EkfState(x=x, P=P, Q=Q, R=R, dt=dt, exact_h=exact_h)


def _transition_matrix(n: int, dt: float) -> np.ndarray:
    F = np.eye(2 * n)
    F[:n, n:] = dt * np.eye(n)
    return F


def ekf_predict(s: EkfState) -> EkfState:
    """Constant-velocity prediction: q += qdot*dt; P = F P F' + Q."""
    F = _transition_matrix(s.n, s.dt)
    x = F @ s.x
    P = F @ s.P @ F.T + s.Q
    return replace(s, x=x, P=0.5 * (P + P.T))


def ekf_update(s: EkfState, z: TendonLengths, model: HandModel, cal: Calibration) -> EkfState:
    """Measurement update with z = [l; ldot]; covariance in Joseph form."""
    if z.ldot is None:
        raise EstimatorError("observation needs tendon velocities (ldot)")
    n, m = s.n, z.l.shape[0]
    q, qdot = s.q, s.qdot

    J = muscle_jacobian(model, q)
    h = np.concatenate([tendon_lengths(model, q).l, J @ qdot])
    H = np.zeros((2 * m, 2 * n))
    H[:m, :n] = J
    H[m:, n:] = J
    if s.exact_h:
        H[m:, :n] = muscle_jacobian_dot(model, q, qdot)

    innovation = z.stacked() - h
    S = H @ s.P @ H.T + s.R
    try:
        K = np.linalg.solve(S.T, (s.P @ H.T).T).T
    except np.linalg.LinAlgError as e:
        raise EstimatorError(f"innovation covariance not invertible: {e}") from e
    if not np.all(np.isfinite(K)):
        raise EstimatorError("innovation covariance degenerate (non-finite gain)")

    x = s.x + K @ innovation
    IKH = np.eye(2 * n) - K @ H
    P = IKH @ s.P @ IKH.T + K @ s.R @ K.T
    return replace(s, x=x, P=0.5 * (P + P.T))


def ekf_step(s: EkfState, z: TendonLengths, model: HandModel, cal: Calibration) -> EkfState:
    """Convenience: predict then update with one observation."""
    return ekf_update(ekf_predict(s), z, model, cal)
