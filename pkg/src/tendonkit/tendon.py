"""Joint <-> tendon <-> motor mapping layer.

Every motor reports one measured tendon length (its primary attachment), so the
observable tendon vector has one entry per motor.  Route terms are analytic:
a LINEAR term contributes sign * moment_arm * q, a ROLLING term contributes
sign * 2 * rho_eff * sin(q / 2) (chord length of the rolled contact arc), which
keeps the Jacobian closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .handmodel import LINEAR, HandModel
from .kinematics import expand_coupled


@dataclass
class TendonLengths:
    l: np.ndarray                 # (n_motors,) m, one per motor
    ldot: np.ndarray | None = None  # (n_motors,) m/s

    def stacked(self):
        """[l; ldot] observation vector; ldot must be present."""
        if self.ldot is None:
            raise ValueError("ldot missing; cannot stack observation")
        return np.concatenate([self.l, self.ldot])


@dataclass(frozen=True)
class Calibration:
    theta_cal: np.ndarray  # (n_motors,) rad, motor angles at the jig pose
    q_cal: np.ndarray      # (n_act,) rad, the known jig pose
    l_cal: np.ndarray      # (n_motors,) m, f(q_cal)


class _RouteTables:
    """Flattened route-term tables for the primary tendon of each motor."""

    def __init__(self, model: HandModel):
        self.model = model
        # per (motor, term): actuated column, combined coefficient data
        rows, cols, signs, coefs, ratios, kinds = [], [], [], [], [], []
        for k, motor in enumerate(model.motors):
            route = model.tendon_index[motor.attachments[0].tendon]
            for term in route.terms:
                jname = term.joint
                if jname in model.driven_map:
                    driver, ratio = model.driven_map[jname]
                    col = model.actuated_index[driver]
                else:
                    col, ratio = model.actuated_index[jname], 1.0
                rows.append(k)
                cols.append(col)
                signs.append(float(term.sign))
                coefs.append(term.coef)
                ratios.append(ratio)
                kinds.append(0 if term.kind == LINEAR else 1)
        self.rows = np.array(rows, dtype=int)
        self.cols = np.array(cols, dtype=int)
        self.signs = np.array(signs)
        self.coefs = np.array(coefs)
        self.ratios = np.array(ratios)
        self.rolling = np.array(kinds, dtype=bool)
        self.rest = np.array([model.tendon_index[m.attachments[0].tendon].rest_length
                              for m in model.motors])
        self.spool = np.array([m.attachments[0].spool_radius for m in model.motors])
        self.winding = np.array([float(m.attachments[0].winding) for m in model.motors])

    def lengths(self, q_act):
        q = self.ratios * np.asarray(q_act, dtype=float)[self.cols]
        term = np.where(self.rolling,
                        2.0 * self.coefs * np.sin(0.5 * q),
                        self.coefs * q)
        out = self.rest.copy()
        np.add.at(out, self.rows, self.signs * term)
        return out

    def jacobian(self, q_act):
        q = self.ratios * np.asarray(q_act, dtype=float)[self.cols]
        dterm = np.where(self.rolling,
                         self.coefs * np.cos(0.5 * q),
                         self.coefs)
        J = np.zeros((self.model.n_motors, self.model.n_actuated))
        np.add.at(J, (self.rows, self.cols), self.signs * self.ratios * dterm)
        return J

    def jacobian_dot(self, q_act, qdot_act):
        """d/dq [J(q) qdot], the curvature block of the exact EKF linearization."""
        q = self.ratios * np.asarray(q_act, dtype=float)[self.cols]
        d2 = np.where(self.rolling,
                      -0.5 * self.coefs * np.sin(0.5 * q),
                      0.0)
        qd = np.asarray(qdot_act, dtype=float)[self.cols]
        D = np.zeros((self.model.n_motors, self.model.n_actuated))
        np.add.at(D, (self.rows, self.cols), self.signs * self.ratios ** 2 * d2 * qd)
        return D


_tables_cache = {}


def _tables(model: HandModel) -> _RouteTables:
    entry = _tables_cache.get(id(model))
    if entry is None or entry[0] is not model:
        entry = (model, _RouteTables(model))
        _tables_cache[id(model)] = entry
    return entry[1]


def route_length(model: HandModel, route, q_act) -> float:
    """Length of one named route (any attachment, not just primaries)."""
    q_full = expand_coupled(np.asarray(q_act, dtype=float), model)
    total = route.rest_length
    for term in route.terms:
        q = q_full[model.joint_index[term.joint]]
        if term.kind == LINEAR:
            total += term.sign * term.coef * q
        else:
            total += term.sign * 2.0 * term.coef * np.sin(0.5 * q)
    return float(total)


def tendon_lengths(model: HandModel, q_act) -> TendonLengths:
    """Measured tendon lengths l = f(q), one per motor (primary attachment)."""
    return TendonLengths(l=_tables(model).lengths(q_act))


def muscle_jacobian(model: HandModel, q_act) -> np.ndarray:
    """J_m = df/dq, (n_motors, n_act); coupling ratios folded into driver columns."""
    return _tables(model).jacobian(q_act)


def muscle_jacobian_dot(model: HandModel, q_act, qdot_act) -> np.ndarray:
    """d/dq [J_m(q) qdot] for the exact observation linearization."""
    return _tables(model).jacobian_dot(q_act, qdot_act)


def tendon_velocities(model: HandModel, q_act, qdot_act) -> np.ndarray:
    """ldot = J_m(q) qdot."""
    return muscle_jacobian(model, q_act) @ np.asarray(qdot_act, dtype=float)


def calibrate(model: HandModel, theta_observed, q_known) -> Calibration:
    """Fix the motor-angle <-> tendon-length relation at a known jig pose."""
    theta = np.array(theta_observed, dtype=float)
    q = np.array(q_known, dtype=float)
    if theta.shape != (model.n_motors,):
        raise ValueError(f"expected {model.n_motors} motor angles, got {theta.shape}")
    return Calibration(theta_cal=theta, q_cal=q, l_cal=tendon_lengths(model, q).l)


def joints_to_motor_angles(model: HandModel, cal: Calibration, q_des) -> np.ndarray:
    """Desired joint angles -> motor angles via tendon length over spool radius."""
    t = _tables(model)
    dl = t.lengths(q_des) - cal.l_cal
    return cal.theta_cal + t.winding * dl / t.spool


def motor_angles_to_tendon_lengths(model: HandModel, cal: Calibration, theta,
                                   theta_dot=None) -> TendonLengths:
    """Motor angles -> tendon lengths (and velocities when theta_dot is given)."""
    t = _tables(model)
    theta = np.asarray(theta, dtype=float)
    l = cal.l_cal + t.winding * t.spool * (theta - cal.theta_cal)
    ldot = None
    if theta_dot is not None:
        ldot = t.winding * t.spool * np.asarray(theta_dot, dtype=float)
    return TendonLengths(l=l, ldot=ldot)


class SmoothedDifferentiator:
    """ldot from finite differences of l, exponentially smoothed.

    Used when the motor bus reports positions only.  First call returns zeros.
    """

    def __init__(self, dt: float, alpha: float = 0.5):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        self.dt = dt
        self.alpha = alpha
        self._prev = None
        self._smoothed = None

    def update(self, l: np.ndarray) -> np.ndarray:
        l = np.asarray(l, dtype=float)
        if self._prev is None:
            out = np.zeros_like(l)
        else:
            raw = (l - self._prev) / self.dt
            if self._smoothed is None:
                self._smoothed = raw  # seed the filter with the first difference
            else:
                self._smoothed = self.alpha * raw + (1.0 - self.alpha) * self._smoothed
            out = self._smoothed.copy()
        self._prev = l.copy()
        return out


def antagonistic_consistency_check(model: HandModel, n_points: int = 101) -> float:
    """Max deviation (m) of two-tendon motors from the spool-ratio relation.

    For each two-attachment motor, sweeps every actuated joint its primary
    tendon crosses over the joint's full range and compares the secondary
    tendon's actual length change against the one predicted by scaling the
    primary's change with the spool-radius ratio (and opposite winding).
    Single-attachment (distal) motors are excluded by construction.
    """
    worst = 0.0
    for motor in model.motors:
        if len(motor.attachments) != 2:
            continue
        primary, secondary = motor.attachments
        r_primary = model.tendon_index[primary.tendon]
        r_secondary = model.tendon_index[secondary.tendon]
        ratio = secondary.spool_radius / primary.spool_radius
        rel_wind = secondary.winding * primary.winding  # -1 for antagonistic pairs
        swept_cols = set()
        for term in r_primary.terms:
            name = term.joint
            if name in model.driven_map:
                name = model.driven_map[name][0]
            swept_cols.add(model.actuated_index[name])
        q = np.zeros(model.n_actuated)
        l0_p = route_length(model, r_primary, q)
        l0_s = route_length(model, r_secondary, q)
        for col in swept_cols:
            joint = next(j for j in model.joints if model.actuated_index.get(j.name) == col)
            for val in np.linspace(joint.q_min, joint.q_max, n_points):
                qs = q.copy()
                qs[col] = val
                dl_p = route_length(model, r_primary, qs) - l0_p
                actual = route_length(model, r_secondary, qs) - l0_s
                predicted = rel_wind * ratio * dl_p
                worst = max(worst, abs(actual - predicted))
    return worst
