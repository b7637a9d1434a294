"""Forward kinematics of the rolling-contact finger chains.

Quaternion convention: (w, x, y, z), unit norm, right-handed, active rotations.
All functions accept leading batch dimensions and use only elementwise numpy
ops, so batched evaluation is bit-identical to per-sample evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .handmodel import HINGE, ROLLING, HandModel

# direction of the inter-hinge offset of a rolling joint, in the joint frame
_OFFSET_DIR = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_identity(shape=()):
    q = np.zeros(shape + (4,))
    q[..., 0] = 1.0
    return q


def quat_mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q):
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_normalize(q):
    n = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    return q / n


def quat_rotate(q, v):
    """Rotate vector(s) v by quaternion(s) q (active rotation)."""
    w = q[..., 0:1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    uuv = np.cross(u, uv)
    return v + 2.0 * (w * uv + uuv)


def quat_from_axis_angle(axis, angle):
    """axis: (..., 3) unit vector(s); angle: (...) radians."""
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    s = np.sin(half)
    axis = np.broadcast_to(np.asarray(axis, dtype=float), angle.shape + (3,))
    return np.concatenate([np.cos(half)[..., None], axis * s[..., None]], axis=-1)


def quat_to_rotvec(q):
    """Rotation vector (axis * angle) of q, shortest arc; continuous at 0."""
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    xyz = q[..., 1:]
    # force the shortest-arc branch (w >= 0)
    flip = np.where(w < 0.0, -1.0, 1.0)
    w = w * flip
    xyz = xyz * flip[..., None]
    s = np.sqrt(np.sum(xyz * xyz, axis=-1))
    angle = 2.0 * np.arctan2(s, w)
    # sin(angle/2)/angle -> 1/2 as angle -> 0
    small = s < 1e-12
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return xyz * scale[..., None]


def quat_rotation_angle(q):
    """Net rotation angle of q in [0, pi]."""
    return np.sqrt(np.sum(quat_to_rotvec(q) ** 2, axis=-1))


def quat_from_rpy(roll, pitch, yaw):
    """XYZ Euler angles (applied roll, then pitch, then yaw) to quaternion."""
    qx = quat_from_axis_angle(np.array([1.0, 0, 0]), roll)
    qy = quat_from_axis_angle(np.array([0, 1.0, 0]), pitch)
    qz = quat_from_axis_angle(np.array([0, 0, 1.0]), yaw)
    return quat_mul(qz, quat_mul(qy, qx))


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    translation: np.ndarray  # (3,)
    rotation: np.ndarray     # (4,) quaternion (w, x, y, z)

    @staticmethod
    def identity():
        return RigidTransform(np.zeros(3), quat_identity())

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.translation + quat_rotate(self.rotation, other.translation),
            quat_mul(self.rotation, other.rotation),
        )

    def apply(self, point):
        return self.translation + quat_rotate(self.rotation, np.asarray(point, dtype=float))

    def rotation_angle(self) -> float:
        return float(quat_rotation_angle(self.rotation))


def rolling_joint_transform(q_j, joint) -> RigidTransform:
    """Motion of a rolling contact joint relative to its rest pose.

    Modeled as two virtual hinges, each rotating q_j/2 about the joint axis,
    separated by the inter-hinge offset along the joint's +z.  Identity at
    q_j = 0; the net rotation angle equals |q_j|.
    """
    if joint.kind != ROLLING:
        raise ValueError(f"joint {joint.name!r} is not a rolling joint")
    axis = np.asarray(joint.axis, dtype=float)
    d = joint.hinge_offset * _OFFSET_DIR
    half = quat_from_axis_angle(axis, q_j / 2.0)
    full = quat_from_axis_angle(axis, q_j)
    translation = quat_rotate(half, d) - quat_rotate(full, d)
    return RigidTransform(translation, full)


# ---------------------------------------------------------------------------
# coupled-joint expansion
# ---------------------------------------------------------------------------

def _expansion_arrays(model: HandModel):
    """Per full joint: (actuated source column, scale factor)."""
    src = np.zeros(model.n_joints, dtype=int)
    scale = np.ones(model.n_joints)
    for i, j in enumerate(model.joints):
        if j.name in model.driven_map:
            driver, ratio = model.driven_map[j.name]
            src[i] = model.actuated_index[driver]
            scale[i] = ratio
        else:
            src[i] = model.actuated_index[j.name]
    return src, scale


def expand_coupled(q_act, model: HandModel):
    """Expand actuated joint angles (..., n_act) to the full joint vector (..., n_joints)."""
    q_act = np.asarray(q_act, dtype=float)
    if q_act.shape[-1] != model.n_actuated:
        raise ValueError(f"expected {model.n_actuated} actuated angles, got {q_act.shape[-1]}")
    src, scale = _kino(model).expansion
    return q_act[..., src] * scale


# ---------------------------------------------------------------------------
# kinematic chains
# ---------------------------------------------------------------------------

# flat op encoding for the compiled kernel
_OP_FIXED = 0
_OP_HINGE = 1
_OP_ROLLING = 2


class _Kinematics:
    """Precomputed chain programs for one HandModel (immutable after build)."""

    def __init__(self, model: HandModel):
        self.model = model
        self.expansion = _expansion_arrays(model)
        joints_by_name = {j.name: j for j in model.joints}
        links_by_name = model.link_index
        self.chains = []
        for tip in model.fingertips:
            ops = []
            # walk tip -> palm, then reverse
            rev = []
            link = links_by_name[tip.link]
            while True:
                rev.append(("link", link))
                if link.parent_joint is None:
                    break
                joint = joints_by_name[link.parent_joint]
                rev.append(("joint", joint))
                link = links_by_name[joint.parent_link]
            for kind, item in reversed(rev):
                if kind == "link":
                    rot = None
                    if any(item.rpy):
                        rot = quat_from_rpy(*item.rpy)
                    ops.append(("fixed", np.asarray(item.offset, dtype=float), rot))
                else:
                    j = item
                    idx = model.joint_index[j.name]
                    axis = np.asarray(j.axis, dtype=float)
                    pivot = np.asarray(j.pivot, dtype=float)
                    if j.kind == HINGE:
                        ops.append(("hinge", pivot, axis, idx))
                    else:
                        ops.append(("rolling", pivot, axis, idx, j.hinge_offset * _OFFSET_DIR))
            ops.append(("fixed", np.asarray(tip.offset, dtype=float), None))
            self.chains.append(ops)
        self._build_tables()

    def _build_tables(self):
        """Flatten the chain programs into arrays for the compiled kernel."""
        types, joints, params, starts = [], [], [], [0]
        for ops in self.chains:
            for op in ops:
                row = np.zeros(11)
                if op[0] == "fixed":
                    _, offset, rot = op
                    row[0:3] = offset
                    row[7:11] = rot if rot is not None else (1.0, 0.0, 0.0, 0.0)
                    types.append(_OP_FIXED)
                    joints.append(0)
                elif op[0] == "hinge":
                    _, pivot, axis, idx = op
                    row[0:3] = pivot
                    row[3:6] = axis
                    types.append(_OP_HINGE)
                    joints.append(idx)
                else:
                    _, pivot, axis, idx, d = op
                    row[0:3] = pivot
                    row[3:6] = axis
                    row[6] = d[2]
                    types.append(_OP_ROLLING)
                    joints.append(idx)
                params.append(row)
            starts.append(len(types))
        self._op_types = np.array(types, dtype=np.int64)
        self._op_joints = np.array(joints, dtype=np.int64)
        self._op_params = np.array(params)
        self._starts = np.array(starts, dtype=np.int64)

    def tip_poses(self, q_full):
        """q_full: (..., n_joints) -> positions (..., 5, 3), quaternions (..., 5, 4).

        Runs the compiled per-env kernel: scalar math, so batched evaluation is
        bit-identical to evaluating each sample alone.
        """
        q_full = np.ascontiguousarray(q_full, dtype=float)
        batch = q_full.shape[:-1]
        flat = q_full.reshape(-1, q_full.shape[-1])
        n_chains = len(self.chains)
        pos = np.empty((flat.shape[0], n_chains, 3))
        quat = np.empty((flat.shape[0], n_chains, 4))
        _fk_kernel(self._op_types, self._op_joints, self._op_params, self._starts,
                   flat, pos, quat)
        return pos.reshape(batch + (n_chains, 3)), quat.reshape(batch + (n_chains, 4))

    def tip_poses_reference(self, q_full):
        """Pure-numpy chain evaluation; the oracle the kernel is tested against."""
        batch = q_full.shape[:-1]
        pos_out = np.zeros(batch + (len(self.chains), 3))
        quat_out = np.zeros(batch + (len(self.chains), 4))
        for c, ops in enumerate(self.chains):
            pos = np.zeros(batch + (3,))
            quat = quat_identity(batch)
            for op in ops:
                if op[0] == "fixed":
                    _, offset, rot = op
                    pos = pos + quat_rotate(quat, offset)
                    if rot is not None:
                        quat = quat_mul(quat, np.broadcast_to(rot, quat.shape))
                elif op[0] == "hinge":
                    _, pivot, axis, idx = op
                    pos = pos + quat_rotate(quat, pivot)
                    quat = quat_mul(quat, quat_from_axis_angle(axis, q_full[..., idx]))
                else:
                    _, pivot, axis, idx, d = op
                    half = quat_from_axis_angle(axis, q_full[..., idx] / 2.0)
                    pos = pos + quat_rotate(quat, pivot)
                    quat = quat_mul(quat, half)
                    pos = pos + quat_rotate(quat, d)
                    quat = quat_mul(quat, half)
            pos_out[..., c, :] = pos
            quat_out[..., c, :] = quat
        return pos_out, quat_out


try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is a hard dependency, guard for safety
    def _njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


@_njit(cache=True, inline="always")
def _qmul(aw, ax, ay, az, bw, bx, by, bz):
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@_njit(cache=True, inline="always")
def _qrot(qw, qx, qy, qz, vx, vy, vz):
    # v + 2*(w*(u x v) + u x (u x v)) with u the quaternion vector part
    cx = qy * vz - qz * vy
    cy = qz * vx - qx * vz
    cz = qx * vy - qy * vx
    dx = qy * cz - qz * cy
    dy = qz * cx - qx * cz
    dz = qx * cy - qy * cx
    return (vx + 2.0 * (qw * cx + dx),
            vy + 2.0 * (qw * cy + dy),
            vz + 2.0 * (qw * cz + dz))


@_njit(cache=True)
def _fk_kernel(op_types, op_joints, op_params, starts, q_full, out_pos, out_quat):
    n_env = q_full.shape[0]
    n_chains = starts.shape[0] - 1
    for b in range(n_env):
        for c in range(n_chains):
            px = 0.0; py = 0.0; pz = 0.0
            qw = 1.0; qx = 0.0; qy = 0.0; qz = 0.0
            for k in range(starts[c], starts[c + 1]):
                t = op_types[k]
                p = op_params[k]
                vx, vy, vz = p[0], p[1], p[2]
                if vx != 0.0 or vy != 0.0 or vz != 0.0:
                    tx, ty, tz = _qrot(qw, qx, qy, qz, vx, vy, vz)
                    px += tx; py += ty; pz += tz
                if t == 0:
                    rw, rx, ry, rz = p[7], p[8], p[9], p[10]
                    if rw != 1.0 or rx != 0.0 or ry != 0.0 or rz != 0.0:
                        qw, qx, qy, qz = _qmul(qw, qx, qy, qz, rw, rx, ry, rz)
                elif t == 1:
                    half = 0.5 * q_full[b, op_joints[k]]
                    s = np.sin(half)
                    qw, qx, qy, qz = _qmul(qw, qx, qy, qz,
                                           np.cos(half), p[3] * s, p[4] * s, p[5] * s)
                else:
                    # rolling: rotate q/2, advance d along local +z, rotate q/2
                    quarter = 0.25 * q_full[b, op_joints[k]]
                    s = np.sin(quarter)
                    hw = np.cos(quarter)
                    hx = p[3] * s; hy = p[4] * s; hz = p[5] * s
                    qw, qx, qy, qz = _qmul(qw, qx, qy, qz, hw, hx, hy, hz)
                    tx, ty, tz = _qrot(qw, qx, qy, qz, 0.0, 0.0, p[6])
                    px += tx; py += ty; pz += tz
                    qw, qx, qy, qz = _qmul(qw, qx, qy, qz, hw, hx, hy, hz)
            out_pos[b, c, 0] = px
            out_pos[b, c, 1] = py
            out_pos[b, c, 2] = pz
            out_quat[b, c, 0] = qw
            out_quat[b, c, 1] = qx
            out_quat[b, c, 2] = qy
            out_quat[b, c, 3] = qz


_kino_cache = {}


def _kino(model: HandModel) -> _Kinematics:
    entry = _kino_cache.get(id(model))
    if entry is None or entry[0] is not model:
        entry = (model, _Kinematics(model))
        _kino_cache[id(model)] = entry
    return entry[1]


# ---------------------------------------------------------------------------
# public FK operations
# ---------------------------------------------------------------------------

@dataclass
class FingertipSet:
    """Poses (and optionally velocities) of the 5 fingertips.

    Order is fixed: thumb, index, middle, ring, pinky.
    """
    positions: np.ndarray    # (..., 5, 3) m
    quaternions: np.ndarray  # (..., 5, 4) (w, x, y, z)
    lin_vel: np.ndarray | None = None  # (..., 5, 3) m/s
    ang_vel: np.ndarray | None = None  # (..., 5, 3) rad/s


def forward_kinematics(model: HandModel, q_act) -> FingertipSet:
    """Fingertip poses for actuated joint angles q_act (..., n_act)."""
    q_full = expand_coupled(q_act, model)
    pos, quat = _kino(model).tip_poses(q_full)
    return FingertipSet(pos, quat)


def fingertip_velocities(model: HandModel, q_act, qdot_act, eps: float = 1e-6) -> FingertipSet:
    """Fingertip linear/angular velocities by central differencing along qdot.

    FK is evaluated at q +/- eps*qdot; the directional difference equals the
    Jacobian contracted with qdot to O(eps^2).
    """
    q_act = np.asarray(q_act, dtype=float)
    qdot_act = np.asarray(qdot_act, dtype=float)
    kino = _kino(model)
    plus = expand_coupled(q_act + eps * qdot_act, model)
    minus = expand_coupled(q_act - eps * qdot_act, model)
    p_plus, r_plus = kino.tip_poses(plus)
    p_minus, r_minus = kino.tip_poses(minus)
    lin = (p_plus - p_minus) / (2.0 * eps)
    rel = quat_mul(r_plus, quat_conjugate(r_minus))
    ang = quat_to_rotvec(rel) / (2.0 * eps)
    pos, quat = kino.tip_poses(expand_coupled(q_act, model))
    return FingertipSet(pos, quat, lin_vel=lin, ang_vel=ang)
