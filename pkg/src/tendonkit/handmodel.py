"""Static description of a tendon-driven hand: joints, couplings, tendon routes, motors.

The model is loaded from a versioned YAML document (see ``data/proto0.yaml`` for
the canonical schema) and is immutable after load, so it can be shared freely
across threads.  All lengths are meters, all angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import yaml

SCHEMA_VERSION = 1

ROLLING = "rolling"
HINGE = "hinge"
LINEAR = "linear"

FINGER_ORDER = ("thumb", "index", "middle", "ring", "pinky")

_AXIS_TOL = 1e-9


class HandModelError(Exception):
    """Base error for hand-model loading and validation."""


class HandModelParseError(HandModelError):
    """The config text could not be parsed; carries line info when available."""


class HandModelValidationError(HandModelError):
    """One or more model invariants are violated."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid hand model:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str                      # "rolling" or "hinge"
    parent_link: str
    pivot: tuple                   # offset from parent link frame to the joint pivot (m)
    axis: tuple                    # rotation axis, unit vector in the parent link frame
    q_min: float
    q_max: float
    radius: float | None = None        # rolling only: contact surface radius (m)
    hinge_offset: float | None = None  # rolling only: distance between the two virtual hinges (m)


@dataclass(frozen=True)
class CouplingSpec:
    driver: str
    driven: str
    ratio: float = 1.0


@dataclass(frozen=True)
class RouteTerm:
    joint: str
    kind: str      # "linear": coef is the moment arm (m/rad); "rolling": coef is the effective radius (m)
    coef: float
    sign: int      # +1 flexor, -1 extensor


@dataclass(frozen=True)
class TendonRoute:
    name: str
    rest_length: float
    terms: tuple  # RouteTerm, proximal to distal


@dataclass(frozen=True)
class MotorAttachment:
    tendon: str
    spool_radius: float
    winding: int  # +1 or -1


@dataclass(frozen=True)
class MotorSpec:
    name: str
    attachments: tuple  # 1 or 2 MotorAttachment; the first is the primary (measured) tendon


@dataclass(frozen=True)
class LinkSpec:
    name: str
    parent_joint: str | None      # None: link is mounted on the palm (root)
    offset: tuple                 # translation from the parent joint's moving frame (m)
    rpy: tuple = (0.0, 0.0, 0.0)  # fixed orientation of the link frame (XYZ Euler, rad)


@dataclass(frozen=True)
class FingertipSpec:
    finger: str
    link: str
    offset: tuple  # fingertip point in the link frame (m)


@dataclass(frozen=True)
class HandModel:
    name: str
    version: int
    joints: tuple
    couplings: tuple
    tendons: tuple
    motors: tuple
    links: tuple
    fingertips: tuple
    checks: dict = field(default_factory=dict)

    # -- derived lookups (model is frozen; caches are safe) --

    @cached_property
    def joint_index(self):
        return {j.name: i for i, j in enumerate(self.joints)}

    @cached_property
    def link_index(self):
        return {l.name: l for l in self.links}

    @cached_property
    def tendon_index(self):
        return {t.name: t for t in self.tendons}

    @cached_property
    def driven_map(self):
        """driven joint name -> (driver joint name, ratio)."""
        return {c.driven: (c.driver, c.ratio) for c in self.couplings}

    @cached_property
    def actuated_joints(self):
        """Actuated joint names in model order (joints not driven by a coupling)."""
        driven = set(self.driven_map)
        return tuple(j.name for j in self.joints if j.name not in driven)

    @cached_property
    def actuated_index(self):
        return {name: i for i, name in enumerate(self.actuated_joints)}

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_actuated(self):
        return len(self.actuated_joints)

    @property
    def n_motors(self):
        return len(self.motors)

    @cached_property
    def joint_depth(self):
        """joint name -> number of joints between it and the palm (itself included)."""
        depth = {}
        for j in self.joints:
            d, link = 1, self.link_index.get(j.parent_link)
            while link is not None and link.parent_joint is not None:
                d += 1
                parent = next((x for x in self.joints if x.name == link.parent_joint), None)
                link = self.link_index.get(parent.parent_link) if parent else None
            depth[j.name] = d
        return depth


def _vec3(v, what):
    if not (isinstance(v, (list, tuple)) and len(v) == 3):
        raise HandModelParseError(f"{what}: expected a 3-vector, got {v!r}")
    return tuple(float(x) for x in v)


def _parse(doc) -> HandModel:
    if not isinstance(doc, dict):
        raise HandModelParseError("top level must be a mapping")
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise HandModelParseError(f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")

    try:
        links = tuple(
            LinkSpec(
                name=str(l["name"]),
                parent_joint=l.get("parent_joint"),
                offset=_vec3(l["offset"], f"link {l.get('name')}: offset"),
                rpy=_vec3(l.get("rpy", [0, 0, 0]), f"link {l.get('name')}: rpy"),
            )
            for l in doc.get("links", [])
        )
        joints = []
        for j in doc.get("joints", []):
            kind = j.get("kind")
            if kind not in (ROLLING, HINGE):
                raise HandModelParseError(f"joint {j.get('name')}: unknown kind {kind!r}")
            lo, hi = j["range"]
            joints.append(JointSpec(
                name=str(j["name"]),
                kind=kind,
                parent_link=str(j["parent_link"]),
                pivot=_vec3(j.get("pivot", [0, 0, 0]), f"joint {j.get('name')}: pivot"),
                axis=_vec3(j.get("axis", [1, 0, 0]), f"joint {j.get('name')}: axis"),
                q_min=float(lo),
                q_max=float(hi),
                radius=float(j["radius"]) if kind == ROLLING else None,
                hinge_offset=float(j["hinge_offset"]) if kind == ROLLING else None,
            ))
        couplings = tuple(
            CouplingSpec(driver=str(c["driver"]), driven=str(c["driven"]), ratio=float(c.get("ratio", 1.0)))
            for c in doc.get("couplings", [])
        )
        tendons = tuple(
            TendonRoute(
                name=str(t["name"]),
                rest_length=float(t["rest_length"]),
                terms=tuple(
                    RouteTerm(
                        joint=str(term["joint"]),
                        kind=str(term["kind"]),
                        coef=float(term["moment_arm"] if term["kind"] == LINEAR else term["radius"]),
                        sign=int(term["sign"]),
                    )
                    for term in t["terms"]
                ),
            )
            for t in doc.get("tendons", [])
        )
        motors = tuple(
            MotorSpec(
                name=str(m["name"]),
                attachments=tuple(
                    MotorAttachment(
                        tendon=str(a["tendon"]),
                        spool_radius=float(a["spool_radius"]),
                        winding=int(a["winding"]),
                    )
                    for a in m["attachments"]
                ),
            )
            for m in doc.get("motors", [])
        )
        fingertips = tuple(
            FingertipSpec(finger=str(f["finger"]), link=str(f["link"]),
                          offset=_vec3(f["offset"], f"fingertip {f.get('finger')}: offset"))
            for f in doc.get("fingertips", [])
        )
    except HandModelParseError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise HandModelParseError(f"malformed hand config: {e!r}") from e

    return HandModel(
        name=str(doc.get("name", "hand")),
        version=version,
        joints=tuple(joints),
        couplings=couplings,
        tendons=tendons,
        motors=motors,
        links=links,
        fingertips=fingertips,
        checks=dict(doc.get("checks", {})),
    )


def load_hand_model(config_text: str) -> HandModel:
    """Parse and validate a hand config document.

    Raises HandModelParseError (with line info when the YAML parser provides it)
    or HandModelValidationError naming every violated invariant.
    """
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise HandModelParseError(f"config parse error{loc}: {e}") from e
    model = _parse(doc)
    violations = validate_hand_model(model)
    if violations:
        raise HandModelValidationError(violations)
    return model


def validate_hand_model(model: HandModel) -> list:
    """Return every violated invariant (empty list = valid)."""
    v = []
    joint_names = [j.name for j in model.joints]
    link_names = [l.name for l in model.links]
    tendon_names = [t.name for t in model.tendons]

    for label, names in (("joint", joint_names), ("link", link_names),
                         ("tendon", tendon_names), ("motor", [m.name for m in model.motors])):
        dupes = {n for n in names if names.count(n) > 1}
        for d in sorted(dupes):
            v.append(f"duplicate {label} name {d!r}")

    joint_set = set(joint_names)
    link_set = set(link_names)

    for l in model.links:
        if l.parent_joint is not None and l.parent_joint not in joint_set:
            v.append(f"link {l.name!r}: parent joint {l.parent_joint!r} does not exist")

    for j in model.joints:
        if j.parent_link not in link_set:
            v.append(f"joint {j.name!r}: parent link {j.parent_link!r} does not exist")
        if not j.q_min < j.q_max:
            v.append(f"joint {j.name!r}: q_min must be < q_max (got [{j.q_min}, {j.q_max}])")
        norm = math.sqrt(sum(a * a for a in j.axis))
        if abs(norm - 1.0) > _AXIS_TOL:
            v.append(f"joint {j.name!r}: axis must be unit norm (|axis| = {norm:.12f})")
        if j.kind == ROLLING:
            if j.radius is None or j.radius <= 0:
                v.append(f"joint {j.name!r}: rolling joint needs radius > 0")
            if j.hinge_offset is None or j.hinge_offset <= 0:
                v.append(f"joint {j.name!r}: rolling joint needs hinge_offset > 0")

    driven_seen = {}
    drivers = {c.driver for c in model.couplings}
    for c in model.couplings:
        if c.driver == c.driven:
            v.append(f"coupling {c.driver!r}: driver and driven must differ")
        for role, name in (("driver", c.driver), ("driven", c.driven)):
            if name not in joint_set:
                v.append(f"coupling {c.driver!r}->{c.driven!r}: {role} joint {name!r} does not exist")
        driven_seen[c.driven] = driven_seen.get(c.driven, 0) + 1
        if c.driven in drivers:
            v.append(f"coupling chain not allowed: {c.driven!r} is both driven and a driver")
    for name, count in driven_seen.items():
        if count > 1:
            v.append(f"joint {name!r} is driven by {count} couplings (at most one allowed)")

    depth = model.joint_depth if not v else None  # depth walk needs a structurally sound tree
    for t in model.tendons:
        if t.rest_length <= 0:
            v.append(f"tendon {t.name!r}: rest_length must be > 0")
        if not t.terms:
            v.append(f"tendon {t.name!r}: route has no terms")
        last_depth = 0
        for term in t.terms:
            if term.joint not in joint_set:
                v.append(f"tendon {t.name!r}: term references missing joint {term.joint!r}")
                continue
            if term.kind not in (LINEAR, ROLLING):
                v.append(f"tendon {t.name!r}: unknown term kind {term.kind!r}")
            if term.sign not in (1, -1):
                v.append(f"tendon {t.name!r}: term sign must be +1 or -1")
            if term.coef <= 0:
                v.append(f"tendon {t.name!r}: term coefficient must be > 0")
            if depth is not None:
                d = depth[term.joint]
                if d <= last_depth:
                    v.append(f"tendon {t.name!r}: terms must be ordered proximal to distal")
                last_depth = d

    attached = {}
    for m in model.motors:
        if not 1 <= len(m.attachments) <= 2:
            v.append(f"motor {m.name!r}: needs 1 or 2 attachments (got {len(m.attachments)})")
        for a in m.attachments:
            if a.spool_radius <= 0:
                v.append(f"motor {m.name!r}: spool radius must be > 0")
            if a.winding not in (1, -1):
                v.append(f"motor {m.name!r}: winding must be +1 or -1")
            if a.tendon not in set(tendon_names):
                v.append(f"motor {m.name!r}: attachment references missing tendon {a.tendon!r}")
            else:
                attached[a.tendon] = attached.get(a.tendon, 0) + 1
    for t in model.tendons:
        n = attached.get(t.name, 0)
        if n != 1:
            v.append(f"tendon {t.name!r}: must be attached to exactly one motor (got {n})")

    if model.fingertips:
        fingers = tuple(f.finger for f in model.fingertips)
        if fingers != FINGER_ORDER:
            v.append(f"fingertips must be exactly {FINGER_ORDER} in order (got {fingers})")
        for f in model.fingertips:
            if f.link not in link_set:
                v.append(f"fingertip {f.finger!r}: link {f.link!r} does not exist")

    # declared-count checks let a config assert its own topology (Proto-0 declares
    # 16 joints / 11 DoF / 16 motors / 6 two-tendon motors / 22 attachments)
    dual = sum(1 for m in model.motors if len(m.attachments) == 2)
    n_attach = sum(len(m.attachments) for m in model.motors)
    declared = {
        "joints": model.n_joints,
        "actuated_dof": model.n_actuated,
        "motors": model.n_motors,
        "dual_motors": dual,
        "attachments": n_attach,
    }
    for key, actual in declared.items():
        want = model.checks.get(key)
        if want is not None and want != actual:
            v.append(f"declared {key} = {want} but model has {actual}")

    tol = model.checks.get("antagonistic_tolerance")
    if tol is not None and not v:
        from .tendon import antagonistic_consistency_check  # deferred: tendon imports this module

        dev = antagonistic_consistency_check(model)
        if dev > tol:
            v.append(
                f"antagonistic pairs deviate from the spool-ratio relation by "
                f"{dev:.2e} m (declared tolerance {tol:.2e})"
            )

    if model.n_joints - len(model.couplings) != model.n_actuated:
        v.append(
            f"joint bookkeeping broken: {model.n_joints} joints - {len(model.couplings)} couplings "
            f"!= {model.n_actuated} actuated"
        )
    return v


def serialize_hand_model(model: HandModel) -> str:
    """Emit a config document that round-trips through load_hand_model."""
    doc = {
        "version": model.version,
        "name": model.name,
        "checks": dict(model.checks),
        "links": [
            {"name": l.name, "parent_joint": l.parent_joint, "offset": list(l.offset),
             **({"rpy": list(l.rpy)} if any(l.rpy) else {})}
            for l in model.links
        ],
        "joints": [
            {
                "name": j.name, "kind": j.kind, "parent_link": j.parent_link,
                "pivot": list(j.pivot), "axis": list(j.axis), "range": [j.q_min, j.q_max],
                **({"radius": j.radius, "hinge_offset": j.hinge_offset} if j.kind == ROLLING else {}),
            }
            for j in model.joints
        ],
        "couplings": [
            {"driver": c.driver, "driven": c.driven, "ratio": c.ratio} for c in model.couplings
        ],
        "tendons": [
            {
                "name": t.name, "rest_length": t.rest_length,
                "terms": [
                    {"joint": term.joint, "kind": term.kind, "sign": term.sign,
                     ("moment_arm" if term.kind == LINEAR else "radius"): term.coef}
                    for term in t.terms
                ],
            }
            for t in model.tendons
        ],
        "motors": [
            {"name": m.name,
             "attachments": [
                 {"tendon": a.tendon, "spool_radius": a.spool_radius, "winding": a.winding}
                 for a in m.attachments
             ]}
            for m in model.motors
        ],
        "fingertips": [
            {"finger": f.finger, "link": f.link, "offset": list(f.offset)} for f in model.fingertips
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


_builtin_cache = {}


def builtin_proto0() -> HandModel:
    """The packaged Proto-0 hand: 16 joints, 11 actuated DoF, 16 motors."""
    if "proto0" not in _builtin_cache:
        text = resources.files("tendonkit.data").joinpath("proto0.yaml").read_text()
        _builtin_cache["proto0"] = load_hand_model(text)
    return _builtin_cache["proto0"]
