"""Closed-loop policy runtime against an abstract motor driver.

Tick pipeline (20 Hz): read motor state -> tendon lengths -> EKF predict +
update -> scaled joint estimate into the observation history -> actor forward
(deterministic mean) -> command integration -> tendon targets -> write.

Drivers implement read_motor_state() / write_motor_targets(); the loopback
backend simulates motors tracking their targets, and the line-protocol bridge
serves any driver over TCP so a remote process can stand in for hardware.
"""

from __future__ import annotations

import csv
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .env import actor_observation, integrate_command
from .estimator import EkfNoise, ekf_init, ekf_predict, ekf_update
from .handmodel import HandModel
from .rl import PolicyFormatError, load_policy, mlp_forward
from .tendon import calibrate, joints_to_motor_angles, motor_angles_to_tendon_lengths


class DriverTimeout(Exception):
    """The driver failed to answer within its deadline."""


@dataclass
class MotorState:
    theta: np.ndarray      # (n_motors,) rad
    theta_dot: np.ndarray  # (n_motors,) rad/s
    timestamp: float       # s, monotone


class LoopbackDriver:
    """Simulated motor bus: positions track targets with a first-order lag.

    tracking = 1.0 reaches the target in one tick.  Timestamps advance by
    1/rate per read, so sessions are deterministic.
    """

    def __init__(self, n_motors: int = 16, rate: float = 20.0, tracking: float = 1.0,
                 theta0=None):
        self.n_motors = n_motors
        self.dt = 1.0 / rate
        self.tracking = tracking
        self.theta = np.zeros(n_motors) if theta0 is None else np.array(theta0, dtype=float)
        self.theta_dot = np.zeros(n_motors)
        self.target = self.theta.copy()
        self.t = 0.0

    def read_motor_state(self) -> MotorState:
        prev = self.theta.copy()
        self.theta = self.theta + self.tracking * (self.target - self.theta)
        self.theta_dot = (self.theta - prev) / self.dt
        self.t += self.dt
        return MotorState(self.theta.copy(), self.theta_dot.copy(), self.t)

    def write_motor_targets(self, theta_des) -> None:
        self.target = np.array(theta_des, dtype=float)


class SilentAfterDriver:
    """Fault-injection wrapper: the wrapped driver stops answering after n reads."""

    def __init__(self, inner, fail_after: int):
        self.inner = inner
        self.fail_after = fail_after
        self.reads = 0

    def read_motor_state(self) -> MotorState:
        self.reads += 1
        if self.reads > self.fail_after:
            raise DriverTimeout(f"driver silent (read {self.reads})")
        return self.inner.read_motor_state()

    def write_motor_targets(self, theta_des) -> None:
        if self.reads > self.fail_after:
            raise DriverTimeout("driver silent")
        self.inner.write_motor_targets(theta_des)


# ---------------------------------------------------------------------------
# control loop
# ---------------------------------------------------------------------------

TELEMETRY_HEADER = (
    ["tick", "t_wall"]
    + [f"theta{i}" for i in range(16)]
    + [f"l{i}" for i in range(16)]
    + [f"qhat{i}" for i in range(11)]
    + [f"a{i}" for i in range(11)]
    + [f"qbar{i}" for i in range(11)]
    + [f"theta_des{i}" for i in range(16)]
    + ["fault"]
)


@dataclass(frozen=True)
class ControlLoopConfig:
    rate: float = 20.0
    obs_scale: float = 0.5          # joint measurement scaling before the policy
    q_cal: tuple = tuple([0.0] * 11)  # the known jig pose used at boot
    watchdog_timeout: float = 0.5   # per-read driver deadline (s), for drivers that support one
    max_missed_ticks: int = 5
    realtime: bool = True           # sleep to hold the tick period
    ekf_noise: EkfNoise = field(default_factory=EkfNoise)
    ekf_p0: float = 1e-2

    def validate(self):
        if self.rate <= 0:
            raise ValueError("rate must be > 0")
        if not 0.0 < self.obs_scale <= 1.0:
            raise ValueError("obs_scale must be in (0, 1]")
        if self.watchdog_timeout <= 0:
            raise ValueError("watchdog_timeout must be > 0")


@dataclass
class TelemetryRecord:
    tick: int
    t_wall: float
    theta: np.ndarray
    lengths: np.ndarray
    qhat: np.ndarray
    action: np.ndarray
    qbar: np.ndarray
    theta_des: np.ndarray
    fault: int
    # phase timestamps: read < estimate < act < write within a tick
    t_read: float = 0.0
    t_estimate: float = 0.0
    t_act: float = 0.0
    t_write: float = 0.0

    def row(self):
        return ([self.tick, self.t_wall]
                + [float(x) for x in self.theta]
                + [float(x) for x in self.lengths]
                + [float(x) for x in self.qhat]
                + [float(x) for x in self.action]
                + [float(x) for x in self.qbar]
                + [float(x) for x in self.theta_des]
                + [self.fault])


class ControlLoop:
    """Owns the driver, EKF, and policy on a single control thread."""

    def __init__(self, model: HandModel, driver, policy_document: str,
                 config: ControlLoopConfig, v_max: float = 5.0):
        config.validate()
        self.model = model
        self.driver = driver
        self.config = config
        self.dt = 1.0 / config.rate
        self.v_max = v_max

        self.actor, self.head, self.metadata = load_policy(policy_document)
        for key in ("q_min", "q_max"):
            if key not in self.metadata:
                raise PolicyFormatError(f"policy metadata lacks {key!r}; cannot rebuild observations")
        depth = int(self.metadata.get("history_depth", 5))
        self.q_lo = np.array(self.metadata["q_min"], dtype=float)
        self.q_hi = np.array(self.metadata["q_max"], dtype=float)

        # boot: calibrate against the jig pose before anything else runs
        boot = driver.read_motor_state()
        self.cal = calibrate(model, boot.theta, np.asarray(config.q_cal, dtype=float))
        self.ekf = ekf_init(self.cal.q_cal, dt=self.dt, p0_scale=config.ekf_p0,
                            noise=config.ekf_noise, n_motors=model.n_motors)
        self.qbar = self.cal.q_cal.copy()
        qhat0 = config.obs_scale * self.cal.q_cal
        self.history = np.tile(qhat0, (depth, 1))
        self.prev_action = np.zeros(model.n_actuated)
        self.last_theta_des = joints_to_motor_angles(model, self.cal, self.qbar)
        self.missed = 0
        self.tick = 0
        self.faulted = False

    def control_step(self) -> TelemetryRecord:
        """One tick; on driver timeout the last command is held."""
        cfg = self.config
        t_wall = time.perf_counter()
        try:
            state = self.driver.read_motor_state()
        except DriverTimeout:
            self.missed += 1
            fault = 1
            if self.missed > cfg.max_missed_ticks:
                self.faulted = True
                fault = 2
            rec = TelemetryRecord(
                tick=self.tick, t_wall=t_wall,
                theta=np.full(self.model.n_motors, np.nan),
                lengths=np.full(self.model.n_motors, np.nan),
                qhat=self.ekf.q.copy(), action=np.zeros_like(self.prev_action),
                qbar=self.qbar.copy(), theta_des=self.last_theta_des.copy(),
                fault=fault,
            )
            if not self.faulted:
                try:
                    self.driver.write_motor_targets(self.last_theta_des)
                except DriverTimeout:
                    pass
            self.tick += 1
            return rec
        t_read = time.perf_counter()

        z = motor_angles_to_tendon_lengths(self.model, self.cal, state.theta, state.theta_dot)
        self.ekf = ekf_update(ekf_predict(self.ekf), z, self.model, self.cal)
        qhat = self.ekf.q.copy()
        t_estimate = time.perf_counter()

        measured = cfg.obs_scale * qhat
        self.history = np.concatenate([self.history[1:], measured[None, :]])
        obs = actor_observation(self.qbar, self.history, self.prev_action,
                                self.q_lo, self.q_hi)
        mean, _ = mlp_forward(self.actor, obs)
        action = mean
        self.qbar, clipped = integrate_command(self.qbar, action, self.v_max,
                                               self.dt, self.q_lo, self.q_hi)
        self.prev_action = clipped
        t_act = time.perf_counter()

        theta_des = joints_to_motor_angles(self.model, self.cal, self.qbar)
        self.driver.write_motor_targets(theta_des)
        t_write = time.perf_counter()
        self.last_theta_des = theta_des
        self.missed = 0

        rec = TelemetryRecord(
            tick=self.tick, t_wall=t_wall, theta=state.theta, lengths=z.l,
            qhat=qhat, action=clipped, qbar=self.qbar.copy(), theta_des=theta_des,
            fault=0, t_read=t_read, t_estimate=t_estimate, t_act=t_act, t_write=t_write,
        )
        self.tick += 1
        return rec

    def run(self, ticks: int, telemetry_path=None) -> list:
        """Run up to `ticks` control steps (stops early on watchdog fault)."""
        records = []
        next_deadline = time.perf_counter()
        for _ in range(ticks):
            if self.config.realtime:
                now = time.perf_counter()
                if now < next_deadline:
                    time.sleep(next_deadline - now)
                next_deadline = max(next_deadline + self.dt, time.perf_counter())
            records.append(self.control_step())
            if self.faulted:
                break
        if telemetry_path:
            with open(telemetry_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(TELEMETRY_HEADER)
                for rec in records:
                    writer.writerow(rec.row())
        return records


def run_control_loop(model: HandModel, driver, policy_document: str,
                     config: ControlLoopConfig, ticks: int,
                     telemetry_path=None) -> list:
    """Boot (calibration included), run the loop, return telemetry records."""
    loop = ControlLoop(model, driver, policy_document, config)
    return loop.run(ticks, telemetry_path=telemetry_path)


# ---------------------------------------------------------------------------
# line-protocol bridge
# ---------------------------------------------------------------------------
#
# Requests (one per line):   READ
#                            WRITE <a0> ... <a15>
# Responses:                 STATE <t> <theta x16> <theta_dot x16>
#                            OK
#                            ERR <reason>
# Floats use repr precision and round-trip exactly.


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


class _BridgeHandler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        self.server.active_connections.add(self.request)

    def finish(self):
        self.server.active_connections.discard(self.request)
        super().finish()

    def handle(self):
        driver = self.server.driver
        n = driver.n_motors if hasattr(driver, "n_motors") else 16
        for raw in self.rfile:
            line = raw.decode("ascii", errors="replace").strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "READ" and len(parts) == 1:
                    state = driver.read_motor_state()
                    reply = f"STATE {repr(state.timestamp)} {_fmt(state.theta)} {_fmt(state.theta_dot)}"
                elif parts[0] == "WRITE" and len(parts) == 1 + n:
                    driver.write_motor_targets([float(x) for x in parts[1:]])
                    reply = "OK"
                else:
                    reply = "ERR parse: expected READ or WRITE with 16 angles"
            except ValueError:
                reply = "ERR parse: malformed number"
            except DriverTimeout:
                reply = "ERR timeout"
            self.wfile.write((reply + "\n").encode("ascii"))
            self.wfile.flush()


class BridgeServer:
    """Serves a driver over the line protocol; one thread per connection."""

    def __init__(self, address, driver):
        host, port = address
        self._server = socketserver.ThreadingTCPServer((host, port), _BridgeHandler,
                                                       bind_and_activate=True)
        self._server.daemon_threads = True
        self._server.allow_reuse_address = True
        self._server.driver = driver
        self._server.active_connections = set()
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        self._server.shutdown()
        for conn in list(self._server.active_connections):
            try:
                conn.shutdown(socket.SHUT_RDWR)
                conn.close()
            except OSError:
                pass
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=2.0)


def network_bridge(address, driver=None) -> BridgeServer:
    """Expose a driver (loopback by default) at `address`; returns the started server."""
    if driver is None:
        driver = LoopbackDriver()
    return BridgeServer(address, driver).start()


class NetworkDriver:
    """DriverInterface client over the bridge's line protocol."""

    def __init__(self, address, timeout: float = 0.5, n_motors: int = 16):
        self.n_motors = n_motors
        self._sock = socket.create_connection(address, timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def _roundtrip(self, request: str) -> str:
        try:
            self._file.write((request + "\n").encode("ascii"))
            self._file.flush()
            line = self._file.readline()
        except (socket.timeout, OSError) as e:
            raise DriverTimeout(f"bridge unreachable: {e}") from e
        if not line:
            raise DriverTimeout("bridge closed the connection")
        return line.decode("ascii").strip()

    def read_motor_state(self) -> MotorState:
        reply = self._roundtrip("READ")
        parts = reply.split()
        if parts[0] != "STATE" or len(parts) != 2 + 2 * self.n_motors:
            raise DriverTimeout(f"unexpected bridge reply: {reply[:80]}")
        t = float(parts[1])
        theta = np.array([float(x) for x in parts[2:2 + self.n_motors]])
        theta_dot = np.array([float(x) for x in parts[2 + self.n_motors:]])
        return MotorState(theta, theta_dot, t)

    def write_motor_targets(self, theta_des) -> None:
        reply = self._roundtrip("WRITE " + _fmt(theta_des))
        if reply != "OK":
            raise DriverTimeout(f"bridge rejected write: {reply[:80]}")

    def close(self):
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass
