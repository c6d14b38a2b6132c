"""Landing state machine, gimbal tracking law, and closed-loop simulator.

Mission phases: Takeoff (climb to altitude), Search (spin in place while
sweeping the gimbal), Approach (fly toward the pad while tracking it with
yaw and gimbal tilt), Align (rotate to the pad's yaw), Descend (sink with
horizontal corrections, committing blind below a threshold altitude), and
the absorbing Touchdown (motors off). Loss of detection above the blind
altitude reverts Approach/Align/Descend to Search; below it the descent
finishes regardless.

The plant is kinematic with a first-order velocity response and an
optional command-latency queue; the perception contribution lives in the
other modules, so landing batches stay fast and reproducible.

World frame: ENU with the pad on the ground plane. Drone yaw is measured
counterclockwise from +East; gimbal tilt runs from 0 (level) to -pi/2
(straight down). The camera's image-right axis stays horizontal, which is
how a pitch-only stabilized gimbal behaves.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .detector import Detection, DetectorConfig, Variant, detect
from .geometry import CameraIntrinsics, Pose, rot_x, rot_y, wrap_angle
from .marker import MarkerSpec, render_scene
from .targets import (
    CameraOrientation,
    MarkerOrientation,
    MetricsReport,
    OrientationSource,
    PositionTarget,
    TrackingPoint,
    detect_discontinuities,
    landing_radius,
    position_target,
    tracking_point,
)


class Phase(enum.Enum):
    TAKEOFF = "takeoff"
    SEARCH = "search"
    APPROACH = "approach"
    ALIGN = "align"
    DESCEND = "descend"
    TOUCHDOWN = "touchdown"


# Allowed transitions; anything else is a state-machine bug.
PHASE_GRAPH = {
    Phase.TAKEOFF: {Phase.TAKEOFF, Phase.SEARCH},
    Phase.SEARCH: {Phase.SEARCH, Phase.APPROACH},
    Phase.APPROACH: {Phase.APPROACH, Phase.SEARCH, Phase.ALIGN},
    Phase.ALIGN: {Phase.ALIGN, Phase.SEARCH, Phase.DESCEND},
    Phase.DESCEND: {Phase.DESCEND, Phase.SEARCH, Phase.TOUCHDOWN},
    Phase.TOUCHDOWN: {Phase.TOUCHDOWN},
}


@dataclass(frozen=True)
class LanderConfig:
    takeoff_altitude: float = 2.0
    command_rate: float = 10.0  # Hz
    blind_commit_altitude: float = 0.6
    search_yaw_rate: float = 0.5  # rad/s
    gimbal_sweep_min: float = math.radians(-80.0)
    gimbal_sweep_max: float = math.radians(-20.0)
    gimbal_sweep_rate: float = 0.3  # rad/s
    approach_gain: float = 0.8  # 1/s on horizontal displacement
    descend_gain: float = 0.7  # 1/s on altitude
    align_distance: float = 0.30  # m horizontal
    align_yaw_tol: float = 0.15  # rad
    align_yaw_gain: float = 1.5  # 1/s
    command_latency: float = 0.5  # s, acquisition-to-command delay
    plant_tau: float = 0.3  # s, velocity response
    climb_rate: float = 1.0  # m/s
    max_horizontal_speed: float = 1.2  # m/s
    max_descent_speed: float = 0.6  # m/s
    min_descent_speed: float = 0.15  # m/s
    yaw_gain: float = 1.2  # gimbal tracking, 1/s per unit u_n
    tilt_gain: float = 1.2  # gimbal tracking, 1/s per unit v_n
    sensor_rate: float = 10.0  # Hz; may run below command_rate
    detection_hold: float = 0.45  # s a stale detection keeps steering
    sim_horizon: float = 90.0  # s

    def __post_init__(self):
        if self.blind_commit_altitude >= self.takeoff_altitude:
            raise ValueError("blind_commit_altitude must be below takeoff_altitude")
        for name in (
            "takeoff_altitude",
            "command_rate",
            "blind_commit_altitude",
            "search_yaw_rate",
            "gimbal_sweep_rate",
            "approach_gain",
            "descend_gain",
            "align_distance",
            "align_yaw_tol",
            "plant_tau",
            "climb_rate",
            "sensor_rate",
            "sim_horizon",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.command_latency < 0:
            raise ValueError("command_latency must be >= 0")


@dataclass(frozen=True)
class Command:
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # world ENU, m/s
    yaw_rate: float = 0.0
    gimbal_rate: float = 0.0
    motors_on: bool = True


@dataclass(frozen=True)
class DroneState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)  # world ENU, m
    yaw: float = 0.0
    gimbal_tilt: float = math.radians(-45.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    motors_on: bool = True
    gimbal_dir: float = -1.0  # search sweep direction
    pending: tuple[tuple[float, Command], ...] = ()  # latency queue
    active_command: Command = Command()

    @property
    def altitude(self) -> float:
        return self.position[2]


def camera_rotation(yaw: float, gimbal_tilt: float) -> np.ndarray:
    """Camera-to-world rotation for a drone yaw and gimbal tilt.

    The camera's forward axis points along the heading, dipped by the
    tilt; image-right stays horizontal.
    """
    forward = np.array(
        [math.cos(gimbal_tilt) * math.cos(yaw), math.cos(gimbal_tilt) * math.sin(yaw), math.sin(gimbal_tilt)]
    )
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)  # camera y (image-down)
    return np.column_stack([right, down, forward])


def camera_attitude(gimbal_tilt: float) -> tuple[float, float]:
    """(pitch, roll) of the camera relative to straight-down, matching the
    conventions of :func:`autoland.geometry.attitude_to_rotation`."""
    R_rel = camera_rotation(0.0, -math.pi / 2).T @ camera_rotation(0.0, gimbal_tilt)
    # R_rel = Rx(pitch) @ Ry(roll)
    pitch = math.atan2(R_rel[2, 1], R_rel[1, 1])
    roll = math.atan2(R_rel[0, 2], R_rel[0, 0])
    return pitch, roll


def gimbal_track(tp: TrackingPoint, yaw_gain: float = 1.2, tilt_gain: float = 1.2) -> tuple[float, float]:
    """Proportional tracking law: rates that re-center the pad pixel."""
    return -yaw_gain * tp.u_n, -tilt_gain * tp.v_n


def heading_vectors(yaw: float) -> tuple[np.ndarray, np.ndarray]:
    """(right, forward) level unit vectors for a drone heading."""
    return (
        np.array([math.sin(yaw), -math.cos(yaw), 0.0]),
        np.array([math.cos(yaw), math.sin(yaw), 0.0]),
    )


def target_world_displacement(target: PositionTarget, source: OrientationSource, yaw: float) -> np.ndarray:
    """Horizontal world-frame displacement implied by a position target.

    Camera-frame targets are right/forward displacements in the heading
    frame; marker-frame targets live in the pad's own ENU, reached by
    rotating the heading frame through the reported yaw error. A wrong
    orientation hypothesis corrupts frame and components together, which
    is what makes its sign flips visible in a fixed frame.
    """
    right, forward = heading_vectors(yaw)
    if isinstance(source, MarkerOrientation):
        # Pad east sits yaw_error counterclockwise of the drone's forward.
        c, s = math.cos(target.yaw_error), math.sin(target.yaw_error)
        pad_east = np.array([c * forward[0] - s * forward[1], s * forward[0] + c * forward[1], 0.0])
        pad_north = np.cross(np.array([0.0, 0.0, 1.0]), pad_east)
        return target.east * pad_east + target.north * pad_north
    return target.east * right + target.north * forward


def _target_to_world_velocity(
    target: PositionTarget, source: OrientationSource, yaw: float, gain: float, vmax: float
) -> np.ndarray:
    """Horizontal velocity command from a position target."""
    v = gain * target_world_displacement(target, source, yaw)
    speed = float(np.linalg.norm(v))
    if speed > vmax:
        v *= vmax / speed
    return v


def step(
    state: DroneState,
    phase: Phase,
    det: Detection | None,
    cfg: LanderConfig,
    dt: float,
    source: OrientationSource = CameraOrientation(),
    K: CameraIntrinsics | None = None,
    attitude_at_detection: tuple[float, float] | None = None,
) -> tuple[Command, Phase, DroneState]:
    """One control tick: produce a command and the next phase.

    ``det`` is the most recent usable detection (None when lost). In
    camera-orientation mode the gimbal attitude captured with that frame
    may be supplied; otherwise the current state's attitude is used. The
    returned state only updates bookkeeping fields (search sweep
    direction); physics happens in :func:`plant_step`.
    """
    K = K or CameraIntrinsics.from_hfov()
    alt = state.altitude

    if phase is Phase.TOUCHDOWN:
        return Command(motors_on=False), Phase.TOUCHDOWN, state

    if phase is Phase.TAKEOFF:
        if alt >= cfg.takeoff_altitude:
            return Command(), Phase.SEARCH, state
        return Command(velocity=(0.0, 0.0, cfg.climb_rate)), Phase.TAKEOFF, state

    if phase is Phase.SEARCH:
        if det is not None:
            return Command(), Phase.APPROACH, state
        direction = state.gimbal_dir
        if state.gimbal_tilt <= cfg.gimbal_sweep_min:
            direction = 1.0
        elif state.gimbal_tilt >= cfg.gimbal_sweep_max:
            direction = -1.0
        cmd = Command(yaw_rate=cfg.search_yaw_rate, gimbal_rate=direction * cfg.gimbal_sweep_rate)
        return cmd, Phase.SEARCH, replace(state, gimbal_dir=direction)

    # Tracking phases need a detection above the blind altitude.
    blind = alt <= cfg.blind_commit_altitude
    if det is None and not blind:
        return Command(), Phase.SEARCH, state

    if phase is Phase.DESCEND and blind:
        # Blind commit: the pad has outgrown the frame; finish on inertia.
        if alt <= 1e-3:
            return Command(motors_on=False), Phase.TOUCHDOWN, state
        vz = -min(max(cfg.descend_gain * alt, cfg.min_descent_speed), cfg.max_descent_speed)
        return Command(velocity=(0.0, 0.0, vz)), Phase.DESCEND, state

    if isinstance(source, CameraOrientation):
        pitch, roll = attitude_at_detection or camera_attitude(state.gimbal_tilt)
        live_source: OrientationSource = CameraOrientation(pitch=pitch, roll=roll)
    else:
        live_source = source
    target = position_target(det, live_source)
    tp = tracking_point(det, K)
    yaw_rate, tilt_rate = gimbal_track(tp, cfg.yaw_gain, cfg.tilt_gain)
    v_h = _target_to_world_velocity(target, live_source, state.yaw, cfg.approach_gain, cfg.max_horizontal_speed)
    horizontal = math.hypot(target.east, target.north)

    if phase is Phase.APPROACH:
        next_phase = Phase.ALIGN if horizontal < cfg.align_distance else Phase.APPROACH
        cmd = Command(velocity=(v_h[0], v_h[1], 0.0), yaw_rate=yaw_rate, gimbal_rate=tilt_rate)
        return cmd, next_phase, state

    if phase is Phase.ALIGN:
        if abs(target.yaw_error) < cfg.align_yaw_tol:
            return Command(), Phase.DESCEND, state
        # Rotating the drone by +d moves yaw_error by +d, so servo downhill.
        align_rate = max(-cfg.search_yaw_rate, min(cfg.search_yaw_rate, -cfg.align_yaw_gain * target.yaw_error))
        cmd = Command(velocity=(v_h[0], v_h[1], 0.0), yaw_rate=align_rate, gimbal_rate=tilt_rate)
        return cmd, Phase.ALIGN, state

    # DESCEND with detections: sink plus horizontal correction.
    if alt <= 1e-3:
        return Command(motors_on=False), Phase.TOUCHDOWN, state
    vz = -min(max(cfg.descend_gain * alt, cfg.min_descent_speed), cfg.max_descent_speed)
    cmd = Command(velocity=(v_h[0], v_h[1], vz), yaw_rate=yaw_rate, gimbal_rate=tilt_rate)
    return cmd, Phase.DESCEND, state


def plant_step(state: DroneState, command: Command, cfg: LanderConfig, dt: float) -> DroneState:
    """Kinematic drone response: first-order velocity tracking, direct yaw
    and gimbal rates, command latency via an internal delay queue, and a
    ground clamp at z = 0."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    # Latency queue: commands become active command_latency seconds later.
    pending = list(state.pending) + [(cfg.command_latency, command)]
    active = state.active_command
    still_pending = []
    for delay, cmd in pending:
        remaining = delay - dt
        if remaining <= 0:
            active = cmd  # queue order preserves command order
        else:
            still_pending.append((remaining, cmd))

    if not state.motors_on or not active.motors_on:
        return replace(
            state,
            velocity=(0.0, 0.0, 0.0),
            motors_on=False,
            pending=tuple(still_pending),
            active_command=active,
        )

    v = np.asarray(state.velocity)
    v_cmd = np.asarray(active.velocity)
    v = v + (dt / cfg.plant_tau) * (v_cmd - v)
    pos = np.asarray(state.position) + v * dt
    if pos[2] <= 0.0:
        pos[2] = 0.0
        v = np.array([v[0], v[1], 0.0])
    yaw = wrap_angle(state.yaw + active.yaw_rate * dt)
    tilt = min(max(state.gimbal_tilt + active.gimbal_rate * dt, -math.pi / 2), 0.0)
    return replace(
        state,
        position=tuple(pos),
        velocity=tuple(v),
        yaw=yaw,
        gimbal_tilt=tilt,
        pending=tuple(still_pending),
        active_command=active,
    )


# --- closed-loop simulation -----------------------------------------------


@dataclass(frozen=True)
class LandingWorld:
    """Scene and initial conditions for a simulated landing."""

    marker_position: tuple[float, float] = (0.0, 0.0)
    marker_yaw: float = 0.0
    drone_start: tuple[float, float, float] = (-1.5, 1.0, 0.0)
    drone_yaw: float = 0.0
    # A desk-scale pad large enough to resolve at acquisition range in the
    # reduced-resolution simulation camera.
    spec: MarkerSpec = field(default_factory=lambda: MarkerSpec(outer_radius=0.18))
    K: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics.from_hfov(320, 240))
    supersample: int = 2
    noise_sigma: float = 2.0


@dataclass
class TrajectorySample:
    t: float
    phase: str
    x: float
    y: float
    z: float
    yaw: float
    gimbal_tilt: float
    u_n: float | None
    v_n: float | None
    east: float | None
    north: float | None
    up: float | None
    detected: bool


@dataclass
class SimResult:
    trajectory: list[TrajectorySample]
    targets: list[PositionTarget]
    metrics: MetricsReport
    reached_touchdown: bool
    landing_radius: float | None
    phase_transitions: list[tuple[float, str, str]]
    final_state: DroneState


def marker_world_pose(world: LandingWorld) -> Pose:
    """Marker frame in world coordinates: flat on the ground, facing up."""
    from .geometry import rot_z

    return Pose.from_matrix(rot_z(world.marker_yaw), np.array([world.marker_position[0], world.marker_position[1], 0.0]))


def render_view(world: LandingWorld, state: DroneState, seed: int) -> np.ndarray:
    """Render the camera view for the current drone state."""
    R_wc = camera_rotation(state.yaw, state.gimbal_tilt)
    t_wc = np.asarray(state.position)
    mp = marker_world_pose(world)
    R_cm = R_wc.T @ mp.matrix()
    t_cm = R_wc.T @ (mp.translation - t_wc)
    if t_cm[2] <= 0.05:
        return np.full((world.K.height, world.K.width), 128, dtype=np.uint8)
    pose_cm = Pose.from_matrix(R_cm, t_cm)
    return render_scene(world.K, [(world.spec, pose_cm)], supersample=world.supersample, seed=seed, noise_sigma=world.noise_sigma)


def simulate_landing(
    world: LandingWorld,
    variant: Variant,
    source: OrientationSource,
    cfg: LanderConfig,
    seed: int,
    detector_config: DetectorConfig | None = None,
) -> SimResult:
    """Closed-loop mission: render, detect, target, step, integrate.

    Deterministic for a given seed. A run that does not reach Touchdown
    within ``cfg.sim_horizon`` is reported as a failed landing rather
    than raising.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / cfg.command_rate
    sensor_period = 1.0 / cfg.sensor_rate
    state = DroneState(position=world.drone_start, yaw=world.drone_yaw)
    phase = Phase.TAKEOFF

    trajectory: list[TrajectorySample] = []
    stream: list[PositionTarget] = []
    transitions: list[tuple[float, str, str]] = []
    last_det: Detection | None = None
    last_det_time = -math.inf
    last_det_attitude: tuple[float, float] | None = None
    next_sensor_time = 0.0

    t = 0.0
    n_ticks = int(round(cfg.sim_horizon / dt))
    for _ in range(n_ticks):
        if t + 1e-9 >= next_sensor_time:
            if phase not in (Phase.TAKEOFF, Phase.TOUCHDOWN):
                frame = render_view(world, state, seed=int(rng.integers(0, 2**63 - 1)))
                dets = detect(frame, world.K, world.spec, variant, timestamp=t, config=detector_config)
                if dets:
                    last_det = dets[0]
                    last_det_time = t
                    # Attitude belongs to the frame, not the command tick.
                    last_det_attitude = camera_attitude(state.gimbal_tilt)
            next_sensor_time += sensor_period

        det = last_det if (t - last_det_time) <= cfg.detection_hold else None
        command, next_phase, state = step(
            state, phase, det, cfg, dt, source=source, K=world.K, attitude_at_detection=last_det_attitude
        )

        tp = tracking_point(det, world.K) if det is not None else None
        if det is not None and phase in (Phase.APPROACH, Phase.ALIGN, Phase.DESCEND):
            if isinstance(source, CameraOrientation):
                live = CameraOrientation(*last_det_attitude)
            else:
                live = source
            raw = position_target(det, live, timestamp=t)
            # Log in the fixed world frame: heading is known onboard, and a
            # stable frame keeps drone rotation out of the spike metric.
            disp = target_world_displacement(raw, live, state.yaw)
            tgt = PositionTarget(east=float(disp[0]), north=float(disp[1]), up=raw.up, yaw_error=raw.yaw_error, timestamp=t)
            if not stream or stream[-1].timestamp < tgt.timestamp:
                stream.append(tgt)
        else:
            tgt = None

        trajectory.append(
            TrajectorySample(
                t=t,
                phase=phase.value,
                x=state.position[0],
                y=state.position[1],
                z=state.position[2],
                yaw=state.yaw,
                gimbal_tilt=state.gimbal_tilt,
                u_n=tp.u_n if tp else None,
                v_n=tp.v_n if tp else None,
                east=tgt.east if tgt else None,
                north=tgt.north if tgt else None,
                up=tgt.up if tgt else None,
                detected=det is not None,
            )
        )

        if next_phase is not phase:
            if next_phase not in PHASE_GRAPH[phase]:
                raise RuntimeError(f"illegal phase transition {phase} -> {next_phase}")
            transitions.append((t, phase.value, next_phase.value))
            phase = next_phase

        state = plant_step(state, command, cfg, dt)
        t += dt
        if phase is Phase.TOUCHDOWN:
            break

    reached = phase is Phase.TOUCHDOWN
    radius = None
    if reached:
        radius = landing_radius(
            np.asarray(state.position), np.array([world.marker_position[0], world.marker_position[1], 0.0])
        )

    if len(stream) >= 2:
        metrics = detect_discontinuities(stream, nominal_period=sensor_period)
    else:
        metrics = MetricsReport()
    metrics.landing_radius = radius
    return SimResult(
        trajectory=trajectory,
        targets=stream,
        metrics=metrics,
        reached_touchdown=reached,
        landing_radius=radius,
        phase_transitions=transitions,
        final_state=state,
    )
