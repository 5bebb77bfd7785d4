"""The racing environment: car dynamics, telemetry, reward, damage, termination.

The car is a kinematic bicycle with a grip-capped yaw rate and a
longitudinal force balance (engine - brake - quadratic drag). Agent steps
are 200 ms, integrated as 10 substeps of 20 ms. The environment is fully
deterministic: identical action sequences give bit-identical trajectories.

trackPos and theta in the telemetry are measured against a configurable
reference (middle of the track, or a recorded racing line); the border
collision, lap accounting, and the out-of-track / backwards termination
always use the physical track axis.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import RacingLine, wrap_angle
from .nn import NumericError

GRAVITY = 9.81


class Termination(Enum):
    """Episode end kinds, in check priority order."""

    OUT_OF_TRACK = "out_of_track"
    BACKWARDS = "backwards"
    SLOW_PROGRESS = "slow_progress"
    MAX_STEPS = "max_steps"


# kinds that replace the step reward with -1; the others keep the step reward
PENALIZED_TERMINATIONS = (Termination.OUT_OF_TRACK, Termination.BACKWARDS)

# kinds where the TD target must not bootstrap (the adopted-target rule keeps
# bootstrapping for MAX_STEPS)
PREMATURE_TERMINATIONS = (
    Termination.OUT_OF_TRACK,
    Termination.BACKWARDS,
    Termination.SLOW_PROGRESS,
)


def terminal_reward(kind):
    """-1 for the penalized endings, None when the step reward stands."""
    if kind in PENALIZED_TERMINATIONS:
        return -1.0
    return None


@dataclass(frozen=True)
class CarParams:
    mass: float = 1000.0              # kg
    mu_grip: float = 1.1
    downforce_coeff: float = 2.0      # F_a = c * v^2, N/(m/s)^2
    drag_coeff: float = 2.8           # N/(m/s)^2
    engine_force: float = 7000.0      # N
    brake_force: float = 12000.0      # N
    max_steer: float = 0.45           # rad
    wheelbase: float = 2.6            # m
    width: float = 1.8                # m
    top_speed: float = 50.0           # m/s
    wheel_radius: float = 0.33        # m
    rpm_idle: float = 1000.0
    rpm_per_mps: float = 140.0

    def __post_init__(self):
        for name in ("mass", "mu_grip", "drag_coeff", "engine_force", "brake_force",
                     "max_steer", "wheelbase", "width", "top_speed", "wheel_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        # declared top speed must be reachable: engine force >= drag there
        if self.engine_force < self.drag_coeff * self.top_speed**2 - 1e-9:
            raise ValueError("engine force cannot sustain the declared top speed")

    def downforce(self, vx):
        return self.downforce_coeff * vx * vx

    def lateral_accel_cap(self, vx):
        return self.mu_grip * (GRAVITY + self.downforce(vx) / self.mass)

    def rpm(self, vx):
        return self.rpm_idle + self.rpm_per_mps * vx


@dataclass
class Action:
    steer: float = 0.0      # [-1, 1]
    throttle: float = 0.0   # [0, 1]
    brake: float = 0.0      # [0, 1]

    def clamped(self):
        return Action(
            steer=min(max(self.steer, -1.0), 1.0),
            throttle=min(max(self.throttle, 0.0), 1.0),
            brake=min(max(self.brake, 0.0), 1.0),
        )

    def as_array(self):
        return np.array([self.steer, self.throttle, self.brake])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass
class CarState:
    position: np.ndarray
    heading: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0
    damage: float = 0.0

    def copy(self):
        return CarState(self.position.copy(), self.heading, self.vx, self.vy,
                        self.yaw_rate, self.damage)


# observation scaling constants: each feature lands roughly in [-1, 1]
ANGLE_SCALE = math.pi
RANGE_SCALE = 200.0
SPEED_SCALE = 50.0
WHEEL_SCALE = 150.0
RPM_SCALE = 10000.0
LAC_SCALE = 0.1  # kappa values divided by this, i.e. multiplied by 10


@dataclass(frozen=True)
class Observation:
    """The telemetry feature set, fixed ordering, raw physical units.

    vector() applies the declared scaling constants. LAC is present only in
    LAC-enabled configurations (vector length 33 vs 29).
    """

    angle: float
    track: np.ndarray          # 19 rangefinder distances, m
    track_pos: float
    vx: float
    vy: float
    vz: float
    wheel_speeds: np.ndarray   # 4 values, rad/s
    rpm: float
    lac: np.ndarray | None = None

    def vector(self):
        parts = [
            np.array([self.angle / ANGLE_SCALE]),
            self.track / RANGE_SCALE,
            np.array([self.track_pos]),
            np.array([self.vx / SPEED_SCALE, self.vy / SPEED_SCALE, self.vz / SPEED_SCALE]),
            self.wheel_speeds / WHEEL_SCALE,
            np.array([self.rpm / RPM_SCALE]),
        ]
        if self.lac is not None:
            parts.append(self.lac / LAC_SCALE)
        return np.concatenate(parts)


def observation_dim(lac_enabled):
    return 33 if lac_enabled else 29


def progress_reward(vx, theta, track_pos, damage_increment=0.0,
                    damage_weight=0.01, literal_sin=False):
    """Speed-projected progress reward with a damage penalty.

    Default form: vx * (cos(theta) - |sin(theta)| - |track_pos|). With
    literal_sin=True the sin term keeps its sign (which rewards pointing
    left of the axis).
    """
    sin_term = math.sin(theta) if literal_sin else abs(math.sin(theta))
    return vx * (math.cos(theta) - sin_term - abs(track_pos)) - damage_weight * damage_increment


def make_observation(state, track, reference, lac_enabled, params):
    """Assemble the Table-style telemetry for a car state.

    theta/trackPos come from the configured reference line; rangefinders
    from the physical borders; wheel speeds are vx / wheel_radius with no
    per-wheel slip; vz is always 0.
    """
    ref_frame = reference.frame(state.position, state.heading)
    return Observation(
        angle=ref_frame.theta,
        track=track.rangefinders(state.position, state.heading),
        track_pos=ref_frame.track_pos,
        vx=state.vx,
        vy=state.vy,
        vz=0.0,
        wheel_speeds=np.full(4, state.vx / params.wheel_radius),
        rpm=params.rpm(state.vx),
        lac=reference.look_ahead_curvature(ref_frame.delta) if lac_enabled else None,
    )


class TerminationTracker:
    """Applies the episode-end rules in fixed priority order.

    out_of_track: |trackPos| > 1 (track axis frame)
    backwards:    |theta| > pi/2 for 5 consecutive steps
    slow_progress: mean vx over the last 50 steps < 2 m/s, after step 100
    max_steps:    step count reached the cap
    """

    BACKWARDS_STEPS = 5
    SLOW_WINDOW = 50
    SLOW_SPEED = 2.0
    SLOW_GRACE = 100

    def __init__(self, max_steps, backwards_steps=None, slow_window=None,
                 slow_speed=None, slow_grace=None):
        self.max_steps = max_steps
        self.backwards_steps = backwards_steps if backwards_steps else self.BACKWARDS_STEPS
        self.slow_window = slow_window if slow_window else self.SLOW_WINDOW
        self.slow_speed = slow_speed if slow_speed is not None else self.SLOW_SPEED
        self.slow_grace = slow_grace if slow_grace is not None else self.SLOW_GRACE
        self.steps = 0
        self.backwards_count = 0
        self.vx_history = deque(maxlen=self.slow_window)

    def update(self, track_pos, theta, vx):
        """Record one agent step and return the termination kind, if any."""
        self.steps += 1
        self.backwards_count = self.backwards_count + 1 if abs(theta) > math.pi / 2.0 else 0
        self.vx_history.append(vx)
        return self.check(track_pos)

    def check(self, track_pos):
        if abs(track_pos) > 1.0:
            return Termination.OUT_OF_TRACK
        if self.backwards_count >= self.backwards_steps:
            return Termination.BACKWARDS
        if (
            self.steps > self.slow_grace
            and len(self.vx_history) == self.slow_window
            and sum(self.vx_history) / self.slow_window < self.slow_speed
        ):
            return Termination.SLOW_PROGRESS
        if self.steps >= self.max_steps:
            return Termination.MAX_STEPS
        return None


@dataclass
class StepInfo:
    lap_completed: bool = False
    lap_time: float | None = None
    damage_increment: float = 0.0
    delta: float = 0.0
    progress: float = 0.0
    track_theta: float = 0.0
    track_pos: float = 0.0


@dataclass
class StepResult:
    observation: Observation
    reward: float
    termination: Termination | None
    info: StepInfo


class RacingEnv:
    """Single-car environment over a track with a telemetry reference line."""

    def __init__(self, track, reference=None, lac_enabled=False, params=None,
                 dt=0.2, substeps=10, max_steps=400, damage_weight=0.01,
                 damage_coeff=1.0, literal_sin=False, start_delta=0.0,
                 start_speed=0.0, termination_overrides=None):
        self.track = track
        self.reference = reference if reference is not None else RacingLine.middle_of_track(track)
        self.lac_enabled = lac_enabled
        self.params = params if params is not None else CarParams()
        if track.width <= self.params.width:
            raise ValueError("track narrower than the car")
        self.dt = dt
        self.substeps = substeps
        self.max_steps = max_steps
        self.damage_weight = damage_weight
        self.damage_coeff = damage_coeff
        self.literal_sin = literal_sin
        self.start_delta = start_delta
        self.start_speed = start_speed
        self.termination_overrides = dict(termination_overrides or {})
        self.state = None
        self.reset()

    def reset(self):
        p = self.track.centerline.point_at(self.start_delta)
        tangent = self.track.centerline.tangent_at(self.start_delta)
        self.state = CarState(position=p.copy(), heading=math.atan2(tangent[1], tangent[0]),
                              vx=self.start_speed)
        self.tracker = TerminationTracker(self.max_steps, **self.termination_overrides)
        self.time = 0.0
        self.lap_progress = 0.0
        self.lap_start_time = 0.0
        self.laps_completed = 0
        self.last_lap_time = None
        self._prev_delta = self.start_delta
        self.done = False
        return self.observe()

    def observe(self):
        return make_observation(self.state, self.track, self.reference,
                                self.lac_enabled, self.params)

    def step(self, action):
        """Advance one 200 ms agent step. Returns a StepResult."""
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        if isinstance(action, Action):
            raw = action
        else:
            raw = Action.from_array(np.asarray(action, dtype=np.float64))
        if not all(math.isfinite(v) for v in (raw.steer, raw.throttle, raw.brake)):
            raise NumericError("non-finite action")
        act = raw.clamped()

        h = self.dt / self.substeps
        damage_increment = 0.0
        lap_completed = False
        lap_time = None
        track_frame = None
        for _ in range(self.substeps):
            dmg, crossed, track_frame = self._substep(act, h)
            damage_increment += dmg
            if crossed is not None:
                lap_completed = True
                lap_time = crossed
        self.state.damage += damage_increment
        obs = self.observe()
        reward = progress_reward(
            obs.vx, obs.angle, obs.track_pos, damage_increment,
            damage_weight=self.damage_weight, literal_sin=self.literal_sin,
        )
        kind = self.tracker.update(track_frame.track_pos, track_frame.theta, self.state.vx)
        if kind is not None:
            self.done = True
            penalty = terminal_reward(kind)
            if penalty is not None:
                reward = penalty
        info = StepInfo(
            lap_completed=lap_completed,
            lap_time=lap_time,
            damage_increment=damage_increment,
            delta=track_frame.delta,
            progress=self.lap_progress,
            track_theta=track_frame.theta,
            track_pos=track_frame.track_pos,
        )
        return StepResult(observation=obs, reward=reward, termination=kind, info=info)

    # --- dynamics ---------------------------------------------------------

    def _substep(self, act, h):
        """One 20 ms integration step. Returns (damage, lap_time or None, frame)."""
        p = self.params
        s = self.state

        steer_angle = act.steer * p.max_steer
        omega = s.vx * math.tan(steer_angle) / p.wheelbase
        cap = p.lateral_accel_cap(s.vx)
        if s.vx > 1e-6 and abs(s.vx * omega) > cap:
            omega = math.copysign(cap / s.vx, omega)  # understeer: grip-capped yaw
        s.yaw_rate = omega
        s.vy = omega * p.wheelbase / 2.0

        brake = p.brake_force * act.brake if s.vx > 0.0 else 0.0
        force = p.engine_force * act.throttle - brake - p.drag_coeff * s.vx * s.vx
        s.vx = min(max(s.vx + (force / p.mass) * h, 0.0), p.top_speed)

        s.heading = wrap_angle(s.heading + omega * h)
        cos_h, sin_h = math.cos(s.heading), math.sin(s.heading)
        world_v = np.array([
            s.vx * cos_h - s.vy * sin_h,
            s.vx * sin_h + s.vy * cos_h,
        ])
        s.position = s.position + world_v * h
        self.time += h

        frame = self.track.frame(s.position, s.heading)
        damage = self._wall_contact(world_v, frame)
        lap_time = self._advance_progress(frame.delta, h)
        return damage, lap_time, frame

    def _wall_contact(self, world_v, frame):
        """Damage + velocity response when the car is at or beyond a border.

        Contact applies damage proportional to the squared outward normal
        speed and zeroes that component, so the car slides along the wall;
        position is not clamped, and the step-level check then terminates
        once |trackPos| exceeds 1.
        """
        tp = frame.track_pos
        if abs(tp) < 1.0:
            return 0.0
        s = self.state
        n_out = math.copysign(1.0, tp) * self.track.centerline.normal_at(frame.delta)
        v_n = float(world_v @ n_out)
        if v_n <= 0.0:
            return 0.0
        damage = self.damage_coeff * v_n * v_n
        new_world_v = world_v - v_n * n_out
        cos_h, sin_h = math.cos(s.heading), math.sin(s.heading)
        s.vx = max(new_world_v[0] * cos_h + new_world_v[1] * sin_h, 0.0)
        s.vy = -new_world_v[0] * sin_h + new_world_v[1] * cos_h
        return damage

    def _advance_progress(self, delta, h):
        """Accumulate signed progress along the track axis; detect lap crossings."""
        d = delta - self._prev_delta
        half = self.track.length / 2.0
        if d > half:
            d -= self.track.length
        elif d < -half:
            d += self.track.length
        before = self.lap_progress
        self.lap_progress += d
        self._prev_delta = delta
        target = (self.laps_completed + 1) * self.track.length
        if before < target <= self.lap_progress:
            frac = (target - before) / (self.lap_progress - before)
            crossing_time = self.time - h + frac * h
            lap_time = crossing_time - self.lap_start_time
            self.laps_completed += 1
            self.lap_start_time = crossing_time
            self.last_lap_time = lap_time
            return lap_time
        return None


TELEMETRY_HEADER = "step,t,x,y,heading,Vx,Vy,steer,throttle,brake,reward,trackPos,theta,damage"


class TelemetryLogger:
    """Per-step CSV log consumed by the plotting commands."""

    def __init__(self):
        self.rows = []

    def record(self, step, env, action, result):
        s = env.state
        self.rows.append(
            (step, env.time, s.position[0], s.position[1], s.heading, s.vx, s.vy,
             action.steer, action.throttle, action.brake, result.reward,
             result.observation.track_pos, result.observation.angle, s.damage)
        )

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(TELEMETRY_HEADER + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
