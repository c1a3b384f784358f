"""Delayed closed-loop plant proxy.

A double integrator per axis under a PD position controller stands in for
the offloaded optimizer: the controller only ever sees the state as it was
one uplink delay ago and its commands land one downlink delay later, so
round-trip latency maps directly onto tracking error and, past a margin,
onto divergence. A second, undelayed PD loop models the onboard fallback
that holds position when offloading is abandoned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class ControllerConfig:
    period_ms: float = 50.0        # remote controller cadence
    kp: float = 4.0                # 1/s^2
    kd: float = 3.0                # 1/s
    command_limit: float = 5.0     # m/s^2, Euclidean clamp
    plant_dt_ms: float = 10.0
    divergence_threshold_m: float = 10.0

    def __post_init__(self):
        if self.period_ms <= 0 or self.plant_dt_ms <= 0:
            raise ValueError("controller and plant periods must be positive")
        if self.kp <= 0 or self.kd <= 0:
            raise ValueError("gains must be positive")


@dataclass
class PlantState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    reference: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tracking_error: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        self.tracking_error = float(
            np.linalg.norm(self.position - self.reference))


def _clamp(command: np.ndarray, limit: float) -> np.ndarray:
    norm = float(np.linalg.norm(command))
    if norm > limit:
        return command * (limit / norm)
    return command


def controller_tick(delayed_state: Optional[PlantState],
                    config: ControllerConfig,
                    ref_velocity: Optional[np.ndarray] = None) -> np.ndarray:
    """PD command on the delayed error; zero until a state arrives.

    `ref_velocity` is the planner's velocity at controller time, so damping
    acts on the velocity error rather than dragging against the motion.
    """
    if delayed_state is None:
        return np.zeros(3)
    err = delayed_state.reference - delayed_state.position
    vel_err = (ref_velocity if ref_velocity is not None else np.zeros(3)) \
        - delayed_state.velocity
    cmd = config.kp * err + config.kd * vel_err
    return _clamp(cmd, config.command_limit)


def onboard_fallback_tick(state: PlantState,
                          config: ControllerConfig) -> np.ndarray:
    """Undelayed PD toward the hold waypoint carried in state.reference."""
    err = state.reference - state.position
    cmd = config.kp * err - config.kd * state.velocity
    return _clamp(cmd, config.command_limit)


def plant_step(state: PlantState, command: np.ndarray,
               dt_ms: float) -> PlantState:
    """Semi-implicit Euler update of the double integrator."""
    dt = dt_ms / 1000.0
    state.velocity = state.velocity + command * dt
    state.position = state.position + state.velocity * dt
    state.tracking_error = float(
        np.linalg.norm(state.position - state.reference))
    return state


class CircularReference:
    """Planar circle of given radius and period at a fixed altitude."""

    def __init__(self, radius_m: float = 1.0, period_s: float = 20.0,
                 altitude_m: float = 1.0):
        if radius_m < 0 or period_s <= 0:
            raise ValueError("bad reference geometry")
        self.radius = radius_m
        self.omega = 2.0 * math.pi / period_s
        self.altitude = altitude_m

    def position(self, t_ms: float) -> np.ndarray:
        th = self.omega * t_ms / 1000.0
        return np.array([self.radius * math.cos(th),
                         self.radius * math.sin(th), self.altitude])

    def velocity(self, t_ms: float) -> np.ndarray:
        th = self.omega * t_ms / 1000.0
        v = self.radius * self.omega
        return np.array([-v * math.sin(th), v * math.cos(th), 0.0])


@dataclass
class FixedDelayResult:
    max_error: float
    steady_error: float        # max over the final third of the run
    diverged: bool
    divergence_time_ms: Optional[float]


def run_fixed_delay_loop(rtt_ms: float, duration_ms: float = 60_000.0,
                         config: Optional[ControllerConfig] = None,
                         reference: Optional[CircularReference] = None,
                         rtt_override=None) -> FixedDelayResult:
    """Closed loop under a constant round-trip delay, split evenly between
    the state uplink and the command downlink.

    `rtt_override(t_ms)` may replace the delay for part of the run (used to
    study priority switches). The loop is fully deterministic.
    """
    cfg = config or ControllerConfig()
    ref = reference or CircularReference()
    dt = cfg.plant_dt_ms
    state = PlantState(position=ref.position(0.0),
                       velocity=ref.velocity(0.0),
                       reference=ref.position(0.0))

    snapshots: list[tuple[float, np.ndarray, np.ndarray]] = []
    pending: list[tuple[float, np.ndarray]] = []   # (apply_at, command)
    current_cmd = np.zeros(3)
    max_err = 0.0
    steady_start = duration_ms * 2.0 / 3.0
    steady_err = 0.0
    diverged = False
    diverged_at = None

    n_steps = int(round(duration_ms / dt))
    ctrl_every = max(1, int(round(cfg.period_ms / dt)))
    for k in range(n_steps):
        t = k * dt
        rtt = rtt_override(t) if rtt_override is not None else rtt_ms
        one_way = rtt / 2.0
        snapshots.append((t, state.position.copy(), state.velocity.copy()))

        if k % ctrl_every == 0:
            # most recent snapshot old enough to have crossed the uplink
            seen = None
            for ts, pos, vel in reversed(snapshots):
                if ts <= t - one_way:
                    seen = PlantState(position=pos, velocity=vel,
                                      reference=ref.position(t))
                    break
            cmd = controller_tick(seen, cfg, ref_velocity=ref.velocity(t))
            pending.append((t + one_way, cmd))
            if len(snapshots) > 4096:
                del snapshots[:2048]

        while pending and pending[0][0] <= t:
            current_cmd = pending.pop(0)[1]

        state.reference = ref.position(t)
        plant_step(state, current_cmd, dt)
        max_err = max(max_err, state.tracking_error)
        if t >= steady_start:
            steady_err = max(steady_err, state.tracking_error)
        if not diverged and (state.tracking_error > cfg.divergence_threshold_m
                             or not np.isfinite(state.position).all()):
            diverged = True
            diverged_at = t
            break

    return FixedDelayResult(max_err, steady_err, diverged, diverged_at)
