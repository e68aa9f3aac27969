"""Kinematic bicycle model and its RK4 stepper.

Shared by the plant, the reachability bounds and the NMPC prediction model so
that planner and plant agree exactly (up to the optional actuator lag the sim
engine can add on the plant side).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


@dataclass(frozen=True)
class VehicleState:
    x: float    # longitudinal position in world frame (m)
    y: float    # lateral position in world frame (m)
    psi: float  # heading in world frame (rad), wrapped to (-pi, pi]
    v: float    # speed (m/s), >= 0


@dataclass(frozen=True)
class ControlInput:
    a: float      # longitudinal acceleration (m/s^2)
    delta: float  # front steering angle (rad)


@dataclass(frozen=True)
class VehicleGeometry:
    l_f: float = 1.4      # CoM to front axle (m)
    l_r: float = 1.4      # CoM to rear axle (m)
    length: float = 4.5   # body length (m)
    width: float = 1.8    # body width (m)

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r


@dataclass(frozen=True)
class ControlLimits:
    a_min: float = -5.0
    a_max: float = 3.0
    delta_min: float = -0.6
    delta_max: float = 0.6

    def clamp(self, u: ControlInput) -> ControlInput:
        return ControlInput(
            a=min(max(u.a, self.a_min), self.a_max),
            delta=min(max(u.delta, self.delta_min), self.delta_max),
        )

    def contains(self, u: ControlInput, tol: float = 1e-9) -> bool:
        return (self.a_min - tol <= u.a <= self.a_max + tol
                and self.delta_min - tol <= u.delta <= self.delta_max + tol)


def slip_angle(delta: float, geom: VehicleGeometry) -> float:
    """Velocity angle of the CoM relative to the body axis: atan(l_r*tan(delta)/(l_f+l_r))."""
    return math.atan(geom.l_r * math.tan(delta) / geom.wheelbase)


def derivative(state: VehicleState, u: ControlInput, geom: VehicleGeometry):
    """Time derivative (dx, dy, dpsi, dv) of the bicycle model."""
    beta = slip_angle(u.delta, geom)
    return (
        state.v * math.cos(state.psi + beta),
        state.v * math.sin(state.psi + beta),
        state.v / geom.wheelbase * math.cos(beta) * math.tan(u.delta),
        u.a,
    )


def _deriv_raw(x: float, y: float, psi: float, v: float, a: float, delta: float,
               geom: VehicleGeometry):
    beta = slip_angle(delta, geom)
    return (
        v * math.cos(psi + beta),
        v * math.sin(psi + beta),
        v / geom.wheelbase * math.cos(beta) * math.tan(delta),
        a,
    )


def step(state: VehicleState, u: ControlInput, geom: VehicleGeometry, dt: float) -> VehicleState:
    """One RK4 step of dt seconds; heading re-wrapped, speed clamped at 0 from below."""
    x, y, psi, v = state.x, state.y, state.psi, state.v
    a, d = u.a, u.delta

    k1 = _deriv_raw(x, y, psi, v, a, d, geom)
    k2 = _deriv_raw(x + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1],
                    psi + 0.5 * dt * k1[2], v + 0.5 * dt * k1[3], a, d, geom)
    k3 = _deriv_raw(x + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1],
                    psi + 0.5 * dt * k2[2], v + 0.5 * dt * k2[3], a, d, geom)
    k4 = _deriv_raw(x + dt * k3[0], y + dt * k3[1],
                    psi + dt * k3[2], v + dt * k3[3], a, d, geom)

    sixth = dt / 6.0
    return VehicleState(
        x=x + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y=y + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        psi=wrap_angle(psi + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])),
        v=max(0.0, v + sixth * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])),
    )
