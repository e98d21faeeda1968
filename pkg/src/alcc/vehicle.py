"""Longitudinal force balance, polynomial motor power model and the IDM.

Everything here is a pure function of its arguments. Units are SI throughout:
m, s, m/s, m/s^2, N, W, J.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the passenger car (road grade is always 0)."""

    mass: float = 1005.0
    drag_coefficient: float = 0.3
    frontal_area: float = 2.02
    rolling_resistance: float = 0.015
    air_density: float = 1.206
    gravity: float = 9.81
    rotational_inertia_coeff: float = 1.02
    road_grade: float = 0.0

    def __post_init__(self):
        if self.mass <= 0 or self.frontal_area <= 0 or self.air_density <= 0:
            raise ValueError("mass, frontal_area and air_density must be positive")
        if self.rotational_inertia_coeff < 1:
            raise ValueError("rotational_inertia_coeff must be >= 1")
        if self.road_grade != 0:
            raise ValueError("only flat roads (road_grade = 0) are supported")


# Nonzero entries of the fitted power polynomial, keyed (speed power, accel power).
DEFAULT_POWER_TERMS = {
    (0, 0): 110.3,
    (1, 0): 422.9,
    (0, 1): 1213.0,
    (2, 0): -0.0279,
    (1, 1): 2484.0,
    (0, 2): 2911.0,
    (3, 0): 0.3557,
    (2, 1): 1.374,
    (1, 2): 25.19,
}


def _default_table() -> tuple:
    table = [[0.0] * 3 for _ in range(4)]
    for (i, j), value in DEFAULT_POWER_TERMS.items():
        table[i][j] = value
    return tuple(tuple(row) for row in table)


@dataclass(frozen=True)
class EnergyCoefficients:
    """Coefficients ``p[i][j]`` of ``P(v, a) = sum p_ij v^i a^j``, i <= 3, j <= 2.

    ``clamp_negative`` floors the power at zero (no regenerative credit).
    """

    p: tuple = field(default_factory=_default_table)
    clamp_negative: bool = True

    def __post_init__(self):
        rows = tuple(tuple(float(x) for x in row) for row in self.p)
        if len(rows) != 4 or any(len(row) != 3 for row in rows):
            raise ValueError("energy coefficient table must be 4 x 3 (i = 0..3, j = 0..2)")
        if not all(math.isfinite(x) for row in rows for x in row):
            raise ValueError("energy coefficients must be finite")
        object.__setattr__(self, "p", rows)

    @classmethod
    def zeros(cls) -> "EnergyCoefficients":
        return cls(p=tuple((0.0, 0.0, 0.0) for _ in range(4)))

    def as_array(self) -> np.ndarray:
        return np.array(self.p, dtype=float)


@dataclass(frozen=True)
class IdmParams:
    """IDM driving preferences.

    ``v0`` desired speed, ``T`` desired time gap, ``a`` maximum acceleration,
    ``b`` comfortable deceleration, ``s0`` minimum gap, ``delta`` acceleration
    exponent. Only ``v0`` and ``T`` vary across the calibrated population; the
    remaining defaults are the usual literature values.
    """

    v0: float = 25.0
    T: float = 1.2
    a: float = 1.0
    b: float = 1.5
    s0: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        for name in ("v0", "T", "a", "b", "s0", "delta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"IDM parameter {name} must be positive and finite, got {value}")

    def with_preferences(self, v0: float, T: float) -> "IdmParams":
        return replace(self, v0=float(v0), T=float(T))


def traction_force(params: VehicleParams, speed: float, accel: float) -> float:
    """Driving force needed to realise ``accel`` at ``speed`` on a flat road."""
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    m = params.mass
    inertia = params.rotational_inertia_coeff * m * accel
    rolling = m * params.gravity * params.rolling_resistance
    aero = 0.5 * params.drag_coefficient * params.frontal_area * params.air_density * speed**2
    return inertia + rolling + aero


def motor_power(coeffs: EnergyCoefficients, speed: float, accel: float) -> float:
    """Demand power of the motor in W."""
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    p = coeffs.p
    total = 0.0
    vi = 1.0
    for i in range(4):
        row = p[i]
        total += vi * (row[0] + accel * (row[1] + accel * row[2]))
        vi *= speed
    if coeffs.clamp_negative and total < 0.0:
        return 0.0
    return total


def motor_power_array(coeffs: EnergyCoefficients, speeds, accels) -> np.ndarray:
    """Vectorised :func:`motor_power` over equal-shaped arrays."""
    v = np.asarray(speeds, dtype=float)
    a = np.asarray(accels, dtype=float)
    if np.any(v < 0):
        raise ValueError("speeds must be non-negative")
    p = coeffs.p
    total = np.zeros(np.broadcast(v, a).shape)
    vi = np.ones_like(total)
    for i in range(4):
        row = p[i]
        total = total + vi * (row[0] + a * (row[1] + a * row[2]))
        vi = vi * v
    if coeffs.clamp_negative:
        total = np.maximum(total, 0.0)
    return total


def trip_energy(coeffs: EnergyCoefficients, speeds, accels, dt: float) -> float:
    """Left-endpoint integral of motor power over a sampled trip, in J."""
    v = np.asarray(speeds, dtype=float)
    a = np.asarray(accels, dtype=float)
    if v.shape != a.shape:
        raise ValueError(f"speed and accel series differ in length: {v.shape} vs {a.shape}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if v.size == 0:
        return 0.0
    return float(np.sum(motor_power_array(coeffs, v, a)) * dt)


def desired_gap(p: IdmParams, speed: float, approach_rate: float) -> float:
    return p.s0 + max(0.0, speed * p.T + speed * approach_rate / (2.0 * math.sqrt(p.a * p.b)))


def idm_acceleration(p: IdmParams, speed: float, approach_rate: float, gap: float) -> float:
    """IDM acceleration.

    ``approach_rate`` is follower speed minus leader speed, so a positive value
    means the gap is closing.
    """
    if not gap > 0:
        raise ValueError(f"gap must be positive, got {gap}")
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    s_star = desired_gap(p, speed, approach_rate)
    return p.a * (1.0 - (speed / p.v0) ** p.delta - (s_star / gap) ** 2)


def idm_equilibrium_gap(p: IdmParams, speed: float) -> float:
    """Gap at which a follower cruising at ``speed`` behind an equal-speed leader has zero acceleration."""
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    if speed >= p.v0:
        raise ValueError(f"no finite equilibrium gap at speed {speed} >= v0 {p.v0}")
    return (p.s0 + speed * p.T) / math.sqrt(1.0 - (speed / p.v0) ** p.delta)
