"""Canonical units, Keplerian elements and element-to-Cartesian conversion.

Everything downstream works in canonical units: 1 LU = 1 AU, 1 MU = the
spacecraft initial mass and the time unit chosen so that the Sun's
gravitational parameter is exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

MU_SUN = 1.32712440018e20  # m^3/s^2
AU = 1.495978707e11  # m
G0 = 9.80665  # m/s^2

TWO_PI = 2.0 * math.pi


class ElementsError(ValueError):
    """Raised for orbital elements outside the supported (elliptic) domain."""


@dataclass(frozen=True)
class CanonicalUnits:
    """Scale factors between SI and the canonical system (mu = 1)."""

    length_unit: float = AU
    mass_unit: float = 1000.0
    mu_si: float = MU_SUN

    @property
    def time_unit(self) -> float:
        return math.sqrt(self.length_unit**3 / self.mu_si)

    @property
    def velocity_unit(self) -> float:
        return self.length_unit / self.time_unit

    @property
    def acceleration_unit(self) -> float:
        return self.length_unit / self.time_unit**2

    @property
    def force_unit(self) -> float:
        return self.mass_unit * self.acceleration_unit

    # SI <-> canonical helpers; kind is one of length, velocity, time, mass, force
    def to_canonical(self, value, kind: str):
        if isinstance(value, (list, tuple)):
            value = np.asarray(value, dtype=float)
        return value / self._scale(kind)

    def to_si(self, value, kind: str):
        if isinstance(value, (list, tuple)):
            value = np.asarray(value, dtype=float)
        return value * self._scale(kind)

    def _scale(self, kind: str) -> float:
        scales = {
            "length": self.length_unit,
            "velocity": self.velocity_unit,
            "time": self.time_unit,
            "mass": self.mass_unit,
            "force": self.force_unit,
            "acceleration": self.acceleration_unit,
            "mass_flow": self.mass_unit / self.time_unit,
        }
        try:
            return scales[kind]
        except KeyError:
            raise ValueError(f"unknown unit kind {kind!r}") from None

    def engine_constants(self, tmax_n: float, isp_s: float, g0: float = G0) -> tuple[float, float]:
        """Return nondimensional ``(c1, c2)`` for a thruster of ``tmax_n`` newtons."""
        c1 = tmax_n / self.force_unit
        c2 = (tmax_n / (isp_s * g0)) / (self.mass_unit / self.time_unit)
        return c1, c2


def _wrap(angle: float) -> float:
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod can round up to exactly 2*pi for tiny negative inputs
    return 0.0 if a >= TWO_PI else a


@dataclass(frozen=True)
class KeplerElements:
    """Elliptic Keplerian elements; angles in radians, stored in [0, 2*pi)."""

    a: float
    e: float
    i: float = 0.0
    omega: float = 0.0
    Omega: float = 0.0
    E: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.e, self.i, self.omega, self.Omega, self.E)):
            raise ElementsError("orbital elements must be finite")
        if self.a <= 0.0:
            raise ElementsError(f"semi-major axis must be positive, got {self.a}")
        if not 0.0 <= self.e < 1.0:
            raise ElementsError(f"only elliptic orbits are supported (0 <= e < 1), got e={self.e}")
        object.__setattr__(self, "i", _wrap(self.i))
        object.__setattr__(self, "omega", _wrap(self.omega))
        object.__setattr__(self, "Omega", _wrap(self.Omega))
        object.__setattr__(self, "E", _wrap(self.E))

    def with_anomaly(self, E: float) -> KeplerElements:
        return replace(self, E=E)


@dataclass(frozen=True)
class BoundaryOrbit:
    """A phase-free orbit: the anomaly of ``elements`` is ignored."""

    elements: KeplerElements
    mu: float = 1.0

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ElementsError("gravitational parameter must be positive")

    def state(self, E: float) -> tuple[np.ndarray, np.ndarray]:
        return elements_to_cartesian(self.elements.with_anomaly(E), self.mu)

    def tangent(self, E: float) -> tuple[np.ndarray, np.ndarray]:
        return orbit_tangent(self.elements.with_anomaly(E), self.mu)

    @property
    def period(self) -> float:
        return TWO_PI * math.sqrt(self.elements.a**3 / self.mu)


def rotation_matrix(i: float, omega: float, Omega: float) -> np.ndarray:
    """Perifocal-to-inertial rotation ``Rz(Omega) @ Rx(i) @ Rz(omega)``."""
    ci, si = math.cos(i), math.sin(i)
    cw, sw = math.cos(omega), math.sin(omega)
    cO, sO = math.cos(Omega), math.sin(Omega)
    return np.array(
        [
            [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
            [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
            [sw * si, cw * si, ci],
        ]
    )


def elements_to_cartesian(el: KeplerElements, mu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Position and velocity from elements parameterised by eccentric anomaly."""
    if el.e >= 1.0:
        raise ElementsError("only elliptic orbits are supported")
    R = rotation_matrix(el.i, el.omega, el.Omega)
    cE, sE = math.cos(el.E), math.sin(el.E)
    b = el.a * math.sqrt(1.0 - el.e * el.e)
    r_pf = np.array([el.a * (cE - el.e), b * sE, 0.0])
    scale = math.sqrt(mu / el.a**3) / (1.0 - el.e * cE)
    v_pf = scale * np.array([-el.a * sE, b * cE, 0.0])
    return R @ r_pf, R @ v_pf


def orbit_tangent(el: KeplerElements, mu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative of (r, v) along the fixed orbit, i.e. two-body kinematics."""
    r, v = elements_to_cartesian(el, mu)
    rn = np.linalg.norm(r)
    return v, -mu / rn**3 * r


def _orbit_samples(orbit: BoundaryOrbit, E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    el = orbit.elements
    R = rotation_matrix(el.i, el.omega, el.Omega)
    cE, sE = np.cos(E), np.sin(E)
    b = el.a * math.sqrt(1.0 - el.e**2)
    r_pf = np.stack([el.a * (cE - el.e), b * sE, np.zeros_like(E)], axis=-1)
    scale = np.sqrt(orbit.mu / el.a**3) / (1.0 - el.e * cE)
    v_pf = scale[:, None] * np.stack([-el.a * sE, b * cE, np.zeros_like(E)], axis=-1)
    return r_pf @ R.T, v_pf @ R.T


def orbit_distance(r, v, orbit: BoundaryOrbit, E, w: float = 1.0) -> np.ndarray:
    """Squared phase-space distance ``|r - r_orb(E)|^2 + w |v - v_orb(E)|^2``."""
    E = np.atleast_1d(np.asarray(E, dtype=float))
    ro, vo = _orbit_samples(orbit, E)
    dr = ro - np.asarray(r)
    dv = vo - np.asarray(v)
    return np.sum(dr * dr, axis=1) + w * np.sum(dv * dv, axis=1)


def closest_point_on_orbit(r, v, orbit: BoundaryOrbit, w: float = 1.0, n_grid: int = 720) -> tuple[float, float]:
    """Eccentric anomaly minimising :func:`orbit_distance`, and the minimum value.

    Dense grid search followed by bounded scalar refinement around the best cell.
    """
    grid = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    d = orbit_distance(r, v, orbit, grid, w)
    k = int(np.argmin(d))
    step = TWO_PI / n_grid
    res = minimize_scalar(
        lambda E: float(orbit_distance(r, v, orbit, E, w)[0]),
        bounds=(grid[k] - step, grid[k] + step),
        method="bounded",
        options={"xatol": 1e-13, "maxiter": 500},
    )
    if res.fun <= d[k]:
        return _wrap(float(res.x)), float(res.fun)
    return float(grid[k]), float(d[k])


def orbit_from_degrees(a_au: float, e: float, i_deg: float, omega_deg: float, Omega_deg: float, units: CanonicalUnits | None = None) -> BoundaryOrbit:
    units = units or CanonicalUnits()
    a = a_au * AU / units.length_unit
    el = KeplerElements(a, e, math.radians(i_deg), math.radians(omega_deg), math.radians(Omega_deg))
    return BoundaryOrbit(el, 1.0)
