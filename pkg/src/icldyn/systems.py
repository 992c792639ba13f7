"""Randomized system classes: stable discrete-time linear systems and damped 1-/2-link pendulums."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import NumericalDivergence


class SystemClassConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["Linear", "Pendulum"] = "Linear"
    n_x: int = 4
    d_u: int = 2
    d_y: int = 2
    # linear
    spectral_radius_range: tuple[float, float] = (0.5, 0.95)
    coupling_scale: float = 1.0
    # pendulum
    links: Literal[1, 2] = 2
    mass_range: tuple[float, float] = (0.5, 1.5)
    length_range: tuple[float, float] = (0.5, 1.0)
    damping_range: tuple[float, float] = (0.05, 0.3)
    gravity: float = 9.81
    substeps: int = 4
    x0_scale: float = 0.1
    blowup: float = 1e6

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.spectral_radius_range
        if not (0 < lo <= hi < 1):
            raise ValueError(f"spectral_radius_range must lie in (0, 1), got {self.spectral_radius_range}")
        for name in ("mass_range", "length_range", "damping_range"):
            a, b = getattr(self, name)
            if not (0 < a <= b):
                raise ValueError(f"{name} must be a positive interval, got {(a, b)}")
        if self.kind == "Pendulum" and not (self.d_u == self.d_y == self.links):
            raise ValueError("pendulum classes need d_u = d_y = links")
        if self.kind == "Pendulum" and self.n_x != 2 * self.links:
            raise ValueError("pendulum state is (angles, rates): n_x must equal 2 * links")
        if min(self.n_x, self.d_u, self.d_y, self.substeps) < 1:
            raise ValueError("dimensions and substeps must be >= 1")
        if self.x0_scale < 0 or self.coupling_scale < 0 or self.gravity <= 0:
            raise ValueError("x0_scale/coupling_scale must be >= 0 and gravity > 0")
        return self

    @classmethod
    def pendulum(cls, links: int = 2, **kw) -> "SystemClassConfig":
        return cls(kind="Pendulum", links=links, n_x=2 * links, d_u=links, d_y=links, **kw)


@dataclass
class SystemSpec:
    kind: str
    x0: np.ndarray
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    C_out: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    lengths: Optional[np.ndarray] = None
    dampings: Optional[np.ndarray] = None
    gravity: float = 9.81
    substeps: int = 1
    blowup: float = 1e6
    extra: dict = field(default_factory=dict)

    @property
    def d_y(self) -> int:
        return self.C_out.shape[0] if self.kind == "Linear" else len(self.masses)

    def summary_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.A, self.B, self.C_out, self.masses, self.lengths, self.dampings, self.x0):
            if arr is not None:
                h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(json.dumps([self.kind, self.gravity, self.substeps]).encode())
        return h.hexdigest()[:16]


def _random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def sample_system(cls: SystemClassConfig, rng: np.random.Generator) -> SystemSpec:
    if cls.kind == "Linear":
        n = cls.n_x
        lo, hi = cls.spectral_radius_range
        core = np.zeros((n, n))
        i = 0
        while i < n:
            r = rng.uniform(lo, hi)
            if i + 1 < n:
                th = rng.uniform(0.0, np.pi)
                c, s = np.cos(th), np.sin(th)
                core[i : i + 2, i : i + 2] = r * np.array([[c, -s], [s, c]])
                i += 2
            else:
                core[i, i] = r * rng.choice([-1.0, 1.0])
                i += 1
        q = _random_orthogonal(n, rng)
        A = q @ core @ q.T
        k = cls.coupling_scale
        B = rng.uniform(-k, k, size=(n, cls.d_u))
        C = rng.uniform(-k, k, size=(cls.d_y, n))
        x0 = rng.uniform(-cls.x0_scale, cls.x0_scale, size=n)
        return SystemSpec("Linear", x0=x0, A=A, B=B, C_out=C, blowup=cls.blowup)

    L = cls.links
    masses = rng.uniform(*cls.mass_range, size=L)
    lengths = rng.uniform(*cls.length_range, size=L)
    dampings = rng.uniform(*cls.damping_range, size=L)
    x0 = rng.uniform(-cls.x0_scale, cls.x0_scale, size=2 * L)
    return SystemSpec(
        "Pendulum", x0=x0, masses=masses, lengths=lengths, dampings=dampings,
        gravity=cls.gravity, substeps=cls.substeps, blowup=cls.blowup,
    )


# Pendulum dynamics. Angles are relative joint angles measured from hanging straight
# down; links are massless rods with point masses at their tips.

def _mass_matrix(spec: SystemSpec, q: np.ndarray) -> np.ndarray:
    m, l = spec.masses, spec.lengths
    if len(m) == 1:
        return np.array([[m[0] * l[0] ** 2]])
    c2 = np.cos(q[1])
    m11 = (m[0] + m[1]) * l[0] ** 2 + m[1] * l[1] ** 2 + 2 * m[1] * l[0] * l[1] * c2
    m12 = m[1] * l[1] ** 2 + m[1] * l[0] * l[1] * c2
    m22 = m[1] * l[1] ** 2
    return np.array([[m11, m12], [m12, m22]])


def _bias_forces(spec: SystemSpec, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal plus gravity terms, c(q, qd) + g(q)."""
    m, l, g = spec.masses, spec.lengths, spec.gravity
    if len(m) == 1:
        return np.array([m[0] * g * l[0] * np.sin(q[0])])
    s2 = np.sin(q[1])
    h = m[1] * l[0] * l[1] * s2
    cor = np.array([-h * (2 * qd[0] * qd[1] + qd[1] ** 2), h * qd[0] ** 2])
    s1, s12 = np.sin(q[0]), np.sin(q[0] + q[1])
    grav = np.array([(m[0] + m[1]) * g * l[0] * s1 + m[1] * g * l[1] * s12, m[1] * g * l[1] * s12])
    return cor + grav


def _pendulum_rhs(spec: SystemSpec, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
    L = len(spec.masses)
    q, qd = x[:L], x[L:]
    rhs = tau - spec.dampings * qd - _bias_forces(spec, q, qd)
    qdd = np.linalg.solve(_mass_matrix(spec, q), rhs)
    return np.concatenate([qd, qdd])


def rk4_step(spec: SystemSpec, x: np.ndarray, tau: np.ndarray, h: float) -> np.ndarray:
    k1 = _pendulum_rhs(spec, x, tau)
    k2 = _pendulum_rhs(spec, x + 0.5 * h * k1, tau)
    k3 = _pendulum_rhs(spec, x + 0.5 * h * k2, tau)
    k4 = _pendulum_rhs(spec, x + h * k3, tau)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def pendulum_energy(spec: SystemSpec, state) -> float:
    """Kinetic plus gravitational potential energy (zero potential at the pivot height)."""
    L = len(spec.masses)
    state = np.asarray(state, dtype=np.float64)
    q, qd = state[:L], state[L:]
    kinetic = 0.5 * qd @ _mass_matrix(spec, q) @ qd
    m, l, g = spec.masses, spec.lengths, spec.gravity
    if L == 1:
        potential = -m[0] * g * l[0] * np.cos(q[0])
    else:
        potential = -(m[0] + m[1]) * g * l[0] * np.cos(q[0]) - m[1] * g * l[1] * np.cos(q[0] + q[1])
    return float(kinetic + potential)


def _check_blowup(x: np.ndarray, bound: float, k: int):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
        raise NumericalDivergence(f"state magnitude exceeded {bound:g} at step {k}")


def simulate(spec: SystemSpec, u: np.ndarray, dt: float) -> np.ndarray:
    """Roll the system forward under input sequence ``u`` (n x d_u) and return outputs (n x d_y).

    The input is held constant over each interval; output k is read before input k acts.
    """
    u = np.asarray(u, dtype=np.float64)
    if dt <= 0 or not np.all(np.isfinite(u)):
        raise ValueError("simulate needs dt > 0 and finite inputs")
    n = u.shape[0]
    x = np.array(spec.x0, dtype=np.float64)

    if spec.kind == "Linear":
        A, B, C = spec.A, spec.B, spec.C_out
        y = np.empty((n, C.shape[0]))
        for k in range(n):
            y[k] = C @ x
            x = A @ x + B @ u[k]
            _check_blowup(x, spec.blowup, k)
        return y

    L = len(spec.masses)
    h = dt / spec.substeps
    y = np.empty((n, L))
    for k in range(n):
        y[k] = x[:L]
        for _ in range(spec.substeps):
            x = rk4_step(spec, x, u[k], h)
        _check_blowup(x, spec.blowup, k)
    return y
