"""Robot models, RK4 discretization and the orientation embedding.

All model functions are batched: states have shape ``(K, nx)`` and controls
``(K, nu)``. Jacobians are analytic so the optimizer gets exact first
derivatives of the discretized dynamics.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import NumericError


class RobotModel:
    """Base class. Subclasses fill in the dimensions, bounds and ``f``/``jac``.

    Path constraints come in three flavors so the solver can treat the convex
    ones exactly: sum-of-squares bounds on state or control entries
    (``‖x[idx]‖² ≤ bound²``), box bounds, and general nonlinear ``h_extra``.
    """

    name = "model"
    nx = 0
    nu = 0
    dim = 0

    def __init__(self, v_max: float, a_max: float):
        if not (v_max > 0 and a_max > 0):
            raise ValueError("v_max and a_max must be positive")
        self.v_max = float(v_max)
        self.a_max = float(a_max)

    # -- structure --------------------------------------------------------
    pos_idx: np.ndarray
    vel_idx: np.ndarray  # rows of S_v (full stop)
    angle_idx: np.ndarray = np.array([], dtype=int)

    @property
    def S_p(self) -> np.ndarray:
        return np.eye(self.nx)[self.pos_idx]

    @property
    def S_v(self) -> np.ndarray:
        return np.eye(self.nx)[self.vel_idx]

    @property
    def nq(self) -> int:
        return self.nx + len(self.angle_idx)

    def x_bounds(self):
        return np.full(self.nx, -np.inf), np.full(self.nx, np.inf)

    def u_bounds(self):
        return np.full(self.nu, -np.inf), np.full(self.nu, np.inf)

    def sos_state(self):
        """List of ``(indices, bound)`` with ``‖x[indices]‖ ≤ bound``."""
        return []

    def sos_control(self):
        return []

    def h_extra(self, X, U):
        """Nonconvex path constraints ``(K, m) ≤ 0`` and their Jacobians."""
        K = len(X)
        return np.zeros((K, 0)), np.zeros((K, 0, self.nx)), np.zeros((K, 0, self.nu))

    def steady_control(self, x) -> np.ndarray:
        return np.zeros(self.nu)

    # -- dynamics ---------------------------------------------------------
    def f(self, X, U) -> np.ndarray:
        raise NotImplementedError

    def jac(self, X, U):
        raise NotImplementedError

    def positions(self, X) -> np.ndarray:
        return np.asarray(X)[..., self.pos_idx]

    def position_velocity(self, X) -> np.ndarray:
        """Time derivative of the position, shape ``(K, dim)``."""
        return self.f(X, np.zeros((len(X), self.nu)))[:, self.pos_idx]

    def h(self, x, u=None) -> np.ndarray:
        """All path constraints at one stage as a flat vector (``≤ 0`` is feasible).

        Speed and total-acceleration bounds are written squared so ``h`` is
        smooth; box bounds follow as ``lower - x`` and ``x - upper`` for finite
        entries. Without ``u`` only the state part is evaluated.
        """
        x = np.asarray(x, dtype=float)
        out = [np.sum(x[idx] ** 2) - b ** 2 for idx, b in self.sos_state()]
        lo, hi = self.x_bounds()
        out += list((lo - x)[np.isfinite(lo)]) + list((x - hi)[np.isfinite(hi)])
        if u is not None:
            u = np.asarray(u, dtype=float)
            out += [np.sum(u[idx] ** 2) - b ** 2 for idx, b in self.sos_control()]
            lo, hi = self.u_bounds()
            out += list((lo - u)[np.isfinite(lo)]) + list((u - hi)[np.isfinite(hi)])
            out += list(self.h_extra(x[None], u[None])[0][0])
        return np.array(out, dtype=float)

    # -- orientation embedding -------------------------------------------
    def _aug_layout(self):
        """For each entry of ``q``: source state index and kind (0 copy, 1 cos, 2 sin)."""
        src, kind = [], []
        angles = set(int(a) for a in self.angle_idx)
        for i in range(self.nx):
            if i in angles:
                src += [i, i]
                kind += [1, 2]
            else:
                src.append(i)
                kind.append(0)
        return np.array(src), np.array(kind)

    def augment(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        src, kind = self._aug_layout()
        Q = X[:, src].copy()
        Q[:, kind == 1] = np.cos(Q[:, kind == 1])
        Q[:, kind == 2] = np.sin(Q[:, kind == 2])
        return Q

    def augment_jac(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        src, kind = self._aug_layout()
        Jq = np.zeros((len(X), len(src), self.nx))
        vals = X[:, src]
        d = np.where(kind == 0, 1.0, 0.0) + np.where(kind == 1, -np.sin(vals), 0.0) \
            + np.where(kind == 2, np.cos(vals), 0.0)
        Jq[:, np.arange(len(src)), src] = d
        return Jq

    def __repr__(self):
        return f"{type(self).__name__}(v_max={self.v_max}, a_max={self.a_max})"


class DoubleIntegrator(RobotModel):
    """``x = [p, ṗ]``, ``u = p̈`` in ``n`` dimensions."""

    name = "double_integrator"

    def __init__(self, dim: int = 2, v_max: float = 1.0, a_max: float = 1.0):
        super().__init__(v_max, a_max)
        self.dim = int(dim)
        self.nx = 2 * self.dim
        self.nu = self.dim
        self.pos_idx = np.arange(self.dim)
        self.vel_idx = np.arange(self.dim, 2 * self.dim)

    def sos_state(self):
        return [(self.vel_idx, self.v_max)]

    def sos_control(self):
        return [(np.arange(self.nu), self.a_max)]

    def f(self, X, U):
        return np.concatenate([X[:, self.dim:], U], axis=1)

    def jac(self, X, U):
        K, n = len(X), self.dim
        A = np.zeros((K, self.nx, self.nx))
        B = np.zeros((K, self.nx, self.nu))
        A[:, np.arange(n), np.arange(n, 2 * n)] = 1.0
        B[:, np.arange(n, 2 * n), np.arange(n)] = 1.0
        return A, B


class Unicycle(RobotModel):
    """Differential drive: ``x = [px, py, θ, v, ω]``, ``u = [v̇, ω̇]``.

    Total acceleration of the wheel-axle midpoint is ``v̇² + (vω)²``.
    """

    name = "unicycle"
    nx = 5
    nu = 2
    dim = 2

    def __init__(self, v_max=1.0, a_max=1.0, omega_max=1.5, alpha_max=3.0):
        super().__init__(v_max, a_max)
        self.omega_max = float(omega_max)
        self.alpha_max = float(alpha_max)
        self.pos_idx = np.array([0, 1])
        self.vel_idx = np.array([3, 4])
        self.angle_idx = np.array([2])

    def x_bounds(self):
        inf = np.inf
        return (np.array([-inf, -inf, -inf, -self.v_max, -self.omega_max]),
                np.array([inf, inf, inf, self.v_max, self.omega_max]))

    def u_bounds(self):
        return (np.array([-self.a_max, -self.alpha_max]),
                np.array([self.a_max, self.alpha_max]))

    def h_extra(self, X, U):
        v, w = X[:, 3], X[:, 4]
        val = U[:, 0] ** 2 + (v * w) ** 2 - self.a_max ** 2
        Jx = np.zeros((len(X), 1, 5))
        Jx[:, 0, 3] = 2 * v * w * w
        Jx[:, 0, 4] = 2 * v * v * w
        Ju = np.zeros((len(X), 1, 2))
        Ju[:, 0, 0] = 2 * U[:, 0]
        return val[:, None], Jx, Ju

    def f(self, X, U):
        th, v, w = X[:, 2], X[:, 3], X[:, 4]
        return np.stack([v * np.cos(th), v * np.sin(th), w, U[:, 0], U[:, 1]], axis=1)

    def jac(self, X, U):
        K = len(X)
        th, v = X[:, 2], X[:, 3]
        A = np.zeros((K, 5, 5))
        A[:, 0, 2] = -v * np.sin(th)
        A[:, 0, 3] = np.cos(th)
        A[:, 1, 2] = v * np.cos(th)
        A[:, 1, 3] = np.sin(th)
        A[:, 2, 4] = 1.0
        B = np.zeros((K, 5, 2))
        B[:, 3, 0] = 1.0
        B[:, 4, 1] = 1.0
        return A, B


def _skew(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


class FreeFlyer(RobotModel):
    """Rigid body with direct force and torque inputs (12 states, 6 controls).

    ``x = [p(3), v(3), roll, pitch, yaw, ω_body(3)]``, ``u = [F_world(3), τ_body(3)]``.
    Attitude kinematics use the ZYX Euler rate map, so pitch is kept inside
    ``±pitch_max`` to stay away from the singularity. Defaults are roughly
    Astrobee-sized.
    """

    name = "free_flyer"
    nx = 12
    nu = 6
    dim = 3

    def __init__(self, v_max=0.5, a_max=0.1, mass=9.58, inertia=(0.153, 0.143, 0.162),
                 omega_max=0.5, torque_max=0.1, pitch_max=1.2):
        super().__init__(v_max, a_max)
        self.mass = float(mass)
        self.J = np.diag(np.asarray(inertia, dtype=float))
        self.J_inv = np.linalg.inv(self.J)
        self.omega_max = float(omega_max)
        self.torque_max = float(torque_max)
        self.pitch_max = float(pitch_max)
        self.pos_idx = np.arange(3)
        self.vel_idx = np.r_[3:6, 9:12]
        self.angle_idx = np.arange(6, 9)

    def sos_state(self):
        return [(np.arange(3, 6), self.v_max)]

    def sos_control(self):
        return [(np.arange(3), self.mass * self.a_max)]

    def x_bounds(self):
        lo = np.full(12, -np.inf)
        hi = np.full(12, np.inf)
        lo[7], hi[7] = -self.pitch_max, self.pitch_max
        lo[9:12], hi[9:12] = -self.omega_max, self.omega_max
        return lo, hi

    def u_bounds(self):
        fmax = self.mass * self.a_max
        t = self.torque_max
        return np.array([-fmax] * 3 + [-t] * 3), np.array([fmax] * 3 + [t] * 3)

    def _euler_rates(self, X):
        phi, th = X[:, 6], X[:, 7]
        w = X[:, 9:12]
        sp, cp, tt, ct = np.sin(phi), np.cos(phi), np.tan(th), np.cos(th)
        e1 = w[:, 0] + sp * tt * w[:, 1] + cp * tt * w[:, 2]
        e2 = cp * w[:, 1] - sp * w[:, 2]
        e3 = (sp * w[:, 1] + cp * w[:, 2]) / ct
        return np.stack([e1, e2, e3], axis=1)

    def f(self, X, U):
        w = X[:, 9:12]
        Jw = w @ self.J.T
        wdot = (U[:, 3:6] - np.cross(w, Jw)) @ self.J_inv.T
        return np.concatenate([X[:, 3:6], U[:, :3] / self.mass, self._euler_rates(X), wdot], axis=1)

    def jac(self, X, U):
        K = len(X)
        A = np.zeros((K, 12, 12))
        B = np.zeros((K, 12, 6))
        A[:, 0:3, 3:6] = np.eye(3)
        B[:, 3:6, 0:3] = np.eye(3) / self.mass
        phi, th = X[:, 6], X[:, 7]
        w = X[:, 9:12]
        sp, cp, tt, ct, st = np.sin(phi), np.cos(phi), np.tan(th), np.cos(th), np.sin(th)
        w2, w3 = w[:, 1], w[:, 2]
        a = sp * w2 + cp * w3
        b = cp * w2 - sp * w3
        A[:, 6, 6] = b * tt
        A[:, 6, 7] = a / ct ** 2
        A[:, 7, 6] = -a
        A[:, 8, 6] = b / ct
        A[:, 8, 7] = a * st / ct ** 2
        W = np.zeros((K, 3, 3))
        W[:, 0, 0] = 1.0
        W[:, 0, 1], W[:, 0, 2] = sp * tt, cp * tt
        W[:, 1, 1], W[:, 1, 2] = cp, -sp
        W[:, 2, 1], W[:, 2, 2] = sp / ct, cp / ct
        A[:, 6:9, 9:12] = W
        Jw = w @ self.J.T
        dgyro = _skew(w) @ self.J - _skew(Jw)
        A[:, 9:12, 9:12] = -self.J_inv @ dgyro
        B[:, 9:12, 3:6] = self.J_inv
        return A, B


MODELS = {
    "double_integrator": DoubleIntegrator,
    "unicycle": Unicycle,
    "free_flyer": FreeFlyer,
}


def make_model(name: str, **params) -> RobotModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)


def rk4(model: RobotModel, X, U, dt: float, jac: bool = False):
    """One RK4 step for a batch; with ``jac`` also returns ``∂F/∂x`` and ``∂F/∂u``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(U))):
        raise NumericError("non-finite state or control")
    h2 = 0.5 * dt
    k1 = model.f(X, U)
    X2 = X + h2 * k1
    k2 = model.f(X2, U)
    X3 = X + h2 * k2
    k3 = model.f(X3, U)
    X4 = X + dt * k3
    k4 = model.f(X4, U)
    Xn = X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not jac:
        return Xn
    eye = np.eye(model.nx)
    A1, B1 = model.jac(X, U)
    A2, B2 = model.jac(X2, U)
    A3, B3 = model.jac(X3, U)
    A4, B4 = model.jac(X4, U)
    K1x, K1u = A1, B1
    K2x = A2 @ (eye + h2 * K1x)
    K2u = A2 @ (h2 * K1u) + B2
    K3x = A3 @ (eye + h2 * K2x)
    K3u = A3 @ (h2 * K2u) + B3
    K4x = A4 @ (eye + dt * K3x)
    K4u = A4 @ (dt * K3u) + B4
    Fx = eye + dt / 6.0 * (K1x + 2 * K2x + 2 * K3x + K4x)
    Fu = dt / 6.0 * (K1u + 2 * K2u + 2 * K3u + K4u)
    return Xn, Fx, Fu


def integrate(model: RobotModel, x, u, dt: float) -> np.ndarray:
    """Single-stage RK4 step ``F(x, u; dt)``."""
    return rk4(model, np.asarray(x, dtype=float)[None], np.asarray(u, dtype=float)[None], dt)[0]


def simulate(model: RobotModel, x0, controls, dt: float, substeps: int = 1) -> np.ndarray:
    """Zero-order-hold rollout with ``substeps`` RK4 steps per control interval.

    Returns the states at every substep, shape ``(len(controls)*substeps + 1, nx)``.
    """
    x = np.asarray(x0, dtype=float)
    h = dt / substeps
    out = [x]
    for u in np.atleast_2d(controls):
        for _ in range(substeps):
            x = integrate(model, x, u, h)
            out.append(x)
    return np.array(out)


def orientation_distance(theta1: float, theta2: float) -> float:
    """Chord length between two angles on the unit circle."""
    return math.hypot(math.cos(theta1) - math.cos(theta2), math.sin(theta1) - math.sin(theta2))


def augment(model: RobotModel, x) -> np.ndarray:
    """Replace each orientation entry θ in place by the pair (cos θ, sin θ)."""
    return model.augment(np.asarray(x, dtype=float)[None])[0]
