"""Ground-truth systems for simulation studies.

A three-state equivalent-circuit battery model (state of charge, RC branch
voltage, core temperature) with a nested RC relaxation coefficient alpha(z, j)
to be learned, plus a 1-D sinc target family. The battery subfunctions are
simple documented surrogates; the couplings (V1-I heating, ohmic I^2 term,
ambient cooling) are all kept alive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimulationError(RuntimeError):
    """Simulated state left its validity region; carries the step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class BatteryParams:
    """Physical constants and surrogate subfunction coefficients."""

    q_bat: float = 3600.0  # capacity (A*s)
    c_c: float = 60.0  # core heat capacity (J/K)
    r_c: float = 2.0  # thermal resistance to ambient (K/W)
    t_a: float = 298.15  # ambient temperature (K)
    v0_offset: float = 3.0  # open-circuit voltage at z=0 (V)
    v0_slope: float = 0.7  # open-circuit voltage slope (V per unit z)
    beta_const: float = 20.0  # RC input gain (V/A per s)
    r0_const: float = 0.05  # series resistance (Ohm)

    def __post_init__(self):
        for name in ("q_bat", "c_c", "r_c", "t_a"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    def v0(self, z):
        return self.v0_offset + self.v0_slope * np.asarray(z, dtype=float)

    def beta(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.beta_const)

    def r0(self, z, current):
        return np.full_like(np.asarray(z, dtype=float), self.r0_const)


@dataclass(frozen=True)
class TargetFunction:
    """One realization of the target family, selected by scheduling value j."""

    family: str  # "battery_alpha" | "sinc"
    j: float

    def __post_init__(self):
        if self.family not in ("battery_alpha", "sinc"):
            raise ValueError(f"unknown target family {self.family!r}")

    def __call__(self, x):
        if self.family == "battery_alpha":
            return true_alpha(x, self.j)
        return sinc_target(x, self.j)

    @property
    def eval_domain(self) -> tuple[float, float]:
        return (0.0, 1.0) if self.family == "battery_alpha" else (-15.0, 15.0)


@dataclass
class Trajectory:
    """Simulated states, inputs and noisy outputs on a fixed time grid."""

    states: np.ndarray  # (steps+1, n_x)
    inputs: np.ndarray  # (steps,)
    outputs: np.ndarray  # (steps+1, n_y), aligned to states
    dt: float
    seed: int


def true_alpha(z, j):
    """RC relaxation coefficient family: 4j - 8j(0.5 - z)^3."""
    z = np.asarray(z, dtype=float)
    out = 4.0 * j - 8.0 * j * (0.5 - z) ** 3
    return float(out) if out.ndim == 0 else out


def sinc_target(x, j):
    """10 sinc(j x / 100) with the normalized convention sin(pi t)/(pi t)."""
    x = np.asarray(x, dtype=float)
    out = 10.0 * np.sinc(j * x / 100.0)
    return float(out) if out.ndim == 0 else out


def battery_rhs(x, current, alpha_value, params: BatteryParams, validate: bool = True):
    """Continuous-time derivatives of (z, V1, Tc); broadcasts over (..., 3)."""
    x = np.asarray(x, dtype=float)
    z, v1, tc = x[..., 0], x[..., 1], x[..., 2]
    if validate and np.any((z < 0.0) | (z > 1.0)):
        raise SimulationError("state of charge outside [0, 1]")
    dz = np.broadcast_to(np.asarray(current / params.q_bat, dtype=float), z.shape)
    dv1 = -np.asarray(alpha_value) * v1 + params.beta(z) * current
    dtc = (v1 * current + params.r0(z, current) * current**2 - (tc - params.t_a) / params.r_c) / params.c_c
    return np.stack([dz, dv1, dtc], axis=-1)


def battery_measurement(x, current, params: BatteryParams, validate: bool = True):
    """Outputs (z, terminal voltage, core temperature); broadcasts over (..., 3)."""
    x = np.asarray(x, dtype=float)
    z, v1, tc = x[..., 0], x[..., 1], x[..., 2]
    if validate and np.any((z < 0.0) | (z > 1.0)):
        raise SimulationError("state of charge outside [0, 1]")
    terminal = params.v0(z) + v1 + params.r0(z, current) * current
    return np.stack([z, terminal, tc], axis=-1)


def rk4_step(rhs, x, u, dt, xi_evaluator):
    """Classical RK4 step with the nested function re-evaluated per stage.

    rhs(x, u, xi_values) -> dx/dt; xi_evaluator(x) -> nested-function values
    at the stage state, so the learned quantity stays nested inside the
    discretized dynamics.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    k1 = rhs(x, u, xi_evaluator(x))
    x2 = x + 0.5 * dt * k1
    k2 = rhs(x2, u, xi_evaluator(x2))
    x3 = x + 0.5 * dt * k2
    k3 = rhs(x3, u, xi_evaluator(x3))
    x4 = x + dt * k3
    k4 = rhs(x4, u, xi_evaluator(x4))
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def make_input_schedule(amplitude: float = 2.0, offset: float = 2.5, frequency: float = 0.05):
    """Sinusoidal charging current amplitude*sin(2 pi frequency t) + offset.

    The default keeps z well inside (0, 1) over short horizons while exciting
    the RC branch strongly enough that the nested coefficient stays
    identifiable even where the branch voltage is small.
    """

    def schedule(t):
        return amplitude * np.sin(2.0 * np.pi * frequency * t) + offset

    return schedule


default_input_schedule = make_input_schedule()


def simulate(
    params: BatteryParams,
    x0: np.ndarray,
    input_schedule,
    Q: np.ndarray,
    R: np.ndarray,
    j_schedule,
    dt: float,
    steps: int,
    seed: int,
) -> Trajectory:
    """Noisy battery trajectory with a scheduled true alpha realization.

    input_schedule maps time (s) to current; j_schedule maps step index to
    the scheduling value j (supports the sudden-change scenario). Process
    noise N(0, Q) is added to the state after each RK4 step, measurement
    noise N(0, R) to each output. Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    lq = np.linalg.cholesky(Q) if np.any(Q) else np.zeros_like(Q)
    lr = np.linalg.cholesky(R) if np.any(R) else np.zeros_like(R)

    states = np.empty((steps + 1, 3))
    outputs = np.empty((steps + 1, 3))
    inputs = np.empty(steps)
    states[0] = x0

    def emit(k, x, current):
        y = battery_measurement(x, current, params) + lr @ rng.standard_normal(3)
        outputs[k] = y

    emit(0, x0, float(input_schedule(0.0)))
    x = x0
    for k in range(steps):
        t = k * dt
        current = float(input_schedule(t))
        j = float(j_schedule(k)) if callable(j_schedule) else float(j_schedule[k])
        inputs[k] = current

        def rhs(xx, u, alpha):
            return battery_rhs(xx, u, alpha, params, validate=False)

        x = rk4_step(rhs, x, current, dt, lambda xx: true_alpha(xx[..., 0], j))
        x = x + lq @ rng.standard_normal(3)
        if not 0.0 <= x[0] <= 1.0:
            raise SimulationError(f"state of charge left [0, 1] at step {k + 1}", step=k + 1)
        states[k + 1] = x
        emit(k + 1, x, float(input_schedule((k + 1) * dt)))
    return Trajectory(states=states, inputs=inputs, outputs=outputs, dt=dt, seed=seed)


def generate_offline_dataset(
    family: str,
    J: int,
    K: int,
    sigma_xi: float,
    input_range: tuple[float, float],
    seed: int,
    grid: str = "uniform",
):
    """Noisy samples of all J realizations: [(X_j, xi_j)] for j = 1..J.

    Inputs are a uniform grid (default) or i.i.d. uniform draws over
    input_range; observation noise is N(0, sigma_xi^2). Each realization
    uses an independent seed stream.
    """
    if J < 1 or K < 1:
        raise ValueError("J and K must be >= 1")
    lo, hi = input_range
    datasets = []
    for j in range(1, J + 1):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(j,)))
        if grid == "uniform":
            x = np.linspace(lo, hi, K)
        elif grid == "random":
            x = rng.uniform(lo, hi, size=K)
        else:
            raise ValueError(f"unknown grid kind {grid!r}")
        target = TargetFunction(family=family, j=j)
        xi = target(x) + sigma_xi * rng.standard_normal(K)
        datasets.append((x[:, None], xi))
    return datasets
