"""Vehicle motion along the street with Markov-chain acceleration.

Acceleration takes one of 2S+1 equidistant values in [-a_max, a_max]. At every
CAM instant the chain moves to each neighbouring state with probability p and
otherwise stays (edge states only have one neighbour). Between CAM instants
the acceleration is constant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import Scene
from .errors import VehicleLeftScene


@dataclass(frozen=True)
class FsmcConfig:
    s: int = 2
    a_max: float = 1.0  # m/s^2
    p: float = 0.2

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if not 0.0 < self.p <= 0.5:
            raise ValueError("p must lie in (0, 0.5]")
        if self.a_max < 0:
            raise ValueError("a_max must be non-negative")

    @property
    def num_states(self) -> int:
        return 2 * self.s + 1

    @property
    def accelerations(self) -> np.ndarray:
        step = self.a_max / self.s
        return np.array([-self.a_max + i * step for i in range(self.num_states)])

    def transition_matrix(self) -> np.ndarray:
        n, p = self.num_states, self.p
        P = np.zeros((n, n))
        for i in range(n):
            if i > 0:
                P[i, i - 1] = p
            if i < n - 1:
                P[i, i + 1] = p
            P[i, i] = 1.0 - P[i].sum()
        return P


@dataclass(frozen=True)
class MobilityConfig:
    v_min_mps: float = 30.0 / 3.6
    v_max_mps: float = 50.0 / 3.6
    delta_tau_s: float = 0.1
    direction: int = 1

    def __post_init__(self):
        if not 0.0 <= self.v_min_mps <= self.v_max_mps:
            raise ValueError("need 0 <= v_min <= v_max")
        if self.delta_tau_s <= 0:
            raise ValueError("delta_tau_s must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    t_s: float
    longitudinal_m: float
    lateral_m: float
    speed_mps: float
    accel_state: int
    step: int = 0


def init_vehicle(scene: Scene, mobility_cfg: MobilityConfig, fsmc_cfg: FsmcConfig,
                 rng: np.random.Generator, vehicle_id: int = 0) -> VehicleState:
    """Place a vehicle at the street end it drives away from.

    Draw order is fixed (column, speed, acceleration state) so traces are
    reproducible from the generator state.
    """
    column = int(rng.integers(scene.num_columns))
    speed = float(rng.uniform(mobility_cfg.v_min_mps, mobility_cfg.v_max_mps))
    accel_state = int(rng.integers(fsmc_cfg.num_states))
    start = 0.0 if mobility_cfg.direction > 0 else scene.max_longitudinal_m
    return VehicleState(
        vehicle_id=vehicle_id,
        t_s=0.0,
        longitudinal_m=start,
        lateral_m=column * scene.grid_step_m,
        speed_mps=speed,
        accel_state=accel_state,
    )


def fsmc_step(state_index: int, fsmc_cfg: FsmcConfig, rng: np.random.Generator) -> int:
    last = fsmc_cfg.num_states - 1
    u = rng.random()
    if state_index == 0:
        return 1 if u < fsmc_cfg.p else 0
    if state_index == last:
        return last - 1 if u < fsmc_cfg.p else last
    if u < fsmc_cfg.p:
        return state_index - 1
    if u < 2.0 * fsmc_cfg.p:
        return state_index + 1
    return state_index


def kinematic_update(v: VehicleState, mobility_cfg: MobilityConfig, fsmc_cfg: FsmcConfig,
                     rng: np.random.Generator, scene: Scene | None = None) -> VehicleState:
    """Advance one CAM period under constant acceleration, then step the chain.

    Speed is clamped to [v_min, v_max] after the update; the chain state is
    left alone at the bound. Raises VehicleLeftScene when ``scene`` is given
    and the new position falls off either street end.
    """
    dt = mobility_cfg.delta_tau_s
    a = float(fsmc_cfg.accelerations[v.accel_state])
    advance = v.speed_mps * dt + 0.5 * a * dt * dt
    position = v.longitudinal_m + mobility_cfg.direction * advance
    speed = min(max(v.speed_mps + a * dt, mobility_cfg.v_min_mps), mobility_cfg.v_max_mps)
    if scene is not None and not 0.0 <= position <= scene.max_longitudinal_m:
        raise VehicleLeftScene(f"vehicle {v.vehicle_id} left the street at y={position:.3f} m")
    step = v.step + 1
    return replace(
        v,
        t_s=step * dt,
        longitudinal_m=position,
        speed_mps=speed,
        accel_state=fsmc_step(v.accel_state, fsmc_cfg, rng),
        step=step,
    )


def simulate_trace(scene: Scene, mobility_cfg: MobilityConfig, fsmc_cfg: FsmcConfig,
                   rng: np.random.Generator, max_steps: int, vehicle_id: int = 0) -> list[VehicleState]:
    """States from street entry until the vehicle leaves or ``max_steps`` states exist."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    state = init_vehicle(scene, mobility_cfg, fsmc_cfg, rng, vehicle_id)
    trace = [state]
    while len(trace) < max_steps:
        try:
            state = kinematic_update(state, mobility_cfg, fsmc_cfg, rng, scene)
        except VehicleLeftScene:
            break
        trace.append(state)
    return trace


def vehicle_rng(master_seed: int, vehicle_id: int) -> np.random.Generator:
    """Independent generator per vehicle, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, vehicle_id]))
