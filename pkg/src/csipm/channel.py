"""Street-canyon multipath channel between the gNB panel and a vehicle.

Paths come from a deterministic image method (line of sight, ground bounce,
one bounce off each street wall, and one ground+wall double bounce) and are
combined with the ray-sum channel formula

    h_k = sum_l sqrt(rho_l / K) * exp(j*(phase_l + 2*pi*k*tau_l*B/K)) * a(az_l, el_l)

where ``a`` is the panel response built as a Kronecker product over the x, y
and z array axes.

Coordinates: x runs across the street (walls at x=0 and x=street_width_m),
y runs along the street, z is height above the ground plane. Elevation is the
polar angle from +z, azimuth is measured from +x in the xy-plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PositionOutOfScene, SubcarrierOutOfRange

SPEED_OF_LIGHT = 299_792_458.0
MIN_PATH_LENGTH_M = 1.0

# image-method path types, in tie-break order
PATH_LOS, PATH_GROUND, PATH_WALL_LOW, PATH_WALL_HIGH, PATH_GROUND_WALL = range(5)
_BOUNCES = np.array([0, 1, 1, 1, 2])

PHASE_MODELS = ("carrier", "reflection")


@dataclass(frozen=True)
class ArrayGeometry:
    m_x: int = 4
    m_y: int = 4
    m_z: int = 1
    spacing_over_lambda: float = 0.5

    def __post_init__(self):
        if min(self.m_x, self.m_y, self.m_z) < 1:
            raise ValueError("antenna counts must be >= 1")
        if not self.spacing_over_lambda > 0:
            raise ValueError("spacing_over_lambda must be positive")

    @property
    def num_antennas(self) -> int:
        return self.m_x * self.m_y * self.m_z


@dataclass(frozen=True)
class ChannelConfig:
    carrier_hz: float = 28e9
    bandwidth_hz: float = 100e6
    num_subcarriers: int = 240
    max_paths: int = 5
    # "carrier": phase = -2*pi*f_c*tau mod 2*pi
    # "reflection": phase = pi per bounce (carrier rotation removed)
    phase_model: str = "reflection"

    def __post_init__(self):
        if not (self.carrier_hz > 0 and self.bandwidth_hz > 0):
            raise ValueError("carrier and bandwidth must be positive")
        if self.max_paths < 1 or self.num_subcarriers < 1:
            raise ValueError("max_paths and num_subcarriers must be >= 1")
        if self.phase_model not in PHASE_MODELS:
            raise ValueError(f"phase_model must be one of {PHASE_MODELS}")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class Scene:
    street_length_m: float = 550.2
    street_width_m: float = 36.0
    grid_step_m: float = 0.2
    gnb_position_m: tuple[float, float, float] = (18.0, 275.0, 6.0)
    wall_reflectivity: float = 0.7
    antenna_height_m: float = 1.5

    def __post_init__(self):
        if min(self.street_length_m, self.street_width_m, self.grid_step_m) <= 0:
            raise ValueError("scene extents must be positive")
        if not 0.0 <= self.wall_reflectivity <= 1.0:
            raise ValueError("wall_reflectivity must lie in [0, 1]")
        object.__setattr__(self, "gnb_position_m", tuple(float(v) for v in self.gnb_position_m))

    @property
    def gnb_height_m(self) -> float:
        return self.gnb_position_m[2]

    @property
    def num_rows(self) -> int:
        return int(round(self.street_length_m / self.grid_step_m))

    @property
    def num_columns(self) -> int:
        return int(round(self.street_width_m / self.grid_step_m)) + 1

    @property
    def max_longitudinal_m(self) -> float:
        return (self.num_rows - 1) * self.grid_step_m

    @property
    def gnb_row(self) -> int:
        return self.row_of(self.gnb_position_m[1])

    def row_of(self, longitudinal_m):
        rows = np.rint(np.asarray(longitudinal_m) / self.grid_step_m).astype(np.int64)
        rows = np.clip(rows, 0, self.num_rows - 1)
        return int(rows) if rows.ndim == 0 else rows

    def column_of(self, lateral_m):
        cols = np.rint(np.asarray(lateral_m) / self.grid_step_m).astype(np.int64)
        cols = np.clip(cols, 0, self.num_columns - 1)
        return int(cols) if cols.ndim == 0 else cols

    def snap(self, lateral_m, longitudinal_m):
        """Nearest grid point, returned as (x, y) in meters."""
        return (self.column_of(lateral_m) * self.grid_step_m,
                self.row_of(longitudinal_m) * self.grid_step_m)

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.street_width_m and 0.0 <= y <= self.max_longitudinal_m


@dataclass(frozen=True)
class PathComponent:
    gain: float
    delay_s: float
    phase_rad: float
    azimuth_rad: float
    elevation_rad: float
    kind: int = field(default=PATH_LOS, compare=False)


def array_response(azimuth_rad, elevation_rad, geometry: ArrayGeometry) -> np.ndarray:
    """Panel response ``a_x kron a_y kron a_z`` (x-major flattening).

    Broadcasts over leading dimensions of the angle arrays; the antenna axis
    is appended last.
    """
    az = np.asarray(azimuth_rad, dtype=float)[..., None]
    el = np.asarray(elevation_rad, dtype=float)[..., None]
    kappa = 2.0 * np.pi * geometry.spacing_over_lambda
    sin_el = np.sin(el)
    a_x = np.exp(1j * kappa * np.arange(geometry.m_x) * (sin_el * np.cos(az)))
    a_y = np.exp(1j * kappa * np.arange(geometry.m_y) * (sin_el * np.sin(az)))
    a_z = np.exp(1j * kappa * np.arange(geometry.m_z) * np.cos(el))
    a = a_x[..., :, None, None] * a_y[..., None, :, None] * a_z[..., None, None, :]
    return a.reshape(a.shape[:-3] + (geometry.num_antennas,))


def _image_paths(scene: Scene, rx: np.ndarray, config: ChannelConfig):
    """Unsorted per-type path parameters for receivers ``rx`` of shape (N, 3)."""
    tx = np.asarray(scene.gnb_position_m, dtype=float)
    width = scene.street_width_m
    d = rx - tx  # (N, 3)

    # departure vectors of the first segment leaving the gNB; the unfolded
    # length equals the norm of each vector (mirror images preserve length)
    ground = np.stack([d[:, 0], d[:, 1], -(rx[:, 2] + tx[2])], axis=-1)
    wall_low = np.stack([-(rx[:, 0] + tx[0]), d[:, 1], d[:, 2]], axis=-1)
    wall_high = np.stack([(2.0 * width - rx[:, 0]) - tx[0], d[:, 1], d[:, 2]], axis=-1)

    # the double bounce uses whichever wall is closer to the gNB
    near_x = wall_low[:, 0] if tx[0] <= width - tx[0] else wall_high[:, 0]
    ground_wall = np.stack([near_x, d[:, 1], -(rx[:, 2] + tx[2])], axis=-1)

    vecs = np.stack([d, ground, wall_low, wall_high, ground_wall], axis=1)  # (N, 5, 3)
    length = np.sqrt(np.einsum("nlc,nlc->nl", vecs, vecs))
    length = np.maximum(length, MIN_PATH_LENGTH_M)

    lam = config.wavelength_m
    power_per_bounce = scene.wall_reflectivity ** 2
    gain = (lam / (4.0 * np.pi * length)) ** 2 * power_per_bounce ** _BOUNCES
    delay = length / SPEED_OF_LIGHT
    if config.phase_model == "carrier":
        phase = np.mod(-2.0 * np.pi * config.carrier_hz * delay, 2.0 * np.pi)
    else:
        phase = np.mod(np.pi * _BOUNCES, 2.0 * np.pi) * np.ones_like(delay)
    horiz = np.hypot(vecs[..., 0], vecs[..., 1])
    azimuth = np.arctan2(vecs[..., 1], vecs[..., 0])
    elevation = np.arctan2(horiz, vecs[..., 2])
    return gain, delay, phase, azimuth, elevation


def trace_paths_batch(scene: Scene, rx_positions_m, config: ChannelConfig) -> dict[str, np.ndarray]:
    """Vectorized :func:`trace_paths` over receivers of shape (N, 3).

    Returns arrays of shape (N, L) keyed by ``gain``, ``delay_s``,
    ``phase_rad``, ``azimuth_rad``, ``elevation_rad`` and ``kind``, each row
    sorted by descending gain (ties keep path-type order).
    """
    rx = np.atleast_2d(np.asarray(rx_positions_m, dtype=float))
    inside = ((rx[:, 0] >= 0.0) & (rx[:, 0] <= scene.street_width_m)
              & (rx[:, 1] >= 0.0) & (rx[:, 1] <= scene.max_longitudinal_m))
    if not np.all(inside):
        bad = rx[~inside][0]
        raise PositionOutOfScene(f"receiver {bad.tolist()} lies outside the street grid")
    gain, delay, phase, az, el = _image_paths(scene, rx, config)
    order = np.argsort(-gain, axis=1, kind="stable")[:, : config.max_paths]
    take = lambda arr: np.take_along_axis(arr, order, axis=1)  # noqa: E731
    return {
        "gain": take(gain),
        "delay_s": take(delay),
        "phase_rad": take(phase),
        "azimuth_rad": take(az),
        "elevation_rad": take(el),
        "kind": order,
    }


def trace_paths(scene: Scene, rx_position_m, config: ChannelConfig) -> list[PathComponent]:
    """Image-method paths to one receiver, strongest first."""
    batch = trace_paths_batch(scene, np.asarray(rx_position_m, dtype=float)[None, :], config)
    return [
        PathComponent(
            gain=float(batch["gain"][0, i]),
            delay_s=float(batch["delay_s"][0, i]),
            phase_rad=float(batch["phase_rad"][0, i]),
            azimuth_rad=float(batch["azimuth_rad"][0, i]),
            elevation_rad=float(batch["elevation_rad"][0, i]),
            kind=int(batch["kind"][0, i]),
        )
        for i in range(batch["gain"].shape[1])
    ]


def ray_sum(gain, delay_s, phase_rad, azimuth_rad, elevation_rad, k: int,
            geometry: ArrayGeometry, config: ChannelConfig) -> np.ndarray:
    """Channel vector(s) at subcarrier ``k`` from path arrays of shape (..., L).

    Paths are accumulated in list order so results do not depend on batch
    shape.
    """
    if not 0 <= k < config.num_subcarriers:
        raise SubcarrierOutOfRange(f"subcarrier {k} not in [0, {config.num_subcarriers})")
    gain = np.asarray(gain, dtype=float)
    K = config.num_subcarriers
    amp = np.sqrt(gain / K)
    phase = np.asarray(phase_rad, dtype=float) + 2.0 * np.pi * k * np.asarray(delay_s) * config.bandwidth_hz / K
    coef = amp * np.exp(1j * phase)
    steer = array_response(azimuth_rad, elevation_rad, geometry)  # (..., L, M)
    h = np.zeros(gain.shape[:-1] + (geometry.num_antennas,), dtype=complex)
    for l in range(gain.shape[-1]):
        h += coef[..., l, None] * steer[..., l, :]
    return h


def _path_arrays(paths: list[PathComponent]):
    return (
        np.array([p.gain for p in paths], dtype=float),
        np.array([p.delay_s for p in paths], dtype=float),
        np.array([p.phase_rad for p in paths], dtype=float),
        np.array([p.azimuth_rad for p in paths], dtype=float),
        np.array([p.elevation_rad for p in paths], dtype=float),
    )


def channel_at_subcarrier(paths: list[PathComponent], k: int,
                          geometry: ArrayGeometry, config: ChannelConfig) -> np.ndarray:
    if not paths:
        if not 0 <= k < config.num_subcarriers:
            raise SubcarrierOutOfRange(f"subcarrier {k} not in [0, {config.num_subcarriers})")
        return np.zeros(geometry.num_antennas, dtype=complex)
    return ray_sum(*_path_arrays(paths), k, geometry, config)


def channel_matrix(paths: list[PathComponent], geometry: ArrayGeometry,
                   config: ChannelConfig) -> np.ndarray:
    """M x K matrix whose column k is ``channel_at_subcarrier(paths, k)``."""
    cols = [channel_at_subcarrier(paths, k, geometry, config) for k in range(config.num_subcarriers)]
    return np.stack(cols, axis=1)
