"""The gNB's self-labelling data collection.

Each simulated vehicle produces two timestamped streams: CAMs (position,
speed, acceleration) overheard on the sidelink, and CSI reports from the
mmWave link. Records are joined on (vehicle, time), and each joined row is
labelled with the same vehicle's CSI one CAM period later.

Complex CSI is stored as 2M reals: the M real parts followed by the M
imaginary parts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .channel import ArrayGeometry, ChannelConfig, Scene, ray_sum, trace_paths_batch
from .errors import ConfigError, MalformedFile, UnmatchedRecord
from .mobility import FsmcConfig, MobilityConfig, VehicleState, simulate_trace, vehicle_rng

log = logging.getLogger(__name__)

DATASET_MAGIC = "csi-dataset v1"
TRACE_MAGIC = "csi-trace v1"


@dataclass(frozen=True)
class CamRecord:
    vehicle_id: int
    t_s: float
    position_m: tuple[float, float]  # (x, y) scene coordinates
    speed_mps: float
    accel_mps2: float


@dataclass(frozen=True)
class CsiRecord:
    vehicle_id: int
    t_s: float
    csi: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class DatasetInstance:
    vehicle_id: int
    t_s: float
    position_m: np.ndarray
    speed_mps: float
    accel_mps2: float
    csi_now: np.ndarray
    label_next: np.ndarray


@dataclass
class Dataset:
    """Column-oriented store of labelled instances.

    Rows are sorted by (vehicle_id, t_s). ``position_m`` holds scene
    coordinates (x across the street, y along it).
    """

    num_antennas: int
    delta_tau_s: float
    vehicle_id: np.ndarray
    t_s: np.ndarray
    position_m: np.ndarray
    speed_mps: np.ndarray
    accel_mps2: np.ndarray
    csi_now: np.ndarray
    label_next: np.ndarray
    unmatched_records: int = 0

    def __len__(self) -> int:
        return len(self.vehicle_id)

    @classmethod
    def empty(cls, num_antennas: int, delta_tau_s: float) -> "Dataset":
        w = 2 * num_antennas
        return cls(num_antennas, delta_tau_s, np.zeros(0, dtype=np.int64), np.zeros(0),
                   np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros((0, w)), np.zeros((0, w)))

    def subset(self, mask_or_index) -> "Dataset":
        return replace(
            self,
            vehicle_id=self.vehicle_id[mask_or_index],
            t_s=self.t_s[mask_or_index],
            position_m=self.position_m[mask_or_index],
            speed_mps=self.speed_mps[mask_or_index],
            accel_mps2=self.accel_mps2[mask_or_index],
            csi_now=self.csi_now[mask_or_index],
            label_next=self.label_next[mask_or_index],
            unmatched_records=0,
        )

    @classmethod
    def concatenate(cls, parts: list["Dataset"]) -> "Dataset":
        first = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(first.num_antennas, first.delta_tau_s, cat("vehicle_id"), cat("t_s"),
                   cat("position_m"), cat("speed_mps"), cat("accel_mps2"), cat("csi_now"),
                   cat("label_next"), sum(p.unmatched_records for p in parts))

    def instance(self, i: int) -> DatasetInstance:
        return DatasetInstance(int(self.vehicle_id[i]), float(self.t_s[i]), self.position_m[i],
                               float(self.speed_mps[i]), float(self.accel_mps2[i]),
                               self.csi_now[i], self.label_next[i])

    def __iter__(self) -> Iterator[DatasetInstance]:
        return (self.instance(i) for i in range(len(self)))

    def vehicles(self) -> np.ndarray:
        return np.unique(self.vehicle_id)


@dataclass(frozen=True)
class SimulationConfig:
    scene: Scene = Scene()
    geometry: ArrayGeometry = ArrayGeometry()
    channel: ChannelConfig = ChannelConfig()
    mobility: MobilityConfig = MobilityConfig()
    fsmc: FsmcConfig = FsmcConfig()
    ref_subcarrier: int = 0
    max_steps: int = 100_000


def csi_to_real(csi: np.ndarray) -> np.ndarray:
    csi = np.asarray(csi)
    return np.concatenate([csi.real, csi.imag], axis=-1)


def real_to_csi(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    m = values.shape[-1] // 2
    return values[..., :m] + 1j * values[..., m:]


def grid_csi(scene: Scene, geometry: ArrayGeometry, channel: ChannelConfig,
             lateral_m, longitudinal_m, k: int) -> np.ndarray:
    """CSI at the grid points nearest to each (lateral, longitudinal) pair."""
    x, y = scene.snap(np.atleast_1d(lateral_m), np.atleast_1d(longitudinal_m))
    rx = np.stack([x, y, np.full(x.shape, scene.antenna_height_m)], axis=-1)
    paths = trace_paths_batch(scene, rx, channel)
    return ray_sum(paths["gain"], paths["delay_s"], paths["phase_rad"],
                   paths["azimuth_rad"], paths["elevation_rad"], k, geometry, channel)


def collect_streams(traces: Iterable[list[VehicleState]], scene: Scene, geometry: ArrayGeometry,
                    channel: ChannelConfig, ref_subcarrier_k: int, fsmc: FsmcConfig = FsmcConfig(),
                    ) -> tuple[list[CamRecord], list[CsiRecord]]:
    """One CAM and one CSI record per vehicle per tick, sharing timestamps."""
    accel_values = fsmc.accelerations
    cams: list[CamRecord] = []
    csis: list[CsiRecord] = []
    for trace in traces:
        if not trace:
            continue
        lateral = np.array([s.lateral_m for s in trace])
        longitudinal = np.array([s.longitudinal_m for s in trace])
        csi = grid_csi(scene, geometry, channel, lateral, longitudinal, ref_subcarrier_k)
        for s, h in zip(trace, csi):
            cams.append(CamRecord(s.vehicle_id, s.t_s, (s.lateral_m, s.longitudinal_m),
                                  s.speed_mps, float(accel_values[s.accel_state])))
            csis.append(CsiRecord(s.vehicle_id, s.t_s, h))
    return cams, csis


def align_and_label(cam_stream: list[CamRecord], csi_stream: list[CsiRecord], delta_tau_s: float,
                    strict: bool = False) -> Dataset:
    """Join CAM and CSI streams and label each row with the next tick's CSI.

    Records pair up when vehicle ids match and timestamps differ by at most
    ``delta_tau_s / 10``. Unpaired records are dropped and counted; with
    ``strict`` set they raise UnmatchedRecord instead. A joined row is kept
    only if the same vehicle has a joined row one period later.
    """
    if not csi_stream and not cam_stream:
        raise ValueError("cannot infer antenna count from empty streams")
    num_antennas = len(csi_stream[0].csi) if csi_stream else 0
    tol = delta_tau_s / 10.0

    by_vehicle_cam: dict[int, list[CamRecord]] = {}
    by_vehicle_csi: dict[int, list[CsiRecord]] = {}
    for c in cam_stream:
        by_vehicle_cam.setdefault(c.vehicle_id, []).append(c)
    for c in csi_stream:
        by_vehicle_csi.setdefault(c.vehicle_id, []).append(c)

    unmatched = 0
    rows = []
    for vid in sorted(set(by_vehicle_cam) | set(by_vehicle_csi)):
        cams = sorted(by_vehicle_cam.get(vid, []), key=lambda r: r.t_s)
        csis = sorted(by_vehicle_csi.get(vid, []), key=lambda r: r.t_s)
        joined = []
        i = j = 0
        while i < len(cams) and j < len(csis):
            dt = cams[i].t_s - csis[j].t_s
            if abs(dt) <= tol:
                joined.append((cams[i], csis[j]))
                i += 1
                j += 1
            elif dt < 0:
                unmatched += 1
                i += 1
            else:
                unmatched += 1
                j += 1
        unmatched += (len(cams) - i) + (len(csis) - j)
        for (cam, csi), (nxt_cam, nxt_csi) in zip(joined, joined[1:]):
            if abs(nxt_cam.t_s - cam.t_s - delta_tau_s) <= tol:
                rows.append((cam, csi.csi, nxt_csi.csi))

    if unmatched:
        if strict:
            raise UnmatchedRecord(unmatched)
        log.warning("%d stream record(s) had no partner within %.3g s", unmatched, tol)

    if not rows:
        ds = Dataset.empty(num_antennas, delta_tau_s)
        ds.unmatched_records = unmatched
        return ds
    return Dataset(
        num_antennas=num_antennas,
        delta_tau_s=delta_tau_s,
        vehicle_id=np.array([r[0].vehicle_id for r in rows], dtype=np.int64),
        t_s=np.array([r[0].t_s for r in rows]),
        position_m=np.array([r[0].position_m for r in rows], dtype=float),
        speed_mps=np.array([r[0].speed_mps for r in rows]),
        accel_mps2=np.array([r[0].accel_mps2 for r in rows]),
        csi_now=csi_to_real(np.array([r[1] for r in rows])),
        label_next=csi_to_real(np.array([r[2] for r in rows])),
        unmatched_records=unmatched,
    )


def simulate_vehicle(sim: SimulationConfig, master_seed: int, vehicle_id: int) -> list[VehicleState]:
    """Trace for one vehicle; travel direction is the first draw of its generator."""
    rng = vehicle_rng(master_seed, vehicle_id)
    direction = 1 if rng.random() < 0.5 else -1
    mobility = replace(sim.mobility, direction=direction)
    return simulate_trace(sim.scene, mobility, sim.fsmc, rng, sim.max_steps, vehicle_id)


def build_dataset(sim: SimulationConfig, max_row_distance: int, master_seed: int,
                  target_instance_count: int) -> Dataset:
    """Simulate vehicles until enough in-range labelled instances exist.

    An instance is in range when its nearest grid row lies within
    ``max_row_distance`` rows of the gNB row. Whole vehicles are added, so
    the result may exceed the target by up to one vehicle's worth.
    """
    if max_row_distance < 0:
        raise ValueError("max_row_distance must be >= 0")
    scene = sim.scene
    gnb_row = scene.gnb_row
    parts: list[Dataset] = []
    count = 0
    vehicle_id = 0
    misses = 0
    while count < target_instance_count:
        trace = simulate_vehicle(sim, master_seed, vehicle_id)
        cams, csis = collect_streams([trace], scene, sim.geometry, sim.channel,
                                     sim.ref_subcarrier, sim.fsmc)
        labelled = align_and_label(cams, csis, sim.mobility.delta_tau_s, strict=True)
        rows = scene.row_of(labelled.position_m[:, 1]) if len(labelled) else np.zeros(0, int)
        keep = np.abs(rows - gnb_row) <= max_row_distance
        if np.any(keep):
            part = labelled.subset(keep)
            parts.append(part)
            count += len(part)
            misses = 0
        else:
            misses += 1
            if misses >= 1000:
                raise ConfigError("1000 consecutive vehicles never entered the requested range; "
                                  "check dataset.max_steps and the scene")
        vehicle_id += 1
    if not parts:
        return Dataset.empty(sim.geometry.num_antennas, sim.mobility.delta_tau_s)
    return Dataset.concatenate(parts)


def split(dataset: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Partition by whole vehicle trace.

    Vehicles are visited in a seeded random order and moved to the training
    side until it holds at least ``floor(train_fraction * N)`` instances.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    vehicles, counts = np.unique(dataset.vehicle_id, return_counts=True)
    order = np.random.default_rng(seed).permutation(len(vehicles))
    need = int(np.floor(train_fraction * len(dataset)))
    chosen = []
    total = 0
    for idx in order:
        if total >= need:
            break
        chosen.append(vehicles[idx])
        total += counts[idx]
    in_train = np.isin(dataset.vehicle_id, np.array(chosen, dtype=dataset.vehicle_id.dtype))
    return dataset.subset(in_train), dataset.subset(~in_train)


def check_label_consistency(dataset: Dataset) -> int:
    """Number of consecutive same-vehicle pairs whose label disagrees with the next CSI."""
    dt = dataset.delta_tau_s
    same = dataset.vehicle_id[1:] == dataset.vehicle_id[:-1]
    adjacent = same & (np.abs(np.diff(dataset.t_s) - dt) <= dt / 10.0)
    bad = np.any(dataset.label_next[:-1] != dataset.csi_now[1:], axis=1) & adjacent
    return int(bad.sum())


# -- serialization ---------------------------------------------------------

def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def serialize_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    lines = [f"{DATASET_MAGIC} M={dataset.num_antennas} dt={dataset.delta_tau_s!r}"]
    for i in range(len(dataset)):
        head = [dataset.t_s[i], dataset.position_m[i, 0], dataset.position_m[i, 1],
                dataset.speed_mps[i], dataset.accel_mps2[i]]
        lines.append(f"{int(dataset.vehicle_id[i])},{_fmt(head)},"
                     f"{_fmt(dataset.csi_now[i])},{_fmt(dataset.label_next[i])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(path, line: str, magic: str) -> dict[str, str]:
    if not line.startswith(magic):
        raise MalformedFile(path, 1, f"expected header starting with {magic!r}")
    fields = {}
    for token in line[len(magic):].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise MalformedFile(path, 1, f"bad header token {token!r}")
        fields[key] = value
    return fields


def deserialize_dataset(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile(path, 0, f"not UTF-8 text: {exc}") from None
    lines = text.splitlines()
    if not lines:
        raise MalformedFile(path, 1, "empty file")
    header = _parse_header(path, lines[0], DATASET_MAGIC)
    try:
        m = int(header["M"])
        dt = float(header["dt"])
    except (KeyError, ValueError) as exc:
        raise MalformedFile(path, 1, f"header needs integer M and float dt ({exc})") from None
    width = 6 + 4 * m
    rows = []
    vids = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise MalformedFile(path, lineno, f"expected {width} fields, found {len(parts)}")
        try:
            vids.append(int(parts[0]))
        except ValueError:
            raise MalformedFile(path, lineno, f"field 1 (vehicle_id): bad integer {parts[0]!r}") from None
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            for col, v in enumerate(parts[1:], start=2):
                try:
                    float(v)
                except ValueError:
                    raise MalformedFile(path, lineno, f"field {col}: bad number {v!r}") from None
    if not rows:
        return Dataset.empty(m, dt)
    arr = np.array(rows, dtype=float)
    return Dataset(
        num_antennas=m,
        delta_tau_s=dt,
        vehicle_id=np.array(vids, dtype=np.int64),
        t_s=arr[:, 0],
        position_m=arr[:, 1:3].copy(),
        speed_mps=arr[:, 3].copy(),
        accel_mps2=arr[:, 4].copy(),
        csi_now=arr[:, 5:5 + 2 * m].copy(),
        label_next=arr[:, 5 + 2 * m:].copy(),
    )


def write_traces(traces: Iterable[list[VehicleState]], path, delta_tau_s: float) -> None:
    lines = [f"{TRACE_MAGIC} dt={delta_tau_s!r}"]
    for trace in traces:
        for s in trace:
            lines.append(f"{s.vehicle_id},{s.step},{_fmt([s.t_s, s.lateral_m, s.longitudinal_m, s.speed_mps])},"
                         f"{s.accel_state}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_traces(path) -> list[list[VehicleState]]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MalformedFile(path, 1, "empty file")
    _parse_header(path, lines[0], TRACE_MAGIC)
    traces: dict[int, list[VehicleState]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise MalformedFile(path, lineno, f"expected 7 fields, found {len(parts)}")
        try:
            vid, step = int(parts[0]), int(parts[1])
            t, x, y, v = (float(p) for p in parts[2:6])
            state = int(parts[6])
        except ValueError as exc:
            raise MalformedFile(path, lineno, str(exc)) from None
        traces.setdefault(vid, []).append(VehicleState(vid, t, y, x, v, state, step))
    return [traces[k] for k in sorted(traces)]
