"""Feature selection and sliding windows for the recurrent predictor.

Per-timestep feature layout, in this fixed order and only for selected
channels::

    acc (1) | speed (1) | pos (2) | csi1 (2M) | csi2 (2M)

``csi1`` is the CSI at that timestep, ``csi2`` the CSI one tick earlier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import WidthMismatch
from .pipeline import Dataset

TOKENS = ("acc", "speed", "pos", "csi1", "csi2")
TOKEN_LABELS = {"acc": "Acc.", "speed": "Speed", "pos": "Pos.", "csi1": "CSI1", "csi2": "CSI2"}
# names list CSI tokens first, as the ablation table does; layout order is TOKENS
_NAME_ORDER = ("csi1", "csi2", "acc", "speed", "pos")


@dataclass(frozen=True)
class FeatureSet:
    tokens: tuple[str, ...]

    def __post_init__(self):
        toks = tuple(t for t in TOKENS if t in set(self.tokens))
        unknown = set(self.tokens) - set(TOKENS)
        if unknown:
            raise ValueError(f"unknown feature token(s): {sorted(unknown)}")
        if not toks:
            raise ValueError("feature set must not be empty")
        if "csi2" in toks and "csi1" not in toks:
            raise ValueError("csi2 requires csi1")
        object.__setattr__(self, "tokens", toks)

    @classmethod
    def parse(cls, text: str) -> "FeatureSet":
        return cls(tuple(t.strip().lower() for t in text.split("+") if t.strip()))

    @property
    def name(self) -> str:
        return "+".join(t for t in _NAME_ORDER if t in self.tokens)

    @property
    def label(self) -> str:
        return "+".join(TOKEN_LABELS[t] for t in _NAME_ORDER if t in self.tokens)

    def width(self, num_antennas: int) -> int:
        sizes = {"acc": 1, "speed": 1, "pos": 2, "csi1": 2 * num_antennas, "csi2": 2 * num_antennas}
        return sum(sizes[t] for t in self.tokens)

    @property
    def needs_previous(self) -> bool:
        return "csi2" in self.tokens

    def __str__(self) -> str:
        return self.name


# the ten columns of the ablation table, in table order
TABLE_FEATURE_SETS = tuple(FeatureSet.parse(s) for s in (
    "acc", "speed", "pos", "acc+speed", "acc+pos", "speed+pos", "acc+speed+pos",
    "csi1", "csi1+pos", "csi1+csi2+pos",
))
MOBILITY_ONLY = TABLE_FEATURE_SETS[:7]


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Standardizer":
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.mean.shape[0]:
            raise WidthMismatch(f"expected {self.mean.shape[0]} channels, got {x.shape[-1]}")
        return (x - self.mean) / self.std


@dataclass
class Windows:
    """A batch of windowed samples.

    ``inputs`` has shape (n, W, D) and is already standardized; ``targets``
    (n, 2M) are raw CSI labels of each window's final timestep. ``rows``
    indexes that final timestep in the source dataset.
    """

    inputs: np.ndarray
    targets: np.ndarray
    vehicle_id: np.ndarray
    t_s: np.ndarray
    rows: np.ndarray
    feature_set: FeatureSet
    standardizer: Standardizer
    skipped_traces: int = 0

    def __len__(self) -> int:
        return len(self.targets)

    def take(self, idx) -> "Windows":
        return Windows(self.inputs[idx], self.targets[idx], self.vehicle_id[idx], self.t_s[idx],
                       self.rows[idx], self.feature_set, self.standardizer, self.skipped_traces)


def _runs(dataset: Dataset) -> list[np.ndarray]:
    """Index arrays of maximal same-vehicle runs with consecutive ticks."""
    n = len(dataset)
    if n == 0:
        return []
    dt = dataset.delta_tau_s
    breaks = (dataset.vehicle_id[1:] != dataset.vehicle_id[:-1]) | (
        np.abs(np.diff(dataset.t_s) - dt) > dt / 10.0)
    starts = np.concatenate([[0], np.nonzero(breaks)[0] + 1])
    ends = np.concatenate([starts[1:], [n]])
    return [np.arange(s, e) for s, e in zip(starts, ends)]


def feature_rows(dataset: Dataset, feature_set: FeatureSet, run: np.ndarray) -> np.ndarray:
    """Raw per-timestep features for one run; drops the first tick when csi2 is selected."""
    blocks = []
    rows = run[1:] if feature_set.needs_previous else run
    for tok in feature_set.tokens:
        if tok == "acc":
            blocks.append(dataset.accel_mps2[rows, None])
        elif tok == "speed":
            blocks.append(dataset.speed_mps[rows, None])
        elif tok == "pos":
            blocks.append(dataset.position_m[rows])
        elif tok == "csi1":
            blocks.append(dataset.csi_now[rows])
        elif tok == "csi2":
            blocks.append(dataset.csi_now[rows - 1])
    return np.concatenate(blocks, axis=1)


def make_windows(part: Dataset, feature_set: FeatureSet, window: int = 10,
                 standardizer: Standardizer | None = None) -> Windows:
    """Sliding windows inside each run of consecutive ticks.

    Without ``standardizer`` the statistics are fitted on this part (use
    that for the training split and pass the result on for the test split).
    Runs too short for a single window are skipped and counted.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    width = feature_set.width(part.num_antennas)
    per_run = []
    skipped = 0
    for run in _runs(part):
        feats = feature_rows(part, feature_set, run)
        rows = run[1:] if feature_set.needs_previous else run
        if len(rows) < window:
            skipped += 1
            continue
        per_run.append((feats, rows))

    if standardizer is None:
        all_rows = np.concatenate([f for f, _ in per_run]) if per_run else np.zeros((0, width))
        if len(all_rows) == 0:
            standardizer = Standardizer(np.zeros(width), np.ones(width))
        else:
            standardizer = Standardizer.fit(all_rows)

    inputs, last_rows = [], []
    for feats, rows in per_run:
        scaled = standardizer.transform(feats)
        view = np.lib.stride_tricks.sliding_window_view(scaled, (window, width))[:, 0]
        inputs.append(view)
        last_rows.append(rows[window - 1:])
    if inputs:
        x = np.ascontiguousarray(np.concatenate(inputs))
        idx = np.concatenate(last_rows)
    else:
        x = np.zeros((0, window, width))
        idx = np.zeros(0, dtype=np.int64)
    return Windows(x, part.label_next[idx], part.vehicle_id[idx], part.t_s[idx], idx,
                   feature_set, standardizer, skipped)
