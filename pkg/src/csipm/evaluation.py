"""Feature ablation, nearest-instance lookup and constellation export."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptySplit, MalformedFile
from .features import TOKEN_LABELS, MOBILITY_ONLY, TABLE_FEATURE_SETS, FeatureSet, Windows, make_windows
from .lstm import ModelParams, TargetScaler, TrainConfig, mse_loss, predict, train
from .pipeline import Dataset, real_to_csi, split

CONSTELLATION_MAGIC = "# csi-constellation v1"
_TOKEN_OF_LABEL = {v: k for k, v in TOKEN_LABELS.items()}


def evaluate_mse(params: ModelParams, scaler: TargetScaler, test_windows: Windows) -> float:
    """Mean over test windows of the per-window MSE, on raw label scale."""
    if len(test_windows) == 0:
        raise EmptySplit("no test windows")
    pred = predict(params, scaler, test_windows.inputs)
    return mse_loss(pred, test_windows.targets)


def cell_seed(master_seed: int, dataset_name: str, feature_set: FeatureSet) -> int:
    """Stable per-cell training seed."""
    return zlib.crc32(f"{master_seed}/{dataset_name}/{feature_set.name}".encode()) & 0x7FFFFFFF


@dataclass
class AblationReport:
    """Test MSE per (dataset, feature set) cell, in insertion order."""

    cells: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def datasets(self) -> list[str]:
        return list(dict.fromkeys(d for d, _ in self.cells))

    @property
    def feature_sets(self) -> list[str]:
        return list(dict.fromkeys(f for _, f in self.cells))

    def mse(self, dataset: str, feature_set) -> float:
        return self.cells[(dataset, str(feature_set))]

    def mobility_average(self, dataset: str) -> float:
        """Plain mean over the mobility-only columns present for ``dataset``."""
        vals = [v for (d, f), v in self.cells.items()
                if d == dataset and f in {fs.name for fs in MOBILITY_ONLY}]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        lines = ["dataset,feature_set,mse"]
        lines += [f"{d},{f},{v!r}" for (d, f), v in self.cells.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "AblationReport":
        report = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if lineno == 1 or not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise MalformedFile("<ablation>", lineno, "expected dataset,feature_set,mse")
            report.cells[(parts[0], parts[1])] = float(parts[2])
        return report

    def to_table(self) -> str:
        """Human-readable grid: one row per dataset, one column per feature set."""
        fsets = self.feature_sets
        labels = [FeatureSet.parse(f).label for f in fsets]
        head = ["MSE/Feature"] + labels
        rows = [head]
        for d in self.datasets:
            rows.append([f"Data Set {d}"] + [
                f"{self.cells[(d, f)]:.3e}" if (d, f) in self.cells else "-" for f in fsets])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"

    @classmethod
    def from_table(cls, text: str) -> "AblationReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = [c.strip() for c in lines[0].split("|")][1:]
        names = [FeatureSet(tuple(_TOKEN_OF_LABEL[t] for t in h.split("+"))).name for h in head]
        report = cls()
        for line in lines[1:]:
            cols = [c.strip() for c in line.split("|")]
            d = cols[0].removeprefix("Data Set ").strip()
            for name, val in zip(names, cols[1:]):
                if val != "-":
                    report.cells[(d, name)] = float(val)
        return report


@dataclass
class CellResult:
    dataset: str
    feature_set: FeatureSet
    test_mse: float
    initial_test_mse: float
    history: list


def train_cell(dataset: Dataset, feature_set: FeatureSet, window: int, train_cfg: TrainConfig,
               hidden_size: int = 10, train_fraction: float = 0.7, split_seed: int = 0):
    """Split, window and train one model; returns (TrainResult, train windows, test windows)."""
    tr, te = split(dataset, train_fraction, split_seed)
    w_tr = make_windows(tr, feature_set, window)
    w_te = make_windows(te, feature_set, window, w_tr.standardizer)
    result = train(w_tr.inputs, w_tr.targets, w_te.inputs, w_te.targets, train_cfg, hidden_size)
    return result, w_tr, w_te


def run_ablation(datasets: Mapping[str, Dataset], feature_sets: Iterable[FeatureSet] = TABLE_FEATURE_SETS,
                 window: int = 10, train_cfg: TrainConfig = TrainConfig(), hidden_size: int = 10,
                 train_fraction: float = 0.7, master_seed: int = 0,
                 on_cell=None) -> AblationReport:
    """Train one fresh model per (dataset, feature set) with identical architecture.

    All cells of one dataset share a single trace-level split.
    """
    report = AblationReport()
    feature_sets = list(feature_sets)
    for name, ds in datasets.items():
        for fs in feature_sets:
            cfg = replace(train_cfg, seed=cell_seed(master_seed, name, fs))
            result, _, w_te = train_cell(ds, fs, window, cfg, hidden_size, train_fraction, master_seed)
            mse = evaluate_mse(result.params, result.scaler, w_te)
            report.cells[(name, fs.name)] = mse
            if on_cell is not None:
                on_cell(CellResult(name, fs, mse, result.initial_test_mse, result.history))
    return report


def amplitudes(values_2m: np.ndarray) -> np.ndarray:
    return np.abs(real_to_csi(values_2m))


@dataclass(frozen=True)
class NearestMatch:
    by_mse: int
    by_mae: int

    @property
    def agree(self) -> bool:
        return self.by_mse == self.by_mae


def nearest_instance(prediction: np.ndarray, candidates: np.ndarray) -> NearestMatch:
    """Candidate rows closest to ``prediction`` by per-antenna amplitude.

    ``candidates`` holds 2M-real CSI rows (for example the test labels).
    Ties resolve to the lowest index.
    """
    candidates = np.atleast_2d(candidates)
    if len(candidates) == 0:
        raise EmptySplit("no candidate instances")
    diff = amplitudes(candidates) - amplitudes(prediction)[None, :]
    return NearestMatch(int(np.argmin(np.mean(diff ** 2, axis=1))),
                        int(np.argmin(np.mean(np.abs(diff), axis=1))))


def export_constellation(true_csi, predicted_csi, path, metadata: Mapping[str, object] | None = None) -> None:
    true_csi = np.asarray(true_csi)
    predicted_csi = np.asarray(predicted_csi)
    if true_csi.shape != predicted_csi.shape or true_csi.ndim != 1:
        raise ValueError("true and predicted CSI must be equal-length vectors")
    lines = [CONSTELLATION_MAGIC]
    if metadata:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in metadata.items()))
    lines.append("series,index,re,im")
    for series, values in (("true", true_csi), ("pred", predicted_csi)):
        for i, z in enumerate(values):
            lines.append(f"{series},{i},{float(z.real)!r},{float(z.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_constellation(path) -> dict[str, np.ndarray]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CONSTELLATION_MAGIC:
        raise MalformedFile(path, 1, f"expected {CONSTELLATION_MAGIC!r}")
    series: dict[str, list[tuple[int, complex]]] = {"true": [], "pred": []}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#") or line.startswith("series,"):
            continue
        parts = line.split(",")
        if len(parts) != 4 or parts[0] not in series:
            raise MalformedFile(path, lineno, "expected series,index,re,im")
        try:
            series[parts[0]].append((int(parts[1]), complex(float(parts[2]), float(parts[3]))))
        except ValueError:
            raise MalformedFile(path, lineno, "bad number") from None
    return {k: np.array([z for _, z in sorted(v)]) for k, v in series.items()}
