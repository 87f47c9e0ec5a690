"""Text checkpoints for trained predictors.

Layout::

    csi-model v1 D=<int> H=<int> M=<int>
    meta.features = pos
    meta.window = 10
    section layer1.input_weights 40 2
    <row-major block, one matrix row per line>
    ...
    section adam.t
    123

Sections carry every parameter, the Adam moments (``adam.m.<name>``,
``adam.v.<name>``), the step counter, and the input/label normalization
needed to reproduce predictions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedCheckpoint
from .features import FeatureSet, Standardizer
from .lstm import AdamState, ModelParams, TargetScaler

MAGIC = "csi-model v1"


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    feature_set: FeatureSet | None = None
    window: int | None = None
    standardizer: Standardizer | None = None
    scaler: TargetScaler | None = None
    split_seed: int | None = None
    train_fraction: float | None = None


def _block(name: str, arr: np.ndarray) -> list[str]:
    arr = np.asarray(arr, dtype=float)
    lines = [f"section {name} " + " ".join(str(d) for d in arr.shape)]
    rows = arr.reshape(1, -1) if arr.ndim <= 1 else arr.reshape(arr.shape[0], -1)
    lines.extend(" ".join(repr(float(v)) for v in row) for row in rows)
    return lines


def save_checkpoint(params: ModelParams, adam_state: AdamState, path, *,
                    feature_set: FeatureSet | None = None, window: int | None = None,
                    standardizer: Standardizer | None = None, scaler: TargetScaler | None = None,
                    split_seed: int | None = None, train_fraction: float | None = None) -> None:
    D, H, M = params.feature_width, params.hidden_size, params.output_width // 2
    lines = [f"{MAGIC} D={D} H={H} M={M}"]
    if feature_set is not None:
        lines.append(f"meta.features = {feature_set.name}")
    if window is not None:
        lines.append(f"meta.window = {int(window)}")
    if split_seed is not None:
        lines.append(f"meta.split_seed = {int(split_seed)}")
    if train_fraction is not None:
        lines.append(f"meta.train_fraction = {train_fraction!r}")
    for name, arr in params.named().items():
        lines += _block(name, arr)
    for name in params.named():
        lines += _block(f"adam.m.{name}", adam_state.m[name])
    for name in params.named():
        lines += _block(f"adam.v.{name}", adam_state.v[name])
    lines += ["section adam.t", str(int(adam_state.t))]
    if standardizer is not None:
        lines += _block("norm.input_mean", standardizer.mean)
        lines += _block("norm.input_std", standardizer.std)
    if scaler is not None:
        lines += _block("norm.label_mean", scaler.mean)
        lines += _block("norm.label_scale", np.array([scaler.scale]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError:
        raise MalformedCheckpoint(path, 0, "not UTF-8 text") from None
    if not lines or not lines[0].startswith(MAGIC):
        raise MalformedCheckpoint(path, 1, f"expected header starting with {MAGIC!r}")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0][len(MAGIC):].split())
        D, H, M = int(header["D"]), int(header["H"]), int(header["M"])
    except (KeyError, ValueError):
        raise MalformedCheckpoint(path, 1, "header needs integer D, H and M") from None

    meta: dict[str, str] = {}
    sections: dict[str, np.ndarray] = {}
    adam_t = None
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        lineno = i + 1
        i += 1
        if not line:
            continue
        if line.startswith("meta."):
            key, sep, value = line.partition("=")
            if not sep:
                raise MalformedCheckpoint(path, lineno, "meta line needs '='")
            meta[key.strip()[5:]] = value.strip()
            continue
        parts = line.split()
        if parts[0] != "section" or len(parts) < 2:
            raise MalformedCheckpoint(path, lineno, f"expected a section line, got {line[:40]!r}")
        name = parts[1]
        if name == "adam.t":
            if i >= len(lines):
                raise MalformedCheckpoint(path, lineno, "adam.t has no value")
            try:
                adam_t = int(lines[i].strip())
            except ValueError:
                raise MalformedCheckpoint(path, i + 1, "adam.t must be an integer") from None
            i += 1
            continue
        try:
            shape = tuple(int(s) for s in parts[2:])
        except ValueError:
            raise MalformedCheckpoint(path, lineno, "bad section shape") from None
        nrows = 1 if len(shape) <= 1 else shape[0]
        if i + nrows > len(lines):
            raise MalformedCheckpoint(path, lineno, f"section {name} is truncated")
        try:
            values = [float(v) for row in lines[i:i + nrows] for v in row.split()]
        except ValueError:
            raise MalformedCheckpoint(path, lineno, f"section {name} holds a non-number") from None
        size = int(np.prod(shape)) if shape else 1
        if len(values) != size:
            raise MalformedCheckpoint(path, lineno, f"section {name}: expected {size} values, "
                                                    f"found {len(values)}")
        sections[name] = np.array(values).reshape(shape)
        i += nrows

    expected = {
        "layer1.input_weights": (4 * H, D), "layer1.recurrent_weights": (4 * H, H),
        "layer1.biases": (4 * H,), "layer2.input_weights": (4 * H, H),
        "layer2.recurrent_weights": (4 * H, H), "layer2.biases": (4 * H,),
        "fc_weights": (2 * M, H), "fc_bias": (2 * M,),
    }
    for prefix in ("", "adam.m.", "adam.v."):
        for name, shape in expected.items():
            arr = sections.get(prefix + name)
            if arr is None:
                raise MalformedCheckpoint(path, len(lines), f"missing section {prefix + name}")
            if arr.shape != shape:
                raise MalformedCheckpoint(path, len(lines),
                                          f"section {prefix + name} has shape {arr.shape}, expected {shape}")
    if adam_t is None:
        raise MalformedCheckpoint(path, len(lines), "missing section adam.t")

    params = ModelParams.from_named({k: sections[k] for k in expected})
    adam = AdamState({k: sections["adam.m." + k] for k in expected},
                     {k: sections["adam.v." + k] for k in expected}, adam_t)
    ckpt = Checkpoint(params, adam)
    try:
        if "features" in meta:
            ckpt.feature_set = FeatureSet.parse(meta["features"])
        if "window" in meta:
            ckpt.window = int(meta["window"])
        if "split_seed" in meta:
            ckpt.split_seed = int(meta["split_seed"])
        if "train_fraction" in meta:
            ckpt.train_fraction = float(meta["train_fraction"])
    except ValueError as exc:
        raise MalformedCheckpoint(path, 0, f"bad meta value: {exc}") from None
    if "norm.input_mean" in sections and "norm.input_std" in sections:
        ckpt.standardizer = Standardizer(sections["norm.input_mean"], sections["norm.input_std"])
    if "norm.label_mean" in sections and "norm.label_scale" in sections:
        ckpt.scaler = TargetScaler(sections["norm.label_mean"], float(sections["norm.label_scale"][0]))
    return ckpt
