"""Binary dataset/checkpoint formats, metrics JSONL, and the flat config format."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .geometry import ValidationError
from .nn import DenseNet, Layer

MAGIC = b"CLMP"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIQII")  # magic, version, n, d, num_classes


class FormatError(ValidationError):
    """A binary file does not follow the expected layout."""


# -- dataset -----------------------------------------------------------------


def write_dataset(path, data, labels, num_classes: int | None = None) -> None:
    data = np.asarray(data)
    labels = np.asarray(labels)
    if data.ndim != 2 or labels.shape != (data.shape[0],):
        raise ValidationError(f"data {data.shape} and labels {labels.shape} are inconsistent")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    n, d = data.shape
    with open(path, "wb") as fh:
        fh.write(_DATASET_HEADER.pack(MAGIC, DATASET_VERSION, n, d, num_classes))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def read_dataset(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(data float32 (n, d), labels uint16 (n,), num_classes)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d, num_classes = _DATASET_HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    expected = _DATASET_HEADER.size + 4 * n * d + 2 * n
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _DATASET_HEADER.size
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off + 4 * n * d)
    if n and labels.max() >= num_classes:
        raise FormatError(f"{path}: label {labels.max()} >= num_classes {num_classes}")
    return data.astype(np.float32), labels.astype(np.uint16), num_classes


def git_blob_hash(path) -> str:
    """SHA-1 of the file framed as a git blob object."""
    raw = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()


# -- checkpoint --------------------------------------------------------------


def _write_tensor(fh, name: str, arr) -> None:
    arr = np.asarray(arr, dtype="<f8")
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr).tobytes())


def save_tensors(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            _write_tensor(fh, name, arr)


def load_tensors(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", raw, off)
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(dims).copy()
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return out


def save_checkpoint(path, net: DenseNet) -> None:
    tensors = {"split_index": np.array(float(net.split_index))}
    for k, layer in enumerate(net.layers):
        tensors[f"layer{k}.weight"] = layer.weight
        tensors[f"layer{k}.bias"] = layer.bias
        tensors[f"layer{k}.relu"] = np.array(1.0 if layer.activation == "relu" else 0.0)
    save_tensors(path, tensors)


def load_checkpoint(path, backbone_only: bool = False) -> DenseNet:
    t = load_tensors(path)
    layers = []
    k = 0
    while f"layer{k}.weight" in t:
        act = "relu" if t[f"layer{k}.relu"] == 1.0 else "identity"
        layers.append(Layer(t[f"layer{k}.weight"], t[f"layer{k}.bias"], act))
        k += 1
    if not layers or "split_index" not in t:
        raise FormatError(f"{path}: checkpoint has no network")
    net = DenseNet(layers, split_index=int(t["split_index"]))
    return net.backbone() if backbone_only else net


# -- metrics -----------------------------------------------------------------


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- config ------------------------------------------------------------------


def parse_value(text: str):
    """Interpret a config value: bool, int, float, comma list, or string."""
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [parse_value(p) for p in inner.split(",")] if inner else []
    if "," in text:
        return [parse_value(p) for p in text.split(",")]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; ``[section]`` headers
    prefix following keys with ``section.``."""
    out = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if section and "." not in key:
            key = f"{section}.{key}"
        out[key] = parse_value(value)
    return out


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text(), source=str(path))


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, (list, tuple)):
            v = "[" + ", ".join(str(x) for x in v) + "]"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
