"""
SVOC container: magic, format version, canonical JSON config and a sorted
table of little-endian tensors. Used for generator checkpoints and for
single-tensor files such as mel spectrograms.

    b"SVOC" | u32 version | u32 n | n bytes JSON | u32 tensor count
    per tensor: u16 name length | name | 3-byte dtype tag | u8 rank | u32 dims | payload
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import torch

from .errors import CorruptCheckpoint, InvalidCheckpoint, InvalidInput
from .model import Generator, GeneratorConfig, build_generator

logger = logging.getLogger(__name__)

MAGIC = b"SVOC"
FORMAT_VERSION = 1
KIND_GENERATOR = "generator"
KIND_TENSOR = "tensor"

_DTYPES: Dict[bytes, Tuple[np.dtype, torch.dtype]] = {
    b"f32": (np.dtype("<f4"), torch.float32),
    b"f64": (np.dtype("<f8"), torch.float64),
}
_TAGS = {torch_dtype: tag for tag, (_, torch_dtype) in _DTYPES.items()}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class Container:
    config: Dict[str, Any]
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _encode_tensor(name: str, tensor: torch.Tensor) -> bytes:
    tensor = tensor.detach().cpu().contiguous()
    tag = _TAGS.get(tensor.dtype)
    if tag is None:
        raise InvalidInput(f"{name}: dtype {tensor.dtype} cannot be stored (f32 or f64 only).")
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise InvalidInput(f"tensor name too long: {name[:32]}...")
    if tensor.dim() > 0xFF:
        raise InvalidInput(f"{name}: rank {tensor.dim()} is too large.")
    np_dtype = _DTYPES[tag][0]
    header = struct.pack("<H", len(encoded)) + encoded + tag + struct.pack("<B", tensor.dim())
    header += struct.pack(f"<{tensor.dim()}I", *tensor.shape)
    return header + tensor.numpy().astype(np_dtype, copy=False).tobytes()


def write_container(path, container: Container) -> Path:
    names = sorted(container.tensors)
    config = canonical_json(container.config).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", container.version, len(config)), config, struct.pack("<I", len(names))]
    chunks.extend(_encode_tensor(name, container.tensors[name]) for name in names)
    path = Path(path)
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CorruptCheckpoint(f"{self.source}: truncated while reading {what}.")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_container(path) -> Container:
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic, not an SVOC container.")
    (version,) = reader.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION}).")
    (config_len,) = reader.unpack("<I", "config length")
    try:
        config = json.loads(reader.take(config_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: config is not valid JSON ({exc}).") from exc
    if not isinstance(config, dict):
        raise CorruptCheckpoint(f"{path}: config must be a JSON object.")

    (count,) = reader.unpack("<I", "tensor count")
    tensors: Dict[str, torch.Tensor] = {}
    previous: Optional[str] = None
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"tensor {index} name length")
        try:
            name = reader.take(name_len, f"tensor {index} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpoint(f"{path}: tensor {index} name is not UTF-8.") from exc
        if previous is not None and name <= previous:
            raise CorruptCheckpoint(f"{path}: tensor names are not sorted and unique at {name!r}.")
        previous = name
        tag = reader.take(3, f"{name} dtype tag")
        if tag not in _DTYPES:
            raise CorruptCheckpoint(f"{path}: {name} has unknown dtype tag {tag!r}.")
        np_dtype, _ = _DTYPES[tag]
        (rank,) = reader.unpack("<B", f"{name} rank")
        dims = reader.unpack(f"<{rank}I", f"{name} dims")
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = reader.take(n_items * np_dtype.itemsize, f"{name} payload")
        array = np.frombuffer(payload, dtype=np_dtype).reshape(dims).copy()
        tensors[name] = torch.from_numpy(array)
    if reader.pos != len(reader.data):
        raise CorruptCheckpoint(f"{path}: {len(reader.data) - reader.pos} trailing bytes after the tensor table.")
    return Container(config=config, tensors=tensors, version=version)


def save_checkpoint(
    model: Generator,
    path,
    step: int = 0,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    generator = model.config.to_dict()
    config: Dict[str, Any] = {
        "kind": KIND_GENERATOR,
        "generator": generator,
        "config_sha256": config_digest(generator),
        "step": int(step),
        "variant": model.config.variant,
    }
    if extra:
        config["training"] = dict(extra)
    tensors = {name: value for name, value in model.state_dict().items()}
    path = write_container(path, Container(config=config, tensors=tensors))
    logger.info("saved %d tensors to %s", len(tensors), path)
    return path


def read_metadata(path) -> Dict[str, Any]:
    return read_container(path).config


def load_checkpoint(path) -> Generator:
    container = read_container(path)
    config = container.config
    if config.get("kind") != KIND_GENERATOR or not isinstance(config.get("generator"), dict):
        raise InvalidCheckpoint(f"{path}: not a generator checkpoint (kind={config.get('kind')!r}).")
    try:
        gen_cfg = GeneratorConfig.from_dict(config["generator"])
    except (TypeError, ValueError) as exc:
        raise InvalidCheckpoint(f"{path}: stored generator config is invalid ({exc}).") from exc

    dtypes = {t.dtype for t in container.tensors.values()}
    if len(dtypes) > 1:
        raise InvalidCheckpoint(f"{path}: mixed tensor dtypes {sorted(map(str, dtypes))}.")
    dtype = dtypes.pop() if dtypes else torch.float32
    model = build_generator(gen_cfg, dtype=dtype)
    expected = model.state_dict()

    missing = sorted(set(expected) - set(container.tensors))
    unexpected = sorted(set(container.tensors) - set(expected))
    if missing or unexpected:
        raise InvalidCheckpoint(f"{path}: missing tensors {missing[:5]}, unexpected tensors {unexpected[:5]}.")
    for name, tensor in container.tensors.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise InvalidCheckpoint(
                f"{path}: {name} has shape {tuple(tensor.shape)}, config implies {tuple(expected[name].shape)}."
            )
    model.load_state_dict(container.tensors)
    model.eval()
    return model


def save_tensor(path, tensor: torch.Tensor, name: str = "mel", meta: Optional[Mapping[str, Any]] = None) -> Path:
    config: Dict[str, Any] = {"kind": KIND_TENSOR, "name": name}
    if meta:
        config["meta"] = dict(meta)
    return write_container(path, Container(config=config, tensors={name: tensor}))


def load_tensor(path) -> torch.Tensor:
    container = read_container(path)
    if container.config.get("kind") != KIND_TENSOR or len(container.tensors) != 1:
        raise InvalidCheckpoint(f"{path}: expected a single-tensor container.")
    return next(iter(container.tensors.values()))
