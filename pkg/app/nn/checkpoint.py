"""
Checkpoint files.

Layout: an 8-byte little-endian length, that many bytes of UTF-8 JSON
metadata (sorted keys), then every parameter tensor as raw little-endian
IEEE-754 values in declared order.
"""
import json
import logging
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from app.errors import CheckpointError
from app.nn.model import ModelConfig, ModelState, check_state, parameter_summary

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")


def checkpoint_bytes(state, class_names=None, epoch=0, metric=None, extra=None):
    """Serialise a ModelState and its metadata."""
    tensors = []
    payload = []
    for name, tensor in state.params.items():
        little = tensor.astype(tensor.dtype.newbyteorder("<"), copy=False)
        tensors.append({"name": name, "shape": list(tensor.shape), "dtype": tensor.dtype.name})
        payload.append(np.ascontiguousarray(little).tobytes())
    summary = parameter_summary(state)
    metadata = {
        "format_version": FORMAT_VERSION,
        "model": asdict(state.config),
        "class_names": list(class_names) if class_names is not None else None,
        "seed": state.seed,
        "step": state.step,
        "epoch": epoch,
        "metric": metric,
        "parameter_count": summary["total"],
        "parameter_summary": summary,
        "tensors": tensors,
        "extra": extra or {},
    }
    header = json.dumps(metadata, sort_keys=True).encode("utf-8")
    return _LENGTH.pack(len(header)) + header + b"".join(payload)


def save_checkpoint(state, path, class_names=None, epoch=0, metric=None, extra=None):
    path = Path(path)
    path.write_bytes(checkpoint_bytes(state, class_names, epoch, metric, extra))
    logger.info(f"event=checkpoint_saved path={path} parameters={state.parameter_count} epoch={epoch}")
    return path


def parse_checkpoint(data):
    """
    Returns:
        tuple: (ModelState, metadata dict)

    Raises:
        CheckpointError: truncated data, bad metadata or tensors that do not
        match the stored model configuration.
    """
    if len(data) < _LENGTH.size:
        raise CheckpointError("Checkpoint is too short to hold a header")
    (length,) = _LENGTH.unpack_from(data, 0)
    end = _LENGTH.size + length
    if end > len(data):
        raise CheckpointError(f"Checkpoint header claims {length} bytes but only {len(data) - _LENGTH.size} remain")
    try:
        metadata = json.loads(data[_LENGTH.size:end].decode("utf-8"))
        config = ModelConfig(**metadata["model"])
        specs = metadata["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"Unreadable checkpoint metadata: {e}") from e
    if metadata.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {metadata.get('format_version')!r}")

    params = {}
    offset = end
    for spec in specs:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"]))
        size = count * dtype.itemsize
        if offset + size > len(data):
            raise CheckpointError(f"Checkpoint payload truncated in tensor {spec['name']}")
        values = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        params[spec["name"]] = values.reshape(spec["shape"]).astype(np.dtype(spec["dtype"]).newbyteorder("="))
        offset += size
    if offset != len(data):
        raise CheckpointError(f"Checkpoint has {len(data) - offset} trailing bytes")

    state = ModelState(config=config, params=params, step=metadata.get("step", 0), seed=metadata.get("seed", 13))
    check_state(state)
    return state, metadata


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    state, metadata = parse_checkpoint(path.read_bytes())
    logger.info(f"event=checkpoint_loaded path={path} parameters={metadata['parameter_count']}")
    return state, metadata
