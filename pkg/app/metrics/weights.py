"""
Kernel-weight exports for per-block weight distribution analysis.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import ConfigError
from app.nn.model import BLOCKS, block_of

logger = logging.getLogger(__name__)


def _is_kernel(name):
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("kernel", "weight") or leaf.startswith("W_")


def export_weight_distribution(state, module_tag):
    """
    Flattened kernel weights (biases excluded) of one block, in declared order.

    Args:
        state (ModelState): Model weights.
        module_tag (str): LSFE, S2TLR or G2A (case-insensitive).

    Returns:
        pandas.DataFrame: ``layer,value`` rows.
    """
    tag = str(module_tag).upper()
    if tag not in BLOCKS:
        raise ConfigError(f"Unknown module tag {module_tag!r}; expected one of {', '.join(BLOCKS)}")
    frames = [
        pd.DataFrame({"layer": name, "value": tensor.ravel().astype(np.float64)})
        for name, tensor in state.params.items()
        if block_of(name) == tag and _is_kernel(name)
    ]
    frame = pd.concat(frames, ignore_index=True)
    logger.info(f"event=weights_exported block={tag} values={len(frame)}")
    return frame


def weight_histogram(values, bins=50):
    """
    Returns:
        pandas.DataFrame: ``bin_left,bin_right,count`` rows.
    """
    if bins < 1:
        raise ConfigError(f"bins must be >= 1 (got {bins})")
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def write_weight_exports(state, module_tag, path, bins=None):
    """Write the raw export and, when ``bins`` is set, a ``*_hist.csv`` next to it."""
    path = Path(path)
    frame = export_weight_distribution(state, module_tag)
    frame.to_csv(path, index=False)
    written = [path]
    if bins:
        hist_path = path.with_name(f"{path.stem}_hist.csv")
        weight_histogram(frame["value"], bins).to_csv(hist_path, index=False)
        written.append(hist_path)
    return written
