"""Textual parameter checkpoints with exact round trips.

Format: one line per block, tab-separated ::

    <name>\t<d1>,<d2>,...\t<hex float> <hex float> ...

Values are written row-major with ``float.hex`` so reloading reproduces
parameters bit for bit. A leading ``#model`` line (written by
:func:`save_model`) records widths and activation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ContractError
from .nets import MlpModel


def _block_line(name: str, arr: np.ndarray) -> str:
    shape = ",".join(str(s) for s in arr.shape)
    vals = " ".join(float(v).hex() for v in np.asarray(arr, dtype=np.float64).ravel())
    return f"{name}\t{shape}\t{vals}"


def save_params(path, params: dict[str, np.ndarray], header: str | None = None) -> None:
    lines = [] if header is None else [header]
    for name in sorted(params):
        lines.append(_block_line(name, params[name]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> dict[str, np.ndarray]:
    params = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        name, shape_s, vals_s = line.split("\t")
        shape = tuple(int(s) for s in shape_s.split(",") if s)
        vals = np.array([float.fromhex(tok) for tok in vals_s.split()], dtype=np.float64)
        if int(np.prod(shape, dtype=np.int64)) != vals.size:
            raise ContractError(f"checkpoint block '{name}': shape {shape} vs {vals.size} values")
        params[name] = vals.reshape(shape)
    return params


def save_model(path, model: MlpModel) -> None:
    widths = ",".join(str(w) for w in model.widths)
    save_params(path, model.params, header=f"#model\t{widths}\t{model.activation}")


def load_model(path) -> MlpModel:
    first = Path(path).read_text().splitlines()[0]
    if not first.startswith("#model"):
        raise ContractError("checkpoint lacks a #model header line")
    _, widths_s, activation = first.split("\t")
    widths = [int(w) for w in widths_s.split(",")]
    return MlpModel(widths, activation, load_params(path))
