"""Field serialisation: flat binary files, CSV slices and flow checkpoints.

Binary field layout (little endian)::

    b"NHF1" | uint32 ndim | uint32 stencil order | uint64 sizes[ndim] | float64 values

Values are stored row-major, last axis fastest.  A checkpoint prefixes a field
block with ``b"NHC1" | float64 t | uint64 step_count | float64 dt |
uint32 label length | label bytes``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from nilheat.errors import ShapeMismatch

FIELD_MAGIC = b"NHF1"
CHECKPOINT_MAGIC = b"NHC1"


def _field_bytes(values: np.ndarray, order: int) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    head = FIELD_MAGIC + struct.pack("<II", values.ndim, int(order))
    head += struct.pack(f"<{values.ndim}Q", *values.shape)
    return head + values.tobytes(order="C")


def _parse_field(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int, int]:
    if buf[offset:offset + 4] != FIELD_MAGIC:
        raise ValueError("not a field block")
    ndim, order = struct.unpack_from("<II", buf, offset + 4)
    pos = offset + 12
    sizes = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    count = int(np.prod(sizes))
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(sizes)
    return values.astype(np.float64), int(order), pos + 8 * count


def write_field(path, values: np.ndarray, order: int = 4) -> None:
    Path(path).write_bytes(_field_bytes(values, order))


def read_field(path) -> tuple[np.ndarray, int]:
    """Return ``(values, stencil_order)``."""
    values, order, _ = _parse_field(Path(path).read_bytes())
    return values, order


def write_csv_slice(path, grid, values: np.ndarray, axes=(0, 1), fixed=None) -> None:
    """Two-dimensional slice through ``axes``; other axes held at ``fixed``
    indices (default: the index nearest the domain centre)."""
    if values.shape != grid.shape:
        raise ShapeMismatch(f"field shape {values.shape} does not match grid {grid.shape}")
    a0, a1 = axes
    index = []
    for ax in range(grid.ndim):
        if ax in axes:
            index.append(slice(None))
        elif fixed is not None and ax in fixed:
            index.append(int(fixed[ax]))
        else:
            index.append(int(np.argmin(np.abs(grid.axis_coords(ax) - (grid.origin[ax] + 0.5)))))
    plane = values[tuple(index)]
    if a0 > a1:
        plane = plane.T
    x0 = grid.axis_coords(a0)
    x1 = grid.axis_coords(a1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{a0}", f"x{a1}", "value"])
        for i, xa in enumerate(x0):
            for j, xb in enumerate(x1):
                w.writerow([repr(float(xa)), repr(float(xb)), repr(float(plane[i, j]))])


def save_checkpoint(path, state, model) -> None:
    label = model.spec.label.encode()
    head = CHECKPOINT_MAGIC + struct.pack("<dQdI", float(state.t), int(state.step_count),
                                          float(state.dt), len(label)) + label
    Path(path).write_bytes(head + _field_bytes(state.u, model.grid.stencil_order))


def load_checkpoint(path, model=None):
    """Read a checkpoint; when ``model`` is given its label and grid must match."""
    from nilheat.heat import FlowState

    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    t, steps, dt, n = struct.unpack_from("<dQdI", buf, 4)
    pos = 4 + struct.calcsize("<dQdI")
    label = buf[pos:pos + n].decode()
    u, _, _ = _parse_field(buf, pos + n)
    if model is not None:
        if label != model.spec.label or u.shape != model.grid.shape:
            raise ShapeMismatch(f"checkpoint for {label} {u.shape} does not match "
                                f"{model.spec.label} {model.grid.shape}")
    return FlowState(t=t, u=u, step_count=int(steps), dt=dt)
