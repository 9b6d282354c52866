"""Grid-field files.

1D and 2D fields are CSV in row-major order (one row per first-axis index),
3D fields are raw little-endian float32. Both carry a JSON sidecar next to
the payload (``name.json`` for ``name.csv`` / ``name.raw``)::

    {"shape": [nx, ny, nz], "spacing": [dx, dy, dz], "order": "row-major",
     "origin": [x0, y0, z0]}

``origin`` is the lower corner of the domain and defaults to zeros. A CSV
without sidecar is read on a unit-spacing grid anchored at the origin.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataIOError, MalformedHeader, ShapeMismatch
from .forward import GridField
from .geometry import Grid


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _header(grid: Grid) -> dict:
    return {
        "shape": list(grid.shape),
        "spacing": [float(h) for h in grid.spacing],
        "order": "row-major",
        "origin": [float(v) for v in grid.domain.lower],
    }


def _read_header(path: Path) -> dict:
    try:
        head = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataIOError(f"missing sidecar {path}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: not valid JSON ({exc.msg})") from exc
    if not isinstance(head, dict):
        raise MalformedHeader(f"{path}: header must be a JSON object")
    for key in ("shape", "spacing"):
        if key not in head or not isinstance(head[key], list) or not head[key]:
            raise MalformedHeader(f"{path}: '{key}' must be a non-empty list")
    shape, spacing = head["shape"], head["spacing"]
    if not all(isinstance(n, int) and not isinstance(n, bool) and n > 0 for n in shape):
        raise MalformedHeader(f"{path}: shape entries must be positive integers")
    if len(spacing) != len(shape) or not all(
        isinstance(h, (int, float)) and not isinstance(h, bool) and h > 0 for h in spacing
    ):
        raise MalformedHeader(f"{path}: spacing needs one positive number per axis")
    if head.get("order", "row-major") != "row-major":
        raise MalformedHeader(f"{path}: only row-major order is supported")
    origin = head.get("origin", [0.0] * len(shape))
    if not isinstance(origin, list) or len(origin) != len(shape):
        raise MalformedHeader(f"{path}: origin needs one number per axis")
    return {"shape": tuple(shape), "spacing": spacing, "origin": origin}


def _grid_from_header(head: dict) -> Grid:
    return Grid.from_spacing(head["origin"], head["spacing"], head["shape"])


def _format_row(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def write_field(field: GridField, path) -> Path:
    """Write ``field`` (CSV for 1D/2D, raw float32 for 3D) plus its sidecar."""
    path = Path(path)
    grid = field.grid
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if grid.dim == 3:
            field.values.astype("<f4").tofile(path)
        else:
            rows = field.values.reshape(grid.shape[0], -1)
            path.write_text("".join(_format_row(r) + "\n" for r in rows), encoding="utf-8")
        sidecar_path(path).write_text(json.dumps(_header(grid), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv_field(path) -> GridField:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise MalformedHeader(f"{path}: non-numeric entry ({exc})") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise ShapeMismatch(f"{path}: rows must be non-empty and of equal length")
    data = np.array(rows)
    side = sidecar_path(path)
    if side.exists():
        grid = _grid_from_header(_read_header(side))
    else:
        shape = (data.shape[0],) if data.shape[1] == 1 else data.shape
        grid = Grid.from_spacing(np.zeros(len(shape)), np.ones(len(shape)), shape)
    if grid.dim > 2 or data.size != grid.size:
        raise ShapeMismatch(f"{path}: {data.size} values, sidecar declares {grid.shape}")
    return GridField(grid, data.reshape(grid.shape))


def ingest_volume(path) -> GridField:
    """Load a raw little-endian float32 volume described by its JSON sidecar.

    ``path`` may name either the payload or the sidecar itself.
    """
    path = Path(path)
    if path.suffix == ".json":
        head_path = path
        candidates = [path.with_suffix(s) for s in (".raw", ".bin", ".f32")]
        path = next((c for c in candidates if c.exists()), candidates[0])
    else:
        head_path = sidecar_path(path)
    head = _read_header(head_path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    n = int(np.prod(head["shape"]))
    if len(payload) != 4 * n:
        raise ShapeMismatch(
            f"{path}: {len(payload)} bytes, shape {list(head['shape'])} needs {4 * n}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(float)
    return GridField(_grid_from_header(head), values.reshape(head["shape"]))


def read_field(path) -> GridField:
    """Dispatch on the extension: ``.csv`` is text, anything else raw float32."""
    path = Path(path)
    return read_csv_field(path) if path.suffix == ".csv" else ingest_volume(path)


def read_mask(path) -> np.ndarray:
    return read_field(path).values != 0
