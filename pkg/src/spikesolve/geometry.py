"""Box domains, cell-centred sampling grids and discrete (Dirac) measures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, MalformedHeader, PositionOutOfDomain


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in 1, 2 or 3 dimensions."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise DimensionMismatch("lower and upper must be vectors of equal length")
        if lo.size not in (1, 2, 3):
            raise ConfigError(f"domain dimension must be 1, 2 or 3, got {lo.size}")
        if not np.all(lo < hi):
            raise ConfigError("domain requires lower < upper on every axis")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, Domain)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper)))


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred sampling of a domain.

    Sample ``i`` on axis ``k`` sits at ``lower[k] + (i + 0.5) * spacing[k]``.
    """

    domain: Domain
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(shape) != self.domain.dim:
            raise DimensionMismatch(f"grid shape {shape} does not match domain dim {self.domain.dim}")
        if any(n < 1 for n in shape):
            raise ConfigError("grid needs at least one sample per axis")
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return self.domain.widths / np.asarray(self.shape, dtype=float)

    @property
    def axes(self) -> list[np.ndarray]:
        h = self.spacing
        return [
            self.domain.lower[k] + (np.arange(n) + 0.5) * h[k] for k, n in enumerate(self.shape)
        ]

    def points(self) -> np.ndarray:
        """All sample positions as an ``(size, dim)`` array in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self, factor: int) -> "Grid":
        return Grid(self.domain, tuple(n * int(factor) for n in self.shape))

    @classmethod
    def from_spacing(cls, lower, spacing, shape) -> "Grid":
        """Grid whose cells of size ``spacing`` start at ``lower``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = lower + np.asarray(spacing, dtype=float) * np.asarray(shape, dtype=float)
        return cls(Domain(lower, upper), tuple(shape))


def project_into_domain(x, dom: Domain) -> np.ndarray:
    """Componentwise clamp of ``x`` (one point or a stack of points) onto ``dom``."""
    return np.clip(np.asarray(x, dtype=float), dom.lower, dom.upper)


@dataclass(frozen=True)
class DiracMeasure:
    """Finite sum of weighted Diracs ``sum_i a_i delta_{x_i}``.

    Amplitudes are stored signed; positivity is a solver constraint.
    """

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=float)).ravel()
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            # a flat vector is a 1D measure when amplitudes match, otherwise a single point
            x = x.reshape(-1, 1) if x.size == a.size else x.reshape(1, -1)
        if x.ndim != 2:
            raise DimensionMismatch("positions must be an (N, dim) array")
        if x.shape[0] != a.size:
            raise DimensionMismatch(
                f"{x.shape[0]} positions but {a.size} amplitudes"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a))):
            raise ConfigError("measure entries must be finite")
        object.__setattr__(self, "positions", _frozen(x))
        object.__setattr__(self, "amplitudes", _frozen(a))

    @classmethod
    def empty(cls, dim: int) -> "DiracMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.amplitudes.size

    def __eq__(self, other):
        return (
            isinstance(other, DiracMeasure)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.amplitudes, other.amplitudes)
        )

    __hash__ = None

    def in_domain(self, dom: Domain) -> bool:
        return len(self) == 0 or dom.contains(self.positions)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(self.dim)] + ["amplitude"])
        for x, a in zip(self.positions, self.amplitudes):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(a))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DiracMeasure":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise MalformedHeader("empty spikes file")
        header = [h.strip() for h in rows[0]]
        dim = len(header) - 1
        if dim not in (1, 2, 3) or header != [f"x{k}" for k in range(dim)] + ["amplitude"]:
            raise MalformedHeader(f"unexpected spikes header {header!r}")
        body = [r for r in rows[1:] if r]
        if any(len(r) != dim + 1 for r in body):
            raise MalformedHeader("row width does not match header")
        data = np.array(body, dtype=float).reshape(-1, dim + 1)
        return cls(data[:, :dim], data[:, dim])

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "DiracMeasure":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def tv_norm(mu: DiracMeasure) -> float:
    """Total variation of a discrete measure, i.e. the l1 norm of its amplitudes."""
    return float(np.sum(np.abs(mu.amplitudes)))


def prune(mu: DiracMeasure, amp_tol: float = 0.0) -> DiracMeasure:
    """Drop spikes with ``|a_i| <= amp_tol``, keeping survivors in order."""
    if amp_tol < 0:
        raise ConfigError("amp_tol must be non-negative")
    keep = np.abs(mu.amplitudes) > amp_tol
    return DiracMeasure(mu.positions[keep], mu.amplitudes[keep])


def add_spike(mu: DiracMeasure, x, a: float, domain: Domain | None = None) -> DiracMeasure:
    """Return ``mu + a * delta_x``.

    A spike landing exactly on an existing position is merged into it by
    summing amplitudes so positions stay pairwise distinct.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != mu.dim:
        raise DimensionMismatch(f"point of dim {x.size} added to a {mu.dim}D measure")
    if domain is not None and not domain.contains(x):
        raise PositionOutOfDomain(f"{x.tolist()} lies outside the domain")
    hit = np.flatnonzero(np.all(mu.positions == x, axis=1))
    if hit.size:
        amps = mu.amplitudes.copy()
        amps[hit[0]] += a
        return DiracMeasure(mu.positions, amps)
    return DiracMeasure(np.vstack([mu.positions, x[None, :]]), np.append(mu.amplitudes, a))


def as_points(x: Sequence[float] | np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, dim)
