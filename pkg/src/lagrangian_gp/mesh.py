"""Uniform space-time meshes, discrete fields and stencil extraction.

A discrete field stores values ``u[i, j]`` in ``R^d`` at time level ``i`` and
space index ``j``; the spatial direction is periodic. Stencils are the ordered
tuples of neighbouring values entering one discrete Euler-Lagrange evaluation:

three-point densities (7 values)::

    (u, u^+, u_+, u^-, u^-_+, u_-, u_-^+)

four-point densities (9 values)::

    (u, u^+, u_+, u_+^+, u^-, u^-_+, u_-, u_-^+, u_-^-)

Superscripts shift in time, subscripts in space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

THREE_POINT = "three_point"
FOUR_POINT = "four_point"
KINDS = (THREE_POINT, FOUR_POINT)

# (time offset, space offset) of every stencil entry, in the fixed order
STENCIL_OFFSETS = {
    THREE_POINT: ((0, 0), (1, 0), (0, 1), (-1, 0), (-1, 1), (0, -1), (1, -1)),
    FOUR_POINT: ((0, 0), (1, 0), (0, 1), (1, 1), (-1, 0), (-1, 1), (0, -1), (1, -1), (-1, -1)),
}


class FieldFormatError(ValueError):
    """Raised when a field file cannot be parsed."""


def stencil_length(kind: str) -> int:
    check_kind(kind)
    return len(STENCIL_OFFSETS[kind])


def n_slots(kind: str) -> int:
    """Number of arguments of a density of the given kind (3 or 4)."""
    check_kind(kind)
    return 3 if kind == THREE_POINT else 4


def check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown stencil kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class Mesh:
    dt: float
    dx: float
    nt: int
    nx: int
    d: int = 1
    periodic_x: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError("mesh steps dt and dx must be positive")
        if self.nt < 2 or self.nx < 3 or self.d < 1:
            raise ValueError(f"invalid mesh sizes nt={self.nt}, nx={self.nx}, d={self.d}")
        if not self.periodic_x:
            raise ValueError("only spatially periodic meshes are supported")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.nx, self.d)

    def with_nt(self, nt: int) -> "Mesh":
        return Mesh(self.dt, self.dx, nt, self.nx, self.d, self.periodic_x)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "dx": self.dx, "nt": self.nt, "nx": self.nx,
                "d": self.d, "periodic_x": self.periodic_x}


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Field values of shape ``(nt, nx, d)`` on a :class:`Mesh`.

    ``meta`` carries diagnostics (e.g. Newton residuals of a propagation) and
    is not written to field files.
    """

    mesh: Mesh
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 2 and self.mesh.d == 1:
            values = values[..., None]
        if values.shape != self.mesh.shape:
            raise ValueError(f"values shape {values.shape} does not match mesh {self.mesh.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def slice(self, i: int) -> np.ndarray:
        """Time level ``i`` as a flat vector of length ``nx * d``."""
        return self.values[i].reshape(-1)


@dataclass(frozen=True, eq=False)
class StencilData:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        check_kind(self.kind)
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] != stencil_length(self.kind):
            raise ValueError(f"{self.kind} stencil needs {stencil_length(self.kind)} points, got {pts.shape[0]}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @classmethod
    def zeros(cls, kind: str, d: int) -> "StencilData":
        return cls(kind, np.zeros((stencil_length(kind), d)))


def stencil_array(stencils, kind: str | None = None) -> np.ndarray:
    """Stack stencils into an array of shape ``(M, 7 or 9, d)``.

    Accepts a list of :class:`StencilData`, a single one, or an array that is
    already stacked.
    """
    if isinstance(stencils, StencilData):
        stencils = [stencils]
    if isinstance(stencils, np.ndarray):
        arr = np.asarray(stencils, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
    else:
        stencils = list(stencils)
        if kind is not None:
            for s in stencils:
                if s.kind != kind:
                    raise ValueError(f"stencil kind {s.kind} does not match {kind}")
        if not stencils:
            n = stencil_length(kind) if kind else 0
            return np.zeros((0, n, 1))
        arr = np.stack([s.points for s in stencils])
    if kind is not None and arr.shape[1] != stencil_length(kind):
        raise ValueError(f"stencils of length {arr.shape[1]} are not {kind} stencils")
    return arr


def field_stencil_array(field: DiscreteField, kind: str) -> np.ndarray:
    """All interior stencils of ``field`` as an array ``((nt-2)*nx, 7|9, d)``.

    Ordered by time index ``i = 1..nt-2`` then space index ``j = 0..nx-1``.
    """
    check_kind(kind)
    nt, nx, d = field.values.shape
    if nt < 3:
        raise ValueError(f"insufficient time levels: need nt >= 3, got {nt}")
    ii, jj = np.meshgrid(np.arange(1, nt - 1), np.arange(nx), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    offs = np.array(STENCIL_OFFSETS[kind])
    ti = ii[:, None] + offs[None, :, 0]
    xj = (jj[:, None] + offs[None, :, 1]) % nx
    return field.values[ti, xj]


def extract_stencils(field: DiscreteField, kind: str) -> list[StencilData]:
    arr = field_stencil_array(field, kind)
    return [StencilData(kind, s) for s in arr]


def l2_error(a: DiscreteField, b: DiscreteField) -> float:
    """Discrete l2 distance weighted by the cell measure ``dt * dx``."""
    if a.mesh != b.mesh:
        raise ValueError(f"mesh mismatch: {a.mesh} vs {b.mesh}")
    diff = a.values - b.values
    scale = float(np.max(np.abs(diff), initial=0.0))
    if scale == 0.0:
        return 0.0
    # scaled so tiny differences do not underflow when squared
    return scale * float(np.sqrt(np.sum((diff / scale) ** 2) * a.mesh.dt * a.mesh.dx))


# --- file IO -------------------------------------------------------------

_MESH_KEYS = ("dt", "dx", "nt", "nx", "d", "periodic_x")


def field_to_dict(field: DiscreteField) -> dict:
    return {"mesh": field.mesh.to_dict(), "values": field.values.tolist()}


def field_from_dict(obj) -> DiscreteField:
    if not isinstance(obj, dict):
        raise FieldFormatError("field file must contain a JSON object")
    for key in ("mesh", "values"):
        if key not in obj:
            raise FieldFormatError(f"missing key {key!r}")
    m = obj["mesh"]
    if not isinstance(m, dict):
        raise FieldFormatError("key 'mesh' must be an object")
    for key in _MESH_KEYS:
        if key not in m:
            raise FieldFormatError(f"missing mesh key {key!r}")
    try:
        mesh = Mesh(float(m["dt"]), float(m["dx"]), int(m["nt"]), int(m["nx"]), int(m["d"]),
                    bool(m["periodic_x"]))
    except (TypeError, ValueError) as exc:
        raise FieldFormatError(f"invalid mesh: {exc}") from exc
    try:
        values = np.array(obj["values"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise FieldFormatError(f"key 'values' is not a numeric array: {exc}") from exc
    if values.size != mesh.nt * mesh.nx * mesh.d or values.shape != mesh.shape:
        raise FieldFormatError(
            f"shape mismatch in 'values': got {values.shape}, mesh requires {mesh.shape}")
    return DiscreteField(mesh, values)


def write_field(field: DiscreteField, path) -> None:
    Path(path).write_text(json.dumps(field_to_dict(field)) + "\n")


def read_field(path) -> DiscreteField:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FieldFormatError(f"malformed field file {path}: {exc}") from exc
    return field_from_dict(obj)
