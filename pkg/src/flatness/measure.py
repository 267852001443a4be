"""Discrete measures, balls, affine planes and the elementary quantities
built from them (cutoff weights, plane angles, density ratios).

Every object here is immutable after construction.  Arrays held by the
dataclasses are copied and flagged read-only.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class UndefinedCoefficient(ValueError):
    """Raised when a normalised coefficient would divide by a zero mass."""


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite weighted point cloud in R^d.

    Parameters
    ----------
    points : array_like, shape (N, d)
    weights : array_like, shape (N,)
        Nonnegative and finite.  Zero weights are allowed and ignored by
        every downstream computation.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pts.ndim == 1 and len(w) and pts.size % len(w) == 0:
            pts = pts.reshape(len(w), -1)
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise ValueError(f"points {pts.shape} and weights {w.shape} do not match")
        if pts.shape[1] < 1:
            raise ValueError("dimension must be at least 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def empty(cls, dim: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def from_atoms(cls, atoms: Iterable, dim: int | None = None) -> "DiscreteMeasure":
        """Build from an iterable of ``(position, weight)`` pairs."""
        atoms = list(atoms)
        if not atoms:
            if dim is None:
                raise ValueError("dimension required for an empty atom list")
            return cls.empty(dim)
        pts = np.array([np.atleast_1d(np.asarray(p, float)) for p, _ in atoms])
        w = np.array([float(w) for _, w in atoms])
        return cls(pts, w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(math.fsum(self.weights))

    @property
    def atoms(self) -> list:
        return [(p.copy(), float(w)) for p, w in zip(self.points, self.weights)]

    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        return f"DiscreteMeasure(n_atoms={len(self)}, dim={self.dim}, mass={self.mass:.6g})"

    def select(self, mask) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points[mask], self.weights[mask])

    def positive(self) -> "DiscreteMeasure":
        """Drop zero-weight atoms."""
        return self.select(self.weights > 0)

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * c)

    def translated(self, v) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points + np.asarray(v, float), self.weights)

    def transformed(self, rotation, shift=None) -> "DiscreteMeasure":
        """Apply ``x -> R x + shift``."""
        pts = self.points @ np.asarray(rotation, float).T
        if shift is not None:
            pts = pts + np.asarray(shift, float)
        return DiscreteMeasure(pts, self.weights)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return DiscreteMeasure(
            np.vstack([self.points, other.points]),
            np.concatenate([self.weights, other.weights]),
        )

    def ball_mass(self, ball: "Ball") -> float:
        """Mass of the open ball."""
        inside = ball.contains(self.points)
        return float(math.fsum(self.weights[inside]))

    # serialization -------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        for p, w in zip(self.points, self.weights):
            buf.write(",".join(repr(float(v)) for v in p))
            buf.write("," + repr(float(w)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dim: int | None = None) -> "DiscreteMeasure":
        rows = []
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise MeasureFormatError(lineno, f"non-numeric field: {exc}") from None
            if len(vals) < 2:
                raise MeasureFormatError(lineno, "need at least one coordinate and a weight")
            if rows and len(vals) != len(rows[0]):
                raise MeasureFormatError(lineno, "inconsistent number of columns")
            if not all(math.isfinite(v) for v in vals) or vals[-1] < 0:
                raise MeasureFormatError(lineno, "non-finite value or negative weight")
            rows.append(vals)
        if not rows:
            if dim is None:
                raise MeasureFormatError(0, "empty input")
            return cls.empty(dim)
        arr = np.array(rows)
        return cls(arr[:, :-1], arr[:, -1])

    def to_json(self) -> str:
        atoms = [[float(v) for v in p] + [float(w)] for p, w in zip(self.points, self.weights)]
        return json.dumps({"dim": self.dim, "atoms": atoms})

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        data = json.loads(text)
        dim = int(data["dim"])
        atoms = data["atoms"]
        if not atoms:
            return cls.empty(dim)
        arr = np.array(atoms, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != dim + 1:
            raise ValueError("atom rows must have dim + 1 entries")
        return cls(arr[:, :-1], arr[:, -1])


class MeasureFormatError(ValueError):
    """Malformed measure file; ``row`` is 1-based (0 when not row specific)."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row
        self.reason = message


@dataclass(frozen=True, eq=False)
class Ball:
    """Open Euclidean ball B(center, radius)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        r = float(self.radius)
        if not (r > 0 and math.isfinite(r)):
            raise ValueError("radius must be positive and finite")
        object.__setattr__(self, "center", _frozen(np.atleast_1d(self.center)))
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def scaled(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)

    def distances(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        return np.sqrt(np.sum((pts - self.center) ** 2, axis=1))

    def contains(self, points) -> np.ndarray:
        return self.distances(points) < self.radius

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius!r})"


@dataclass(frozen=True, eq=False)
class AffinePlane:
    """n-dimensional affine plane ``base + span(frame rows)`` in R^d."""

    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base, float))
        frame = np.atleast_2d(np.asarray(self.frame, float))
        if frame.shape[1] != base.shape[0]:
            raise ValueError("frame vectors must live in the ambient space")
        n, d = frame.shape
        if n > d:
            raise ValueError("plane dimension exceeds ambient dimension")
        if np.max(np.abs(frame @ frame.T - np.eye(n))) > 1e-12:
            raise ValueError("frame must be orthonormal to 1e-12")
        object.__setattr__(self, "base", _frozen(base))
        object.__setattr__(self, "frame", _frozen(frame))

    @classmethod
    def from_directions(cls, base, directions) -> "AffinePlane":
        """Orthonormalise ``directions`` (rows) with a QR factorisation."""
        dirs = np.atleast_2d(np.asarray(directions, float))
        q, r = np.linalg.qr(dirs.T)
        if np.min(np.abs(np.diag(r))) < 1e-14 * max(1.0, np.max(np.abs(r))):
            raise ValueError("directions are linearly dependent")
        q = q * np.sign(np.diag(r))
        return cls(base, q.T)

    @property
    def n(self) -> int:
        return self.frame.shape[0]

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    def normals(self) -> np.ndarray:
        """Orthonormal basis (rows) of the orthogonal complement."""
        _, _, vt = np.linalg.svd(self.frame, full_matrices=True)
        return vt[self.n:]

    def coords(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        return (pts - self.base) @ self.frame.T

    def project(self, points) -> np.ndarray:
        return self.base + self.coords(points) @ self.frame

    def distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        diff = pts - self.base
        resid = diff - (diff @ self.frame.T) @ self.frame
        return np.sqrt(np.sum(resid * resid, axis=1))

    def translated(self, v) -> "AffinePlane":
        return AffinePlane(self.base + np.asarray(v, float), self.frame)

    def transformed(self, rotation, shift=None) -> "AffinePlane":
        R = np.asarray(rotation, float)
        base = R @ self.base
        if shift is not None:
            base = base + np.asarray(shift, float)
        return AffinePlane.from_directions(base, self.frame @ R.T)

    def __repr__(self):
        return f"AffinePlane(base={self.base.tolist()}, frame={self.frame.tolist()})"


def coordinate_plane(d: int, n: int = 1, offset=None) -> AffinePlane:
    """The plane spanned by the first n coordinate axes (optionally shifted)."""
    base = np.zeros(d) if offset is None else np.asarray(offset, float)
    return AffinePlane(base, np.eye(d)[:n])


# cutoff -------------------------------------------------------------------

def cutoff_profile(t):
    """Radial profile: 1 on [0, 2], (3 - t)^2 on (2, 3), 0 beyond."""
    t = np.asarray(t, float)
    out = np.where(t <= 2.0, 1.0, np.where(t >= 3.0, 0.0, (3.0 - t) ** 2))
    return out


def cutoff_weights(ball: Ball, points) -> np.ndarray:
    """phi_B evaluated at each point (vectorised)."""
    return cutoff_profile(ball.distances(points) / ball.radius)


def cutoff_value(ball: Ball, y) -> float:
    return float(cutoff_weights(ball, np.atleast_2d(y))[0])


def weighted_restrict(mu: DiscreteMeasure, ball: Ball, mode: str = "sharp") -> DiscreteMeasure:
    """Restrict to the open ball (``sharp``) or multiply by phi_B (``cutoff``).

    Atoms that end up with zero weight are removed.
    """
    if mode == "sharp":
        return mu.select(ball.contains(mu.points) & (mu.weights > 0))
    if mode == "cutoff":
        w = mu.weights * cutoff_weights(ball, mu.points)
        keep = w > 0
        return DiscreteMeasure(mu.points[keep], w[keep])
    raise ValueError(f"unknown restriction mode {mode!r}")


# planes --------------------------------------------------------------------

def plane_angle(L1: AffinePlane, L2: AffinePlane) -> float:
    """Hausdorff distance between the unit balls of the direction spaces.

    For subspaces of equal dimension this is the sine of the largest
    principal angle, ``|| P1 - P2 ||_op``.
    """
    if L1.d != L2.d or L1.n != L2.n:
        raise ValueError("planes must have the same dimension and ambient space")
    P1 = L1.frame.T @ L1.frame
    P2 = L2.frame.T @ L2.frame
    val = float(np.linalg.norm(P1 - P2, ord=2))
    return min(1.0, max(0.0, val))


# density quantities --------------------------------------------------------

def delta_coefficient(mu: DiscreteMeasure, x, r: float, n: int) -> float:
    """| mu(B(x,r))/r^n - mu(B(x,2r))/(2r)^n |."""
    x = np.asarray(x, float)
    m1 = mu.ball_mass(Ball(x, r))
    m2 = mu.ball_mass(Ball(x, 2 * r))
    return abs(m1 / r**n - m2 / (2 * r) ** n)


@dataclass(frozen=True)
class DensityRow:
    radius: float
    ratio: float
    doubling: float | None  # None when mu(B(x,r)) = 0


def density_estimates(mu: DiscreteMeasure, x, scales: Sequence[float], n: int) -> list:
    x = np.asarray(x, float)
    rows = []
    for r in scales:
        m1 = mu.ball_mass(Ball(x, r))
        m2 = mu.ball_mass(Ball(x, 2 * r))
        rows.append(DensityRow(float(r), m1 / r**n, (m2 / m1) if m1 > 0 else None))
    return rows
