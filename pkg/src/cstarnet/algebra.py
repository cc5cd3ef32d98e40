"""Elements of A = C(Z) sampled at anchor points, and the Hilbert module A^N.

Functions on the compact set Z are stored by their values at a fixed set of
anchors. An element may additionally carry coefficients in the RBF span V
(see :mod:`cstarnet.basis`) plus an exact constant offset, so that constant
functions such as 1_A are representable everywhere on Z. Only elements with
coefficients can be evaluated away from the anchors. Scalars are real, so the
involution is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

if TYPE_CHECKING:
    from cstarnet.basis import RidgeProjector

POSITIVITY_TOL = 1e-10


class AlgebraError(ValueError):
    """Base class for misuse of algebra elements."""


class AnchorMismatchError(AlgebraError):
    pass


class RepresentationError(AlgebraError):
    """Raised when an operation needs the V-coefficients of an element."""


class DomainError(AlgebraError):
    pass


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Distinct points z_1..z_l of Z, together with the bounding box of Z."""

    points: np.ndarray
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] < 1:
            raise AlgebraError("an anchor set needs at least one point")
        d = pts.shape[1]
        lo = np.full(d, -np.inf) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=np.float64), (d,)).copy()
        hi = np.full(d, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=np.float64), (d,)).copy()
        if not np.all(np.isfinite(pts)):
            raise AlgebraError("anchor coordinates must be finite")
        if np.any(pts < lo) or np.any(pts > hi):
            raise DomainError("anchors must lie inside the box of Z")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise AlgebraError("anchors must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.count

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=np.float64)
        return bool(np.all(z >= self.lower) and np.all(z <= self.upper))

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorSet":
        return cls(np.asarray(d["points"]), np.asarray(d["lower"]), np.asarray(d["upper"]))


def _same_anchors(a: AnchorSet, b: AnchorSet) -> bool:
    return a is b or (a.points.shape == b.points.shape and np.array_equal(a.points, b.points))


class AElement:
    """A real function on Z, known by its anchor samples.

    ``coeffs`` are present iff the element is a member of V + R 1_A; then
    ``samples == offset + gram @ coeffs`` and ``projector`` identifies the
    basis. Parameters produced by training always have ``offset == 0``.
    """

    __slots__ = ("anchors", "samples", "coeffs", "projector", "offset")

    def __init__(self, anchors: AnchorSet, samples, coeffs=None,
                 projector: "RidgeProjector | None" = None, offset: float = 0.0):
        samples = np.array(samples, dtype=np.float64).reshape(-1)
        if samples.shape[0] != anchors.count:
            raise AlgebraError(
                f"expected {anchors.count} samples, got {samples.shape[0]}")
        if not np.all(np.isfinite(samples)):
            raise AlgebraError("samples must be finite")
        if coeffs is not None:
            if projector is None:
                raise RepresentationError("coefficients need the projector that defines V")
            coeffs = np.array(coeffs, dtype=np.float64).reshape(-1)
            if coeffs.shape != samples.shape:
                raise AlgebraError("one coefficient per basis function is required")
        samples.setflags(write=False)
        if coeffs is not None:
            coeffs.setflags(write=False)
        self.anchors = anchors
        self.samples = samples
        self.coeffs = coeffs
        self.projector = projector
        self.offset = float(offset)

    def __repr__(self):
        tag = "V" if self.coeffs is not None else "samples"
        return f"AElement({tag}, l={self.anchors.count})"

    @property
    def in_V(self) -> bool:
        return self.coeffs is not None

    def __add__(self, other):
        return pointwise(self, other, "add")

    def __sub__(self, other):
        return pointwise(self, other, "sub")

    def __mul__(self, other):
        return pointwise(self, other, "mul")

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.samples)))


def constant(anchors: AnchorSet, value: float, projector: "RidgeProjector | None" = None) -> AElement:
    """The constant function ``z -> value``; fitted into V when a projector is given."""
    samples = np.full(anchors.count, float(value))
    if projector is None:
        return AElement(anchors, samples)
    return AElement(anchors, samples, np.zeros(anchors.count), projector, offset=value)


def identity_element(anchors: AnchorSet, projector: "RidgeProjector | None" = None) -> AElement:
    return constant(anchors, 1.0, projector)


def evaluate(a: AElement, z) -> float:
    """Evaluate a V member at an arbitrary point of Z."""
    if a.coeffs is None:
        raise RepresentationError("off-anchor evaluation requires V coefficients")
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != a.anchors.dim:
        raise DomainError(f"point has dimension {z.shape[0]}, Z has {a.anchors.dim}")
    if not a.anchors.contains(z):
        raise DomainError(f"{z} lies outside the box of Z")
    v = a.projector.basis.features(z[None, :])[0]
    return float(a.offset + v @ a.coeffs)


def pointwise(a: AElement, b: AElement, op: str) -> AElement:
    if not _same_anchors(a.anchors, b.anchors):
        raise AnchorMismatchError("elements live on different anchor sets")
    if op == "add":
        samples = a.samples + b.samples
    elif op == "sub":
        samples = a.samples - b.samples
    elif op == "mul":
        samples = a.samples * b.samples
    else:
        raise AlgebraError(f"unknown pointwise op {op!r}")

    proj = a.projector if a.projector is not None else b.projector
    both = a.coeffs is not None and b.coeffs is not None
    if op == "mul":
        if both and not np.any(b.coeffs):
            return AElement(a.anchors, samples, a.coeffs * b.offset, proj, a.offset * b.offset)
        if both and not np.any(a.coeffs):
            return AElement(a.anchors, samples, b.coeffs * a.offset, proj, a.offset * b.offset)
        # products leave V, so refit
        if proj is None:
            return AElement(a.anchors, samples)
        return proj.project(samples)
    if both:
        sign = 1.0 if op == "add" else -1.0
        return AElement(a.anchors, samples, a.coeffs + sign * b.coeffs, proj,
                        a.offset + sign * b.offset)
    return AElement(a.anchors, samples)


class AVector:
    """An element of A^N, stored as an (N, l) array of anchor samples."""

    __slots__ = ("anchors", "samples", "coeffs", "projector", "offsets")

    def __init__(self, anchors: AnchorSet, samples, coeffs=None,
                 projector: "RidgeProjector | None" = None, offsets=None):
        samples = np.array(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None] if anchors.count == 1 else samples[None, :]
        if samples.ndim != 2 or samples.shape[1] != anchors.count:
            raise AlgebraError(f"samples must have shape (N, {anchors.count})")
        if samples.shape[0] < 1:
            raise AlgebraError("an A-vector needs N >= 1")
        if not np.all(np.isfinite(samples)):
            raise AlgebraError("samples must be finite")
        if coeffs is not None:
            if projector is None:
                raise RepresentationError("coefficients need the projector that defines V")
            coeffs = np.array(coeffs, dtype=np.float64).reshape(samples.shape)
            coeffs.setflags(write=False)
        offsets = np.zeros(samples.shape[0]) if offsets is None else np.array(
            offsets, dtype=np.float64).reshape(samples.shape[0])
        samples.setflags(write=False)
        offsets.setflags(write=False)
        self.anchors = anchors
        self.samples = samples
        self.coeffs = coeffs
        self.projector = projector
        self.offsets = offsets

    @classmethod
    def from_elements(cls, elems: Sequence[AElement]) -> "AVector":
        if len(elems) == 0:
            raise AlgebraError("an A-vector needs N >= 1")
        anchors = elems[0].anchors
        for e in elems[1:]:
            if not _same_anchors(anchors, e.anchors):
                raise AnchorMismatchError("all elements must share one anchor set")
        samples = np.stack([e.samples for e in elems])
        if all(e.coeffs is not None for e in elems):
            coeffs = np.stack([e.coeffs for e in elems])
            return cls(anchors, samples, coeffs, elems[0].projector, [e.offset for e in elems])
        return cls(anchors, samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __getitem__(self, k: int) -> AElement:
        if self.coeffs is None:
            return AElement(self.anchors, self.samples[k])
        return AElement(self.anchors, self.samples[k], self.coeffs[k], self.projector, self.offsets[k])

    def __iter__(self) -> Iterator[AElement]:
        for k in range(len(self)):
            yield self[k]

    @property
    def elems(self) -> list[AElement]:
        return list(self)

    @property
    def in_V(self) -> bool:
        return self.coeffs is not None

    def at(self, z_index: int) -> np.ndarray:
        """The real vector theta(z_i)."""
        return self.samples[:, z_index]

    def __repr__(self):
        return f"AVector(N={len(self)}, l={self.anchors.count}, in_V={self.in_V})"


def inner_product(u: AVector, v: AVector) -> AElement:
    """<u, v> = sum_i u_i^* v_i, pointwise in z."""
    if len(u) != len(v):
        raise AlgebraError(f"length mismatch: {len(u)} vs {len(v)}")
    if not _same_anchors(u.anchors, v.anchors):
        raise AnchorMismatchError("vectors live on different anchor sets")
    return AElement(u.anchors, np.sum(u.samples * v.samples, axis=0))


def norm(u: AVector) -> float:
    """||u|| = ||<u, u>||_A^{1/2}, with the sup norm taken over anchors."""
    return float(np.sqrt(np.max(inner_product(u, u).samples)))


def is_positive(a: AElement, tol: float = POSITIVITY_TOL) -> bool:
    return bool(np.min(a.samples) >= -tol)
