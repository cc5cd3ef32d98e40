"""Gaussian RBF span V, kernel ridge projection P and the measure D on Z.

V = Span{v_1, ..., v_l} with v_i(z) = exp(-gamma * ||z_i - z||^2) centred on
the anchors. The projection of a function known at the anchors is the
kernel ridge fit ``coeffs = (G + mu I)^{-1} samples``; the Cholesky factor
of ``G + mu I`` is computed once and reused for every step of a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from cstarnet.algebra import (
    AElement,
    AlgebraError,
    AnchorSet,
    AVector,
    RepresentationError,
    evaluate,
)

DEFAULT_GAMMA = 10.0
DEFAULT_RADIUS = 0.05
DEFAULT_BOX = (-4.0, 4.0)


class ProjectionError(ArithmeticError):
    """The ridge system could not be factorized."""

    def __init__(self, msg: str, condition: float = float("nan")):
        super().__init__(f"{msg} (condition number {condition:.3e})")
        self.condition = condition


def make_grid_anchors() -> AnchorSet:
    """The nine anchors used in the 2-D density experiments.

    ``z_1 = [0, 0]`` followed by two rings of four points with radii 2 and 3,
    the outer ring rotated by 45 degrees.
    """
    pts = [[0.0, 0.0]]
    for i in (0, 1):
        for j in range(1, 5):
            ang = 2.0 * math.pi * (j - 1 + 0.5 * i) / 4.0
            pts.append([(2 + i) * math.sin(ang), (2 + i) * math.cos(ang)])
    return AnchorSet(np.array(pts), DEFAULT_BOX[0], DEFAULT_BOX[1])


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a2 = np.sum(a * a, axis=1)[:, None]
    b2 = np.sum(b * b, axis=1)[None, :]
    return np.maximum(a2 + b2 - 2.0 * a @ b.T, 0.0)


@dataclass(frozen=True, eq=False)
class BasisSpec:
    anchors: AnchorSet
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def size(self) -> int:
        return self.anchors.count

    def features(self, z: np.ndarray) -> np.ndarray:
        """Matrix ``F[m, i] = v_i(z_m)`` for points ``z`` of shape (M, d)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if self.anchors.count == 1 or z.shape[1] <= 3:
            diff = z[:, None, :] - self.anchors.points[None, :, :]
            d2 = np.einsum("mid,mid->mi", diff, diff)
        else:
            d2 = sq_dists(z, self.anchors.points)
        return np.exp(-self.gamma * d2)

    def gram(self) -> np.ndarray:
        pts = self.anchors.points
        diff = pts[:, None, :] - pts[None, :, :]
        g = np.exp(-self.gamma * np.einsum("ijd,ijd->ij", diff, diff))
        return 0.5 * (g + g.T)

    def rbf_lipschitz(self) -> float:
        """sup_r |d/dr exp(-gamma r^2)|, attained at r = 1/sqrt(2 gamma)."""
        return math.sqrt(2.0 * self.gamma) * math.exp(-0.5)

    def to_dict(self) -> dict:
        return {"anchors": self.anchors.to_dict(), "gamma": self.gamma}


class RidgeProjector:
    """The map P from anchor samples into V.

    ``identity=True`` gives the degenerate projection used when Z is
    treated as the discrete set of anchors: samples are kept as they are and
    no kernel is involved. This is what makes the ensemble reduction exact.
    """

    def __init__(self, basis: BasisSpec, mu: float = 0.1, identity: bool = False):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.basis = basis
        self.mu = float(mu)
        self.identity = bool(identity)
        self.anchors = basis.anchors
        l = basis.size
        if self.identity:
            self.gram = np.eye(l)
            self.condition = 1.0
            self._chol = None
            self._interp = None
            return
        g = basis.gram()
        rank = np.linalg.matrix_rank(g)
        cond = float(np.linalg.cond(g + self.mu * np.eye(l)))
        if rank < l:
            raise ProjectionError(f"Gram matrix is singular (rank {rank} < {l})", cond)
        self.gram = g
        self.condition = cond
        try:
            self._chol = linalg.cho_factor(g + self.mu * np.eye(l), lower=True)
            self._interp = self._chol if self.mu == 0 else linalg.cho_factor(g, lower=True)
        except linalg.LinAlgError as exc:
            raise ProjectionError("G + mu I is not positive definite", cond) from exc

    @property
    def size(self) -> int:
        return self.basis.size

    # -- array level --------------------------------------------------------
    # Sample arrays have the anchor index on the last axis: (..., l).

    def solve(self, samples: np.ndarray) -> np.ndarray:
        """Ridge coefficients for samples along the last axis."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape[-1] != self.size:
            raise AlgebraError(f"expected {self.size} samples per element, got {samples.shape[-1]}")
        if self.identity:
            return samples.copy()
        flat = samples.reshape(-1, self.size)
        return linalg.cho_solve(self._chol, flat.T).T.reshape(samples.shape)

    def interpolate(self, samples: np.ndarray) -> np.ndarray:
        """Coefficients of the V member that passes exactly through ``samples``."""
        samples = np.asarray(samples, dtype=np.float64)
        if self.identity:
            return samples.copy()
        flat = samples.reshape(-1, self.size)
        return linalg.cho_solve(self._interp, flat.T).T.reshape(samples.shape)

    def at_anchors(self, coeffs: np.ndarray) -> np.ndarray:
        if self.identity:
            return np.array(coeffs, dtype=np.float64, copy=True)
        return np.asarray(coeffs) @ self.gram

    def smooth(self, samples: np.ndarray):
        """Return ``(coeffs, anchor samples)`` of P applied to ``samples``."""
        c = self.solve(samples)
        return c, self.at_anchors(c)

    def evaluate(self, coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Values at points z (M, d) of V members with coeffs (..., l); shape (..., M)."""
        if self.identity:
            raise RepresentationError("an identity projection has no off-anchor extension")
        return np.asarray(coeffs) @ self.basis.features(z).T

    # -- element level ------------------------------------------------------

    def project(self, samples) -> AElement:
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        c, s = self.smooth(samples)
        return AElement(self.anchors, s, c, self)

    def project_vector(self, theta: AVector) -> AVector:
        if len(theta) < 1:
            raise AlgebraError("cannot project an empty vector")
        c, s = self.smooth(theta.samples)
        return AVector(self.anchors, s, c, self)

    def element(self, coeffs) -> AElement:
        """The V member with the given coefficients."""
        c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        return AElement(self.anchors, self.at_anchors(c), c, self)

    def vector(self, coeffs) -> AVector:
        c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
        return AVector(self.anchors, self.at_anchors(c), c, self)

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "mu": self.mu, "identity": self.identity,
                "condition": self.condition}


def lipschitz_bound(a: AElement) -> float:
    """Upper bound on the Lipschitz constant of a V member."""
    if a.coeffs is None:
        raise RepresentationError("Lipschitz bound requires V coefficients")
    return float(np.sum(np.abs(a.coeffs)) * a.projector.basis.rbf_lipschitz())


def coeff_lipschitz_bounds(coeffs: np.ndarray, basis: BasisSpec) -> np.ndarray:
    return np.sum(np.abs(coeffs), axis=-1) * basis.rbf_lipschitz()


@dataclass(frozen=True, eq=False)
class MeasureD:
    """Uniform distribution on a union of equal balls around ``centers``."""

    centers: AnchorSet
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        pts = self.centers.points
        if np.any(pts - self.radius < self.centers.lower) or np.any(pts + self.radius > self.centers.upper):
            raise ValueError("balls of D must lie inside the box of Z")
        if self.centers.count > 1:
            d2 = sq_dists(pts, pts) + np.diag(np.full(len(pts), np.inf))
            if np.min(d2) < (2 * self.radius) ** 2:
                # overlapping balls would make "pick a centre uniformly" non-uniform
                raise ValueError("balls of D must be disjoint")

    def _offsets(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform points in the ball of radius ``radius`` around the origin."""
        d = self.centers.dim
        if d == 2:
            r = self.radius * np.sqrt(rng.random(n))
            ang = 2.0 * np.pi * rng.random(n)
            return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * (self.radius * rng.random(n) ** (1.0 / d))[:, None]

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw points; returns shape (d,) when ``n`` is None, else (n, d)."""
        single = n is None
        n = 1 if single else int(n)
        pts = self.centers.points
        idx = rng.integers(0, len(pts), size=n)
        z = pts[idx] + self._offsets(rng, n)
        return z[0] if single else z

    def sample_stratified(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` points rounded up to a multiple of the ball count, the same number per ball.

        Still an unbiased sample average for D (the balls carry equal weight),
        but the which-ball part of the Monte Carlo variance is gone.
        """
        pts = self.centers.points
        per = max(1, -(-int(n) // len(pts)))
        return np.repeat(pts, per, axis=0) + self._offsets(rng, per * len(pts))

    def to_dict(self) -> dict:
        return {"centers": self.centers.to_dict(), "radius": self.radius}


def sample_D(D: MeasureD, rng: np.random.Generator) -> np.ndarray:
    return D.sample(rng)


def feature_means(basis: BasisSpec, D: MeasureD, n_mc: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo estimate of E_D[v_i(z)] for every basis function."""
    return basis.features(D.sample(rng, n_mc)).mean(axis=0)


def integrate(a: AElement, D: MeasureD, n_mc: int = 4096, seed=0) -> float:
    """Monte Carlo estimate of the integral of a V member against D."""
    if a.coeffs is None:
        raise RepresentationError("integration needs off-anchor evaluation, i.e. V coefficients")
    rng = np.random.default_rng(seed)
    z = D.sample(rng, n_mc)
    vals = a.offset + a.projector.basis.features(z) @ a.coeffs
    return float(vals.mean())


def grid_points(lower, upper, resolution: int) -> np.ndarray:
    """Row-major grid over a 2-D box, shape (resolution**2, 2), y slowest."""
    xs = np.linspace(lower, upper, resolution)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sup_grid_gap(coeffs_a: np.ndarray, coeffs_b: np.ndarray, basis: BasisSpec,
                 grid: np.ndarray, chunk: int = 512) -> float:
    """max_j sup_{z in grid} |theta_a,j(z) - theta_b,j(z)| for V members."""
    diff = np.atleast_2d(coeffs_a - coeffs_b)
    feats = basis.features(grid)
    best = 0.0
    for lo in range(0, diff.shape[0], chunk):
        vals = diff[lo:lo + chunk] @ feats.T
        best = max(best, float(np.max(np.abs(vals))))
    return best


__all__ = [
    "BasisSpec", "MeasureD", "ProjectionError", "RidgeProjector", "coeff_lipschitz_bounds",
    "evaluate", "feature_means", "grid_points", "integrate", "lipschitz_bound",
    "make_grid_anchors", "sample_D", "sup_grid_gap",
]
