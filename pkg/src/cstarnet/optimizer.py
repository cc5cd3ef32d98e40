"""A-valued gradient descent in the finite span V.

Parameters theta in V^N are carried by their anchor samples, an (N, l) array;
the V member is the interpolant through those samples. One step of the
practical scheme is::

    theta_{t+1} = theta_t - eta_t P(grad) - lambda * (int P(grad) dD) 1_A

with P the kernel ridge projection and the integral taken under D by Monte
Carlo with fresh draws every step. The regularization term is deliberately not
scaled by eta_t; set ``scale_reg_by_lr`` to change that. In the Adam variant
the moments are kept per parameter and per anchor on the samples of P(grad).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from cstarnet import autodiff as ad
from cstarnet.algebra import AVector, RepresentationError
from cstarnet.basis import MeasureD, RidgeProjector, feature_means


@dataclass
class GDConfig:
    eta0: float = 0.001
    decay_rate: float = 0.5
    lambda_tilde: float = 0.3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 3000
    seed: int = 0
    n_mc: int = 4096
    scale_reg_by_lr: bool = False
    reg_placement: str = "outside"
    clip_norm: float | None = None
    batch_size: int | None = None

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.lambda_tilde < 0:
            raise ValueError("lambda_tilde must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.reg_placement not in ("outside", "inside"):
            raise ValueError("reg_placement must be 'outside' or 'inside'")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_schedule"] = "eta0 * (1 + t) ** -decay_rate"
        return d


def lr(t: int, cfg: GDConfig) -> float:
    """Polynomially decaying rate eta0 * (1 + t)^(-decay_rate)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return cfg.eta0 * (1.0 + t) ** (-cfg.decay_rate)


class AdamState:
    """First and second moments per parameter and per anchor."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def direction(self, g: np.ndarray, cfg: GDConfig) -> np.ndarray:
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * (g * g)
        m_hat = self.m / (1.0 - cfg.beta1 ** self.t)
        v_hat = self.v / (1.0 - cfg.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + cfg.eps)


def a_gradient(loss_at: Callable[[Sequence[ad.Var], int], ad.Var], theta: AVector) -> AVector:
    """A-valued gradient of a loss that decomposes over Z.

    ``loss_at(params, i)`` builds the real loss at anchor i from tape
    variables; its gradient at every anchor gives the samples of the result.
    """
    out = np.zeros_like(theta.samples)
    for i in range(theta.anchors.count):
        tape = ad.Tape()
        xs = tape.vars(theta.at(i))
        val = loss_at(xs, i)
        if isinstance(val, ad.Var):
            adj = ad.backward(tape, val)
            out[:, i] = [adj[v.index] for v in xs]
    return AVector(theta.anchors, out)


class Scheme:
    """The update rule for one run: projector, measure D and config are fixed.

    ``projector`` may also be a :class:`BlockProjector`. With an identity
    projector the integral over Z is the uniform average over anchors.
    """

    def __init__(self, projector, cfg: GDConfig, D: MeasureD | None = None,
                 rng: np.random.Generator | None = None):
        self.projector = projector
        self.cfg = cfg
        self.D = D
        self.rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.adam: AdamState | None = None
        self.t = 0
        if cfg.lambda_tilde > 0 and D is None and not getattr(projector, "identity", False):
            raise ValueError("a positive lambda_tilde needs the measure D")

    def integral(self, coeffs: np.ndarray, samples: np.ndarray) -> np.ndarray:
        """Integral over Z of each projected gradient component; shape (N,)."""
        if getattr(self.projector, "identity", False):
            return samples.mean(axis=1)
        vbar = feature_means(self.projector.basis, self.D, self.cfg.n_mc, self.rng)
        return coeffs @ vbar

    def update(self, samples: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return theta_{t+1} samples given theta_t samples and raw gradient samples."""
        cfg = self.cfg
        eta = lr(self.t, cfg)
        if cfg.clip_norm is not None:
            grad = clip_columns(grad, cfg.clip_norm)
        pc, ps = self.projector.smooth(grad)
        inside = cfg.lambda_tilde > 0 and cfg.reg_placement == "inside"
        if inside:
            # descend along the gradient of the regularized loss itself
            ps = ps + cfg.lambda_tilde * self.integral(pc, ps)[:, None]
        if cfg.optimizer == "adam":
            if self.adam is None:
                self.adam = AdamState(ps.shape)
            direction = self.adam.direction(ps, cfg)
        else:
            direction = ps
        new = samples - eta * direction
        if cfg.lambda_tilde > 0 and not inside:
            reg = cfg.lambda_tilde * self.integral(pc, ps)
            if cfg.scale_reg_by_lr:
                reg = eta * reg
            # the constant function enters V through its interpolant, which is 1 at every anchor
            new = new - reg[:, None]
        self.t += 1
        return new


def clip_columns(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale each anchor's gradient (a column) to Euclidean norm at most ``max_norm``."""
    norms = np.linalg.norm(grad, axis=0)
    scale = np.minimum(1.0, max_norm / np.maximum(norms, 1e-300))
    return grad * scale


class BlockProjector:
    """Direct sum of projectors acting on consecutive row blocks of an (N, l) array."""

    def __init__(self, projectors: Sequence[RidgeProjector], block_rows: int):
        self.projectors = list(projectors)
        self.block_rows = int(block_rows)
        self.identity = all(p.identity for p in self.projectors)
        self.size = self.projectors[0].size

    def _apply(self, fn_name: str, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape[0] != self.block_rows * len(self.projectors):
            raise ValueError("row count does not match the block structure")
        out = np.empty_like(arr)
        for j, p in enumerate(self.projectors):
            sl = slice(j * self.block_rows, (j + 1) * self.block_rows)
            out[sl] = getattr(p, fn_name)(arr[sl])
        return out

    def solve(self, samples):
        return self._apply("solve", samples)

    def interpolate(self, samples):
        return self._apply("interpolate", samples)

    def at_anchors(self, coeffs):
        return self._apply("at_anchors", coeffs)

    def smooth(self, samples):
        c = self.solve(samples)
        return c, self.at_anchors(c)


# -- element-level operations on AVectors ---------------------------------------

def reg_gradient(grad: AVector, lambda_tilde: float, D: MeasureD, n_mc: int = 4096,
                 rng=None) -> AVector:
    """Gradient of the regularized loss: grad + lambda * (int grad dD) 1_A."""
    if grad.coeffs is None:
        raise RepresentationError("the gradient must lie in V to be integrated")
    if lambda_tilde == 0:
        return grad
    rng = np.random.default_rng(rng)
    vbar = feature_means(grad.projector.basis, D, n_mc, rng)
    integral = grad.offsets + grad.coeffs @ vbar
    shift = lambda_tilde * integral
    return AVector(grad.anchors, grad.samples + shift[:, None], grad.coeffs,
                   grad.projector, grad.offsets + shift)


def _theta_in_V(samples: np.ndarray, proj: RidgeProjector, anchors) -> AVector:
    return AVector(anchors, samples, proj.interpolate(samples), proj)


def step(theta: AVector, grad: AVector, cfg: GDConfig, t: int, proj: RidgeProjector,
         D: MeasureD | None = None, rng=None) -> AVector:
    """One plain step of the practical scheme at iteration ``t``."""
    if theta.samples.shape != grad.samples.shape:
        raise ValueError("theta and gradient shapes differ")
    sgd = GDConfig(**{**_fields(cfg), "optimizer": "sgd"})
    scheme = Scheme(proj, sgd, D, np.random.default_rng(cfg.seed if rng is None else rng))
    scheme.t = t
    return _theta_in_V(scheme.update(theta.samples, grad.samples), proj, theta.anchors)


def adam_step(theta: AVector, grad: AVector, state: AdamState, cfg: GDConfig, t: int,
              proj: RidgeProjector, D: MeasureD | None = None, rng=None) -> AVector:
    """One Adam step; ``state`` is updated in place."""
    if theta.samples.shape != grad.samples.shape:
        raise ValueError("theta and gradient shapes differ")
    adam = GDConfig(**{**_fields(cfg), "optimizer": "adam"})
    scheme = Scheme(proj, adam, D, np.random.default_rng(cfg.seed if rng is None else rng))
    scheme.t = t
    scheme.adam = state
    return _theta_in_V(scheme.update(theta.samples, grad.samples), proj, theta.anchors)


def _fields(cfg: GDConfig) -> dict:
    return {k: v for k, v in asdict(cfg).items()}
