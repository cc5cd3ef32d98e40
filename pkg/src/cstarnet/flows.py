"""Masked autoregressive flow with A-valued weights.

Each flow layer is a MADE network producing a shift ``m_i`` and a log-scale
``s_i`` for coordinate i from the coordinates before it. The density
direction is a single parallel pass per layer::

    u_i = (x_i - m_i(x_<i)) * exp(-s_i(x_<i)),    logdet = -sum_i s_i

Coordinates are reversed between consecutive layers. The base density at
z is the unit-variance normal with mean z.

All array routines are batched over a leading "stack" axis of length L:
``theta`` has shape (L, P) -- one parameter vector per anchor (or per sampled
point of Z) -- and ``means`` has shape (L, D). Gradients are hand-derived and
cross-checked against :mod:`cstarnet.autodiff` and finite differences in the
test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cstarnet import autodiff as ad
from cstarnet.basis import MeasureD, RidgeProjector

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowModel:
    """Architecture of a MAF stack: ``n_layers`` MADE blocks of width ``hidden``.

    Layer k owns a ``(dim + 1) x hidden`` input matrix and a
    ``(hidden + 1) x 2 dim`` output matrix; the extra rows are biases acting
    on a constant-1 input. Output columns are ``[m_1..m_D, s_1..s_D]``.
    """

    dim: int = 2
    n_layers: int = 5
    hidden: int = 64
    clamp: float = 8.0
    masks: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1 or self.n_layers < 1 or self.hidden < 1:
            raise ValueError("flow dimensions must be positive")
        D, H = self.dim, self.hidden
        deg_in = np.arange(1, D + 1)
        deg_h = 1 + np.arange(H) % max(D - 1, 1)
        m1 = np.ones((D + 1, H))
        m1[:D] = (deg_h[None, :] >= deg_in[:, None])
        deg_out = np.concatenate([deg_in, deg_in])
        m2 = np.ones((H + 1, 2 * D))
        m2[:H] = (deg_out[None, :] > deg_h[:, None])
        m1.setflags(write=False)
        m2.setflags(write=False)
        object.__setattr__(self, "masks", (m1, m2))

    @property
    def layer_size(self) -> int:
        return (self.dim + 1) * self.hidden + (self.hidden + 1) * 2 * self.dim

    @property
    def n_params(self) -> int:
        return self.n_layers * self.layer_size

    def to_dict(self) -> dict:
        return {"kind": "MAF", "dim": self.dim, "n_layers": self.n_layers,
                "hidden": self.hidden, "clamp": self.clamp, "hidden_activation": "tanh",
                "permutation": "reverse"}

    # -- parameter layout ------------------------------------------------------

    def unpack(self, theta: np.ndarray):
        """Views ``[(W1, W2), ...]`` of shapes (L, D+1, H) and (L, H+1, 2D)."""
        theta = np.asarray(theta)
        if theta.ndim == 1:
            theta = theta[None, :]
        if theta.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape[-1]}")
        D, H = self.dim, self.hidden
        n1 = (D + 1) * H
        out, k = [], 0
        for _ in range(self.n_layers):
            w1 = theta[:, k:k + n1].reshape(-1, D + 1, H)
            w2 = theta[:, k + n1:k + self.layer_size].reshape(-1, H + 1, 2 * D)
            out.append((w1, w2))
            k += self.layer_size
        return out

    def param_mask(self) -> np.ndarray:
        m1, m2 = self.masks
        one = np.concatenate([m1.ravel(), m2.ravel()])
        return np.tile(one, self.n_layers)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Hidden weights uniform in +-1/sqrt(fan_in); output layers zero (identity flow)."""
        D, H = self.dim, self.hidden
        parts = []
        bound = 1.0 / math.sqrt(D + 1)
        for _ in range(self.n_layers):
            w1 = rng.uniform(-bound, bound, size=(D + 1, H)) * self.masks[0]
            parts.append(w1.ravel())
            parts.append(np.zeros((H + 1) * 2 * D))
        return np.concatenate(parts)

    def affine_params(self, shift, log_scale) -> np.ndarray:
        """Parameters of a flow whose every layer is ``u = (x - shift) exp(-log_scale)``.

        Only meaningful for a single layer or when shift is zero, since
        coordinates are reversed between layers.
        """
        shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (self.dim,))
        log_scale = np.broadcast_to(np.asarray(log_scale, dtype=np.float64), (self.dim,))
        if np.any(np.abs(log_scale) >= self.clamp):
            raise ValueError("log-scale beyond the clamp")
        D, H = self.dim, self.hidden
        theta = np.zeros(self.n_params)
        for w1, w2 in self.unpack(theta[None, :]):
            w2[0, H, :D] = shift
            w2[0, H, D:] = self.clamp * np.arctanh(log_scale / self.clamp)
        return theta


# -- density direction ---------------------------------------------------------

def _masked(model: FlowModel, theta):
    m1, m2 = model.masks
    return [(w1 * m1, w2 * m2) for w1, w2 in model.unpack(theta)]


def inverse(model: FlowModel, theta: np.ndarray, x: np.ndarray, keep: bool = False):
    """Map data x to base space.

    ``x`` is (B, D) shared by all stacks or (L, B, D). Returns ``u`` (L, B, D)
    and ``logdet`` (L, B); with ``keep`` also the per-layer cache used by
    :func:`nll_and_grad`.
    """
    D, H, c = model.dim, model.hidden, model.clamp
    layers = _masked(model, theta)
    h_in = np.asarray(x, dtype=np.float64)
    L = layers[0][0].shape[0]
    if h_in.ndim == 2:
        h_in = np.broadcast_to(h_in, (L,) + h_in.shape)
    logdet = np.zeros(h_in.shape[:2])
    cache = []
    for k, (w1, w2) in enumerate(layers):
        if k > 0:
            h_in = h_in[..., ::-1]
        a = h_in @ w1[:, :D, :] + w1[:, D:, :]
        hid = np.tanh(a)
        o = hid @ w2[:, :H, :] + w2[:, H:, :]
        m = o[..., :D]
        t = np.tanh(o[..., D:] / c)
        s = c * t
        e = np.exp(-s)
        u = (h_in - m) * e
        logdet -= s.sum(axis=-1)
        if keep:
            cache.append((h_in, hid, t, e, u, w1, w2))
        h_in = u
    if keep:
        return h_in, logdet, cache
    return h_in, logdet


def made_outputs(model: FlowModel, theta: np.ndarray, h: np.ndarray, layer: int = 0):
    """Shift m and clamped log-scale s of one MADE block at inputs h (B, D); each (L, B, D)."""
    D, H, c = model.dim, model.hidden, model.clamp
    w1, w2 = _masked(model, theta)[layer]
    hid = np.tanh(np.asarray(h, dtype=np.float64) @ w1[:, :D, :] + w1[:, D:, :])
    o = hid @ w2[:, :H, :] + w2[:, H:, :]
    return o[..., :D], c * np.tanh(o[..., D:] / c)


def _check_means(means, L: int, D: int) -> np.ndarray:
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = np.broadcast_to(means, (L, D))
    if means.shape != (L, D):
        raise ValueError(f"base means must have shape ({L}, {D}), got {means.shape}")
    return means


def base_log_density(u: np.ndarray, means: np.ndarray) -> np.ndarray:
    r = u - means[:, None, :]
    return -0.5 * u.shape[-1] * LOG_2PI - 0.5 * np.sum(r * r, axis=-1)


def log_prob(model: FlowModel, theta: np.ndarray, x: np.ndarray, means) -> np.ndarray:
    """log p^{theta, z}(x) for every stack; shape (L, B)."""
    u, logdet = inverse(model, theta, x)
    means = _check_means(means, u.shape[0], model.dim)
    return base_log_density(u, means) + logdet


def nll_and_grad(model: FlowModel, theta: np.ndarray, x: np.ndarray, means,
                 reduction: str = "sum"):
    """Negative log-likelihood per stack and its gradient wrt ``theta``.

    Returns ``loss`` (L,) and ``grad`` (L, P). ``reduction`` is "sum"
    (the plain likelihood loss) or "mean" over the batch.
    """
    D, H, c = model.dim, model.hidden, model.clamp
    theta = np.atleast_2d(theta)
    x = np.asarray(x, dtype=np.float64)
    B = x.shape[-2]
    u, logdet, cache = inverse(model, theta, x, keep=True)
    L = u.shape[0]
    means = _check_means(means, L, D)
    if reduction == "sum":
        w = 1.0
    elif reduction == "mean":
        w = 1.0 / B
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    logp = base_log_density(u, means) + logdet
    loss = -w * logp.sum(axis=1)

    m1, m2 = model.masks
    grads = []
    gu = w * (u - means[:, None, :])
    for k in range(model.n_layers - 1, -1, -1):
        h_in, hid, t, e, uk, w1, w2 = cache[k]
        gx = gu * e
        gs = w - gu * uk
        go = np.concatenate([-gx, gs * (1.0 - t * t)], axis=-1)
        gw2 = np.empty((L, H + 1, 2 * D))
        gw2[:, :H, :] = hid.transpose(0, 2, 1) @ go
        gw2[:, H, :] = go.sum(axis=1)
        ga = (go @ w2[:, :H, :].transpose(0, 2, 1)) * (1.0 - hid * hid)
        gw1 = np.empty((L, D + 1, H))
        gw1[:, :D, :] = h_in.transpose(0, 2, 1) @ ga
        gw1[:, D, :] = ga.sum(axis=1)
        gx = gx + ga @ w1[:, :D, :].transpose(0, 2, 1)
        grads.append(np.concatenate([(gw1 * m1).reshape(L, -1), (gw2 * m2).reshape(L, -1)], axis=1))
        gu = gx[..., ::-1] if k > 0 else gx
    grad = np.concatenate(grads[::-1], axis=1)
    return loss, grad


def nf_loss(model: FlowModel, theta: np.ndarray, x: np.ndarray, mean) -> float:
    """-sum_i log p^{theta, z}(x_i) for a single parameter vector."""
    return float(-log_prob(model, theta, x, mean).sum())


# -- sampling direction ---------------------------------------------------------

def forward_sample(model: FlowModel, theta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Invert :func:`inverse`: x = f(u), one coordinate at a time per layer.

    ``theta`` is a single parameter vector (P,) and ``u`` has shape (B, D).
    """
    D, H, c = model.dim, model.hidden, model.clamp
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError("forward_sample takes a single parameter vector")
    layers = _masked(model, theta)
    y = np.array(u, dtype=np.float64, ndmin=2)
    for k in range(model.n_layers - 1, -1, -1):
        w1, w2 = layers[k][0][0], layers[k][1][0]
        x = np.zeros_like(y)
        for i in range(D):
            hid = np.tanh(x @ w1[:D] + w1[D])
            o = hid @ w2[:H] + w2[H]
            s = c * np.tanh(o[:, D + i] / c)
            x[:, i] = y[:, i] * np.exp(s) + o[:, i]
        y = x[:, ::-1] if k > 0 else x
    return y


def sample(model: FlowModel, theta: np.ndarray, mean, n: int, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    u = mean + rng.standard_normal((n, model.dim))
    return forward_sample(model, theta, u)


# -- scalar-tape reference ------------------------------------------------------

def log_prob_tape(model: FlowModel, x, theta_vars, mean):
    """Same density as :func:`log_prob`, written against scalar ``Var``s.

    Works with plain floats too, which is how finite differences are taken.
    Masked weights are skipped so the autoregressive structure is explicit.
    """
    D, H, c = model.dim, model.hidden, model.clamp
    m1, m2 = model.masks
    n1 = (D + 1) * H
    h_in = [float(v) for v in np.asarray(x, dtype=np.float64).ravel()]
    logdet = 0.0
    for k in range(model.n_layers):
        base = k * model.layer_size
        if k > 0:
            h_in = h_in[::-1]
        hid = []
        for j in range(H):
            acc = theta_vars[base + D * H + j]
            for d in range(D):
                if m1[d, j]:
                    acc = acc + h_in[d] * theta_vars[base + d * H + j]
            hid.append(ad.tanh(acc))
        u = []
        for i in range(D):
            cols = []
            for col in (i, D + i):
                acc = theta_vars[base + n1 + H * 2 * D + col]
                for j in range(H):
                    if m2[j, col]:
                        acc = acc + hid[j] * theta_vars[base + n1 + j * 2 * D + col]
                cols.append(acc)
            m_i, r_i = cols
            s_i = c * ad.tanh(r_i / c)
            u.append((h_in[i] - m_i) * ad.exp(-s_i))
            logdet = logdet - s_i
        h_in = u
    mean = np.asarray(mean, dtype=np.float64).ravel()
    quad = 0.0
    for i in range(D):
        quad = quad + (h_in[i] - float(mean[i])) * (h_in[i] - float(mean[i]))
    return -0.5 * D * LOG_2PI - 0.5 * quad + logdet


# -- aggregation over Z ----------------------------------------------------------

def _chunked_density(model, theta_rows, means, x, budget=2_000_000):
    """Mean over stacks of exp(log p) at each x, without materializing huge arrays."""
    M, B = theta_rows.shape[0], x.shape[0]
    per_x = max(1, budget // max(1, M * model.hidden))
    out = np.empty(B)
    for lo in range(0, B, per_x):
        xb = x[lo:lo + per_x]
        per_m = max(1, budget // max(1, xb.shape[0] * model.hidden))
        acc = np.zeros(xb.shape[0])
        for mlo in range(0, M, per_m):
            lp = log_prob(model, theta_rows[mlo:mlo + per_m], xb, means[mlo:mlo + per_m])
            acc += np.exp(lp).sum(axis=0)
        out[lo:lo + per_x] = acc / M
    return out


def aggregate_density(model: FlowModel, coeffs: np.ndarray, projector: RidgeProjector,
                      x: np.ndarray, D: MeasureD, n_mc: int = 4096, rng=None,
                      z: np.ndarray | None = None, stratified: bool = True) -> np.ndarray:
    """p~(x) = integral of p^{theta, z}(x) dD(z), by Monte Carlo over z ~ D.

    ``coeffs`` (P, l) are the V-coefficients of the parameter functions. By
    default the draws are stratified over the balls of D. The points ``z``
    may be supplied directly (they then override ``n_mc``).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if z is None:
        rng = np.random.default_rng(rng)
        z = D.sample_stratified(rng, n_mc) if stratified else D.sample(rng, n_mc)
    theta_z = projector.evaluate(coeffs, z).T
    return _chunked_density(model, theta_z, z, x)


def anchor_mixture_density(model: FlowModel, samples: np.ndarray, anchors_pts: np.ndarray,
                           x: np.ndarray) -> np.ndarray:
    """Uniform average over anchors of p^{theta(z_i), z_i}(x); ``samples`` is (P, l)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return _chunked_density(model, np.ascontiguousarray(samples.T), anchors_pts, x)


def density_grid(density_fn, box=(-4.0, 4.0), resolution: int = 100) -> np.ndarray:
    """Evaluate ``density_fn`` on a regular grid; row-major, y slowest.

    Returns an array of shape (resolution, resolution) with ``[iy, ix]``.
    """
    lo, hi = box
    xs = np.linspace(lo, hi, resolution)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return np.asarray(density_fn(pts)).reshape(resolution, resolution)


def grid_mass(density_fn, box=(-8.0, 8.0), resolution: int = 160) -> float:
    """Midpoint-rule integral of a 2-D density over a square box."""
    lo, hi = box
    h = (hi - lo) / resolution
    centers = lo + h * (np.arange(resolution) + 0.5)
    gx, gy = np.meshgrid(centers, centers, indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return float(np.sum(density_fn(pts)) * h * h)
