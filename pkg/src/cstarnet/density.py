"""Density estimation with A-valued flows: the standard, discrete and ours runs.

The three methods differ only in how Z, P and lambda are set up:

* ``standard`` -- one anchor at the origin, lambda = mu = 0: a single
  ordinary flow.
* ``discrete`` -- the nine anchors, P the identity on samples and lambda = 0:
  nine independent flows whose densities are averaged.
* ``ours`` -- the nine anchors, kernel ridge P with mu = 0.1, lambda = 0.3
  and D the uniform measure on small discs around the anchors.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from cstarnet import data as datasets
from cstarnet import flows
from cstarnet.algebra import AnchorSet
from cstarnet.basis import (
    DEFAULT_BOX,
    DEFAULT_GAMMA,
    DEFAULT_RADIUS,
    BasisSpec,
    MeasureD,
    RidgeProjector,
    coeff_lipschitz_bounds,
    grid_points,
    make_grid_anchors,
    sup_grid_gap,
)
from cstarnet.optimizer import GDConfig, Scheme

METHODS = ("standard", "discrete", "ours")


@dataclass
class DensityConfig:
    method: str = "ours"
    dataset: str = "swiss"
    epochs: int = 3000
    seed: int = 0
    data_seed: int = 0
    mu: float | None = None
    lambda_tilde: float | None = None
    gamma: float = DEFAULT_GAMMA
    radius: float = DEFAULT_RADIUS
    n_layers: int = 5
    hidden: int = 64
    eta0: float = 0.001
    decay_rate: float = 0.5
    reduction: str = "sum"
    # the unscaled regularization step diverges for these flows; see README
    scale_reg_by_lr: bool = True
    reg_placement: str = "outside"
    clip_norm: float | None = None
    batch_size: int | None = None
    n_mc_train: int = 4096
    n_mc_eval: int = 1024
    snapshot_every: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mu is None:
            self.mu = 0.1 if self.method == "ours" else 0.0
        if self.lambda_tilde is None:
            self.lambda_tilde = 0.3 if self.method == "ours" else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DensityRun:
    config: DensityConfig
    model: flows.FlowModel
    projector: RidgeProjector
    D: MeasureD
    samples: np.ndarray                      # (P, l) final anchor samples
    losses: np.ndarray                       # (epochs, l) training loss per anchor
    snapshots: dict = field(default_factory=dict)   # epoch -> (P, l) coeffs
    seconds: float = 0.0

    @property
    def anchors(self) -> AnchorSet:
        return self.projector.anchors

    @property
    def coeffs(self) -> np.ndarray:
        return self.projector.interpolate(self.samples)

    def density(self, x: np.ndarray, n_mc: int | None = None, seed: int | None = None) -> np.ndarray:
        """The estimated data density at points x (B, 2)."""
        if self.config.method == "ours":
            n = self.config.n_mc_eval if n_mc is None else n_mc
            rng = np.random.default_rng(self.config.seed + 104729 if seed is None else seed)
            return flows.aggregate_density(self.model, self.coeffs, self.projector, x,
                                           self.D, n_mc=n, rng=rng)
        return flows.anchor_mixture_density(self.model, self.samples, self.anchors.points, x)

    def nll(self, x: np.ndarray, **kw) -> float:
        p = self.density(x, **kw)
        return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def setup(cfg: DensityConfig):
    """Anchors, projector and measure for a method."""
    lo, hi = DEFAULT_BOX
    if cfg.method == "standard":
        anchors = AnchorSet(np.zeros((1, 2)), lo, hi)
        proj = RidgeProjector(BasisSpec(anchors, cfg.gamma), mu=cfg.mu)
    elif cfg.method == "discrete":
        anchors = make_grid_anchors()
        proj = RidgeProjector(BasisSpec(anchors, cfg.gamma), mu=0.0, identity=True)
    else:
        anchors = make_grid_anchors()
        proj = RidgeProjector(BasisSpec(anchors, cfg.gamma), mu=cfg.mu)
    return anchors, proj, MeasureD(anchors, cfg.radius)


def initial_samples(model: flows.FlowModel, proj, l: int, seed: int) -> np.ndarray:
    """theta_0 = P(constant initial network), as anchor samples (P, l)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    theta0 = model.init_params(rng)
    return proj.smooth(np.repeat(theta0[:, None], l, axis=1))[1]


def train(cfg: DensityConfig, train_x: np.ndarray | None = None, callback=None) -> DensityRun:
    if train_x is None:
        train_x = datasets.load(cfg.dataset, cfg.data_seed).train
    model = flows.FlowModel(dim=2, n_layers=cfg.n_layers, hidden=cfg.hidden)
    anchors, proj, D = setup(cfg)
    gd = GDConfig(eta0=cfg.eta0, decay_rate=cfg.decay_rate, lambda_tilde=cfg.lambda_tilde,
                  optimizer="adam", epochs=cfg.epochs, seed=cfg.seed, n_mc=cfg.n_mc_train,
                  scale_reg_by_lr=cfg.scale_reg_by_lr,
                  reg_placement=cfg.reg_placement, clip_norm=cfg.clip_norm,
                  batch_size=cfg.batch_size)
    scheme = Scheme(proj, gd, D, rng=np.random.Generator(np.random.PCG64(cfg.seed + 1)))
    samples = initial_samples(model, proj, anchors.count, cfg.seed)
    means = anchors.points
    n = train_x.shape[0]
    bs = n if cfg.batch_size is None else int(cfg.batch_size)
    batch_rng = np.random.Generator(np.random.PCG64(cfg.seed + 2))
    losses = np.empty((cfg.epochs, anchors.count))
    snapshots = {}
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = np.arange(n) if bs >= n else batch_rng.permutation(n)
        ep_loss = np.zeros(anchors.count)
        for lo in range(0, n, bs):
            xb = train_x[order[lo:lo + bs]]
            loss, grad = flows.nll_and_grad(model, np.ascontiguousarray(samples.T), xb, means,
                                             cfg.reduction)
            if not np.all(np.isfinite(loss)) or not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} ({cfg.method}/{cfg.dataset}, seed {cfg.seed})")
            ep_loss += loss
            samples = scheme.update(samples, grad.T)
        losses[epoch] = ep_loss
        if cfg.snapshot_every and (epoch + 1) % cfg.snapshot_every == 0:
            snapshots[epoch + 1] = proj.interpolate(samples)
        if callback is not None:
            callback(epoch, ep_loss)
    seconds = time.perf_counter() - t0
    return DensityRun(cfg, model, proj, D, samples, losses, snapshots, seconds)


def uniform_convergence_report(run: DensityRun, lag: int = 100, resolution: int = 41) -> dict:
    """Coefficient bounds and sup-grid gaps between iterates ``lag`` epochs apart.

    The gaps are reported over the last quarter of training; bounded
    coefficients make the iterates uniformly Lipschitz, so pointwise
    convergence upgrades to uniform convergence on Z.
    """
    if run.projector.identity:
        raise ValueError("the diagnostic needs a kernel projection")
    epochs = sorted(run.snapshots)
    basis = run.projector.basis
    grid = grid_points(DEFAULT_BOX[0], DEFAULT_BOX[1], resolution)
    coeff_max = [float(np.max(np.abs(run.snapshots[e]))) for e in epochs]
    lips = [float(np.max(coeff_lipschitz_bounds(run.snapshots[e], basis))) for e in epochs]
    start = run.config.epochs - run.config.epochs // 4
    gaps = {}
    for e in epochs:
        if e >= start and e + lag in run.snapshots:
            gaps[e] = sup_grid_gap(run.snapshots[e + lag], run.snapshots[e], basis, grid)
    vals = [gaps[e] for e in sorted(gaps)]
    monotone = all(b <= a for a, b in zip(vals[:-1], vals[1:]))
    return {"epochs": epochs, "coeff_max": coeff_max, "lipschitz": lips,
            "gaps": gaps, "gaps_monotone": monotone}


def spec_dict(run: DensityRun) -> dict:
    """Everything needed to re-run: config, architecture, anchors, D, data constants."""
    ds = datasets.load(run.config.dataset, run.config.data_seed)
    return {
        "config": run.config.to_dict(),
        "architecture": run.model.to_dict(),
        "projector": run.projector.to_dict(),
        "measure_D": run.D.to_dict(),
        "dataset": ds.constants(),
    }
