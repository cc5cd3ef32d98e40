"""Property checks run by ``cstarnet validate``.

Each check returns a :class:`Check` with a pass flag, the measured quantity
and the threshold it was held to. Checks are quick versions of the test
suite so the command finishes in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np

from cstarnet import autodiff as ad
from cstarnet import flows
from cstarnet.algebra import AnchorSet, AVector, inner_product, norm
from cstarnet.basis import BasisSpec, RidgeProjector, make_grid_anchors
from cstarnet.density import DensityConfig, initial_samples, setup, train
from cstarnet.optimizer import lr as lr_at, GDConfig


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name:<42} value={self.value:.3e} threshold={self.threshold:.1e} {self.detail}"


# -- independent classical reference ----------------------------------------------

def classical_flow_train(model: flows.FlowModel, theta0: np.ndarray, x: np.ndarray, mean,
                         epochs: int, eta0: float = 0.001, decay_rate: float = 0.5,
                         reduction: str = "sum", grad_fn=None) -> np.ndarray:
    """Ordinary real-valued Adam on one flow; written without the A-valued machinery."""
    grad_fn = flows.nll_and_grad if grad_fn is None else grad_fn
    theta = np.array(theta0, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    mean = np.asarray(mean, dtype=np.float64).reshape(1, -1)
    for t in range(epochs):
        _, g = grad_fn(model, theta[None, :], x, mean, reduction)
        g = g[0]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        k = t + 1
        step = (m / (1.0 - b1 ** k)) / (np.sqrt(v / (1.0 - b2 ** k)) + eps)
        theta = theta - (eta0 * (1.0 + t) ** (-decay_rate)) * step
    return theta


def ensemble_reduction_gap(epochs: int = 5, n_layers: int = 2, hidden: int = 8,
                           grad_fn=None) -> tuple[bool, bool]:
    """(discrete run == independent runs, standard run == plain run), both bitwise."""
    from cstarnet import data as datasets
    x = datasets.load("swiss", 0).train
    ok = []
    for method in ("discrete", "standard"):
        cfg = DensityConfig(method=method, epochs=epochs, n_layers=n_layers, hidden=hidden,
                            snapshot_every=0)
        run = train(cfg, x)
        model = run.model
        anchors, proj, _ = setup(cfg)
        init = initial_samples(model, proj, anchors.count, cfg.seed)
        same = True
        for i in range(anchors.count):
            ref = classical_flow_train(model, init[:, i], x, anchors.points[i], epochs,
                                       cfg.eta0, cfg.decay_rate, cfg.reduction, grad_fn)
            same &= bool(np.array_equal(ref, run.samples[:, i]))
        ok.append(same)
    return ok[0], ok[1]


# -- checks ---------------------------------------------------------------------------

def precise_flow_differences(model: flows.FlowModel, theta: np.ndarray, x: np.ndarray, mean,
                             index, step: str = "1e-20", dps: int = 50) -> np.ndarray:
    """Central differences of the summed NLL in 50-digit arithmetic.

    Double-precision differences lose every digit of a small component once
    the loss is in the thousands; at 50 digits the result is exact to double.
    """
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        base = [mpmath.mpf(float(t)) for t in theta]

        def loss(v):
            return -mpmath.fsum(flows.log_prob_tape(model, xi, v, mean) for xi in x)

        out = np.empty(len(index))
        for k, i in enumerate(index):
            up, dn = list(base), list(base)
            up[i] += h
            dn[i] -= h
            out[k] = float((loss(up) - loss(dn)) / (2 * h))
    return out


def check_flow_gradient(n_configs: int = 10, seed: int = 0, grad_fn=None) -> Check:
    """Analytic flow gradient vs high-precision central differences over random small flows."""
    grad_fn = flows.nll_and_grad if grad_fn is None else grad_fn
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        model = flows.FlowModel(dim=2, n_layers=int(rng.integers(1, 4)), hidden=int(rng.integers(2, 7)))
        theta = rng.normal(0.0, 0.5, model.n_params) * model.param_mask()
        x = rng.normal(0.0, 1.5, (int(rng.integers(1, 6)), 2))
        mean = rng.normal(0.0, 1.0, 2)
        _, g = grad_fn(model, theta[None, :], x, mean[None, :], "sum")
        mask = model.param_mask() > 0
        fd = precise_flow_differences(model, theta, x, mean, np.flatnonzero(mask))
        worst = max(worst, ad.relative_error(g[0][mask], fd, floor=1e-6))
    return Check("flow gradient vs finite differences", worst <= 1e-4, worst, 1e-4)


def check_tape_gradient(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    model = flows.FlowModel(dim=2, n_layers=2, hidden=3)
    theta = rng.normal(0.0, 0.5, model.n_params) * model.param_mask()
    x = rng.normal(0.0, 1.0, 2)
    mean = np.array([0.3, -0.2])
    _, g_tape = ad.grad(lambda v: flows.log_prob_tape(model, x, v, mean), theta)
    _, g_np = flows.nll_and_grad(model, theta[None, :], x[None, :], mean[None, :], "sum")
    err = ad.relative_error(-g_tape, g_np[0], floor=1e-10)
    return Check("scalar tape vs analytic flow gradient", err <= 1e-10, err, 1e-10)


def check_invertibility(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    model = flows.FlowModel()
    theta = model.init_params(rng) + 0.1 * rng.standard_normal(model.n_params)
    x = rng.normal(0.0, 2.0, (1000, 2))
    u, _ = flows.inverse(model, theta, x)
    err = float(np.max(np.abs(flows.forward_sample(model, theta, u[0]) - x)))
    return Check("flow round trip", err <= 1e-8, err, 1e-8)


def check_logdet(seed: int = 0, h: float = 1e-5) -> Check:
    rng = np.random.default_rng(seed)
    model = flows.FlowModel(n_layers=3, hidden=16)
    theta = model.init_params(rng) + 0.2 * rng.standard_normal(model.n_params)
    worst = 0.0
    for x in rng.normal(0.0, 1.5, (20, 2)):
        _, ld = flows.inverse(model, theta, x[None, :])
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            up, _ = flows.inverse(model, theta, (x + e)[None, :])
            um, _ = flows.inverse(model, theta, (x - e)[None, :])
            J[:, k] = (up[0, 0] - um[0, 0]) / (2 * h)
        worst = max(worst, abs(float(ld[0, 0]) - float(np.log(abs(np.linalg.det(J))))))
    return Check("analytic logdet vs numerical Jacobian", worst <= 1e-5, worst, 1e-5)


def check_masks(seed: int = 0) -> Check:
    """Moving input j must leave m_i and s_i of every block unchanged for i <= j."""
    rng = np.random.default_rng(seed)
    model = flows.FlowModel(n_layers=2, hidden=16)
    theta = rng.normal(0.0, 1.0, model.n_params)
    x = rng.normal(0.0, 1.0, (50, model.dim))
    worst = 0.0
    for layer in range(model.n_layers):
        m0, s0 = flows.made_outputs(model, theta, x, layer)
        for j in range(model.dim):
            xp = x.copy()
            xp[:, j] += 0.37
            m1, s1 = flows.made_outputs(model, theta, xp, layer)
            worst = max(worst, float(np.max(np.abs(m1[..., :j + 1] - m0[..., :j + 1]))),
                        float(np.max(np.abs(s1[..., :j + 1] - s0[..., :j + 1]))))
    return Check("MADE mask zero sensitivity", worst == 0.0, worst, 0.0)


def check_interpolation(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    anchors = make_grid_anchors()
    proj = RidgeProjector(BasisSpec(anchors, 10.0), mu=0.0)
    c = rng.normal(0.0, 1.0, (7, anchors.count))
    s = proj.at_anchors(c)
    err = float(np.max(np.abs(proj.at_anchors(proj.solve(s)) - s)))
    return Check("ridge interpolation at mu = 0", err <= 1e-8, err, 1e-8)


def check_cstar_identity(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    anchors = AnchorSet(rng.uniform(-1, 1, (5, 2)), -1.0, 1.0)
    u = AVector(anchors, rng.normal(0.0, 1.0, (4, 5)))
    ip = inner_product(u, u)
    lhs = float(np.max(np.abs(ip.samples)))
    # the norm is a square root, so squaring it back can cost an ulp or two
    err = abs(lhs - norm(u) ** 2) / lhs
    return Check("C*-identity ||<u,u>|| = ||u||^2", err <= 4 * np.finfo(float).eps, err,
                 4 * np.finfo(float).eps, "relative")


def check_lr() -> Check:
    cfg = GDConfig()
    err = abs(lr_at(3, cfg) - 0.0005)
    return Check("learning-rate schedule", err <= 1e-15, err, 1e-15)


def check_ensemble(grad_fn=None) -> list[Check]:
    disc, std = ensemble_reduction_gap(grad_fn=grad_fn)
    return [Check("discrete == independent trainings (bitwise)", disc, float(not disc), 0.0),
            Check("standard == plain training (bitwise)", std, float(not std), 0.0)]


def run_all(grad_fn=None) -> list[Check]:
    checks: list[Callable[[], object]] = [
        lambda: check_flow_gradient(grad_fn=grad_fn),
        check_tape_gradient,
        check_invertibility,
        check_logdet,
        check_masks,
        check_interpolation,
        check_cstar_identity,
        check_lr,
        lambda: check_ensemble(grad_fn=grad_fn),
    ]
    out: list[Check] = []
    for fn in checks:
        r = fn()
        out.extend(r if isinstance(r, list) else [r])
    return out
