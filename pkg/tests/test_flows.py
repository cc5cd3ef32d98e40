import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cstarnet import autodiff as ad
from cstarnet import flows
from cstarnet.basis import BasisSpec, MeasureD, RidgeProjector, make_grid_anchors

DATA = Path(__file__).parent / "data"
LOG_2PI = 1.8378770664093453


def straight_line_log_prob(model, theta, x, mean):
    """Independent MAF evaluation: one point, plain loops, masks from degrees."""
    D, H, c = model.dim, model.hidden, model.clamp
    deg_h = [1 + j % max(D - 1, 1) for j in range(H)]
    n1 = (D + 1) * H
    h = list(map(float, x))
    logdet = 0.0
    for k in range(model.n_layers):
        p = theta[k * model.layer_size:(k + 1) * model.layer_size]
        w1 = p[:n1].reshape(D + 1, H)
        w2 = p[n1:].reshape(H + 1, 2 * D)
        if k > 0:
            h = h[::-1]
        hid = []
        for j in range(H):
            a = w1[D, j] + sum(h[d] * w1[d, j] for d in range(D) if deg_h[j] >= d + 1)
            hid.append(math.tanh(a))
        u = []
        for i in range(D):
            m = w2[H, i] + sum(hid[j] * w2[j, i] for j in range(H) if i + 1 > deg_h[j])
            r = w2[H, D + i] + sum(hid[j] * w2[j, D + i] for j in range(H) if i + 1 > deg_h[j])
            s = c * math.tanh(r / c)
            u.append((h[i] - m) * math.exp(-s))
            logdet -= s
        h = u
    quad = sum((h[i] - mean[i]) ** 2 for i in range(D))
    return -0.5 * D * math.log(2 * math.pi) - 0.5 * quad + logdet


@pytest.fixture(scope="module")
def grid_setup():
    anchors = make_grid_anchors()
    return anchors, RidgeProjector(BasisSpec(anchors, 10.0), mu=0.1), MeasureD(anchors, 0.05)


class TestInverse:
    def test_identity_flow(self):
        model = flows.FlowModel()
        x = np.random.default_rng(0).normal(size=(5, 2))
        u, logdet = flows.inverse(model, np.zeros(model.n_params), x)
        np.testing.assert_array_equal(u[0], x)
        np.testing.assert_array_equal(logdet, 0.0)

    def test_affine_halving(self):
        model = flows.FlowModel(n_layers=1, hidden=4)
        theta = model.affine_params(0.0, math.log(2.0))
        x = np.array([[1.0, -3.0], [0.2, 0.4]])
        u, logdet = flows.inverse(model, theta, x)
        np.testing.assert_allclose(u[0], x / 2, rtol=1e-14)
        np.testing.assert_allclose(logdet[0], -2 * math.log(2.0), rtol=1e-14)

    def test_logdet_against_numerical_jacobian(self):
        rng = np.random.default_rng(1)
        model = flows.FlowModel(n_layers=3, hidden=8)
        theta = model.init_params(rng) + 0.3 * rng.standard_normal(model.n_params)
        h = 1e-5
        for x in rng.normal(0.0, 1.5, (10, 2)):
            _, ld = flows.inverse(model, theta, x[None])
            J = np.empty((2, 2))
            for k in range(2):
                e = np.eye(2)[k] * h
                up = flows.inverse(model, theta, (x + e)[None])[0][0, 0]
                um = flows.inverse(model, theta, (x - e)[None])[0][0, 0]
                J[:, k] = (up - um) / (2 * h)
            assert abs(ld[0, 0] - math.log(abs(np.linalg.det(J)))) <= 1e-5

    def test_batched_stacks(self):
        rng = np.random.default_rng(2)
        model = flows.FlowModel(n_layers=2, hidden=5)
        thetas = rng.normal(0, 0.5, (3, model.n_params))
        x = rng.normal(size=(4, 2))
        u, ld = flows.inverse(model, thetas, x)
        for k in range(3):
            uk, lk = flows.inverse(model, thetas[k], x)
            np.testing.assert_allclose(u[k], uk[0], rtol=1e-14)
            np.testing.assert_allclose(ld[k], lk[0], rtol=1e-14)

    def test_clamp(self):
        model = flows.FlowModel(n_layers=1, hidden=3)
        theta = np.full(model.n_params, 50.0)
        _, s = flows.made_outputs(model, theta, np.ones((2, 2)))
        assert np.all(np.abs(s) <= model.clamp)


class TestForwardSample:
    def test_identity(self):
        model = flows.FlowModel()
        u = np.random.default_rng(0).normal(size=(3, 2))
        np.testing.assert_array_equal(flows.forward_sample(model, np.zeros(model.n_params), u), u)

    def test_affine(self):
        model = flows.FlowModel(n_layers=1, hidden=4)
        theta = model.affine_params([3.0, 3.0], math.log(2.0))
        np.testing.assert_allclose(flows.forward_sample(model, theta, [[1.0, 1.0]]), [[5.0, 5.0]],
                                   rtol=1e-14)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        model = flows.FlowModel()
        theta = model.init_params(rng) + 0.1 * rng.standard_normal(model.n_params)
        x = rng.normal(0.0, 2.0, (1000, 2))
        u, _ = flows.inverse(model, theta, x)
        assert np.max(np.abs(flows.forward_sample(model, theta, u[0]) - x)) <= 1e-8

    def test_round_trip_at_every_anchor(self):
        rng = np.random.default_rng(4)
        model = flows.FlowModel(n_layers=3, hidden=16)
        x = rng.normal(0.0, 2.0, (1000, 2))
        for _ in range(9):
            theta = model.init_params(rng) + 0.2 * rng.standard_normal(model.n_params)
            u, _ = flows.inverse(model, theta, x)
            assert np.max(np.abs(flows.forward_sample(model, theta, u[0]) - x)) <= 1e-8


class TestLogProb:
    def test_peak(self):
        model = flows.FlowModel()
        z = np.array([2.0, -1.0])
        lp = flows.log_prob(model, np.zeros(model.n_params), z[None], z)
        np.testing.assert_allclose(lp, [[-LOG_2PI]], rtol=1e-15)

    def test_distance(self):
        model = flows.FlowModel()
        z = np.array([0.5, 0.5])
        x = z + np.array([0.6, -0.8])
        lp = flows.log_prob(model, np.zeros(model.n_params), x[None], z)
        np.testing.assert_allclose(lp, [[-LOG_2PI - 0.5]], rtol=1e-14)

    def test_one_dimensional_doubling(self):
        model = flows.FlowModel(dim=1, n_layers=1, hidden=2)
        theta = model.affine_params(0.0, math.log(2.0))
        p = math.exp(flows.log_prob(model, theta, np.zeros((1, 1)), np.zeros(1))[0, 0])
        assert p == pytest.approx(0.19947114020, abs=1e-10)

    def test_tape_matches_array_version(self):
        rng = np.random.default_rng(5)
        model = flows.FlowModel(n_layers=2, hidden=3)
        theta = rng.normal(0, 0.5, model.n_params)
        x, mean = rng.normal(size=2), np.array([0.1, 0.3])
        tape = float(flows.log_prob_tape(model, x, list(theta), mean))
        arr = flows.log_prob(model, theta, x[None], mean)[0, 0]
        assert tape == pytest.approx(arr, abs=1e-12)


class TestLoss:
    def test_single_point_at_mean(self):
        model = flows.FlowModel()
        assert flows.nf_loss(model, np.zeros(model.n_params), np.zeros((1, 2)), np.zeros(2)) == \
            pytest.approx(1.8378770664, abs=1e-10)

    def test_copies_add_up(self):
        rng = np.random.default_rng(6)
        model = flows.FlowModel(n_layers=2, hidden=4)
        theta = rng.normal(0, 0.5, model.n_params)
        x = rng.normal(size=(1, 2))
        one = flows.nf_loss(model, theta, x, [0.0, 0.0])
        assert flows.nf_loss(model, theta, np.repeat(x, 7, axis=0), [0.0, 0.0]) == pytest.approx(7 * one)

    def test_against_straight_line_oracle(self):
        rng = np.random.default_rng(7)
        model = flows.FlowModel(n_layers=3, hidden=5)
        theta = rng.normal(0, 0.7, model.n_params)
        x = rng.normal(0, 1.5, (6, 2))
        mean = np.array([-0.4, 1.2])
        ref = -sum(straight_line_log_prob(model, theta, xi, mean) for xi in x)
        assert abs(flows.nf_loss(model, theta, x, mean) - ref) <= 1e-10

    def test_mean_reduction(self):
        rng = np.random.default_rng(8)
        model = flows.FlowModel(n_layers=2, hidden=4)
        theta = rng.normal(0, 0.5, (1, model.n_params))
        x = rng.normal(size=(5, 2))
        ls, gs = flows.nll_and_grad(model, theta, x, np.zeros((1, 2)), "sum")
        lm, gm = flows.nll_and_grad(model, theta, x, np.zeros((1, 2)), "mean")
        np.testing.assert_allclose(lm, ls / 5)
        np.testing.assert_allclose(gm, gs / 5)

    def test_unknown_reduction(self):
        model = flows.FlowModel(n_layers=1, hidden=2)
        with pytest.raises(ValueError):
            flows.nll_and_grad(model, np.zeros(model.n_params), np.zeros((1, 2)), np.zeros(2), "max")


class TestGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        model = flows.FlowModel(n_layers=int(rng.integers(1, 4)), hidden=int(rng.integers(2, 6)))
        theta = rng.normal(0.0, 0.5, model.n_params) * model.param_mask()
        x = rng.normal(0.0, 1.5, (4, 2))
        mean = rng.normal(size=2)
        _, g = flows.nll_and_grad(model, theta[None], x, mean[None])
        fd = ad.central_differences(lambda t: flows.nf_loss(model, t, x, mean), theta, 1e-6)
        mask = model.param_mask() > 0
        assert ad.relative_error(g[0][mask], fd[mask], floor=1e-6) <= 1e-4
        np.testing.assert_array_equal(g[0][~mask], 0.0)

    def test_against_tape(self):
        rng = np.random.default_rng(9)
        model = flows.FlowModel(n_layers=2, hidden=3)
        theta = rng.normal(0.0, 0.5, model.n_params) * model.param_mask()
        x = rng.normal(size=2)
        _, gt = ad.grad(lambda v: flows.log_prob_tape(model, x, v, [0.0, 0.0]), theta)
        _, gn = flows.nll_and_grad(model, theta[None], x[None], np.zeros((1, 2)))
        np.testing.assert_allclose(-gt, gn[0], rtol=1e-10, atol=1e-13)


class TestMasks:
    def test_zero_sensitivity(self):
        rng = np.random.default_rng(10)
        model = flows.FlowModel(dim=3, n_layers=2, hidden=12)
        theta = rng.normal(size=model.n_params)
        x = rng.normal(size=(20, 3))
        for layer in range(model.n_layers):
            m0, s0 = flows.made_outputs(model, theta, x, layer)
            for j in range(3):
                xp = x.copy()
                xp[:, j] += 0.5
                m1, s1 = flows.made_outputs(model, theta, xp, layer)
                np.testing.assert_array_equal(m1[..., :j + 1], m0[..., :j + 1])
                np.testing.assert_array_equal(s1[..., :j + 1], s0[..., :j + 1])

    def test_later_outputs_do_depend(self):
        rng = np.random.default_rng(11)
        model = flows.FlowModel(n_layers=1, hidden=8)
        theta = rng.normal(size=model.n_params)
        x = rng.normal(size=(5, 2))
        xp = x.copy()
        xp[:, 0] += 0.5
        m0, _ = flows.made_outputs(model, theta, x)
        m1, _ = flows.made_outputs(model, theta, xp)
        assert np.all(m1[..., 1] != m0[..., 1])


class TestAggregate:
    def test_concentrated_D(self):
        from cstarnet.algebra import AnchorSet
        anchors = AnchorSet(np.array([[1.0, -1.0]]), -4.0, 4.0)
        proj = RidgeProjector(BasisSpec(anchors, 10.0), mu=0.0)
        D = MeasureD(anchors, 1e-4)
        model = flows.FlowModel(n_layers=1, hidden=2)
        x = np.array([[0.0, 0.0], [1.0, -1.0], [2.5, 0.3]])
        p = flows.aggregate_density(model, np.zeros((model.n_params, 1)), proj, x, D, 500, rng=0)
        ref = np.exp(-0.5 * ((x - [1.0, -1.0]) ** 2).sum(1)) / (2 * math.pi)
        np.testing.assert_allclose(p, ref, rtol=1e-3)

    def test_z_independent_theta_is_nine_term_mixture(self, grid_setup):
        anchors, proj, D = grid_setup
        rng = np.random.default_rng(12)
        model = flows.FlowModel(n_layers=2, hidden=4)
        theta = model.init_params(rng) + 0.2 * rng.standard_normal(model.n_params)
        # the constant function theta is not in V exactly; use its interpolant's anchor values
        coeffs = proj.interpolate(np.repeat(theta[:, None], 9, axis=1))
        x = rng.normal(0.0, 2.0, (30, 2))
        at_anchors = flows.aggregate_density(model, coeffs, proj, x, D, z=anchors.points)
        ref = np.mean([np.exp(flows.log_prob(model, theta, x, z)[0]) for z in anchors.points], axis=0)
        np.testing.assert_allclose(at_anchors, ref, rtol=1e-10)
        mc = flows.aggregate_density(model, coeffs, proj, x, D, n_mc=4500, rng=1)
        np.testing.assert_allclose(mc, ref, rtol=0.05)

    def test_mass(self, grid_setup):
        anchors, proj, D = grid_setup
        model = flows.FlowModel(n_layers=2, hidden=4)
        rng = np.random.default_rng(13)
        theta = model.init_params(rng) + 0.1 * rng.standard_normal(model.n_params)
        coeffs = proj.interpolate(np.repeat(theta[:, None], 9, axis=1))
        mass = flows.grid_mass(lambda p: flows.aggregate_density(model, coeffs, proj, p, D, 90, rng=0))
        assert 0.95 <= mass <= 1.05


class TestDensityGrid:
    def test_layout(self):
        calls = []

        def f(p):
            calls.append(p.copy())
            return p[:, 0] + 10 * p[:, 1]
        g = flows.density_grid(f, (0.0, 1.0), 2)
        assert len(calls[0]) == 4
        np.testing.assert_array_equal(g, [[0.0, 1.0], [10.0, 11.0]])

    def test_symmetry(self, grid_setup):
        anchors, proj, D = grid_setup
        model = flows.FlowModel(n_layers=2, hidden=4)
        c = np.zeros((model.n_params, 9))
        g = flows.density_grid(lambda p: flows.aggregate_density(model, c, proj, p, D, 9000, rng=2),
                               (-4.0, 4.0), 21)
        np.testing.assert_allclose(g, g[::-1, :], rtol=0.03)
        np.testing.assert_allclose(g, g[:, ::-1], rtol=0.03)
        np.testing.assert_allclose(g, g.T, rtol=0.03)

    def test_golden_identity_grid(self, grid_setup):
        anchors, proj, D = grid_setup
        model = flows.FlowModel(n_layers=2, hidden=4)
        c = np.zeros((model.n_params, 9))
        g = flows.density_grid(lambda p: flows.aggregate_density(model, c, proj, p, D, 900, rng=0),
                               (-4.0, 4.0), 20)
        np.testing.assert_allclose(g, np.load(DATA / "identity_grid20.npy"), rtol=1e-12)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(0.0, 0.5))
    def test_round_trip_random_weights(self, seed, scale):
        rng = np.random.default_rng(seed)
        model = flows.FlowModel(n_layers=2, hidden=6)
        theta = model.init_params(rng) + scale * rng.standard_normal(model.n_params)
        x = rng.normal(0.0, 2.0, (50, 2))
        u, _ = flows.inverse(model, theta, x)
        assert np.max(np.abs(flows.forward_sample(model, theta, u[0]) - x)) <= 1e-8
