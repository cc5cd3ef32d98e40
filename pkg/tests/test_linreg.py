import numpy as np
import pytest

from cstarnet import linreg


@pytest.fixture(scope="module")
def clean():
    return linreg.make_data(noise=0.0, seed=0)


class TestLinearRegressions:
    def test_three_anchors(self):
        assert linreg.ANCHORS_1D.shape == (3, 1)

    def test_separate_fits_exact(self, clean):
        sep = linreg.separate_fits(clean)
        np.testing.assert_allclose(sep, linreg.true_params(linreg.ANCHORS_1D), atol=1e-12)
        assert linreg.residual(sep, clean) <= 1e-12

    def test_simultaneous_fit_exact_without_ridge(self, clean):
        s, _ = linreg.simultaneous_fit(clean, mu=0.0)
        assert linreg.residual(s, clean) <= 1e-8

    def test_ridge_leaves_larger_residual(self, clean):
        s0, _ = linreg.simultaneous_fit(clean, mu=0.0)
        s1, _ = linreg.simultaneous_fit(clean, mu=0.1)
        assert linreg.residual(s1, clean) > linreg.residual(s0, clean)

    def test_table(self):
        rows = linreg.comparison_table(noise=0.1, seed=1)
        assert [r["fit"] for r in rows] == ["separate", "simultaneous", "simultaneous"]
        text = linreg.format_table(rows)
        assert len(text.splitlines()) == 4
        # the simultaneous model also predicts between the anchors
        assert rows[1]["midpoints"].shape == (2, 2)
