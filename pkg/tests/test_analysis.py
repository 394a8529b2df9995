import csv

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from clamp.analysis import (
    covariance,
    default_fit_window,
    eigenspectrum,
    geometry_report,
    jacobi_eigh,
    linear_probe,
    power_law_fit,
    write_spectrum_csv,
)
from clamp.geometry import ValidationError
from oracles import charpoly_eigenvalues


class TestEigenspectrum:
    def test_rank_one(self):
        t = np.random.default_rng(0).standard_normal(40)
        x = np.outer(t, [1.0, 2.0, -1.0, 0.5])
        lam = eigenspectrum(x)
        assert np.sum(lam > 1e-10) == 1

    def test_isotropic(self):
        # rows ±sqrt(c)·e_k give covariance exactly c·I
        c, h = 2.5, 5
        e = np.sqrt(c * h) * np.eye(h)
        lam = eigenspectrum(np.vstack([e, -e]))
        np.testing.assert_allclose(lam, c, rtol=1e-12)

    def test_charpoly_oracle(self):
        x = np.random.default_rng(1).standard_normal((50, 8))
        for start in (0, 4):
            block = x[:, start : start + 4]
            np.testing.assert_allclose(eigenspectrum(block), charpoly_eigenvalues(covariance(block)), rtol=1e-8)

    def test_trace_and_order(self):
        x = np.random.default_rng(2).standard_normal((60, 12)) @ np.diag(np.linspace(0.1, 3, 12))
        lam = eigenspectrum(x)
        assert np.all(np.diff(lam) <= 0)
        assert lam.sum() == pytest.approx(np.trace(covariance(x)), rel=1e-9)

    def test_jacobi_reconstructs(self):
        A = np.random.default_rng(3).standard_normal((9, 9))
        A = A + A.T
        w, V = jacobi_eigh(A)
        np.testing.assert_allclose(V @ np.diag(w) @ V.T, A, atol=1e-9)
        np.testing.assert_allclose(V.T @ V, np.eye(9), atol=1e-12)

    def test_rejects_non_finite(self):
        x = np.ones((4, 3))
        x[2, 1] = np.inf
        with pytest.raises(ValidationError):
            eigenspectrum(x)


class TestPowerLaw:
    @pytest.mark.parametrize("c,alpha", [(1.0, 1.0), (3.7, 1.013), (2.0, 0.0)])
    def test_exact(self, c, alpha):
        n = np.arange(1, 201)
        fit = power_law_fit(c * n ** (-alpha), 1, 200)
        assert fit.exponent == pytest.approx(alpha, abs=1e-9)
        assert fit.fit_residual <= 1e-9

    @pytest.mark.parametrize("lo,hi", [(1, 10), (5, 60), (30, 31)])
    def test_any_window(self, lo, hi):
        lam = 0.3 * np.arange(1, 101) ** -1.7
        fit = power_law_fit(lam, lo, hi)
        assert fit.exponent == pytest.approx(1.7, abs=1e-9)
        assert fit.fit_range == (lo, hi)

    def test_nonpositive_in_range(self):
        with pytest.raises(ValidationError):
            power_law_fit([3.0, 2.0, 0.0, 1.0], 1, 4)

    def test_bad_window(self):
        with pytest.raises(ValidationError):
            power_law_fit([3.0, 2.0, 1.0], 2, 2)

    def test_default_window(self):
        lam = np.r_[np.arange(1, 81) ** -1.0, np.zeros(20)]
        assert default_fit_window(lam) == (5, 70)
        lam = np.arange(1, 1001) ** -1.0
        assert default_fit_window(lam) == (50, 700)

    def test_csv(self, tmp_path):
        write_spectrum_csv(tmp_path / "s.csv", [3.0, 2.0, 1.0])
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0] == ["rank", "eigenvalue"]
        assert [float(r[1]) for r in rows[1:]] == [3.0, 2.0, 1.0]


class TestProbe:
    def test_separable(self):
        rng = np.random.default_rng(0)
        x = np.r_[rng.normal(-3, 0.5, (50, 2)), rng.normal(3, 0.5, (50, 2))]
        y = np.repeat([0, 1], 50)
        assert linear_probe(x, y, x, y, epochs=200) == 1.0

    def test_permuted_labels_chance(self):
        rng = np.random.default_rng(1)
        k = 4
        x = rng.standard_normal((2000, 6))
        y = rng.integers(0, k, 2000)
        acc = linear_probe(x[:1000], y[:1000], x[1000:], rng.permutation(y[1000:]), epochs=200)
        assert abs(acc - 1 / k) <= 0.05

    def test_single_class(self):
        with pytest.raises(ValidationError):
            linear_probe(np.ones((4, 2)), np.zeros(4), np.ones((2, 2)), np.zeros(2))

    def test_unknown_test_label(self):
        with pytest.raises(ValidationError):
            linear_probe(np.eye(4), [0, 1, 0, 1], np.eye(4), [0, 1, 2, 1])

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        x, y = rng.standard_normal((100, 5)), rng.integers(0, 3, 100)
        assert linear_probe(x, y, x, y) == linear_probe(x, y, x, y)


def _line_augment(direction):
    def augment(sample, m, rng):
        t = rng.standard_normal((m, 1))
        return sample + t * direction

    return augment


class TestGeometryReport:
    def _classes(self, rng, d=4):
        return {0: rng.normal(0, 0.2, (6, d)) + 3 * np.eye(d)[0], 1: rng.normal(0, 0.2, (6, d)) + 3 * np.eye(d)[1]}

    def test_shared_axis(self):
        rng = np.random.default_rng(0)
        rep = geometry_report(lambda v: v, self._classes(rng), _line_augment(np.eye(4)[2]), m_a=5, repeats=2,
                              samples_per_repeat=8)
        for pop in ("intra", "inter"):
            np.testing.assert_allclose(rep.values["alignment_sq_cosine"][pop], 1.0, atol=1e-12)

    def test_orthogonal_axes(self):
        rng = np.random.default_rng(1)
        axes = {0: np.eye(4)[2], 1: np.eye(4)[3]}
        classes = self._classes(rng)

        def augment(sample, m, rng):
            label = 0 if sample[0] > sample[1] else 1
            return _line_augment(axes[label])(sample, m, rng)

        rep = geometry_report(lambda v: v, classes, augment, m_a=6, repeats=2, samples_per_repeat=12)
        np.testing.assert_allclose(rep.values["alignment_sq_cosine"]["inter"], 0.0, atol=1e-12)
        assert rep.means["centroid_distance"]["inter"] > rep.means["centroid_distance"]["intra"]

    def test_histograms_normalized_and_bounded(self):
        rng = np.random.default_rng(2)
        aug = lambda s, m, r: s + 0.3 * r.standard_normal((m, s.size))
        rep = geometry_report(lambda v: v, self._classes(rng), aug, m_a=4, repeats=3, samples_per_repeat=10)
        for stat, pops in rep.histograms.items():
            for h in pops.values():
                assert h.mass.sum() == pytest.approx(1.0)
                assert len(h.edges) == 51
        assert np.all((rep.values["centroid_cosine"]["inter"] >= -1) & (rep.values["centroid_cosine"]["inter"] <= 1))
        assert rep.to_dict()["augmentations_per_sample"] == 4

    def test_rotation_invariant(self):
        rng = np.random.default_rng(3)
        Q = special_ortho_group.rvs(4, random_state=3)
        classes = self._classes(rng)
        aug = lambda s, m, r: s + 0.3 * r.standard_normal((m, s.size))
        a = geometry_report(lambda v: v, classes, aug, m_a=4, repeats=2, samples_per_repeat=12)
        b = geometry_report(lambda v: v @ Q.T, classes, aug, m_a=4, repeats=2, samples_per_repeat=12)
        for stat in a.histograms:
            for pop in ("intra", "inter"):
                np.testing.assert_allclose(a.histograms[stat][pop].mass, b.histograms[stat][pop].mass, atol=1e-9)
                np.testing.assert_allclose(a.histograms[stat][pop].edges, b.histograms[stat][pop].edges, atol=1e-9)

    def test_small_class_excluded(self, caplog):
        rng = np.random.default_rng(4)
        classes = self._classes(rng)
        classes[2] = rng.standard_normal((1, 4))
        aug = lambda s, m, r: s + 0.3 * r.standard_normal((m, s.size))
        rep = geometry_report(lambda v: v, classes, aug, m_a=3, repeats=1, samples_per_repeat=50)
        assert rep.samples_used == 12
        assert "excluded" in caplog.text

    def test_needs_two_classes(self):
        with pytest.raises(ValidationError):
            geometry_report(lambda v: v, {0: np.ones((4, 2))}, lambda s, m, r: np.tile(s, (m, 1)), m_a=3)
