import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specbench.graph import generate_graph
from specbench.spectral import (
    bin_eigenvectors,
    binned_energy,
    energy_distribution,
    frequency_thirds,
    graph_basis,
    range_energy,
)
from specbench.tasks import (
    REGRESSION_FRACTIONS,
    DegenerateTaskWarning,
    TaskError,
    destandardize,
    make_classification_task,
    make_regression_task,
    make_splits,
    standardize,
    task_manifest,
)


@pytest.fixture(scope="module")
def spectrum():
    g = generate_graph("sbm", {"sizes": [40, 40, 40], "p_in": 0.25, "p_out": 0.02}, seed=4)
    basis = graph_basis(g)
    bins = bin_eigenvectors(basis, 0.1)
    return g, basis, bins, frequency_thirds(bins)


class TestSplits:
    def test_sizes(self):
        assert make_splits(10, (0.6, 0.2, 0.2), 1).sizes() == (6, 2, 2)
        assert make_splits(7, (0.6, 0.2, 0.2), 1).sizes() == (4, 1, 2)

    def test_deterministic(self):
        a, b = make_splits(10, seed=1), make_splits(10, seed=1)
        assert all(np.array_equal(getattr(a, m), getattr(b, m)) for m in ("train", "val", "test"))

    def test_regression_fractions(self):
        assert sum(REGRESSION_FRACTIONS) == pytest.approx(1.0)
        assert make_splits(60, REGRESSION_FRACTIONS).sizes() == (40, 10, 10)

    @pytest.mark.parametrize("fr", [(0.6, 0.2, 0.3), (1.0, 0.0, 0.0), (0.5, 0.5)])
    def test_bad_fractions(self, fr):
        with pytest.raises(TaskError):
            make_splits(10, fr)

    def test_empty_mask(self):
        with pytest.raises(TaskError):
            make_splits(3, (0.6, 0.2, 0.2))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(5, 500), st.integers(0, 2**31))
    def test_disjoint_cover(self, n, seed):
        m = make_splits(n, (0.6, 0.2, 0.2), seed)
        total = m.train.astype(int) + m.val.astype(int) + m.test.astype(int)
        assert np.all(total == 1)
        assert m.sizes()[0] == int(np.floor(0.6 * n + 1e-9))


class TestStandardize:
    def test_example(self):
        z, s = standardize(np.array([1.0, 2.0, 3.0]))
        assert s.mean == pytest.approx(2.0)
        assert s.scale == pytest.approx(0.8165, abs=1e-4)
        assert np.allclose(z, [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_round_trip(self):
        x = np.random.default_rng(0).normal(3.0, 5.0, size=(50, 4))
        z, s = standardize(x)
        assert np.max(np.abs(destandardize(z, s) - x)) <= 1e-12

    def test_constant(self):
        with pytest.raises(TaskError):
            standardize(np.ones(5))
        z, s = standardize(np.array([[1.0, 2.0], [1.0, 4.0]]), constant="zero")
        assert np.all(z[:, 0] == 0.0) and s.scale[0] == 1.0


class TestRegression:
    def test_low_to_high(self, spectrum):
        g, basis, bins, r = spectrum
        t = make_regression_task(bins, r, "low", "high", seed=0)
        assert t.features.shape == (g.n, len(r.low))
        be = binned_energy(energy_distribution(t.raw_target, basis), basis, bins)
        assert range_energy(be, r.high) >= 0.99
        for col in t.raw_features.T:
            be = binned_energy(energy_distribution(col, basis), basis, bins)
            assert range_energy(be, r.low) >= 0.99
        assert np.allclose(t.target.mean(), 0, atol=1e-12) and np.isclose(t.target.std(), 1)
        assert np.allclose(t.target_stats.invert(t.target), t.raw_target, atol=1e-12)

    def test_high_to_low(self, spectrum):
        g, basis, bins, r = spectrum
        t = make_regression_task(bins, r, "high", "low", seed=0)
        assert t.features.shape[1] == len(r.high)
        be = binned_energy(energy_distribution(t.raw_target, basis), basis, bins)
        assert range_energy(be, r.low) >= 0.99

    def test_twenty_bin_column_count(self):
        from specbench.spectral import SpectralBasis
        # one eigenvalue per bin: 20 non-empty bins, low third has 6
        w = np.linspace(0.05, 1.95, 20)
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(20, 20)))
        basis = SpectralBasis(w, q)
        bins = bin_eigenvectors(basis, 0.1)
        r = frequency_thirds(bins)
        t = make_regression_task(bins, r, "low", "high")
        assert t.features.shape[1] == 6 and len(r.high) == 7

    def test_same_range_rejected(self, spectrum):
        _, _, bins, r = spectrum
        with pytest.raises(TaskError):
            make_regression_task(bins, r, "low", "low")

    def test_multi_range_input(self, spectrum):
        _, _, bins, r = spectrum
        t = make_regression_task(bins, r, ("low", "mid"), "high")
        assert t.features.shape[1] == len(r.low) + len(r.mid)


class TestClassification:
    def test_labels_follow_bin_mean(self, spectrum):
        g, basis, bins, r = spectrum
        b = int(r.mid[0])
        t = make_classification_task(g, bins, b, 5, seed=0)
        v = bins.bin_mean[b]
        expected = np.clip(np.searchsorted(np.linspace(-1, 1, 6), v / np.abs(v).max(), "right") - 1, 0, 4)
        assert t.labels.labels.tolist() == expected.tolist()
        assert t.features.shape == (g.n, g.n)  # identity fallback
        assert t.masks.sizes() == (72, 24, 24)

    def test_paper_example(self):
        from specbench.spectral import SpectralBasis
        # a bin whose mean vector rescales to (0.8, 1.0, 0, ...)
        v = np.zeros(10)
        v[:2] = (0.8, 1.0)
        m = np.random.default_rng(0).normal(size=(10, 10))
        m[:, 0] = v
        q, _ = np.linalg.qr(m)
        q[:, 0] *= np.sign(q[1, 0])
        bins = bin_eigenvectors(SpectralBasis(np.linspace(0, 1.9, 10), q), 0.1)
        g = generate_graph("cycle", {"n": 10})
        t = make_classification_task(g, bins, 0, 5, mode="maxabs_rescale")
        assert t.labels.labels[:3].tolist() == [4, 4, 2]

    def test_bin0_paper_literal_degenerate(self):
        g = generate_graph("cycle", {"n": 12})
        bins = bin_eigenvectors(graph_basis(g), 0.1)
        with pytest.warns(DegenerateTaskWarning):
            t = make_classification_task(g, bins, 0, 5, mode="paper_literal")
        assert t.degenerate and np.unique(t.labels.labels).size == 1

    def test_seed_changes_masks_only(self, spectrum):
        g, _, bins, r = spectrum
        a = make_classification_task(g, bins, int(r.high[0]), seed=1)
        b = make_classification_task(g, bins, int(r.high[0]), seed=2)
        assert a.labels == b.labels
        assert not np.array_equal(a.masks.train, b.masks.train)

    def test_empty_bin(self, spectrum):
        g, _, bins, _ = spectrum
        empty = int(np.flatnonzero(bins.counts == 0)[0])
        with pytest.raises(TaskError):
            make_classification_task(g, bins, empty)

    def test_given_features_used(self, spectrum):
        g, _, bins, r = spectrum
        x = np.random.default_rng(0).normal(size=(g.n, 3))
        t = make_classification_task(g.with_features(x), bins, int(r.low[1]))
        assert t.features.shape == (g.n, 3)
        assert np.allclose(t.features.std(axis=0), 1.0)

    def test_deterministic(self, spectrum):
        g, _, bins, r = spectrum
        a = make_classification_task(g, bins, int(r.mid[1]), seed=5)
        b = make_classification_task(g, bins, int(r.mid[1]), seed=5)
        assert a.features.tobytes() == b.features.tobytes() and a.labels == b.labels


def test_manifest(spectrum):
    g, _, bins, r = spectrum
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = task_manifest(make_classification_task(g, bins, int(r.mid[0]), seed=3), g)
    assert m["kind"] == "classification" and m["seed"] == 3 and m["num_classes"] == 5
    assert m["graph_hash"] == g.fingerprint() and m["mode"] == "maxabs_rescale"
    m = task_manifest(make_regression_task(bins, r, "low", "high"), g)
    assert m["input_range"] == ["low"] and m["target_range"] == "high"
    assert len(m["target_stats"]["mean"]) == 1
