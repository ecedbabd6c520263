"""Generalized memory polynomial tests, with a naive-loop oracle."""

import numpy as np
import pytest

from pimsim.gmp import GmpModel, GmpTap, apply_gmp, shifted


def naive_gmp(taps, u):
    """Direct per-sample oracle: y(t) = sum g * u(t-m) * |u(t-m-k)|^(p-1)."""
    n = len(u)
    y = np.zeros(n, dtype=complex)
    for t in range(n):
        for (m, k, p, g) in taps:
            i, j = t - m, t - m - k
            if 0 <= i < n:
                base = u[i]
                env = abs(u[j]) if 0 <= j < n else 0.0
                y[t] += g * base * (env ** (p - 1) if p > 1 else 1.0)
    return y


class TestModel:
    def test_even_order_rejected(self):
        with pytest.raises(ValueError):
            GmpTap(0, 0, 2)

    def test_empty_model_rejected(self):
        with pytest.raises(ValueError):
            GmpModel(())

    def test_memory_span(self):
        model = GmpModel.from_tuples([(-2, 1, 3, 1.0), (1, -3, 5, 0.5)])
        assert model.memory_span == 2


class TestApply:
    def test_identity_tap(self):
        u = np.exp(1j * np.linspace(0, 7, 200)) * np.linspace(1, 2, 200)
        y = apply_gmp(GmpModel.identity(), u)
        assert np.array_equal(y, u)

    def test_two_tone_imd_lines(self):
        # u = e^{j w1 t} + e^{j w2 t}; u|u|^2 has unit lines at 2w1-w2 and
        # 2w2-w1 and amplitude-3 lines at the carriers (trinomial expansion)
        n = 4096
        k1, k2 = 300, 500
        t = np.arange(n)
        u = np.exp(2j * np.pi * k1 * t / n) + np.exp(2j * np.pi * k2 * t / n)
        y = apply_gmp(GmpModel.cubic(), u)
        spec = np.fft.fft(y) / n
        for bin_idx, amp in [(2 * k1 - k2, 1.0), (2 * k2 - k1, 1.0), (k1, 3.0), (k2, 3.0)]:
            assert abs(spec[bin_idx % n]) == pytest.approx(amp, rel=1e-10)
        others = np.ones(n, bool)
        others[[(2 * k1 - k2) % n, (2 * k2 - k1) % n, k1, k2]] = False
        assert np.max(np.abs(spec[others])) < 1e-10

    def test_cubic_homogeneity(self):
        rng = np.random.default_rng(3)
        u = rng.standard_normal(512) + 1j * rng.standard_normal(512)
        y1 = apply_gmp(GmpModel.cubic(), u)
        for alpha in (0.5, 2.0, 3.7):
            ya = apply_gmp(GmpModel.cubic(), alpha * u)
            assert np.allclose(ya, alpha ** 3 * y1, rtol=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(17)
        u = rng.standard_normal(257) + 1j * rng.standard_normal(257)
        taps = [(-2, 1, 3, 0.7 - 0.2j), (0, 0, 1, 1.1j), (1, -1, 5, 0.05 + 0.4j), (2, 2, 3, -0.3)]
        model = GmpModel.from_tuples(taps)
        assert np.allclose(apply_gmp(model, u), naive_gmp(taps, u), rtol=1e-12, atol=1e-12)

    def test_short_signal_rejected(self):
        model = GmpModel.from_tuples([(3, 0, 3, 1.0)])
        with pytest.raises(ValueError):
            apply_gmp(model, np.ones(3, dtype=complex))


class TestShift:
    def test_shift_directions(self):
        x = np.arange(5, dtype=complex)
        assert np.array_equal(shifted(x, 2), [0, 0, 0, 1, 2])
        assert np.array_equal(shifted(x, -2), [2, 3, 4, 0, 0])
        assert shifted(x, 0) is x
