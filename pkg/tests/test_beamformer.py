"""Spatial-filter tests: naive-loop oracles, superdirective properties."""

import numpy as np
import pytest

from dualenc import beamformer as bf
from dualenc import dsp
from dualenc import tensor as T
from dualenc.errors import ShapeError


def _random_filter(rng, n_bins, n_dir, n_ch):
    w = rng.standard_normal((n_bins, n_dir, n_ch)) + 1j * rng.standard_normal((n_bins, n_dir, n_ch))
    b = rng.standard_normal((n_bins, n_dir)) + 1j * rng.standard_normal((n_bins, n_dir))
    return bf.SpatialFilter(w=w, b=b)


def _naive_filter_and_sum(filt, spec):
    """Independent triple-loop oracle for the filter-and-sum operation."""
    t_len, n_bins, n_ch = spec.shape
    out = np.zeros((t_len, n_bins, filt.n_directions), dtype=complex)
    for t in range(t_len):
        for f in range(n_bins):
            for d in range(filt.n_directions):
                acc = filt.b[f, d]
                for c in range(n_ch):
                    acc += filt.w[f, d, c] * spec[t, f, c]
                out[t, f, d] = acc
    return out


def test_sf_forward_identity_filter():
    rng = np.random.default_rng(0)
    spec = rng.standard_normal((3, 5, 1)) + 1j * rng.standard_normal((3, 5, 1))
    filt = bf.identity_filter(5)
    y = bf.sf_forward(filt, spec)
    assert np.allclose(y[:, :, 0], spec[:, :, 0])


def test_sf_forward_bias_only():
    filt = bf.SpatialFilter(w=np.zeros((4, 2, 3)), b=np.full((4, 2), 0.5 - 0.25j))
    spec = np.ones((6, 4, 3), dtype=complex)
    y = bf.sf_forward(filt, spec)
    assert np.allclose(y, 0.5 - 0.25j)


def test_sf_forward_matches_triple_loop_oracle():
    rng = np.random.default_rng(1)
    filt = _random_filter(rng, n_bins=4, n_dir=2, n_ch=3)
    spec = rng.standard_normal((2, 4, 3)) + 1j * rng.standard_normal((2, 4, 3))
    fast = bf.sf_forward(filt, spec)
    oracle = _naive_filter_and_sum(filt, spec)
    assert np.max(np.abs(fast - oracle)) <= 1e-6 * max(1.0, np.max(np.abs(oracle)))


def test_sf_forward_shape_mismatch():
    filt = bf.identity_filter(5)
    with pytest.raises(ShapeError):
        bf.sf_forward(filt, np.zeros((3, 5, 2), dtype=complex))
    with pytest.raises(ShapeError):
        bf.sf_forward(filt, np.zeros((3, 4, 1), dtype=complex))


def test_sf_pool_values():
    y = np.zeros((1, 1, 2), dtype=complex)
    y[0, 0] = [1.0, 1.0j]
    assert bf.sf_pool(y)[0, 0] == pytest.approx(1.0)
    assert np.all(bf.sf_pool(np.zeros((2, 3, 4), dtype=complex)) == 0.0)
    y1 = np.array([[[3 + 4j]]])
    assert bf.sf_pool(y1)[0, 0] == pytest.approx(25.0)


def test_sf_time_invariance():
    """Permuting input frames permutes output frames identically."""
    rng = np.random.default_rng(2)
    filt = _random_filter(rng, 4, 2, 3)
    spec = rng.standard_normal((5, 4, 3)) + 1j * rng.standard_normal((5, 4, 3))
    perm = rng.permutation(5)
    assert np.allclose(bf.sf_forward(filt, spec)[perm], bf.sf_forward(filt, spec[perm]))


# ---------------------------------------------------------------------------
# superdirective initialization
# ---------------------------------------------------------------------------

def test_superdirective_single_mic_collapses_to_one():
    geom = bf.ArrayGeometry(np.zeros((1, 3)), look_directions_deg=(0.0, 30.0))
    filt = bf.init_superdirective(geom, n_bins=9, sample_rate=16000)
    assert np.allclose(filt.w, 1.0)
    assert np.allclose(filt.b, 0.0)


def test_superdirective_dc_bin_closed_form():
    """At f=0, Gamma = ones + mu*I and the solution is delay-and-sum 1/C.

    Closed-form oracle: (ones + mu I)^-1 1 = 1/(C+mu) * 1, and the
    distortionless normalization makes the weights exactly 1/C.
    """
    geom = bf.ArrayGeometry.linear(4, 0.05)
    filt = bf.init_superdirective(geom, n_bins=257, sample_rate=16000)
    assert np.max(np.abs(filt.w[0] - 0.25)) <= 1e-6
    # near-DC non-degenerate bin solves the loaded system; compare explicitly
    f_hz = 1 * 16000 / 512
    gamma = bf.isotropic_coherence(geom, f_hz)
    mu = 1e-3 * np.trace(gamma) / 4
    for d, az in enumerate(geom.look_directions_deg):
        v = bf.steering_vector(geom, f_hz, az)
        gv = np.linalg.solve(gamma + mu * np.eye(4), v)
        expected = gv / np.vdot(v, gv)
        assert np.allclose(filt.w[1, d], expected, atol=1e-9)


def test_superdirective_distortionless_constraint():
    """w^H v = 1 at every (f, d) where weights are steered."""
    geom = bf.ArrayGeometry.linear(4, 0.05)
    n_bins = 33
    filt = bf.init_superdirective(geom, n_bins=n_bins, sample_rate=16000, fft_size=64)
    for k in range(1, n_bins - 1):
        f_hz = k * 16000 / 64
        for d, az in enumerate(geom.look_directions_deg):
            v = bf.steering_vector(geom, f_hz, az)
            assert abs(np.vdot(filt.w[k, d], v).conjugate() - 1.0) <= 1e-6


def test_sf_graph_gradients_match_finite_differences():
    """Gradients through pooled filter-and-sum (real-pair graph form)."""
    rng = np.random.default_rng(3)
    x = T.Tensor(rng.standard_normal((2, 3, 2, 2)))
    w = T.Tensor(rng.standard_normal((3, 2, 2, 2)), requires_grad=True)
    b = T.Tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)

    def loss():
        y = T.forward_op("cfsum", x, w, b)
        pooled = T.forward_op("mean_pool", T.forward_op("abs_squared", y), size=2, axis=2)
        return pooled.sum()

    err = T.check_gradients(loss, [w, b], eps=1e-4, rtol=1e-3)
    assert err <= 1e-3


def test_graph_sf_matches_numpy_sf():
    """The autodiff cfsum/abs_squared path equals the numpy reference."""
    rng = np.random.default_rng(4)
    filt = _random_filter(rng, 4, 3, 2)
    spec = rng.standard_normal((5, 4, 2)) + 1j * rng.standard_normal((5, 4, 2))
    x = T.Tensor(np.stack([spec.real, spec.imag], axis=-1))
    w = T.Tensor(np.stack([filt.w.real, filt.w.imag], axis=-1))
    b = T.Tensor(np.stack([filt.b.real, filt.b.imag], axis=-1))
    y = T.forward_op("cfsum", x, w, b)
    pooled = T.forward_op("mean_pool", T.forward_op("abs_squared", y), size=3, axis=2)
    ref = bf.sf_pool(bf.sf_forward(filt, spec))
    assert np.allclose(pooled.data[:, :, 0], ref, atol=1e-9)


def test_enhance_identity_filter_equals_power_spectrum():
    rng = np.random.default_rng(5)
    wav = rng.standard_normal(1600) * 0.1
    filt = bf.identity_filter(257)
    pooled = bf.enhance(wav, filt, 16000)
    spec = dsp.stft(wav)[:, :, 0]
    assert np.allclose(pooled, np.abs(spec) ** 2)


def test_enhance_zero_filter_silence():
    filt = bf.SpatialFilter(w=np.zeros((257, 2, 1)), b=np.zeros((257, 2)))
    wav = np.random.default_rng(6).standard_normal(1600) * 0.1
    audio = bf.enhance(wav, filt, 16000, direction=0)
    assert np.allclose(audio, 0.0)


def test_enhance_steered_pair_beats_single_channel():
    """Two-channel scene with a broadside impulse train: pooled beamformed
    power at signal bins should be at least the single-channel power."""
    rng = np.random.default_rng(7)
    n = 4000
    sig = np.zeros(n)
    sig[np.arange(100, 3900, 160)] = 1.0
    # broadside: both mics receive identically; steer with identity weights
    wav = np.stack([sig, sig], axis=1)
    w = np.full((257, 1, 2), 0.5, dtype=complex)
    filt = bf.SpatialFilter(w=w, b=np.zeros((257, 1)))
    pooled = bf.enhance(wav, filt, 16000)
    single = np.abs(dsp.stft(sig)[:, :, 0]) ** 2
    assert np.all(pooled >= single - 1e-9)
    assert pooled.sum() == pytest.approx(single.sum(), rel=1e-6)
