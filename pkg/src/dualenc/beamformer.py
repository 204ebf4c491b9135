"""Trainable spatial-filtering beamformer frontend.

The filter applies, per look direction d, a complex filter-and-sum across
channels of the input STFT:

    y[t,f,d] = sum_c w[f,d,c] * x[t,f,c] + b[f,d]

followed by power pooling over directions. Weights are initialized as
superdirective beamformers: distortionless toward an ideal plane-wave
steering vector under a spherically isotropic noise coherence model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

SPEED_OF_SOUND = 343.0
DIAG_LOAD_SCALE = 1e-3


@dataclass
class ArrayGeometry:
    """Microphone positions (C, 3) in meters plus the steered azimuth grid."""

    mic_positions: np.ndarray
    look_directions_deg: tuple = (-60.0, -30.0, 0.0, 30.0, 60.0)
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        self.mic_positions = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if self.mic_positions.shape[1] != 3:
            raise ShapeError(f"mic positions must be (C, 3), got {self.mic_positions.shape}")
        dirs = tuple(float(d) for d in self.look_directions_deg)
        if len(set(dirs)) != len(dirs):
            raise ShapeError("look directions must be distinct")
        self.look_directions_deg = dirs

    @property
    def n_channels(self):
        return self.mic_positions.shape[0]

    @property
    def n_directions(self):
        return len(self.look_directions_deg)

    @classmethod
    def linear(cls, n_mics=4, spacing=0.05, look_directions_deg=(-60.0, -30.0, 0.0, 30.0, 60.0)):
        """Uniform linear array along x, centered at the origin."""
        x = (np.arange(n_mics) - (n_mics - 1) / 2.0) * spacing
        pos = np.stack([x, np.zeros(n_mics), np.zeros(n_mics)], axis=1)
        return cls(pos, look_directions_deg)

    @classmethod
    def from_file(cls, path, look_directions_deg=(-60.0, -30.0, 0.0, 30.0, 60.0)):
        """One mic per line: 'x y z' in meters; '#' comments allowed."""
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    rows.append([float(v) for v in line.split()])
        return cls(np.asarray(rows), look_directions_deg)


@dataclass
class SpatialFilter:
    """Complex weights w (F, D, C) and biases b (F, D)."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.complex128)
        self.b = np.asarray(self.b, dtype=np.complex128)
        if self.w.ndim != 3 or self.b.shape != self.w.shape[:2]:
            raise ShapeError(f"inconsistent filter shapes w={self.w.shape} b={self.b.shape}")
        if not (np.all(np.isfinite(self.w.view(np.float64)))
                and np.all(np.isfinite(self.b.view(np.float64)))):
            raise NumericalError("non-finite filter coefficients")

    @property
    def n_bins(self):
        return self.w.shape[0]

    @property
    def n_directions(self):
        return self.w.shape[1]

    @property
    def n_channels(self):
        return self.w.shape[2]


def sf_forward(filt, spec):
    """Filter-and-sum per look direction: spec (T, F, C) -> y (T, F, D)."""
    spec = np.asarray(spec)
    if spec.ndim != 3:
        raise ShapeError(f"expected (T, F, C) spectrogram, got {spec.shape}")
    if spec.shape[1] != filt.n_bins or spec.shape[2] != filt.n_channels:
        raise ShapeError(
            f"spectrogram (F={spec.shape[1]}, C={spec.shape[2]}) does not match "
            f"filter (F={filt.n_bins}, C={filt.n_channels})"
        )
    return np.einsum("tfc,fdc->tfd", spec, filt.w) + filt.b[None, :, :]


def sf_pool(y):
    """Enhanced power spectrogram: mean over directions of |y|^2."""
    y = np.asarray(y)
    return (y.real ** 2 + y.imag ** 2).mean(axis=-1)


def plane_wave_delays(geom, azimuth_deg):
    """Arrival-time offsets (seconds) per mic for a far-field plane wave.

    The unit propagation vector points from the array toward the source at
    `azimuth_deg` from broadside (the +y axis); mics ahead of the origin
    along that vector receive the wave earlier (negative delay).
    """
    az = np.deg2rad(azimuth_deg)
    u = np.array([np.sin(az), np.cos(az), 0.0])
    return -(geom.mic_positions @ u) / geom.speed_of_sound


def steering_vector(geom, f_hz, azimuth_deg):
    return np.exp(-2j * np.pi * f_hz * plane_wave_delays(geom, azimuth_deg))


def isotropic_coherence(geom, f_hz):
    """Spherically isotropic (diffuse) noise coherence: sinc(2*pi*f*d/c)."""
    diff = geom.mic_positions[:, None, :] - geom.mic_positions[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    arg = 2.0 * np.pi * f_hz * dist / geom.speed_of_sound
    return np.sinc(arg / np.pi)


def init_superdirective(geom, n_bins, sample_rate, fft_size=None):
    """Superdirective weights per (frequency, direction); bias zero.

    w = Gamma^-1 v / (v^H Gamma^-1 v) with diagonal loading
    mu = 1e-3 * trace(Gamma) / C. The DC and Nyquist bins fall back to
    uniform delay-and-sum (1/C) weights where steering phase is degenerate.
    """
    if fft_size is None:
        fft_size = 2 * (n_bins - 1)
    c_ch = geom.n_channels
    n_dir = geom.n_directions
    w = np.zeros((n_bins, n_dir, c_ch), dtype=np.complex128)
    for k in range(n_bins):
        f_hz = k * sample_rate / fft_size
        if k == 0 or (fft_size % 2 == 0 and k == n_bins - 1):
            w[k, :, :] = 1.0 / c_ch
            continue
        gamma = isotropic_coherence(geom, f_hz)
        mu = DIAG_LOAD_SCALE * np.trace(gamma) / c_ch
        loaded = gamma + mu * np.eye(c_ch)
        for d, az in enumerate(geom.look_directions_deg):
            v = steering_vector(geom, f_hz, az)
            try:
                gv = np.linalg.solve(loaded, v)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"singular coherence at bin {k}: {exc}") from exc
            denom = np.vdot(v, gv)
            if abs(denom) < 1e-30:
                raise NumericalError(f"degenerate steering normalization at bin {k}")
            w[k, d, :] = gv / denom
    return SpatialFilter(w=w, b=np.zeros((n_bins, n_dir), dtype=np.complex128))


def identity_filter(n_bins):
    """Single-channel, single-direction pass-through filter."""
    return SpatialFilter(w=np.ones((n_bins, 1, 1), dtype=np.complex128),
                         b=np.zeros((n_bins, 1), dtype=np.complex128))


def enhance(wav_multi, filt, sample_rate, direction=None, win_ms=32.0, hop_ms=10.0,
            fft_size=512):
    """Beamform a multi-channel waveform.

    With `direction` set, returns the reconstructed time-domain signal for
    that look direction (overlap-add). Otherwise returns the pooled enhanced
    power spectrogram (T, F).
    """
    from . import dsp

    spec = dsp.stft(wav_multi, sample_rate=sample_rate, win_ms=win_ms,
                    hop_ms=hop_ms, fft_size=fft_size)
    y = sf_forward(filt, spec)
    if direction is None:
        return sf_pool(y)
    if not 0 <= direction < filt.n_directions:
        raise ShapeError(f"direction {direction} out of range 0..{filt.n_directions - 1}")
    return dsp.istft(y[:, :, direction], sample_rate=sample_rate, win_ms=win_ms,
                     hop_ms=hop_ms, fft_size=fft_size)
