"""Synthetic parallel close-talk / far-talk corpus generator.

Utterances are sequences of harmonic token bursts. The close-talk channel is
the dry source plus noise at a role-dependent SNR (clean for the doctor, who
wears the device; attenuated and noisy for other speakers). The far-talk
channels are rendered for a microphone array with fractional plane/near-field
delays, 1/r attenuation, an exponentially decaying diffuse reverb tail, and
per-channel noise. Every random quantity of an utterance derives from
(seed, split, index), so regeneration and parallel rendering are
deterministic.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np

from . import dsp
from .beamformer import ArrayGeometry
from .errors import ManifestError, ShapeError, VocabError

N_CONTENT_TOKENS = 10
TOKEN_SEC = 0.2
GAP_SEC = 0.05
RAMP_SEC = 0.02
HARMONIC_WEIGHTS = (1.0, 0.5, 0.25)
TAIL_PAD = 4096          # room tail + max propagation delay, constant per corpus
REVERB_LEVEL = 0.35      # reverb amplitude relative to the 1 m direct path
MIN_TOKENS = 3
MAX_TOKENS = 10


def token_frequency(token_id):
    return 200.0 + 40.0 * token_id


def render_tokens(tokens, sample_rate, pitch_jitter=0.0):
    """Dry source: 200 ms harmonic bursts with 50 ms gaps, 20 ms cosine ramps.

    `pitch_jitter` scales every fundamental by (1 + jitter); the corpus
    generator draws it once per utterance in [-0.03, 0.03].
    """
    for tok in tokens:
        if not 0 <= int(tok) < N_CONTENT_TOKENS:
            raise VocabError(f"unknown token id {tok}")
    n_tok = int(round(TOKEN_SEC * sample_rate))
    n_gap = int(round(GAP_SEC * sample_rate))
    n_ramp = int(round(RAMP_SEC * sample_rate))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_ramp) / n_ramp)
    env = np.ones(n_tok)
    env[:n_ramp] = ramp
    env[-n_ramp:] = ramp[::-1]
    t = np.arange(n_tok) / sample_rate
    out = np.zeros(len(tokens) * n_tok + (len(tokens) - 1) * n_gap)
    for i, tok in enumerate(tokens):
        f0 = token_frequency(int(tok)) * (1.0 + pitch_jitter)
        burst = np.zeros(n_tok)
        for h, wgt in enumerate(HARMONIC_WEIGHTS, start=1):
            burst += wgt * np.sin(2.0 * np.pi * f0 * h * t)
        start = i * (n_tok + n_gap)
        out[start:start + n_tok] = 0.25 * env * burst
    return out


@dataclass
class SceneSpec:
    """Acoustic description of one utterance."""

    role: str
    source_position: np.ndarray
    geometry: ArrayGeometry
    ct_mic_position: np.ndarray
    reverb_t60: float
    snr_ct_db: float
    snr_ft_db: float
    tokens: tuple

    def __post_init__(self):
        if self.role not in ("doctor", "other"):
            raise ManifestError(f"unknown role {self.role!r}")
        self.source_position = np.asarray(self.source_position, dtype=np.float64)
        self.ct_mic_position = np.asarray(self.ct_mic_position, dtype=np.float64)
        if not (np.all(np.isfinite(self.source_position))
                and np.all(np.isfinite(self.ct_mic_position))):
            raise ShapeError("positions must be finite")
        if not MIN_TOKENS <= len(self.tokens) <= MAX_TOKENS:
            raise VocabError(f"token sequence length {len(self.tokens)} outside [{MIN_TOKENS}, {MAX_TOKENS}]")


@dataclass
class RenderedScene:
    """Rendered channels plus their clean/noise components for SNR checks."""

    ct: np.ndarray           # (n,)
    ft: np.ndarray           # (n, C)
    ct_clean: np.ndarray
    ct_noise: np.ndarray
    ft_direct: np.ndarray    # (n, C) direct path only
    ft_clean: np.ndarray     # (n, C) direct + reverb
    ft_noise: np.ndarray


def _fractional_delay(x, delay_samples, n_out):
    """Linear-interpolation fractional delay into a length n_out buffer."""
    k = int(np.floor(delay_samples))
    frac = delay_samples - k
    out = np.zeros(n_out)
    lo = np.zeros(n_out)
    hi = np.zeros(n_out)
    n = min(len(x), n_out - k)
    if n > 0:
        lo[k:k + n] = x[:n]
    n2 = min(len(x), n_out - k - 1)
    if n2 > 0:
        hi[k + 1:k + 1 + n2] = x[:n2]
    out = (1.0 - frac) * lo + frac * hi
    return out


def _snr_noise(clean, snr_db, rng):
    p_clean = np.mean(clean ** 2)
    p_noise = p_clean / (10.0 ** (snr_db / 10.0))
    return np.sqrt(p_noise) * rng.standard_normal(clean.shape)


def render_scene(spec, dry, rng, sample_rate=dsp.SAMPLE_RATE):
    """Render (ct, ft) channels for one utterance; see RenderedScene."""
    n_total = len(dry) + TAIL_PAD
    mics = spec.geometry.mic_positions
    c_sound = spec.geometry.speed_of_sound
    n_ch = mics.shape[0]

    ft_direct = np.zeros((n_total, n_ch))
    ft_clean = np.zeros((n_total, n_ch))
    kern_len = int(round(spec.reverb_t60 * sample_rate))
    decay = 10.0 ** (-3.0 * np.arange(kern_len) / kern_len) if kern_len else np.zeros(0)
    for c in range(n_ch):
        dist = np.linalg.norm(spec.source_position - mics[c])
        delay = dist / c_sound * sample_rate
        gain = 1.0 / max(dist, 0.1)
        direct = gain * _fractional_delay(dry, delay, n_total)
        ft_direct[:, c] = direct
        ft_clean[:, c] = direct
        if kern_len:
            raw = rng.standard_normal(kern_len) * decay
            kern = REVERB_LEVEL * raw / max(np.linalg.norm(raw), 1e-12)
            tail = np.convolve(dry, kern)
            offset = int(np.floor(delay)) + 32
            n_fit = min(len(tail), n_total - offset)
            ft_clean[offset:offset + n_fit, c] += tail[:n_fit]
    ft_noise = _snr_noise(ft_clean, spec.snr_ft_db, rng)

    ct_scale = 1.0 if spec.role == "doctor" else 10.0 ** (-12.0 / 20.0)
    ct_clean = np.zeros(n_total)
    ct_clean[:len(dry)] = ct_scale * dry
    ct_noise = _snr_noise(ct_clean, spec.snr_ct_db, rng)

    return RenderedScene(
        ct=ct_clean + ct_noise,
        ft=ft_clean + ft_noise,
        ct_clean=ct_clean,
        ct_noise=ct_noise,
        ft_direct=ft_direct,
        ft_clean=ft_clean,
        ft_noise=ft_noise,
    )


# ---------------------------------------------------------------------------
# corpus generation and manifests
# ---------------------------------------------------------------------------

@dataclass
class UtteranceRecord:
    id: str
    role: str
    tokens: tuple
    ct_path: str
    ft_paths: tuple
    true_offset: int


@dataclass
class SimConfig:
    n_mics: int = 4
    mic_spacing: float = 0.05
    look_directions_deg: tuple = (-60.0, -30.0, 0.0, 30.0, 60.0)
    reverb_t60: float = 0.15
    snr_ct_doctor: float = 30.0
    snr_ct_other: float = 0.0
    snr_ft_lo: float = 8.0
    snr_ft_hi: float = 14.0
    min_tokens: int = 3
    max_tokens: int = 8
    sample_rate: int = dsp.SAMPLE_RATE

    def geometry(self):
        return ArrayGeometry.linear(self.n_mics, self.mic_spacing, self.look_directions_deg)


def _utt_rng(seed, split, index):
    # crc32 keeps split-name hashing stable across processes and runs
    split_code = zlib.crc32(split.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence((seed, split_code, index)))


def _draw_scene(cfg, rng, role, geometry):
    n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    tokens = tuple(int(v) for v in rng.integers(0, N_CONTENT_TOKENS, size=n_tok))
    if role == "doctor":
        az = rng.uniform(-20.0, 20.0)
        dist = rng.uniform(0.8, 1.2)
        snr_ct = cfg.snr_ct_doctor
    else:
        az = rng.uniform(-60.0, 60.0)
        dist = rng.uniform(1.5, 2.5)
        snr_ct = cfg.snr_ct_other
    pos = np.array([dist * np.sin(np.deg2rad(az)), dist * np.cos(np.deg2rad(az)), 0.0])
    spec = SceneSpec(
        role=role,
        source_position=pos,
        geometry=geometry,
        ct_mic_position=pos + np.array([0.0, 0.05, 0.0]),
        reverb_t60=cfg.reverb_t60,
        snr_ct_db=snr_ct,
        snr_ft_db=float(rng.uniform(cfg.snr_ft_lo, cfg.snr_ft_hi)),
        tokens=tokens,
    )
    jitter = float(rng.uniform(-0.03, 0.03))
    return spec, jitter


def render_utterance(cfg, seed, split, index, geometry=None):
    """Deterministically render utterance `index` of a split.

    Returns (scene spec, rendered channels). The RNG stream depends only on
    (seed, split, index), so any rendering order gives identical output.
    """
    geometry = geometry or cfg.geometry()
    rng = _utt_rng(seed, split, index)
    role = "doctor" if index % 2 == 0 else "other"
    spec, jitter = _draw_scene(cfg, rng, role, geometry)
    dry = render_tokens(spec.tokens, cfg.sample_rate, pitch_jitter=jitter)
    rendered = render_scene(spec, dry, rng, sample_rate=cfg.sample_rate)
    return spec, rendered


def _render_and_write(args):
    cfg, seed, split, index, out_dir, shift_max = args
    spec, rendered = render_utterance(cfg, seed, split, index)
    utt_id = f"{split}-{index:05d}"
    ct_rel = os.path.join("wav", f"{utt_id}_ct.wav")
    ft_rel = os.path.join("wav", f"{utt_id}_ft.wav")
    true_offset = 0
    ct = rendered.ct
    if shift_max > 0:
        rng = _utt_rng(seed + 0x5F0F, split, index)
        true_offset = int(rng.integers(-shift_max, shift_max + 1))
        if true_offset != 0:
            ct = dsp.apply_shift(ct, true_offset)
    dsp.write_wav(os.path.join(out_dir, ct_rel), ct, cfg.sample_rate)
    dsp.write_wav(os.path.join(out_dir, ft_rel), rendered.ft, cfg.sample_rate)
    return UtteranceRecord(
        id=utt_id,
        role=spec.role,
        tokens=spec.tokens,
        ct_path=ct_rel,
        ft_paths=(ft_rel,),
        true_offset=true_offset,
    )


def generate_corpus(n_train, n_test, seed, out_dir, cfg=None, workers=1, shift_max=0):
    """Write WAVs plus train/test manifests; byte-identical for a fixed seed.

    Roles alternate for a balanced 50/50 doctor/other mix. Train and test
    draw from disjoint per-utterance RNG streams (the stand-in for disjoint
    speakers). Returns (train_manifest_path, test_manifest_path).
    """
    cfg = cfg or SimConfig()
    os.makedirs(os.path.join(out_dir, "wav"), exist_ok=True)
    manifests = {}
    for split, count in (("train", n_train), ("test", n_test)):
        jobs = [(cfg, seed, split, i, out_dir, shift_max) for i in range(count)]
        if workers > 1 and count > 1:
            from multiprocessing import Pool
            with Pool(workers) as pool:
                records = pool.map(_render_and_write, jobs, chunksize=16)
        else:
            records = [_render_and_write(j) for j in jobs]
        path = os.path.join(out_dir, f"{split}.tsv")
        write_manifest(path, records)
        manifests[split] = path
    return manifests["train"], manifests["test"]


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            tokens = " ".join(str(t) for t in r.tokens)
            fh.write(f"{r.id}\t{r.role}\t{tokens}\t{r.ct_path}\t{','.join(r.ft_paths)}\t{r.true_offset}\n")


def load_manifest(path):
    """Parse a manifest; paths stay relative to the manifest directory."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ManifestError(f"{path}:{ln}: expected 6 tab-separated fields, got {len(parts)}")
            utt_id, role, tokens, ct_path, ft_paths, offset = parts
            records.append(UtteranceRecord(
                id=utt_id,
                role=role,
                tokens=tuple(int(t) for t in tokens.split()),
                ct_path=ct_path,
                ft_paths=tuple(ft_paths.split(",")),
                true_offset=int(offset),
            ))
    if not records:
        raise ManifestError(f"{path}: empty manifest")
    return records


def manifest_dir(path):
    return os.path.dirname(os.path.abspath(path))


def load_utterance_audio(record, base_dir):
    """Read (ct (n,), ft (n, C)) for a record, validating sample rates."""
    rate_ct, ct = dsp.read_wav(os.path.join(base_dir, record.ct_path))
    ft_parts = []
    for p in record.ft_paths:
        rate_ft, ft = dsp.read_wav(os.path.join(base_dir, p))
        if rate_ft != rate_ct:
            raise ManifestError(f"{record.id}: sample-rate mismatch between CT and FT files")
        ft_parts.append(ft if ft.ndim == 2 else ft[:, None])
    ft = np.concatenate(ft_parts, axis=1)
    if ct.ndim != 1:
        ct = ct[:, 0]
    return ct, ft
