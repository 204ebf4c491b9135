"""Encoders, attention decoder, and assembled single-/dual-encoder systems.

Sequence tensors are time-major (T, B, D). Close-talk features are plain
numpy constants (nothing trainable upstream); far-talk features are built
inside the autodiff graph so gradients reach the spatial-filter weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import checkpoint as ckpt_io
from . import dsp, selection
from . import tensor as T
from .beamformer import init_superdirective
from .errors import ConfigError, InputError, ShapeError, VocabError

N_CONTENT_TOKENS = 10
EOS_ID = 10
PAD_ID = 11
VOCAB_SIZE = 12

KINDS = ("ct", "ft", "dual")


@dataclass
class ModelConfig:
    sample_rate: int = 16000
    win_ms: float = 32.0
    hop_ms: float = 10.0
    fft_size: int = 512
    n_mels: int = 40
    fmin: float = 20.0
    fmax: float = 0.0          # 0 means Nyquist
    enc_layers: int = 3
    enc_units: int = 64
    enc_stride: int = 4
    dec_units: int = 128
    att_dim: int = 64
    emb_dim: int = 32
    sel_units: int = 64
    sel_kernel: int = 3
    sf_channels: int = 4
    sf_directions: tuple = (-60.0, -30.0, 0.0, 30.0, 60.0)

    def validate(self, with_selector=False):
        n_dec = int(round(np.log2(self.enc_stride)))
        if 2 ** n_dec != self.enc_stride:
            raise ConfigError(f"enc_stride must be a power of two, got {self.enc_stride}")
        if n_dec > self.enc_layers:
            raise ConfigError(f"enc_stride {self.enc_stride} needs more layers than {self.enc_layers}")
        if with_selector and self.enc_stride % 4 != 0:
            # selection-net convolutions contribute a fixed factor of 4
            raise ConfigError(f"enc_stride must be a multiple of 4 with a selector, got {self.enc_stride}")
        return self

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    @property
    def enc_out_dim(self):
        return 2 * self.enc_units

    @property
    def n_decimations(self):
        return int(round(np.log2(self.enc_stride)))

    @property
    def sel_pool(self):
        return self.enc_stride // 4

    def fmax_hz(self):
        return self.fmax if self.fmax > 0 else self.sample_rate / 2.0

    def enc_out_len(self, t_in):
        out = t_in
        for _ in range(self.n_decimations):
            out = -(-out // 2)
        return out


@dataclass
class Model:
    kind: str
    cfg: ModelConfig
    params: dict
    sf_concat_ct: bool = False
    counters: dict = field(default_factory=dict)

    def bump(self, key):
        self.counters[key] = self.counters.get(key, 0) + 1

    def param_arrays(self):
        return {name: t.data for name, t in self.params.items()}

    def has(self, prefix):
        return any(name.startswith(prefix) for name in self.params)


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------

def _uniform(rng, shape, fan_in, dtype):
    k = 1.0 / np.sqrt(max(fan_in, 1))
    return T.Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)


def init_lstm(params, prefix, din, units, rng, dtype):
    params[f"{prefix}/W"] = _uniform(rng, (din, 4 * units), din, dtype)
    params[f"{prefix}/U"] = _uniform(rng, (units, 4 * units), units, dtype)
    params[f"{prefix}/b"] = T.Tensor(np.zeros(4 * units, dtype=dtype), requires_grad=True)


def init_encoder(params, prefix, cfg, rng, dtype=np.float32):
    din = cfg.n_mels
    for layer in range(cfg.enc_layers):
        init_lstm(params, f"{prefix}/l{layer}/fwd", din, cfg.enc_units, rng, dtype)
        init_lstm(params, f"{prefix}/l{layer}/bwd", din, cfg.enc_units, rng, dtype)
        din = cfg.enc_out_dim


def init_decoder(params, cfg, rng, dtype=np.float32):
    h = cfg.enc_out_dim
    params["dec/emb"] = _uniform(rng, (VOCAB_SIZE, cfg.emb_dim), VOCAB_SIZE, dtype)
    init_lstm(params, "dec/lstm", cfg.emb_dim + h, cfg.dec_units, rng, dtype)
    params["dec/att/W_enc"] = _uniform(rng, (h, cfg.att_dim), h, dtype)
    params["dec/att/b"] = T.Tensor(np.zeros(cfg.att_dim, dtype=dtype), requires_grad=True)
    params["dec/att/W_s"] = _uniform(rng, (cfg.dec_units, cfg.att_dim), cfg.dec_units, dtype)
    params["dec/att/v"] = _uniform(rng, (cfg.att_dim,), cfg.att_dim, dtype)
    params["dec/W_o"] = _uniform(rng, (cfg.dec_units + h, VOCAB_SIZE), cfg.dec_units + h, dtype)
    params["dec/b_o"] = T.Tensor(np.zeros(VOCAB_SIZE, dtype=dtype), requires_grad=True)


def init_sf(params, cfg, geometry, dtype=np.float32):
    """Superdirective initialization of the spatial-filter weights."""
    filt = init_superdirective(geometry, cfg.n_bins, cfg.sample_rate, fft_size=cfg.fft_size)
    if filt.n_channels != cfg.sf_channels or filt.n_directions != len(cfg.sf_directions):
        raise ConfigError(
            f"geometry ({filt.n_channels} ch, {filt.n_directions} dirs) does not match "
            f"config ({cfg.sf_channels} ch, {len(cfg.sf_directions)} dirs)")
    w = np.stack([filt.w.real, filt.w.imag], axis=-1).astype(dtype)
    b = np.stack([filt.b.real, filt.b.imag], axis=-1).astype(dtype)
    params["sf/w"] = T.Tensor(w, requires_grad=True)
    params["sf/b"] = T.Tensor(b, requires_grad=True)


def build_ct_model(cfg, seed, dtype=np.float32):
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    init_encoder(params, "enc_ct", cfg, rng, dtype)
    init_decoder(params, cfg, rng, dtype)
    return Model(kind="ct", cfg=cfg, params=params)


def build_ft_model(cfg, seed, geometry, from_model=None, concat_ct=False, dtype=np.float32):
    """Single FT-encoder model with an SF frontend, optionally cloning a seed."""
    cfg = replace(cfg, sf_channels=geometry.n_channels + (1 if concat_ct else 0),
                  sf_directions=tuple(geometry.look_directions_deg))
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    init_encoder(params, "enc_ft", cfg, rng, dtype)
    init_decoder(params, cfg, rng, dtype)
    model = Model(kind="ft", cfg=cfg, params=params, sf_concat_ct=concat_ct)
    if from_model is not None:
        _copy_params(from_model, model, {"enc_ct/": "enc_ft/", "dec/": "dec/"})
    geom = geometry if not concat_ct else _augmented_geometry(geometry)
    init_sf(model.params, cfg, geom, dtype)
    return model


def build_dual_model(cfg, seed, geometry, from_model=None, dtype=np.float32):
    cfg = replace(cfg, sf_channels=geometry.n_channels,
                  sf_directions=tuple(geometry.look_directions_deg))
    cfg.validate(with_selector=True)
    rng = np.random.default_rng(seed)
    params = {}
    init_encoder(params, "enc_ct", cfg, rng, dtype)
    init_encoder(params, "enc_ft", cfg, rng, dtype)
    init_decoder(params, cfg, rng, dtype)
    selection.init_selector(params, "sel", 2 * cfg.n_mels, cfg.sel_units,
                            n_enc=2, kernel=cfg.sel_kernel, rng=rng, dtype=dtype)
    model = Model(kind="dual", cfg=cfg, params=params)
    if from_model is not None:
        # seed CT encoder initializes both sub-encoders; decoder is shared
        _copy_params(from_model, model, {"enc_ct/": "enc_ct/", "dec/": "dec/"})
        _copy_params(from_model, model, {"enc_ct/": "enc_ft/"})
    init_sf(model.params, cfg, geometry, dtype)
    return model


def _augmented_geometry(geometry):
    """CT channel prepended as a virtual mic at the array origin."""
    from .beamformer import ArrayGeometry

    pos = np.vstack([np.zeros(3), geometry.mic_positions])
    return ArrayGeometry(pos, geometry.look_directions_deg, geometry.speed_of_sound)


def _copy_params(src, dst, prefix_map):
    for name, t in src.params.items():
        for old, new in prefix_map.items():
            if name.startswith(old):
                target = new + name[len(old):]
                if target in dst.params:
                    dst.params[target].data = t.data.copy()


# ---------------------------------------------------------------------------
# feature frontends
# ---------------------------------------------------------------------------

def mel_matrix(cfg, dtype=np.float32):
    fb = dsp.mel_filterbank(cfg.n_mels, fft_size=cfg.fft_size,
                            sample_rate=cfg.sample_rate, fmin=cfg.fmin,
                            fmax=cfg.fmax_hz())
    return fb.T.astype(dtype)   # (F, M)


def ct_feature_matrix(cfg, wav, dtype=np.float32):
    """stft -> log-Mel -> CMN, as a (T, M) numpy constant."""
    spec = dsp.stft(wav, sample_rate=cfg.sample_rate, win_ms=cfg.win_ms,
                    hop_ms=cfg.hop_ms, fft_size=cfg.fft_size)
    feat = dsp.log_mel(spec[:, :, 0], n_mels=cfg.n_mels, sample_rate=cfg.sample_rate,
                       fft_size=cfg.fft_size, fmin=cfg.fmin, fmax=cfg.fmax_hz())
    return dsp.cmn(feat).astype(dtype)


def ft_spec_pairs(cfg, wav_multi, dtype=np.float32):
    """Multi-channel STFT as an (T, F, C, 2) re/im constant."""
    spec = dsp.stft(wav_multi, sample_rate=cfg.sample_rate, win_ms=cfg.win_ms,
                    hop_ms=cfg.hop_ms, fft_size=cfg.fft_size)
    return np.stack([spec.real, spec.imag], axis=-1).astype(dtype)


def ft_feature_graph(model, spec_tm, t_len, n_batch, mask=None, fill=None):
    """Differentiable FT features from a time-major spectrogram constant.

    spec_tm: (T*B, F, C, 2) with row order t*B + b. Applies the spatial
    filter, pools direction power, Mel-filters, logs, and mean-normalizes
    per utterance; returns (T, B, M). `mask`/`fill` apply feature masking
    (SpecAugment) after CMN.
    """
    cfg = model.cfg
    if spec_tm.shape[2] != cfg.sf_channels:
        raise ShapeError(f"expected {cfg.sf_channels} channels, got {spec_tm.shape[2]}")
    dtype = model.params["sf/w"].data.dtype
    x = T.Tensor(np.asarray(spec_tm, dtype=dtype))
    y = T.forward_op("cfsum", x, model.params["sf/w"], model.params["sf/b"])
    power = T.forward_op("abs_squared", y)                      # (TB, F, D)
    pooled = T.forward_op("mean_pool", power, size=len(cfg.sf_directions), axis=2)
    pooled = pooled.reshape((t_len * n_batch, cfg.n_bins))
    mel = pooled @ T.Tensor(mel_matrix(cfg, dtype))
    logf = T.forward_op("log", mel + T.Tensor(np.asarray(dsp.LOG_FLOOR, dtype=dtype)))
    feats = logf.reshape((t_len, n_batch, cfg.n_mels))
    feats = _cmn_graph(feats, t_len, dtype)
    if mask is not None:
        feats = _apply_mask_graph(feats, mask, fill, dtype)
    return feats


def _cmn_graph(feats, t_len, dtype):
    mean = feats.sum(axis=0) * T.Tensor(np.asarray(1.0 / t_len, dtype=dtype))
    neg = mean * T.Tensor(np.asarray(-1.0, dtype=dtype))
    return feats + T.forward_op("expand", neg, n=t_len, axis=0)


def _apply_mask_graph(feats, mask, fill, dtype):
    keep = T.Tensor(np.asarray(mask, dtype=dtype))
    fill_c = T.Tensor(np.asarray(fill, dtype=dtype))
    inv = T.Tensor(np.asarray(1.0 - mask, dtype=dtype))
    return feats * keep + fill_c * inv


def skip_sf_feature_matrix(cfg, wav, dtype=np.float32):
    """Single-channel power routed around the spatial filter (SF skip)."""
    return ct_feature_matrix(cfg, wav, dtype)


# ---------------------------------------------------------------------------
# encoder / decoder forward passes
# ---------------------------------------------------------------------------

def encoder_forward(model, prefix, feats, dropout=0.0, rng=None):
    """Bidirectional recurrent stack with stride-2 decimation.

    Decimation (drop every second frame) follows each of the first
    log2(stride) layers, giving output length ceil(T / stride) for every T.
    """
    cfg = model.cfg
    model.bump(prefix)
    h = feats if isinstance(feats, T.Tensor) else T.Tensor(feats)
    if h.ndim == 2:
        h = h.reshape((h.shape[0], 1, h.shape[1]))
    if h.shape[0] < 1:
        raise InputError("empty feature sequence")
    p = model.params
    for layer in range(cfg.enc_layers):
        fwd = T.forward_op("lstm_seq", h, p[f"{prefix}/l{layer}/fwd/W"],
                           p[f"{prefix}/l{layer}/fwd/U"], p[f"{prefix}/l{layer}/fwd/b"])
        bwd = T.forward_op("lstm_seq", h, p[f"{prefix}/l{layer}/bwd/W"],
                           p[f"{prefix}/l{layer}/bwd/U"], p[f"{prefix}/l{layer}/bwd/b"],
                           reverse=True)
        h = T.forward_op("concat", fwd, bwd, axis=2)
        if layer < cfg.n_decimations:
            h = T.forward_op("stride_decimate", h, stride=2, axis=0)
        if dropout > 0.0 and rng is not None:
            h = _dropout(h, dropout, rng)
    return h


def _dropout(x, rate, rng):
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * T.Tensor(keep * scale)


def _one_hot(ids, dtype):
    out = np.zeros((len(ids), VOCAB_SIZE), dtype=dtype)
    out[np.arange(len(ids)), ids] = 1.0
    return out


def _decoder_cell(p, inp, state, cell, dtype):
    nh = state.shape[1]
    a = T.forward_op("linear", inp, p["dec/lstm/W"], p["dec/lstm/b"]) + (state @ p["dec/lstm/U"])
    ig = T.forward_op("sigmoid", T.forward_op("slice", a, slices=(slice(None), slice(0, nh))))
    fg = T.forward_op("sigmoid", T.forward_op("slice", a, slices=(slice(None), slice(nh, 2 * nh))))
    gg = T.forward_op("tanh", T.forward_op("slice", a, slices=(slice(None), slice(2 * nh, 3 * nh))))
    og = T.forward_op("sigmoid", T.forward_op("slice", a, slices=(slice(None), slice(3 * nh, 4 * nh))))
    cell = fg * cell + ig * gg
    state = og * T.forward_op("tanh", cell)
    return state, cell


def _attention(p, enc_out, eproj, state, t_len, n_batch, h_dim):
    sp = state @ p["dec/att/W_s"]                              # (B, A)
    scores = T.forward_op("tanh", eproj + T.forward_op("expand", sp, n=t_len, axis=0))
    att_dim = sp.shape[1]
    scores = scores.reshape((t_len * n_batch, att_dim)) @ p["dec/att/v"]
    alpha = T.forward_op("softmax", scores.reshape((t_len, n_batch)), axis=0)
    weights = T.forward_op("expand", alpha, n=h_dim, axis=2)
    return (weights * enc_out).sum(axis=0), alpha               # (B, H)


def decode_train(model, enc_out, targets, dropout=0.0, rng=None):
    """Teacher-forced mean token negative log-likelihood.

    targets: (B, L) int array, every row ending in EOS; rows must share a
    length (corpus utterances are bucketed by token count).
    """
    p = model.params
    cfg = model.cfg
    if isinstance(enc_out, np.ndarray):
        enc_out = T.Tensor(enc_out)
    t_len, n_batch, h_dim = enc_out.shape
    if t_len < 1:
        raise InputError("zero-length encoder output")
    targets = np.asarray(targets)
    if targets.ndim != 2 or targets.shape[0] != n_batch or targets.shape[1] < 1:
        raise ShapeError(f"targets {targets.shape} do not match batch {n_batch}")
    if targets.min() < 0 or targets.max() >= VOCAB_SIZE:
        raise VocabError(f"token id outside vocabulary of {VOCAB_SIZE}")
    if not np.all(targets[:, -1] == EOS_ID):
        raise VocabError("every target must end with EOS")
    dtype = p["dec/emb"].data.dtype

    eflat = enc_out.reshape((t_len * n_batch, h_dim))
    eproj = T.forward_op("linear", eflat, p["dec/att/W_enc"], p["dec/att/b"])
    eproj = eproj.reshape((t_len, n_batch, cfg.att_dim))

    state = T.Tensor(np.zeros((n_batch, cfg.dec_units), dtype=dtype))
    cell = T.Tensor(np.zeros((n_batch, cfg.dec_units), dtype=dtype))
    ctx = T.Tensor(np.zeros((n_batch, h_dim), dtype=dtype))
    prev = np.full(n_batch, EOS_ID)
    total = None
    n_steps = targets.shape[1]
    for step in range(n_steps):
        emb = T.Tensor(_one_hot(prev, dtype)) @ p["dec/emb"]
        inp = T.forward_op("concat", emb, ctx, axis=1)
        state, cell = _decoder_cell(p, inp, state, cell, dtype)
        ctx, _ = _attention(p, enc_out, eproj, state, t_len, n_batch, h_dim)
        feat = T.forward_op("concat", state, ctx, axis=1)
        if dropout > 0.0 and rng is not None:
            feat = _dropout(feat, dropout, rng)
        logits = T.forward_op("linear", feat, p["dec/W_o"], p["dec/b_o"])
        logp = T.forward_op("log_softmax", logits, axis=1)
        picked = (logp * T.Tensor(_one_hot(targets[:, step], dtype))).sum()
        total = picked if total is None else total + picked
        prev = targets[:, step]
    scale = np.asarray(-1.0 / (n_batch * n_steps), dtype=dtype)
    return total * T.Tensor(scale)


def decode_beam(model, enc_out, beam_size=4, max_len=16):
    """Length-normalized beam search; beam_size=1 is greedy decoding."""
    if beam_size < 1:
        raise InputError(f"beam_size must be >= 1, got {beam_size}")
    p = model.params
    cfg = model.cfg
    with T.no_grad():
        if isinstance(enc_out, np.ndarray):
            enc_out = T.Tensor(enc_out)
        t_len, n_batch, h_dim = enc_out.shape
        if n_batch != 1:
            raise InputError("beam decoding expects a single utterance")
        dtype = p["dec/emb"].data.dtype
        eflat = enc_out.reshape((t_len, h_dim))
        eproj = T.forward_op("linear", eflat, p["dec/att/W_enc"], p["dec/att/b"])
        eproj = eproj.reshape((t_len, 1, cfg.att_dim))

        zero_s = np.zeros((1, cfg.dec_units), dtype=dtype)
        zero_c = np.zeros((1, h_dim), dtype=dtype)
        beams = [([], 0.0, zero_s, zero_s, zero_c)]   # tokens, logp, s, cell, ctx
        done = []
        for _ in range(max_len):
            cands = []
            for tokens, logp, s_np, c_np, ctx_np in beams:
                prev = tokens[-1] if tokens else EOS_ID
                emb = T.Tensor(_one_hot([prev], dtype)) @ p["dec/emb"]
                inp = T.forward_op("concat", emb, T.Tensor(ctx_np), axis=1)
                state, cell = _decoder_cell(p, inp, T.Tensor(s_np), T.Tensor(c_np), dtype)
                ctx, _ = _attention(p, enc_out, eproj, state, t_len, 1, h_dim)
                logits = T.forward_op("linear", T.forward_op("concat", state, ctx, axis=1),
                                      p["dec/W_o"], p["dec/b_o"])
                step_logp = T.forward_op("log_softmax", logits, axis=1).data[0]
                for tok in range(VOCAB_SIZE):
                    cands.append((tokens + [tok], logp + float(step_logp[tok]),
                                  state.data, cell.data, ctx.data))
            order = np.argsort([-c[1] for c in cands], kind="stable")
            beams = []
            for idx in order[:beam_size]:
                tokens, logp, s_np, c_np, ctx_np = cands[idx]
                if tokens[-1] == EOS_ID:
                    done.append((logp / len(tokens), tokens))
                else:
                    beams.append(cands[idx])
            if not beams:
                break
        if not done:
            done = [(logp / max(len(tokens), 1), tokens + [EOS_ID])
                    for tokens, logp, *_ in beams]
        done.sort(key=lambda d: (-d[0], d[1]))
        best = done[0][1]
    return [tok for tok in best if tok != EOS_ID]


# ---------------------------------------------------------------------------
# spec-facing single-utterance encode
# ---------------------------------------------------------------------------

def encode(model, audio, encoder="ct", skip_sf=False):
    """Hidden sequence (T', 1, H) for one utterance.

    `audio` is a 1-ch waveform for the CT path (or FT path with skip_sf) and
    a (n, C) waveform for the FT path through the spatial filter.
    """
    cfg = model.cfg
    prefix = f"enc_{encoder}"
    if not model.has(prefix + "/"):
        raise InputError(f"model {model.kind!r} has no {prefix} encoder")
    audio = np.asarray(audio)
    if encoder == "ct" or skip_sf:
        if audio.ndim != 1:
            audio = audio[:, 0]
        feats = ct_feature_matrix(cfg, audio, dtype=model.params["dec/emb"].data.dtype)
        return encoder_forward(model, prefix, feats)
    if audio.ndim != 2 or audio.shape[1] != cfg.sf_channels:
        raise ShapeError(f"FT path expects (n, {cfg.sf_channels}) audio, got {audio.shape}")
    spec = ft_spec_pairs(cfg, audio)
    t_len = spec.shape[0]
    feats = ft_feature_graph(model, spec, t_len, 1)
    return encoder_forward(model, prefix, feats)


# ---------------------------------------------------------------------------
# dual-encoder forward
# ---------------------------------------------------------------------------

def forward_dual(model, ct_feats, ft_feats, sel_mode="soft", sel_unit="utt",
                 forced_q=None, training=False, dropout=0.0, rng=None):
    """Combined encoder representation plus the selection output.

    ct_feats: (T, B, M) constant; ft_feats: (T, B, M) tensor or constant.
    Hard selection is inference-only; the training path always uses soft
    selection. In utterance-hard mode only the winning encoder runs.
    """
    if model.kind != "dual":
        raise InputError(f"forward_dual requires a dual model, got {model.kind!r}")
    if training and sel_mode != "soft":
        raise InputError("training must use soft selection")
    cfg = model.cfg
    ct_t = ct_feats if isinstance(ct_feats, T.Tensor) else T.Tensor(ct_feats)
    ft_t = ft_feats if isinstance(ft_feats, T.Tensor) else T.Tensor(ft_feats)
    if ct_t.shape[0] != ft_t.shape[0]:
        n = min(ct_t.shape[0], ft_t.shape[0])
        ct_t = T.forward_op("slice", ct_t, slices=(slice(0, n),))
        ft_t = T.forward_op("slice", ft_t, slices=(slice(0, n),))
    t_len = ct_t.shape[0]

    if forced_q is not None:
        q_mat = np.tile(np.asarray(forced_q, dtype=np.float64), (ct_t.shape[1], 1))
        q = T.Tensor(q_mat.astype(ct_t.dtype))
        if sel_unit == "frame":
            q = T.forward_op("expand", q, n=cfg.enc_out_len(t_len), axis=0)
    else:
        sel_in = T.forward_op("concat", ct_t, ft_t, axis=2)
        q = selection.selector_forward(model.params, "sel", sel_in,
                                       unit=sel_unit, pool_size=cfg.sel_pool)

    def run_ct():
        return encoder_forward(model, "enc_ct", ct_t, dropout=dropout, rng=rng)

    def run_ft():
        return encoder_forward(model, "enc_ft", ft_t, dropout=dropout, rng=rng)

    if sel_mode == "hard":
        combined = selection.combine_hard([run_ct, run_ft], q, unit=sel_unit)
    else:
        combined = selection.combine_soft([run_ct(), run_ft()], q, unit=sel_unit)
    return combined, q


# ---------------------------------------------------------------------------
# checkpoint round-trip
# ---------------------------------------------------------------------------

_KIND_CODE = {k: i for i, k in enumerate(KINDS)}

_CFG_SCALARS = [f.name for f in fields(ModelConfig) if f.name != "sf_directions"]


def save_model(path, model):
    tensors = {f"param/{name}": t.data.astype(np.float32)
               for name, t in model.params.items()}
    tensors["meta/kind"] = np.float32(_KIND_CODE[model.kind])
    tensors["meta/sf_concat_ct"] = np.float32(1.0 if model.sf_concat_ct else 0.0)
    for name in _CFG_SCALARS:
        tensors[f"meta/cfg/{name}"] = np.float32(getattr(model.cfg, name))
    tensors["meta/cfg/sf_directions"] = np.asarray(model.cfg.sf_directions, dtype=np.float32)
    ckpt_io.save_checkpoint(path, tensors)


def load_model(path):
    _, tensors = ckpt_io.load_checkpoint(path)
    kind = KINDS[int(tensors["meta/kind"])]
    cfg_kwargs = {}
    for name in _CFG_SCALARS:
        raw = float(tensors[f"meta/cfg/{name}"])
        default = getattr(ModelConfig, name, None)
        cfg_kwargs[name] = int(raw) if isinstance(default, int) else raw
    cfg_kwargs["sf_directions"] = tuple(float(v) for v in tensors["meta/cfg/sf_directions"])
    cfg = ModelConfig(**cfg_kwargs)
    params = {}
    for name, arr in tensors.items():
        if name.startswith("param/"):
            params[name[len("param/"):]] = T.Tensor(arr.copy(), requires_grad=True)
    return Model(kind=kind, cfg=cfg,
                 params=params,
                 sf_concat_ct=bool(tensors["meta/sf_concat_ct"] > 0.5))
