"""Token error scoring, evaluation reports, shift sweeps, and histograms.

Token error rate plays the WER role on the synthetic vocabulary: unit-cost
Levenshtein edits summed over the corpus before dividing by the total number
of reference tokens. Per-role sums always reconcile to the overall counts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import data, dsp, model as model_lib, simulate
from . import tensor as T
from .errors import InputError, ManifestError

ROLES = ("doctor", "other")


def levenshtein(ref, hyp):
    """Unit-cost edit distance between two token sequences."""
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[m]


@dataclass
class UttResult:
    id: str
    role: str
    ref: tuple
    hyp: tuple
    edits: int
    q: tuple = ()


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def add(self, row):
        self.rows.append(row)

    def totals(self, role=None):
        rows = [r for r in self.rows if role is None or r.role == role]
        edits = sum(r.edits for r in rows)
        ref_tokens = sum(len(r.ref) for r in rows)
        return edits, ref_tokens

    @property
    def wer(self):
        edits, ref = self.totals()
        return edits / max(ref, 1)

    def role_wer(self, role):
        edits, ref = self.totals(role)
        return edits / max(ref, 1)

    def summary(self):
        out = {"overall": self.wer}
        for role in ROLES:
            out[role] = self.role_wer(role)
        return out


def wer(refs, hyps, roles=None):
    """Corpus token error rate from {id: tokens} maps; ids must match."""
    if set(refs) != set(hyps):
        raise ManifestError("reference and hypothesis id sets differ")
    report = EvalReport()
    for utt_id in sorted(refs):
        ref = list(refs[utt_id])
        hyp = list(hyps[utt_id])
        role = roles.get(utt_id, "other") if roles else "other"
        report.add(UttResult(id=utt_id, role=role, ref=tuple(ref), hyp=tuple(hyp),
                             edits=levenshtein(ref, hyp)))
    per_role = {role: report.role_wer(role) for role in ROLES}
    return report.wer, per_role


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def _decode_one(model, rec, base_dir, input_mode, sel_mode, sel_unit, forced_q,
                beam_size, shift, zero_ct):
    ct, ft = data.read_audio(rec, base_dir)
    if shift:
        ct = dsp.apply_shift(ct, int(shift))
    q_row = ()
    with T.no_grad():
        if model.kind == "ct":
            if input_mode == "ct":
                enc = model_lib.encode(model, ct, encoder="ct")
            elif input_mode == "ft":
                enc = model_lib.encode(model, ft[:, 0], encoder="ct")
            else:
                raise InputError("a CT-only model cannot take joint input")
        elif model.kind == "ft":
            if model.sf_concat_ct:
                if input_mode == "ct":
                    enc = model_lib.encode(model, ct, encoder="ft", skip_sf=True)
                else:
                    ct_in = np.zeros_like(ct) if (zero_ct or input_mode == "ft") else ct
                    audio = np.concatenate([ct_in[:, None], ft], axis=1)
                    enc = model_lib.encode(model, audio, encoder="ft")
            else:
                if input_mode == "ft":
                    enc = model_lib.encode(model, ft, encoder="ft")
                elif input_mode == "ct":
                    enc = model_lib.encode(model, ct, encoder="ft", skip_sf=True)
                else:
                    raise InputError("an FT-only model cannot take joint input")
        elif model.kind == "dual":
            if input_mode == "ct":
                forced_q = (1.0, 0.0)
            elif input_mode == "ft":
                forced_q = (0.0, 1.0)
            ct_f = model_lib.ct_feature_matrix(model.cfg, ct)[:, None, :]
            spec_tm, t_len = data.ft_batch_spec(model.cfg, [ft])
            ft_f = model_lib.ft_feature_graph(model, spec_tm, t_len, 1)
            enc, q = model_lib.forward_dual(model, ct_f, ft_f, sel_mode=sel_mode,
                                            sel_unit=sel_unit, forced_q=forced_q)
            q_val = q.data
            q_row = tuple(float(v) for v in
                          (q_val.mean(axis=0)[0] if q_val.ndim == 3 else q_val[0]))
        else:
            raise InputError(f"unknown model kind {model.kind!r}")
        hyp = model_lib.decode_beam(model, enc, beam_size=beam_size)
    return UttResult(id=rec.id, role=rec.role, ref=tuple(rec.tokens),
                     hyp=tuple(hyp), edits=levenshtein(list(rec.tokens), hyp),
                     q=q_row)


_WORKER_CTX = {}


def _worker_init(model, base_dir, options):
    _WORKER_CTX["model"] = model
    _WORKER_CTX["base_dir"] = base_dir
    _WORKER_CTX["options"] = options


def _worker_decode(job):
    rec, shift = job
    opts = _WORKER_CTX["options"]
    return _decode_one(_WORKER_CTX["model"], rec, _WORKER_CTX["base_dir"],
                       shift=shift, **opts)


def evaluate(model, manifest_path, input_mode="ct", sel_mode="soft", sel_unit="utt",
             forced_q=None, beam_size=4, shift_max=0, seed=0, zero_ct=False,
             workers=1):
    """Decode every utterance of a manifest into an EvalReport.

    shift_max > 0 applies one uniform CT-vs-FT shift per utterance, drawn
    from `seed` (recorded in the report config). Evaluation never mutates
    model weights; any worker count gives identical results.
    """
    records = simulate.load_manifest(manifest_path)
    base_dir = simulate.manifest_dir(manifest_path)
    rng = np.random.default_rng(seed)
    shifts = [int(rng.integers(-shift_max, shift_max + 1)) if shift_max else 0
              for _ in records]
    options = dict(input_mode=input_mode, sel_mode=sel_mode, sel_unit=sel_unit,
                   forced_q=forced_q, beam_size=beam_size, zero_ct=zero_ct)
    jobs = list(zip(records, shifts))
    if workers > 1 and len(jobs) > 1:
        from multiprocessing import Pool

        with Pool(workers, initializer=_worker_init,
                  initargs=(model, base_dir, options)) as pool:
            rows = pool.map(_worker_decode, jobs, chunksize=8)
    else:
        rows = [_decode_one(model, rec, base_dir, shift=shift, **options)
                for rec, shift in jobs]
    report = EvalReport(config={
        "input_mode": input_mode, "sel_mode": sel_mode, "sel_unit": sel_unit,
        "forced_q": "" if forced_q is None else ",".join(str(v) for v in forced_q),
        "beam_size": str(beam_size), "shift_max": str(shift_max),
        "seed": str(seed), "zero_ct": str(zero_ct), "model_kind": model.kind,
    })
    for row in rows:
        report.add(row)
    return report


def oracle_role_combination(report_ct, report_ft):
    """Role-oracle WER: CT rows for the doctor, FT rows for the others."""
    by_id = {r.id: r for r in report_ft.rows}
    combined = EvalReport(config={"oracle": "role"})
    for row in report_ct.rows:
        combined.add(row if row.role == "doctor" else by_id[row.id])
    return combined


# ---------------------------------------------------------------------------
# sweeps and histograms
# ---------------------------------------------------------------------------

def sweep_shift(model, manifest_path, max_shifts, seed=0, sel_mode="soft",
                sel_unit="utt", beam_size=4, workers=1):
    """(shift, WER) pairs for a list of maximum CT-vs-FT shifts."""
    curve = []
    for s in max_shifts:
        report = evaluate(model, manifest_path, input_mode="ct+ft",
                          sel_mode=sel_mode, sel_unit=sel_unit, beam_size=beam_size,
                          shift_max=int(s), seed=seed, workers=workers)
        curve.append((int(s), report.wer))
    return curve


def selector_histogram(report, n_bins=20):
    """Per-role histogram of the CT selection probability q1 on [0, 1]."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts = {role: np.zeros(n_bins, dtype=int) for role in ROLES}
    for row in report.rows:
        if not row.q:
            continue
        q1 = min(max(row.q[0], 0.0), 1.0)
        idx = min(int(q1 * n_bins), n_bins - 1)
        counts[row.role][idx] += 1
    return edges, counts


def mean_q1_by_role(report):
    out = {}
    for role in ROLES:
        vals = [row.q[0] for row in report.rows if row.role == role and row.q]
        out[role] = float(np.mean(vals)) if vals else float("nan")
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\trole\tref\thyp\tedits\tref_len\tq1\tq2\n")
        for r in report.rows:
            q1 = f"{r.q[0]:.6f}" if r.q else ""
            q2 = f"{r.q[1]:.6f}" if len(r.q) > 1 else ""
            fh.write(f"{r.id}\t{r.role}\t{' '.join(map(str, r.ref))}\t"
                     f"{' '.join(map(str, r.hyp))}\t{r.edits}\t{len(r.ref)}\t{q1}\t{q2}\n")


def write_summary(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric\tvalue\n")
        for key, value in report.summary().items():
            fh.write(f"wer_{key}\t{value:.6f}\n")
        for key in sorted(report.config):
            fh.write(f"config_{key}\t{report.config[key]}\n")


def write_sweep_csv(path, curve):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("shift,wer\n")
        for shift, value in curve:
            fh.write(f"{shift},{value:.6f}\n")


def write_histogram_csv(path, edges, counts):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("role,bin_lo,bin_hi,count\n")
        for role, vals in counts.items():
            for i, count in enumerate(vals):
                fh.write(f"{role},{edges[i]:.3f},{edges[i + 1]:.3f},{count}\n")


def write_selector_csv(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,role,q1\n")
        for r in report.rows:
            if r.q:
                fh.write(f"{r.id},{r.role},{r.q[0]:.6f}\n")


def load_report(path):
    report = EvalReport()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("id\t"):
            raise ManifestError(f"{path}: not a report file")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ref = tuple(int(t) for t in parts[2].split()) if parts[2] else ()
            hyp = tuple(int(t) for t in parts[3].split()) if parts[3] else ()
            q = tuple(float(v) for v in parts[6:8] if v)
            report.add(UttResult(id=parts[0], role=parts[1], ref=ref, hyp=hyp,
                                 edits=int(parts[4]), q=q))
    return report
