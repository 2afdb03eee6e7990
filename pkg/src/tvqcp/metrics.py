"""Formant detection rate (FDR) and formant estimation error (FEE).

A hypothesized formant counts as detected in a frame when its absolute
deviation from the reference is below both a relative threshold
(``tau_r`` times the reference frequency) and an absolute one (``tau_a`` Hz).
FEE is the mean absolute deviation over frames where the hypothesis is present.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .signal_io import _atomic_write


@dataclass(frozen=True)
class EvalThresholds:
    # Defaults are a working choice, not values taken from any published table.
    tau_r: float = 0.15
    tau_a: float = 300.0

    def __post_init__(self):
        if not (self.tau_r > 0 and self.tau_a > 0):
            raise ValueError("both thresholds must be positive")


@dataclass(frozen=True)
class AlignedFrames:
    """Matched hypothesis/reference frequencies, shape (K, M), NaN where missing."""

    times: np.ndarray
    hyp: np.ndarray
    ref: np.ndarray
    categories: np.ndarray

    def __len__(self):
        return self.times.shape[0]

    def subset(self, mask):
        return AlignedFrames(self.times[mask], self.hyp[mask], self.ref[mask], self.categories[mask])


@dataclass
class EvalReport:
    fdr: np.ndarray
    fee: np.ndarray
    n_frames: int
    thresholds: EvalThresholds
    by_category: dict = field(default_factory=dict)

    def rows(self):
        """(scope, formant, fdr, fee, frames) rows, overall first."""
        out = [("all", i + 1, self.fdr[i], self.fee[i], self.n_frames) for i in range(self.fdr.size)]
        for cat, rep in sorted(self.by_category.items()):
            out += [(cat, i + 1, rep.fdr[i], rep.fee[i], rep.n_frames) for i in range(rep.fdr.size)]
        return out


def _hop(track):
    h = track.hop_s
    return h if np.isfinite(h) else 0.0


def _label_categories(times, labels):
    cats = np.full(times.shape, "", dtype=object)
    for lab in labels:
        inside = (times >= lab.start_s) & (times < lab.end_s) & (cats == "")
        cats[inside] = lab.category
    return cats


def align_tracks(hyp, ref, labels=None, categories=None, n_formants=None):
    """Pair every reference frame with the nearest hypothesis frame.

    Pairs further apart than half the coarser hop are dropped. With
    ``labels``, only frames inside a label (restricted to ``categories`` when
    given) are kept.
    """
    m = n_formants or min(hyp.n_formants, ref.n_formants)
    tol = 0.5 * max(_hop(hyp), _hop(ref)) + 1e-9
    if len(hyp) == 0 or len(ref) == 0:
        raise ValueError("cannot align an empty track")
    idx = np.clip(np.searchsorted(hyp.times, ref.times), 1, max(len(hyp) - 1, 1))
    if len(hyp) == 1:
        nearest = np.zeros(len(ref), dtype=int)
    else:
        left, right = hyp.times[idx - 1], hyp.times[idx]
        nearest = np.where(np.abs(ref.times - left) <= np.abs(right - ref.times), idx - 1, idx)
    keep = np.abs(hyp.times[nearest] - ref.times) <= tol
    if labels is not None:
        cats = _label_categories(ref.times, labels)
        keep &= cats != ""
        if categories:
            keep &= np.isin(cats, list(categories))
    else:
        cats = np.full(ref.times.shape, "", dtype=object)
    if not keep.any():
        raise ValueError("hypothesis and reference tracks do not overlap")
    return AlignedFrames(
        ref.times[keep],
        hyp.frequencies(m)[nearest[keep]],
        ref.frequencies(m)[keep],
        cats[keep],
    )


def _check(aligned, i):
    if len(aligned) == 0:
        raise ValueError("no aligned frames")
    if not 0 <= i < aligned.ref.shape[1]:
        raise IndexError(f"formant index {i} out of range")


def fdr(aligned, thresholds=EvalThresholds(), i=0):
    """Detection rate of formant ``i`` (0-based) in percent.

    Frames without a reference value are not counted; frames without a
    hypothesis count as misses.
    """
    _check(aligned, i)
    ref = aligned.ref[:, i]
    has_ref = np.isfinite(ref)
    k = int(has_ref.sum())
    if k == 0:
        raise ValueError("no reference values for this formant")
    dev = np.abs(aligned.hyp[has_ref, i] - ref[has_ref])
    with np.errstate(invalid="ignore"):
        hit = (dev < thresholds.tau_r * ref[has_ref]) & (dev < thresholds.tau_a)
    return 100.0 * hit.sum() / k


def fee(aligned, i=0):
    """Mean absolute deviation (Hz) of formant ``i`` where both tracks have it."""
    _check(aligned, i)
    both = np.isfinite(aligned.ref[:, i]) & np.isfinite(aligned.hyp[:, i])
    if not both.any():
        raise ValueError("no frames with both hypothesis and reference")
    return float(np.mean(np.abs(aligned.ref[both, i] - aligned.hyp[both, i])))


def _scores(aligned, thresholds):
    m = aligned.ref.shape[1]
    d = np.full(m, np.nan)
    r = np.full(m, np.nan)
    for i in range(m):
        try:
            d[i] = fdr(aligned, thresholds, i)
            r[i] = fee(aligned, i)
        except ValueError:
            pass
    return d, r


def evaluate(hyp, ref, thresholds=EvalThresholds(), labels=None, categories=None, n_formants=None):
    aligned = align_tracks(hyp, ref, labels, categories, n_formants)
    d, r = _scores(aligned, thresholds)
    report = EvalReport(d, r, len(aligned), thresholds)
    if labels is not None:
        for cat in sorted(set(aligned.categories)):
            sub = aligned.subset(aligned.categories == cat)
            cd, cr = _scores(sub, thresholds)
            report.by_category[cat] = EvalReport(cd, cr, len(sub), thresholds)
    return report


def summarize(reports):
    """Average FDR and FEE per condition.

    ``reports`` maps a condition name to a list of per-utterance reports.
    Returns ``{condition: (fdr, fee)}`` with per-formant means.
    """
    out = {}
    for cond, reps in reports.items():
        reps = list(reps)
        if not reps:
            continue
        out[cond] = (
            np.nanmean([r.fdr for r in reps], axis=0),
            np.nanmean([r.fee for r in reps], axis=0),
        )
    return out


def format_table(summary, digits=1):
    """Plain-text table with one row per condition."""
    if not summary:
        return ""
    m = len(next(iter(summary.values()))[0])
    head = ["condition"] + [f"FDR{i + 1}" for i in range(m)] + [f"FEE{i + 1}" for i in range(m)]
    rows = [head]
    for cond, (d, r) in summary.items():
        rows.append([cond] + [f"{v:.{digits}f}" for v in d] + [f"{v:.{digits}f}" for v in r])
    widths = [max(len(row[j]) for row in rows) for j in range(len(head))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in rows)


def write_summary_csv(path, summary):
    buf = io.StringIO()
    wr = csv.writer(buf)
    m = len(next(iter(summary.values()))[0]) if summary else 0
    wr.writerow(["condition"] + [f"fdr{i + 1}" for i in range(m)] + [f"fee{i + 1}_hz" for i in range(m)])
    for cond, (d, r) in summary.items():
        wr.writerow([cond] + [f"{v:.4f}" for v in d] + [f"{v:.4f}" for v in r])
    _atomic_write(path, lambda fh: fh.write(buf.getvalue()), mode="w")


def write_report_csv(path, report):
    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow(["scope", "formant", "fdr_percent", "fee_hz", "frames", "tau_r", "tau_a_hz"])
    for scope, i, d, r, k in report.rows():
        wr.writerow([scope, i, f"{d:.4f}", f"{r:.4f}", k, report.thresholds.tau_r, report.thresholds.tau_a])
    _atomic_write(path, lambda fh: fh.write(buf.getvalue()), mode="w")
