#!/usr/bin/env python3
"""Score the default tracker on a natural-speech corpus with hand-corrected formant tracks.

Expected layout of ROOT (searched recursively):

    <name>.wav   speech, any sample rate (resampled to 8 kHz)
    <name>.csv   reference track in the package CSV format (time_s,f1_hz,b1_hz,...)
    <name>.tsv   optional labels (start_s, end_s, category), tab separated

References distributed in other formats must be converted to the CSV first.
Tracks are produced with the default TVQCP-L1 configuration and estimated
GCIs; FDR/FEE are reported for F1-F3, restricted to ``--categories`` when
labels exist. The detection thresholds are a tuning knob, so the printed
band check is informative only.

Usage:
    python3 scripts/vtr_calibration.py ROOT [--tau-r 0.15 --tau-a 300] [--out summary.csv]
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from tvqcp.metrics import EvalThresholds, evaluate, format_table, summarize, write_summary_csv
from tvqcp.signal_io import load_waveform, preemphasize, read_labels, read_track_csv, resample
from tvqcp.tracker import track_formants

# FEE (Hz) of TVQCP-L1 with p=8, q=3 and 100 ms windows on the VTR test set
EXPECTED_FEE = np.array([67.6, 91.7, 123.9])
BAND = 0.15

logger = logging.getLogger("vtr_calibration")


def pairs(root):
    for wav in sorted(Path(root).rglob("*.wav")):
        ref = wav.with_suffix(".csv")
        if not ref.exists():
            logger.warning("no reference track for %s", wav)
            continue
        lab = wav.with_suffix(".tsv")
        yield wav, ref, lab if lab.exists() else None


def run(root, thresholds, categories, fs=8000):
    reports = []
    for wav, ref_path, lab_path in pairs(root):
        w = load_waveform(wav)
        if w.sample_rate_hz != fs:
            w = resample(w, fs)
        hyp = track_formants(preemphasize(w))
        labels = read_labels(lab_path) if lab_path else None
        try:
            rep = evaluate(hyp, read_track_csv(ref_path), thresholds, labels, categories, n_formants=3)
        except ValueError as exc:
            logger.warning("skipping %s: %s", wav.name, exc)
            continue
        reports.append(rep)
        logger.info("%s: FEE %s", wav.name, np.round(rep.fee, 1))
    return reports


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root")
    ap.add_argument("--tau-r", type=float, default=0.15)
    ap.add_argument("--tau-a", type=float, default=300.0)
    ap.add_argument("--categories", default="vowel,diphthong,semivowel")
    ap.add_argument("--out")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cats = {c.strip() for c in args.categories.split(",") if c.strip()}
    reports = run(args.root, EvalThresholds(args.tau_r, args.tau_a), cats)
    if not reports:
        print(f"no usable utterances under {args.root}", file=sys.stderr)
        return 1
    summary = summarize({"tvqcp-l1": reports})
    print(format_table(summary))
    if args.out:
        write_summary_csv(args.out, summary)
    fee = summary["tvqcp-l1"][1]
    inside = np.abs(fee - EXPECTED_FEE) <= BAND * EXPECTED_FEE
    print(
        f"{len(reports)} utterances, tau_r={args.tau_r:g} tau_a={args.tau_a:g}; FEE "
        + "/".join(f"{v:.1f}" for v in fee)
        + " Hz vs expected "
        + "/".join(f"{v:.1f}" for v in EXPECTED_FEE)
        + f" (+-{BAND:.0%}): "
        + ("inside band" if inside.all() else "outside band")
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
