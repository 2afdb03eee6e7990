"""``ftrack`` command line front end.

Subcommands: ``track``, ``synth``, ``eval`` and ``noise``. Values come from
command-line flags, then from an optional ``--config`` file of ``key=value``
lines, then from the built-in defaults. Exit status is 0 on success, 2 on
usage errors and 1 on runtime errors.
"""

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .excitation import QcpParams, SteParams, read_gci_file
from .metrics import EvalThresholds, evaluate, write_report_csv
from .predictors import PredictorConfig
from .signal_io import (
    _atomic_write,
    load_waveform,
    preemphasize,
    read_labels,
    read_track_csv,
    resample,
    save_waveform,
    write_gci_file,
    write_track_csv,
)
from .synthlab import PHONATIONS, load_presets, make_corpus, mix_noise_at_snr, white_noise
from .tracker import track_formants

logger = logging.getLogger("tvqcp")

METHODS = [f"{m}-{n}" for m in ("lp", "wlp", "tvlp", "tvqcp") for n in ("l1", "l2")]
WEIGHTINGS = ("none", "ste", "residual", "qcp")
# default weighting and whether the model is time-varying, per method family
_FAMILY = {"lp": ("none", False), "wlp": ("ste", False), "tvlp": ("none", True), "tvqcp": ("qcp", True)}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    method: str = "tvqcp-l1"
    order: int = 8
    poly: int = 3
    weighting: str = None
    window_ms: float = 100.0
    shift_ms: float = 10.0
    fs: int = 8000
    alpha: float = 0.97
    pq: float = 0.05
    dq: float = 0.8
    nramp: int = 3
    dw: float = 1e-5
    ste_delay: int = 0
    ste_length: int = 12
    max_formants: int = 4

    @classmethod
    def from_args(cls, ns):
        return cls(**{k: getattr(ns, k) for k in cls.__dataclass_fields__})

    def predictor(self):
        family, norm = self.method.split("-")
        weighting, varying = _FAMILY[family]
        return PredictorConfig(
            order=self.order,
            poly_order=self.poly if varying else 0,
            norm=int(norm[1]),
            weighting=self.weighting or weighting,
        )

    def qcp(self):
        return QcpParams(self.pq, self.dq, self.nramp, self.dw)

    def ste(self):
        return SteParams(self.ste_delay, self.ste_length)


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _csv_floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _csv_words(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt():
    return argparse.ArgumentDefaultsHelpFormatter


def build_parser():
    p = _Parser(prog="ftrack", description="Time-varying weighted LP formant tracking.", formatter_class=_fmt())
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common.add_argument("--config", help="key=value file; flags override it")

    t = sub.add_parser("track", help="track formants of a WAV file", formatter_class=_fmt(), parents=[common])
    t.add_argument("--input", required=True, help="input WAV file")
    t.add_argument("--out", required=True, help="output track CSV")
    t.add_argument("--gci", help="GCI file (seconds, one per line); estimated when omitted")
    t.add_argument("--method", choices=METHODS, default="tvqcp-l1", help="model family and norm")
    t.add_argument("--weighting", choices=WEIGHTINGS, default=None,
                   help="error weighting; default follows --method (lp/tvlp: none, wlp: ste, tvqcp: qcp)")
    t.add_argument("--order", type=int, default=8, help="prediction order p")
    t.add_argument("--poly", type=int, default=3, help="polynomial order q (ignored by lp/wlp)")
    t.add_argument("--window-ms", type=float, default=100.0, help="analysis window length")
    t.add_argument("--shift-ms", type=float, default=10.0, help="frame shift")
    t.add_argument("--fs", type=int, default=8000, help="analysis sample rate (Hz)")
    t.add_argument("--alpha", type=float, default=0.97, help="pre-emphasis coefficient")
    t.add_argument("--pq", type=float, default=0.05, help="QCP position quotient")
    t.add_argument("--dq", type=float, default=0.8, help="QCP duration quotient")
    t.add_argument("--nramp", type=int, default=3, help="QCP ramp length (samples)")
    t.add_argument("--dw", type=float, default=1e-5, help="QCP weight floor")
    t.add_argument("--ste-delay", type=int, default=0, help="STE lookback delay (samples)")
    t.add_argument("--ste-length", type=int, default=12, help="STE window length (samples)")
    t.add_argument("--max-formants", type=int, default=4, help="formants per frame")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("synth", help="generate an LF-synthetic vowel corpus", formatter_class=_fmt(), parents=[common])
    s.add_argument("--out-dir", required=True, help="output directory")
    s.add_argument("--phonations", type=_csv_words, default=PHONATIONS, help="comma-separated presets")
    s.add_argument("--f0-factors", type=_csv_floats, default=(1.0, 1.5, 2.0, 2.5), help="comma-separated F0 scale factors")
    s.add_argument("--utterances", type=int, default=8, help="number of utterances")
    s.add_argument("--duration", type=float, default=1.0, help="utterance length (s)")
    s.add_argument("--f0-mean", type=float, default=120.0, help="mean F0 before scaling (Hz)")
    s.add_argument("--fs", type=int, default=8000, help="sample rate (Hz)")
    s.add_argument("--presets", help="phonation preset JSON (bundled presets when omitted)")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score a track against a reference", formatter_class=_fmt(), parents=[common])
    e.add_argument("--hyp", required=True, help="hypothesis track CSV")
    e.add_argument("--ref", required=True, help="reference track CSV")
    e.add_argument("--labels", help="label file (start<TAB>end<TAB>category)")
    e.add_argument("--categories", type=_csv_words, default=None,
                   help="comma-separated categories to keep (all labelled frames when omitted)")
    e.add_argument("--formants", type=int, default=3, help="number of formants scored")
    e.add_argument("--tau-r", type=float, default=0.15, help="relative detection threshold")
    e.add_argument("--tau-a", type=float, default=300.0, help="absolute detection threshold (Hz)")
    e.add_argument("--out", help="optional report CSV")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("noise", help="add noise at a given SNR", formatter_class=_fmt(), parents=[common])
    n.add_argument("--input", required=True, help="clean WAV file")
    n.add_argument("--out", required=True, help="noisy WAV file")
    n.add_argument("--type", choices=("white", "file"), default="white", help="noise source")
    n.add_argument("--noise-file", help="noise WAV (required for --type file)")
    n.add_argument("--snr-db", type=float, default=10.0, help="target SNR (dB)")
    n.add_argument("--seed", type=int, default=0, help="random seed for white noise")
    n.set_defaults(func=cmd_noise)
    return p


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    parser = build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        sub = _subparser(parser, ns.command)
        known = {a.dest: a for a in sub._actions}
        values = {}
        for key, raw in read_config_file(ns.config).items():
            if key not in known or key in ("help", "config", "func"):
                raise UsageError(f"{ns.config}: unknown key {key!r} for '{ns.command}'")
            action = known[key]
            try:
                value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{ns.config}: bad value for {key}: {exc}") from exc
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"{ns.config}: {key} must be one of {sorted(action.choices)}")
            values[key] = value
        sub.set_defaults(**values)
        for action in sub._actions:
            if action.dest in values:
                action.required = False
        ns = parser.parse_args(argv)
    return ns


# ------------------------------------------------------------- subcommands

def _load(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    return load_waveform(path)


def cmd_track(ns):
    rc = RunConfig.from_args(ns)
    cfg = rc.predictor()
    w = _load(ns.input)
    if w.sample_rate_hz != rc.fs:
        w = resample(w, rc.fs)
    gcis = None
    if cfg.weighting == "qcp" and ns.gci:
        if not os.path.exists(ns.gci):
            raise FileNotFoundError(f"GCI file not found: {ns.gci}")
        gcis = read_gci_file(ns.gci, rc.fs, len(w))
    w = preemphasize(w, rc.alpha)
    track = track_formants(
        w, cfg, rc.window_ms, rc.shift_ms, gcis, rc.qcp(), rc.ste(), rc.max_formants
    )
    write_track_csv(ns.out, track, n_formants=rc.max_formants)
    logger.info("wrote %d frames to %s", len(track), ns.out)
    return 0


def _cell_name(item):
    return f"{item.name}_{item.phonation}_f{item.f0_factor:.2f}"


def cmd_synth(ns):
    presets = load_presets(ns.presets)
    unknown = [ph for ph in ns.phonations if ph not in presets]
    if unknown:
        raise UsageError(f"unknown phonation preset(s): {', '.join(unknown)}; available: {', '.join(sorted(presets))}")
    if ns.utterances < 1:
        raise UsageError("--utterances must be >= 1")
    os.makedirs(ns.out_dir, exist_ok=True)
    corpus = make_corpus(
        ns.utterances, tuple(ns.phonations), tuple(ns.f0_factors), ns.duration, ns.fs,
        ns.f0_mean, ns.seed, presets,
    )
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["cell", "utterance", "phonation", "f0_factor", "wav", "truth", "gci"])
    for item in corpus:
        base = _cell_name(item)
        syn = item.synthesis
        save_waveform(os.path.join(ns.out_dir, base + ".wav"), syn.waveform)
        write_track_csv(os.path.join(ns.out_dir, base + ".csv"), syn.truth)
        write_gci_file(os.path.join(ns.out_dir, base + ".gci"), syn.epochs.times_s)
        wr.writerow([base, item.name, item.phonation, item.f0_factor, base + ".wav", base + ".csv", base + ".gci"])
        logger.info("synthesized %s", base)
    _atomic_write(os.path.join(ns.out_dir, "manifest.csv"), lambda fh: fh.write(buf.getvalue()), mode="w")
    print(f"wrote {len(corpus)} cells to {ns.out_dir}")
    return 0


def cmd_eval(ns):
    for path in (ns.hyp, ns.ref, ns.labels):
        if path and not os.path.exists(path):
            raise FileNotFoundError(f"input file not found: {path}")
    try:
        thresholds = EvalThresholds(ns.tau_r, ns.tau_a)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    hyp = read_track_csv(ns.hyp)
    ref = read_track_csv(ns.ref)
    labels = read_labels(ns.labels) if ns.labels else None
    report = evaluate(hyp, ref, thresholds, labels, ns.categories, ns.formants)
    print(f"frames={report.n_frames} tau_r={thresholds.tau_r:g} tau_a={thresholds.tau_a:g} Hz")
    print(f"{'scope':<12}{'formant':>8}{'FDR %':>9}{'FEE Hz':>9}{'frames':>8}")
    for scope, i, d, r, k in report.rows():
        print(f"{scope:<12}{'F%d' % i:>8}{d:>9.1f}{r:>9.1f}{k:>8d}")
    if ns.out:
        write_report_csv(ns.out, report)
    return 0


def cmd_noise(ns):
    clean = _load(ns.input)
    if ns.type == "file":
        if not ns.noise_file:
            raise UsageError("--noise-file is required with --type file")
        noise = _load(ns.noise_file)
        if noise.sample_rate_hz != clean.sample_rate_hz:
            noise = resample(noise, clean.sample_rate_hz)
    else:
        noise = white_noise(len(clean), clean.sample_rate_hz, ns.seed)
    noisy = mix_noise_at_snr(clean, noise, ns.snr_db)
    save_waveform(ns.out, noisy, encoding="float32")
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return ns.func(ns)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
