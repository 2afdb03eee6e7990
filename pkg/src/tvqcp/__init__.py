"""Formant tracking with time-varying, quasi-closed-phase weighted linear prediction."""

from .excitation import (
    GciSequence,
    QcpParams,
    SteParams,
    estimate_gci,
    perturb_gcis,
    qcp_weight_signal,
    qcp_weights,
    read_gci_file,
    residual_weights,
    ste_weights,
)
from .metrics import EvalReport, EvalThresholds, align_tracks, evaluate, fdr, fee, summarize
from .predictors import (
    ConvergenceError,
    FitResult,
    PredictorConfig,
    SingularDesignError,
    TimeVaryingLP,
    TvModel,
    build_design,
    design_from_arrays,
    fit,
    solve_l1,
    solve_l2,
)
from .signal_io import (
    AnalysisWindow,
    Waveform,
    frame_windows,
    load_waveform,
    preemphasize,
    resample,
    save_waveform,
)
from .synthlab import LfParams, VowelSpec, lf_pulse, make_corpus, synthesize_vowel
from .tracker import FormantTrack, FormantTracker, pick_formants, spectrum_at, track_formants

__version__ = "0.1.0"

__all__ = [
    "AnalysisWindow",
    "ConvergenceError",
    "EvalReport",
    "EvalThresholds",
    "FitResult",
    "FormantTrack",
    "FormantTracker",
    "GciSequence",
    "LfParams",
    "PredictorConfig",
    "QcpParams",
    "SingularDesignError",
    "SteParams",
    "TimeVaryingLP",
    "TvModel",
    "VowelSpec",
    "Waveform",
    "align_tracks",
    "build_design",
    "design_from_arrays",
    "estimate_gci",
    "evaluate",
    "fdr",
    "fee",
    "fit",
    "frame_windows",
    "lf_pulse",
    "load_waveform",
    "make_corpus",
    "perturb_gcis",
    "pick_formants",
    "preemphasize",
    "qcp_weight_signal",
    "qcp_weights",
    "read_gci_file",
    "resample",
    "residual_weights",
    "save_waveform",
    "solve_l1",
    "solve_l2",
    "spectrum_at",
    "ste_weights",
    "summarize",
    "synthesize_vowel",
    "track_formants",
]
