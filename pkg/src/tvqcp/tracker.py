"""Single-stage formant tracking from time-varying all-pole models.

Each analysis window gets one time-varying predictor; formants are read from
the instantaneous model spectrum ``|1 / A(e^jw; n)|^2`` at every frame
instant inside the window. There is no inter-window smoothing: continuity
comes from the polynomial coefficient trajectories alone.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .excitation import (
    QcpParams,
    SteParams,
    estimate_gci,
    qcp_weight_signal,
    residual_weights,
    ste_weights,
)
from .predictors import PredictorConfig, eval_coeffs, fit
from .signal_io import Waveform, frame_windows

logger = logging.getLogger(__name__)

EDGE_HZ = 50.0
MAX_ROOT_BANDWIDTH_HZ = 700.0
DEDUP_HZ = 50.0


@dataclass(frozen=True)
class FormantFrame:
    time_s: float
    formants: tuple
    window: int = -1


class FormantTrack:
    """Time-ordered formant estimates stored as (K, M) arrays, NaN where missing."""

    def __init__(self, times, frequencies, bandwidths=None, sample_rate_hz=8000, config=None, windows=None):
        self.times = np.asarray(times, dtype=float)
        f = np.asarray(frequencies, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        self._freqs = f.reshape(self.times.shape[0], -1)
        if bandwidths is None:
            bandwidths = np.full_like(self._freqs, np.nan)
        self._bws = np.asarray(bandwidths, dtype=float).reshape(self._freqs.shape)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("frame times must be strictly increasing")
        self.sample_rate_hz = sample_rate_hz
        self.config = dict(config or {})
        self.windows = (
            np.full(self.times.shape, -1, dtype=int) if windows is None else np.asarray(windows, dtype=int)
        )

    def __len__(self):
        return self.times.shape[0]

    def __repr__(self):
        return f"FormantTrack({len(self)} frames, {self._freqs.shape[1]} formant slots)"

    @property
    def n_formants(self):
        return self._freqs.shape[1]

    def _pad(self, arr, n):
        if n is None:
            return arr.copy()
        out = np.full((arr.shape[0], n), np.nan)
        m = min(n, arr.shape[1])
        out[:, :m] = arr[:, :m]
        return out

    def frequencies(self, n=None):
        return self._pad(self._freqs, n)

    def bandwidths(self, n=None):
        return self._pad(self._bws, n)

    @property
    def frames(self):
        out = []
        for t, f_row, b_row, win in zip(self.times, self._freqs, self._bws, self.windows):
            keep = np.isfinite(f_row)
            out.append(FormantFrame(float(t), tuple(zip(f_row[keep], b_row[keep])), int(win)))
        return out

    @property
    def hop_s(self):
        return float(np.median(np.diff(self.times))) if len(self) > 1 else np.nan


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Power spectrum on a uniform grid over ``[0, fs/2]``."""

    power: np.ndarray
    sample_rate_hz: int
    coeffs: np.ndarray = field(default=None)

    @property
    def freqs_hz(self):
        return np.linspace(0.0, self.sample_rate_hz / 2.0, self.power.shape[-1])


def _grid_basis(order, grid_size):
    omega = np.linspace(0.0, np.pi, grid_size)
    return np.exp(-1j * np.outer(np.arange(order + 1), omega))


def spectra_from_coeffs(inverse_filters, fs, grid_size=1024):
    """Power spectra for a stack of inverse filters ``[1, a_1, ..., a_p]``, shape (F, grid)."""
    A = np.atleast_2d(inverse_filters) @ _grid_basis(np.atleast_2d(inverse_filters).shape[1] - 1, grid_size)
    return 1.0 / np.maximum(np.abs(A) ** 2, 1e-300)


def spectrum_at(model, n, fs, grid_size=1024):
    """Instantaneous model spectrum at in-window sample ``n``."""
    a = np.concatenate([[1.0], eval_coeffs(model, n)])
    return Spectrum(spectra_from_coeffs(a, fs, grid_size)[0], fs, a)


def root_formants(coeffs, fs, max_bandwidth=MAX_ROOT_BANDWIDTH_HZ):
    """(frequency, bandwidth) pairs of the upper-half-plane roots of ``A(z)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size < 3 or not np.all(np.isfinite(coeffs)):
        return []
    roots = np.roots(coeffs)
    roots = roots[np.imag(roots) > 0]
    out = []
    for r in roots:
        mag = abs(r)
        if mag <= 0:
            continue
        f = np.angle(r) * fs / (2 * np.pi)
        bw = -fs / np.pi * np.log(mag)
        if EDGE_HZ < f < fs / 2 - EDGE_HZ and 0 < bw < max_bandwidth:
            out.append((float(f), float(bw)))
    return sorted(out)


def _nearest_root_bandwidth(freq, roots, tol_hz):
    if not roots:
        return None
    dist = [abs(f - freq) for f, _ in roots]
    i = int(np.argmin(dist))
    return roots[i][1] if dist[i] <= tol_hz else None


def pick_formants(spectrum, fs=None, max_formants=4, coeffs=None):
    """Ascending (frequency, bandwidth) pairs from spectral peaks.

    Peaks inside (50 Hz, fs/2 - 50 Hz) are refined by a parabola through the
    log power of the peak bin and its neighbours. When fewer than
    ``max_formants`` peaks exist and the inverse filter is known, roots of
    ``A(z)`` with bandwidth under 700 Hz fill the gaps (merged peaks).
    """
    if isinstance(spectrum, Spectrum):
        fs = spectrum.sample_rate_hz if fs is None else fs
        coeffs = spectrum.coeffs if coeffs is None else coeffs
        power = spectrum.power
    else:
        power = np.asarray(spectrum, dtype=float)
    if fs is None:
        raise ValueError("sample rate required")
    n = power.shape[0]
    df = fs / 2.0 / (n - 1)
    db = 10 * np.log10(np.maximum(power, 1e-300))
    mid = db[1:-1]
    is_peak = (mid > db[:-2]) & (mid >= db[2:])
    idx = np.flatnonzero(is_peak) + 1
    roots = root_formants(coeffs, fs) if coeffs is not None else []

    found = []
    for i in idx:
        l, c, r = db[i - 1], db[i], db[i + 1]
        curv = l - 2 * c + r
        if curv >= 0:
            continue
        delta = 0.5 * (l - r) / curv
        freq = (i + delta) * df
        if not EDGE_HZ < freq < fs / 2 - EDGE_HZ:
            continue
        bw = _nearest_root_bandwidth(freq, roots, tol_hz=max(2 * df, DEDUP_HZ))
        if bw is None:
            # -3 dB half-width of the fitted parabola
            a = -curv / 2.0
            bw = 2 * np.sqrt(10 * np.log10(2) / a) * df
        found.append((float(freq), float(bw)))

    if len(found) < max_formants and roots:
        for f, b in roots:
            if all(abs(f - g) > DEDUP_HZ for g, _ in found):
                found.append((f, b))
    found.sort()
    return found[:max_formants]


def _window_weights(window, kind, qcp_full, ste, lp_order, floor):
    if kind == "none":
        return None
    if kind == "ste":
        return ste_weights(window, ste)
    if kind == "residual":
        return residual_weights(window, lp_order, ste, floor)
    if kind == "qcp":
        return qcp_full[window.start_sample: window.stop_sample]
    raise ValueError(f"unknown weighting {kind!r}")


def track_formants(
    w,
    cfg=PredictorConfig(),
    window_ms=100.0,
    shift_ms=10.0,
    gcis=None,
    qcp=QcpParams(),
    ste=SteParams(),
    max_formants=4,
    grid_size=1024,
):
    """Formant track of a conditioned (resampled, pre-emphasized) waveform.

    For QCP weighting, GCIs are estimated from ``w`` unless given.
    """
    fs = w.sample_rate_hz
    windows = frame_windows(w, window_ms, shift_ms)
    qcp_full = None
    if cfg.weighting == "qcp":
        if gcis is None:
            gcis = estimate_gci(w)
        qcp_full = qcp_weight_signal(len(w), gcis, qcp)

    basis = _grid_basis(cfg.order, grid_size)
    times, freqs, bws, win_ids = [], [], [], []
    for wi, win in enumerate(windows):
        frames = win.frame_samples
        if frames.size == 0:
            continue
        model = None
        try:
            weights = _window_weights(win, cfg.weighting, qcp_full, ste, cfg.order, qcp.floor)
            model = fit(win, weights, cfg).model
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("window %d (%.3f s): fit failed: %s", wi, win.start_sample / fs, exc)
        if model is not None:
            A = np.column_stack([np.ones(frames.size), eval_coeffs_many(model, frames - win.start_sample)])
            power = 1.0 / np.maximum(np.abs(A @ basis) ** 2, 1e-300)
        for j, n in enumerate(frames):
            row_f = np.full(max_formants, np.nan)
            row_b = np.full(max_formants, np.nan)
            if model is not None:
                picked = pick_formants(power[j], fs, max_formants, coeffs=A[j])
                for k, (f, b) in enumerate(picked):
                    row_f[k], row_b[k] = f, b
            times.append(n / fs)
            freqs.append(row_f)
            bws.append(row_b)
            win_ids.append(wi)

    config = {
        "order": cfg.order,
        "poly_order": cfg.poly_order,
        "norm": cfg.norm,
        "weighting": cfg.weighting,
        "window_ms": window_ms,
        "shift_ms": shift_ms,
    }
    return FormantTrack(
        np.asarray(times),
        np.asarray(freqs).reshape(-1, max_formants),
        np.asarray(bws).reshape(-1, max_formants),
        fs,
        config,
        win_ids,
    )


def eval_coeffs_many(model, ns):
    """Coefficient vectors at several in-window samples, shape (len(ns), p)."""
    t = model.time(np.asarray(ns))
    powers = t[:, None] ** np.arange(model.poly_order + 1)[None, :]
    return powers @ model.coef.T


class FormantTracker(TransformerMixin, BaseEstimator):
    """Estimator-style front end to :func:`track_formants`.

    The tracker is stateless: ``fit`` only validates the parameters, and
    ``transform`` maps a conditioned :class:`~tvqcp.signal_io.Waveform` (or a
    sample array together with ``sample_rate_hz``) to a :class:`FormantTrack`.
    Defaults are the TVQCP-L1 configuration for 8 kHz speech.
    """

    def __init__(
        self,
        order=8,
        poly_order=3,
        norm=1,
        weighting="qcp",
        window_ms=100.0,
        shift_ms=10.0,
        max_formants=4,
        position_quotient=0.05,
        duration_quotient=0.8,
        ramp_samples=3,
        floor=1e-5,
        ste_delay=0,
        ste_length=12,
        grid_size=1024,
    ):
        self.order = order
        self.poly_order = poly_order
        self.norm = norm
        self.weighting = weighting
        self.window_ms = window_ms
        self.shift_ms = shift_ms
        self.max_formants = max_formants
        self.position_quotient = position_quotient
        self.duration_quotient = duration_quotient
        self.ramp_samples = ramp_samples
        self.floor = floor
        self.ste_delay = ste_delay
        self.ste_length = ste_length
        self.grid_size = grid_size

    def _configs(self):
        cfg = PredictorConfig(self.order, self.poly_order, self.norm, self.weighting)
        qcp = QcpParams(self.position_quotient, self.duration_quotient, self.ramp_samples, self.floor)
        ste = SteParams(self.ste_delay, self.ste_length)
        if not self.window_ms >= self.shift_ms > 0:
            raise ValueError("need window_ms >= shift_ms > 0")
        return cfg, qcp, ste

    def fit(self, X=None, y=None):
        self._configs()
        return self

    def transform(self, X, gcis=None, sample_rate_hz=None):
        if not isinstance(X, Waveform):
            if sample_rate_hz is None:
                raise ValueError("sample_rate_hz is required for raw sample arrays")
            X = Waveform(X, sample_rate_hz)
        cfg, qcp, ste = self._configs()
        return track_formants(
            X, cfg, self.window_ms, self.shift_ms, gcis, qcp, ste, self.max_formants, self.grid_size
        )
