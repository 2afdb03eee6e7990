"""Glottal closure instants and the temporal weighting functions built on them.

Three error-weighting functions are provided:

* short-time energy (STE) of the signal, emphasising high-energy regions;
* an inverted, normalized STE of the L2 LP residual;
* the quasi-closed-phase (QCP) function, a piecewise-linear pulse train
  locked to the GCIs that attenuates the main excitation and the late open
  phase of every glottal cycle.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from ._validation import check_signal
from .signal_io import AnalysisWindow, read_gci_times

logger = logging.getLogger(__name__)

F0_MIN = 60.0
F0_MAX = 800.0


@dataclass(frozen=True)
class SteParams:
    delay: int = 0
    length: int = 12

    def __post_init__(self):
        if self.length < 1 or self.delay < 0:
            raise ValueError("STE length must be >= 1 and delay >= 0")


@dataclass(frozen=True)
class QcpParams:
    """QCP weighting shape.

    ``position_quotient`` and ``duration_quotient`` are fractions of the
    local pitch period; ``ramp_samples`` is the transition length (3 samples
    is 0.375 ms at 8 kHz); ``floor`` keeps the weighted normal equations
    nonsingular.
    """

    position_quotient: float = 0.05
    duration_quotient: float = 0.8
    ramp_samples: int = 3
    floor: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.position_quotient < 1.0:
            raise ValueError("position_quotient must lie in [0, 1)")
        if not 0.0 < self.duration_quotient <= 1.0:
            raise ValueError("duration_quotient must lie in (0, 1]")
        if self.ramp_samples < 0:
            raise ValueError("ramp_samples must be >= 0")
        if not self.floor > 0:
            raise ValueError("floor must be positive")


class GciSequence:
    """Ascending glottal closure instants (sample indices) of one signal.

    ``voiced[i]`` flags the cycle that starts at ``instants[i]``; the last
    instant's cycle borrows the preceding period.
    """

    def __init__(self, instants, sample_rate_hz, n_samples=None, voiced=None):
        g = np.asarray(instants, dtype=np.int64).ravel()
        if g.size and np.any(np.diff(g) <= 0):
            raise ValueError("GCI instants must be strictly ascending")
        if g.size and g[0] < 0:
            raise ValueError("GCI instants must be non-negative")
        if n_samples is not None and g.size and g[-1] >= n_samples:
            raise ValueError("GCI instant beyond the end of the signal")
        self.instants = g
        self.sample_rate_hz = int(sample_rate_hz)
        self.n_samples = n_samples
        if voiced is None:
            f0 = self.sample_rate_hz / np.maximum(self.periods(), 1)
            voiced = (f0 >= F0_MIN) & (f0 <= F0_MAX)
        self.voiced = np.asarray(voiced, dtype=bool)
        if self.voiced.shape != g.shape:
            raise ValueError("voiced mask must match the number of instants")
        self.instants.setflags(write=False)
        self.voiced.setflags(write=False)

    def __len__(self):
        return self.instants.shape[0]

    def __repr__(self):
        return (
            f"GciSequence({len(self)} instants, {int(self.voiced.sum())} voiced, "
            f"fs={self.sample_rate_hz})"
        )

    def periods(self):
        """Per-cycle period ``T0`` in samples (0 where undefined)."""
        g = self.instants
        if g.size < 2:
            return np.zeros(g.size, dtype=np.int64)
        d = np.diff(g)
        return np.concatenate([d, d[-1:]])

    @property
    def times_s(self):
        return self.instants / self.sample_rate_hz

    @classmethod
    def from_times(cls, times_s, sample_rate_hz, n_samples=None):
        idx = np.rint(np.asarray(times_s, dtype=float) * sample_rate_hz).astype(np.int64)
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("GCI times are not strictly ascending at this sample rate")
        return cls(idx, sample_rate_hz, n_samples)


def read_gci_file(path, fs, n_samples=None):
    """Read a GCI file (seconds, one per line) into sample indices at ``fs``."""
    times = read_gci_times(path)
    if times.size and np.any(np.diff(times) <= 0):
        raise ValueError(f"{path}: GCI times are not ascending")
    if times.size and times[0] < 0:
        raise ValueError(f"{path}: negative GCI time")
    if n_samples is not None and times.size and np.rint(times[-1] * fs) >= n_samples:
        raise ValueError(f"{path}: GCI time {times[-1]} s beyond the signal end")
    return GciSequence.from_times(times, fs, n_samples)


def perturb_gcis(gcis, random_error=0, fixed_error=0, rng=None):
    """Shift GCIs by a fixed bias plus uniform integer noise in ``[-random_error, random_error]``.

    Collisions after shifting are dropped so the result stays ascending.
    """
    rng = np.random.default_rng(rng)
    g = gcis.instants.astype(np.int64) + int(fixed_error)
    if random_error:
        g = g + rng.integers(-random_error, random_error + 1, size=g.size)
    hi = gcis.n_samples - 1 if gcis.n_samples is not None else None
    g = np.clip(g, 0, hi)
    order = np.argsort(g, kind="stable")
    g = g[order]
    keep = np.concatenate([[True], np.diff(g) > 0]) if g.size else np.zeros(0, bool)
    return GciSequence(g[keep], gcis.sample_rate_hz, gcis.n_samples)


# ------------------------------------------------------------ GCI detection

def _whitened(x, order=10):
    """Long-term LP residual of ``x`` (formant structure removed)."""
    from .predictors import design_from_arrays, solve_l2

    if x.size <= 4 * order:
        return x.copy()
    fit = solve_l2(design_from_arrays(x, None, order, 0))
    return sps.lfilter(np.concatenate([[1.0], fit.model.coef[:, 0]]), [1.0], x)


def _frame_period(e, lo, hi):
    e = e - e.mean()
    n = e.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(e, nfft)
    ac = np.fft.irfft(spec * np.conj(spec), nfft)[: hi + 1]
    if ac[0] <= 0:
        return 0, 0.0
    ac = ac / ac[0] * n / (n - np.arange(hi + 1))
    lag = lo + int(np.argmax(ac[lo: hi + 1]))
    # prefer the shortest sub-multiple that nearly matches the best peak
    for div in (4, 3, 2):
        cand = int(round(lag / div))
        if cand >= lo:
            a = max(lo, cand - 2)
            seg = ac[a: cand + 3]
            if seg.size and seg.max() > 0.9 * ac[lag]:
                lag = a + int(np.argmax(seg))
                break
    return lag, float(ac[lag])


def _mean_pitch_period(x, fs, threshold=0.25, frame_s=0.06, min_voiced=0.2):
    """Median autocorrelation period of the LP residual over short frames.

    Returns None when fewer than ``min_voiced`` of the frames are periodic.
    """
    lo = int(fs / F0_MAX)
    n = int(round(frame_s * fs))
    hi = int(fs / F0_MIN)
    if x.size < n or n < 2 * hi:
        n = x.size
        hi = min(hi, x.size // 2)
    if hi <= lo:
        return None
    e = _whitened(x)
    lags = []
    starts = range(0, max(1, e.size - n + 1), n // 2)
    for s in starts:
        lag, peak = _frame_period(e[s: s + n], lo, hi)
        if peak > threshold:
            lags.append(lag)
    if len(lags) < max(1, min_voiced * len(starts)):
        return None
    return int(np.median(lags))


def _zero_frequency_filter(x, period):
    d = np.diff(x, prepend=x[:1])
    r = 0.999
    y = d
    for _ in range(2):
        y = sps.lfilter([1.0], [1.0, -2 * r, r * r], y)
    half = max(1, int(round(0.75 * period)))
    kernel = np.ones(2 * half + 1) / (2 * half + 1)
    for _ in range(3):
        y = y - np.convolve(np.pad(y, half, mode="edge"), kernel, mode="valid")
    return y


def _refine_to_residual(gci, e, period):
    """Move each instant to the strongest negative residual peak nearby.

    The zero-frequency crossing lags the closure by a few samples,
    depending on the open phase; the search spans -10% to +20% of the period.
    """
    back = max(1, int(round(0.1 * period)))
    ahead = max(1, int(round(0.2 * period)))
    out = np.empty_like(gci)
    for i, g in enumerate(gci):
        a = max(0, g - back)
        b = min(e.size, g + ahead + 1)
        out[i] = a + int(np.argmin(e[a:b]))
    out = np.unique(out)
    return out


def _cycle_periodicity(x, g, period, slack=0.15):
    """Best normalized correlation between the cycle at ``g`` and one period earlier.

    The lag is searched within ``+-slack`` of the period to tolerate jitter.
    """
    best = 0.0
    span = max(1, int(round(slack * period)))
    for lag in range(max(1, period - span), period + span + 1):
        if g - lag < 0 or g + period > x.size:
            continue
        a = x[g - lag: g - lag + period]
        b = x[g: g + period]
        den = np.sqrt(np.dot(a, a) * np.dot(b, b))
        if den > 0:
            best = max(best, float(np.dot(a, b) / den))
    return best


def estimate_gci(w, min_periodicity=0.4):
    """Detect GCIs with a zero-frequency resonator.

    The differenced signal passes twice through a (near) zero-frequency
    resonator; the resulting trend is removed with a moving average of 1.5
    mean pitch periods and GCIs are the negative-to-positive zero crossings.
    Cycles whose F0 falls outside [60, 800] Hz or whose low-passed waveform
    does not repeat the preceding cycle are flagged unvoiced; an aperiodic
    signal yields only unvoiced cycles.
    """
    x = check_signal(w.samples, allow_empty=True)
    fs = w.sample_rate_hz
    if x.size < 4 or np.max(np.abs(x)) < 1e-6:
        return GciSequence([], fs, x.size)
    period = _mean_pitch_period(x, fs)
    if period is None:
        y = _zero_frequency_filter(x, int(round(0.01 * fs)))
        gci = np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0)) + 1
        return GciSequence(gci, fs, x.size, voiced=np.zeros(gci.size, bool))
    y = _zero_frequency_filter(x, period)
    gci = np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0)) + 1
    # the trend estimate is unreliable within its half-length of the end
    gci = gci[gci < x.size - int(round(0.75 * period))]
    if gci.size == 0:
        return GciSequence([], fs, x.size)
    e = _whitened(x)
    if np.std(e) > 0.01 * np.std(x):  # nearly sinusoidal input has no usable residual
        gci = _refine_to_residual(gci, e, period)
    seq = GciSequence(gci, fs, x.size)
    periods = seq.periods()
    voiced = seq.voiced.copy()
    sos = sps.butter(4, min(1000.0, 0.45 * fs), fs=fs, output="sos")
    low = sps.sosfiltfilt(sos, x)
    energy = np.array([np.sum(low[g: g + max(p, 1)] ** 2) for g, p in zip(gci, periods)])
    silent = energy < 1e-4 * energy.max()
    for i, (g, p) in enumerate(zip(gci, periods)):
        if voiced[i] and (silent[i] or _cycle_periodicity(low, int(g), int(p)) < min_periodicity):
            voiced[i] = False
    # the first cycle has no predecessor to compare with; follow its successor
    if voiced.size > 1 and not voiced[0] and not silent[0] and voiced[1]:
        voiced[0] = F0_MIN <= fs / max(periods[0], 1) <= F0_MAX
    return GciSequence(gci, fs, x.size, voiced=voiced)


# ------------------------------------------------------------ weighting

def _lookback_energy(x_ext, n_lead, n, delay, length):
    """``sum_{k=D+1}^{D+M} x^2[m-k]`` for ``m`` in the last ``n`` samples of ``x_ext``."""
    sq = np.concatenate([[0.0], np.cumsum(x_ext * x_ext)])
    m = n_lead + np.arange(n)
    hi = np.clip(m - delay, 0, x_ext.size)
    lo = np.clip(m - delay - length, 0, x_ext.size)
    return sq[hi] - sq[lo]


def _extended(window, lead):
    return np.concatenate([window.history(lead), window.samples])


def ste_weights(window, params=SteParams()):
    """Short-time energy weights over ``window``."""
    lead = params.delay + params.length
    x_ext = _extended(window, lead)
    return _lookback_energy(x_ext, lead, window.length_samples, params.delay, params.length)


def residual_weights(window, lp_order=8, params=SteParams(), floor=1e-5):
    """Inverted, [0, 1]-normalized short-time energy of the L2 LP residual."""
    from .predictors import design_from_arrays, solve_l2

    n = window.length_samples
    lead = params.delay + params.length
    x = window.samples
    if n <= lp_order or np.ptp(x) == 0:
        return np.ones(n)
    fit = solve_l2(design_from_arrays(x, window.history(lp_order), lp_order, 0))
    a = np.concatenate([[1.0], fit.model.coef[:, 0]])
    ext = _extended(window, lead + lp_order)
    e_ext = sps.lfilter(a, [1.0], ext)[lp_order:]
    energy = _lookback_energy(e_ext, lead, n, params.delay, params.length)
    energy = energy - energy.mean()
    span = energy.max() - energy.min()
    if not span > 1e-12 * max(abs(energy).max(), 1e-300):
        return np.ones(n)
    w = (energy.max() - energy) / span
    return np.maximum(w, floor)


def _distance_to_mask(mask):
    """Distance from each sample to the nearest True sample (inf if none)."""
    idx = np.flatnonzero(mask)
    n = mask.size
    if idx.size == 0:
        return np.full(n, np.inf)
    pos = np.arange(n)
    right = np.searchsorted(idx, pos)
    d_right = np.where(right < idx.size, idx[np.minimum(right, idx.size - 1)] - pos, np.inf)
    left = right - 1
    d_left = np.where(left >= 0, pos - idx[np.maximum(left, 0)], np.inf)
    return np.minimum(d_left, d_right)


def qcp_weight_signal(n_samples, gcis, params=QcpParams()):
    """QCP weights for a whole signal of ``n_samples``.

    In every voiced cycle ``[g, g + T0)`` the unit region spans
    ``[g + PQ*T0, g + (PQ + DQ)*T0)``; the rest of the cycle sits at the
    floor. Linear ramps of ``ramp_samples`` lead into and out of each floor
    region from the unit side. Samples outside voiced cycles get weight 1.
    When PQ + DQ > 1 the unit region is cut off by the next cycle's floor.
    """
    low = np.zeros(n_samples, dtype=bool)
    if len(gcis):
        periods = gcis.periods()
        for g, t0, voiced in zip(gcis.instants, periods, gcis.voiced):
            if not voiced or t0 <= 0:
                continue
            start = int(round(params.position_quotient * t0))
            stop = start + int(round(params.duration_quotient * t0))
            low[g: min(g + start, n_samples)] = True
            low[min(g + stop, n_samples): min(g + t0, n_samples)] = True
    dist = _distance_to_mask(low)
    ramp = np.minimum(1.0, dist / (params.ramp_samples + 1))
    w = params.floor + (1.0 - params.floor) * ramp
    w[low] = params.floor
    return w


def qcp_weights(window, gcis, params=QcpParams()):
    """QCP weights aligned with ``window``; all ones without GCIs."""
    n_total = len(window.source)
    if gcis is None or len(gcis) == 0:
        return np.ones(window.length_samples)
    w = qcp_weight_signal(n_total, gcis, params)
    return w[window.start_sample: window.stop_sample]


def window_weights(window, kind, gcis=None, ste=SteParams(), qcp=QcpParams(), lp_order=8):
    """Dispatch on the weighting name used throughout the toolkit."""
    if kind == "none":
        return np.ones(window.length_samples)
    if kind == "ste":
        return ste_weights(window, ste)
    if kind == "residual":
        return residual_weights(window, lp_order, ste, qcp.floor)
    if kind == "qcp":
        return qcp_weights(window, gcis, qcp)
    raise ValueError(f"unknown weighting {kind!r}")


__all__ = [
    "AnalysisWindow",
    "GciSequence",
    "QcpParams",
    "SteParams",
    "estimate_gci",
    "perturb_gcis",
    "qcp_weight_signal",
    "qcp_weights",
    "read_gci_file",
    "residual_weights",
    "ste_weights",
    "window_weights",
]
