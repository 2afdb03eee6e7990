"""Synthetic speech with known ground truth.

LF-model glottal excitation drives a time-varying cascade of second-order
resonators built from formant/bandwidth tracks, giving waveforms whose
formants and glottal closure instants are known exactly. Helpers cover F0
scaling, residual-excited resynthesis from a reference track and additive
noise at a target SNR.
"""

import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import optimize
from scipy import signal as sps

from .excitation import GciSequence
from .predictors import design_from_arrays, solve_l2
from .signal_io import Waveform
from .tracker import FormantTrack

logger = logging.getLogger(__name__)

F0_FACTORS = (1.0, 1.5, 2.0, 2.5)
PHONATIONS = ("modal", "breathy", "creaky", "whispery")
FRAME_S = 0.01


@dataclass(frozen=True)
class LfParams:
    """LF timing as fractions of the period plus the excitation strength ``Ee``."""

    tp: float
    te: float
    ta: float
    tc: float = 1.0
    ee: float = 1.0

    def __post_init__(self):
        if not 0 < self.tp < self.te <= self.tc <= 1:
            raise ValueError(f"need 0 < tp < te <= tc <= 1, got {self}")
        if not self.ta > 0:
            raise ValueError("ta must be positive")
        if self.te >= 2 * self.tp:
            raise ValueError("te must be below 2*tp so the open phase ends in its negative lobe")


@dataclass(frozen=True)
class PhonationPreset:
    name: str
    lf: LfParams
    aspiration_db: float = -60.0
    jitter: float = 0.0
    shimmer: float = 0.0


def load_presets(path=None):
    """Phonation presets from JSON (the bundled file by default)."""
    if path is None:
        text = resources.files("tvqcp").joinpath("data/phonation_presets.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)["presets"]
    out = {}
    for name, p in raw.items():
        lf = LfParams(p["tp"], p["te"], p["ta"], p.get("tc", 1.0))
        out[name] = PhonationPreset(
            name, lf, p.get("aspiration_db", -60.0), p.get("jitter", 0.0), p.get("shimmer", 0.0)
        )
    return out


def get_preset(name, presets=None):
    presets = load_presets() if presets is None else presets
    try:
        return presets[name]
    except KeyError:
        raise ValueError(f"unknown phonation preset {name!r}; have {sorted(presets)}") from None


# ------------------------------------------------------------------ LF model

def _return_constant(ta, tc, te):
    """Solve ``eps*ta = 1 - exp(-eps*(tc - te))`` for the return-phase constant."""
    span = tc - te
    if not ta < span:
        raise ValueError(f"return phase ta={ta} does not fit before tc (tc - te = {span})")
    f = lambda eps: eps * ta - 1.0 + np.exp(-eps * span)
    lo = (span - ta) / span ** 2
    hi = 1.0 / ta
    while f(lo) >= 0:
        lo *= 0.5
    return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


def _lf_shape(p, t0):
    """Sample grid, open-phase pieces and return-phase values of one cycle."""
    n = np.arange(t0)
    ne = int(round(p.te * t0))
    if not 0 < ne < t0:
        raise ValueError(f"period of {t0} samples too short for te={p.te}")
    te = ne / t0
    tau = n / t0
    wg = np.pi / p.tp
    eps = _return_constant(p.ta, p.tc, te)
    ret = np.zeros(t0)
    r = (tau >= te) & (tau <= p.tc)
    ret[r] = -p.ee / (eps * p.ta) * (np.exp(-eps * (tau[r] - te)) - np.exp(-eps * (p.tc - te)))
    open_mask = tau < te
    shape = np.zeros(t0)
    shape[open_mask] = np.sin(wg * tau[open_mask]) / np.sin(wg * te)
    return tau, te, ne, open_mask, shape, ret, eps


def lf_pulse(p, t0_samples):
    """One period of the LF glottal flow derivative, ``t0_samples`` long.

    ``te`` is snapped to the sample grid so the pulse reaches exactly ``-Ee``
    at sample ``round(te * T0)``. The open-phase growth constant is solved so
    the sampled cycle has zero net area.
    """
    t0 = int(t0_samples)
    if t0 < 4:
        raise ValueError("period must be at least 4 samples")
    tau, te, ne, open_mask, shape, ret, _ = _lf_shape(p, t0)
    ret_sum = ret.sum()
    dt = tau[open_mask] - te

    def area(alpha):
        return -p.ee * np.sum(np.exp(alpha * dt) * shape[open_mask]) + ret_sum

    lo, hi = -1.0, 1.0
    for _ in range(200):
        if area(lo) > 0 > area(hi):
            break
        lo, hi = lo * 2, hi * 2
    else:
        raise ValueError("cannot balance LF pulse area (degenerate parameters)")
    alpha = optimize.brentq(area, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=500)
    out = ret.copy()
    out[open_mask] = -p.ee * np.exp(alpha * dt) * shape[open_mask]
    if abs(out.sum()) > 1e-6 * p.ee * t0:
        raise ValueError("LF area balance failed")
    if int(np.argmin(out)) != ne:
        raise ValueError("LF parameters put the flow-derivative minimum before te")
    return out


def lf_return_phase(p, tau):
    """Continuous-time return phase ``E2(tau)`` for ``te <= tau <= tc`` (period = 1)."""
    eps = _return_constant(p.ta, p.tc, p.te)
    tau = np.asarray(tau, dtype=float)
    out = -p.ee / (eps * p.ta) * (np.exp(-eps * (tau - p.te)) - np.exp(-eps * (p.tc - p.te)))
    return np.where((tau >= p.te) & (tau <= p.tc), out, 0.0)


@dataclass(eq=False)
class Excitation:
    waveform: Waveform
    epochs: GciSequence
    periods: np.ndarray


def _contour_at(contour, t, frame_s=FRAME_S):
    c = np.atleast_1d(np.asarray(contour, dtype=float))
    if c.size == 1:
        return float(c[0])
    centres = (np.arange(c.size) + 0.5) * frame_s
    return float(np.interp(t, centres, c))


def lf_excitation(f0_contour, preset, fs=8000, duration_s=1.0, seed=0, frame_s=FRAME_S):
    """Concatenated LF cycles following an F0 contour.

    ``f0_contour`` is a constant or per-frame values at ``frame_s`` hops
    (frame centres). Returns the excitation with the exact sample index of
    every ``te`` instant.
    """
    rng = np.random.default_rng(seed)
    n_total = int(round(duration_s * fs))
    x = np.zeros(n_total)
    epochs, periods, starts = [], [], []
    pos = 0
    while pos < n_total:
        f0 = _contour_at(f0_contour, pos / fs, frame_s)
        if not f0 > 0:
            raise ValueError("F0 must be positive")
        t0 = fs / f0
        if preset.jitter:
            t0 *= 1.0 + preset.jitter * rng.standard_normal()
        t0 = max(int(round(t0)), 8)
        gain = 1.0 + preset.shimmer * rng.standard_normal() if preset.shimmer else 1.0
        pulse = lf_pulse(preset.lf, t0) * max(gain, 0.1)
        stop = min(pos + t0, n_total)
        x[pos:stop] = pulse[: stop - pos]
        ne = int(round(preset.lf.te * t0))
        if pos + ne < n_total:
            epochs.append(pos + ne)
            periods.append(t0)
            starts.append(pos)
        pos += t0

    if preset.aspiration_db > -60.0:
        # aspiration follows the glottal opening: full level in the open phase
        mod = np.full(n_total, 0.25)
        for s, t0 in zip(starts, periods):
            mod[s: s + int(round(preset.lf.te * t0))] = 1.0
        amp = preset.lf.ee * 10 ** (preset.aspiration_db / 20.0)
        x = x + amp * mod * rng.standard_normal(n_total)
    epochs = np.asarray(epochs, dtype=np.int64)
    return Excitation(Waveform(x, fs), GciSequence(epochs, fs, n_total), np.asarray(periods))


def scale_f0(f0_contour, factor):
    """Multiply an F0 contour by ``factor``; timing is untouched."""
    if not factor > 0:
        raise ValueError("F0 scale factor must be positive")
    return np.asarray(f0_contour, dtype=float) * factor


# ------------------------------------------------------------ vocal tract

@dataclass(eq=False)
class VowelSpec:
    """Formant targets over time for one synthetic utterance.

    ``formants`` and ``bandwidths`` are (frames, M) arrays in Hz, or length-M
    vectors for a static vowel; frames sit at the centres of ``frame_s`` hops.
    """

    formants: np.ndarray
    bandwidths: np.ndarray
    f0: object = 120.0
    duration_s: float = 1.0
    fs: int = 8000
    frame_s: float = FRAME_S

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.formants, dtype=float))
        b = np.atleast_2d(np.asarray(self.bandwidths, dtype=float))
        if f.shape != b.shape:
            raise ValueError("formants and bandwidths must have the same shape")
        if np.any(f <= 0) or np.any(b <= 0):
            raise ValueError("formant frequencies and bandwidths must be positive")
        if np.any(f >= self.fs / 2):
            raise ValueError("formant above the Nyquist frequency")
        if f.shape[1] > 1 and np.any(np.diff(f, axis=1) <= 0):
            raise ValueError("formants must be ascending within each frame")
        if np.any(np.atleast_1d(np.asarray(self.f0, dtype=float)) <= 0):
            raise ValueError("F0 must be positive")
        self.formants, self.bandwidths = f, b

    @property
    def n_frames(self):
        return int(round(self.duration_s / self.frame_s))

    def frame_times(self):
        return (np.arange(self.n_frames) + 0.5) * self.frame_s

    def at_frames(self):
        """Formants and bandwidths sampled at every frame centre, (n_frames, M)."""
        return self._interp(self.frame_times())

    def _interp(self, t):
        f, b = self.formants, self.bandwidths
        if f.shape[0] == 1:
            return np.repeat(f, t.size, axis=0), np.repeat(b, t.size, axis=0)
        centres = (np.arange(f.shape[0]) + 0.5) * self.frame_s
        fi = np.column_stack([np.interp(t, centres, f[:, m]) for m in range(f.shape[1])])
        bi = np.column_stack([np.interp(t, centres, b[:, m]) for m in range(b.shape[1])])
        return fi, bi


def resonator_sos(freqs, bws, fs):
    """Unity-DC-gain second-order sections, one per (F, B) pair."""
    sos = []
    for f, b in zip(np.atleast_1d(freqs), np.atleast_1d(bws)):
        r = np.exp(-np.pi * b / fs)
        c = -2 * r * np.cos(2 * np.pi * f / fs)
        sos.append([1.0 + c + r * r, 0.0, 0.0, 1.0, c, r * r])
    return np.asarray(sos)


def allpole_coeffs(freqs, bws, fs):
    """Monic denominator ``A(z)`` of the resonator cascade."""
    a = np.array([1.0])
    for f, b in zip(np.atleast_1d(freqs), np.atleast_1d(bws)):
        r = np.exp(-np.pi * b / fs)
        a = np.convolve(a, [1.0, -2 * r * np.cos(2 * np.pi * f / fs), r * r])
    return a


def time_varying_cascade(x, freq_fn, fs, block=8):
    """Filter ``x`` through resonators whose (F, B) come from ``freq_fn(t_s)``.

    Coefficients are refreshed every ``block`` samples with filter state
    carried across updates.
    """
    y = np.empty_like(x)
    zi = None
    for start in range(0, x.size, block):
        stop = min(start + block, x.size)
        f, b = freq_fn((start + stop - 1) / 2.0 / fs)
        sos = resonator_sos(f, b, fs)
        if zi is None:
            zi = np.zeros((sos.shape[0], 2))
        y[start:stop], zi = sps.sosfilt(sos, x[start:stop], zi=zi)
    return y


@dataclass(eq=False)
class Synthesis:
    waveform: Waveform
    truth: FormantTrack
    epochs: GciSequence
    excitation: Waveform = field(repr=False, default=None)


def synthesize_vowel(spec, preset, seed=0, peak=0.5):
    """LF-excited all-pole synthesis with its exact formant track and epochs."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    exc = lf_excitation(spec.f0, preset, spec.fs, spec.duration_s, seed, spec.frame_s)

    def freq_fn(t):
        f, b = spec._interp(np.array([t]))
        return f[0], b[0]

    y = time_varying_cascade(exc.waveform.samples, freq_fn, spec.fs)
    mx = np.max(np.abs(y))
    if mx > 0:
        y = y * (peak / mx)
    f, b = spec.at_frames()
    truth = FormantTrack(spec.frame_times(), f, b, spec.fs, {"source": "synthesis"})
    return Synthesis(Waveform(y, spec.fs), truth, exc.epochs, exc.waveform)


def inverse_filter(x, a):
    return sps.lfilter(a, [1.0], x)


def allpole_filter(x, a):
    return sps.lfilter([1.0], a, x)


def lp_residual(w, order=18, frame_ms=20.0, hop_ms=10.0):
    """Short-time L2 LP residual, overlap-added with Hann windows at 50 % overlap."""
    x = w.samples
    fs = w.sample_rate_hz
    flen = int(round(frame_ms * fs / 1000))
    hop = int(round(hop_ms * fs / 1000))
    win = sps.get_window("hann", flen, fftbins=True)
    out = np.zeros(x.size + flen)
    norm = np.zeros(x.size + flen)
    xp = np.concatenate([x, np.zeros(flen)])
    for start in range(0, x.size, hop):
        seg = xp[start: start + flen]
        hist = xp[max(0, start - order): start]
        if np.max(np.abs(seg)) == 0:
            continue
        fit = solve_l2(design_from_arrays(seg, hist, order, 0))
        a = np.concatenate([[1.0], fit.model.coef[:, 0]])
        ctx = np.concatenate([np.zeros(order - hist.size), hist, seg])
        e = sps.lfilter(a, [1.0], ctx)[order:]
        out[start: start + flen] += win * e
        norm[start: start + flen] += win
    norm[norm == 0] = 1.0
    return (out / np.maximum(norm, 1e-12))[: x.size]


def resynthesize_from_reference(w, ref_track, order=18, n_formants=4):
    """Replace the formant structure of ``w`` with a reference track.

    The order-18 short-time LP residual (20 ms frames, 10 ms hop) excites an
    all-pole cascade built from the first ``n_formants`` reference formants.
    """
    f = ref_track.frequencies(n_formants)
    b = ref_track.bandwidths(n_formants)
    if len(ref_track) == 0:
        raise ValueError("empty reference track")
    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(b)):
        raise ValueError("reference track has missing formants or bandwidths")
    hop = ref_track.hop_s if len(ref_track) > 1 else FRAME_S
    if ref_track.times[0] > hop or ref_track.times[-1] < w.duration_s - 1.5 * hop:
        raise ValueError("reference track does not cover the utterance")
    fs = w.sample_rate_hz
    residual = lp_residual(w, order)
    times = ref_track.times

    def freq_fn(t):
        fi = np.array([np.interp(t, times, f[:, m]) for m in range(n_formants)])
        bi = np.array([np.interp(t, times, b[:, m]) for m in range(n_formants)])
        return fi, bi

    y = time_varying_cascade(residual, freq_fn, fs)
    mx = np.max(np.abs(y))
    return Waveform(y * (0.5 / mx) if mx > 0 else y, fs)


# ------------------------------------------------------------------ noise

def white_noise(n_samples, fs, seed=0):
    return Waveform(np.random.default_rng(seed).standard_normal(n_samples), fs)


def noise_gain(clean, noise, snr_db):
    pc = float(np.mean(np.square(clean)))
    pn = float(np.mean(np.square(noise)))
    if pc == 0 or pn == 0:
        raise ValueError("clean and noise signals must have non-zero power")
    return np.sqrt(pc / (pn * 10 ** (snr_db / 10.0)))


def mix_noise_at_snr(clean, noise, snr_db):
    """Add ``noise`` scaled to ``snr_db`` over the whole utterance.

    Noise shorter than the clean signal is tiled; longer noise is truncated.
    """
    if noise.sample_rate_hz != clean.sample_rate_hz:
        raise ValueError("noise and clean signal sample rates differ")
    n = len(clean)
    v = noise.samples
    if v.size == 0:
        raise ValueError("empty noise signal")
    if v.size < n:
        v = np.tile(v, int(np.ceil(n / v.size)))
    v = v[:n]
    g = noise_gain(clean.samples, v, snr_db)
    return Waveform(clean.samples + g * v, clean.sample_rate_hz)


# ------------------------------------------------------------------ corpus

# Average adult formant targets (Hz) for a handful of vowels.
VOWEL_TARGETS = {
    "i": (342, 2322, 3000, 3657),
    "I": (427, 2034, 2684, 3618),
    "e": (476, 2089, 2691, 3649),
    "E": (580, 1799, 2605, 3677),
    "ae": (588, 1952, 2601, 3624),
    "a": (768, 1333, 2522, 3687),
    "O": (652, 997, 2538, 3486),
    "o": (497, 910, 2459, 3384),
    "U": (469, 1122, 2434, 3400),
    "u": (378, 997, 2343, 3357),
    "V": (623, 1200, 2550, 3557),
}
BANDWIDTHS = (70.0, 100.0, 150.0, 220.0)


@dataclass(eq=False)
class UtteranceSpec:
    name: str
    vowel: VowelSpec


def make_utterance(index, duration_s=1.0, fs=8000, f0_mean=120.0, seed=0):
    """A reproducible vowel or diphthong glide with a declining F0 contour."""
    rng = np.random.default_rng([seed, index])
    keys = sorted(VOWEL_TARGETS)
    v1, v2 = rng.choice(len(keys), size=2, replace=False)
    n_frames = int(round(duration_s / FRAME_S))
    t = (np.arange(n_frames) + 0.5) * FRAME_S
    start = np.asarray(VOWEL_TARGETS[keys[v1]], dtype=float)
    end = np.asarray(VOWEL_TARGETS[keys[v2]], dtype=float)
    if index % 2 == 0:
        # diphthong: smooth sigmoid glide centred mid-utterance
        mid = duration_s * rng.uniform(0.4, 0.6)
        rate = rng.uniform(8.0, 16.0)
        frac = 1.0 / (1.0 + np.exp(-rate * (t - mid)))
        name = f"utt{index:02d}_{keys[v1]}-{keys[v2]}"
    else:
        frac = np.zeros(n_frames)
        name = f"utt{index:02d}_{keys[v1]}"
    formants = start[None, :] + frac[:, None] * (end - start)[None, :]
    # slow wander so static vowels are not perfectly stationary
    formants *= 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi))[:, None]
    formants = np.minimum(formants, fs / 2 - 250.0)
    scale = rng.uniform(0.85, 1.2)
    bws = np.tile(np.asarray(BANDWIDTHS) * scale, (n_frames, 1))
    decl = np.linspace(1.08, 0.92, n_frames)
    f0 = f0_mean * decl * (1.0 + 0.03 * np.sin(2 * np.pi * 3.0 * t))
    return UtteranceSpec(name, VowelSpec(formants, bws, f0, duration_s, fs))


@dataclass(eq=False)
class CorpusItem:
    name: str
    phonation: str
    f0_factor: float
    synthesis: Synthesis


def make_corpus(n_utterances=8, phonations=PHONATIONS, f0_factors=(1.0,), duration_s=1.0,
                fs=8000, f0_mean=120.0, seed=0, presets=None):
    """Every (utterance, phonation, F0 factor) cell of an LF-synthetic corpus."""
    presets = load_presets() if presets is None else presets
    items = []
    for u in range(n_utterances):
        utt = make_utterance(u, duration_s, fs, f0_mean, seed)
        for ph in phonations:
            preset = get_preset(ph, presets)
            for factor in f0_factors:
                spec = VowelSpec(
                    utt.vowel.formants, utt.vowel.bandwidths, scale_f0(utt.vowel.f0, factor),
                    duration_s, fs,
                )
                cell_seed = [seed, u, PHONATIONS.index(ph) if ph in PHONATIONS else 99, int(factor * 10)]
                syn = synthesize_vowel(spec, preset, seed=np.random.default_rng(cell_seed).integers(2**31))
                items.append(CorpusItem(utt.name, ph, factor, syn))
    return items
