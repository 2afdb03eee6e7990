"""Waveform container, conditioning (resampling, pre-emphasis, windowing) and file IO.

File formats
------------
* audio: WAV, 16-bit PCM or 32-bit float; multichannel input keeps channel 0.
* formant track CSV: header ``time_s,f1_hz,b1_hz,...,f4_hz,b4_hz``; missing
  formants are empty fields.
* GCI file: one glottal closure time in seconds per line, ascending.
* label file: ``start_s<TAB>end_s<TAB>category`` per line.
"""

import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from ._validation import check_signal

logger = logging.getLogger(__name__)

DEFAULT_PREEMPHASIS = 0.97
TRACK_FORMANTS = 4


@dataclass(frozen=True, eq=False)
class Waveform:
    """A mono sampled signal.

    ``samples`` is stored as a read-only float64 array so a waveform can be
    shared between threads and windows without copying.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = check_signal(self.samples, name="samples", allow_empty=True).copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        fs = int(self.sample_rate_hz)
        if fs <= 0 or fs != self.sample_rate_hz:
            raise ValueError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", fs)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self):
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples):
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True, eq=False)
class AnalysisWindow:
    """A contiguous span ``[start_sample, start_sample + length_samples)`` of a waveform.

    ``frame_samples`` holds the absolute sample indices at which formants are
    read out from the model fitted on this window.
    """

    start_sample: int
    length_samples: int
    source: Waveform
    frame_samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        if self.start_sample < 0 or self.length_samples <= 0:
            raise ValueError("window start must be >= 0 and length > 0")
        if self.start_sample + self.length_samples > len(self.source):
            raise ValueError("window extends past the end of its source")

    @property
    def stop_sample(self):
        return self.start_sample + self.length_samples

    @property
    def samples(self):
        return self.source.samples[self.start_sample:self.stop_sample]

    def history(self, n):
        """The ``n`` samples preceding the window, zero-padded at the signal start."""
        out = np.zeros(n)
        lo = max(0, self.start_sample - n)
        avail = self.source.samples[lo:self.start_sample]
        if avail.size:
            out[n - avail.size:] = avail
        return out

    @classmethod
    def whole(cls, waveform):
        return cls(0, len(waveform), waveform)


def load_waveform(path):
    """Read a WAV file into a :class:`Waveform` scaled to [-1, 1]."""
    path = os.fspath(path)
    try:
        fs, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as exc:
        raise ValueError(f"cannot read WAV file {path!r}: {exc}") from exc
    if data.ndim == 2:
        warnings.warn(f"{path}: {data.shape[1]} channels, using the first one", stacklevel=2)
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample encoding {data.dtype}")
    if x.size == 0:
        raise ValueError(f"{path}: zero-length audio")
    return Waveform(x, int(fs))


def _atomic_write(path, writer, mode="wb"):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_waveform(path, w, encoding="pcm16"):
    """Write ``w`` as a WAV file (``pcm16`` or ``float32``), atomically."""
    x = np.asarray(w.samples)
    if encoding == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    _atomic_write(path, lambda fh: wavfile.write(fh, w.sample_rate_hz, data))


def resample(w, target_hz):
    """Polyphase windowed-sinc resampling to ``target_hz``.

    The anti-aliasing cutoff sits at 0.45 times the lower of the two sample
    rates.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    fs = w.sample_rate_hz
    if target_hz == fs or len(w) == 0:
        return Waveform(w.samples, target_hz)
    ratio = Fraction(target_hz, fs)
    up, down = ratio.numerator, ratio.denominator
    half_len = 10 * max(up, down)
    cutoff = 0.45 * min(fs, target_hz) / (0.5 * fs * up)
    taps = sps.firwin(2 * half_len + 1, cutoff, window=("kaiser", 8.0))  # resample_poly applies the gain of up
    y = sps.resample_poly(w.samples, up, down, window=taps)
    n_out = int(math.floor(len(w) * target_hz / fs + 0.5))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.shape[0])])
    return Waveform(y, target_hz)


def preemphasize(w, alpha=DEFAULT_PREEMPHASIS):
    """First-order pre-emphasis ``y[n] = x[n] - alpha*x[n-1]`` with ``x[-1] = 0``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"pre-emphasis coefficient must lie in [0, 1), got {alpha}")
    return w.with_samples(sps.lfilter([1.0, -alpha], [1.0], w.samples))


def deemphasize(w, alpha=DEFAULT_PREEMPHASIS):
    return w.with_samples(sps.lfilter([1.0], [1.0, -alpha], w.samples))


def frame_windows(w, window_ms=100.0, shift_ms=10.0):
    """Tile ``w`` with non-overlapping analysis windows.

    Frame instants sit at the centres of consecutive ``shift_ms`` hops over the
    whole signal and are assigned to the window containing them. A trailing
    remainder shorter than two hops is merged into the previous window; a
    signal shorter than one window yields a single window covering it.
    """
    if not window_ms >= shift_ms > 0:
        raise ValueError("need window_ms >= shift_ms > 0")
    n = len(w)
    if n == 0:
        raise ValueError("cannot window an empty signal")
    fs = w.sample_rate_hz
    win = max(1, int(round(window_ms * fs / 1000.0)))
    hop = max(1, int(round(shift_ms * fs / 1000.0)))

    n_full, rem = divmod(n, win)
    if n_full == 0:
        bounds = [(0, n)]
    else:
        bounds = [(i * win, (i + 1) * win) for i in range(n_full)]
        if rem >= 2 * hop:
            bounds.append((n_full * win, n))
        elif rem:
            bounds[-1] = (bounds[-1][0], n)

    centres = np.arange(hop // 2, n, hop)
    windows = []
    for start, stop in bounds:
        sel = centres[(centres >= start) & (centres < stop)]
        windows.append(AnalysisWindow(start, stop - start, w, sel.astype(int)))
    return windows


# ---------------------------------------------------------------- text formats

def track_header(n_formants=TRACK_FORMANTS):
    cols = ["time_s"]
    for i in range(1, n_formants + 1):
        cols += [f"f{i}_hz", f"b{i}_hz"]
    return ",".join(cols)


def _fmt(v):
    return "" if not np.isfinite(v) else f"{v:.3f}"


def write_track_csv(path, track, n_formants=TRACK_FORMANTS):
    """Write a :class:`~tvqcp.tracker.FormantTrack` as CSV, atomically."""
    freqs = track.frequencies(n_formants)
    bws = track.bandwidths(n_formants)
    lines = [track_header(n_formants)]
    for t, f_row, b_row in zip(track.times, freqs, bws):
        cells = [f"{t:.6f}"]
        for f, b in zip(f_row, b_row):
            cells += [_fmt(f), _fmt(b)]
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    _atomic_write(path, lambda fh: fh.write(text), mode="w")


def read_track_csv(path, sample_rate_hz=8000):
    """Read a formant track CSV; empty fields become missing formants."""
    from .tracker import FormantTrack

    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "time_s":
            raise ValueError(f"{path}: not a formant track file (header {header!r})")
        n_formants = (len(header) - 1) // 2
        times, freqs, bws = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            cells += [""] * (len(header) - len(cells))
            try:
                vals = [float(c) if c.strip() else np.nan for c in cells[: len(header)]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            times.append(vals[0])
            freqs.append(vals[1::2][:n_formants])
            bws.append(vals[2::2][:n_formants])
    return FormantTrack(
        np.asarray(times, dtype=float),
        np.asarray(freqs, dtype=float).reshape(len(times), n_formants),
        np.asarray(bws, dtype=float).reshape(len(times), n_formants),
        sample_rate_hz,
    )


def write_gci_file(path, times_s):
    text = "".join(f"{t:.6f}\n" for t in np.asarray(times_s, dtype=float))
    _atomic_write(path, lambda fh: fh.write(text), mode="w")


def read_gci_times(path):
    """GCI times in seconds, exactly as listed in the file."""
    times = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                times.append(float(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad GCI time {line!r}") from exc
    return np.asarray(times, dtype=float)


@dataclass(frozen=True)
class Label:
    start_s: float
    end_s: float
    category: str


def read_labels(path):
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected start<TAB>end<TAB>category")
            start, end = float(parts[0]), float(parts[1])
            if end < start:
                raise ValueError(f"{path}:{lineno}: end before start")
            labels.append(Label(start, end, parts[2].strip()))
    return labels


def write_labels(path, labels):
    text = "".join(f"{lab.start_s:.6f}\t{lab.end_s:.6f}\t{lab.category}\n" for lab in labels)
    _atomic_write(path, lambda fh: fh.write(text), mode="w")
