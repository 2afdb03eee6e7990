import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from tvqcp.excitation import (
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
    window_weights,
)
from tvqcp.signal_io import AnalysisWindow, Waveform, preemphasize
from tvqcp.synthlab import VowelSpec, synthesize_vowel

FS = 8000


@pytest.fixture(scope="module")
def modal_vowel():
    spec = VowelSpec([700, 1220, 2600, 3500], [60, 80, 120, 200], 120.0, 1.0, FS)
    return synthesize_vowel(spec, "modal", seed=11)


def _whole(x):
    return AnalysisWindow.whole(Waveform(x, FS))


# ------------------------------------------------------------------ GCIs

def test_gci_sequence_invariants():
    with pytest.raises(ValueError):
        GciSequence([10, 5], FS)
    with pytest.raises(ValueError):
        GciSequence([10, 900], FS, n_samples=800)
    g = GciSequence([0, 100, 200, 20000], FS)
    np.testing.assert_array_equal(g.periods(), [100, 100, 19800, 19800])
    # F0 = 80 Hz voiced, 0.4 Hz not
    np.testing.assert_array_equal(g.voiced, [True, True, False, False])


def test_read_gci_file(tmp_path):
    p = tmp_path / "a.gci"
    p.write_text("0.010\n0.020\n")
    np.testing.assert_array_equal(read_gci_file(p, FS).instants, [80, 160])
    p.write_text("")
    assert len(read_gci_file(p, FS)) == 0
    p.write_text("0.020\n0.010\n")
    with pytest.raises(ValueError, match="ascending"):
        read_gci_file(p, FS)
    p.write_text("0.5\n2.0\n")
    with pytest.raises(ValueError, match="beyond"):
        read_gci_file(p, FS, n_samples=8000)


def test_estimate_gci_on_lf_vowel(modal_vowel):
    truth = modal_vowel.epochs.instants
    est = estimate_gci(modal_vowel.waveform)
    assert abs(len(est) - len(truth)) <= 2
    nearest = np.array([est.instants[np.argmin(np.abs(est.instants - t))] for t in truth])
    assert np.mean(np.abs(nearest - truth)) / FS < 0.5e-3
    assert est.voiced.mean() > 0.95


def test_estimate_gci_on_preemphasized_vowel(modal_vowel):
    truth = modal_vowel.epochs.instants
    est = estimate_gci(preemphasize(modal_vowel.waveform))
    nearest = np.array([est.instants[np.argmin(np.abs(est.instants - t))] for t in truth])
    assert np.mean(np.abs(nearest - truth)) / FS < 0.5e-3


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_estimate_gci_white_noise_unvoiced(seed):
    x = np.random.default_rng(seed).standard_normal(FS)
    g = estimate_gci(Waveform(x, FS))
    assert len(g) == 0 or not g.voiced.any()


def test_estimate_gci_sinusoid():
    t = np.arange(FS) / FS
    g = estimate_gci(Waveform(np.sin(2 * np.pi * 120 * t), FS))
    d = np.diff(g.instants)
    assert abs(len(g) - 120) <= 1
    assert abs(np.mean(d) - FS / 120) / (FS / 120) < 0.01
    assert np.all(np.abs(d - FS / 120) <= 2)


def test_estimate_gci_silence():
    assert len(estimate_gci(Waveform(np.zeros(FS), FS))) == 0
    assert len(estimate_gci(Waveform(np.zeros(0), FS))) == 0


def test_perturb_gcis_bounds():
    g = GciSequence(np.arange(50, 7950, 67), FS, FS)
    p = perturb_gcis(g, random_error=8, rng=3)
    assert np.all(np.diff(p.instants) > 0)
    d = p.instants - g.instants
    assert np.abs(d).max() <= 8 and len(np.unique(d)) > 5
    q = perturb_gcis(g, fixed_error=-4)
    np.testing.assert_array_equal(q.instants, g.instants - 4)


# ------------------------------------------------------------------ STE

def test_ste_example():
    np.testing.assert_array_equal(ste_weights(_whole(np.array([0.0, 1, 0, 0])), SteParams(0, 2)), [0, 0, 1, 1])


def test_ste_zero_and_constant():
    assert not ste_weights(_whole(np.zeros(50))).any()
    w = ste_weights(_whole(np.full(50, 0.5)), SteParams(0, 12))
    np.testing.assert_allclose(w[12:], 12 * 0.25)


def test_ste_uses_parent_history():
    x = np.arange(1.0, 21.0)
    win = AnalysisWindow(10, 10, Waveform(x, FS))
    w = ste_weights(win, SteParams(1, 3))
    # first in-window sample n=10: sum of x[6..8]^2 (k = 2..4)
    assert w[0] == pytest.approx(7**2 + 8**2 + 9**2)


@given(st.floats(0.01, 100))
@settings(max_examples=25)
def test_ste_argmax_scale_invariant(c):
    x = np.random.default_rng(5).standard_normal(300)
    a = ste_weights(_whole(x))
    b = ste_weights(_whole(c * x))
    assert np.argmax(a) == np.argmax(b)
    np.testing.assert_allclose(b, c * c * a, rtol=1e-9)


def test_ste_params_validate():
    with pytest.raises(ValueError):
        SteParams(0, 0)


# --------------------------------------------------------------- residual

def test_residual_weights_low_at_gcis(modal_vowel):
    w = residual_weights(AnalysisWindow.whole(modal_vowel.waveform))
    g = modal_vowel.epochs
    assert w.min() >= 1e-5 and w.max() <= 1.0
    for start, t0 in zip(g.instants[:-1], g.periods()[:-1]):
        assert w[start] < np.median(w[start: start + t0])


def test_residual_weights_white_noise_aperiodic():
    x = np.random.default_rng(9).standard_normal(4000)
    w = residual_weights(_whole(x))
    w = w - w.mean()
    lag = 67
    r = np.dot(w[:-lag], w[lag:]) / np.dot(w, w)
    assert abs(r) < 0.3


def test_residual_weights_silence_uniform():
    np.testing.assert_array_equal(residual_weights(_whole(np.zeros(400))), 1.0)
    np.testing.assert_array_equal(residual_weights(_whole(np.full(400, 0.2))), 1.0)


# ------------------------------------------------------------------- QCP

def test_qcp_geometry_t0_100():
    g = GciSequence(np.arange(0, 1000, 100), FS, 1000)
    w = qcp_weight_signal(1000, g, QcpParams(0.05, 0.8, 3, 1e-5))
    for start in range(0, 900, 100):
        cyc = w[start: start + 100]
        low = np.sum(cyc < 0.5)
        assert abs(low - 20) <= 2 * 3
        assert np.sum(cyc == 1.0) == 80 - 2 * 3
    assert w.min() >= 1e-5 and w.max() <= 1.0
    # weight-1 region starts after PQ*T0 plus the ramp
    assert w[5] < 0.5 and w[9] == 1.0


def test_qcp_limit_no_suppression():
    g = GciSequence(np.arange(0, 1000, 100), FS, 1000)
    w = qcp_weight_signal(1000, g, QcpParams(0.0, 1.0, 3, 1e-5))
    np.testing.assert_array_equal(w, 1.0)


def test_qcp_without_gcis_all_ones():
    win = _whole(np.ones(300))
    np.testing.assert_array_equal(qcp_weights(win, GciSequence([], FS, 300)), 1.0)
    np.testing.assert_array_equal(qcp_weights(win, None), 1.0)


def test_qcp_unvoiced_cycles_weight_one():
    g = GciSequence([0, 100, 200, 300], FS, 400, voiced=[True, False, True, True])
    w = qcp_weight_signal(400, g)
    np.testing.assert_array_equal(w[110:190], 1.0)
    assert w[0] == 1e-5


@given(
    st.integers(40, 133),
    st.floats(0.0, 0.3),
    st.floats(0.3, 1.0),
    st.integers(0, 6),
    st.sampled_from([1e-5, 1e-3, 0.1]),
)
@settings(max_examples=80)
def test_qcp_properties(t0, pq, dq, nramp, dw):
    assume(pq + dq <= 1.0)
    n = 10 * t0
    g = GciSequence(np.arange(0, n, t0), FS, n)
    w = qcp_weight_signal(n, g, QcpParams(pq, dq, nramp, dw))
    assert np.all(np.isfinite(w)) and w.min() >= dw and w.max() <= 1.0
    cyc = w[3 * t0: 4 * t0]
    frac = np.mean(cyc < 0.5)
    assert abs(frac - (1 - dq)) <= (2 * nramp + 2) / t0


def test_window_weights_dispatch():
    win = _whole(np.random.default_rng(1).standard_normal(400))
    np.testing.assert_array_equal(window_weights(win, "none"), 1.0)
    np.testing.assert_allclose(window_weights(win, "ste"), ste_weights(win))
    with pytest.raises(ValueError):
        window_weights(win, "bogus")


def test_qcp_params_validate():
    for bad in [dict(position_quotient=1.0), dict(duration_quotient=0.0), dict(ramp_samples=-1), dict(floor=0.0)]:
        with pytest.raises(ValueError):
            QcpParams(**bad)
