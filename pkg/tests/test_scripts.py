import subprocess
import sys
from pathlib import Path

from tvqcp.signal_io import Label, save_waveform, write_labels, write_track_csv
from tvqcp.synthlab import make_utterance, synthesize_vowel

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "vtr_calibration.py"


def test_vtr_calibration_runs_on_converted_layout(tmp_path):
    for k in range(2):
        syn = synthesize_vowel(make_utterance(k, duration_s=0.5).vowel, "modal", seed=k)
        save_waveform(tmp_path / f"u{k}.wav", syn.waveform)
        write_track_csv(tmp_path / f"u{k}.csv", syn.truth)
    write_labels(tmp_path / "u0.tsv", [Label(0.0, 0.3, "vowel"), Label(0.3, 0.5, "fricative")])
    out = tmp_path / "summary.csv"
    r = subprocess.run([sys.executable, str(SCRIPT), str(tmp_path), "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "2 utterances" in r.stdout and "band" in r.stdout
    assert out.read_text().startswith("condition,fdr1")


def test_vtr_calibration_empty_root(tmp_path):
    r = subprocess.run([sys.executable, str(SCRIPT), str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 1
