"""End-to-end acceptance: the bias experiment script must separate a
blob-biased model from an unbiased one in at least 4 of 5 seeds, on both
the variance/top-class check and the failure-prediction check.

Trains ten small CNNs, so this is by far the slowest test in the suite
(about two minutes on a laptop CPU).
"""

import json
import subprocess
import sys
import time
from pathlib import Path

SCRIPT = Path(__file__).resolve().parents[2] / "scripts" / "run_bias_experiment.py"


def test_bias_experiment_end_to_end(tmp_path):
    start = time.monotonic()
    proc = subprocess.run(
        [sys.executable, str(SCRIPT), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    elapsed = time.monotonic() - start
    assert proc.returncode == 0, proc.stdout + proc.stderr
    results = json.loads((tmp_path / "results.json").read_text())

    n_seeds = len(results["seeds"])
    tracking = sum(
        s["variance_separates"] and s["designated_class_on_top"]
        for s in results["seeds"]
    )
    failure = sum(s["failure_prediction"] for s in results["seeds"])
    print(f"ACCEPTANCE bias_tracking ({tracking}/{n_seeds}): "
          f"{'PASS' if tracking >= n_seeds - 1 else 'FAIL'}")
    print(f"ACCEPTANCE failure_prediction ({failure}/{n_seeds}): "
          f"{'PASS' if failure >= n_seeds - 1 else 'FAIL'}")
    assert tracking >= n_seeds - 1
    assert failure >= n_seeds - 1
    assert elapsed < 1800
