"""Run a scenario programmatically, the same pipeline the CLI uses."""

from __future__ import annotations

import sys

from gradbasis.harness import default_config, run_scenario, summary_csv

name = sys.argv[1] if len(sys.argv) > 1 else "deep_linear_thm4"
rep = run_scenario(default_config(name, seeds=[0, 1]), write=False)
sys.stdout.write(summary_csv([rep]))
print("passed:", rep["passed"])
