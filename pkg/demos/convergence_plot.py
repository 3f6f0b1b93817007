"""Run the experiment in ``convergence.ini`` through the CLI and plot it.

Writes CSV traces, ``manifest.json`` and ``gap.svg`` under
``results/convergence`` (or ``$SLPQN_OUTPUT_DIR`` when set).
"""
from pathlib import Path

from slpqn.cli import main

here = Path(__file__).parent
out = Path("results/convergence")
if main(["run", "--config", str(here / "convergence.ini"), "--jobs", "2", "--out", str(out)]) != 0:
    raise SystemExit("run failed")
main(["plot", str(out / "manifest.json"), "--output", str(out / "gap.svg")])
print(f"wrote {out / 'gap.svg'}")
