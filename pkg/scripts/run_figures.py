"""Regenerate every figure table under results/ from the presets in configs/.

    python scripts/run_figures.py              # bounds and Monte Carlo
    python scripts/run_figures.py --bounds     # bounds only, a few seconds
    python scripts/run_figures.py --trials 20  # quick Monte Carlo preview
"""

import argparse
import sys
import time
from pathlib import Path

from rgbvlp.cli import main as rgbvlp

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

PRESETS = {
    "fig2_crlb_vs_power.yaml": "crlb-distance",
    "fig3_crlb_vs_fc.yaml": "crlb-distance",
    "fig3_crlb_vs_duration.yaml": "crlb-distance",
    "fig4_crlb_vs_distance.yaml": "crlb-distance",
    "fig6_crlb_position_vs_fc.yaml": "crlb-position",
    "fig7_crlb_position_vs_duration.yaml": "crlb-position",
    "fig5_mc_distance.yaml": "mc-distance",
    "fig8_mc_position.yaml": "mc-position",
}


def run(bounds_only=False, trials=None):
    status = 0
    for name, command in PRESETS.items():
        if bounds_only and command.startswith("mc-"):
            continue
        argv = [command, "--config", str(CONFIGS / name)]
        if trials is not None and command.startswith("mc-"):
            argv += ["--trials", str(trials)]
        t0 = time.perf_counter()
        status |= rgbvlp(argv)
        print(f"  {name}: {time.perf_counter() - t0:.1f} s")
    return status


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bounds", action="store_true", help="skip the Monte Carlo presets")
    ap.add_argument("--trials", type=int, default=None, help="override the Monte Carlo trial count")
    args = ap.parse_args()
    sys.exit(run(args.bounds, args.trials))
