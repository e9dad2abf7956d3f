"""Print RMSE / CRLB ratios from a Monte Carlo CSV written by ``rgbvlp mc-*``.

    python scripts/mc_summary.py results/fig5_mc_distance.csv
"""

import csv
import sys


def summarize(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'value':>12} {'estimator':>9} {'crlb_m':>11} {'rmse_m':>11} {'ratio':>7} {'edge':>5} {'err':>4}")
    for r in rows:
        crlb, rmse = float(r["crlb_rmse_m"]), float(r["mc_rmse_m"])
        print(
            f"{r['value']:>12} {r['estimator']:>9} {crlb:11.4e} {rmse:11.4e} "
            f"{rmse / crlb:7.3f} {r['boundary_hits']:>5} {r['error_trials']:>4}"
        )


if __name__ == "__main__":
    for p in sys.argv[1:] or ["results/fig5_mc_distance.csv"]:
        summarize(p)
