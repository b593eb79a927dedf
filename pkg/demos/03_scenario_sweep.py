"""Compare access scenarios across edit budgets through the full pipeline.

Writes every artifact (data, model, attack rows, report, SVG curves) under
--output-dir and prints the ARR table. A second run reuses finished stages.

Run: python3 demos/03_scenario_sweep.py --eval-size 40
"""

import argparse
import json
from pathlib import Path

from noskim import pipeline
from noskim.config import load_config


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--output-dir", default="runs/demo-sweep")
    p.add_argument("--eval-size", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = load_config(overrides={"output_dir": args.output_dir, "seed": args.seed,
                                 "attack": {"eval_size": args.eval_size}})
    pipeline.run_all(cfg)
    report = json.loads((Path(args.output_dir) / "metrics/report.json").read_text())

    origin = report["origin"]
    print(f"origin ARR {origin['arr']:.4f}  CRR {origin['crr']:.4f}")
    print(f"{'scenario':<16}" + "".join(f"  Ops={k}" for k in cfg["attack"]["budgets"]))
    rows = {}
    for r in report["per_budget"] + report["baselines"]:
        rows.setdefault(r["scenario"], []).append(r["arr"])
    for name, vals in rows.items():
        print(f"{name:<16}" + "".join(f"  {v:.4f}" for v in vals))


if __name__ == "__main__":
    main()
