"""AOG against AOT: the same benchmark with and without collaborative edges.

    python3 scripts/ablation.py --out runs/ablation
"""
import argparse
import json
import os
from pathlib import Path

from benchmark import ROOT, pipeline

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "benchmark.json")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "ablation")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()

    base = json.loads(args.config.read_text())
    results = {}
    for name, edges in [("aog", True), ("aot", False)]:
        cfg = json.loads(json.dumps(base))
        cfg.setdefault("model", {})["use_edges"] = edges
        out = args.out / name
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.json"
        path.write_text(json.dumps(cfg, indent=1) + "\n")
        print(f"== {name}")
        results[name] = pipeline(path, out, args.seed, args.threads)
    print(json.dumps(results, indent=1))
    print(f"AP  aog {results['aog']['ap']:.4f}  aot {results['aot']['ap']:.4f}")
