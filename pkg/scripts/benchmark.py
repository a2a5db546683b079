"""Synthetic benchmark: synth, train, detect and eval through the CLI.

    python3 scripts/benchmark.py --out runs/bench
    python3 scripts/benchmark.py --config configs/benchmark.json --seed 7 --threads 4
"""
import argparse
import json
import os
import time
from pathlib import Path

from aogshape.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(step, argv):
    t0 = time.perf_counter()
    code = main(argv)
    dt = time.perf_counter() - t0
    print(f"{step:<7} exit {code}  {dt:7.1f} s")
    if code:
        raise SystemExit(code)
    return dt


def pipeline(config: Path, out: Path, seed: int, threads: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    g = ["--config", str(config), "--seed", str(seed), "--threads", str(threads)]
    data, model = out / "data", out / "model.aog"
    times = {
        "synth": run("synth", g + ["synth", "--out", str(data)]),
        "train": run("train", g + ["train", "--manifest", str(data / "manifest.json"), "--out", str(model),
                                   "--report", str(out / "train.json")]),
        "detect": run("detect", g + ["detect", "--model", str(model), "--input", str(data / "manifest.json"),
                                     "--out", str(out / "detections.txt")]),
        "eval": run("eval", g + ["eval", "--detections", str(out / "detections.txt"),
                                 "--manifest", str(data / "manifest.json"), "--csv-prefix", str(out / "curve"),
                                 "--pr-svg", str(out / "pr.svg"), "--json", str(out / "metrics.json")]),
    }
    metrics = json.loads((out / "metrics.json").read_text())
    train = json.loads((out / "train.json").read_text())
    return {"ap": metrics["ap"], "iterations": train["n_iterations"], "converged": train["converged"],
            "seconds": times}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "benchmark.json")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "bench")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    res = pipeline(args.config, args.out, args.seed, args.threads)
    print(json.dumps(res, indent=1))
