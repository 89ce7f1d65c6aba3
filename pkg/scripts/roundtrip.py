"""Generate a synthetic Heston surface from a 3-segment schedule, calibrate it cold and warm.

Prints per-seed vol-MSE, summed objective and GA generations per slice.

    python3 scripts/roundtrip.py --seeds 3
"""

import argparse
import json
import tempfile
from pathlib import Path

import numpy as np

from volcal import io
from volcal.cli import main

TRUE = {
    "model": "heston",
    "market": {"spot": 100.0, "rate": 0.01},
    "breakpoints": [0.25, 0.5],
    "segments": [
        {"kappa": 2.0, "theta": 0.04, "sigma": 0.35, "rho": -0.6, "v0": 0.05},
        {"kappa": 1.5, "theta": 0.06, "sigma": 0.4, "rho": -0.5},
        {"kappa": 1.0, "theta": 0.08, "sigma": 0.35, "rho": -0.7},
    ],
}


def run(work: Path, surface: Path, name: str, config: dict, seed: int) -> dict:
    cfg = work / f"{name}.json"
    cfg.write_text(json.dumps(config))
    code = main(["calibrate", str(surface), "--config", str(cfg), "--out", str(work / name), "--seed", str(seed)])
    if code != 0:
        raise SystemExit(f"calibration {name} exited with {code}")
    return io.read_json(work / name / "result.json")


def summary(res: dict) -> str:
    resid = np.concatenate([np.asarray(r, dtype=float) for r in res["residuals"]])
    gens = [d["generations"] for d in res["optimizer_diagnostics"]]
    return f"vol-MSE {np.mean(resid**2):.2e}  summed {res['total_objective']:.2e}  generations {gens}"


def main_():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--population", type=int, default=30)
    ap.add_argument("--generations", type=int, default=200)
    ap.add_argument("--stall", type=int, default=10)
    ap.add_argument("--tol", type=float, default=1e-9)
    ap.add_argument("--moneyness", default="-0.33,-0.165,0,0.165,0.33")
    ap.add_argument("--maturities", default="0.25,0.5,1.0")
    ap.add_argument("--workdir", help="keep outputs here instead of a temp dir")
    args = ap.parse_args()

    work = Path(args.workdir or tempfile.mkdtemp(prefix="volcal_rt_"))
    work.mkdir(parents=True, exist_ok=True)
    (work / "true.json").write_text(json.dumps(TRUE))
    surface = work / "surface.csv"
    main(["surface", str(work / "true.json"), "--maturities", args.maturities, f"--std-moneyness={args.moneyness}", "--out", str(surface)])
    config = {
        "model": "heston",
        "market": TRUE["market"],
        "bounds": {"kappa": [0.5, 5.0], "theta": [0.01, 0.2], "sigma": [0.1, 1.0], "rho": [-0.95, 0.0], "v0": [0.01, 0.2]},
        "ga": {
            "population_size": args.population,
            "max_generations": args.generations,
            "max_stall_generations": args.stall,
            "fitness_tolerance": args.tol,
        },
        "ps": {"mesh_tolerance": 1e-7, "max_iterations": 300},
    }
    print(f"outputs in {work}")
    for seed in range(args.seeds):
        cold = run(work, surface, f"cold{seed}", config, seed)
        warm_cfg = {**config, "warm_start_path": str(work / f"cold{seed}" / "result.json")}
        warm = run(work, surface, f"warm{seed}", warm_cfg, seed)
        print(f"seed {seed} cold: {summary(cold)}")
        print(f"seed {seed} warm: {summary(warm)}")


if __name__ == "__main__":
    main_()
