#!/usr/bin/env python3
"""
Run the full pipeline over several seeds and average the trajectory error.

Usage: python scripts/average_runs.py [--runs N] [--first-seed S] [--out DIR] [pipeline flags...]
"""

import json
import statistics
import subprocess
import sys
from pathlib import Path
from typing import Dict, List, Optional


def run_command(command: list, check: bool = True) -> bool:
    """Run a command with proper error handling."""
    try:
        result = subprocess.run(command, check=check, text=True)
        return result.returncode == 0
    except subprocess.CalledProcessError as e:
        print(f"Command failed with exit code {e.returncode}")
        return False
    except FileNotFoundError:
        print(f"Command not found: {command[0]}")
        return False


def take_option(args: List[str], flag: str, default: str) -> str:
    """Remove ``flag VALUE`` from args and return VALUE."""
    if flag in args:
        index = args.index(flag)
        value = args[index + 1]
        del args[index : index + 2]
        return value
    return default


def run_seed(seed: int, out: Path, extra: List[str]) -> Optional[Dict]:
    run_dir = out / f"seed_{seed:03d}"
    command = [
        sys.executable,
        "-m",
        "reloc_kit.cli.main",
        "pipeline",
        "--seed",
        str(seed),
        "--out",
        str(run_dir),
        *extra,
    ]
    print(f"🔁 Seed {seed} → {run_dir}")
    if not run_command(command, check=False):
        print(f"❌ Seed {seed} failed")
        return None
    return json.loads((run_dir / "report.json").read_text(encoding="utf-8"))


def main():
    """Main entry point."""
    args = sys.argv[1:]
    runs = int(take_option(args, "--runs", "10"))
    first_seed = int(take_option(args, "--first-seed", "1"))
    out = Path(take_option(args, "--out", "runs"))

    reports = {}
    for seed in range(first_seed, first_seed + runs):
        report = run_seed(seed, out, args)
        if report is not None:
            reports[seed] = report

    if not reports:
        print("❌ No run finished")
        sys.exit(1)

    drift = [r["ate_drift"] for r in reports.values()]
    optimized = [r["ate_optimized"] for r in reports.values()]
    improved = sum(1 for d, o in zip(drift, optimized) if o < d)
    summary = {
        "runs": len(reports),
        "failed": runs - len(reports),
        "ate_drift_mean": statistics.fmean(drift),
        "ate_optimized_mean": statistics.fmean(optimized),
        "ate_optimized_stdev": statistics.pstdev(optimized),
        "improved": improved,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "average.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    print("")
    print(f"📊 {len(reports)} runs averaged")
    print(f"   ATE drift     {summary['ate_drift_mean']:.4f} m")
    print(f"   ATE optimized {summary['ate_optimized_mean']:.4f} m (±{summary['ate_optimized_stdev']:.4f})")
    print(f"   Improved in {improved}/{len(reports)} runs")
    print("✅ Done")


if __name__ == "__main__":
    main()
