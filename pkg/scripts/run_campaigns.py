"""Run the bundled campaign configs and write CSV/JSON reports.

    python3 scripts/run_campaigns.py --out results --replicas 200 --only vacant_law
"""
import argparse
import glob
import os
import time

from interlace.experiments import ExperimentConfig, run

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="*", help="config names without .json")
    ap.add_argument("--replicas", type=int, help="override the replica count (smoke runs)")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    for path in sorted(glob.glob(os.path.join(HERE, "configs", "*.json"))):
        name = os.path.splitext(os.path.basename(path))[0]
        if args.only and name not in args.only:
            continue
        cfg = ExperimentConfig.from_file(path)
        cfg.workers = args.workers
        if args.replicas is not None:
            cfg.replicas = args.replicas
            cfg.chunk = min(cfg.chunk, args.replicas)
        cfg.validate()
        t0 = time.time()
        csv_path, _ = run(cfg).write(os.path.join(args.out, name))
        print(f"{name}: {csv_path} ({time.time() - t0:.1f} s)")


if __name__ == "__main__":
    main()
