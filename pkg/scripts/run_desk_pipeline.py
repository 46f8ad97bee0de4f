"""Run pretrain -> protect -> attack -> report for one config and time each stage.

    python3 scripts/run_desk_pipeline.py configs/desk_classification.yaml runs/cls
"""
import argparse
import sys
import time

from nftlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("--profile", default="desk", choices=("desk", "paper"))
    ap.add_argument("--strict", action="store_true", help="exit 3 if any verdict fails")
    args = ap.parse_args()
    stages = [
        ["pretrain", "--config", args.config, "--profile", args.profile],
        ["protect"],
        ["attack"],
        ["attack", "--scratch"],
        ["report"] + (["--strict"] if args.strict else []),
    ]
    for argv in stages:
        start = time.perf_counter()
        code = cli.main(argv + ["--out", args.out])
        print(f"# {' '.join(argv[:2])}: {time.perf_counter() - start:.1f}s exit={code}", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
