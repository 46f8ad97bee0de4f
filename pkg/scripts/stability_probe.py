"""Print gradient magnitudes along the stability probe paths, one column per loss.

The classification losses walk the true-class probability from 0.9 down to 1e-6;
the denoising losses shrink the output scale toward zero.
"""
import argparse

from nftlab import losses
from nftlab.gradcheck import probe_verdicts


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--every", type=int, default=11, help="print every n-th point")
    ap.add_argument("--csv", help="also write the full series here")
    args = ap.parse_args()
    probes = {k: losses.stability_probe(k) for k in losses.ALL_LOSSES}
    print("point  " + "  ".join(f"{k:>10s}" for k in losses.ALL_LOSSES))
    n = len(probes["CE"])
    for i in sorted(set(range(0, n, args.every)) | {n - 1}):
        print(f"{i:5d}  " + "  ".join(f"{probes[k][i][2]:10.3e}" for k in losses.ALL_LOSSES))
    for v in probe_verdicts(probes):
        print(f"{v.loss_id}: {v.claim}: {'yes' if v.passed else 'NO'}")
    if args.csv:
        losses.write_probe_csv([r for k in losses.ALL_LOSSES for r in probes[k]], args.csv)


if __name__ == "__main__":
    main()
