"""Skipped fraction and swap PSNR across thresholds on the synthetic corpus."""
import argparse

import numpy as np

from skipsr import pipeline, synth


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--taus", type=float, nargs="+", default=list(np.logspace(-6, -1, 11)))
    p.add_argument("--patchwork", type=int, default=4, help="number of patchwork clips")
    args = p.parse_args()
    videos = {"composite": synth.composite_video(), "graded": synth.graded_composite()}
    videos.update({f"patchwork{s}": synth.patchwork_video((2, 4, 4), seed=s)
                   for s in range(args.patchwork)})
    print(f"{'video':<12} {'tau':>10} {'skipped%':>9} {'psnr':>7}")
    for name, v in videos.items():
        for row in pipeline.sweep_video(v, args.taus):
            print(f"{name:<12} {row['tau']:>10.2e} {row['skipped_pct']:>9.2f} {row['swap_psnr']:>7.2f}")


if __name__ == "__main__":
    main()
