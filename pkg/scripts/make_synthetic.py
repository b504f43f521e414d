"""Write a folder of synthetic Y4M clips for training and analysis.

    python scripts/make_synthetic.py out_dir --count 64 --grid 1 4 4
"""
import argparse
from pathlib import Path

from skipsr import synth
from skipsr.vidio import write_y4m


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out_dir", type=Path)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--grid", type=int, nargs=3, default=(1, 4, 4), metavar=("GT", "GH", "GW"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extras", action="store_true", help="also write composite, graded and noise clips")
    args = p.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        v = synth.patchwork_video(tuple(args.grid), seed=args.seed + i)
        write_y4m(args.out_dir / f"patchwork_{i:04d}.y4m", v)
    if args.extras:
        write_y4m(args.out_dir / "composite.y4m", synth.composite_video())
        write_y4m(args.out_dir / "graded.y4m", synth.graded_composite())
        write_y4m(args.out_dir / "noise.y4m", synth.noise_video(8, 64, 64, args.seed))
    print(f"wrote {args.count} clips to {args.out_dir}")


if __name__ == "__main__":
    main()
