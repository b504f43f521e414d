"""Wall-clock comparison of the transformer variants at several skip fractions."""
import argparse

from skipsr import pipeline
from skipsr.skipdit import VARIANTS, DiTConfig, estimated_speedup


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grid", type=int, nargs=3, default=(16, 32, 32))
    p.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.2, 0.4, 0.6])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    args = p.parse_args()
    cfg = DiTConfig(dtype="float32")
    rows = pipeline.profile_variants(tuple(args.grid), args.fractions, args.variants,
                                     args.repeats, cfg)
    print(f"{'variant':<20} {'skip':>5} {'mean_s':>8} {'std_s':>7} {'speedup':>8} {'flop est':>8}")
    for r in rows:
        mask = pipeline.fraction_mask(tuple(args.grid), r["skip_fraction"])
        est = estimated_speedup(tuple(args.grid), mask.bits, cfg, 48) if r["variant"] == "full_skip" else None
        sp = r["speedup_vs_dense"]
        print(f"{r['variant']:<20} {r['skip_fraction']:>5.2f} {r['mean_s']:>8.3f} {r['std_s']:>7.3f} "
              f"{'-' if sp is None else f'{sp:.2f}x':>8} {'-' if est is None else f'{est:.2f}x':>8}")


if __name__ == "__main__":
    main()
