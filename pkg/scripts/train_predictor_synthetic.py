"""Train the skip predictor on patchwork clips and report held-out agreement."""
import argparse
import time

from skipsr import synth
from skipsr.predictor import PredictorNet, TrainConfig, predict_mask, train, training_pair


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train", type=int, default=2048)
    p.add_argument("--held", type=int, default=64)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--pos-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="save weights here")
    args = p.parse_args()

    t0 = time.perf_counter()
    train_set = [training_pair(synth.patchwork_video((1, 4, 4), seed=s)) for s in range(args.train)]
    held = [training_pair(synth.patchwork_video((1, 4, 4), seed=100_000 + s))
            for s in range(args.held)]
    net = PredictorNet.init(train_set[0][0].channels, args.width, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, seed=args.seed, pos_weight=args.pos_weight)
    net, losses = train(net, train_set, cfg)
    print(f"trained {args.steps} steps in {time.perf_counter() - t0:.1f}s, "
          f"loss {losses[0]:.4f} -> {sum(losses[-50:]) / min(50, len(losses)):.4f}")

    for thr in (0.3, 0.5, 0.7):
        hits = total = pred = orc = 0
        for x, y in held:
            m = predict_mask(net, x, thr).bits
            hits += int((m == y).sum())
            total += y.size
            pred += int(m.sum())
            orc += int(y.sum())
        print(f"threshold {thr:.1f}: acc {hits / total:.4f}, skipped {100 * pred / total:.1f}% "
              f"(oracle {100 * orc / total:.1f}%)")
    if args.out:
        net.save(args.out)
        print(f"saved {args.out}")


if __name__ == "__main__":
    main()
