"""Empirical size of the cumulative and window statistics on null streams.

Writes tidy and summary CSVs per (censoring level, transform) to the
output directory and prints the rejection-rate range over k >= 5.
"""
import argparse

from onlineph.sim import SimConfig, default_output_dir, size_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=500)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--n-k", type=int, default=1000)
    ap.add_argument("--epsilon", type=float, nargs="+", default=[0.9, 0.1])
    ap.add_argument("--transforms", nargs="+", default=["identity", "km"])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=20190521)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    out = args.out or default_output_dir()

    for eps in args.epsilon:
        cfg = SimConfig(K=args.K, n_k=args.n_k, epsilon=eps, replicates=args.replicates,
                        workers=args.workers, seed=args.seed)
        for kind, curve in size_experiment(cfg, args.transforms).items():
            curve.write_csv(out, f"size_eps{eps:g}")
            for version in ("cumulative", "window"):
                rate = curve.rates(version)[0][4:]
                print(f"eps={eps:g} {kind.value:8s} {version:10s} "
                      f"rate over k>=5 in [{rate.min():.3f}, {rate.max():.3f}], mean {rate.mean():.4f}")


if __name__ == "__main__":
    main()
