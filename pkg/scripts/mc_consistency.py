"""Monte Carlo estimates of f_n and F_n against the series for every preset with a kernel."""

import argparse

from kernelpf.series import compute_fn, compute_Fn
from kernelpf.sim import build_preset, estimate_series

PRESETS = ("split-chain", "linear-fractional", "pure-atom", "analytic-example")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--replicates", type=int, default=100_000)
    p.add_argument("--N", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    for name in PRESETS:
        preset = build_preset(name)
        batch = estimate_series(preset, args.replicates, args.N, args.seed)
        f, F = compute_fn(preset.kernel, args.N), compute_Fn(preset.kernel, args.N)
        print(f"{name} ({args.replicates} replicates, {batch.explosions} exploded, {batch.censored} censored)")
        print(f"  {'n':>3} {'f_n':>10} {'f_hat':>10} {'z':>6} {'F_n':>10} {'F_hat':>10} {'z':>6}")
        for n in range(1, args.N + 1):
            zf = (batch.f_hat[n - 1] - f[n]) / batch.f_se[n - 1] if batch.f_se[n - 1] > 0 else 0.0
            zF = (batch.F_hat[n - 1] - F[n]) / batch.F_se[n - 1] if batch.F_se[n - 1] > 0 else 0.0
            print(f"  {n:3d} {f[n]:10.6f} {batch.f_hat[n - 1]:10.6f} {zf:+6.2f} "
                  f"{F[n]:10.6f} {batch.F_hat[n - 1]:10.6f} {zF:+6.2f}")


if __name__ == "__main__":
    main()
