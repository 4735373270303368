"""Replay the scripted life record and print each generation of the stem."""

from kernelpf.sim import FIGURE1_SCRIPT, build_preset, simulate_life_record


def main() -> None:
    for gen, row in enumerate(FIGURE1_SCRIPT, start=1):
        kids = sum(k for k, _ in row)
        clusters = sum(c for _, c in row)
        print(f"generation {gen}: {len(row)} stem particles, {kids} births on the stem, X_{gen} = {clusters}")
    rec = simulate_life_record(build_preset("figure1"), seed=0, horizon=20)
    print(f"X = {tuple(int(v) for v in rec.X[: rec.L])}, L = {rec.L}, censored = {rec.censored}")


if __name__ == "__main__":
    main()
