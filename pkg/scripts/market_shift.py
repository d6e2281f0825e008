"""Replay the scripted two-round market-shift scenario."""
import argparse

from psp_market.harness import appendix_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=0.1)
    args = ap.parse_args()
    rep = appendix_scenario(args.epsilon, args.delta)
    for j, clears in rep["steps"].items():
        for c, steps in clears.items():
            row = ", ".join(f"{s['buyer']} {s['awarded']:g}@{s['charge']:.3f}" for s in steps)
            print(f"{j} clear {c}: {row}")
    for e in rep["shifts"]:
        print(f"{e['kind']} at {e['seller']} by {e['buyer']} (overtook {e['detail'].get('overtaken')})")
    print(f"coupled rebid {rep['coupled_rebid']}; round-1 payments match: {rep['round1_match']}")


if __name__ == "__main__":
    main()
