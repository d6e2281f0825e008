"""Run the fixed two-seller ladder market and print its tuple report."""
import argparse
import json

from psp_market.harness import ladder_experiment, to_jsonable


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--json", help="also write the report here")
    args = ap.parse_args()
    rep = ladder_experiment()
    for t in rep["tuples"]:
        print(f"(l={t['l']}, k={t['k']}, j={t['j']}, i={t['i']}) prices={t['prices']} "
              f"margins={t['margins']} {'ok' if t['ok'] else 'VIOLATION'}")
    print(f"clearing prices {rep['clearing_prices']}; valid tuples {rep['n_valid']}, "
          f"seller pairs {rep['unique_seller_pairs']}, min margins {rep['min_margins']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(to_jsonable(rep), fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
