"""Run the Lorenz pipeline on X and -X and print the mirrored margins side by side."""
import argparse

from starverify.hyperbolicity import analyze_class

from _common import LORENZ_REGION, lorenz_setup, records


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=float, default=5.0)
    ap.add_argument("--samples", type=int, default=10_000)
    a = ap.parse_args()

    spec, g, recs = lorenz_setup()
    neg = spec.negated()
    reps = []
    for sp, gr, rr in ((spec, g, recs), (neg, g.reversed(), records(neg, LORENZ_REGION))):
        reps.append(analyze_class(sp, gr.box_set(gr.classes[0]), rr, T=a.horizon, samples=a.samples,
                                  swap_sides=True))
    x, y = reps
    print(f"X : {x.label}  s={x.s}")
    print(f"-X: {y.label}  s={y.s}")
    for p, q in (("dom", "dom"), ("contractE", "expandF"), ("expandF", "contractE"), ("sectional", "sectional")):
        print(f"{p:10s} {x.margins[p]:12.6f}   -X {q:10s} {y.margins[q]:12.6f}   diff {x.margins[p] - y.margins[q]:.1e}")
    for r in recs:
        print(f"sigma {r.ident}: s={r.stable_index} sv={r.saddle_value:.4f}")


if __name__ == "__main__":
    main()
