"""Dual-band stabilisation of a 10 km link and its sensitivity to probe duty cycle.

The link channel measures continuously; the residual channel only sees
light for a fraction of each sequence period. The combined visibility is
the base fringe contrast reduced by the summed residual phase variance.
"""

from bayesphase.config import load_config
from bayesphase.servo import duty_cycle_sweep, run_dual_band


def main():
    cfg, _ = load_config("link_10km", ["duration=200000"])
    for est in ("mle", "bayes"):
        link, res, comb = run_dual_band(cfg.dual_band, cfg.duration, seed=0, estimator=est)
        print(f"{est:>5}: link {link.residual_variance:.4f} rad^2, residual {res.residual_variance:.4f} rad^2, "
              f"combined visibility {comb.visibility:.4f}")
    print("\nduty cycle sweep (residual channel lock losses):")
    for row in duty_cycle_sweep(cfg.dual_band, [0.005, 0.02, 0.065, 0.2], 200000, seed=1):
        print(f"  duty {row['duty_cycle']:<6} {row['estimator']:>5}: visibility {row['visibility']:.4f}, "
              f"lock losses {row['lock_losses']}")


if __name__ == "__main__":
    main()
