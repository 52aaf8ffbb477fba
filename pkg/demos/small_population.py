"""How often does the population stay small?

Compares the simulated P(|X_t| <= e^{lambda t/2}) with the exact value from the
count chain's forward equation, for a law without single-child mass (m = 3)
and one with p_1 = 1/2 (m = 2).  For m = 2 the predicted exponent has to be
thinned by (1 - p_1) to match.
"""
import math

from stablebranch import build_offspring_law
from stablebranch.verify import exact_small_population_probability, small_population_check

t = 8.0
for m, a in ((3.0, 0.5), (2.0, 1.0)):
    law = build_offspring_law(m, 0.5, a=a)
    f = math.exp(law.lam * t / 2)
    r = small_population_check(law, t, f, 200_000, seed=3)
    exact = exact_small_population_probability(law, t, int(f))
    print(f"m={m:g} p_1={law.p1:.2f}: simulated {r.probability:.4f}, exact {exact:.4f}, "
          f"log P {r.log_probability:.3f}, predicted {r.predicted_log:.1f} (thinned {r.predicted_log_thinned:.1f})")
