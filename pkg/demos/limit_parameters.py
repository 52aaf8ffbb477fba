"""Limit parameters and regimes for a few test functions.

For lambda = mu = 1 and beta = 1/2, prints the regime of h_1, h_2 and a
mixture, the series value m[g] with its truncation bound, and the first few
points of the limit characteristic function exp(theta^{1+beta} m).
"""
import numpy as np

from stablebranch import OUParams, classify_regime, compute_m_series, hermite_poly, limit_cf

ou = OUParams()  # phi = N(0, 1)
lam, beta = 1.0, 0.5
tests = {
    "h_1": hermite_poly(ou, 1),
    "h_2": hermite_poly(ou, 2),
    "h_1 + h_3/2": hermite_poly(ou, 1) + hermite_poly(ou, 3) * 0.5,
}
for name, g in tests.items():
    reg = classify_regime(ou, lam, beta, g)
    print(f"{name:12s} kappa={reg.kappa_g} regime={reg.regime} normalization={reg.normalization_descriptor}")
    par = compute_m_series(ou, lam, beta, g)
    print(f"{'':12s} m = {par.m_series:.6f}  (tail bound {par.tail_bound:.1e}, K = {par.K})")
    theta = np.linspace(0, 2, 5)
    cf = limit_cf(par.m_series, theta, beta)
    print(f"{'':12s} |cf| on [0, 2]: " + " ".join(f"{abs(v):.3f}" for v in cf))
