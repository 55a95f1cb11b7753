"""Independent reference values for the two-Gaussian theory tests.

Written against scipy only; shares no code with the C++ library. The
printed numbers are frozen into tests/test_theory.cpp. Rerun with
`python3 tests/oracles/theory_oracle.py`.
"""
import math

from scipy.optimize import minimize_scalar
from scipy.stats import norm


def robust_objective(b, d, eta, s_minus, s_plus, p_minus, r_minus, r_plus):
    sd = math.sqrt(d)
    e_minus = norm.cdf((b + r_minus * sd - sd * eta) / s_minus)
    e_plus = norm.cdf((-b + r_plus * sd - sd * eta) / s_plus)
    return p_minus * e_minus + (1 - p_minus) * e_plus


def best_bias(d, eta, sigma, K, V, r_minus, r_plus):
    s_minus, s_plus = sigma, K * sigma
    p_minus = V / (1.0 + V)
    lim = math.sqrt(d) * (eta + 3 * max(s_minus, s_plus))
    grid = [-lim + 2 * lim * i / 20000 for i in range(20001)]
    f = lambda b: robust_objective(b, d, eta, s_minus, s_plus, p_minus, r_minus, r_plus)
    b0 = min(grid, key=f)
    step = 2 * lim / 20000
    res = minimize_scalar(f, bounds=(b0 - step, b0 + step), method="bounded",
                          options={"xatol": 1e-13})
    return res.x


def class_errors(d, eta, sigma, K, b, r_minus, r_plus):
    sd = math.sqrt(d)
    s_minus, s_plus = sigma, K * sigma
    nat_m = norm.cdf((b - sd * eta) / s_minus)
    nat_p = norm.cdf((-b - sd * eta) / s_plus)
    rob_m = norm.cdf((b + r_minus * sd - sd * eta) / s_minus)
    rob_p = norm.cdf((-b + r_plus * sd - sd * eta) / s_plus)
    return nat_m, nat_p, rob_m, rob_p


def show(name, d, eta, sigma, K, V, eps, rho_minus, rho_plus):
    b = best_bias(d, eta, sigma, K, V, rho_minus * eps, rho_plus * eps)
    nm, np_, rm, rp = class_errors(d, eta, sigma, K, b, eps, eps)
    print(f"{name}: bias={b:.12f} nat_minus={nm:.12e} nat_plus={np_:.12e} "
          f"rob_minus(eps)={rm:.12e} rob_plus(eps)={rp:.12e}")


if __name__ == "__main__":
    print("Phi(-2*sqrt(2)) =", repr(norm.cdf(-2 * math.sqrt(2))))
    print("Phi(-sqrt(2)*1.8) =", repr(norm.cdf(-math.sqrt(2) * 1.8)))
    print("exp(3.24) =", repr(math.exp(3.24)))
    show("caseI K=2 eps=0.2 rho=1", 2, 2.0, 1.0, 2.0, 1.0, 0.2, 1.0, 1.0)
    show("caseI K=2 eps=0 ", 2, 2.0, 1.0, 2.0, 1.0, 0.0, 1.0, 1.0)
    show("caseII V=10 eps=0.2 rho=1", 2, 2.0, 1.0, 1.0, 10.0, 0.2, 1.0, 1.0)
    show("caseI K=3 d=3 eta=1.5 sigma=0.8 eps=0.3 rho=0.5", 3, 1.5, 0.8, 3.0, 1.0, 0.3, 1.0, 0.5)
    show("caseI K=2 combined rho_minus=-1 rho_plus=1", 2, 2.0, 1.0, 2.0, 1.0, 0.2, -1.0, 1.0)
    show("caseI K=2 rho_minus=0 rho_plus=1", 2, 2.0, 1.0, 2.0, 1.0, 0.2, 0.0, 1.0)
