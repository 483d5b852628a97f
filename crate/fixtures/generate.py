"""Regenerates the JSON fixtures in this directory.

Each subsystem is dx = (a1 x^3 + b1 nu + d (w1 + w2)) dt + 0.6 dW + 0.5 dP at
flows and x+ = a2 x^3 + b2 nu + d (w1 + w2) + 0.5 s at jumps, with s standard
Gaussian, tau = 0.1, jump gaps in {1, ..., 7} and Poisson rate 0.5.
"""

import json
from pathlib import Path

HERE = Path(__file__).parent
D = 0.001
GAUSS = [1, 0, 1, 0, 3, 0, 15, 0, 105, 0, 945, 0, 10395, 0, 135135]

CASES = {
    1: dict(a1=-0.4, b1=0.5, a2=0.01, b2=0.06, u=(0.0, 5.0),
            B=[(4, 0.0049), (3, -0.0311), (2, 0.0721), (1, -0.0734), (0, 0.0557)],
            nu=[(1, -0.05152), (0, 3.0)], nuhat=[(1, -0.06145), (0, 2.6)],
            constants=dict(kappa_bar=0.005, mu_bar=0.13, beta_bar=4.4, gamma1=0.01, gamma2=0.99,
                           phi1_bar=1e-5, phi2_bar=1e-5, eta1_bar=0.0015, eta2_bar=0.0012)),
    2: dict(a1=-0.3, b1=0.2, a2=1.01, b2=1.0, u=(-600.0, 600.0),
            B=[(4, 0.006295), (3, -0.04521), (2, 0.1213), (1, -0.1449), (0, 0.06662)],
            nu=[(3, -0.02152), (0, 4.0)], nuhat=[(3, -0.99), (0, 2.0)],
            constants=dict(kappa_bar=0.0043, mu_bar=0.12, beta_bar=4.6, gamma1=0.04547, gamma2=1.00001,
                           phi1_bar=1.7881e-5, phi2_bar=1.4408e-5, eta1_bar=0.0028, eta2_bar=0.003)),
    3: dict(a1=0.01, b1=0.7, a2=0.02, b2=0.9, u=(-600.0, 600.0),
            B=[(6, 4.868e-11), (5, 2.007e-7), (4, 0.006941), (3, -0.05582), (2, 0.1685), (1, -0.2275), (0, 0.1563)],
            nu=[(3, -0.2852), (0, 2.5)], nuhat=[(3, -0.09), (0, 3.0)],
            constants=dict(kappa_bar=0.0043, mu_bar=0.16, beta_bar=4.2, gamma1=-0.0005, gamma2=0.98,
                           phi1_bar=1.7881e-5, phi2_bar=1.4408e-5, eta1_bar=0.004, eta2_bar=0.004)),
}


def poly(variables, terms):
    return {"variables": variables, "terms": [{"exponents": e, "coeff": c} for e, c in terms]}


def univariate(terms):
    return poly(["x"], [([k], c) for k, c in terms])


def interval(var, lo, hi):
    return {"var": var, "lo": lo, "hi": hi}


def subsystem(name, case, x_box):
    p = CASES[case]
    lo, hi = x_box
    flow = ["x", "nu", "w1", "w2"]
    jump = flow + ["s"]
    return {
        "name": name,
        "f1": [poly(flow, [([3, 0, 0, 0], p["a1"]), ([0, 1, 0, 0], p["b1"]),
                           ([0, 0, 1, 0], D), ([0, 0, 0, 1], D)])],
        "sigma": [[univariate([(0, 0.6)])]],
        "rho": [[univariate([(0, 0.5)])]],
        "lambda": [0.5],
        "f2": [poly(jump, [([3, 0, 0, 0, 0], p["a2"]), ([0, 1, 0, 0, 0], p["b2"]),
                           ([0, 0, 1, 0, 0], D), ([0, 0, 0, 1, 0], D), ([0, 0, 0, 0, 1], 0.5)])],
        "tau": 0.1,
        "eps1": 1,
        "eps2": 7,
        "noise_moments": {"s": GAUSS},
        "boxes": {
            "X": [interval("x", lo, hi)],
            "X0": [interval("x", 0.0, 1.5)],
            "Xu": [interval("x", 7.0, 8.0)],
            "U": [interval("nu", *p["u"])],
            "W": [interval("w1", lo, hi), interval("w2", lo, hi)],
        },
    }


def ring(n, case, prefix):
    # neighbors i - 1 and i + 1 fill (w1, w2) in this order
    edges = []
    for i in range(n):
        edges += [{"from": (i - 1) % n, "to": i}, {"from": (i + 1) % n, "to": i}]
    subs = [subsystem(f"{prefix}{i}", case, (-8.0, 8.0)) for i in range(n)]
    return {"subsystems": subs, "edges": edges}


def cert(case):
    p = CASES[case]
    return {"B": univariate(p["B"]), "nu_flow": [univariate(p["nu"])],
            "nu_jump": [univariate(p["nuhat"])], "constants": p["constants"]}


def dump(name, doc):
    (HERE / name).write_text(json.dumps(doc, indent=1) + "\n")


for c in CASES:
    dump(f"case{c}.json", {"subsystems": [subsystem(f"case{c}", c, (0.0, 8.0))], "edges": []})
    dump(f"case{c}_cert.json", cert(c))
    dump(f"ring3_case{c}.json", ring(3, c, f"c{c}_"))
dump("ring10.json", ring(10, 1, "room"))
