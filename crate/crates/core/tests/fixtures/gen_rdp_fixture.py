"""Regenerates rdp_oracle.json: per-step RDP of the Poisson-subsampled
Gaussian mechanism by direct summation at 80 significant digits.

    python3 gen_rdp_fixture.py > rdp_oracle.json
"""
import json

import mpmath

mpmath.mp.dps = 80


def rdp(q, sigma, alpha):
    q = mpmath.mpf(q)
    s2 = mpmath.mpf(sigma) ** 2
    total = mpmath.mpf(0)
    for k in range(alpha + 1):
        total += (
            mpmath.binomial(alpha, k)
            * (1 - q) ** (alpha - k)
            * q**k
            * mpmath.exp(mpmath.mpf(k * (k - 1)) / (2 * s2))
        )
    return mpmath.log(total) / (alpha - 1)


cases = []
for q in ["0.001", "0.01", "0.1"]:
    for sigma in ["0.5", "1", "2", "5"]:
        for alpha in range(2, 65):
            cases.append(
                {
                    "q": float(q),
                    "sigma": float(sigma),
                    "alpha": alpha,
                    "rdp": mpmath.nstr(rdp(q, sigma, alpha), 30),
                }
            )
print(json.dumps({"cases": cases}, indent=1))
