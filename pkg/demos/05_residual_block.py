"""Turning a residual block into a polynomial.

Choosing the skip matrices V = I + S in NCP-Skip gives the second-order
residual form x + S x + (A^T z) * (S^T x + B^T b). The recursion and the
hand-written update agree.
"""
import numpy as np

from pinet import BlockSpec, ModelSpec, random_model
from pinet.polynet import ncp_skip_forward, polynomialize_residual

spec = ModelSpec((BlockSpec("ncp_skip", N=3, d=2, k=3, o=1),), seed=5)
p = polynomialize_residual(random_model(spec).params)
z = np.array([0.5, -0.25])

x = (p.A[0].T @ z) * (p.B[0].T @ p.b[0])
for n in range(1, p.N):
    S = p.S[n - 1]
    x = x + S @ x + (p.A[n].T @ z) * (S.T @ x + p.B[n].T @ p.b[n])

print("recursion   :", ncp_skip_forward(p, z))
print("by hand     :", p.C @ x + p.beta)
