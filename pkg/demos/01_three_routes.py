"""One function, three descriptions.

A third-order CCP block is evaluated three ways: by its recursion, from the
explicit weight tensors W[1..3] built out of Khatri-Rao products, and from
its monomial expansion. The numbers should agree to rounding error.
"""
import numpy as np

from pinet import BlockSpec, ModelSpec, random_model
from pinet.oracle import build_ccp_tensors, explicit_eval, symbolic_expand

spec = ModelSpec((BlockSpec("ccp", N=3, d=2, k=2, o=1),), seed=3)
block = random_model(spec)
tensors = build_ccp_tensors(block.params)
poly = symbolic_expand(block)

print("weight tensor shapes:", [w.shape for w in tensors.W])
print(f"{len(poly)} monomials, total degree {poly.degree}\n")

z = np.array([0.3, -1.1])
print("recursive :", block(z))
print("explicit  :", explicit_eval(tensors, z))
print("symbolic  :", poly(z))
