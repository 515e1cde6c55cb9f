"""Reading off the polynomial a network computes.

Expanding a small NCP block shows which monomials of the input it can
produce. Setting every scaling vector b to zero removes them all, since
each recursion step multiplies by a b-term.
"""
import numpy as np

from pinet import BlockSpec, ModelSpec, random_model
from pinet.oracle import symbolic_expand

spec = ModelSpec((BlockSpec("ncp", N=2, d=2, k=2, o=1),), seed=0)
block = random_model(spec)

for exps, coeff in symbolic_expand(block).sorted_terms():
    print(f"z^{exps}: {coeff[0]: .6f}")

block.params.b = [np.zeros_like(v) for v in block.params.b]
block.params.beta = np.zeros_like(block.params.beta)
print("\nwith b = 0 and beta = 0 the expansion has",
      len(symbolic_expand(block)), "terms")
