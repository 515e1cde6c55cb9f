"""Stacking blocks multiplies their orders.

Three order-2 blocks in sequence give a degree-8 polynomial. The finite
difference probe (exact rational arithmetic along a random line) and the
symbolic expansion both confirm it.
"""
from pinet import BlockSpec, ModelSpec, random_model
from pinet.oracle import degree_check, symbolic_expand

blocks = tuple(BlockSpec("ncp", N=2, d=2, k=2, o=2) for _ in range(3))
chain = random_model(ModelSpec(blocks), seed=1)

print("nominal order   :", chain.order)
print("probed degree   :", degree_check(chain, max_probe=10).degree)
print("symbolic degree :", symbolic_expand(chain).degree)
