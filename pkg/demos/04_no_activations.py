"""Non-linear tasks without elementwise activations.

XOR is not linearly separable, and z1*z2 is not affine. A second-order CCP
block solves both exactly; the first-order (linear) block cannot, and on the
regression task it stalls at the least-squares floor.
"""
from pinet import BlockSpec, ModelSpec
from pinet.data import affine_residual, gen_product, gen_xor
from pinet.train import TrainConfig, train_loop


def fit(N, data, cfg, o):
    spec = ModelSpec((BlockSpec("ccp", N, d=2, k=4, o=o),), seed=0)
    return train_loop(spec, data, cfg)[1].rows[-1]


xor = gen_xor(1)
cfg = TrainConfig(epochs=200, batch_size=4, lr=0.1, momentum=0.9)
for N in (1, 2):
    print(f"XOR, N={N}: train accuracy {fit(N, xor, cfg, 2)['train_acc']:.2f}")

prod = gen_product(0, 256)
cfg = TrainConfig(epochs=1000, batch_size=256, lr=0.2, momentum=0.9)
print(f"\nz1*z2 affine floor: {affine_residual(prod):.5f}")
for N in (1, 2):
    print(f"z1*z2, N={N}: train MSE {fit(N, prod, cfg, 1)['train_loss']:.3e}")
