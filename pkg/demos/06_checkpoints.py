"""Checkpoints are deterministic and self-checking.

Two runs with the same seed write identical bytes. Flipping a single bit
is caught by the trailing checksum.
"""
import tempfile
from pathlib import Path

from pinet import BlockSpec, ModelSpec
from pinet.data import gen_xor
from pinet.formats import IntegrityError, decode_checkpoint, encode_checkpoint
from pinet.train import TrainConfig, train_loop

spec = ModelSpec((BlockSpec("ccp", N=2, d=2, k=4, o=2),), seed=0)
cfg = TrainConfig(epochs=50, batch_size=2, lr=0.1, seed=7)
blobs = [encode_checkpoint(spec, train_loop(spec, gen_xor(1), cfg)[0]) for _ in range(2)]
print("identical bytes across runs:", blobs[0] == blobs[1])

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.ckpt"
    path.write_bytes(blobs[0])
    damaged = bytearray(path.read_bytes())
    damaged[60] ^= 1
    try:
        decode_checkpoint(bytes(damaged))
    except IntegrityError as exc:
        print("corruption detected:", exc)
