import hashlib
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinet.formats import (IntegrityError, SpecError, decode_checkpoint, encode_checkpoint,
                           format_spec, load_checkpoint, parse_spec, save_checkpoint)
from pinet.polynet import BlockSpec, ModelSpec, NormalizationSpec, init_params

GOLDEN = Path(__file__).parent / "data" / "golden_ncp.ckpt"
GOLDEN_SHA256 = "ded27584d7a88d989df32d7bad85d45a266bc5ea61102ee593b27ce55f054ab6"


def golden_spec():
    return ModelSpec((BlockSpec("ncp", 2, 2, 2, 1, omega=3),), seed=7)


def test_parse_single_block():
    spec = parse_spec("""
        # a comment
        variant = ccp
        N = 3
        d = 2
        k = 4    # rank
        o = 1
        seed = 11
    """)
    assert spec.blocks == (BlockSpec("ccp", 3, 2, 4, 1),)
    assert spec.seed == 11 and not spec.is_chain


def test_parse_chain():
    spec = parse_spec("""
        variant = chain
        d = 3
        block = ncp N=2 k=4 o=2 omega=5
        block = ccp N=3 k=2 o=1 normalization=tanh
        inner_bias = true
    """)
    a, b = spec.blocks
    assert (a.d, a.o, a.w) == (3, 2, 5)
    assert (b.d, b.N, b.norm.mode) == (2, 3, "tanh")
    assert spec.inner_bias


@pytest.mark.parametrize("text,match", [
    ("variant = ccp\nN = 2\nk = 2\no = 1\n", "missing 'd'"),
    ("variant = ccp\nN = 2\nd = 0\nk = 2\no = 1\n", "positive"),
    ("variant = mlp\nN = 2\nd = 2\nk = 2\no = 1\n", "variant"),
    ("variant = ccp\nN = two\nd = 2\nk = 2\no = 1\n", "integer"),
    ("variant = ccp\nN = 2\nd = 2\no = 1\n", "'k'"),
    ("variant = ccp\nd = 2\nd = 3\n", "duplicate"),
    ("variant = ccp\nN 2\n", "line 2"),
    ("variant = chain\nd = 2\n", "no blocks"),
    ("variant = chain\nd = 2\nblock = ccp N=2 k=2 o=1 junk\n", "line 3"),
    ("variant = ccp\nN = 2\nd = 2\nk = 2\no = 1\nnormalization = batch\n", "normalization"),
])
def test_parse_errors(text, match):
    with pytest.raises(SpecError, match=match):
        parse_spec(text)


specs = st.builds(
    lambda variant, N, d, k, o, omega, norm, seed: ModelSpec(
        (BlockSpec(variant, N, d, k, k if variant == "simple" else o,
                   omega if variant.startswith("ncp") else None, NormalizationSpec(norm)),),
        seed=seed),
    st.sampled_from(["ccp", "ncp", "ncp_skip", "simple"]), st.integers(1, 5), st.integers(1, 6),
    st.integers(1, 6), st.integers(1, 4), st.one_of(st.none(), st.integers(1, 4)),
    st.sampled_from(["none", "tanh", "standardize"]), st.integers(0, 2**32))


@settings(max_examples=50, deadline=None)
@given(spec=specs)
def test_spec_round_trip(spec):
    assert parse_spec(format_spec(spec)) == spec


def test_chain_spec_round_trip():
    spec = ModelSpec((BlockSpec("ncp", 2, 3, 4, 2, 5), BlockSpec("simple", 3, 2, 2, 2)),
                     seed=3, inner_bias=True)
    assert parse_spec(format_spec(spec)) == spec


def _reference_encode(spec_text: str, tensors: dict) -> bytes:
    # written straight from the layout description, independent of the encoder
    body = b"PINET1\n" + struct.pack("<I", 1)
    sb = spec_text.encode()
    body += struct.pack("<I", len(sb)) + sb
    for name, arr in tensors.items():
        nb = name.encode()
        body += struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim)
        for e in arr.shape:
            body += struct.pack("<Q", e)
        for v in arr.ravel(order="C"):
            body += struct.pack("<d", float(v))
    digest = hashlib.blake2b(body, digest_size=8).digest()
    return body + digest


@pytest.mark.parametrize("variant", ["ccp", "ncp", "ncp_skip", "simple"])
def test_encoder_matches_reference_layout(variant):
    spec = ModelSpec((BlockSpec(variant, 3, 2, 3, 3 if variant == "simple" else 2),), seed=1)
    model = init_params(spec)
    tensors = {k: np.asarray(v) for k, v in model.named().items()}
    assert encode_checkpoint(spec, model) == _reference_encode(format_spec(spec), tensors)


@pytest.mark.parametrize("spec", [
    golden_spec(),
    ModelSpec((BlockSpec("ccp", 2, 2, 3, 2), BlockSpec("ncp_skip", 2, 2, 2, 1)), seed=5),
])
def test_checkpoint_round_trip_is_byte_lossless(tmp_path, spec):
    model = init_params(spec)
    path = tmp_path / "m.ckpt"
    blob = save_checkpoint(path, spec, model)
    spec2, model2 = load_checkpoint(path)
    assert spec2 == spec
    assert encode_checkpoint(spec2, model2) == blob
    for k, v in model.named().items():
        assert np.asarray(v).tobytes() == model2.named()[k].tobytes()


def test_golden_checkpoint():
    blob = GOLDEN.read_bytes()
    assert hashlib.sha256(blob).hexdigest() == GOLDEN_SHA256
    spec, model = decode_checkpoint(blob)
    assert spec == golden_spec()
    assert encode_checkpoint(spec, model) == blob
    # Philox draws are platform independent, so a fresh init reproduces the file
    assert encode_checkpoint(golden_spec(), init_params(golden_spec())) == blob


def test_truncated_checkpoint_rejected():
    blob = GOLDEN.read_bytes()
    for cut in (0, 5, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(IntegrityError):
            decode_checkpoint(blob[:cut])


def test_every_flipped_byte_is_detected():
    blob = bytearray(GOLDEN.read_bytes())
    for i in range(0, len(blob), 7):
        bad = bytearray(blob)
        bad[i] ^= 0x40
        with pytest.raises(IntegrityError):
            decode_checkpoint(bytes(bad))


def _reseal(body: bytes) -> bytes:
    return body + hashlib.blake2b(body, digest_size=8).digest()


def test_valid_checksum_but_wrong_tensors_rejected():
    spec = golden_spec()
    model = init_params(spec)
    tensors = {k: np.asarray(v) for k, v in model.named().items()}
    del tensors["C"]
    blob = _reference_encode(format_spec(spec), tensors)
    with pytest.raises(IntegrityError, match="missing"):
        decode_checkpoint(blob)
    tensors = {k: np.asarray(v) for k, v in model.named().items()}
    tensors["C"] = np.zeros((1, 5))
    with pytest.raises(IntegrityError, match="shape"):
        decode_checkpoint(_reference_encode(format_spec(spec), tensors))


def test_bad_version_and_spec_rejected():
    blob = GOLDEN.read_bytes()[:-8]
    bumped = blob[:7] + struct.pack("<I", 2) + blob[11:]
    with pytest.raises(IntegrityError, match="version"):
        decode_checkpoint(_reseal(bumped))
    spec_len = struct.unpack_from("<I", blob, 11)[0]
    broken = blob[:15] + b"X" * spec_len + blob[15 + spec_len:]
    with pytest.raises(IntegrityError, match="spec"):
        decode_checkpoint(_reseal(broken))
