"""Model spec documents and the binary checkpoint container.

Spec document: UTF-8 text, one ``key = value`` per line, ``#`` starts a
comment. A single block is described by top-level keys::

    variant = ccp          # ccp | ncp | ncp_skip | simple
    N = 3
    d = 2
    k = 2
    o = 1
    omega = 2              # optional, defaults to k
    normalization = none   # none | tanh | standardize
    epsilon = 1e-5
    seed = 0

A chain sets ``variant = chain`` and lists blocks in order, each as
``block = <variant> N=.. k=.. o=.. [omega=..] [normalization=..]``; the
first block's input size is the top-level ``d`` and each later block takes
the previous ``o``. ``inner_bias = true`` makes inner betas trainable.

Checkpoint layout (all integers little-endian)::

    b"PINET1\\n"
    u32  format version (1)
    u32  spec length, then that many bytes of spec document
    repeated tensor records until the checksum:
        u32 name length, name bytes (UTF-8)
        u32 order, then order x u64 extents
        prod(extents) x f64 payload
    u64  checksum: first 8 bytes (little-endian) of BLAKE2b-64 over all
         preceding bytes
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from pinet.polynet import (BlockSpec, ModelSpec, NormalizationSpec, PolyChain,
                           block_from_arrays, init_params, VARIANTS)

MAGIC = b"PINET1\n"
VERSION = 1


class SpecError(ValueError):
    pass


class IntegrityError(ValueError):
    pass


# ------------------------------------------------------------------ spec doc

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise SpecError(f"not a boolean: {text!r}")


def _parse_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise SpecError(f"{key} must be an integer, got {text!r}") from None


def _make_block(fields: dict, d: int) -> BlockSpec:
    variant = fields.get("variant")
    if variant not in VARIANTS:
        raise SpecError(f"unknown or missing variant {variant!r}; expected one of {VARIANTS}")
    try:
        N, k, o = (_parse_int(key, fields[key]) for key in ("N", "k", "o"))
    except KeyError as exc:
        raise SpecError(f"block is missing {exc.args[0]!r}") from None
    omega = _parse_int("omega", fields["omega"]) if "omega" in fields else None
    try:
        eps = float(fields.get("epsilon", 1e-5))
        norm = NormalizationSpec(fields.get("normalization", "none"), eps)
        return BlockSpec(variant, N, d, k, o, omega, norm)
    except ValueError as exc:
        raise SpecError(str(exc)) from None


def parse_spec(text: str) -> ModelSpec:
    top: dict = {}
    block_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "block":
            block_lines.append((lineno, value))
        elif key in top:
            raise SpecError(f"line {lineno}: duplicate key {key!r}")
        else:
            top[key] = value
    if "d" not in top:
        raise SpecError("spec is missing 'd'")
    d = _parse_int("d", top["d"])
    seed = _parse_int("seed", top.get("seed", "0"))
    if seed < 0:
        raise SpecError("seed must be non-negative")
    inner_bias = _parse_bool(top.get("inner_bias", "false"))
    if top.get("variant") == "chain":
        if not block_lines:
            raise SpecError("chain spec lists no blocks")
        blocks = []
        for lineno, value in block_lines:
            parts = value.split()
            if not parts:
                raise SpecError(f"line {lineno}: empty block")
            fields = {"variant": parts[0]}
            for p in parts[1:]:
                if "=" not in p:
                    raise SpecError(f"line {lineno}: bad block field {p!r}")
                k, v = p.split("=", 1)
                fields[k] = v
            for key in ("normalization", "epsilon"):
                if key in top:
                    fields.setdefault(key, top[key])
            try:
                blocks.append(_make_block(fields, d))
            except SpecError as exc:
                raise SpecError(f"line {lineno}: {exc}") from None
            d = blocks[-1].o
    else:
        if block_lines:
            raise SpecError("'block' lines are only allowed with variant = chain")
        blocks = [_make_block(top, d)]
    try:
        return ModelSpec(tuple(blocks), seed=seed, inner_bias=inner_bias)
    except ValueError as exc:
        raise SpecError(str(exc)) from None


def _block_fields(b: BlockSpec) -> list[tuple[str, str]]:
    out = [("N", str(b.N)), ("k", str(b.k)), ("o", str(b.o))]
    if b.omega is not None:
        out.append(("omega", str(b.omega)))
    out.append(("normalization", b.norm.mode))
    if b.norm.mode == "standardize":
        out.append(("epsilon", repr(b.norm.epsilon)))
    return out


def format_spec(spec: ModelSpec) -> str:
    """Canonical text; ``parse_spec(format_spec(s)) == s``."""
    lines = []
    if spec.is_chain:
        lines += ["variant = chain", f"d = {spec.d}"]
        for b in spec.blocks:
            fields = " ".join(f"{k}={v}" for k, v in _block_fields(b))
            lines.append(f"block = {b.variant} {fields}")
        lines.append(f"inner_bias = {'true' if spec.inner_bias else 'false'}")
    else:
        b = spec.blocks[0]
        lines += [f"variant = {b.variant}", f"d = {b.d}"]
        lines += [f"{k} = {v}" for k, v in _block_fields(b)]
    lines.append(f"seed = {spec.seed}")
    return "\n".join(lines) + "\n"


def load_spec(path) -> ModelSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))


def model_from_tensors(spec: ModelSpec, tensors: dict):
    """Assemble a block or chain from named arrays (as saved in a checkpoint)."""
    if not spec.is_chain:
        b = spec.blocks[0]
        return block_from_arrays(b.variant, b.N, tensors, b.norm)
    blocks = []
    for i, b in enumerate(spec.blocks):
        prefix = f"block{i}."
        sub = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        blocks.append(block_from_arrays(b.variant, b.N, sub, b.norm))
    return PolyChain(blocks)


# ---------------------------------------------------------------- checkpoint

def checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def encode_checkpoint(spec: ModelSpec, model) -> bytes:
    spec_bytes = format_spec(spec).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(spec_bytes))
    out += spec_bytes
    for name, arr in model.named().items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    out += struct.pack("<Q", checksum(bytes(out)))
    return bytes(out)


def save_checkpoint(path, spec: ModelSpec, model) -> bytes:
    blob = encode_checkpoint(spec, model)
    Path(path).write_bytes(blob)
    return blob


def decode_checkpoint(blob: bytes):
    """Return ``(spec, model)``; raises :class:`IntegrityError` on any corruption."""
    if len(blob) < len(MAGIC) + 16 or not blob.startswith(MAGIC):
        raise IntegrityError("not a checkpoint (bad magic or truncated)")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if checksum(body) != stored:
        raise IntegrityError("checksum mismatch: checkpoint is corrupted or truncated")
    pos = len(MAGIC)
    version, spec_len = struct.unpack_from("<II", body, pos)
    pos += 8
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    try:
        spec = parse_spec(body[pos:pos + spec_len].decode("utf-8"))
    except (SpecError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"embedded spec is invalid: {exc}") from None
    pos += spec_len
    tensors: dict = {}
    try:
        while pos < len(body):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (order,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{order}Q", body, pos)
            pos += 8 * order
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(body):
                raise IntegrityError(f"tensor {name!r} runs past the end of the file")
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            if name in tensors:
                raise IntegrityError(f"duplicate tensor name {name!r}")
            tensors[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise IntegrityError(f"malformed tensor record: {exc}") from None
    template = {k: np.shape(v) for k, v in init_params(spec).named().items()}
    if set(tensors) != set(template):
        raise IntegrityError(
            f"tensor names differ from the spec: missing {sorted(set(template) - set(tensors))}, "
            f"extra {sorted(set(tensors) - set(template))}"
        )
    for k, shape in template.items():
        if tensors[k].shape != shape:
            raise IntegrityError(f"tensor {k!r} has shape {tensors[k].shape}, spec needs {shape}")
    try:
        model = model_from_tensors(spec, tensors)
    except (KeyError, ValueError, TypeError) as exc:
        raise IntegrityError(f"tensors do not match the embedded spec: {exc}") from None
    return spec, model


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
