"""Polynomial network blocks: CCP, NCP, NCP-Skip and the single-operator form.

All forwards use a row convention: ``z`` is ``(d,)`` or a batch ``(n, d)`` and
``U^T z`` is written ``z @ U``. The forward functions only use ``@``, ``*``,
``+``, ``.T`` plus :func:`pinet.autodiff.tanh` / ``standardize``, so the same
code runs on numpy arrays and on recorded tape nodes (which is how the
trainer gets gradients).

Indexing: factor lists ``U``, ``A``, ``B``, ``b`` hold orders ``1..N`` at
positions ``0..N-1``. ``S`` and ``V`` start at order 2, so ``S[0]`` is
``S^[2]`` and ``len(S) == N - 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from pinet.autodiff import standardize, tanh

VARIANTS = ("ccp", "ncp", "ncp_skip", "simple")
NORM_MODES = ("none", "tanh", "standardize")

INIT_DAMPING = 0.5


@dataclass(frozen=True)
class NormalizationSpec:
    """How higher-order terms are squashed before summation.

    ``tanh`` applies tanh to every order-n term with n >= 2. ``standardize``
    standardizes each sample's 2nd-order term (every higher-order term for
    the single-operator block) to zero mean / unit variance.
    """

    mode: str = "none"
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.mode not in NORM_MODES:
            raise ValueError(f"unknown normalization {self.mode!r}; expected one of {NORM_MODES}")
        if self.mode == "standardize" and not self.epsilon > 0:
            raise ValueError("standardize normalization needs epsilon > 0")

    @property
    def is_polynomial(self) -> bool:
        return self.mode == "none"


NONE = NormalizationSpec()


def _shape(x):
    return tuple(x.shape)


@dataclass
class CCPParams:
    U: list
    C: object
    beta: object

    def __post_init__(self):
        self.U = list(self.U)
        if not self.U:
            raise ValueError("CCP needs N >= 1 factor matrices")
        d, k = _shape(self.U[0])
        if any(_shape(u) != (d, k) for u in self.U):
            raise ValueError(f"CCP factors must all be {d}x{k}: {[_shape(u) for u in self.U]}")
        if len(_shape(self.C)) != 2 or _shape(self.C)[1] != k:
            raise ValueError(f"CCP C must be o x {k}, got {_shape(self.C)}")
        if _shape(self.beta) != (_shape(self.C)[0],):
            raise ValueError(f"CCP beta must have length {_shape(self.C)[0]}")

    N = property(lambda self: len(self.U))
    d = property(lambda self: _shape(self.U[0])[0])
    k = property(lambda self: _shape(self.U[0])[1])
    o = property(lambda self: _shape(self.C)[0])

    def named(self) -> dict:
        out = {f"U{n + 1}": u for n, u in enumerate(self.U)}
        out.update(C=self.C, beta=self.beta)
        return out

    @classmethod
    def from_named(cls, t: Mapping, N: int) -> "CCPParams":
        return cls([t[f"U{n}"] for n in range(1, N + 1)], t["C"], t["beta"])


@dataclass
class NCPParams:
    A: list
    S: list
    B: list
    b: list
    C: object
    beta: object

    def __post_init__(self):
        self.A, self.S, self.B, self.b = list(self.A), list(self.S), list(self.B), list(self.b)
        N = len(self.A)
        if N < 1:
            raise ValueError("NCP needs N >= 1")
        if len(self.S) != N - 1 or len(self.B) != N or len(self.b) != N:
            raise ValueError(
                f"NCP with N={N} needs {N - 1} S, {N} B and {N} b; "
                f"got {len(self.S)}, {len(self.B)}, {len(self.b)}"
            )
        d, k = _shape(self.A[0])
        w = _shape(self.B[0])[0]
        if any(_shape(a) != (d, k) for a in self.A):
            raise ValueError("NCP A matrices must share shape d x k")
        if any(_shape(s) != (k, k) for s in self.S):
            raise ValueError(f"NCP S matrices must be {k}x{k}")
        if any(_shape(m) != (w, k) for m in self.B) or any(_shape(v) != (w,) for v in self.b):
            raise ValueError(f"NCP B must be {w}x{k} and b length {w}")
        if len(_shape(self.C)) != 2 or _shape(self.C)[1] != k:
            raise ValueError(f"NCP C must be o x {k}, got {_shape(self.C)}")
        if _shape(self.beta) != (_shape(self.C)[0],):
            raise ValueError(f"NCP beta must have length {_shape(self.C)[0]}")

    N = property(lambda self: len(self.A))
    d = property(lambda self: _shape(self.A[0])[0])
    k = property(lambda self: _shape(self.A[0])[1])
    o = property(lambda self: _shape(self.C)[0])
    omega = property(lambda self: _shape(self.B[0])[0])

    def named(self) -> dict:
        out = {}
        for n in range(self.N):
            out[f"A{n + 1}"] = self.A[n]
            if n:
                out[f"S{n + 1}"] = self.S[n - 1]
            out[f"B{n + 1}"] = self.B[n]
            out[f"b{n + 1}"] = self.b[n]
        out.update(C=self.C, beta=self.beta)
        return out

    @classmethod
    def from_named(cls, t: Mapping, N: int) -> "NCPParams":
        r = range(1, N + 1)
        return cls([t[f"A{n}"] for n in r], [t[f"S{n}"] for n in r if n > 1],
                   [t[f"B{n}"] for n in r], [t[f"b{n}"] for n in r], t["C"], t["beta"])


@dataclass
class NCPSkipParams(NCPParams):
    V: list = field(default_factory=list)

    def __post_init__(self):
        super().__post_init__()
        self.V = list(self.V)
        if len(self.V) != self.N - 1 or any(_shape(v) != (self.k, self.k) for v in self.V):
            raise ValueError(f"NCP-Skip needs {self.N - 1} V matrices of shape {self.k}x{self.k}")

    def named(self) -> dict:
        out = super().named()
        for n, v in enumerate(self.V, start=2):
            out[f"V{n}"] = v
        return out

    @classmethod
    def from_named(cls, t: Mapping, N: int) -> "NCPSkipParams":
        base = NCPParams.from_named(t, N)
        return cls(base.A, base.S, base.B, base.b, base.C, base.beta,
                   [t[f"V{n}"] for n in range(2, N + 1)])

    def without_skip(self) -> NCPParams:
        return NCPParams(self.A, self.S, self.B, self.b, self.C, self.beta)


@dataclass
class SimpleSingleOpParams:
    """``y = sum_{n=2..N} (S^T y1)^{*n} + S^T y1 + beta`` with one operator ``S``."""

    N: int
    S: object
    beta: object

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("order N must be >= 1")
        if len(_shape(self.S)) != 2 or _shape(self.beta) != (_shape(self.S)[1],):
            raise ValueError(f"S {_shape(self.S)} and beta {_shape(self.beta)} do not conform")

    d = property(lambda self: _shape(self.S)[0])
    k = property(lambda self: _shape(self.S)[1])
    o = property(lambda self: _shape(self.S)[1])

    def named(self) -> dict:
        return {"S": self.S, "beta": self.beta}

    @classmethod
    def from_named(cls, t: Mapping, N: int) -> "SimpleSingleOpParams":
        return cls(N, t["S"], t["beta"])


_PARAM_TYPES = {"ccp": CCPParams, "ncp": NCPParams, "ncp_skip": NCPSkipParams,
                "simple": SimpleSingleOpParams}


def _higher(term, norm: NormalizationSpec, order: int):
    if norm.mode == "tanh" and order >= 2:
        return tanh(term)
    if norm.mode == "standardize" and order == 2:
        return standardize(term, norm.epsilon)
    return term


def _check_input(z, d):
    if _shape(z)[-1:] != (d,) or len(_shape(z)) > 2:
        raise ValueError(f"input of shape {_shape(z)} does not match input dimension {d}")
    if isinstance(z, np.ndarray) and z.dtype.kind == "f" and not np.all(np.isfinite(z)):
        raise ValueError("input contains non-finite values")


def ccp_forward(p: CCPParams, z, norm: NormalizationSpec = NONE):
    """``x1 = U1^T z``, ``x_n = (U_n^T z) * x_{n-1} + x_{n-1}``, out ``C x_N + beta``."""
    _check_input(z, p.d)
    x = z @ p.U[0]
    for n in range(1, p.N):
        x = _higher((z @ p.U[n]) * x, norm, n + 1) + x
    return x @ p.C.T + p.beta


def _ncp_state(p: NCPParams, z, norm: NormalizationSpec, skip):
    x = (z @ p.A[0]) * (p.b[0] @ p.B[0])
    for n in range(1, p.N):
        h = _higher((z @ p.A[n]) * (x @ p.S[n - 1] + p.b[n] @ p.B[n]), norm, n + 1)
        x = h + x @ skip[n - 1].T if skip is not None else h
    return x


def ncp_forward(p: NCPParams, z, norm: NormalizationSpec = NONE):
    """``x_n = (A_n^T z) * (S_n^T x_{n-1} + B_n^T b_n)``; first step uses ``B_1^T b_1``."""
    _check_input(z, p.d)
    return _ncp_state(p, z, norm, None) @ p.C.T + p.beta


def ncp_skip_forward(p: NCPSkipParams, z, norm: NormalizationSpec = NONE):
    """NCP recursion plus the learned skip ``V_n x_{n-1}`` at every step n >= 2."""
    _check_input(z, p.d)
    return _ncp_state(p, z, norm, p.V) @ p.C.T + p.beta


def simple_single_op_forward(p: SimpleSingleOpParams, y1, norm: NormalizationSpec = NONE):
    _check_input(y1, p.d)
    base = y1 @ p.S
    out = base + p.beta
    power = base
    for n in range(2, p.N + 1):
        power = power * base
        term = power
        if norm.mode == "tanh":
            term = tanh(power)
        elif norm.mode == "standardize":
            term = standardize(power, norm.epsilon)
        out = out + term
    return out


def polynomialize_residual(p: NCPSkipParams) -> NCPSkipParams:
    """Set every skip to ``V_n = I + S_n`` (second-order residual block)."""
    k = p.k
    V = [np.eye(k) + np.asarray(s) for s in p.S]
    return replace(p, V=V)


_FORWARDS = {"ccp": ccp_forward, "ncp": ncp_forward, "ncp_skip": ncp_skip_forward,
             "simple": simple_single_op_forward}


@dataclass
class PolyBlock:
    variant: str
    params: object
    norm: NormalizationSpec = NONE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not isinstance(self.params, _PARAM_TYPES[self.variant]):
            raise TypeError(f"{self.variant} block needs {_PARAM_TYPES[self.variant].__name__}")

    @property
    def order(self) -> int:
        return self.params.N

    d = property(lambda self: self.params.d)
    o = property(lambda self: self.params.o)

    def __call__(self, z):
        return _FORWARDS[self.variant](self.params, z, self.norm)

    def named(self) -> dict:
        return self.params.named()

    def with_tensors(self, tensors: Mapping) -> "PolyBlock":
        """Same block with parameters swapped for ``tensors`` (e.g. tape nodes)."""
        params = _PARAM_TYPES[self.variant].from_named(tensors, self.order)
        return PolyBlock(self.variant, params, self.norm)


@dataclass
class PolyChain:
    """Blocks applied in sequence; block ``i+1`` consumes block ``i``'s output."""

    blocks: list

    def __post_init__(self):
        self.blocks = list(self.blocks)
        if not self.blocks:
            raise ValueError("a chain needs at least one block")
        for i, (a, b) in enumerate(zip(self.blocks, self.blocks[1:])):
            if a.o != b.d:
                raise ValueError(f"block {i} outputs {a.o} values but block {i + 1} expects {b.d}")

    @property
    def order(self) -> int:
        return math.prod(b.order for b in self.blocks)

    d = property(lambda self: self.blocks[0].d)
    o = property(lambda self: self.blocks[-1].o)

    def __call__(self, z):
        return chain_forward(self, z)

    def named(self) -> dict:
        return {f"block{i}.{k}": v for i, b in enumerate(self.blocks) for k, v in b.named().items()}

    def with_tensors(self, tensors: Mapping) -> "PolyChain":
        blocks = []
        for i, b in enumerate(self.blocks):
            prefix = f"block{i}."
            sub = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            blocks.append(b.with_tensors(sub))
        return PolyChain(blocks)


def chain_forward(chain: PolyChain, z):
    for i, block in enumerate(chain.blocks):
        # an overflowing inner block is divergence, not bad input: propagate NaN
        if i and isinstance(z, np.ndarray) and z.dtype.kind == "f" and not np.all(np.isfinite(z)):
            return np.full(z.shape[:-1] + (chain.o,), np.nan)
        z = block(z)
    return z


# ---------------------------------------------------------------- specs / init

@dataclass(frozen=True)
class BlockSpec:
    variant: str
    N: int
    d: int
    k: int
    o: int
    omega: int | None = None
    norm: NormalizationSpec = NONE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("N", "d", "k", "o"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.omega is not None and self.omega < 1:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.variant == "simple" and self.k != self.o:
            raise ValueError("single-operator block has k == o")

    @property
    def w(self) -> int:
        return self.k if self.omega is None else self.omega


@dataclass(frozen=True)
class ModelSpec:
    """One block, or several chained. ``inner_bias`` keeps betas on inner blocks."""

    blocks: tuple
    seed: int = 0
    inner_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("model spec has no blocks")
        for i, (a, b) in enumerate(zip(self.blocks, self.blocks[1:])):
            if a.o != b.d:
                raise ValueError(f"block {i} output {a.o} != block {i + 1} input {b.d}")

    @property
    def is_chain(self) -> bool:
        return len(self.blocks) > 1

    d = property(lambda self: self.blocks[0].d)
    o = property(lambda self: self.blocks[-1].o)


def _normal(rng, shape, std):
    return rng.standard_normal(shape) * std


def make_rng(seed: int) -> np.random.Generator:
    """Philox counter-based generator; the only randomness source in the package."""
    return np.random.Generator(np.random.Philox(int(seed)))


def init_block(spec: BlockSpec, rng: np.random.Generator) -> PolyBlock:
    """Normal init, std ``k**-0.5`` with the order-n input factors damped by ``0.5**n``.

    ``b`` starts at ones and ``beta`` at zero.
    """
    d, k, o, w, N = spec.d, spec.k, spec.o, spec.w, spec.N
    s = k ** -0.5
    if spec.variant == "ccp":
        U = [_normal(rng, (d, k), s * INIT_DAMPING ** n) for n in range(1, N + 1)]
        params = CCPParams(U, _normal(rng, (o, k), s), np.zeros(o))
    elif spec.variant == "simple":
        params = SimpleSingleOpParams(N, _normal(rng, (d, k), s * INIT_DAMPING), np.zeros(k))
    else:
        A = [_normal(rng, (d, k), s * INIT_DAMPING ** n) for n in range(1, N + 1)]
        S = [_normal(rng, (k, k), s) for _ in range(N - 1)]
        B = [_normal(rng, (w, k), w ** -0.5) for _ in range(N)]
        b = [np.ones(w) for _ in range(N)]
        C = _normal(rng, (o, k), s)
        if spec.variant == "ncp":
            params = NCPParams(A, S, B, b, C, np.zeros(o))
        else:
            V = [_normal(rng, (k, k), s) for _ in range(N - 1)]
            params = NCPSkipParams(A, S, B, b, C, np.zeros(o), V)
    return PolyBlock(spec.variant, params, spec.norm)


def random_block(spec: BlockSpec, rng: np.random.Generator, scale: float = 1.0) -> PolyBlock:
    """Every entry (including ``b`` and ``beta``) iid normal with std ``scale``.

    Verification draws: unlike :func:`init_block` nothing is damped, so all
    monomials up to the nominal degree are generically present.
    """
    block = init_block(spec, rng)
    tensors = {k: rng.standard_normal(np.shape(v)) * scale for k, v in block.named().items()}
    return block.with_tensors(tensors)


def random_model(spec: ModelSpec, seed: int | None = None, scale: float = 1.0):
    rng = make_rng(spec.seed if seed is None else seed)
    blocks = [random_block(b, rng, scale) for b in spec.blocks]
    return blocks[0] if len(blocks) == 1 else PolyChain(blocks)


def init_params(spec: ModelSpec | BlockSpec, seed: int | None = None):
    """Deterministic initialization: same spec and seed, bit-identical tensors."""
    if isinstance(spec, BlockSpec):
        spec = ModelSpec((spec,), seed=0 if seed is None else seed)
    rng = make_rng(spec.seed if seed is None else seed)
    blocks = [init_block(b, rng) for b in spec.blocks]
    if not spec.is_chain:
        return blocks[0]
    return PolyChain(blocks)


def trainable_names(model, spec: ModelSpec) -> list[str]:
    """Names of tensors the optimizer updates; inner betas are frozen unless ``inner_bias``."""
    names = list(model.named())
    if isinstance(model, PolyChain) and not spec.inner_bias:
        last = len(model.blocks) - 1
        names = [n for n in names if not (n.endswith(".beta") and not n.startswith(f"block{last}."))]
    return names


def count_params(spec: ModelSpec | BlockSpec) -> int:
    """Number of learnable scalars (frozen inner betas excluded)."""
    if isinstance(spec, BlockSpec):
        spec = ModelSpec((spec,))
    total = 0
    last = len(spec.blocks) - 1
    for i, b in enumerate(spec.blocks):
        N, d, k, o, w = b.N, b.d, b.k, b.o, b.w
        bias = o if (i == last or spec.inner_bias) else 0
        if b.variant == "ccp":
            total += N * d * k + o * k + bias
        elif b.variant == "simple":
            total += d * k + bias
        else:
            total += N * d * k + (N - 1) * k * k + N * w * k + N * w + o * k + bias
            if b.variant == "ncp_skip":
                total += (N - 1) * k * k
    return total


def block_from_arrays(variant: str, N: int, tensors: Mapping[str, np.ndarray],
                      norm: NormalizationSpec = NONE) -> PolyBlock:
    return PolyBlock(variant, _PARAM_TYPES[variant].from_named(tensors, N), norm)


def as_model(blocks: Sequence[PolyBlock]):
    return blocks[0] if len(blocks) == 1 else PolyChain(list(blocks))
