"""Ground truth for the recursive models.

Three routes to the same function are provided:

* explicit weight tensors ``W[n]`` (shape ``o x d x ... x d``) evaluated as
  ``beta + sum_n W[n] x_2 z ... x_{n+1} z`` (built in closed form for N=3),
* exact expansion into monomials (:class:`MultiPoly`), written directly from
  the recurrences and independent of :mod:`pinet.polynet`,
* finite-difference degree probes along lines.
"""
from __future__ import annotations

import math
from fractions import Fraction
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pinet.polynet import (CCPParams, NCPParams, NCPSkipParams, PolyBlock, PolyChain,
                           SimpleSingleOpParams, make_rng)
from pinet.tensor import fold, khatri_rao, mode_m_product, multi_mode_product

COEFF_BUDGET = 10**6
PRUNE_REL = 1e-14


class ExpansionBudgetError(ValueError):
    pass


# ------------------------------------------------------------------ MultiPoly

class MultiPoly:
    """Vector-valued polynomial in ``dim`` variables.

    ``terms`` maps an exponent tuple to a coefficient vector of length
    ``width``. Zero coefficients are never stored.
    """

    def __init__(self, dim: int, width: int, terms=None):
        self.dim = dim
        self.width = width
        self.terms: dict[tuple, np.ndarray] = {}
        for e, c in (terms or {}).items():
            c = np.asarray(c, dtype=np.float64).reshape(width)
            if np.any(c != 0):
                self.terms[tuple(int(i) for i in e)] = c

    @classmethod
    def variables(cls, dim: int) -> "MultiPoly":
        """The identity map ``z -> z`` as a width-``dim`` polynomial."""
        eye = np.eye(dim)
        return cls(dim, dim, {tuple(eye[i].astype(int)): eye[i] for i in range(dim)})

    @classmethod
    def constant(cls, dim: int, value) -> "MultiPoly":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(dim, value.size, {(0,) * dim: value})

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __len__(self):
        return len(self.terms)

    def copy(self) -> "MultiPoly":
        return MultiPoly(self.dim, self.width, {e: c.copy() for e, c in self.terms.items()})

    def linear(self, M) -> "MultiPoly":
        """Apply ``v -> M^T v`` to the coefficient vectors (``M`` is width x new)."""
        M = np.asarray(M, dtype=np.float64)
        if M.shape[0] != self.width:
            raise ValueError(f"linear map {M.shape} does not accept width {self.width}")
        return MultiPoly(self.dim, M.shape[1], {e: c @ M for e, c in self.terms.items()})

    def __add__(self, other) -> "MultiPoly":
        if not isinstance(other, MultiPoly):
            other = MultiPoly.constant(self.dim, np.broadcast_to(other, (self.width,)))
        if (other.dim, other.width) != (self.dim, self.width):
            raise ValueError("MultiPoly add: dimension/width mismatch")
        keys = set(self.terms) | set(other.terms)
        zero = np.zeros(self.width)
        return MultiPoly(self.dim, self.width, {
            e: _fsum_rows([self.terms.get(e, zero), other.terms.get(e, zero)]) for e in keys
        })

    __radd__ = __add__

    def scale(self, alpha) -> "MultiPoly":
        """Multiply by a scalar or (elementwise) by a constant width vector."""
        alpha = np.asarray(alpha, dtype=np.float64)
        return MultiPoly(self.dim, self.width, {e: c * alpha for e, c in self.terms.items()})

    def hadamard(self, other: "MultiPoly") -> "MultiPoly":
        """Elementwise product of two vector polynomials, compensated accumulation."""
        if (other.dim, other.width) != (self.dim, self.width):
            raise ValueError("MultiPoly hadamard: dimension/width mismatch")
        if not self.terms or not other.terms:
            return MultiPoly(self.dim, self.width)
        e1 = np.array(list(self.terms), dtype=np.int64)
        e2 = np.array(list(other.terms), dtype=np.int64)
        c1 = np.array(list(self.terms.values()))
        c2 = np.array(list(other.terms.values()))
        exps = (e1[:, None, :] + e2[None, :, :]).reshape(-1, self.dim)
        prods = (c1[:, None, :] * c2[None, :, :]).reshape(-1, self.width)
        uniq, inv = np.unique(exps, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
        terms = {}
        for g, e in enumerate(uniq):
            rows = prods[order[bounds[g]:bounds[g + 1]]]
            terms[tuple(e)] = _fsum_rows(rows)
        return MultiPoly(self.dim, self.width, terms)

    def __mul__(self, other):
        if isinstance(other, MultiPoly):
            return self.hadamard(other)
        return self.scale(other)

    __rmul__ = __mul__

    def prune(self, rel: float = PRUNE_REL) -> "MultiPoly":
        """Drop coefficient entries below ``rel * max|coefficient|``."""
        if not self.terms:
            return self.copy()
        top = max(float(np.max(np.abs(c))) for c in self.terms.values())
        out = {}
        for e, c in self.terms.items():
            c = np.where(np.abs(c) < rel * top, 0.0, c)
            out[e] = c
        return MultiPoly(self.dim, self.width, out)

    def __call__(self, z) -> np.ndarray:
        """Evaluate at ``z`` of shape ``(dim,)`` or ``(n, dim)``."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        if not self.terms:
            out = np.zeros((len(z), self.width))
        else:
            exps = np.array(list(self.terms), dtype=np.int64)
            coeffs = np.array(list(self.terms.values()))
            mono = np.prod(z[:, None, :] ** exps[None, :, :], axis=2)
            out = mono @ coeffs
        return out[0] if single else out

    def sorted_terms(self) -> list[tuple[tuple, np.ndarray]]:
        """Terms ordered by total degree, then lexicographically by exponents."""
        return sorted(self.terms.items(), key=lambda ec: (sum(ec[0]), ec[0]))

    def __eq__(self, other):
        if not isinstance(other, MultiPoly):
            return NotImplemented
        return (self.dim, self.width) == (other.dim, other.width) and \
            self.terms.keys() == other.terms.keys() and \
            all(np.array_equal(c, other.terms[e]) for e, c in self.terms.items())

    def __repr__(self):
        return f"MultiPoly(dim={self.dim}, width={self.width}, terms={len(self.terms)}, degree={self.degree})"


def _fsum_rows(rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) == 1:
        return rows[0].copy()
    return np.array([math.fsum(col) for col in rows.T])


# ------------------------------------------------------------- symbolic route

def _lin(p: MultiPoly, M) -> MultiPoly:
    return p.linear(M)


def _expand_ccp(p: CCPParams, z: MultiPoly) -> MultiPoly:
    U = [np.asarray(u) for u in p.U]
    x = _lin(z, U[0])
    for n in range(1, len(U)):
        x = _lin(z, U[n]).hadamard(x) + x
    return _lin(x, np.asarray(p.C).T) + np.asarray(p.beta)


def _expand_ncp(p: NCPParams, z: MultiPoly, V=None) -> MultiPoly:
    A = [np.asarray(a) for a in p.A]
    x = _lin(z, A[0]).scale(np.asarray(p.B[0]).T @ np.asarray(p.b[0]))
    for n in range(1, len(A)):
        inner = _lin(x, p.S[n - 1]) + np.asarray(p.B[n]).T @ np.asarray(p.b[n])
        new = _lin(z, A[n]).hadamard(inner)
        if V is not None:
            new = new + _lin(x, np.asarray(V[n - 1]).T)
        x = new
    return _lin(x, np.asarray(p.C).T) + np.asarray(p.beta)


def _expand_simple(p: SimpleSingleOpParams, y: MultiPoly) -> MultiPoly:
    base = _lin(y, p.S)
    out = base + np.asarray(p.beta)
    power = base
    for _ in range(2, p.N + 1):
        power = power.hadamard(base)
        out = out + power
    return out


def _expand_block(block: PolyBlock, z: MultiPoly) -> MultiPoly:
    if not block.norm.is_polynomial:
        raise ValueError(f"normalization {block.norm.mode!r} is not polynomial; cannot expand")
    p = block.params
    if block.variant == "ccp":
        return _expand_ccp(p, z)
    if block.variant == "ncp":
        return _expand_ncp(p, z)
    if block.variant == "ncp_skip":
        return _expand_ncp(p, z, V=p.V)
    return _expand_simple(p, z)


def expansion_bound(model) -> int:
    """Upper bound on stored coefficients, ``C(d + D, D) * max width``."""
    blocks = model.blocks if isinstance(model, PolyChain) else [model]
    degree = math.prod(b.order for b in blocks)
    width = max(max(getattr(b.params, "k", b.o), b.o, b.d) for b in blocks)
    return math.comb(blocks[0].d + degree, degree) * width


def symbolic_expand(model, budget: int = COEFF_BUDGET) -> MultiPoly:
    """Exact monomial form of a block or chain (floats, compensated sums)."""
    bound = expansion_bound(model)
    if bound > budget:
        raise ExpansionBudgetError(
            f"expansion may need up to {bound} coefficients, over the budget of {budget}"
        )
    blocks = model.blocks if isinstance(model, PolyChain) else [model]
    poly = MultiPoly.variables(blocks[0].d)
    for b in blocks:
        poly = _expand_block(b, poly)
    return poly.prune()


# -------------------------------------------------------------- tensor route

@dataclass
class WeightTensorSet:
    beta: np.ndarray
    W: list = field(default_factory=list)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        o = self.beta.shape[0]
        for n, w in enumerate(self.W, start=1):
            w = np.asarray(w)
            if w.ndim != n + 1 or w.shape[0] != o or len(set(w.shape[1:])) > 1:
                raise ValueError(f"W[{n}] has shape {w.shape}; expected ({o},) + (d,)*{n}")

    @property
    def order(self) -> int:
        return len(self.W)


def explicit_eval(w: WeightTensorSet, z) -> np.ndarray:
    """``beta + sum_n W[n]`` contracted with ``n`` copies of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    out = w.beta.copy()
    for n, W in enumerate(w.W, start=1):
        if W.shape[1] != z.shape[0]:
            raise ValueError(f"W[{n}] expects input dimension {W.shape[1]}, got {z.shape[0]}")
        out = out + multi_mode_product(W, [z] * n)
    return out


def _refold(mat, o, modes):
    return fold(mat, 0, (o,) + tuple(modes))


def build_ccp_tensors(p: CCPParams) -> WeightTensorSet:
    """Closed-form coupled CP weights for a third-order CCP.

    ``W1 = C U1^T``, ``W2_(1) = C (U3 ⊙ U1)^T + C (U2 ⊙ U1)^T`` and
    ``W3_(1) = C (U3 ⊙ U2 ⊙ U1)^T``, refolded so mode 2 pairs with ``U1``.
    """
    if p.N != 3:
        raise ValueError(f"closed-form CCP tensors exist for N=3 only (got N={p.N}); use symbolic_expand")
    U1, U2, U3 = (np.asarray(u) for u in p.U)
    C, o, d = np.asarray(p.C), p.o, p.d
    W1 = C @ U1.T
    W2 = _refold(C @ khatri_rao(U3, U1).T + C @ khatri_rao(U2, U1).T, o, (d, d))
    W3 = _refold(C @ khatri_rao(U3, U2, U1).T, o, (d, d, d))
    return WeightTensorSet(np.asarray(p.beta), [W1, W2, W3])


def build_ncp_tensors(p: NCPParams) -> WeightTensorSet:
    """Closed-form nested CP weights for a third-order NCP.

    The order-n tensor carries the scaling vector of recursion step ``N+1-n``
    on its ``omega`` mode; that mode is contracted away here so the result
    plugs straight into :func:`explicit_eval`.
    """
    if p.N != 3:
        raise ValueError(f"closed-form NCP tensors exist for N=3 only (got N={p.N}); use symbolic_expand")
    A1, A2, A3 = (np.asarray(a) for a in p.A)
    B1, B2, B3 = (np.asarray(m) for m in p.B)
    b1, b2, b3 = (np.asarray(v) for v in p.b)
    S2, S3 = (np.asarray(s) for s in p.S)
    C, o, d, w = np.asarray(p.C), p.o, p.d, p.omega

    first = C @ khatri_rao(A3, B3).T
    second = C @ khatri_rao(A3, khatri_rao(A2, B2) @ S3).T
    third = C @ khatri_rao(A3, khatri_rao(A2, khatri_rao(A1, B1) @ S2) @ S3).T

    W1 = mode_m_product(_refold(first, o, (w, d)), b3, 1)
    W2 = mode_m_product(_refold(second, o, (w, d, d)), b2, 1)
    W3 = mode_m_product(_refold(third, o, (w, d, d, d)), b1, 1)
    return WeightTensorSet(np.asarray(p.beta), [W1, W2, W3])


def explicit_tensors(block: PolyBlock) -> WeightTensorSet | None:
    """Closed-form tensors when they exist (third-order CCP / NCP), else None."""
    if block.order != 3 or not block.norm.is_polynomial:
        return None
    if block.variant == "ccp":
        return build_ccp_tensors(block.params)
    if block.variant == "ncp":
        return build_ncp_tensors(block.params)
    return None


# ------------------------------------------------------------------- checks

def _rel_dev(a, ref) -> float:
    a, ref = np.asarray(a), np.asarray(ref)
    scale = float(np.max(np.abs(ref), initial=0.0))
    err = float(np.max(np.abs(a - ref), initial=0.0))
    if scale == 0.0:
        return err
    return err / scale


@dataclass
class EquivalenceReport:
    model: str
    trials: int
    tol: float
    symbolic_dev: float | None = None
    explicit_dev: float | None = None
    skipped: str | None = None

    @property
    def max_dev(self) -> float:
        devs = [d for d in (self.symbolic_dev, self.explicit_dev) if d is not None]
        return max(devs, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_dev <= self.tol

    def fields(self) -> dict:
        return {
            "check": "equivalence",
            "model": self.model,
            "trials": self.trials,
            "tol": self.tol,
            "symbolic_dev": self.symbolic_dev,
            "explicit_dev": self.explicit_dev,
            "skipped": self.skipped,
            "status": "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL"),
        }


def describe(model) -> str:
    if isinstance(model, PolyChain):
        return "chain(" + ",".join(describe(b) for b in model.blocks) + ")"
    return f"{model.variant}[N={model.order},d={model.d},o={model.o}]"


def equivalence_check(model, trials: int = 200, tol: float = 1e-9, seed: int = 0,
                      explicit: WeightTensorSet | None = None,
                      budget: int = COEFF_BUDGET) -> EquivalenceReport:
    """Compare the recursive forward against the symbolic and tensor routes.

    Deviation is normwise over the trial batch:
    ``max|route - forward| / max|forward|``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = EquivalenceReport(describe(model), trials, tol)
    if not is_polynomial(model):
        report.skipped = "normalization makes the model non-polynomial"
        return report
    Z = make_rng(seed).standard_normal((trials, model.d))
    ref = np.asarray(model(Z))
    try:
        poly = symbolic_expand(model, budget)
    except ExpansionBudgetError as exc:
        report.skipped = str(exc)
    else:
        report.symbolic_dev = _rel_dev(poly(Z), ref)
    if explicit is None and isinstance(model, PolyBlock):
        explicit = explicit_tensors(model)
    if explicit is not None:
        vals = np.array([explicit_eval(explicit, z) for z in Z])
        report.explicit_dev = _rel_dev(vals, ref)
    return report


def equivalence_sweep(models, trials: int, tol: float, seed: int = 0, workers: int = 1):
    """Run :func:`equivalence_check` over many models with per-model seeds."""
    jobs = [(m, seed + i) for i, m in enumerate(models)]
    run = lambda job: equivalence_check(job[0], trials, tol, job[1])  # noqa: E731
    if workers <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


@dataclass
class DegreeReport:
    model: str
    degrees: list  # per output coordinate; None means "exceeds probe"
    max_probe: int
    expected: int | None = None

    @property
    def degree(self) -> int | None:
        if any(d is None for d in self.degrees):
            return None
        return max(self.degrees)

    @property
    def passed(self) -> bool:
        return self.expected is None or self.degree == self.expected

    def fields(self) -> dict:
        return {
            "check": "degree",
            "model": self.model,
            "degree": "exceeds probe" if self.degree is None else self.degree,
            "per_output": " ".join("exceeds" if d is None else str(d) for d in self.degrees),
            "expected": self.expected,
            "max_probe": self.max_probe,
            "status": "PASS" if self.passed else "FAIL",
        }


def is_polynomial(model) -> bool:
    blocks = model.blocks if isinstance(model, PolyChain) else [model]
    return all(b.norm.is_polynomial for b in blocks)


def _to_exact(model):
    """Copy of ``model`` whose tensors are object arrays of exact Fractions."""
    frac = np.vectorize(Fraction, otypes=[object])
    tensors = {k: frac(np.asarray(v, dtype=np.float64)) for k, v in model.named().items()}
    return model.with_tensors(tensors)


def degree_check(model, direction=None, max_probe: int = 10, step: float = 0.5,
                 seed: int = 0, rel: float = 1e-8, expected: int | None = None,
                 exact: bool | None = None) -> DegreeReport:
    """Infer the polynomial degree along ``t -> model(t * v)``.

    Samples ``t = 0, step, 2*step, ...`` and reports, per output, the smallest
    D whose (D+1)-th forward difference vanishes.

    In float mode "vanishes" means ``<= rel * scale`` with ``scale`` the largest
    magnitude among the samples entering that difference. That resolves
    degrees up to roughly 12: the top difference of a degree-D polynomial is
    only about ``exp(-D)`` of its sample magnitudes. ``exact=True`` (the
    default for models without normalization) evaluates the samples in
    rational arithmetic, where the test is an exact zero and any degree up to
    ``max_probe`` is resolved.
    """
    if direction is None:
        v = make_rng(seed).standard_normal(model.d)
        direction = v / np.linalg.norm(v)
    v = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("degree_check: direction must have unit norm")
    if exact is None:
        exact = is_polynomial(model)
    if exact:
        if not is_polynomial(model):
            raise ValueError("exact degree probe needs a model without normalization")
        h = Fraction(step)
        vf = [Fraction(x) for x in v]
        pts = np.array([[h * j * x for x in vf] for j in range(max_probe + 2)], dtype=object)
        vals = np.atleast_2d(np.asarray(_to_exact(model)(pts), dtype=object))
    else:
        t = step * np.arange(max_probe + 2)
        vals = np.atleast_2d(np.asarray(model(t[:, None] * v[None, :]), dtype=np.float64))
    degrees = []
    for col in vals.T:
        found = None
        for D in range(max_probe + 1):
            diff = _difference(col, D + 1)
            if exact:
                small = diff == 0
            else:
                scale = float(np.max(np.abs(col[: D + 2])))
                small = abs(diff) <= rel * scale
            if small:
                found = D
                break
        degrees.append(found)
    return DegreeReport(describe(model), degrees, max_probe, expected)


def _difference(values, order: int):
    total = 0
    for i in range(order + 1):
        total += (-1) ** (order - i) * math.comb(order, i) * values[i]
    return total


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def report_text(reports) -> str:
    """One line per check: status, check name, model, then key=value details."""
    lines = []
    for r in reports:
        f = r.fields()
        details = " ".join(f"{k}={_fmt(v)}" for k, v in f.items()
                           if k not in ("status", "check", "model") and v is not None)
        lines.append(f"{f['status']:4s} {f['check']:11s} {f['model']} {details}")
    return "\n".join(lines) + "\n"


def report_kv(reports) -> str:
    """Machine-readable form: ``report.<i>.<key> = <value>`` lines."""
    lines = []
    for i, r in enumerate(reports):
        for k, v in r.fields().items():
            if v is None:
                continue
            lines.append(f"report.{i}.{k} = {repr(v) if isinstance(v, float) else v}")
    overall = all(r.fields()["status"] != "FAIL" for r in reports)
    lines.append(f"overall = {'PASS' if overall else 'FAIL'}")
    return "\n".join(lines) + "\n"
