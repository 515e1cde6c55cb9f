"""Dense multilinear-algebra kernels.

Tensors are plain C-ordered ``float64`` numpy arrays. Modes are 0-based, so
the "mode-1 unfolding" of the literature is ``unfold(t, 0)``.

Unfolding convention: the remaining modes are laid out with the *earliest*
remaining mode varying fastest (the last one slowest). With this convention
the CP identity reads::

    unfold(cp_to_full([U1, ..., UM]), 0) == U1 @ khatri_rao(UM, ..., U2).T
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two equally shaped arrays."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def khatri_rao(*mats) -> np.ndarray:
    """Column-wise Kronecker product ``A1 ⊙ A2 ⊙ ... ⊙ AM``.

    Column ``n`` of the result is ``kron(A1[:, n], A2[:, n], ...)``, so the row
    index of the last factor varies fastest.
    """
    if not mats:
        raise ValueError("khatri_rao: need at least one matrix")
    mats = [as_tensor(m) for m in mats]
    for m in mats:
        if m.ndim != 2:
            raise ValueError(f"khatri_rao: expected matrices, got shape {m.shape}")
    ncol = mats[0].shape[1]
    if any(m.shape[1] != ncol for m in mats):
        cols = [m.shape[1] for m in mats]
        raise ValueError(f"khatri_rao: column counts differ {cols}")
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, ncol)
    return out


def unfold(t, mode: int) -> np.ndarray:
    """Matricize ``t`` along ``mode`` (earliest remaining mode fastest)."""
    t = as_tensor(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"unfold: mode {mode} out of range for order {t.ndim}")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(mat, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    mat = as_tensor(mat)
    shape = tuple(int(s) for s in shape)
    rest = shape[:mode] + shape[mode + 1:]
    if mat.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"fold: matrix {mat.shape} does not match target {shape}")
    t = mat.reshape((shape[mode],) + rest, order="F")
    return np.ascontiguousarray(np.moveaxis(t, 0, mode))


def mode_m_product(t, u, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``t`` with vector ``u``; the mode is dropped."""
    t, u = as_tensor(t), as_tensor(u)
    if t.ndim == 0:
        raise ValueError("mode_m_product: cannot contract a scalar")
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode_m_product: mode {mode} out of range for order {t.ndim}")
    if u.ndim != 1 or u.shape[0] != t.shape[mode]:
        raise ValueError(
            f"mode_m_product: vector of shape {u.shape} cannot contract mode {mode} "
            f"of extent {t.shape[mode]}"
        )
    return np.tensordot(t, u, axes=([mode], [0]))


def multi_mode_product(t, vectors, modes: Sequence[int] | None = None) -> np.ndarray:
    """Contract several modes of ``t``, one vector per mode.

    ``modes`` defaults to the trailing ``len(vectors)`` modes, which is how
    ``W[n]`` is contracted with ``n`` copies of the input. Contractions are
    applied from the highest mode down so earlier mode numbers stay valid.
    """
    t = as_tensor(t)
    vectors = list(vectors)
    if modes is None:
        modes = list(range(t.ndim - len(vectors), t.ndim))
    modes = list(modes)
    if len(modes) != len(vectors):
        raise ValueError("multi_mode_product: need exactly one vector per mode")
    if len(set(modes)) != len(modes):
        raise ValueError(f"multi_mode_product: repeated mode in {modes}")
    for mode, vec in sorted(zip(modes, vectors), key=lambda mv: -mv[0]):
        t = mode_m_product(t, vec, mode)
    return t


def cp_to_full(factors) -> np.ndarray:
    """Rebuild the full tensor ``sum_r U1[:, r] ∘ U2[:, r] ∘ ... ∘ UM[:, r]``."""
    factors = [as_tensor(f) for f in factors]
    if not factors:
        raise ValueError("cp_to_full: need at least one factor")
    for f in factors:
        if f.ndim != 2:
            raise ValueError(f"cp_to_full: factor of shape {f.shape} is not a matrix")
    rank = factors[0].shape[1]
    if any(f.shape[1] != rank for f in factors):
        raise ValueError(f"cp_to_full: rank mismatch {[f.shape[1] for f in factors]}")
    out = np.ones(rank)
    for f in factors:
        out = out[..., None, :] * f.reshape((1,) * (out.ndim - 1) + f.shape)
    return np.ascontiguousarray(out.sum(axis=-1))


def fused_mixed_product(a, b, x, y, verify: bool = False) -> np.ndarray:
    """Compute ``(A ⊙ B)^T (x ⊙ y)`` as ``(A^T x) * (B^T y)``.

    With ``verify=True`` the left-hand side is also formed literally (the
    Khatri-Rao matrix is materialized) and the two are required to agree.
    """
    a, b, x, y = as_tensor(a), as_tensor(b), as_tensor(x), as_tensor(y)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"fused_mixed_product: factors {a.shape}, {b.shape} do not conform")
    if x.shape != (a.shape[0],) or y.shape != (b.shape[0],):
        raise ValueError(
            f"fused_mixed_product: vectors {x.shape}, {y.shape} do not match "
            f"factor rows {a.shape[0]}, {b.shape[0]}"
        )
    fast = (x @ a) * (y @ b)
    if verify:
        literal = khatri_rao(a, b).T @ np.kron(x, y)
        scale = max(1.0, float(np.max(np.abs(literal), initial=0.0)))
        if np.max(np.abs(literal - fast), initial=0.0) > 1e-12 * scale:
            raise AssertionError("fused_mixed_product: mixed-product identity violated")
    return fast
