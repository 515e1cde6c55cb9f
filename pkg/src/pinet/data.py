"""Synthetic datasets and CSV ingestion.

All randomness comes from :func:`pinet.polynet.make_rng` (numpy's Philox
counter-based generator), so generators are pure functions of their seed and
sizes.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pinet.polynet import make_rng

TASKS = ("regression", "classification")


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    task: str = "regression"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "classification":
            self.targets = np.asarray(self.targets, dtype=np.int64).reshape(-1)
            if self.targets.size and self.targets.min() < 0:
                raise ValueError("class labels must be non-negative")
        else:
            t = np.asarray(self.targets, dtype=np.float64)
            self.targets = t.reshape(len(t), -1) if t.ndim < 2 else t
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} input rows but {len(self.targets)} targets")
        self.provenance.setdefault("hash", self.content_hash())

    def __len__(self):
        return len(self.inputs)

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        if self.task == "classification":
            return int(self.targets.max()) + 1 if len(self) else 0
        return self.targets.shape[1]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.task.encode())
        for a in (self.inputs, self.targets):
            h.update(str(a.shape).encode())
            h.update(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()

    def subset(self, idx) -> "Dataset":
        prov = {k: v for k, v in self.provenance.items() if k != "hash"}
        prov["parent"] = self.provenance.get("hash")
        return Dataset(self.inputs[idx], self.targets[idx], self.task, prov)


def _monomials(d: int, degree: int):
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), total):
            e = [0] * d
            for i in combo:
                e[i] += 1
            yield tuple(e)


def gen_poly_target(seed: int, d: int, degree: int, n: int) -> Dataset:
    """Inputs uniform on ``[-1, 1]^d``; target a random polynomial of exact total degree."""
    if degree < 1 or n < 1 or d < 1:
        raise ValueError("need degree >= 1, n >= 1 and d >= 1")
    rng = make_rng(seed)
    exps = list(_monomials(d, degree))
    coeffs = rng.standard_normal(len(exps))
    # keep the top degree present whatever the draw
    top = [i for i, e in enumerate(exps) if sum(e) == degree]
    coeffs[top[0]] += np.sign(coeffs[top[0]]) or 1.0
    Z = rng.uniform(-1.0, 1.0, size=(n, d))
    y = np.prod(Z[:, None, :] ** np.array(exps)[None, :, :], axis=2) @ coeffs
    prov = {"generator": "poly_target", "seed": seed, "d": d, "degree": degree, "n": n,
            "coefficients": {"".join(map(str, e)): float(c) for e, c in zip(exps, coeffs)}}
    return Dataset(Z, y, "regression", prov)


def gen_product(seed: int, n: int) -> Dataset:
    """``g(z) = z1 * z2`` with ``z`` uniform on ``[-1, 1]^2``."""
    Z = make_rng(seed).uniform(-1.0, 1.0, size=(n, 2))
    return Dataset(Z, Z[:, 0] * Z[:, 1], "regression",
                   {"generator": "product", "seed": seed, "n": n})


def gen_xor(n: int = 1, sigma: float = 0.0, seed: int = 0) -> Dataset:
    """Four blobs at ``(±1, ±1)``; label 1 where ``z1 * z2 > 0`` at the blob centre."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if n < 1:
        raise ValueError("need at least one point per corner")
    centres = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    labels = (centres[:, 0] * centres[:, 1] > 0).astype(np.int64)
    Z = np.repeat(centres, n, axis=0)
    y = np.repeat(labels, n)
    if sigma > 0:
        Z = Z + sigma * make_rng(seed).standard_normal(Z.shape)
    return Dataset(Z, y, "classification",
                   {"generator": "xor", "seed": seed, "n": n, "sigma": sigma})


def affine_residual(ds: Dataset) -> float:
    """Mean squared residual of the least-squares affine fit (the linear-model floor)."""
    X = np.hstack([ds.inputs, np.ones((len(ds), 1))])
    Y = ds.targets if ds.task == "regression" else ds.targets[:, None].astype(np.float64)
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return float(np.mean((X @ coef - Y) ** 2))


def split(ds: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffled disjoint split; the first part gets ``round(fraction * n)`` rows."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    perm = make_rng(seed).permutation(len(ds))
    cut = int(round(fraction * len(ds)))
    return ds.subset(np.sort(perm[:cut])), ds.subset(np.sort(perm[cut:]))


# -------------------------------------------------------------------- CSV

@dataclass(frozen=True)
class CsvSchema:
    features: tuple
    targets: tuple
    task: str = "regression"


def write_csv(ds: Dataset, path, schema: CsvSchema | None = None) -> CsvSchema:
    """Write with ``repr`` floats so a reload is bit-exact."""
    if schema is None:
        feats = tuple(f"z{i + 1}" for i in range(ds.d))
        if ds.task == "classification":
            tgts = ("label",)
        else:
            tgts = tuple(f"y{i + 1}" for i in range(ds.targets.shape[1]))
        schema = CsvSchema(feats, tgts, ds.task)
    targets = ds.targets[:, None] if ds.task == "classification" else ds.targets
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.features + schema.targets)
        for x, t in zip(ds.inputs, targets):
            w.writerow([repr(float(v)) for v in x] + [str(int(v)) if ds.task == "classification"
                                                       else repr(float(v)) for v in t])
    return schema


class CsvError(ValueError):
    pass


def load_csv(path, schema: CsvSchema) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    rows = list(csv.reader(raw.decode("utf-8").splitlines()))
    if not rows:
        raise CsvError(f"{path}: empty file")
    header = rows[0]
    missing = [c for c in schema.features + schema.targets if c not in header]
    if missing:
        raise CsvError(f"{path}: header lacks columns {missing}")
    fi = [header.index(c) for c in schema.features]
    ti = [header.index(c) for c in schema.targets]
    X, Y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        vals = []
        for col in fi + ti:
            try:
                vals.append(float(row[col]))
            except ValueError:
                raise CsvError(
                    f"{path}:{lineno}: column {header[col]!r} is not numeric: {row[col]!r}"
                ) from None
        X.append(vals[: len(fi)])
        Y.append(vals[len(fi):])
    if not X:
        raise CsvError(f"{path}: no data rows")
    Y = np.array(Y)
    if schema.task == "classification":
        if Y.shape[1] != 1 or np.any(Y != np.round(Y)) or np.any(Y < 0):
            raise CsvError(f"{path}: classification labels must be one non-negative integer column")
        Y = Y[:, 0].astype(np.int64)
    prov = {"source": str(path), "sha256": hashlib.sha256(raw).hexdigest()}
    return Dataset(np.array(X), Y, schema.task, prov)
