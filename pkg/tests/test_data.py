import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinet.data import (CsvError, CsvSchema, Dataset, affine_residual, gen_poly_target,
                        gen_product, gen_xor, load_csv, split, write_csv)


def test_poly_target_degree_one_is_affine():
    ds = gen_poly_target(0, 3, 1, 50)
    assert affine_residual(ds) < 1e-10


def test_poly_target_degree_three_beats_affine_floor():
    ds = gen_poly_target(1, 2, 3, 200)
    assert affine_residual(ds) > 1e-3
    assert len(ds.provenance["coefficients"]) == 10


def test_poly_target_reproduces_from_provenance():
    ds = gen_poly_target(2, 2, 2, 20)
    y = np.zeros(len(ds))
    for key, c in ds.provenance["coefficients"].items():
        e = [int(ch) for ch in key]
        y += c * ds.inputs[:, 0] ** e[0] * ds.inputs[:, 1] ** e[1]
    np.testing.assert_allclose(ds.targets[:, 0], y, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("gen", [
    lambda s: gen_poly_target(s, 2, 3, 30),
    lambda s: gen_product(s, 30),
    lambda s: gen_xor(5, 0.3, s),
])
def test_generators_are_pure(gen):
    a, b, c = gen(7), gen(7), gen(8)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.targets.tobytes() == b.targets.tobytes()
    assert a.provenance["hash"] == b.provenance["hash"]
    assert a.provenance["hash"] != c.provenance["hash"]


def test_xor_noiseless():
    ds = gen_xor(1, 0.0)
    assert len(ds) == 4
    np.testing.assert_array_equal(ds.targets, (ds.inputs[:, 0] * ds.inputs[:, 1] > 0))
    assert ds.n_outputs == 2


def test_xor_noisy_sign_classifier():
    ds = gen_xor(100, 0.2, seed=3)
    acc = np.mean((ds.inputs[:, 0] * ds.inputs[:, 1] > 0) == ds.targets)
    assert acc > 0.95


def test_xor_rejects_negative_sigma():
    with pytest.raises(ValueError):
        gen_xor(1, -0.1)


def test_product_targets_and_floor():
    ds = gen_product(0, 256)
    np.testing.assert_array_equal(ds.targets[:, 0], ds.inputs[:, 0] * ds.inputs[:, 1])
    assert np.all(np.abs(ds.inputs) <= 1)
    # variance of z1*z2 on the square is 1/9; the affine fit removes almost nothing
    assert 0.05 < affine_residual(ds) < 0.2


def test_hash_tracks_content():
    ds = gen_product(0, 10)
    inputs = ds.inputs.copy()
    inputs[3, 1] += 1e-12
    assert Dataset(inputs, ds.targets).provenance["hash"] != ds.provenance["hash"]
    assert Dataset(ds.inputs.copy(), ds.targets.copy()).provenance["hash"] == ds.provenance["hash"]


def test_dataset_validation():
    with pytest.raises(ValueError, match="targets"):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, -1], "classification")
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 1], "ranking")


def test_split_basic():
    ds = gen_product(0, 10)
    a, b = split(ds, 0.5, seed=1)
    assert (len(a), len(b)) == (5, 5)
    rows = sorted(map(tuple, np.vstack([a.inputs, b.inputs])))
    assert rows == sorted(map(tuple, ds.inputs))
    a2, _ = split(ds, 0.5, seed=1)
    assert a.inputs.tobytes() == a2.inputs.tobytes()
    for bad in (0, 1, -0.2, 1.5):
        with pytest.raises(ValueError):
            split(ds, bad)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), fraction=st.floats(0.05, 0.95), seed=st.integers(0, 2**31))
def test_split_disjoint_exhaustive(n, fraction, seed):
    ds = gen_product(seed, n)
    a, b = split(ds, fraction, seed)
    assert len(a) + len(b) == n
    assert not set(map(tuple, a.inputs)) & set(map(tuple, b.inputs))


@pytest.mark.parametrize("ds", [gen_poly_target(3, 3, 2, 25), gen_xor(3, 0.4, 1)])
def test_csv_round_trip(tmp_path, ds):
    path = tmp_path / "data.csv"
    schema = write_csv(ds, path)
    back = load_csv(path, schema)
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    assert back.targets.tobytes() == ds.targets.tobytes()
    assert back.provenance["source"] == str(path)
    assert b"\r\n" not in path.read_bytes()


def test_csv_scientific_notation(tmp_path):
    path = tmp_path / "sci.csv"
    path.write_text("z1,y1\n1e-300,-2.5E+10\n0.1,3\n")
    ds = load_csv(path, CsvSchema(("z1",), ("y1",)))
    assert ds.inputs[0, 0] == 1e-300 and ds.targets[0, 0] == -2.5e10
    assert ds.inputs[1, 0] == 0.1


def test_csv_errors(tmp_path):
    schema = CsvSchema(("z1",), ("y1",))
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(CsvError, match="empty"):
        load_csv(empty, schema)
    header = tmp_path / "header.csv"
    header.write_text("z1,y1\n")
    with pytest.raises(CsvError, match="no data rows"):
        load_csv(header, schema)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("z1,y1\n1,2\n3\n")
    with pytest.raises(CsvError, match=":3:"):
        load_csv(ragged, schema)
    text = tmp_path / "text.csv"
    text.write_text("z1,y1\n1,2\n3,abc\n")
    with pytest.raises(CsvError, match="'y1'"):
        load_csv(text, schema)
    with pytest.raises(CsvError, match="lacks"):
        load_csv(text, CsvSchema(("z9",), ("y1",)))
