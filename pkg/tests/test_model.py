import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcw.errors import ValidationError
from mcw.model import (
    DiscreteAtoms,
    ModelSpec,
    QuadratureDensity,
    build_delta,
    finite_sizes,
    hamiltonian_density,
    load_model,
    log2_counting_offset,
    model_from_dict,
    species_labels,
    spectral_split,
)

from conftest import sizes_of


def test_symmetrizes_small_asymmetry():
    spec = ModelSpec(J=[[0.0, 1.0], [1.0 + 1e-13, 0.0]], h=[0, 0], alpha=[0.5, 0.5])
    assert np.array_equal(spec.J, spec.J.T)


@pytest.mark.parametrize(
    "kw",
    [
        dict(J=[[0, 1], [1.1, 0]], h=[0, 0], alpha=[0.5, 0.5]),
        dict(J=[[0, 1], [1, 0]], h=[0, 0], alpha=[0.6, 0.5]),
        dict(J=[[0, 1], [1, 0]], h=[0, 0], alpha=[1.0, 0.0]),
        dict(J=[[0, 1], [1, 0]], h=[0], alpha=[0.5, 0.5]),
        dict(J=[[0.5]], h=[0], alpha=[1], theta=0.4),
        dict(J=[[np.nan]], h=[0], alpha=[1]),
    ],
)
def test_rejects_bad_models(kw):
    with pytest.raises(ValidationError):
        ModelSpec(**kw)


def test_prior_validation():
    with pytest.raises(ValidationError):
        DiscreteAtoms(((1.5, 1.0),))
    with pytest.raises(ValidationError):
        DiscreteAtoms(((0.0, 0.4), (1.0, 0.5)))
    q = QuadratureDensity((-1.0, 0.0, 1.0), (0.25, 0.5, 0.25))
    assert q.values.tolist() == [-1.0, 0.0, 1.0]


def test_model_roundtrip(tmp_path):
    spec = ModelSpec(J=[[0.5, -0.7], [-0.7, 0.2]], h=[0.1, -0.1], alpha=[0.5, 0.5],
                     prior=DiscreteAtoms(((-1.0, 0.5), (1.0, 0.5))), beta=[1.0, -1.0], theta=0.75)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(spec.to_dict()))
    back = load_model(path)
    assert np.array_equal(back.J, spec.J) and back.theta == 0.75
    assert back.prior == spec.prior


@pytest.mark.parametrize(
    "doc",
    [
        {"K": 1, "J": [[0.5]], "h": [0]},
        {"K": 2, "J": [[0.5]], "h": [0, 0], "alpha": [0.5, 0.5]},
        {"K": 1, "J": [["a"]], "h": [0], "alpha": [1]},
        {"K": 1, "J": [[0.5]], "h": [0], "alpha": [1], "prior": {"type": "gauss"}},
        [1, 2],
    ],
)
def test_model_from_dict_errors(doc):
    with pytest.raises(ValidationError):
        model_from_dict(doc)


def test_load_model_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        load_model(p)


@pytest.mark.parametrize(
    "J, alpha, expected",
    [
        ([[2.0]], [1.0], [[2.0]]),
        ([[0, 1], [1, 0]], [0.5, 0.5], [[0, 0.25], [0.25, 0]]),
        ([[1, -1], [-1, 1]], [0.25, 0.75], [[0.0625, -0.1875], [-0.1875, 0.5625]]),
    ],
)
def test_build_delta(J, alpha, expected):
    spec = ModelSpec(J=J, h=np.zeros(len(alpha)), alpha=alpha)
    delta, _ = build_delta(spec)
    assert np.allclose(delta, expected, atol=1e-15)


def test_split_examples():
    s = spectral_split(np.array([[0, 0.25], [0.25, 0]]))
    assert np.allclose(s.eigenvalues, [-0.25, 0.25]) and s.a == 1
    s = spectral_split(np.diag([1.0, 2.0]))
    assert s.a == 0 and np.allclose(s.delta_minus, 0) and np.allclose(s.delta_plus, np.diag([1.0, 2.0]))
    s = spectral_split(np.zeros((2, 2)))
    assert s.a == 2 and np.all(s.delta_plus == 0) and np.all(s.delta_minus == 0)


def test_split_zeroes_near_null_eigenvalues():
    s = spectral_split(np.diag([-1.0, 1e-12, 2.0]))
    assert s.a == 2
    assert s.null_index.tolist() == [1] and s.inf_index.tolist() == [0] and s.sup_index.tolist() == [2]
    assert np.allclose(s.delta_plus + s.delta_minus, np.diag([-1.0, 0.0, 2.0]))


sym = st.integers(1, 8).flatmap(
    lambda k: arrays(float, (k, k), elements=st.floats(-5, 5, allow_nan=False)).map(lambda a: 0.5 * (a + a.T))
)


@settings(max_examples=60, deadline=None)
@given(sym, st.integers(0, 2**31 - 1))
def test_split_reconstruction_and_signs(delta, seed):
    s = spectral_split(delta)
    O = s.O
    assert np.max(np.abs(O @ O.T - np.eye(len(delta)))) <= 1e-10
    assert np.max(np.abs((O * s.eigenvalues) @ O.T - delta)) <= 1e-10
    assert np.max(np.abs(s.delta_plus + s.delta_minus - delta)) <= 1e-9
    assert np.linalg.eigvalsh(s.delta_plus).min() >= -1e-12
    assert np.linalg.eigvalsh(s.delta_minus).max() <= 1e-12
    m = np.random.default_rng(seed).normal(size=len(delta))
    assert m @ s.delta_plus @ m >= -1e-10 and m @ s.delta_minus @ m <= 1e-10


def test_finite_sizes_examples():
    spec = ModelSpec(J=np.zeros((2, 2)), h=[0, 0], alpha=[0.5, 0.5])
    assert finite_sizes(spec, 100).sizes == (50, 50)
    pert = spec.replace(beta=np.array([1.0, -1.0]), theta=0.5)
    assert finite_sizes(pert, 100).sizes == (60, 40)
    third = ModelSpec(J=np.zeros((3, 3)), h=[0, 0, 0], alpha=[1 / 3, 1 / 3, 1 / 3])
    s = finite_sizes(third, 100)
    assert sum(s.sizes) == 100 and max(abs(n - 100 / 3) for n in s.sizes) <= 1


def test_finite_sizes_errors():
    spec = ModelSpec(J=np.zeros((2, 2)), h=[0, 0], alpha=[0.5, 0.5], beta=[-10.0, 10.0])
    with pytest.raises(ValidationError):
        finite_sizes(spec, 100)
    with pytest.raises(ValidationError):
        finite_sizes(ModelSpec(J=np.zeros((3, 3)), h=[0, 0, 0], alpha=[0.2, 0.3, 0.5]), 2)


def test_nonzero_beta_sum_keeps_nominal_scale():
    spec = ModelSpec(J=[[0.5]], h=[0.2], alpha=[1.0], beta=[0.5])
    s = finite_sizes(spec, 800)
    assert s.N == 800 and s.sizes == (814,)
    assert log2_counting_offset(s) == pytest.approx(814 * np.log(2) / 800)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4), st.integers(10, 5000))
def test_largest_remainder_contract(w, N):
    alpha = np.array(w) / sum(w)
    K = len(alpha)
    spec = ModelSpec(J=np.zeros((K, K)), h=np.zeros(K), alpha=alpha)
    s = finite_sizes(spec, N)
    assert sum(s.sizes) == N
    assert np.all(np.abs(np.array(s.sizes) - N * alpha) < 1.0 + 1e-9) or min(s.sizes) == 1


@pytest.mark.parametrize(
    "J, h, sizes, m, expected",
    [
        ([[0.5]], [0.3], (10,), [0.0], 0.0),
        ([[1.0]], [0.0], (4,), [1.0], 0.5),
        ([[0, 1], [1, 0]], [0.1, 0.0], (5, 5), [1.0, 1.0], 0.30),
    ],
)
def test_hamiltonian_density_examples(J, h, sizes, m, expected):
    spec = ModelSpec(J=J, h=h, alpha=np.array(sizes) / sum(sizes))
    assert hamiltonian_density(spec, sizes_of(*sizes), m) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_hamiltonian_matches_double_sum(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    ns = rng.integers(1, 5, size=K)
    N = int(ns.sum())
    A = rng.uniform(-2, 2, (K, K))
    spec = ModelSpec(J=0.5 * (A + A.T), h=rng.uniform(-1, 1, K), alpha=ns / N)
    sz = sizes_of(*map(int, ns))
    sigma = rng.choice([-1.0, 1.0], size=N)
    lab = species_labels(sz)
    Jij = spec.J[np.ix_(lab, lab)]
    raw = sigma @ Jij @ sigma / (2 * N * N) + spec.h[lab] @ sigma / N
    m = np.array([sigma[lab == l].mean() for l in range(K)])
    assert hamiltonian_density(spec, sz, m) == pytest.approx(raw, abs=1e-12)
