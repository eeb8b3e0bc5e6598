import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from raga.attacks import AttackError, Gaussian, Lie, NoAttack, SignFlip, forge
from raga.client import ClientUpdate

uploads = hnp.arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=st.floats(-1e3, 1e3))


def test_signflip_example():
    honest = [ClientUpdate(np.array([1.0, 2.0]), 3, 0), ClientUpdate(np.array([3.0, 4.0]), 3, 1)]
    out = forge(SignFlip(3.0), honest, 2, 2, np.random.default_rng(0))
    assert len(out) == 2 and all(np.array_equal(v, [-12.0, -18.0]) for v in out)


def test_lie_example():
    out = forge(Lie(0.7), [np.array([1.0]), np.array([3.0])], 1, 1, np.random.default_rng(0))
    assert out[0][0] == pytest.approx(2.7, abs=1e-15)


def test_gaussian_variance():
    rng = np.random.default_rng(0)
    out = np.array(forge(Gaussian(), [], 1000, 100, rng))
    assert out.shape == (1000, 100)
    assert abs(out.var() / 90.0 - 1) < 0.02
    assert Gaussian().std == pytest.approx(math.sqrt(90))


def test_no_attack_and_empty():
    assert forge(NoAttack(), [np.ones(2)], 3, 2, np.random.default_rng(0)) == []
    assert forge(SignFlip(), [np.ones(2)], 0, 2, np.random.default_rng(0)) == []


def test_errors():
    with pytest.raises(AttackError):
        forge(Lie(), [], 1, 2, np.random.default_rng(0))
    with pytest.raises(AttackError):
        forge(SignFlip(), [], 1, 2, np.random.default_rng(0))
    with pytest.raises(AttackError):
        Gaussian(std=0)
    with pytest.raises(AttackError):
        Lie(coeff=-1)


@given(uploads)
def test_signflip_equivariance(arr):
    rng = np.random.default_rng(0)
    a = forge(SignFlip(), list(arr), 1, arr.shape[1], rng)[0]
    b = forge(SignFlip(), list(-arr), 1, arr.shape[1], rng)[0]
    assert np.array_equal(b, -a)


@given(uploads, st.floats(-100, 100))
def test_lie_shift_equivariance(arr, v):
    rng = np.random.default_rng(0)
    a = forge(Lie(), list(arr), 1, arr.shape[1], rng)[0]
    b = forge(Lie(), list(arr + v), 1, arr.shape[1], rng)[0]
    assert np.allclose(b, a + v, atol=1e-9 * (1 + np.abs(arr).max() + abs(v)))


def test_inputs_not_mutated():
    honest = [np.array([1.0, 2.0]), np.array([3.0, 5.0])]
    copies = [h.copy() for h in honest]
    out = forge(Lie(), honest, 2, 2, np.random.default_rng(0))
    out[0][0] = 99.0
    assert all(np.array_equal(h, c) for h, c in zip(honest, copies))
    assert out[1][0] != 99.0
