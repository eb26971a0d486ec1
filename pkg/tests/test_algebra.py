import math

import numpy as np
import pytest

from fndeform.algebra import (abelian_dense, brute_force_span_dim, dense_tuple_certificate, find_integer_relation,
                              generates_algebra, omega_test, omega_tilde_test, span_closure)
from fndeform.errors import InputError
from fndeform.groups import GroupElement, adjoint, haar_sample, inverse, multiply, so3_rotation
from fndeform.words import enumerate_words, evaluate


def rz(t):
    return so3_rotation("z", t)


def rx(t):
    return so3_rotation("x", t)


def test_span_closure_small_cases():
    assert span_closure([adjoint(GroupElement.identity("so3"))]).dim == 1
    # I, M, M^2, M^3 for a quarter turn span a 3-dimensional commutative algebra
    assert span_closure([adjoint(rz(math.pi / 2))]).dim == 3
    rng = np.random.default_rng(0)
    s = span_closure([adjoint(haar_sample("so3", rng)) for _ in range(2)])
    assert s.dim == 9 and s.full
    assert np.allclose(s.basis @ s.basis.T, np.eye(9), atol=1e-10)


def test_span_closure_errors():
    with pytest.raises(InputError):
        span_closure([])
    with pytest.raises(InputError):
        span_closure([adjoint(GroupElement.identity("torus2"))])


def test_span_closure_product_groups():
    rng = np.random.default_rng(1)
    gens = [haar_sample("so3xso3", rng) for _ in range(2)]
    assert span_closure([adjoint(g) for g in gens]).dim == 18
    half = [GroupElement("so3xso3", [g.blocks[0], np.eye(3)]) for g in gens]
    assert span_closure([adjoint(g) for g in half]).dim == 9 + 1
    torus = [haar_sample("so3xtorus1", rng) for _ in range(2)]
    assert span_closure([adjoint(g) for g in torus]).dim == 9


def test_span_matches_brute_force():
    rng = np.random.default_rng(2)
    for name in ["so3", "su2", "so3xso3"]:
        for k in (1, 2, 3):
            for _ in range(4):
                ads = [adjoint(haar_sample(name, rng)) for _ in range(k)]
                assert span_closure(ads).dim == brute_force_span_dim(ads, 6)
    finite = [adjoint(rz(math.pi / 2)), adjoint(rx(math.pi / 2))]
    assert span_closure(finite).dim == brute_force_span_dim(finite, 6)


def test_span_monotone_and_conjugation_invariant():
    rng = np.random.default_rng(3)
    g = [haar_sample("so5", rng) for _ in range(3)]
    d1 = span_closure([adjoint(g[0])]).dim
    d2 = span_closure([adjoint(x) for x in g[:2]]).dim
    assert d1 <= d2
    for _ in range(3):
        k = haar_sample("so5", rng)
        conj = [multiply(multiply(k, x), inverse(k)) for x in g[:1]]
        assert span_closure([adjoint(x) for x in conj]).dim == span_closure([adjoint(g[0])]).dim


def test_omega_test():
    rng = np.random.default_rng(4)
    others = [haar_sample("so3", rng) for _ in range(2)]
    assert omega_test(GroupElement.identity("so3"), others)
    assert not omega_test(GroupElement.identity("so3"), [GroupElement.identity("so3")])
    assert omega_test(haar_sample("so3", rng), [rz(2 * math.pi / 7)])
    # monotone in the other elements
    g = haar_sample("so3", rng)
    assert omega_test(g, [rz(0.4)]) <= omega_test(g, [rz(0.4), others[0]])


def test_omega_tilde_test():
    rng = np.random.default_rng(5)
    assert omega_tilde_test([haar_sample("so3", rng) for _ in range(3)])
    g = haar_sample("so3", rng)
    assert not omega_tilde_test([g, inverse(g), GroupElement.identity("so3")])
    assert not omega_tilde_test([haar_sample("so3", rng) for _ in range(2)])
    with pytest.raises(InputError):
        omega_tilde_test([g])
    trip = [haar_sample("so3", rng) for _ in range(3)]
    assert omega_tilde_test(trip, threads=3) == omega_tilde_test(trip, threads=1)


def test_integer_relation_search():
    assert find_integer_relation(np.array([0.1, 0.2]), 5, 1e-9) is not None
    rel = find_integer_relation(np.array([math.sqrt(2) - 1, 3 * (math.sqrt(2) - 1) + 0.5]), 10, 1e-9)
    assert rel is not None
    x = np.array([math.sqrt(2) - 1, math.sqrt(3) - 1])
    assert find_integer_relation(x, 20, 1e-9) is None


def test_abelian_dense():
    assert not abelian_dense(GroupElement("torus1", [np.eye(2)]), 50)
    t = GroupElement("torus2", [np.kron(np.eye(2), np.eye(2))])
    assert not abelian_dense(t, 50)
    from fndeform.groups import from_matrices
    c, s = math.cos(1.0), math.sin(1.0)
    c2, s2 = math.cos(math.sqrt(2)), math.sin(math.sqrt(2))
    g = from_matrices("torus2", [[[c, -s, 0, 0], [s, c, 0, 0], [0, 0, c2, -s2], [0, 0, s2, c2]]])
    assert abelian_dense(g, 50)


def test_dense_certificate_random_pair():
    rng = np.random.default_rng(6)
    cert = dense_tuple_certificate([haar_sample("so3", rng) for _ in range(2)], 200)
    assert cert.ok
    d = cert.to_dict()
    assert d["all_true"] and d["qmax"] == 200 and d["l_cert"] == 4 and "rank" in d["thresholds"]


def test_dense_certificate_negative_cases():
    finite = [rz(math.pi / 2), rz(2 * math.pi / 3)]
    cert = dense_tuple_certificate(finite, 50)
    assert not any(cert.per_factor_nontorsion)
    rng = np.random.default_rng(7)
    half = [GroupElement("so3xso3", [haar_sample("so3", rng).blocks[0], np.eye(3)]) for _ in range(2)]
    assert not dense_tuple_certificate(half, 50).algebra_full


def test_generates_algebra_with_torus():
    rng = np.random.default_rng(8)
    assert generates_algebra([haar_sample("so3xtorus1", rng) for _ in range(2)])


def test_dense_pair_covering_smoke():
    # words of length <= 8 in a certified dense pair cover SO(3) coarsely
    rng = np.random.default_rng(9)
    pair = [haar_sample("so3", rng) for _ in range(2)]
    assert dense_tuple_certificate(pair, 200).ok
    vals = np.array([evaluate(w, pair).flat() for w in enumerate_words(2, 8)])
    targets = np.array([haar_sample("so3", rng).flat() for _ in range(200)])
    d = np.sqrt(((targets[:, None, :] - vals[None, :, :]) ** 2).sum(-1)).min(1)
    assert d.max() < 0.8
