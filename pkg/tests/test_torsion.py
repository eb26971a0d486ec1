import math
import warnings

import numpy as np
import pytest

from fndeform.errors import BudgetExhausted, InputError, NotRegularError, QmaxTooSmall
from fndeform.groups import (AlgebraElement, GroupElement, adjoint, distance, exp_map, haar_sample, inverse,
                             is_regular, log_map, multiply, so3_rotation, torsion_project)
from fndeform.torsion import (ThresholdAnomaly, claim_check, conjugated_torus_element, fa_witness, group_power,
                              is_product_map_open, kernel_space, product_differential, relation_report,
                              solve_torsion_product, torus_angles_in_frame, z2_example)
from fndeform.words import evaluate


def rz(t):
    return so3_rotation("z", t)


def rx(t):
    return so3_rotation("x", t)


def conj(g, x):
    return multiply(multiply(g, x), inverse(g))


def test_kernel_space():
    assert len(kernel_space(GroupElement.identity("so5"))) == 10
    k = kernel_space(rz(2 * math.pi / 7))
    assert len(k) == 1
    # the fixed direction is the z generator: it commutes with every z rotation
    assert np.allclose(adjoint(rz(1.234)).matrix @ k[0].coords, k[0].coords)
    rng = np.random.default_rng(0)
    for name, rank in [("so3", 1), ("so5", 2), ("so6", 3), ("su2", 1)]:
        g = haar_sample(name, rng)
        m = adjoint(g).matrix - np.eye(g.spec.alg_dim)
        assert len(kernel_space(g)) == rank == g.spec.alg_dim - np.linalg.matrix_rank(m, tol=1e-8)


def test_claim_check():
    assert not claim_check(rz(0.7), rz(1.9))
    assert claim_check(rz(2 * math.pi / 7), rx(2 * math.pi / 5))
    rng = np.random.default_rng(1)
    assert all(claim_check(haar_sample("so3", rng), haar_sample("so3", rng)) for _ in range(200))
    with pytest.raises(NotRegularError):
        claim_check(GroupElement.identity("so3"), rz(0.3))


def fd_differential(a, b, h=1e-5):
    # oracle: central differences of (X, Y) -> log((ab)^-1 a^exp(X) b^exp(Y))
    spec = a.spec
    n = spec.alg_dim
    base = inverse(multiply(a, b))

    def f(v):
        g = exp_map(AlgebraElement(spec, v[:n]))
        k = exp_map(AlgebraElement(spec, v[n:]))
        return log_map(multiply(base, multiply(conj(g, a), conj(k, b)))).coords

    cols = []
    for i in range(2 * n):
        e = np.zeros(2 * n)
        e[i] = h
        cols.append((f(e) - f(-e)) / (2 * h))
    return np.array(cols).T


def test_product_differential_finite_differences():
    rng = np.random.default_rng(2)
    for name in ["so3", "su2", "so5", "so3xso3"]:
        a, b = haar_sample(name, rng), haar_sample(name, rng)
        pd = product_differential(a, b)
        assert pd.matrix.shape == (a.spec.alg_dim, 2 * a.spec.alg_dim)
        assert np.abs(pd.matrix - fd_differential(a, b)).max() < 1e-6


def test_product_differential_cases():
    e = GroupElement.identity("so3")
    assert np.abs(product_differential(e, e).matrix).max() < 1e-15
    pd = product_differential(rz(2 * math.pi / 7), rx(2 * math.pi / 5))
    assert pd.surjective() and pd.sigma_min > 1e-8 and pd.eq1_rank == 3
    with pytest.raises(InputError):
        product_differential(haar_sample("so3xtorus1", np.random.default_rng(3)),
                             haar_sample("so3xtorus1", np.random.default_rng(4)))


def test_product_map_open_agrees_with_claim():
    assert not is_product_map_open(rz(0.5), rz(2.0))
    rng = np.random.default_rng(5)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ThresholdAnomaly)
        for _ in range(200):
            a, b = haar_sample("so3", rng), haar_sample("so3", rng)
            assert is_product_map_open(a, b) == claim_check(a, b) is True


def test_solve_torsion_product():
    rng = np.random.default_rng(6)
    ident = GroupElement.identity("so3")
    for _ in range(5):
        a = torsion_project(haar_sample("so3", rng), 12)
        b = torsion_project(haar_sample("so3", rng), 12)
        w = solve_torsion_product(a, b, 60, 0.2)
        assert w.residuals[-1] < 1e-10
        assert w.iterations <= 25
        assert sum(np.linalg.norm(x) for x in w.conjugator_logs) < 0.2
        a1, b1 = w.pair
        for x, q in zip((a1, b1, multiply(a1, b1)), w.orders):
            assert distance(group_power(x, q), ident) < 1e-8
        # a' and b' are conjugates of a and b by the recorded conjugators
        assert distance(conj(w.conjugators[0], a), a1) < 1e-12
        assert distance(conj(w.conjugators[1], b), b1) < 1e-12
        assert w.certificate.ok


def test_solve_torsion_product_conjugation_invariance():
    rng = np.random.default_rng(7)
    a = torsion_project(haar_sample("so3", rng), 12)
    b = torsion_project(haar_sample("so3", rng), 12)
    k = haar_sample("so3", rng)
    w1 = solve_torsion_product(a, b, 60, 0.2)
    w2 = solve_torsion_product(conj(k, a), conj(k, b), 60, 0.2)
    assert w1.orders == w2.orders
    assert len(w1.residuals) == len(w2.residuals)
    assert np.allclose(w1.residuals[:3], w2.residuals[:3], atol=1e-9)


def test_solve_torsion_product_errors():
    # non-torsion input
    with pytest.raises(InputError):
        solve_torsion_product(rz(1.0), rx(2.0), 60, 0.2)
    # same-axis pair fails the kernel claim
    with pytest.raises(InputError):
        solve_torsion_product(torsion_project(rz(1.0), 7), torsion_project(rz(2.0), 7), 60, 0.2)


def test_solve_torsion_product_already_torsion():
    # b is a half turn about an axis tilted by t from z; t is chosen so that ab turns by 6 pi / 7,
    # making a, b, ab of orders 5, 2, 7 (an infinite triangle group, dense in SO(3))
    from scipy.optimize import brentq

    a = rz(2 * math.pi / 5)

    def half_turn(t):
        return so3_rotation([math.sin(t), 0.0, math.cos(t)], math.pi)

    def gap(t):
        tr = np.trace(multiply(a, half_turn(t)).blocks[0])
        return math.acos(np.clip((tr - 1) / 2, -1, 1)) - 6 * math.pi / 7

    b = half_turn(brentq(gap, 0.0, math.pi / 2))
    w = solve_torsion_product(a, b, 60, 0.2)
    assert w.iterations == 0 and w.orders == (5, 2, 7)
    assert max(np.linalg.norm(x) for x in w.conjugator_logs) == 0.0


def test_fa_witness():
    rng = np.random.default_rng(8)
    for name in ["so3", "su2"]:
        for _ in range(3):
            a, b = haar_sample(name, rng), haar_sample(name, rng)
            w = fa_witness(a, b, 0.3, 60)
            assert max(w.power_residuals()) < 1e-8
            assert distance(w.pair[0], a) < 0.3 and distance(w.pair[1], b) < 0.3
            assert all(isinstance(q, int) and q >= 1 for q in w.orders)
            d = w.to_dict()
            assert len(d["orders"]) == 3 and "newton" in d["thresholds"]


def test_fa_witness_qmax_too_small():
    rng = np.random.default_rng(9)
    with pytest.raises(QmaxTooSmall) as err:
        fa_witness(haar_sample("so3", rng), haar_sample("so3", rng), 0.3, 3)
    assert err.value.bound >= err.value.allowed


def test_fa_witness_valid_input_unchanged():
    rng = np.random.default_rng(10)
    w = fa_witness(haar_sample("so3", rng), haar_sample("so3", rng), 0.3, 60)
    again = fa_witness(*w.pair, 0.3, 60)
    assert distance(again.pair[0], w.pair[0]) == 0.0 and distance(again.pair[1], w.pair[1]) == 0.0


def test_relation_report_planted():
    rng = np.random.default_rng(11)
    a = haar_sample("so3", rng)
    phi = torus_angles_in_frame(a, a)[0]
    # c = exp((2 phi + 2 pi / 3) / 3) on the torus of a satisfies 3 t_c - 2 t_a = 1/3 turns, i.e. 9 t_c - 6 t_a = 1
    c = conjugated_torus_element(a, GroupElement.identity("so3"), [(2 * phi + 2 * math.pi / 3) / 3])
    rep = relation_report(c, a, 20)
    assert rep["relation"] is not None and not rep["free_abelian_up_to_bound"]
    k = np.array(rep["relation"][:2])
    turns = np.array(rep["turns"])
    assert abs(k @ turns - round(k @ turns)) < 1e-6
    assert sorted(np.abs(k).tolist()) == [6, 9]
    generic = conjugated_torus_element(a, GroupElement.identity("so3"), [math.sqrt(2)])
    assert relation_report(generic, a, 20)["free_abelian_up_to_bound"]


def test_z2_example():
    rng = np.random.default_rng(12)
    done = 0
    for i in range(4):
        a, b, c = (haar_sample("so3", rng) for _ in range(3))
        try:
            (a1, b1, c1), word, rep = z2_example(a, b, c, 0.2, 12, 20, seed=i)
        except BudgetExhausted:
            continue
        done += 1
        assert max(rep["distances"]) < 0.2
        assert rep["free_abelian_up_to_bound"] and rep["bound"] == 20
        assert is_regular(a1)
        g = evaluate(word, [a1, b1])
        ac = conj(g, a1)
        # c' commutes with the conjugated a'
        assert distance(multiply(c1, ac), multiply(ac, c1)) < 1e-9
    assert done >= 3


def test_z2_c_on_torus_of_a():
    rng = np.random.default_rng(13)
    a, b = haar_sample("so3", rng), haar_sample("so3", rng)
    c = conjugated_torus_element(a, GroupElement.identity("so3"), [math.sqrt(3)])
    (a1, b1, c1), word, rep = z2_example(a, b, c, 0.2, 12, 20)
    assert len(word) == 0
    assert distance(c1, c) < 0.2 and rep["free_abelian_up_to_bound"]
