import json
import math

import numpy as np
import pytest

from fndeform.errors import BudgetExhausted, CertificationFailed, InputError, ReplayMismatch
from fndeform.groups import GroupElement, distance, haar_sample, multiply, so3_rotation
from fndeform.nielsen import (DeformationProblem, InvertEntry, LeftMultiply, MoveCertificate, SwapEntries,
                              apply_move, deform_to_generate, express_in_gamma, express_in_initial, general_deform,
                              lmove, move_inverse, replay, replay_residual)
from fndeform.words import Word, evaluate


def same_tuple(x, y, tol=1e-10):
    return all(distance(a, b) <= tol for a, b in zip(x, y))


def test_l21_move():
    rng = np.random.default_rng(0)
    g = [haar_sample("so3", rng) for _ in range(3)]
    out = apply_move(g, lmove(3, 1, 0))
    assert distance(out[0], multiply(g[1], g[0])) < 1e-15
    assert out[1] is g[1] and out[2] is g[2]
    back = apply_move(out, LeftMultiply(0, Word.from_text("B", 3)))
    assert same_tuple(back, g)
    assert same_tuple(apply_move(g, LeftMultiply(1, Word(3))), g)


def test_move_validation():
    with pytest.raises(InputError):
        LeftMultiply(0, Word.from_text("ab", 3))
    rng = np.random.default_rng(1)
    g = [haar_sample("so3", rng) for _ in range(3)]
    with pytest.raises(InputError):
        apply_move(g, InvertEntry(3))
    with pytest.raises(InputError):
        apply_move(g, SwapEntries(1, 1))


def test_moves_invertible():
    rng = np.random.default_rng(2)
    g = [haar_sample("so3xtorus1", rng) for _ in range(4)]
    moves = [LeftMultiply(2, Word.from_text("abDa", 4)), InvertEntry(1), SwapEntries(0, 3), lmove(4, 3, 1, -1)]
    for m in moves:
        assert same_tuple(apply_move(apply_move(g, m), move_inverse(m)), g)


def test_replay_and_symbolic_words():
    rng = np.random.default_rng(3)
    g = [haar_sample("so3", rng) for _ in range(3)]
    moves = [lmove(3, 1, 0), LeftMultiply(2, Word.from_text("aB", 3)), InvertEntry(1), SwapEntries(0, 2)]
    cur = list(g)
    for m in moves:
        cur = apply_move(cur, m)
    cert = MoveCertificate(g, moves, cur)
    assert same_tuple(replay(cert), cur)
    assert same_tuple(replay(MoveCertificate(g, [], g)), g)
    for w, t in zip(express_in_initial(cert), cur):
        assert distance(evaluate(w, g), t) < 1e-10
    bad = MoveCertificate(g, moves, [cur[0], haar_sample("so3", rng), cur[2]])
    with pytest.raises(ReplayMismatch):
        replay(bad)


def random_problem(k, spec="so3", n=3, eps=0.25):
    rng = np.random.default_rng(500 + k)
    targets = [haar_sample(spec, rng) for _ in range(n)]
    gamma = [haar_sample(spec, rng) for _ in range(n - 1)]
    return DeformationProblem(spec, targets, gamma, eps, seed=k)


def check_solution(p, t, cert):
    assert max(distance(a, b) for a, b in zip(t, p.targets)) < p.epsilon
    assert replay_residual(cert) < 1e-7
    replay(cert)
    # every final entry is an explicit word in Gamma's generators
    for w, x in zip(express_in_gamma(cert), t):
        assert distance(evaluate(w, p.gamma), x) < 1e-7


def test_deform_to_generate_instances():
    for k in range(4):
        p = random_problem(k)
        t, cert = deform_to_generate(p)
        check_solution(p, t, cert)


def test_deform_deterministic_and_serializable():
    p = random_problem(7)
    t1, c1 = deform_to_generate(p)
    t2, c2 = deform_to_generate(random_problem(7))
    assert json.dumps(c1.to_dict(), sort_keys=True) == json.dumps(c2.to_dict(), sort_keys=True)
    c3 = MoveCertificate.from_dict(json.loads(json.dumps(c1.to_dict())))
    assert same_tuple(replay(c3), t1)
    q = DeformationProblem.from_dict(json.loads(json.dumps(p.to_dict())))
    assert q.to_dict() == p.to_dict()


def test_deform_targets_reachable_without_moves():
    rng = np.random.default_rng(8)
    gamma = [haar_sample("so3", rng) for _ in range(2)]
    p0 = DeformationProblem("so3", [gamma[0], gamma[1], gamma[0]], gamma, 0.25)
    t, cert = deform_to_generate(p0)
    wn = Word.from_text(cert.info["gamma_n_word"], 2)
    p = DeformationProblem("so3", [gamma[0], gamma[1], evaluate(wn, gamma)], gamma, 0.25)
    t, cert = deform_to_generate(p)
    # the only move is the one installing gamma_n
    assert cert.moves == [LeftMultiply(2, wn.relabel(3, [0, 1]))]
    assert max(distance(a, b) for a, b in zip(t, p.targets)) == 0.0


def test_deform_rejects_non_dense_gamma():
    rz = [so3_rotation("z", 2 * math.pi / 5), so3_rotation("z", 2 * math.pi / 7)]
    rng = np.random.default_rng(9)
    p = DeformationProblem("so3", [haar_sample("so3", rng) for _ in range(3)], rz, 0.25)
    with pytest.raises(CertificationFailed):
        deform_to_generate(p)


def test_problem_validation():
    rng = np.random.default_rng(10)
    g = [haar_sample("so3", rng) for _ in range(3)]
    with pytest.raises(InputError):
        DeformationProblem("so3", g[:2], g[:1], 0.2)
    with pytest.raises(InputError):
        DeformationProblem("so3", g, g[:1], 0.2)
    with pytest.raises(InputError):
        DeformationProblem("so3", g, g[:2], 0.0)
    with pytest.raises(InputError):
        deform_to_generate(DeformationProblem("so3xtorus1", [haar_sample("so3xtorus1", rng) for _ in range(3)],
                                              [haar_sample("so3xtorus1", rng) for _ in range(2)], 0.4))


def test_budget_exhaustion_is_reported():
    p = random_problem(11)
    p.budgets = {"lengths": [2]}
    with pytest.raises(BudgetExhausted) as err:
        deform_to_generate(p)
    assert err.value.phase in ("b", "c", "d")


def test_general_deform_semisimple_case():
    p = random_problem(12, eps=0.6)
    t, cert = general_deform(p)
    check_solution(p, t, cert)


def test_general_deform_with_torus():
    p = random_problem(13, spec="so3xtorus1", n=4, eps=0.4)
    t, cert = general_deform(p)
    check_solution(p, t, cert)
    assert cert.info["mode"].startswith("general")


def test_inverse_moves_recover_initial_tuple():
    # moves are invertible, so the initial entries are words in the final ones and both generate the same group
    p = random_problem(14)
    t, cert = deform_to_generate(p)
    cur = list(t)
    for m in reversed(cert.moves):
        cur = apply_move(cur, move_inverse(m))
    assert same_tuple(cur, cert.initial, 1e-9)
