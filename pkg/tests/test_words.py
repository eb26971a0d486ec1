import itertools
import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from fndeform.errors import InputError, NetUnreachable
from fndeform.groups import GroupElement, distance, haar_sample, multiply, perturb
from fndeform.words import (Word, build_net, count_words, enumerate_words, evaluate, net_coverage_at, net_margin,
                            steer_candidates, steer_to_target)


def brute_reduced_words(rank, max_len):
    # oracle: filter all letter strings for free reduction
    out = []
    for n in range(max_len + 1):
        for codes in itertools.product(range(2 * rank), repeat=n):
            if all(a ^ 1 != b for a, b in zip(codes, codes[1:])):
                out.append(codes)
    return sorted(out, key=lambda c: (len(c), c))


def test_word_invariants_and_text():
    with pytest.raises(InputError):
        Word(2, [0, 1])
    with pytest.raises(InputError):
        Word(2, [4])
    w = Word.from_text("bA")
    assert w.pairs == [(1, 1), (0, -1)]
    assert w.to_text() == "bA"
    assert (w * w.inverse()).codes == ()


def test_enumerate_words_counts():
    assert len(list(enumerate_words(2, 1))) == 5
    assert len(list(enumerate_words(2, 2))) == 17
    assert len(list(enumerate_words(3, 0))) == 1
    for rank, L in [(1, 4), (2, 4), (3, 3)]:
        words = list(enumerate_words(rank, L))
        assert len(words) == count_words(rank, L)
        assert [w.codes for w in words] == brute_reduced_words(rank, L)


def test_evaluate_basics():
    rng = np.random.default_rng(0)
    g1, g2 = haar_sample("so3", rng), haar_sample("so3", rng)
    assert distance(evaluate(Word(2), [g1, g2]), GroupElement.identity("so3")) == 0.0
    assert distance(evaluate(Word.from_text("ba"), [g1, g2]), multiply(g2, g1)) < 1e-15
    with pytest.raises(InputError):
        evaluate(Word.from_text("ab"), [g1])


def test_evaluate_homomorphism_and_lipschitz():
    rng = np.random.default_rng(1)
    tup = [haar_sample("so3xtorus1", rng) for _ in range(3)]
    words = list(enumerate_words(3, 3))
    for _ in range(50):
        u, v = words[rng.integers(len(words))], words[rng.integers(len(words))]
        lhs = evaluate(u * v, tup)
        rhs = multiply(evaluate(u, tup), evaluate(v, tup))
        assert distance(lhs, rhs) < 1e-9
    delta = 1e-3
    moved = [perturb(g, delta, rng) for g in tup]
    for w in words[-20:]:
        bound = len(w) * max(distance(a, b) for a, b in zip(tup, moved))
        assert distance(evaluate(w, tup), evaluate(w, moved)) <= bound + 1e-12


def test_steer_trivial_targets():
    rng = np.random.default_rng(2)
    pair = [haar_sample("so3", rng) for _ in range(2)]
    w, d = steer_to_target(pair, pair[0], 6)
    assert w.to_text() == "a" and d < 1e-12
    w, d = steer_to_target(pair, GroupElement.identity("so3"), 6)
    assert len(w) == 0 and d == 0.0


def test_steer_exhaustive_oracle_and_mitm_agree():
    rng = np.random.default_rng(3)
    pair = [haar_sample("so3", rng) for _ in range(2)]
    words = list(enumerate_words(2, 7))
    vals = np.array([evaluate(w, pair).flat() for w in words])
    for _ in range(5):
        t = haar_sample("so3", rng)
        d = np.linalg.norm(vals - t.flat(), axis=1)
        w_ex, d_ex = steer_to_target(pair, t, 7, budget=10 ** 9)
        w_mm, d_mm = steer_to_target(pair, t, 7, budget=1)
        assert w_ex == w_mm == words[int(np.argmin(d))]
        assert d_ex == pytest.approx(d.min(), abs=1e-12)
        assert d_mm == pytest.approx(d.min(), abs=1e-12)


def test_steer_monotone_in_length():
    rng = np.random.default_rng(4)
    pair = [haar_sample("so3", rng) for _ in range(2)]
    t = haar_sample("so3", rng)
    ds = [steer_to_target(pair, t, L)[1] for L in (2, 4, 6, 8, 10, 12, 14)]
    assert all(b <= a + 1e-15 for a, b in zip(ds, ds[1:]))
    assert ds[-1] < 0.5


def test_steer_candidates_sorted_within_radius():
    rng = np.random.default_rng(5)
    pair = [haar_sample("so3", rng) for _ in range(2)]
    t = haar_sample("so3", rng)
    cands = steer_candidates(pair, t, 10, k=8, radius=0.6)
    assert all(d < 0.6 for _, d in cands)
    assert [d for _, d in cands] == sorted(d for _, d in cands)
    for w, d in cands:
        assert distance(evaluate(w, pair), t) == pytest.approx(d, abs=1e-9)


def test_net_large_epsilon_is_single_word():
    rng = np.random.default_rng(6)
    pair = tuple(haar_sample("so3", rng) for _ in range(2))
    net = build_net(pair, 2 * 2 * math.sqrt(2) + 0.1, 1000)
    assert len(net) == 1 and len(net.word(0)) == 0


def test_net_so3_coverage_and_invariants():
    rng = np.random.default_rng(7)
    pair = tuple(haar_sample("so3", rng) for _ in range(2))
    net = build_net(pair, 1.2, 10_000, seed=3)
    assert net.covered_fraction == 1.0
    # Haar mass of a Frobenius ball of radius r is (phi - sin phi) / pi with r = 2 sqrt2 sin(phi / 2):
    # covering at eps/2 needs at least 1 / mass(eps/2) centers, eps/4-separation allows at most 1 / mass(eps/8)
    def mass(r):
        phi = 2 * math.asin(r / (2 * math.sqrt(2)))
        return (phi - math.sin(phi)) / math.pi
    assert 1 / mass(0.6) <= len(net) <= 1 / mass(0.15)
    centers = net.centers
    for j in range(len(net)):
        assert np.linalg.norm(evaluate(net.word(j), pair).flat() - centers[j]) < 1e-10
    # pairwise separation of at least eps/4
    d = np.sqrt(((centers[:, None] - centers[None]) ** 2).sum(-1))
    assert d[np.triu_indices(len(net), 1)].min() >= 1.2 / 4
    # independent coverage check at radius eps/2
    pts = np.array([haar_sample("so3", rng).flat() for _ in range(3000)])
    nearest = np.sqrt(((pts[:, None] - centers[None]) ** 2).sum(-1)).min(1)
    assert nearest.max() <= 0.6
    # reproducible from the recorded seed
    again = build_net(pair, 1.2, 10_000, seed=3)
    assert [w.codes for w in again.words] == [w.codes for w in net.words]
    d = net.to_dict()
    assert d["seed"] == 3 and d["confidence_samples"] == 10_000


def test_net_margin_formula_and_stability():
    rng = np.random.default_rng(8)
    pair = tuple(haar_sample("so3", rng) for _ in range(2))
    net = build_net(pair, 1.2, 5000, seed=1)
    eps1 = net_margin(net)
    assert eps1 == pytest.approx(min(0.6, 0.6 / net.max_len))
    for _ in range(3):
        moved = tuple(perturb(g, eps1 * 0.999, rng) for g in pair)
        assert net_coverage_at(net, moved, samples=5000, seed=11) == 1.0


def test_net_with_torus_block():
    rng = np.random.default_rng(9)
    pair = tuple(haar_sample("so3xtorus1", rng) for _ in range(2))
    net = build_net(pair, 1.6, 4000, seed=2)
    assert net.covered_fraction == 1.0
    pts = np.array([haar_sample("so3xtorus1", rng).flat() for _ in range(2000)])
    nearest, _ = cKDTree(net.centers).query(pts)
    assert nearest.max() <= 0.8


def test_net_unreachable():
    rng = np.random.default_rng(10)
    pair = tuple(haar_sample("so3", rng) for _ in range(2))
    with pytest.raises(NetUnreachable):
        build_net(pair, 0.2, 2000, max_len_cap=3)
