"""Product-replacement moves with replayable certificates, and the deformation algorithms.

A tuple is a list of group elements.  Every move replaces one entry by an
expression in the entries, is invertible, and so preserves the generated
subgroup.  A :class:`MoveCertificate` records the starting tuple, the moves and
the result, and can be replayed independently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .algebra import abelian_dense, dense_tuple_certificate, generates_algebra, omega_test, omega_tilde_test
from .config import tolerances
from .errors import (BudgetExhausted, CertificationFailed, FnDeformError, InputError, NetUnreachable,
                     ReplayMismatch, SpecMismatch)
from .groups import (GroupElement, GroupSpec, decode_element, distance, encode_element, inverse, multiply,
                     perturb, project_to_factor, torsion_order, NonTorsionUpTo)
from .words import (CLASS_RADIUS, Word, build_net, clear_cache, element_mixing, evaluate, mixing_score,
                    net_coverage_at, net_margin, steer_candidates)


# ---------------------------------------------------------------------------
# Moves

@dataclass(frozen=True)
class LeftMultiply:
    """Replace entry ``target`` by ``word(tuple) * entry``; the word may not use ``target``."""

    target: int
    word: Word

    def __post_init__(self):
        if self.word.uses(self.target):
            raise InputError("multiplier word uses the target index")


@dataclass(frozen=True)
class InvertEntry:
    index: int


@dataclass(frozen=True)
class SwapEntries:
    i: int
    j: int


Move = Union[LeftMultiply, InvertEntry, SwapEntries]


def _check_index(i, n):
    if not 0 <= i < n:
        raise InputError(f"index {i} out of range for a tuple of length {n}")


def apply_move(tup: Sequence[GroupElement], m: Move) -> list:
    tup = list(tup)
    n = len(tup)
    if isinstance(m, LeftMultiply):
        _check_index(m.target, n)
        if m.word.rank != n:
            raise InputError(f"multiplier word of rank {m.word.rank} on a tuple of length {n}")
        tup[m.target] = multiply(evaluate(m.word, tup), tup[m.target])
    elif isinstance(m, InvertEntry):
        _check_index(m.index, n)
        tup[m.index] = inverse(tup[m.index])
    elif isinstance(m, SwapEntries):
        _check_index(m.i, n)
        _check_index(m.j, n)
        if m.i == m.j:
            raise InputError("swap needs two distinct indices")
        tup[m.i], tup[m.j] = tup[m.j], tup[m.i]
    else:
        raise InputError(f"unknown move {m!r}")
    return tup


def move_inverse(m: Move) -> Move:
    if isinstance(m, LeftMultiply):
        # the word does not involve the target, so its value is unchanged by the move
        return LeftMultiply(m.target, m.word.inverse())
    return m


def lmove(n: int, i: int, j: int, exponent: int = 1) -> LeftMultiply:
    """The move L_{i,j}^{+-1}: entry j becomes t_i^{+-1} t_j (indices from 0)."""
    return LeftMultiply(j, Word.letter(n, i, exponent))


def move_to_dict(m: Move) -> dict:
    if isinstance(m, LeftMultiply):
        return {"kind": "left_multiply", "target": m.target, "word": m.word.to_text(), "rank": m.word.rank}
    if isinstance(m, InvertEntry):
        return {"kind": "invert", "index": m.index}
    return {"kind": "swap", "i": m.i, "j": m.j}


def move_from_dict(d: dict) -> Move:
    kind = d.get("kind")
    if kind == "left_multiply":
        return LeftMultiply(int(d["target"]), Word.from_text(d["word"], int(d["rank"])))
    if kind == "invert":
        return InvertEntry(int(d["index"]))
    if kind == "swap":
        return SwapEntries(int(d["i"]), int(d["j"]))
    raise InputError(f"unknown move kind {kind!r}")


def _symbolic_step(words: list, m: Move) -> list:
    words = list(words)
    if isinstance(m, LeftMultiply):
        words[m.target] = m.word.substitute(words) * words[m.target]
    elif isinstance(m, InvertEntry):
        words[m.index] = words[m.index].inverse()
    else:
        words[m.i], words[m.j] = words[m.j], words[m.i]
    return words


# ---------------------------------------------------------------------------
# Certificates

@dataclass
class MoveCertificate:
    initial: list
    moves: list
    final: list
    provenance: list = field(default_factory=list)   # initial entries as words in Gamma's generators
    snapshots: list = field(default_factory=list)    # value of the changed entries after each move
    params: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.initial)

    def to_dict(self) -> dict:
        return {
            "spec": self.initial[0].spec.to_dict(),
            "initial": [encode_element(g, with_spec=False) for g in self.initial],
            "provenance": [None if w is None else {"word": w.to_text(), "rank": w.rank} for w in self.provenance],
            "moves": [move_to_dict(m) for m in self.moves],
            "snapshots": [{str(k): encode_element(v, with_spec=False) for k, v in s.items()}
                          for s in self.snapshots],
            "final": [encode_element(g, with_spec=False) for g in self.final],
            "params": self.params,
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoveCertificate":
        spec = GroupSpec.from_dict(d["spec"])
        dec = lambda e: decode_element(e, spec)  # noqa: E731
        prov = [None if p is None else Word.from_text(p["word"], int(p["rank"])) for p in d.get("provenance", [])]
        snaps = [{int(k): dec(v) for k, v in s.items()} for s in d.get("snapshots", [])]
        return cls([dec(e) for e in d["initial"]], [move_from_dict(m) for m in d["moves"]],
                   [dec(e) for e in d["final"]], prov, snaps, d.get("params", {}), d.get("info", {}))


def _changed(m: Move):
    if isinstance(m, LeftMultiply):
        return (m.target,)
    if isinstance(m, InvertEntry):
        return (m.index,)
    return (m.i, m.j)


class _Recorder:
    """Applies moves to a tuple while recording them for a certificate."""

    def __init__(self, initial, provenance):
        self.initial = list(initial)
        self.provenance = list(provenance)
        self.current = list(initial)
        self.moves, self.snapshots = [], []

    def apply(self, m: Move):
        if isinstance(m, LeftMultiply) and len(m.word) == 0:
            return
        self.current = apply_move(self.current, m)
        self.moves.append(m)
        self.snapshots.append({k: self.current[k] for k in _changed(m)})

    def certificate(self, params, info) -> MoveCertificate:
        return MoveCertificate(self.initial, self.moves, list(self.current), self.provenance,
                               self.snapshots, params, info)


def replay_tolerance(count: int) -> float:
    return tolerances().replay * max(1, count)


def replay(cert: MoveCertificate) -> list:
    """Apply the certificate's moves to its initial tuple and check the recorded values."""
    tol = replay_tolerance(len(cert.moves))
    cur = list(cert.initial)
    for i, m in enumerate(cert.moves):
        cur = apply_move(cur, m)
        if i < len(cert.snapshots):
            for k, v in cert.snapshots[i].items():
                r = distance(cur[k], v)
                if r > tol:
                    raise ReplayMismatch(i, r)
    if len(cur) != len(cert.final):
        raise ReplayMismatch(len(cert.moves) - 1, math.inf)
    r = max((distance(a, b) for a, b in zip(cur, cert.final)), default=0.0)
    if r > tol:
        raise ReplayMismatch(max(0, len(cert.moves) - 1), r)
    return cur


def replay_residual(cert: MoveCertificate) -> float:
    cur = list(cert.initial)
    for m in cert.moves:
        cur = apply_move(cur, m)
    return max(distance(a, b) for a, b in zip(cur, cert.final))


def express_in_initial(cert: MoveCertificate) -> list:
    """Each final entry as an explicit word in the initial entries."""
    words = [Word.letter(cert.n, i) for i in range(cert.n)]
    for m in cert.moves:
        words = _symbolic_step(words, m)
    return words


def express_in_gamma(cert: MoveCertificate) -> list:
    """Each final entry as a word in the generators of Gamma, using the provenance words."""
    if not cert.provenance:
        raise InputError("certificate has no provenance")
    return [w.substitute(cert.provenance) for w in express_in_initial(cert)]


# ---------------------------------------------------------------------------
# Deformation problems

DEFAULT_LENGTHS = (4, 8, 12, 16)
DEFAULT_GENERAL_LENGTHS = (12, 16, 17, 18)


@dataclass
class DeformationProblem:
    spec: GroupSpec
    targets: list
    gamma: list
    epsilon: float
    qmax: int = 100
    budgets: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.spec = GroupSpec.parse(self.spec)
        self.targets, self.gamma = list(self.targets), list(self.gamma)
        if len(self.targets) < 3:
            raise InputError("need n >= 3 targets")
        if len(self.gamma) != len(self.targets) - 1:
            raise InputError("need n - 1 generators of Gamma for n targets")
        if self.epsilon <= 0:
            raise InputError("epsilon must be positive")
        if self.qmax < 1:
            raise InputError("qmax must be >= 1")
        for g in self.targets + self.gamma:
            if g.spec != self.spec:
                raise SpecMismatch(f"element of {g.spec} in a problem over {self.spec}")

    @property
    def n(self) -> int:
        return len(self.targets)

    def budget(self, key, default):
        return self.budgets.get(key, default)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "targets": [encode_element(g, with_spec=False) for g in self.targets],
            "gamma": [encode_element(g, with_spec=False) for g in self.gamma],
            "epsilon": self.epsilon,
            "qmax": self.qmax,
            "budgets": {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in self.budgets.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationProblem":
        spec = GroupSpec.from_dict(d["spec"])
        return cls(spec, [decode_element(e, spec) for e in d["targets"]],
                   [decode_element(e, spec) for e in d["gamma"]], float(d["epsilon"]),
                   int(d.get("qmax", 100)), dict(d.get("budgets", {})), int(d.get("seed", 0)))


def factor_nontorsion(g: GroupElement, qmax: int) -> bool:
    return all(isinstance(torsion_order(project_to_factor(g, i), qmax), NonTorsionUpTo)
               for i in range(g.spec.p))


def _params(p: DeformationProblem, **extra) -> dict:
    tol = tolerances()
    return {"epsilon": p.epsilon, "qmax": p.qmax, "seed": p.seed,
            "budgets": {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in p.budgets.items()},
            "thresholds": tol.to_dict(), **extra}


def _start(p: DeformationProblem, install: Word) -> _Recorder:
    """Tuple (gamma_1, ..., gamma_{n-1}, 1) with the last entry set to ``install`` by one move."""
    n = p.n
    ident = GroupElement.identity(p.spec)
    prov = [Word.letter(n - 1, i) for i in range(n - 1)] + [Word(n - 1)]
    rec = _Recorder(p.gamma + [ident], prov)
    rec.apply(LeftMultiply(n - 1, install.relabel(n, list(range(n - 1)))))
    return rec


def _require_dense(p: DeformationProblem):
    cert = dense_tuple_certificate(p.gamma, p.qmax)
    if not cert.ok:
        raise CertificationFailed(f"generators of Gamma are not certified dense: {cert.to_dict()}").tagged("input")
    return cert


def gamma_n_candidates(gamma: Sequence[GroupElement], qmax: int, max_len: int = 8, max_tries: int = 5000):
    """Words in the gammas, in shortlex order, whose value completes them to a tuple in Omega-tilde.

    The value must also be non-torsion (up to qmax) in every simple factor.
    """
    from .words import enumerate_words
    gamma = list(gamma)
    tries = 0
    for w in enumerate_words(len(gamma), max_len):
        if not len(w):
            continue
        tries += 1
        if tries > max_tries:
            break
        g = evaluate(w, gamma)
        if factor_nontorsion(g, qmax) and omega_tilde_test(gamma + [g]):
            yield w


def find_gamma_n(gamma: Sequence[GroupElement], qmax: int, max_len: int = 8, max_tries: int = 5000) -> Word:
    """Shortlex-first word of :func:`gamma_n_candidates`."""
    for w in gamma_n_candidates(gamma, qmax, max_len, max_tries):
        return w
    raise CertificationFailed("no word completes Gamma's generators to an Omega-tilde tuple").tagged("a")


def ranked_gamma_n(gamma: Sequence[GroupElement], qmax: int, pool: int, max_len: int = 8) -> list:
    """Up to ``pool`` gamma_n words, fastest-mixing value first (shortlex among equals)."""
    from .words import element_mixing
    found = []
    for w in gamma_n_candidates(gamma, qmax, max_len):
        found.append(w)
        if len(found) >= pool:
            break
    if not found:
        raise CertificationFailed("no word completes Gamma's generators to an Omega-tilde tuple").tagged("a")
    return sorted(found, key=lambda w: -element_mixing(evaluate(w, gamma)))


def _steer_iter(phase, elements, target, lengths, radius, accept=None):
    """Candidates within radius passing ``accept``, by distance then shortlex, escalating lengths.

    Raises BudgetExhausted when nothing reaches the ball and CertificationFailed
    when candidates reach it but all fail ``accept``.
    """
    best, rejected, seen = math.inf, 0, set()
    for L in lengths:
        for w, d in steer_candidates(elements, target, L, k=16, radius=radius):
            best = min(best, d)
            if d >= radius or w in seen:
                continue
            seen.add(w)
            if accept is None or accept(w):
                yield w, d, L
            else:
                rejected += 1
    if rejected:
        raise CertificationFailed(f"phase {phase}: {rejected} candidates reached the ball but failed "
                                  f"their certificate").tagged(phase)
    if not seen:
        raise BudgetExhausted(phase, best).tagged(phase)


def _ranked(candidates, pool, score):
    """Up to ``pool`` items (first entries) from a candidate generator, best score first.

    Errors from the generator propagate only when it yields nothing.
    """
    found = []
    try:
        for item in candidates:
            found.append(item[0])
            if len(found) >= pool:
                break
    except FnDeformError:
        if not found:
            raise
    return sorted(found, key=score, reverse=True)


def _steer_phase(phase, elements, target, lengths, radius, accept=None):
    """First candidate of :func:`_steer_iter`."""
    for found in _steer_iter(phase, elements, target, lengths, radius, accept):
        return found
    raise BudgetExhausted(phase, math.inf).tagged(phase)


def deform_to_generate(p: DeformationProblem):
    """Deform targets s_1..s_n to t_1..t_n generating Gamma, for semisimple G.

    Returns ``(t, certificate)`` with d(t_i, s_i) < epsilon.
    """
    if not p.spec.semisimple:
        raise InputError("deform_to_generate needs a semisimple group; use general_deform")
    lengths = tuple(p.budget("lengths", DEFAULT_LENGTHS))
    _require_dense(p)

    # (a) the extra generator gamma_n; a slowly mixing choice can starve later phases,
    # so candidates are tried fastest-mixing first
    words_n = ranked_gamma_n(p.gamma, p.qmax, int(p.budget("anchor_pool", 6)), int(p.budget("gamma_n_len", 8)))
    failure = None
    for wn in words_n:
        try:
            return _semisimple_from(p, wn, lengths)
        except BudgetExhausted as e:
            failure = failure or e
    raise failure


def _semisimple_from(p: DeformationProblem, wn: Word, lengths):
    n, eps = p.n, p.epsilon
    rec = _start(p, wn)
    gam = list(rec.current)

    # (b) t_1 = w(gamma_2..gamma_n) gamma_1 near s_1, with t_1 in Omega(gamma_2..gamma_n)
    others = gam[1:]

    def ok_b(w):
        return omega_test(multiply(evaluate(w, others), gam[0]), others)

    w, _, _ = _steer_phase("b", others, multiply(p.targets[0], inverse(gam[0])), lengths, eps, ok_b)
    rec.apply(LeftMultiply(0, w.relabel(n, list(range(1, n)))))
    t1 = rec.current[0]

    # (c) t_2 = w(t_1, gamma_3..gamma_n) gamma_2 near s_2, with (t_1, t_2) a dense pair
    idx_c = [0] + list(range(2, n))
    elems_c = [rec.current[i] for i in idx_c]

    def ok_c(w):
        t2 = multiply(evaluate(w, elems_c), gam[1])
        return dense_tuple_certificate([t1, t2], p.qmax).ok

    w, _, _ = _steer_phase("c", elems_c, multiply(p.targets[1], inverse(gam[1])), lengths, eps, ok_c)
    rec.apply(LeftMultiply(1, w.relabel(n, idx_c)))

    # (d) the remaining entries from words in the dense pair (t_1, t_2)
    pair = rec.current[:2]
    for i in range(2, n):
        w, _, _ = _steer_phase("d", pair, multiply(p.targets[i], inverse(gam[i])), lengths, eps)
        rec.apply(LeftMultiply(i, w.relabel(n, [0, 1])))

    return _finish(p, rec, {"mode": "semisimple", "gamma_n_word": wn.to_text()})


def _finish(p, rec, info):
    t = list(rec.current)
    dists = [distance(a, b) for a, b in zip(t, p.targets)]
    if max(dists) >= p.epsilon:
        raise CertificationFailed(f"postcondition violated: max distance {max(dists):.3g}").tagged("final")
    info = {**info, "distances": dists, "max_distance": max(dists), "move_count": len(rec.moves)}
    cert = rec.certificate(_params(p), info)
    info["replay_residual"] = replay_residual(cert)
    return t, cert


def general_deform(p: DeformationProblem):
    """Deform targets to a generating tuple of Gamma for any spec (torus blocks allowed).

    A dense pair (g_1, g_n) near (s_1, s_n) carries an epsilon/2-net of two-letter
    words.  The end entries t_1, t_n are placed within eps1 = net_margin of
    (g_1, g_n) with t_n in Gamma and t_1 = W(gamma_2, ..., t_n) gamma_1, so the
    net re-evaluated at (t_1, t_n) is an epsilon-net; the middle entries are
    t_i = W_j(t_1, t_n) gamma_i for a net word W_j.

    With ``budgets["anchor"] == "gamma"`` (the default) the pair (g_1, g_n) is
    itself chosen of that form, so t_1 = g_1 and t_n = g_n exactly.  With
    ``"perturb"`` (g_1, g_n) is a random perturbation of (s_1, s_n) and t_1, t_n
    are found by steering to radius eps1.
    """
    n, eps = p.n, p.epsilon
    rng = np.random.default_rng(p.seed)
    lengths = tuple(p.budget("lengths", DEFAULT_GENERAL_LENGTHS))
    anchor_lengths = tuple(p.budget("anchor_lengths", DEFAULT_LENGTHS))
    retries = int(p.budget("retries", 8))
    samples = int(p.budget("confidence_samples", 10_000))
    cap = int(p.budget("net_cap", 16))
    class_radius = int(p.budget("class_radius", CLASS_RADIUS))
    abort = p.budget("net_abort", (12, 0.6))
    abort = None if abort is None else (int(abort[0]), float(abort[1]))
    anchor = p.budget("anchor", "gamma")
    if anchor not in ("gamma", "perturb"):
        raise InputError(f"unknown anchor mode {anchor!r}")
    _require_dense(p)
    s1, sn = p.targets[0], p.targets[-1]
    mids = p.gamma[1:]

    def claim_ok(x):
        # conditions (1)-(3): <gamma_2..gamma_{n-1}, x> is dense
        if p.spec.factors and not generates_algebra(mids + [x]):
            return False
        return factor_nontorsion(x, p.qmax) and abelian_dense(x, p.qmax)

    if anchor == "gamma":
        # (a), (b): g_n in Gamma near s_n satisfying the claim, g_1 = W(..., g_n) gamma_1 near
        # s_1 with (g_1, g_n) a dense pair.  Among the first few candidates the best mixing
        # ones are tried first; the next pair is tried when its net fails.
        attempts, last_err = 0, None
        net = None
        pool = int(p.budget("anchor_pool", 6))
        target1 = multiply(s1, inverse(p.gamma[0]))
        cands_n = _ranked(_steer_iter("a", p.gamma, sn, anchor_lengths, eps / 4,
                                      lambda w: claim_ok(evaluate(w, p.gamma))),
                          pool, lambda w: element_mixing(evaluate(w, p.gamma)))
        for wn in cands_n:
            rec = _start(p, wn)
            others = rec.current[1:]
            gn = rec.current[-1]

            def pair_ok(w):
                return dense_tuple_certificate([multiply(evaluate(w, others), p.gamma[0]), gn], p.qmax).ok

            try:
                w1 = _ranked(_steer_iter("a", others, target1, anchor_lengths, eps / 4, pair_ok), pool,
                             lambda w: mixing_score((multiply(evaluate(w, others), p.gamma[0]), gn)))[0]
            except FnDeformError as e:
                last_err = e
                continue
            finally:
                clear_cache()
            g1 = multiply(evaluate(w1, others), p.gamma[0])
            attempts += 1
            try:
                net = build_net((g1, gn), eps, samples, seed=p.seed, max_len_cap=cap,
                                class_radius=class_radius, abort=abort)
                break
            except NetUnreachable as e:
                last_err = e
                if attempts > retries:
                    break
        if net is None:
            raise last_err.tagged("b")
    else:
        # (a) a random dense pair near (s_1, s_n)
        g1, gn = s1, sn
        for attempt in range(retries + 1):
            if attempt:
                g1 = perturb(s1, eps / 4 * rng.random(), rng)
                gn = perturb(sn, eps / 4 * rng.random(), rng)
            if dense_tuple_certificate([g1, gn], p.qmax).ok:
                break
        else:
            raise CertificationFailed("no dense pair found near (s_1, s_n)").tagged("a")
        # (b) the net
        try:
            net = build_net((g1, gn), eps, samples, seed=p.seed, max_len_cap=cap, class_radius=class_radius,
                            abort=abort)
        except FnDeformError as e:
            raise e.tagged("b")
        attempts = 1
    eps1 = net_margin(net)

    if anchor == "gamma":
        # (c), (d) hold with zero perturbation: x_n = t_n = g_n and W = w1
        w = w1
    else:
        # (c) t_n in Gamma within eps1 of g_n satisfying the claim
        wn, _, _ = _steer_phase("c", p.gamma, gn, lengths, eps1, lambda w: claim_ok(evaluate(w, p.gamma)))
        clear_cache()
        rec = _start(p, wn)
        # (d) t_1 = W(gamma_2..gamma_{n-1}, t_n) gamma_1 within eps1 of g_1
        w, _, _ = _steer_phase("d", rec.current[1:], multiply(g1, inverse(p.gamma[0])), lengths, eps1)
        clear_cache()
    rec.apply(LeftMultiply(0, w.relabel(n, list(range(1, n)))))
    t1, tn = rec.current[0], rec.current[-1]
    anchor_dist = [distance(t1, g1), distance(tn, gn)]
    if max(anchor_dist) > eps1:
        raise CertificationFailed(f"end entries {anchor_dist} not within eps1 = {eps1:.3g}").tagged("d")

    # re-verify the net at the pair actually used
    coverage = net_coverage_at(net, (t1, tn), radius=eps)

    # (e) middle entries from the net at (t_1, t_n)
    ev = net.evaluation((t1, tn))
    for i in range(1, n - 1):
        goal = multiply(p.targets[i], inverse(p.gamma[i]))
        d, c, t = ev.nearest(goal.flat()[None, :])
        if not d[0] < eps:
            raise BudgetExhausted("e", float(d[0])).tagged("e")
        rec.apply(LeftMultiply(i, net.pair_word(int(c[0]), int(t[0])).relabel(n, [0, n - 1])))

    info = {"mode": "general", "anchor": anchor, "anchor_attempts": attempts, "gamma_n_word": wn.to_text(), "epsilon1": eps1,
            "anchor_distances": anchor_dist, "perturbation": [distance(g1, s1), distance(gn, sn)],
            "net": net.info, "net_max_len": net.max_len, "net_coverage_at_t": coverage,
            "net_coverage_degraded": coverage < 1.0}
    return _finish(p, rec, info)
