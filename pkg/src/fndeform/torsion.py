"""Torsion deformations of pairs and the Z^2 example.

For regular a, b the product map C(a) x C(b) -> G, (a^g, b^h) -> a^g b^h, has
left-trivialized differential

    (X, Y) -> Ad(b^-1)(Ad(a^-1) - 1) X + (Ad(b^-1) - 1) Y

at (a, b), where a^g = g a g^-1 and g = exp(X).  Its image is the orthogonal
complement of the intersection of t_a = ker(Ad(a) - 1) and t_b, so it is onto
exactly when these centralizer algebras meet trivially.  A Gauss-Newton
solve on this map moves a b onto a nearby torsion element while keeping a and
b in their conjugacy classes (so they stay torsion).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .algebra import dense_tuple_certificate, find_integer_relation, DensityCertificate
from .config import tolerances
from .errors import (BudgetExhausted, CertificationFailed, FnDeformError, InputError, NoConvergence,
                     NotRegularError, QmaxTooSmall, TargetTooFar)
from .groups import (AlgebraElement, GroupElement, adjoint, block_stack, distance, encode_element, exp_map, inverse,
                     is_regular, log_map, multiply, perturb, projection_bound, rationalize, torsion_order,
                     torsion_project, torus_frame, NonTorsionUpTo)
from .words import WordTable, evaluate, mixing_score


class ThresholdAnomaly(UserWarning):
    """The kernel test and the differential disagree, which only a threshold problem can cause."""


# ---------------------------------------------------------------------------
# Kernels and the product differential

def kernel_space(g: GroupElement, tol: float | None = None) -> list:
    """Orthonormal basis of ker(Ad(g) - 1) as algebra elements."""
    tol = tolerances().rank if tol is None else tol
    m = adjoint(g).matrix - np.eye(g.spec.alg_dim)
    _, sv, vt = np.linalg.svd(m)
    null = vt[sv <= tol] if len(sv) else vt
    return [AlgebraElement(g.spec, v) for v in null]


def _semisimple_coords(spec) -> np.ndarray:
    idx = []
    for i in spec.factors:
        off = spec.alg_offsets[i]
        idx.extend(range(off, off + spec.blocks[i].alg_dim))
    return np.array(idx, dtype=np.int64)


def _require_regular(*elems):
    for g in elems:
        if not is_regular(g):
            raise NotRegularError("element is not regular")


def claim_check(a: GroupElement, b: GroupElement, tol: float | None = None) -> bool:
    """True iff t_a and t_b intersect trivially (in the semisimple part of the algebra).

    Torus blocks are central and lie in every kernel, so they are left out.
    """
    _require_regular(a, b)
    tol = tolerances().rank if tol is None else tol
    cols = _semisimple_coords(a.spec)
    basis = [v.coords[cols] for v in kernel_space(a, tol) + kernel_space(b, tol)]
    basis = [v for v in basis if np.linalg.norm(v) > tol]
    if not basis:
        return True
    m = np.array(basis).T
    if m.shape[1] > m.shape[0]:
        return False
    return bool(np.linalg.svd(m, compute_uv=False).min() > tol)


@dataclass
class ProductDifferential:
    pair: tuple
    matrix: np.ndarray            # dim g x 2 dim g
    singular_values: np.ndarray
    eq1_rank: int

    @property
    def sigma_min(self) -> float:
        """Smallest singular value of the map onto the algebra."""
        return float(self.singular_values[self.matrix.shape[0] - 1])

    def surjective(self, tol: float | None = None) -> bool:
        tol = tolerances().rank if tol is None else tol
        return self.sigma_min > tol


def product_differential(a: GroupElement, b: GroupElement) -> ProductDifferential:
    if a.spec != b.spec:
        raise InputError("pair in different groups")
    if not a.spec.semisimple:
        raise InputError("product_differential needs a semisimple group")
    n = a.spec.alg_dim
    eye = np.eye(n)
    ad_ai = adjoint(inverse(a)).matrix
    ad_bi = adjoint(inverse(b)).matrix
    mat = np.hstack([ad_bi @ (ad_ai - eye), ad_bi - eye])
    sv = np.linalg.svd(mat, compute_uv=False)
    eq1 = np.linalg.svd(np.hstack([ad_ai - eye, ad_bi - eye]), compute_uv=False)
    rank = int(np.sum(eq1 > tolerances().rank))
    return ProductDifferential((a, b), mat, sv, rank)


def is_product_map_open(a: GroupElement, b: GroupElement) -> bool:
    """Claim check and surjectivity of the differential; both must hold.

    The two always agree in exact arithmetic; a disagreement raises a
    :class:`ThresholdAnomaly` warning.
    """
    claim = claim_check(a, b)
    onto = product_differential(a, b).surjective()
    if claim != onto:
        warnings.warn(f"claim_check={claim} but differential surjective={onto}", ThresholdAnomaly)
    return claim and onto


# ---------------------------------------------------------------------------
# Gauss-Newton solve for a torsion product

def group_power(g: GroupElement, q: int) -> GroupElement:
    return GroupElement(g.spec, [np.linalg.matrix_power(m, int(q)) for m in g.blocks], check=False)


def _order(x: GroupElement, qmax: int):
    """Order of x as a rational torus element with denominators <= qmax, or None."""
    if not is_regular(x):
        o = torsion_order(x, qmax)
        return None if isinstance(o, NonTorsionUpTo) else int(o)
    r, order = rationalize(x, qmax)
    if distance(r, x) > tolerances().torsion:
        return None
    return int(order)


@dataclass
class FAWitness:
    pair: tuple                   # (a', b')
    orders: tuple                 # (q_a, q_b, q_ab)
    conjugators: tuple            # (g, h) with a' = g a g^-1, b' = h b h^-1
    conjugator_logs: tuple        # algebra coordinates of g, h
    distances: tuple              # deformation distances from the input pair
    certificate: DensityCertificate
    iterations: int = 0
    residuals: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def power_residuals(self) -> tuple:
        a, b = self.pair
        ab = multiply(a, b)
        ident = GroupElement.identity(a.spec)
        return tuple(distance(group_power(x, q), ident) for x, q in zip((a, b, ab), self.orders))

    def to_dict(self):
        return {
            "pair": [encode_element(g) for g in self.pair],
            "orders": list(self.orders),
            "conjugator_logs": [list(map(float, c)) for c in self.conjugator_logs],
            "distances": list(self.distances),
            "power_residuals": list(self.power_residuals()),
            "iterations": self.iterations,
            "residuals": list(self.residuals),
            "certificate": self.certificate.to_dict(),
            "thresholds": dict(self.thresholds),
            "info": dict(self.info),
        }


def _conj(g: GroupElement, x: GroupElement) -> GroupElement:
    return multiply(multiply(g, x), inverse(g))


def solve_torsion_product(a: GroupElement, b: GroupElement, qmax: int, delta: float, *,
                          max_iter: int = 50, polish: int = 3) -> FAWitness:
    """Conjugate a and b slightly so that their product becomes torsion.

    The target is ``c = torsion_project(ab, qmax)``; the solve is damped
    Gauss-Newton on the left-trivialized residual log((a^g b^h)^-1 c),
    re-linearized at every step, with conjugators updated as g <- exp(X) g.
    """
    tol = tolerances()
    if a.spec != b.spec:
        raise InputError("pair in different groups")
    _require_regular(a, b)
    q_a, q_b = _order(a, qmax), _order(b, qmax)
    if q_a is None or q_b is None:
        raise InputError("a and b must be torsion (apply torsion_project first)")
    if not claim_check(a, b):
        raise InputError("kernel claim fails: t_a and t_b intersect")
    cert = dense_tuple_certificate([a, b], qmax)
    if not cert.ok:
        raise CertificationFailed("input pair is not certified dense")
    thresholds = {"newton": tol.newton, "torsion": tol.torsion, "rank": tol.rank, "delta": delta, "qmax": qmax}
    spec = a.spec
    ident = GroupElement.identity(spec)
    zero = np.zeros(spec.alg_dim)
    ab = multiply(a, b)
    q_ab = _order(ab, qmax)
    if q_ab is not None:
        return FAWitness((a, b), (q_a, q_b, q_ab), (ident, ident), (zero, zero), (0.0, 0.0), cert,
                         0, [0.0], thresholds, {"target_distance": 0.0})
    c = torsion_project(ab, qmax)
    q_ab = rationalize(ab, qmax)[1]
    start = distance(ab, c)
    sigma = product_differential(a, b).sigma_min
    if start > delta * sigma:
        raise TargetTooFar(start, delta * sigma)

    g, h = ident, ident
    cur_a, cur_b, res = a, b, start
    history, it, extra = [res], 0, 0
    while True:
        if res < tol.newton:
            extra += 1
            if extra > polish:
                break
        if it >= max_iter:
            if res < tol.newton:
                break
            raise NoConvergence(it, res)
        it += 1
        f = multiply(cur_a, cur_b)
        r = log_map(multiply(inverse(f), c)).coords
        step = np.linalg.pinv(product_differential(cur_a, cur_b).matrix) @ r
        t, accepted = 1.0, False
        for _ in range(31):
            gx = multiply(exp_map(AlgebraElement(spec, t * step[:spec.alg_dim])), g)
            hy = multiply(exp_map(AlgebraElement(spec, t * step[spec.alg_dim:])), h)
            na, nb = _conj(gx, a), _conj(hy, b)
            nres = distance(multiply(na, nb), c)
            if nres < res:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if res < tol.newton:
                break
            raise NoConvergence(it, res)
        g, h, cur_a, cur_b, res = gx, hy, na, nb, nres
        history.append(res)

    logs = (log_map(g).coords, log_map(h).coords)
    norms = [float(np.linalg.norm(v)) for v in logs]
    if max(norms) > delta:
        raise TargetTooFar(max(norms), delta)
    cert = dense_tuple_certificate([cur_a, cur_b], qmax)
    if not cert.ok:
        raise CertificationFailed("deformed pair lost its density certificate")
    return FAWitness((cur_a, cur_b), (q_a, q_b, int(q_ab)), (g, h), logs,
                     (distance(cur_a, a), distance(cur_b, b)), cert, it, history, thresholds,
                     {"target_distance": start, "sigma_min": sigma, "conjugator_norms": norms})


def fa_witness(a: GroupElement, b: GroupElement, epsilon: float, qmax: int = 60, *, seed: int = 0,
               retries: int = 8) -> FAWitness:
    """Deform (a, b) by less than epsilon to a dense pair with a, b and ab torsion.

    Stages: ``regularize`` (a regular dense pair within epsilon/3), ``project``
    (torsion projection, within epsilon/3 by the choice of qmax) and ``solve``
    (conjugators of norm at most epsilon/3).  Failed attempts are retried from
    fresh random regularizations.
    """
    if a.spec != b.spec:
        raise InputError("pair in different groups")
    if not a.spec.semisimple:
        raise InputError("fa_witness needs a semisimple group")
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    third = epsilon / 3
    bound = projection_bound(a.spec, qmax)
    if bound >= third:
        raise QmaxTooSmall(bound, third).tagged("project")
    rng = np.random.default_rng(seed)
    last = None
    for attempt in range(retries + 1):
        stage = "regularize"
        try:
            if attempt == 0:
                a1, b1 = a, b
            else:
                a1 = perturb(a, third * rng.random(), rng)
                b1 = perturb(b, third * rng.random(), rng)
            if not (is_regular(a1) and is_regular(b1) and dense_tuple_certificate([a1, b1], qmax).ok):
                raise CertificationFailed("pair is not regular and dense")
            stage = "project"
            # entries that are already torsion are kept exactly
            ap = a1 if _order(a1, qmax) is not None else torsion_project(a1, qmax)
            bp = b1 if _order(b1, qmax) is not None else torsion_project(b1, qmax)
            if not (is_regular(ap) and is_regular(bp)):
                raise NotRegularError("torsion projection is not regular")
            stage = "solve"
            wit = solve_torsion_product(ap, bp, qmax, third)
            d = (distance(wit.pair[0], a), distance(wit.pair[1], b))
            if max(d) >= epsilon:
                raise BudgetExhausted("solve", max(d))
        except FnDeformError as e:
            last = e.tagged(stage)
            continue
        wit.distances = d
        wit.info.update({"attempts": attempt + 1, "epsilon": epsilon,
                         "regularize_distances": [distance(a1, a), distance(b1, b)],
                         "projection_distances": [distance(ap, a1), distance(bp, b1)]})
        return wit
    raise last


# ---------------------------------------------------------------------------
# The Z^2 example

def _frames(g: GroupElement):
    """Per-block torus frames of g (None for torus blocks)."""
    out = []
    for blk, m in zip(g.spec.blocks, g.blocks):
        out.append(None if blk.is_torus else torus_frame(m, blk))
    return out


def _block_angles(blk, x: np.ndarray, parts) -> list:
    """Angles of a torus element x (already in the frame) for the rotation parts."""
    if blk.is_complex:
        return [float(np.angle(x[0, 0]))]
    out, i = [], 0
    for kind, _ in parts:
        if kind == "rot":
            out.append(math.atan2(0.5 * (x[i + 1, i] - x[i, i + 1]), 0.5 * (x[i, i] + x[i + 1, i + 1])))
            i += 2
        else:
            i += 1
    return out


def torus_angles_in_frame(x: GroupElement, frame_of: GroupElement) -> np.ndarray:
    """Rotation angles of x in the torus frame of ``frame_of`` (x must lie in that torus)."""
    out = []
    for blk, m, fr in zip(x.spec.blocks, x.blocks, _frames(frame_of)):
        if fr is None:
            from .groups import _torus_angles
            out.extend(np.atleast_1d(_torus_angles(m)))
            continue
        z, parts = fr
        out.extend(_block_angles(blk, z.conj().T @ m @ z, parts))
    return np.array(out, dtype=float)


def relation_report(c_prime: GroupElement, a_conj: GroupElement, bound: int, tol: float | None = None) -> dict:
    """Bounded search for integer relations among the angles of c' and a_conj (and 2 pi).

    Both elements must lie in the maximal torus of the regular element a_conj.
    """
    tol = tolerances().relation if tol is None else tol
    turns = np.concatenate([torus_angles_in_frame(c_prime, a_conj),
                            torus_angles_in_frame(a_conj, a_conj)]) / (2 * math.pi)
    rel = find_integer_relation(turns, bound, tol)
    return {"turns": turns.tolist(), "bound": int(bound), "tol": float(tol),
            "relation": None if rel is None else [int(k) for k in rel],
            "free_abelian_up_to_bound": rel is None}


def _torus_distance_batch(blocks_by_block, c: GroupElement, frames, spec):
    """Distance from c to gamma A gamma^-1 and the optimal angles, for stacked gamma."""
    count = len(blocks_by_block[0])
    d2 = np.zeros(count)
    best = []
    for blk, gam, cm, fr in zip(spec.blocks, blocks_by_block, c.blocks, frames):
        if fr is None:
            best.append(None)
            continue
        z, parts = fr
        zz = gam @ z                                         # gamma Z
        x = np.conj(np.swapaxes(zz, 1, 2)) @ cm @ zz         # Z^H gamma^-1 c gamma Z
        if blk.is_complex:
            s = np.conj(x[:, 0, 0]) + x[:, 1, 1]
            d2 += 4 - 2 * np.abs(s)
            best.append([-np.angle(s)])
            continue
        total = np.zeros(count)
        angs, i = [], 0
        for kind, _ in parts:
            if kind == "rot":
                p = x[:, i, i] + x[:, i + 1, i + 1]
                q = x[:, i + 1, i] - x[:, i, i + 1]
                total += np.hypot(p, q)
                angs.append(np.arctan2(q, p))
                i += 2
            else:
                total += x[:, i, i]
                i += 1
        d2 += 2 * blk.dim - 2 * total
        best.append(angs)
    return np.sqrt(np.maximum(d2, 0.0)), best


def _torus_element(spec, gamma: GroupElement, frames, angles, c: GroupElement) -> GroupElement:
    """gamma Z R(angles) Z^H gamma^-1 blockwise; torus blocks copy c."""
    from .groups import torus_compose
    blocks = []
    for k, (blk, fr) in enumerate(zip(spec.blocks, frames)):
        if fr is None:
            blocks.append(c.blocks[k])
            continue
        z, parts = fr
        it = iter(angles[k])
        new = [(kind, next(it)) if kind in ("rot", "eig") else ("fix", 1.0) for kind, _ in parts]
        blocks.append(gamma.blocks[k] @ torus_compose(z, new, blk) @ gamma.blocks[k].conj().T)
    return GroupElement(spec, blocks, check=False)


def _search_torus(a1, b1, c, frames, epsilon, max_len):
    """Shortlex-first word gamma whose conjugated torus of a1 passes within epsilon/2 of c.

    Falls back to the closest word when it is within epsilon.
    """
    spec = a1.spec
    table = WordTable.build([a1, b1], 0, keep_values=False)
    best = (math.inf, None, None)
    for lvl in range(0, max_len + 1):
        if lvl:
            table.extend(lvl)
        lo, hi = table.level_range(lvl)
        vals = table.level_values(lvl)
        stacks = [block_stack(spec, vals, k) for k in range(len(spec.blocks))]
        d, angs = _torus_distance_batch(stacks, c, frames, spec)
        hit = np.nonzero(d < epsilon / 2)[0]
        j = int(hit[0]) if hit.size else int(np.argmin(d))
        item = (float(d[j]), lo + j, [None if x is None else [float(v[j]) for v in x] for x in angs])
        if hit.size:
            return table, item
        if item[0] < best[0]:
            best = item
    if best[0] >= epsilon:
        raise BudgetExhausted("search", best[0])
    return table, best


def z2_example(a: GroupElement, b: GroupElement, c: GroupElement, epsilon: float, max_len: int = 12,
               relation_bound: int = 20, qmax: int = 100, *, seed: int = 0, retries: int = 8):
    """Find (a', b', c') near (a, b, c) and gamma with <c', gamma a' gamma^-1> free abelian of rank 2.

    Returns ``(triple, gamma_word, report)``.  The torus A of a' conjugated by
    gamma = gamma_word(a', b') passes within epsilon of c; c' is a point of that
    torus with no bounded integer relation between its angles and those of
    a' (and 2 pi).
    """
    spec = a.spec
    if not spec.factors:
        raise InputError("z2_example needs a non-torus block")
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    tol = tolerances()

    def admissible(x, y):
        return (is_regular(x) and isinstance(torsion_order(x, qmax), NonTorsionUpTo)
                and dense_tuple_certificate([x, y], qmax).ok)

    # a' regular non-torsion with (a', b') certified dense; when no conjugated torus comes
    # near c (pairs close to a finite subgroup mix slowly) the best mixing of a few
    # perturbations within 0.9 epsilon is tried next
    found, last = None, None
    for attempt in range(retries + 1):
        if attempt == 0:
            a1, b1 = a, b
            if not admissible(a1, b1):
                continue
        else:
            draws = []
            for _ in range(8):
                x = perturb(a, 0.9 * epsilon * rng.random(), rng)
                y = perturb(b, 0.9 * epsilon * rng.random(), rng)
                draws.append((mixing_score((x, y)), x, y))
            draws.sort(key=lambda t: -t[0])
            cand = [(x, y) for _, x, y in draws if admissible(x, y)]
            if not cand:
                continue
            a1, b1 = cand[0]
        frames = _frames(a1)
        try:
            table, found = _search_torus(a1, b1, c, frames, epsilon, max_len)
            break
        except BudgetExhausted as e:
            last = e
    if found is None:
        if last is None:
            raise CertificationFailed("no regular non-torsion dense pair near (a, b)").tagged("regularize")
        raise last.tagged("search")
    dist0, idx, angles = found
    word = table.word(idx)
    gamma = evaluate(word, [a1, b1])
    a_conj = _conj(gamma, a1)

    # c' on the conjugated torus, nudged off bounded relations
    c1 = _torus_element(spec, gamma, frames, angles, c)
    report = relation_report(c1, a_conj, relation_bound)
    nudges = 0
    slack = epsilon - distance(c1, c)
    while report["relation"] is not None and nudges < retries:
        nudges += 1
        step = slack / 4 * rng.random()
        trial = [None if x is None else [v + step * rng.choice([-1.0, 1.0]) for v in x] for x in angles]
        cand = _torus_element(spec, gamma, frames, trial, c)
        if distance(cand, c) < epsilon:
            c1 = cand
            report = relation_report(c1, a_conj, relation_bound)
    if report["relation"] is not None:
        raise CertificationFailed(f"bounded relation {report['relation']} persists").tagged("relation")
    report.update({"gamma_word": word.to_text(), "torus_distance": dist0,
                   "distances": [distance(a1, a), distance(b1, b), distance(c1, c)],
                   "nudges": nudges, "epsilon": epsilon, "max_len": max_len, "qmax": qmax,
                   "relation_tol": tol.relation})
    return (a1, b1, c1), word, report


def conjugated_torus_element(a_prime: GroupElement, gamma: GroupElement, angles) -> GroupElement:
    """gamma exp(angles) gamma^-1 in the torus frame of a' (angles listed per rotation part)."""
    spec = a_prime.spec
    frames = _frames(a_prime)
    it = iter(angles)
    per_block = []
    for fr in frames:
        if fr is None:
            per_block.append(None)
            continue
        per_block.append([next(it) for kind, _ in fr[1] if kind in ("rot", "eig")])
    return _torus_element(spec, gamma, frames, per_block, GroupElement.identity(spec))
