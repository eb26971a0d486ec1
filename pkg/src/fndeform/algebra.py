"""Algebra-generation certificates and density criteria.

The associative algebra spanned by ``Ad(G)`` restricted to the simple factors is
``A = End(g_1) + ... + End(g_p)``.  A tuple Ad-generates ``A`` when the unital
algebra generated by its adjoint matrices has full dimension ``sum dim(g_i)^2``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from .config import tolerances
from .errors import FnDeformError, InputError, SpecMismatch
from .groups import (AdjointMatrix, GroupElement, GroupSpec, adjoint,
                     orders_from_angles, torus_part)

EXHAUSTIVE_LIMIT = 10 ** 8


@dataclass(frozen=True, eq=False)
class SpanBasis:
    spec: GroupSpec
    basis: np.ndarray          # (dim, D) orthonormal rows in End-coordinates
    target: int

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def full(self) -> bool:
        return self.dim == self.target


def _end_blocks(ad: AdjointMatrix):
    return ad.factor_blocks()


def _pack(blocks) -> np.ndarray:
    return np.concatenate([b.ravel() for b in blocks])


def _unpack(vec: np.ndarray, sizes):
    out, off = [], 0
    for n in sizes:
        out.append(vec[off:off + n * n].reshape(n, n))
        off += n * n
    return out


def _residual(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    if q.shape[0]:
        v = v - q.T @ (q @ v)
        v = v - q.T @ (q @ v)
    return v


def span_closure(gens: Sequence[AdjointMatrix], tol: float | None = None) -> SpanBasis:
    """Basis of the unital algebra generated by ``gens`` on the simple factors."""
    tol = tolerances().rank if tol is None else tol
    gens = list(gens)
    if not gens:
        raise InputError("span_closure needs at least one generator")
    spec = gens[0].spec
    if any(g.spec != spec for g in gens):
        raise SpecMismatch("generators of different groups")
    if not spec.factors:
        raise InputError("span_closure needs at least one non-torus block")
    sizes = [spec.blocks[i].alg_dim for i in spec.factors]
    target = spec.algebra_target_dim
    gen_blocks = [_end_blocks(g) for g in gens]

    rows = []

    def add(v):
        r = _residual(np.array(rows), v) if rows else v
        n = np.linalg.norm(r)
        if n > tol:
            rows.append(r / n)
            return True
        return False

    add(_pack([np.eye(n) for n in sizes]))
    for gb in gen_blocks:
        add(_pack(gb))
    frontier = list(range(len(rows)))

    passes = 0
    while frontier and len(rows) < target:
        passes += 1
        if passes > 2 * target:
            raise FnDeformError("span_closure did not stabilise")
        new = []
        for idx in frontier:
            x = _unpack(rows[idx], sizes)
            for gb in gen_blocks:
                for prod in (_pack([a @ b for a, b in zip(x, gb)]), _pack([b @ a for a, b in zip(x, gb)])):
                    if add(prod):
                        new.append(len(rows) - 1)
                    if len(rows) == target:
                        break
        frontier = new
    return SpanBasis(spec, np.array(rows), target)


def generates_algebra(elements: Sequence[GroupElement]) -> bool:
    return span_closure([adjoint(g) for g in elements]).full


def omega_test(g: GroupElement, others: Sequence[GroupElement]) -> bool:
    """True iff Ad(g) together with Ad(others) generates the full algebra."""
    return generates_algebra([g, *others])


def omega_tilde_test(gens: Sequence[GroupElement], threads: int = 1) -> bool:
    """True iff every subtuple obtained by deleting one entry generates the full algebra."""
    gens = list(gens)
    if len(gens) < 2:
        raise InputError("omega_tilde_test needs at least two elements")
    subsets = [gens[:i] + gens[i + 1:] for i in range(len(gens))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(generates_algebra, subsets))
    else:
        results = [generates_algebra(s) for s in subsets]
    return all(results)


# ---------------------------------------------------------------------------
# Integer relations

def _normalize_relation(k):
    k = tuple(int(v) for v in k)
    for v in k:
        if v != 0:
            return k if v > 0 else tuple(-u for u in k)
    return k


def _frac_dist(v: np.ndarray) -> np.ndarray:
    return np.abs(v - np.round(v))


def find_integer_relation(x, bound: int, tol: float):
    """Nonzero integer vector k with max|k_j| <= bound and k.x within tol of an integer.

    ``x`` are angles measured in turns, so an integer offset is the relation with
    2 pi.  Among all relations found the one with the smallest sup-norm (then
    lexicographically smallest, first nonzero entry positive) is returned, or
    ``None``.  Small problems are scanned exhaustively; larger ones fall back to
    PSLQ, which may return a different but equally valid relation.
    """
    x = np.asarray(x, dtype=float).ravel()
    m = x.size
    if m == 0:
        return None
    if (2 * bound + 1) ** m <= EXHAUSTIVE_LIMIT:
        return _scan_relation(x, bound, tol)
    with mpmath.workdps(40):
        rel = mpmath.pslq([mpmath.mpf(float(v)) for v in x] + [mpmath.mpf(1)],
                          tol=mpmath.mpf(tol), maxcoeff=bound, maxsteps=10 ** 5)
    if rel is None or all(v == 0 for v in rel[:m]) or max(abs(v) for v in rel[:m]) > bound:
        return None
    k = np.array(rel[:m])
    if _frac_dist(np.array([k @ x]))[0] > tol:
        return None
    return _normalize_relation(k)


def _scan_relation(x: np.ndarray, bound: int, tol: float):
    m = x.size
    rng = np.arange(-bound, bound + 1)
    if m == 1:
        tails = np.zeros((1, 0), dtype=np.int64)
    else:
        tails = np.stack(np.meshgrid(*([rng] * (m - 1)), indexing="ij"), axis=-1).reshape(-1, m - 1)
    tail_vals = tails @ x[1:]
    if m > 1:
        tail_sup = np.abs(tails).max(axis=1)
        first = tails[np.arange(len(tails)), np.argmax(tails != 0, axis=1)]
        tail_pos = first > 0
    else:
        tail_sup = np.zeros(1, dtype=np.int64)
        tail_pos = np.zeros(1, dtype=bool)
    hits = []
    for k1 in range(0, bound + 1):
        ok = _frac_dist(k1 * x[0] + tail_vals) <= tol
        if k1 == 0:
            ok &= tail_pos
        for i in np.nonzero(ok)[0]:
            k = (k1, *(int(v) for v in tails[i]))
            hits.append((max(k1, int(tail_sup[i])), k))
    if not hits:
        return None
    hits.sort()
    return _normalize_relation(hits[0][1])


def torus_turns(g: GroupElement) -> np.ndarray:
    return torus_part(g) / (2 * math.pi)


def abelian_dense(g: GroupElement, qmax: int, tol: float | None = None) -> bool:
    """Torus part of g generates a dense cyclic subgroup, up to relations of size qmax."""
    tol = tolerances().abelian if tol is None else tol
    x = torus_turns(g)
    if x.size == 0:
        return True
    return find_integer_relation(x, qmax, tol) is None


# ---------------------------------------------------------------------------
# Density certificates

@dataclass
class DensityCertificate:
    algebra_full: bool
    per_factor_nontorsion: list
    abelian_dense: bool
    qmax: int
    l_cert: int
    algebra_dim: int = 0
    algebra_target: int = 0
    witnesses: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.algebra_full and all(self.per_factor_nontorsion) and self.abelian_dense

    def __bool__(self):
        return self.ok

    def to_dict(self):
        return {
            "algebra_full": self.algebra_full,
            "per_factor_nontorsion": list(self.per_factor_nontorsion),
            "abelian_dense": self.abelian_dense,
            "all_true": self.ok,
            "qmax": self.qmax,
            "l_cert": self.l_cert,
            "algebra_dim": self.algebra_dim,
            "algebra_target": self.algebra_target,
            "nontorsion_witnesses": list(self.witnesses),
            "thresholds": dict(self.thresholds),
        }


def factor_nontorsion_witness(gens: Sequence[GroupElement], factor: int, qmax: int, max_len: int):
    """Shortlex-first word (text) of length <= max_len whose factor projection is non-torsion."""
    from .words import WordTable

    spec = gens[0].spec
    j = spec.factors[factor]
    fspec = GroupSpec((spec.blocks[j],))
    proj = [GroupElement(fspec, [g.blocks[j]], check=False) for g in gens]
    table = WordTable.build(proj, max_len)
    mats = table.block_stack(0)
    for lvl in range(1, max_len + 1):
        lo, hi = table.level_range(lvl)
        ang = np.angle(np.linalg.eigvals(mats[lo:hi]))
        orders = orders_from_angles(ang, qmax)
        hit = np.nonzero(orders == 0)[0]
        if hit.size:
            return table.word(lo + int(hit[0]))
    return None


def dense_tuple_certificate(gens: Sequence[GroupElement], qmax: int, l_cert: int | None = None) -> DensityCertificate:
    """Sufficient certificate that ``gens`` generate a dense subgroup."""
    tol = tolerances()
    l_cert = tol.l_cert if l_cert is None else l_cert
    gens = list(gens)
    if not gens:
        raise InputError("dense_tuple_certificate needs at least one element")
    spec = gens[0].spec
    if any(g.spec != spec for g in gens):
        raise SpecMismatch("tuple entries of different groups")
    if spec.factors:
        sb = span_closure([adjoint(g) for g in gens])
        full, dim = sb.full, sb.dim
    else:
        full, dim = True, 0
    per, wits = [], []
    for i in range(spec.p):
        w = factor_nontorsion_witness(gens, i, qmax, l_cert)
        per.append(w is not None)
        wits.append(None if w is None else w.to_text())
    ab = any(abelian_dense(g, qmax) for g in gens) if spec.torus_blocks else True
    return DensityCertificate(full, per, ab, qmax, l_cert, dim, spec.algebra_target_dim, wits,
                              {"rank": tol.rank, "torsion": tol.torsion, "abelian": tol.abelian})


def brute_force_span_dim(gens: Sequence[AdjointMatrix], max_len: int = 6, tol: float | None = None) -> int:
    """Rank of the span of all products of length <= max_len (used as an oracle)."""
    tol = tolerances().rank if tol is None else tol
    spec = gens[0].spec
    sizes = [spec.blocks[i].alg_dim for i in spec.factors]
    mats = [_end_blocks(g) for g in gens]
    level = [[np.eye(n) for n in sizes]]
    rows = [_pack(level[0])]
    for _ in range(max_len):
        level = [[a @ b for a, b in zip(x, g)] for x in level for g in mats]
        rows.extend(_pack(x) for x in level)
    sv = np.linalg.svd(np.array(rows), compute_uv=False)
    return int(np.sum(sv > tol * max(1.0, sv[0])))
