"""Free-group words, word tables, target steering and epsilon-nets.

Letters are coded as integers: ``2*i`` is the generator x_{i+1} and ``2*i + 1``
its inverse, so the natural letter order is x1, x1^-1, x2, x2^-1, ...  Words
are compared shortlex (length first, then letter codes).
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .config import tolerances
from .errors import InputError, NetUnreachable, SpecMismatch
from .groups import GroupElement, GroupSpec, block_stack, flat_identity, flat_inv, flat_mul, inverse, multiply


class Word:
    """Freely reduced word in the free group of the given rank."""

    __slots__ = ("rank", "codes")

    def __init__(self, rank: int, codes: Sequence[int] = ()):
        if rank < 1:
            raise InputError("rank must be >= 1")
        codes = tuple(int(c) for c in codes)
        for c in codes:
            if not 0 <= c < 2 * rank:
                raise InputError(f"letter code {c} out of range for rank {rank}")
        for a, b in zip(codes, codes[1:]):
            if a ^ 1 == b:
                raise InputError("word is not freely reduced")
        self.rank = rank
        self.codes = codes

    @classmethod
    def reduced(cls, rank: int, codes: Sequence[int]) -> "Word":
        """Build a word after cancelling adjacent inverse pairs."""
        out = []
        for c in codes:
            if out and out[-1] == c ^ 1:
                out.pop()
            else:
                out.append(int(c))
        return cls(rank, out)

    @classmethod
    def from_pairs(cls, rank: int, pairs) -> "Word":
        """From (generator index, exponent) pairs, exponents +-1; indices from 0."""
        codes = []
        for i, e in pairs:
            if e not in (1, -1):
                raise InputError("exponents must be +1 or -1")
            codes.append(2 * i + (0 if e == 1 else 1))
        return cls(rank, codes)

    @classmethod
    def letter(cls, rank: int, i: int, exponent: int = 1) -> "Word":
        return cls.from_pairs(rank, [(i, exponent)])

    @classmethod
    def from_text(cls, text: str, rank: int | None = None) -> "Word":
        codes = []
        for ch in text.strip():
            if "a" <= ch <= "z":
                codes.append(2 * (ord(ch) - 97))
            elif "A" <= ch <= "Z":
                codes.append(2 * (ord(ch) - 65) + 1)
            else:
                raise InputError(f"bad letter {ch!r} in word {text!r}")
        if rank is None:
            rank = max([c // 2 + 1 for c in codes], default=1)
        return cls(rank, codes)

    def to_text(self) -> str:
        if self.rank > 26:
            raise InputError("text format supports rank <= 26")
        return "".join(chr((65 if c & 1 else 97) + c // 2) for c in self.codes)

    @property
    def pairs(self):
        return [(c // 2, -1 if c & 1 else 1) for c in self.codes]

    def __len__(self):
        return len(self.codes)

    def __eq__(self, other):
        return isinstance(other, Word) and self.rank == other.rank and self.codes == other.codes

    def __hash__(self):
        return hash((self.rank, self.codes))

    def shortlex_key(self):
        return (len(self.codes), self.codes)

    def __lt__(self, other):
        return self.shortlex_key() < other.shortlex_key()

    def __mul__(self, other: "Word") -> "Word":
        if self.rank != other.rank:
            raise InputError("words of different rank")
        return Word.reduced(self.rank, self.codes + other.codes)

    def inverse(self) -> "Word":
        return Word(self.rank, [c ^ 1 for c in reversed(self.codes)])

    def uses(self, i: int) -> bool:
        return any(c // 2 == i for c in self.codes)

    def substitute(self, images: Sequence["Word"]) -> "Word":
        """Replace generator i by the word images[i] (all of one common rank)."""
        if len(images) != self.rank:
            raise InputError("need one image per generator")
        rank = images[0].rank
        codes = []
        for c in self.codes:
            img = images[c // 2]
            codes.extend(img.inverse().codes if c & 1 else img.codes)
        return Word.reduced(rank, codes)

    def relabel(self, rank: int, mapping: Sequence[int]) -> "Word":
        """Send generator i to generator mapping[i] of a free group of the new rank."""
        return Word(rank, [2 * mapping[c // 2] + (c & 1) for c in self.codes])

    def __repr__(self):
        return f"Word({self.to_text() or '1'!r}, rank={self.rank})"


def count_words(rank: int, max_len: int) -> int:
    if max_len <= 0:
        return 1
    if rank == 1:
        return 1 + 2 * max_len
    k = 2 * rank - 1
    return 1 + 2 * rank * (k ** max_len - 1) // (k - 1)


def enumerate_words(rank: int, max_len: int) -> Iterator[Word]:
    """All reduced words of length <= max_len, shortlex, each once."""
    if rank < 1 or max_len < 0:
        raise InputError("need rank >= 1 and max_len >= 0")
    level = [()]
    yield Word(rank, ())
    for _ in range(max_len):
        nxt = []
        for w in level:
            for c in range(2 * rank):
                if w and w[-1] == c ^ 1:
                    continue
                nxt.append(w + (c,))
        for w in nxt:
            yield Word(rank, w)
        level = nxt


def evaluate(w: Word, elements: Sequence[GroupElement]) -> GroupElement:
    if len(elements) != w.rank:
        raise InputError(f"word of rank {w.rank} evaluated on {len(elements)} elements")
    spec = elements[0].spec
    if any(e.spec != spec for e in elements):
        raise SpecMismatch("tuple entries of different groups")
    out = GroupElement.identity(spec)
    invs = {}
    for c in w.codes:
        i = c // 2
        if c & 1:
            if i not in invs:
                invs[i] = inverse(elements[i])
            out = multiply(out, invs[i])
        else:
            out = multiply(out, elements[i])
    return out


def letter_rows(elements: Sequence[GroupElement]) -> np.ndarray:
    """Flattened rows for letter codes 0..2n-1."""
    spec = elements[0].spec
    if any(e.spec != spec for e in elements):
        raise SpecMismatch("tuple entries of different groups")
    rows = []
    for e in elements:
        f = e.flat()
        rows.extend([f, flat_inv(spec, f)])
    return np.array(rows)


# ---------------------------------------------------------------------------
# Word tables

class WordTable:
    """All reduced words up to a length, stored level by level in shortlex order.

    Level ``l`` keeps, for each of its words, the index of its parent (the word
    with the last letter removed) within level ``l - 1`` and the last letter
    code.  Values are flattened group elements; older levels may be dropped to
    save memory (``keep_values=False``) and recomputed on demand.
    """

    def __init__(self, spec: GroupSpec, rank: int, letters: np.ndarray, keep_values: bool = True):
        self.spec = spec
        self.rank = rank
        self.letters = letters
        self.keep_values = keep_values
        self.parents = [np.zeros(1, dtype=np.int64)]
        self.last = [np.full(1, -1, dtype=np.int16)]
        self.values = [flat_identity(spec)[None, :]]

    @classmethod
    def build(cls, elements: Sequence[GroupElement], max_len: int, keep_values: bool = True) -> "WordTable":
        elements = list(elements)
        t = cls(elements[0].spec, len(elements), letter_rows(elements), keep_values)
        t.extend(max_len)
        return t

    @property
    def max_len(self) -> int:
        return len(self.parents) - 1

    def level_size(self, lvl: int) -> int:
        return len(self.parents[lvl])

    def level_offset(self, lvl: int) -> int:
        return sum(len(p) for p in self.parents[:lvl])

    def level_range(self, lvl: int):
        lo = self.level_offset(lvl)
        return lo, lo + self.level_size(lvl)

    def __len__(self):
        return sum(len(p) for p in self.parents)

    def extend(self, max_len: int) -> None:
        n2 = 2 * self.rank
        while self.max_len < max_len:
            lvl = self.max_len
            last = self.last[lvl]
            m = len(last)
            par = np.repeat(np.arange(m, dtype=np.int64), n2)
            code = np.tile(np.arange(n2, dtype=np.int16), m)
            ok = (last[par] ^ 1) != code if lvl > 0 else np.ones(len(par), dtype=bool)
            par, code = par[ok], code[ok]
            prev = self.values[lvl]
            vals = np.empty((len(par), prev.shape[1]))
            for c in range(n2):
                sel = code == c
                vals[sel] = flat_mul(self.spec, prev[par[sel]], self.letters[c])
            self.parents.append(par)
            self.last.append(code)
            self.values.append(vals)
            if not self.keep_values and lvl >= 1:
                self.values[lvl] = None

    def level_values(self, lvl: int) -> np.ndarray:
        if self.values[lvl] is None:
            raise InputError("values of this level were dropped")
        return self.values[lvl]

    def all_values(self) -> np.ndarray:
        return np.concatenate([self.level_values(l) for l in range(self.max_len + 1)])

    def block_stack(self, i: int) -> np.ndarray:
        return block_stack(self.spec, self.all_values(), i)

    def locate(self, index: int):
        for lvl, p in enumerate(self.parents):
            if index < len(p):
                return lvl, index
            index -= len(p)
        raise IndexError("word index out of range")

    def codes_of(self, lvl: int, local: int):
        out = []
        while lvl > 0:
            out.append(int(self.last[lvl][local]))
            local = int(self.parents[lvl][local])
            lvl -= 1
        return out[::-1]

    def word(self, index: int) -> Word:
        return Word(self.rank, self.codes_of(*self.locate(index)))

    def code_matrix(self, indices: np.ndarray) -> np.ndarray:
        """Padded letter codes (-1 past the end) for global word indices."""
        indices = np.asarray(indices, dtype=np.int64)
        offs = np.cumsum([0] + [len(p) for p in self.parents])
        lvls = np.searchsorted(offs, indices, side="right") - 1
        out = np.full((len(indices), max(1, self.max_len)), -1, dtype=np.int16)
        for lvl in np.unique(lvls):
            sel = np.nonzero(lvls == lvl)[0]
            local = indices[sel] - offs[lvl]
            for pos in range(lvl - 1, -1, -1):
                out[sel, pos] = self.last[pos + 1][local]
                local = self.parents[pos + 1][local]
        return out


def evaluate_codes(spec: GroupSpec, codes: np.ndarray, letters: np.ndarray) -> np.ndarray:
    """Vectorised evaluation of padded code rows against letter rows."""
    ident = flat_identity(spec)
    table = np.vstack([letters, ident[None, :]])
    idx = np.where(codes < 0, len(letters), codes)
    out = np.repeat(ident[None, :], len(codes), axis=0)
    for pos in range(codes.shape[1]):
        out = flat_mul(spec, out, table[idx[:, pos]])
    return out


# ---------------------------------------------------------------------------
# Steering

DEFAULT_BUDGET = 200_000
_CACHE: "OrderedDict" = OrderedDict()
_CACHE_SIZE = 3
_CACHE_ROWS = 4_000_000     # evict older indices beyond this many stored rows


def _tuple_key(elements, max_len):
    return (str(elements[0].spec), max_len, b"".join(e.flat().tobytes() for e in elements))


def _cached(key, make):
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    # free older indices before building a new one
    while len(_CACHE) >= _CACHE_SIZE or (_CACHE and _cache_rows() > _CACHE_ROWS // 2):
        _CACHE.popitem(last=False)
    val = make()
    _CACHE[key] = val
    return val


def _entry_rows(val) -> int:
    if isinstance(val, _MitmIndex):
        return len(val.u_vals) * 2 + val.v_count
    return len(val[1])


def _cache_rows() -> int:
    return sum(_entry_rows(v) for v in _CACHE.values())


def clear_cache():
    _CACHE.clear()


@dataclass
class _MitmIndex:
    table: WordTable
    u_len: int
    v_len: int
    u_vals: np.ndarray
    u_inv: np.ndarray
    tree: cKDTree
    v_count: int


def _exhaustive_index(elements, max_len):
    def make():
        t = WordTable.build(elements, max_len)
        return t, t.all_values()
    return _cached(("ex",) + _tuple_key(elements, max_len), make)


def _mitm_index(elements, max_len):
    def make():
        u_len, v_len = (max_len + 1) // 2, max_len // 2
        t = WordTable.build(elements, u_len)
        vals = t.all_values()
        v_count = count_words(t.rank, v_len)
        tree = cKDTree(vals[:v_count])
        return _MitmIndex(t, u_len, v_len, vals, flat_inv(t.spec, vals), tree, v_count)
    return _cached(("mitm",) + _tuple_key(elements, max_len), make)


def _use_mitm(rank, max_len, budget):
    return count_words(rank, max_len) > budget


def _mitm_pairs(ix: _MitmIndex, target_flat: np.ndarray, k: int, bound: float):
    q = flat_mul(ix.table.spec, ix.u_inv, target_flat)
    d, j = ix.tree.query(q, k=k, distance_upper_bound=bound)
    if k == 1:
        d, j = d[:, None], j[:, None]
    ui, col = np.nonzero(np.isfinite(d))
    return d[ui, col], ui, j[ui, col]


def _pair_word(ix: _MitmIndex, u: int, v: int) -> Word:
    return ix.table.word(int(u)) * ix.table.word(int(v))


def steer_candidates(elements: Sequence[GroupElement], target: GroupElement, max_len: int,
                     k: int = 16, radius: float = math.inf, budget: int = DEFAULT_BUDGET):
    """Up to k distinct words of length <= max_len closest to target, within radius.

    Sorted by distance, ties (within the tie tolerance) broken shortlex.
    """
    elements = list(elements)
    if not elements:
        raise InputError("steering needs a non-empty tuple")
    if target.spec != elements[0].spec:
        raise SpecMismatch("target and tuple in different groups")
    tie = tolerances().tie
    tf = target.flat()
    rank = len(elements)
    if not _use_mitm(rank, max_len, budget):
        table, vals = _exhaustive_index(elements, max_len)
        d = np.linalg.norm(vals - tf, axis=1)
        order = np.argsort(d, kind="stable")
        found = []
        for i in order:
            if d[i] > radius or len(found) >= k and d[i] > found[-1][1] + tie:
                break
            found.append((table.word(int(i)), float(d[i])))
        return _sort_ties(found, tie)[:k]
    ix = _mitm_index(elements, max_len)
    bound = radius if math.isfinite(radius) else np.inf
    dist, ui, vj = _mitm_pairs(ix, tf, min(k, ix.v_count), bound)
    if not len(dist):
        return []
    order = np.argsort(dist, kind="stable")
    found, seen = [], set()
    for o in order:
        if len(found) >= k and dist[o] > found[-1][1] + tie:
            break
        w = _pair_word(ix, ui[o], vj[o])
        if w in seen:
            continue
        seen.add(w)
        found.append((w, float(dist[o])))
    return _sort_ties(found, tie)[:k]


def _sort_ties(found, tie):
    if not found:
        return found
    # group runs of near-equal distances and order each run shortlex
    found = sorted(found, key=lambda x: x[1])
    out, run = [], [found[0]]
    for item in found[1:]:
        if item[1] <= run[0][1] + tie:
            run.append(item)
        else:
            out.extend(sorted(run, key=lambda x: x[0].shortlex_key()))
            run = [item]
    out.extend(sorted(run, key=lambda x: x[0].shortlex_key()))
    return out


def steer_to_target(elements: Sequence[GroupElement], target: GroupElement, max_len: int,
                    budget: int = DEFAULT_BUDGET):
    """Word of length <= max_len whose value is closest to target, ties shortlex.

    Returns ``(word, distance)``.  Uses an exhaustive table when the number of
    words is within ``budget`` and a meet-in-the-middle search otherwise; both
    return the same minimiser.
    """
    elements = list(elements)
    if not elements:
        raise InputError("steering needs a non-empty tuple")
    if target.spec != elements[0].spec:
        raise SpecMismatch("target and tuple in different groups")
    tie = tolerances().tie
    tf = target.flat()
    if not _use_mitm(len(elements), max_len, budget):
        table, vals = _exhaustive_index(elements, max_len)
        d = np.linalg.norm(vals - tf, axis=1)
        best = d.min()
        i = int(np.argmax(d <= best + tie))
        return table.word(i), float(d[i])
    ix = _mitm_index(elements, max_len)
    dist, ui, vj = _mitm_pairs(ix, tf, 1, np.inf)
    best = dist.min()
    near = np.nonzero(dist <= best + tie)[0]
    # every word within the tie window, from all (u, v) splits that reach it
    dist2, ui2, vj2 = _mitm_pairs(ix, tf, min(8, ix.v_count), best + 2 * tie)
    cands = {}
    for d, u, v in zip(np.concatenate([dist[near], dist2]), np.concatenate([ui[near], ui2]),
                       np.concatenate([vj[near], vj2])):
        if d <= best + tie:
            w = _pair_word(ix, u, v)
            cands[w] = min(cands.get(w, math.inf), float(d))
    w = min(cands, key=lambda x: x.shortlex_key())
    return w, cands[w]


# ---------------------------------------------------------------------------
# Epsilon nets
#
# A net is stored as a product C.T of two word lists.  When G has torus blocks,
# words in C are grouped by their exponent sums e = (e1, e2) (a few small
# classes); the torus part of a class-e word is e.phi, so for each class the
# torus values of the products c t are a translate of the slice values.  Words
# in T are the shortest words a^i b^j realising well spread torus angles.  By
# right invariance d(c t, x)^2 = d'(c, x t^-1)^2 + d_T(c t, x)^2, where d' is
# the distance in the semisimple part G'.  A point x is covered when, for some
# class, the slice whose translate is near x's torus part is paired with a
# class word near x t^-1 in G'.  Separation is enforced inside each class.
# For semisimple G, T is the empty word alone and C is the plain greedy net.

TORUS_SHARE = 0.65          # torus share of the covering radius, greedy slices
CIRCLE_SHARE = 0.35         # the same when the torus is a single circle (walked slices)
CLASS_RADIUS = 2            # core classes: exponent sums with |e1| + |e2| <= CLASS_RADIUS


def _columns(spec: GroupSpec):
    semi, tor = [], []
    for blk, off in zip(spec.blocks, spec.flat_offsets):
        (tor if blk.is_torus else semi).extend(range(off, off + blk.flat_size))
    return np.array(semi, dtype=np.int64), np.array(tor, dtype=np.int64)


# exponent-sum change caused by appending each letter code of a rank-2 word
_LETTER_SUMS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int8)


def _word_lengths(codes: np.ndarray) -> np.ndarray:
    return (codes >= 0).sum(axis=1)


def _greedy_separated(points: np.ndarray, sep: float) -> np.ndarray:
    """In-order greedy subset with pairwise distances >= sep (boolean mask)."""
    n = len(points)
    if n <= 1:
        return np.ones(n, dtype=bool)
    tree = cKDTree(points)
    nbrs = tree.query_ball_point(points, r=sep * (1 - 1e-12), return_sorted=False)
    keep = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    for i in range(n):
        if blocked[i]:
            continue
        keep[i] = True
        blocked[nbrs[i]] = True
    return keep


def _slice_codes(max_len: int) -> np.ndarray:
    """Words a^i b^j (signs allowed), ordered shortlex, up to length max_len."""
    rows = []
    for i in range(-max_len, max_len + 1):
        for j in range(-max_len, max_len + 1):
            if abs(i) + abs(j) <= max_len:
                rows.append([0 if i > 0 else 1] * abs(i) + [2 if j > 0 else 3] * abs(j))
    rows.sort(key=lambda r: (len(r), r))
    out = np.full((len(rows), max(1, max_len)), -1, dtype=np.int16)
    for k, r in enumerate(rows):
        out[k, :len(r)] = r
    return out


def _core_classes(radius: int):
    """Exponent-sum classes (e1, e2) with |e1| + |e2| <= radius, (0, 0) first."""
    out = [(i, j) for i in range(-radius, radius + 1) for j in range(-radius, radius + 1)
           if abs(i) + abs(j) <= radius]
    out.sort(key=lambda e: (abs(e[0]) + abs(e[1]), e))
    return out


def _code_classes(codes: np.ndarray) -> np.ndarray:
    """Exponent sums of padded rank-2 code rows."""
    safe = np.where(codes >= 0, codes, 0)
    sums = _LETTER_SUMS[safe].astype(np.int64) * (codes >= 0)[..., None]
    return sums.sum(axis=1)


@dataclass
class NetEvaluation:
    """Net values at a particular pair, with one search tree per core class."""

    spec: GroupSpec
    core: np.ndarray      # flattened values of the C words
    slices: np.ndarray    # flattened values of the T words
    semi_cols: np.ndarray
    tor_cols: np.ndarray
    core_class: np.ndarray
    groups: list          # (indices, tree) per class

    def nearest(self, targets: np.ndarray, bound: float = np.inf):
        """Distance, core index and slice index of the nearest centre c t to each target row."""
        targets = np.atleast_2d(targets)
        m = len(targets)
        best = np.full(m, np.inf)
        bc = np.zeros(m, dtype=np.int64)
        bt = np.zeros(m, dtype=np.int64)
        has_tor = len(self.tor_cols) > 0
        for idx, tree in self.groups:
            # torus parts of c t are the same for every c in the class
            prods = flat_mul(self.spec, self.core[idx[0]][None, :], self.slices) if has_tor else None
            for k, t in enumerate(self.slices):
                if has_tor:
                    dt2 = np.sum((targets[:, self.tor_cols] - prods[k, self.tor_cols]) ** 2, axis=1)
                else:
                    dt2 = np.zeros(m)
                lim = np.minimum(best, bound) ** 2 - dt2
                sel = np.nonzero(lim > 0)[0]
                if not len(sel):
                    continue
                if tree is None:
                    d = np.sqrt(dt2[sel])
                    ci = np.full(len(sel), idx[0], dtype=np.int64)
                else:
                    shifted = flat_mul(self.spec, targets[sel], flat_inv(self.spec, t))
                    ds, ci = tree.query(shifted[:, self.semi_cols], k=1,
                                        distance_upper_bound=float(np.sqrt(lim[sel].max())))
                    ok = np.isfinite(ds)
                    sel, ds, ci = sel[ok], ds[ok], idx[ci[ok]]
                    d = np.sqrt(ds ** 2 + dt2[sel])
                better = d < best[sel]
                best[sel[better]] = d[better]
                bc[sel[better]] = ci[better]
                bt[sel[better]] = k
        return best, bc, bt


def _make_evaluation(spec, core, slices, core_class) -> NetEvaluation:
    semi, tor = _columns(spec)
    groups = []
    for c in np.unique(core_class):
        idx = np.nonzero(core_class == c)[0]
        tree = cKDTree(core[idx][:, semi]) if len(semi) else None
        groups.append((idx, tree))
    return NetEvaluation(spec, core, slices, semi, tor, core_class, groups)


@dataclass
class NetTable:
    epsilon: float
    pair: tuple
    core_codes: np.ndarray        # padded letter codes of the C words
    slice_codes: np.ndarray       # padded letter codes of the T words
    max_len: int                  # bound on the length of any net word c t
    confidence_samples: int
    seed: int
    covered_fraction: float
    radii: tuple = (0.0, 0.0)
    info: dict = field(default_factory=dict)
    _eval: NetEvaluation | None = field(default=None, repr=False)

    @property
    def spec(self) -> GroupSpec:
        return self.pair[0].spec

    def __len__(self):
        return len(self.core_codes) * len(self.slice_codes)

    def _split(self, j: int):
        return divmod(int(j), len(self.slice_codes))

    @staticmethod
    def _row_word(row) -> Word:
        return Word(2, [int(c) for c in row if c >= 0])

    def word(self, j: int) -> Word:
        c, t = self._split(j)
        return self.pair_word(c, t)

    def pair_word(self, c: int, t: int) -> Word:
        return self._row_word(self.core_codes[c]) * self._row_word(self.slice_codes[t])

    @property
    def words(self):
        return [self.word(j) for j in range(len(self))]

    @property
    def core_class(self) -> np.ndarray:
        """Class label of each core word (its exponent sums when G has torus blocks)."""
        if len(_columns(self.spec)[1]) == 0:
            return np.zeros(len(self.core_codes), dtype=np.int64)
        sums = _code_classes(self.core_codes)
        return sums[:, 0] * 64 + sums[:, 1]

    def evaluation(self, pair=None) -> NetEvaluation:
        if pair is None:
            if self._eval is None:
                self._eval = _evaluate_net(self, self.pair)
            return self._eval
        return _evaluate_net(self, pair)

    @property
    def centers(self) -> np.ndarray:
        return self.evaluate_at(self.pair)

    def evaluate_at(self, pair) -> np.ndarray:
        ev = self.evaluation(pair)
        return flat_mul(self.spec, ev.core[:, None, :], ev.slices[None, :, :]).reshape(-1, ev.core.shape[1])

    def to_dict(self):
        from .groups import encode_element
        return {
            "epsilon": self.epsilon,
            "pair": [encode_element(g) for g in self.pair],
            "core_words": [self._row_word(r).to_text() for r in self.core_codes],
            "slice_words": [self._row_word(r).to_text() for r in self.slice_codes],
            "size": len(self),
            "max_len": self.max_len,
            "radii": list(self.radii),
            "confidence_samples": self.confidence_samples,
            "seed": self.seed,
            "covered_fraction": self.covered_fraction,
            "info": self.info,
        }


def _evaluate_net(net: NetTable, pair) -> NetEvaluation:
    spec = net.spec
    letters = letter_rows(list(pair))
    core = evaluate_codes(spec, net.core_codes, letters)
    slices = evaluate_codes(spec, net.slice_codes, letters)
    return _make_evaluation(spec, core, slices, net.core_class)


def sample_rows(spec: GroupSpec, count: int, seed: int) -> np.ndarray:
    from .groups import haar_rows
    return haar_rows(spec, np.random.default_rng(seed), count)


def coverage_fraction(centers: np.ndarray, samples: np.ndarray, radius: float) -> float:
    if not len(centers):
        return 0.0
    d, _ = cKDTree(centers).query(samples, k=1, distance_upper_bound=radius * (1 + 1e-12))
    return float(np.mean(d <= radius))


def _empty_codes():
    return np.full((1, 1), -1, dtype=np.int16)


def _pad(rows, width):
    out = np.full((len(rows), max(1, width)), -1, dtype=np.int16)
    for k, r in enumerate(rows):
        out[k, :len(r)] = r
    return out


def build_net(pair, epsilon: float, confidence_samples: int = 10_000, *, seed: int = 0,
              max_len_cap: int = 16, class_radius: int = CLASS_RADIUS, abort=None) -> NetTable:
    """Greedy epsilon/2-net of words in two letters evaluated at ``pair``.

    Candidate words are scanned level by level in shortlex order; a word is kept
    when it is at least epsilon/4 from every kept word of its class.  Coverage
    is checked on ``confidence_samples`` Haar points drawn from ``seed`` as
    candidates are added.  For groups with torus blocks the net has the product
    form described above.  ``abort = (length, fraction)`` gives up early when the
    coverage after all words of that length is below the fraction.
    """
    g1, g2 = pair
    if g1.spec != g2.spec:
        raise SpecMismatch("net pair in different groups")
    spec = g1.spec
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    radius, sep = epsilon / 2, epsilon / 4
    samples = sample_rows(spec, confidence_samples, seed)
    if radius >= spec.diameter:
        return NetTable(epsilon, (g1, g2), _empty_codes(), _empty_codes(), 0, confidence_samples, seed, 1.0)
    semi, tor = _columns(spec)
    has_semi, has_tor = len(semi) > 0, len(tor) > 0
    letters = letter_rows([g1, g2])

    # torus slices; a single circle first tries the smaller walked radius
    r_tor = 0.0
    slice_codes, slice_len = _empty_codes(), 0
    if has_tor:
        shares = (CIRCLE_SHARE, TORUS_SHARE) if spec.torus_dim == 1 else (TORUS_SHARE,)
        for share in shares if has_semi else (1.0,):
            r_tor = radius * share
            try:
                slice_codes, slice_len = _torus_slices(spec, letters, samples, r_tor, sep, max_len_cap,
                                                       walk=share < TORUS_SHARE)
                break
            except NetUnreachable as e:
                err = e
        else:
            raise err
    r_semi = math.sqrt(radius ** 2 - r_tor ** 2)
    slice_vals = evaluate_codes(spec, slice_codes, letters)

    classes = _core_classes(class_radius) if has_tor else [(0, 0)]
    core_rows = [np.zeros(0, dtype=np.int16)]
    core_vals = [flat_identity(spec)[None, :]]
    core_cls = [np.zeros(1, dtype=np.int64)]
    core_len = 0
    ev = _make_evaluation(spec, core_vals[0], slice_vals, core_cls[0])
    covered = _eval_coverage(ev, samples, radius)
    history = []
    if has_semi and covered < 1.0:
        levels = _class_levels(g1, g2, max_len_cap, classes) if has_tor else _all_levels(g1, g2, max_len_cap)
        for lvl, cand, codes_of, cls in levels:
            if abort is not None and lvl > abort[0] and covered < abort[1]:
                err = NetUnreachable(lvl - 1 + slice_len, covered)
                err.history = history
                raise err
            added = False
            all_cls = np.concatenate(core_cls)
            all_vals = np.concatenate(core_vals)
            for c in np.unique(cls):
                pos = np.nonzero(cls == c)[0]
                mine = all_vals[all_cls == c]
                if len(mine):
                    d, _ = cKDTree(mine[:, semi]).query(cand[pos][:, semi], k=1,
                                                        distance_upper_bound=sep * (1 - 1e-12))
                    pos = pos[~np.isfinite(d)]
                if not len(pos):
                    continue
                keep = pos[_greedy_separated(cand[pos][:, semi], sep)]
                core_vals.append(cand[keep])
                core_cls.append(np.full(len(keep), c, dtype=np.int64))
                core_rows.extend(codes_of(keep))
                added = True
            if not added:
                continue
            core_len = lvl
            ev = _make_evaluation(spec, np.concatenate(core_vals), slice_vals, np.concatenate(core_cls))
            covered = _eval_coverage(ev, samples, radius)
            history.append((lvl, len(core_rows), covered))
            if covered >= 1.0:
                break
        else:
            err = NetUnreachable(max_len_cap + slice_len, covered)
            err.history = history
            raise err
    if covered < 1.0:
        raise NetUnreachable(slice_len, covered)
    net = NetTable(epsilon, (g1, g2), _pad(core_rows, core_len), slice_codes, core_len + slice_len,
                   confidence_samples, seed, covered, (r_semi, r_tor))
    net.info = {"core_words": int(len(net.core_codes)), "slice_words": int(len(net.slice_codes)),
                "centers": int(len(net)), "core_len": core_len, "slice_len": slice_len,
                "core_classes": [list(e) for e in classes],
                "coverage_by_level": [list(h) for h in history]}
    return net


def _all_levels(g1, g2, cap):
    """Yield (length, values, codes_of, classes) for all words of each length, shortlex."""
    table = WordTable.build([g1, g2], 0, keep_values=False)
    for lvl in range(1, cap + 1):
        table.extend(lvl)
        lo = table.level_offset(lvl)
        vals = table.level_values(lvl)
        yield (lvl, vals, (lambda idx, lo=lo, lvl=lvl: table.code_matrix(lo + idx)[:, :lvl]),
               np.zeros(len(vals), dtype=np.int64))


def _class_levels(g1, g2, cap, classes, chunk=1_000_000):
    """Yield (length, values, codes_of, class labels) for words whose exponent sums lie in ``classes``.

    A word of length L splits as u v with |u| = ceil(L/2) and |v| = floor(L/2),
    so the words are joined from two half levels, matching exponent sums.
    Pairs in (u, v) order are in shortlex order because each level is; they
    are produced in chunks of about ``chunk`` words.  Class labels are
    64*e1 + e2.
    """
    spec = g1.spec
    half = WordTable.build([g1, g2], (cap + 1) // 2)
    targets = np.array([e1 * 64 + e2 for e1, e2 in classes], dtype=np.int64)
    cache = {}

    def level(m):
        if m not in cache:
            if m == 0:
                codes = np.zeros((1, 0), dtype=np.int16)
                vals = flat_identity(spec)[None, :]
            else:
                lo, hi = half.level_range(m)
                vals = half.level_values(m)
                codes = half.code_matrix(np.arange(lo, hi))[:, :m]
            sums = _LETTER_SUMS[codes].astype(np.int64).sum(axis=1)
            key = sums[:, 0] * 64 + sums[:, 1]
            order = np.argsort(key, kind="stable")
            uniq, starts = np.unique(key[order], return_index=True)
            groups = {int(k): order[s:e] for k, s, e in zip(uniq, starts, list(starts[1:]) + [len(order)])}
            cache[m] = (codes, vals, key, groups)
        return cache[m]

    for L in range(1, cap + 1):
        mu, mv = (L + 1) // 2, L // 2
        ucodes, uvals, ukey, _ = level(mu)
        vcodes, vvals, _, vgroups = level(mv)
        partners = {}
        for k in np.unique(ukey):
            partners[int(k)] = [(int(t), vgroups[int(t - k)]) for t in targets if int(t - k) in vgroups]
        sizes = np.array([sum(len(v) for _, v in partners[int(k)]) for k in ukey])
        start = 0
        while start < len(ukey):
            stop = start + 1
            total = sizes[start]
            while stop < len(ukey) and total + sizes[stop] <= chunk:
                total += sizes[stop]
                stop += 1
            pu, pv, pc = [], [], []
            for k in np.unique(ukey[start:stop]):
                us = start + np.nonzero(ukey[start:stop] == k)[0]
                for c, vs in partners[int(k)]:
                    uu, vv = np.meshgrid(us, vs, indexing="ij")
                    uu, vv = uu.ravel(), vv.ravel()
                    if mv:
                        ok = (ucodes[uu, mu - 1] ^ 1) != vcodes[vv, 0]
                        uu, vv = uu[ok], vv[ok]
                    pu.append(uu)
                    pv.append(vv)
                    pc.append(np.full(len(uu), c, dtype=np.int64))
            start = stop
            if not pu:
                continue
            pu, pv, pc = np.concatenate(pu), np.concatenate(pv), np.concatenate(pc)
            if not len(pu):
                continue
            order = np.lexsort((pv, pu))
            pu, pv, pc = pu[order], pv[order], pc[order]
            out = flat_mul(spec, uvals[pu], vvals[pv])
            yield L, out, (lambda idx, pu=pu, pv=pv, uc=ucodes, vc=vcodes:
                           np.hstack([uc[pu[idx]], vc[pv[idx]]])), pc


def _torus_slices(spec, letters, samples, r_tor, sep, cap, walk=False):
    """Slice words a^i b^j whose torus values are sep-separated and cover the torus at r_tor.

    With ``walk`` (single circle only) the slices are picked by walking around
    the circle with gaps between the separation and twice the covering radius;
    otherwise they are the greedy shortlex subset.  Coverage is checked on the
    samples.
    """
    semi, tor = _columns(spec)
    target = samples[:, tor]
    covered = 0.0
    for j in range(1, cap + 1):
        codes = _slice_codes(j)
        vals = evaluate_codes(spec, codes, letters)[:, tor]
        if walk:
            keep = _circle_walk(np.arctan2(vals[:, 2], vals[:, 0]), sep, r_tor)
            if keep is None:
                continue
        else:
            keep = np.nonzero(_greedy_separated(vals, sep))[0]
        d, _ = cKDTree(vals[keep]).query(target, k=1, distance_upper_bound=r_tor * (1 + 1e-12))
        covered = float(np.mean(d <= r_tor))
        if covered == 1.0:
            chosen = codes[np.sort(keep)]
            length = int(_word_lengths(chosen).max())
            return chosen[:, :max(1, length)], length
    raise NetUnreachable(cap, covered)


def _circle_walk(angles: np.ndarray, sep: float, r_tor: float):
    """Indices of points on the circle, starting at index 0, with cyclic gaps in [lo, hi].

    ``lo`` is the angle of chord length ``sep`` and ``hi`` twice the angle of
    chord length ``r_tor`` (chords measured in the 2x2 Frobenius norm), so the
    points are sep-separated and cover the circle at r_tor.  Returns None when
    the candidates are too sparse.
    """
    lo = 2 * math.asin(min(1.0, sep / (2 * math.sqrt(2)))) * (1 + 1e-9)
    hi = 4 * math.asin(min(1.0, r_tor / (2 * math.sqrt(2)))) * (1 - 1e-9)
    if hi < lo:
        return None
    rel = np.mod(angles - angles[0], 2 * math.pi)
    order = np.argsort(rel, kind="stable")
    ang = rel[order]
    two_pi = 2 * math.pi
    # breadth-first search from the start point over admissible gaps (fewest points)
    prev = np.full(len(ang), -1)
    seen = np.zeros(len(ang), dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for j in frontier:
            if lo <= two_pi - ang[j] <= hi and j != 0:
                path = [j]
                while prev[path[-1]] >= 0:
                    path.append(int(prev[path[-1]]))
                return order[np.array(path[::-1])]
            lo_k = np.searchsorted(ang, ang[j] + lo, side="left")
            hi_k = np.searchsorted(ang, ang[j] + hi, side="right")
            for k in range(lo_k, hi_k):
                if not seen[k] and two_pi - ang[k] >= lo:
                    seen[k] = True
                    prev[k] = j
                    nxt.append(k)
        frontier = nxt
    return None


def _eval_coverage(ev: NetEvaluation, samples: np.ndarray, radius: float) -> float:
    d, _, _ = ev.nearest(samples, bound=radius * (1 + 1e-12))
    return float(np.mean(d <= radius))


def _net_coverage(net: NetTable, samples: np.ndarray, radius: float, pair=None) -> float:
    ev = net.evaluation(pair)
    d, _, _ = ev.nearest(samples, bound=radius * (1 + 1e-12))
    return float(np.mean(d <= radius))


def _circle_angles(g: GroupElement) -> np.ndarray:
    from .groups import _torus_angles
    out = [np.atleast_1d(_torus_angles(m)) for blk, m in zip(g.spec.blocks, g.blocks) if blk.is_torus]
    return np.concatenate(out) if out else np.zeros(0)


def element_mixing(g: GroupElement, q: int = 6) -> float:
    """min over blocks (circles separately) and 1 <= k <= q of d(x^k, 1) for the block part x.

    Small values flag near-torsion blocks, whose words spread slowly over the group.
    """
    ks = np.arange(1, q + 1)[:, None]
    best = np.inf
    for blk, m in zip(g.spec.blocks, g.blocks):
        if blk.is_torus:
            continue
        ang = np.angle(np.linalg.eigvals(m))[None, :]
        best = min(best, float(np.sqrt(np.sum(4 * np.sin(ks * ang / 2) ** 2, axis=1)).min()))
    for a in _circle_angles(g):
        best = min(best, float((math.sqrt(8) * np.abs(np.sin(ks[:, 0] * a / 2))).min()))
    return best


def mixing_score(pair, q: int = 6) -> float:
    """Element scores of both entries and the torus distances of a^i b^j, 0 < |i| + |j| <= q.

    Larger is better; nets on pairs with a small score need long words.
    """
    a, b = pair
    best = min(element_mixing(a, q), element_mixing(b, q))
    x, y = _circle_angles(a), _circle_angles(b)
    for i in range(-q, q + 1):
        for j in range(1, q + 1 - abs(i)):
            if len(x):
                best = min(best, float((math.sqrt(8) * np.abs(np.sin((i * x + j * y) / 2))).min()))
    return best


def net_margin(net: NetTable) -> float:
    """Perturbation radius eps1 keeping the net an epsilon-net (word-length Lipschitz bound)."""
    half = net.epsilon / 2
    return min(half, half / max(1, net.max_len))


def net_coverage_at(net: NetTable, pair, samples: int | None = None, seed: int | None = None,
                    radius: float | None = None) -> float:
    """Monte Carlo coverage of the net words re-evaluated at another pair."""
    samples = net.confidence_samples if samples is None else samples
    seed = net.seed + 1 if seed is None else seed
    radius = net.epsilon if radius is None else radius
    pts = sample_rows(net.spec, samples, seed)
    return _net_coverage(net, pts, radius, pair=pair)
