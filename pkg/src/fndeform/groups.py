"""Compact matrix groups built from SO(k), SU(2) and torus blocks.

Elements are block-diagonal: each block of a :class:`GroupSpec` carries its own
square matrix.  Torus(m) blocks are stored as ``2m x 2m`` block-diagonal
rotation matrices so that every block is orthogonal or unitary and the
Frobenius distance is bi-invariant.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from scipy import linalg

from .config import tolerances
from .errors import CutLocusError, InputError, NotRegularError, SpecMismatch

MAX_SO = 6
MAX_TORUS = 4
REORTHO_EVERY = 64

_BLOCK_RE = re.compile(r"^(so(\d+)|su2|torus(\d+))$")


@dataclass(frozen=True)
class Block:
    kind: str
    size: int

    def __post_init__(self):
        if self.kind == "so":
            if not 3 <= self.size <= MAX_SO:
                raise InputError(f"SO(k) needs 3 <= k <= {MAX_SO}, got {self.size}")
            if self.size == 4:
                raise InputError("SO(4) is not simple; use so3 or su2 factors instead")
        elif self.kind == "su2":
            if self.size != 2:
                raise InputError("SU(2) block has size 2")
        elif self.kind == "torus":
            if not 1 <= self.size <= MAX_TORUS:
                raise InputError(f"Torus(m) needs 1 <= m <= {MAX_TORUS}, got {self.size}")
        else:
            raise InputError(f"unknown block kind {self.kind!r}")

    @classmethod
    def parse(cls, name: str) -> "Block":
        m = _BLOCK_RE.match(name.strip().lower())
        if not m:
            raise InputError(f"cannot parse block {name!r}")
        if m.group(2):
            return cls("so", int(m.group(2)))
        if m.group(3):
            return cls("torus", int(m.group(3)))
        return cls("su2", 2)

    @property
    def name(self) -> str:
        if self.kind == "su2":
            return "su2"
        return f"{self.kind}{self.size}"

    @property
    def dim(self) -> int:
        return 2 * self.size if self.kind == "torus" else self.size

    @property
    def alg_dim(self) -> int:
        if self.kind == "so":
            return self.size * (self.size - 1) // 2
        if self.kind == "su2":
            return 3
        return self.size

    @property
    def rank(self) -> int:
        if self.kind == "so":
            return self.size // 2
        if self.kind == "su2":
            return 1
        return self.size

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    @property
    def is_complex(self) -> bool:
        return self.kind == "su2"

    @property
    def flat_size(self) -> int:
        if self.kind == "torus":
            return 4 * self.size
        return (2 if self.is_complex else 1) * self.dim ** 2

    @property
    def dtype(self):
        return complex if self.is_complex else float


@dataclass(frozen=True)
class GroupSpec:
    """A compact group as an ordered product of blocks."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, Block) else Block.parse(b) for b in self.blocks)
        if not blocks:
            raise InputError("a group spec needs at least one block")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def parse(cls, text) -> "GroupSpec":
        if isinstance(text, GroupSpec):
            return text
        if isinstance(text, str):
            parts = [p for p in re.split(r"[x*,\s]+", text.strip().lower()) if p]
        else:
            parts = list(text)
        return cls(tuple(Block.parse(p) if isinstance(p, str) else p for p in parts))

    def __str__(self):
        return "x".join(b.name for b in self.blocks)

    def to_dict(self):
        return {"blocks": [b.name for b in self.blocks]}

    @classmethod
    def from_dict(cls, data):
        return cls.parse(data["blocks"])

    @cached_property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    @cached_property
    def alg_dim(self) -> int:
        return sum(b.alg_dim for b in self.blocks)

    @cached_property
    def rank(self) -> int:
        return sum(b.rank for b in self.blocks)

    @cached_property
    def semisimple(self) -> bool:
        return not any(b.is_torus for b in self.blocks)

    @cached_property
    def factors(self) -> tuple:
        """Block indices of the simple (non-torus) factors."""
        return tuple(i for i, b in enumerate(self.blocks) if not b.is_torus)

    @property
    def p(self) -> int:
        return len(self.factors)

    @cached_property
    def torus_blocks(self) -> tuple:
        return tuple(i for i, b in enumerate(self.blocks) if b.is_torus)

    @cached_property
    def torus_dim(self) -> int:
        return sum(self.blocks[i].size for i in self.torus_blocks)

    @cached_property
    def alg_offsets(self) -> tuple:
        out, acc = [], 0
        for b in self.blocks:
            out.append(acc)
            acc += b.alg_dim
        return tuple(out)

    @cached_property
    def flat_offsets(self) -> tuple:
        out, acc = [], 0
        for b in self.blocks:
            out.append(acc)
            acc += b.flat_size
        return tuple(out)

    @cached_property
    def flat_size(self) -> int:
        return sum(b.flat_size for b in self.blocks)

    @cached_property
    def algebra_target_dim(self) -> int:
        """Dimension of the direct sum of End(g_i) over the simple factors."""
        return sum(self.blocks[i].alg_dim ** 2 for i in self.factors)

    @cached_property
    def diameter(self) -> float:
        """Largest Frobenius distance between two elements."""
        return 2.0 * math.sqrt(2.0 * self.rank)

    def factor_spec(self, i: int) -> "GroupSpec":
        return GroupSpec((self.blocks[self.factors[i]],))


# ---------------------------------------------------------------------------
# Lie algebra bases

@lru_cache(maxsize=None)
def block_basis(block: Block) -> np.ndarray:
    """Orthonormal (Frobenius) basis of the block's Lie algebra, shape (n, d, d)."""
    s = 1.0 / math.sqrt(2.0)
    if block.kind == "so":
        k = block.size
        out = []
        for i in range(k):
            for j in range(i + 1, k):
                e = np.zeros((k, k))
                e[j, i] = s
                e[i, j] = -s
                out.append(e)
        basis = np.array(out)
    elif block.kind == "su2":
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
        sz = np.array([[1, 0], [0, -1]], dtype=complex)
        basis = np.array([1j * sx * s, 1j * sy * s, 1j * sz * s])
    else:
        m = block.size
        basis = np.zeros((m, 2 * m, 2 * m))
        for c in range(m):
            basis[c, 2 * c + 1, 2 * c] = s
            basis[c, 2 * c, 2 * c + 1] = -s
    basis.setflags(write=False)
    return basis


def _rot2(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _torus_angles(mat: np.ndarray) -> np.ndarray:
    m = mat.shape[-1] // 2
    return np.array([math.atan2(mat[2 * c + 1, 2 * c], mat[2 * c, 2 * c]) for c in range(m)])


def _torus_matrix(angles) -> np.ndarray:
    m = len(angles)
    out = np.zeros((2 * m, 2 * m))
    for c, th in enumerate(angles):
        out[2 * c:2 * c + 2, 2 * c:2 * c + 2] = _rot2(th)
    return out


def _polar(mat: np.ndarray, block: Block) -> np.ndarray:
    if block.is_torus:
        return _torus_matrix(_torus_angles(mat))
    u, _, vh = np.linalg.svd(mat)
    q = u @ vh
    if block.is_complex:
        q = q / np.sqrt(np.linalg.det(q))
    return q


def _ortho_residual(mat: np.ndarray) -> float:
    return float(np.linalg.norm(mat.conj().T @ mat - np.eye(mat.shape[0])))


# ---------------------------------------------------------------------------
# Elements

class GroupElement:
    """Immutable block-diagonal group element."""

    __slots__ = ("spec", "blocks", "_age")

    def __init__(self, spec: GroupSpec, blocks: Sequence, *, check: bool = True, age: int = 0):
        spec = GroupSpec.parse(spec)
        if len(blocks) != len(spec.blocks):
            raise SpecMismatch(f"{len(blocks)} blocks given for spec {spec}")
        arrs = []
        for blk, m in zip(spec.blocks, blocks):
            a = np.array(m, dtype=blk.dtype)
            if a.shape != (blk.dim, blk.dim):
                raise InputError(f"block {blk.name} needs shape {(blk.dim, blk.dim)}, got {a.shape}")
            a.setflags(write=False)
            arrs.append(a)
        self.spec = spec
        self.blocks = tuple(arrs)
        self._age = age
        if check:
            self.validate()

    def validate(self, tol: float | None = None) -> None:
        tol = tolerances().orth if tol is None else tol
        for blk, m in zip(self.spec.blocks, self.blocks):
            res = _ortho_residual(m)
            if not np.isfinite(res) or res > tol:
                raise InputError(f"block {blk.name} is not orthogonal/unitary (residual {res:.3g})")
            if abs(np.linalg.det(m) - 1.0) > max(tol, 1e-9):
                raise InputError(f"block {blk.name} does not have determinant 1")
            if blk.is_torus:
                mask = np.kron(np.eye(blk.size), np.ones((2, 2))) == 0
                if np.any(np.abs(m[mask]) > tol):
                    raise InputError("torus block must be block-diagonal 2x2 rotations")

    @classmethod
    def identity(cls, spec) -> "GroupElement":
        spec = GroupSpec.parse(spec)
        return cls(spec, [np.eye(b.dim, dtype=b.dtype) for b in spec.blocks], check=False)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return multiply(self, other)

    def inv(self) -> "GroupElement":
        return inverse(self)

    def flat(self) -> np.ndarray:
        """Real vector whose Euclidean norm differences are Frobenius distances."""
        return flatten_blocks(self.spec, [m[None] for m in self.blocks])[0]

    def matrix(self) -> np.ndarray:
        return linalg.block_diag(*self.blocks)

    def __repr__(self):
        return f"GroupElement({self.spec}, {[m.tolist() for m in self.blocks]})"


def _check_same(a: GroupElement, b: GroupElement):
    if a.spec != b.spec:
        raise SpecMismatch(f"{a.spec} vs {b.spec}")


def multiply(a: GroupElement, b: GroupElement) -> GroupElement:
    _check_same(a, b)
    blocks = [x @ y for x, y in zip(a.blocks, b.blocks)]
    age = max(a._age, b._age) + 1
    limit = tolerances().orth / 10
    if age >= REORTHO_EVERY or any(_ortho_residual(m) > limit for m in blocks):
        blocks = [_polar(m, blk) for m, blk in zip(blocks, a.spec.blocks)]
        age = 0
    return GroupElement(a.spec, blocks, check=False, age=age)


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(g.spec, [m.conj().T for m in g.blocks], check=False, age=g._age)


def distance(a: GroupElement, b: GroupElement) -> float:
    _check_same(a, b)
    return math.sqrt(sum(float(np.sum(np.abs(x - y) ** 2)) for x, y in zip(a.blocks, b.blocks)))


def orthonormalize(g: GroupElement) -> GroupElement:
    return GroupElement(g.spec, [_polar(m, b) for m, b in zip(g.blocks, g.spec.blocks)], check=False)


def flatten_blocks(spec: GroupSpec, stacks: Sequence[np.ndarray]) -> np.ndarray:
    """Flatten per-block stacks of shape (B, d, d) into real rows of shape (B, F)."""
    cols = []
    for blk, s in zip(spec.blocks, stacks):
        n = s.shape[0]
        if blk.is_torus:
            idx = np.arange(blk.size) * 2
            sub = np.stack([s[:, idx, idx], s[:, idx, idx + 1], s[:, idx + 1, idx], s[:, idx + 1, idx + 1]], axis=-1)
            cols.append(sub.reshape(n, -1))
        elif blk.is_complex:
            flat = s.reshape(n, -1)
            cols.append(flat.real)
            cols.append(flat.imag)
        else:
            cols.append(s.reshape(n, -1))
    return np.ascontiguousarray(np.concatenate(cols, axis=1))


# ---------------------------------------------------------------------------
# Lie algebra

class AlgebraElement:
    """Coordinates of a Lie algebra element in the fixed orthonormal basis."""

    __slots__ = ("spec", "coords")

    def __init__(self, spec: GroupSpec, coords):
        spec = GroupSpec.parse(spec)
        c = np.array(coords, dtype=float)
        if c.shape != (spec.alg_dim,):
            raise SpecMismatch(f"need {spec.alg_dim} coordinates, got {c.shape}")
        c.setflags(write=False)
        self.spec = spec
        self.coords = c

    @classmethod
    def zero(cls, spec):
        spec = GroupSpec.parse(spec)
        return cls(spec, np.zeros(spec.alg_dim))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def __add__(self, other):
        return AlgebraElement(self.spec, self.coords + other.coords)

    def __mul__(self, t):
        return AlgebraElement(self.spec, self.coords * float(t))

    __rmul__ = __mul__

    def block_matrices(self):
        out = []
        for blk, off in zip(self.spec.blocks, self.spec.alg_offsets):
            c = self.coords[off:off + blk.alg_dim]
            out.append(np.tensordot(c, block_basis(blk), axes=1))
        return out

    def __repr__(self):
        return f"AlgebraElement({self.spec}, {self.coords.tolist()})"


def algebra_coords(spec: GroupSpec, mats: Sequence[np.ndarray]) -> np.ndarray:
    out = []
    for blk, m in zip(spec.blocks, mats):
        out.append(np.real(np.einsum("kij,ij->k", block_basis(blk).conj(), m)))
    return np.concatenate(out)


def exp_map(x: AlgebraElement) -> GroupElement:
    blocks = []
    for blk, m, off in zip(x.spec.blocks, x.block_matrices(), x.spec.alg_offsets):
        if blk.is_torus:
            blocks.append(_torus_matrix(x.coords[off:off + blk.alg_dim] / math.sqrt(2.0)))
        else:
            blocks.append(linalg.expm(m))
    return GroupElement(x.spec, blocks, check=False)


def _eig_frame(m: np.ndarray):
    t, z = linalg.schur(m.astype(complex), output="complex")
    return np.angle(np.diag(t)), z


def log_map(g: GroupElement, cut: float | None = None) -> AlgebraElement:
    cut = tolerances().cut if cut is None else cut
    mats = []
    for blk, m in zip(g.spec.blocks, g.blocks):
        if blk.is_torus:
            ang = _torus_angles(m)
            if np.any(math.pi - np.abs(ang) < cut):
                raise CutLocusError("torus angle at pi")
            mats.append(np.tensordot(ang * math.sqrt(2.0), block_basis(blk), axes=1))
            continue
        theta, z = _eig_frame(m)
        if np.any(math.pi - np.abs(theta) < cut):
            raise CutLocusError(f"block {blk.name} has an eigenangle within {cut:g} of pi")
        lg = (z * (1j * theta)) @ z.conj().T
        if blk.is_complex:
            lg = 0.5 * (lg - lg.conj().T)
            lg = lg - np.trace(lg) / 2 * np.eye(2)
        else:
            lg = lg.real
            lg = 0.5 * (lg - lg.T)
        mats.append(lg)
    return AlgebraElement(g.spec, algebra_coords(g.spec, mats))


# ---------------------------------------------------------------------------
# Adjoint representation

def _block_adjoint(blk: Block, m: np.ndarray) -> np.ndarray:
    if blk.is_torus:
        return np.eye(blk.alg_dim)
    e = block_basis(blk)
    conj = m @ e @ m.conj().T
    return np.real(np.einsum("kij,lij->kl", e.conj(), conj))


@dataclass(frozen=True, eq=False)
class AdjointMatrix:
    """Matrix of X -> g X g^-1 in the fixed basis; block-diagonal by factor."""

    spec: GroupSpec
    matrix: np.ndarray

    def factor_blocks(self):
        out = []
        for i in self.spec.factors:
            off, n = self.spec.alg_offsets[i], self.spec.blocks[i].alg_dim
            out.append(self.matrix[off:off + n, off:off + n])
        return out

    def __matmul__(self, other: "AdjointMatrix") -> "AdjointMatrix":
        if self.spec != other.spec:
            raise SpecMismatch("adjoint matrices of different groups")
        return AdjointMatrix(self.spec, self.matrix @ other.matrix)


def adjoint(g: GroupElement) -> AdjointMatrix:
    mats = [_block_adjoint(b, m) for b, m in zip(g.spec.blocks, g.blocks)]
    return AdjointMatrix(g.spec, linalg.block_diag(*mats))


# ---------------------------------------------------------------------------
# Sampling

def _haar_block(blk: Block, rng: np.random.Generator) -> np.ndarray:
    if blk.is_torus:
        return _torus_matrix(rng.uniform(-math.pi, math.pi, size=blk.size))
    d = blk.dim
    if blk.is_complex:
        z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2.0)
    else:
        z = rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    q = q * (diag / np.abs(diag))
    det = np.linalg.det(q)
    # multiplying the first column by conj(det) keeps left invariance
    q[:, 0] = q[:, 0] * np.conj(det) if blk.is_complex else q[:, 0] * np.sign(det)
    return q


def haar_sample(spec, rng: np.random.Generator) -> GroupElement:
    spec = GroupSpec.parse(spec)
    return GroupElement(spec, [_haar_block(b, rng) for b in spec.blocks], check=False)


def haar_batch(spec, rng: np.random.Generator, count: int) -> list:
    return [haar_sample(spec, rng) for _ in range(count)]


def haar_rows(spec, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` Haar samples as flattened rows (vectorised version of haar_sample)."""
    spec = GroupSpec.parse(spec)
    cols = []
    for blk in spec.blocks:
        if blk.is_torus:
            ang = rng.uniform(-math.pi, math.pi, size=(count, blk.size))
            c, s = np.cos(ang), np.sin(ang)
            cols.append(np.stack([c, -s, s, c], axis=-1).reshape(count, -1))
            continue
        d = blk.dim
        if blk.is_complex:
            z = (rng.standard_normal((count, d, d)) + 1j * rng.standard_normal((count, d, d))) / math.sqrt(2.0)
        else:
            z = rng.standard_normal((count, d, d))
        q, r = np.linalg.qr(z)
        diag = np.diagonal(r, axis1=1, axis2=2)
        q = q * (diag / np.abs(diag))[:, None, :]
        det = np.linalg.det(q)
        q[:, :, 0] *= (np.conj(det) if blk.is_complex else np.sign(det))[:, None]
        flat = q.reshape(count, -1)
        cols.append(np.concatenate([flat.real, flat.imag], axis=1) if blk.is_complex else flat)
    return np.ascontiguousarray(np.concatenate(cols, axis=1))


def perturb(g: GroupElement, radius: float, rng: np.random.Generator) -> GroupElement:
    """Right-multiply by exp of a random algebra element of norm ``radius``.

    The result lies within ``radius`` of ``g``.
    """
    v = rng.standard_normal(g.spec.alg_dim)
    v *= radius / max(np.linalg.norm(v), 1e-300)
    return multiply(g, exp_map(AlgebraElement(g.spec, v)))


# ---------------------------------------------------------------------------
# Structural predicates

def is_regular(g: GroupElement, tol: float | None = None) -> bool:
    tol = tolerances().rank if tol is None else tol
    for i in g.spec.factors:
        blk = g.spec.blocks[i]
        ad = _block_adjoint(blk, g.blocks[i])
        sv = np.linalg.svd(ad - np.eye(blk.alg_dim), compute_uv=False)
        if int(np.sum(sv <= tol)) != blk.rank:
            return False
    return True


@dataclass(frozen=True)
class NonTorsionUpTo:
    """No power g^q with q <= qmax is within tolerance of the identity."""

    qmax: int

    def __bool__(self):
        return False


def eigen_angles(g: GroupElement) -> np.ndarray:
    """Arguments of all eigenvalues of all blocks."""
    out = []
    for blk, m in zip(g.spec.blocks, g.blocks):
        if blk.is_torus:
            a = _torus_angles(m)
            out.extend([a, -a])
        else:
            out.append(np.angle(np.linalg.eigvals(m)))
    return np.concatenate(out)


def orders_from_angles(angles: np.ndarray, qmax: int, tol: float | None = None) -> np.ndarray:
    """Least q <= qmax with d(g^q, 1) <= tol for each row of eigenangles; 0 if none.

    For a unitary g with eigenangles theta_j, ``d(g^q, 1)^2 = sum_j 4 sin^2(q theta_j / 2)``.
    """
    tol = tolerances().torsion if tol is None else tol
    angles = np.atleast_2d(angles)
    out = np.zeros(angles.shape[0], dtype=int)
    qs = np.arange(1, qmax + 1, dtype=float)
    chunk = max(1, 4_000_000 // max(1, qmax * angles.shape[1]))
    for s in range(0, angles.shape[0], chunk):
        a = angles[s:s + chunk]
        d2 = np.sum(4.0 * np.sin(0.5 * qs[None, :, None] * a[:, None, :]) ** 2, axis=2)
        hit = d2 <= tol * tol
        any_hit = hit.any(axis=1)
        first = np.argmax(hit, axis=1) + 1
        out[s:s + chunk] = np.where(any_hit, first, 0)
    return out


def torsion_order(g: GroupElement, qmax: int, tol: float | None = None):
    """Least q <= qmax with g^q = 1 within tolerance, else ``NonTorsionUpTo(qmax)``."""
    if qmax < 1:
        raise InputError("qmax must be >= 1")
    q = int(orders_from_angles(eigen_angles(g), qmax, tol)[0])
    return q if q > 0 else NonTorsionUpTo(qmax)


def is_torsion(g: GroupElement, qmax: int, tol: float | None = None) -> bool:
    return not isinstance(torsion_order(g, qmax, tol), NonTorsionUpTo)


def _round_turn(theta: float, qmax: int) -> Fraction:
    return Fraction(theta / (2 * math.pi)).limit_denominator(qmax)


def torus_frame(m: np.ndarray, blk: Block):
    """Frame and angles of a non-torus block: m = Z D Z^H with D in the standard torus.

    Returns (Z, blocks) where ``blocks`` lists ``("rot", angle)`` for 2x2 planes and
    ``("fix", sign)`` for 1x1 entries (real case), or ``("eig", angle)`` for SU(2).
    """
    if blk.is_complex:
        t, z = linalg.schur(m, output="complex")
        return z, [("eig", float(np.angle(t[0, 0])))]
    t, z = linalg.schur(m, output="real")
    parts, i, k = [], 0, m.shape[0]
    while i < k:
        if i + 1 < k and t[i + 1, i] != 0.0:
            ang = math.atan2(0.5 * (t[i + 1, i] - t[i, i + 1]), 0.5 * (t[i, i] + t[i + 1, i + 1]))
            parts.append(("rot", ang))
            i += 2
        else:
            parts.append(("fix", 1.0 if t[i, i] > 0 else -1.0))
            i += 1
    return z, parts


def torus_compose(z: np.ndarray, parts, blk: Block) -> np.ndarray:
    """Inverse of :func:`torus_frame`."""
    if blk.is_complex:
        th = parts[0][1]
        return (z * np.exp(1j * np.array([th, -th]))) @ z.conj().T
    d = np.zeros((blk.dim, blk.dim))
    i = 0
    for kind, val in parts:
        if kind == "rot":
            d[i:i + 2, i:i + 2] = _rot2(val)
            i += 2
        else:
            d[i, i] = val
            i += 1
    return z @ d @ z.T


def rationalize(g: GroupElement, qmax: int):
    """Round every torus angle of ``g`` to p/q turns with q <= qmax.

    Returns ``(element, order)`` where ``order`` is the lcm of the denominators.
    """
    order = 1
    blocks = []
    for blk, m in zip(g.spec.blocks, g.blocks):
        if blk.is_torus:
            fr = [_round_turn(a, qmax) for a in _torus_angles(m)]
            order = math.lcm(order, *(f.denominator for f in fr))
            blocks.append(_torus_matrix([2 * math.pi * float(f) for f in fr]))
            continue
        z, parts = torus_frame(m, blk)
        new = []
        for kind, val in parts:
            if kind == "fix":
                order = math.lcm(order, 1 if val > 0 else 2)
                new.append((kind, val))
            else:
                f = _round_turn(val, qmax)
                order = math.lcm(order, f.denominator)
                new.append((kind, 2 * math.pi * float(f)))
        blocks.append(torus_compose(z, new, blk))
    return GroupElement(g.spec, blocks, check=False), order


def torsion_project(g: GroupElement, qmax: int) -> GroupElement:
    """Nearest torsion element of g's maximal torus with rational angles of denominator <= qmax."""
    if not is_regular(g):
        raise NotRegularError("torsion_project needs a regular element")
    return rationalize(g, qmax)[0]


def projection_bound(spec, qmax: int) -> float:
    """Upper bound on d(g, torsion_project(g, qmax)).

    Each rotation plane moves by at most pi/qmax in angle, i.e. by at most
    ``2 sqrt(2) sin(pi / (2 qmax))`` in Frobenius norm.
    """
    spec = GroupSpec.parse(spec)
    return 2.0 * math.sqrt(2.0) * math.sin(math.pi / (2 * qmax)) * math.sqrt(spec.rank)


def project_to_factor(g: GroupElement, i: int) -> GroupElement:
    if not 0 <= i < g.spec.p:
        raise IndexError(f"factor index {i} out of range for {g.spec}")
    j = g.spec.factors[i]
    return GroupElement(g.spec.factor_spec(i), [g.blocks[j]], check=False)


def torus_part(g: GroupElement) -> np.ndarray:
    """Angles (radians) of all circle factors of the torus blocks."""
    if not g.spec.torus_blocks:
        return np.zeros(0)
    return np.concatenate([_torus_angles(g.blocks[i]) for i in g.spec.torus_blocks])


# ---------------------------------------------------------------------------
# Convenience constructors

def so3_rotation(axis, angle: float) -> GroupElement:
    """Rotation of SO(3) about ``axis`` ('x', 'y', 'z' or a 3-vector) by ``angle``."""
    if isinstance(axis, str):
        axis = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis]
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    r = np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
    return GroupElement(GroupSpec.parse("so3"), [r], check=False)


def from_matrices(spec, blocks) -> GroupElement:
    return GroupElement(GroupSpec.parse(spec), blocks)


# ---------------------------------------------------------------------------
# JSON

def _encode_matrix(m: np.ndarray, complex_: bool):
    if complex_:
        return [[float(v.real), float(v.imag)] for v in m.ravel()]
    return [float(v) for v in m.ravel()]


def encode_element(g: GroupElement, with_spec: bool = True) -> dict:
    data = {"entries": [_encode_matrix(m, b.is_complex) for b, m in zip(g.spec.blocks, g.blocks)]}
    if with_spec:
        data = {"spec": g.spec.to_dict(), **data}
    return data


def decode_element(data: dict, spec=None, check: bool = True) -> GroupElement:
    if "spec" in data:
        s = GroupSpec.from_dict(data["spec"])
        if spec is not None and GroupSpec.parse(spec) != s:
            raise SpecMismatch(f"element spec {s} does not match {spec}")
        spec = s
    if spec is None:
        raise InputError("element has no spec")
    spec = GroupSpec.parse(spec)
    entries = data["entries"]
    if len(entries) != len(spec.blocks):
        raise InputError(f"expected {len(spec.blocks)} blocks of entries")
    blocks = []
    for blk, ent in zip(spec.blocks, entries):
        arr = np.array(ent, dtype=float)
        if blk.is_complex:
            if arr.shape != (blk.dim ** 2, 2):
                raise InputError("complex entries must be [re, im] pairs")
            arr = arr[:, 0] + 1j * arr[:, 1]
        if arr.size != blk.dim ** 2:
            raise InputError(f"block {blk.name} needs {blk.dim ** 2} entries")
        blocks.append(arr.reshape(blk.dim, blk.dim))
    return GroupElement(spec, blocks, check=check)


# ---------------------------------------------------------------------------
# Batched arithmetic on flattened rows (see ``flatten_blocks`` for the layout)

def _slices(spec: GroupSpec):
    return [(blk, off, off + blk.flat_size) for blk, off in zip(spec.blocks, spec.flat_offsets)]


def _as_mats(blk: Block, a: np.ndarray) -> np.ndarray:
    d = blk.dim
    if blk.is_complex:
        h = d * d
        return (a[..., :h] + 1j * a[..., h:]).reshape(a.shape[:-1] + (d, d))
    return a.reshape(a.shape[:-1] + (d, d))


def _from_mats(blk: Block, m: np.ndarray) -> np.ndarray:
    flat = m.reshape(m.shape[:-2] + (-1,))
    if blk.is_complex:
        return np.concatenate([flat.real, flat.imag], axis=-1)
    return flat


def flat_mul(spec: GroupSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise products of flattened elements; ``a`` and ``b`` broadcast."""
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.empty(shape)
    for blk, lo, hi in _slices(spec):
        x, y = a[..., lo:hi], b[..., lo:hi]
        if blk.is_torus:
            c1, s1 = x[..., 0::4], x[..., 2::4]
            c2, s2 = y[..., 0::4], y[..., 2::4]
            c, s = c1 * c2 - s1 * s2, s1 * c2 + c1 * s2
            out[..., lo:hi][..., 0::4] = c
            out[..., lo:hi][..., 1::4] = -s
            out[..., lo:hi][..., 2::4] = s
            out[..., lo:hi][..., 3::4] = c
        else:
            out[..., lo:hi] = _from_mats(blk, np.matmul(_as_mats(blk, x), _as_mats(blk, y)))
    return out


def flat_inv(spec: GroupSpec, a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    for blk, lo, hi in _slices(spec):
        x = a[..., lo:hi]
        if blk.is_torus:
            out[..., lo:hi] = x
            out[..., lo:hi][..., 1::4] = x[..., 2::4]
            out[..., lo:hi][..., 2::4] = x[..., 1::4]
        else:
            m = _as_mats(blk, x)
            out[..., lo:hi] = _from_mats(blk, np.swapaxes(m, -1, -2).conj())
    return out


def flat_identity(spec: GroupSpec) -> np.ndarray:
    return GroupElement.identity(spec).flat()


def unflatten(spec: GroupSpec, row: np.ndarray, *, check: bool = False) -> GroupElement:
    blocks = []
    for blk, lo, hi in _slices(spec):
        x = row[lo:hi]
        if blk.is_torus:
            m = np.zeros((blk.dim, blk.dim))
            for c in range(blk.size):
                m[2 * c:2 * c + 2, 2 * c:2 * c + 2] = x[4 * c:4 * c + 4].reshape(2, 2)
            blocks.append(m)
        else:
            blocks.append(_as_mats(blk, x))
    return GroupElement(spec, blocks, check=check)


def block_stack(spec: GroupSpec, rows: np.ndarray, i: int) -> np.ndarray:
    """Matrices of block ``i`` for every flattened row, shape (N, d, d)."""
    blk, lo, hi = _slices(spec)[i]
    if blk.is_torus:
        n = rows.shape[0]
        m = np.zeros((n, blk.dim, blk.dim))
        for c in range(blk.size):
            m[:, 2 * c:2 * c + 2, 2 * c:2 * c + 2] = rows[:, lo + 4 * c:lo + 4 * c + 4].reshape(n, 2, 2)
        return m
    return _as_mats(blk, rows[:, lo:hi])
