"""Random Nielsen walks on G^n and equidistribution statistics.

The walk applies uniformly chosen elementary moves to an n-tuple:
L_{i,j}^{+-1} (g_i <- g_j^{+-1} g_i), R_{i,j}^{+-1} (g_i <- g_i g_j^{+-1}), entry
inversions and transpositions.  Every ``thinning`` steps after ``burn_in`` it
records low-degree character statistics whose Haar expectations are known from
Weyl-integration quadrature.  The restricted walk only uses L_{2,1}^{+-1} and
L_{3,1}^{+-1}, so coordinates 2 and 3 stay fixed and the first coordinate
performs the left-translation walk of <g_2, g_3>.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .algebra import generates_algebra
from .errors import InputError
from .groups import GroupElement, GroupSpec, is_torsion, project_to_factor

RENORMALIZE_EVERY = 10       # products of entries compound rounding errors quickly


# ---------------------------------------------------------------------------
# Y-membership

def y_membership(entries, qmax: int) -> bool:
    """Every (n-1)-subtuple generates the algebra and every entry is non-torsion in every factor."""
    entries = list(entries)
    if len(entries) < 3:
        raise InputError("y_membership needs n >= 3")
    spec = entries[0].spec
    if not spec.semisimple:
        raise InputError("y_membership needs a semisimple group")
    for g in entries:
        for i in range(spec.p):
            if is_torsion(project_to_factor(g, i), qmax):
                return False
    for k in range(len(entries)):
        if not generates_algebra(entries[:k] + entries[k + 1:]):
            return False
    return True


# ---------------------------------------------------------------------------
# Configuration and statistics

@dataclass
class WalkConfig:
    spec: GroupSpec
    n: int
    steps: int
    burn_in: int | None = None
    thinning: int = 10
    seed: int = 0
    restricted: bool = False
    qmax: int = 200
    keep_samples: bool = False

    def __post_init__(self):
        self.spec = GroupSpec.parse(self.spec)
        if self.burn_in is None:
            self.burn_in = self.steps // 10
        if self.n < 3:
            raise InputError("walks need n >= 3")
        if self.burn_in < 0 or self.steps <= self.burn_in:
            raise InputError("need steps > burn_in >= 0")
        if self.thinning < 1:
            raise InputError("thinning must be >= 1")

    def to_dict(self):
        return {"spec": str(self.spec), "n": self.n, "steps": self.steps, "burn_in": self.burn_in,
                "thinning": self.thinning, "seed": self.seed, "restricted": self.restricted,
                "qmax": self.qmax, "keep_samples": self.keep_samples}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def stat_names(n: int) -> list:
    names = [f"tr[{i}]" for i in range(n)] + [f"tr2[{i}]" for i in range(n)]
    names += [f"retr[{i},{j}]" for i in range(n) for j in range(i + 1, n)]
    return names


@dataclass
class WalkStats:
    """Sums of the tracked test functions; means are sums / count."""

    config: WalkConfig
    names: list
    sums: np.ndarray
    count: int = 0
    moves_applied: int = 0
    start_in_y: bool = True
    y_checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    samples: np.ndarray | None = None

    @property
    def means(self) -> dict:
        if not self.count:
            return {k: None for k in self.names}
        return {k: float(v / self.count) for k, v in zip(self.names, self.sums)}

    def merge(self, other: "WalkStats") -> "WalkStats":
        """Pool two runs (sums add; the result keeps this run's config)."""
        if self.names != other.names:
            raise InputError("cannot merge statistics of different shapes")
        return WalkStats(self.config, list(self.names), self.sums + other.sums, self.count + other.count,
                         self.moves_applied + other.moves_applied, self.start_in_y and other.start_in_y,
                         self.y_checks + other.y_checks, self.warnings + other.warnings)

    def to_dict(self):
        return {"config": self.config.to_dict(), "count": self.count, "moves_applied": self.moves_applied,
                "means": self.means, "sums": [float(v) for v in self.sums], "seed": self.config.seed,
                "start_in_y": self.start_in_y, "y_checks": self.y_checks, "warnings": self.warnings}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample"] + self.names)
        if self.samples is not None:
            for k, row in enumerate(self.samples):
                w.writerow([k] + [repr(float(v)) for v in row])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Walk engine

def _move_table(n: int, restricted: bool) -> np.ndarray:
    """Rows (kind, i, j, sign); kind 0 = left, 1 = right, 2 = invert, 3 = swap."""
    if restricted:
        return np.array([(0, 0, j, s) for j in (1, 2) for s in (1, -1)], dtype=np.int64)
    rows = []
    for i in range(n):
        for j in range(n):
            if i != j:
                rows += [(0, i, j, 1), (0, i, j, -1), (1, i, j, 1), (1, i, j, -1)]
    rows += [(2, i, 0, 1) for i in range(n)]
    rows += [(3, i, j, 1) for i in range(n) for j in range(i + 1, n)]
    return np.array(rows, dtype=np.int64)


class _State:
    """Tuple stored as one stack of matrices per block."""

    def __init__(self, entries):
        self.spec = entries[0].spec
        self.stacks = [np.array([g.blocks[b] for g in entries]) for b in range(len(self.spec.blocks))]

    def apply(self, kind, i, j, sign):
        for s in self.stacks:
            if kind == 0:
                m = s[j] if sign > 0 else s[j].conj().T
                s[i] = m @ s[i]
            elif kind == 1:
                m = s[j] if sign > 0 else s[j].conj().T
                s[i] = s[i] @ m
            elif kind == 2:
                s[i] = s[i].conj().T.copy()
            else:
                s[[i, j]] = s[[j, i]]

    def renormalize(self):
        for s in self.stacks:
            u, _, vh = np.linalg.svd(s)
            q = u @ vh
            if np.iscomplexobj(q):
                q = q / np.sqrt(np.linalg.det(q))[:, None, None]
            s[...] = q

    def element(self, k) -> GroupElement:
        return GroupElement(self.spec, [s[k] for s in self.stacks], check=False)

    def entries(self):
        return [self.element(k) for k in range(len(self.stacks[0]))]

    def observe(self, n) -> np.ndarray:
        tr = sum(np.real(np.trace(s, axis1=1, axis2=2)) for s in self.stacks)
        pairs = [sum(np.real(np.trace(s[i] @ s[j])) for s in self.stacks)
                 for i in range(n) for j in range(i + 1, n)]
        return np.concatenate([tr, tr ** 2, np.array(pairs)])


def run_walk(cfg: WalkConfig, start) -> WalkStats:
    """Random Nielsen walk from ``start`` with statistics every ``thinning`` steps after burn-in."""
    start = list(start)
    if len(start) != cfg.n:
        raise InputError(f"start tuple has {len(start)} entries, config says n = {cfg.n}")
    if any(g.spec != cfg.spec for g in start):
        raise InputError("start tuple is not in the configured group")
    names = stat_names(cfg.n)
    stats = WalkStats(cfg, names, np.zeros(len(names)))
    in_y = cfg.spec.semisimple and y_membership(start, cfg.qmax)
    stats.start_in_y = bool(in_y)
    if not in_y:
        stats.warnings.append("start tuple fails the Y-membership test")
    rng = np.random.default_rng(cfg.seed)
    table = _move_table(cfg.n, cfg.restricted)
    picks = rng.integers(0, len(table), size=cfg.steps)
    state = _State(start)
    checkpoints = set(np.linspace(0, cfg.steps, 6, dtype=int)[1:].tolist()) if cfg.spec.semisimple else set()
    rows = []
    for step in range(1, cfg.steps + 1):
        kind, i, j, sign = table[picks[step - 1]]
        state.apply(kind, i, j, sign)
        if step % RENORMALIZE_EVERY == 0:
            state.renormalize()
        if step > cfg.burn_in and (step - cfg.burn_in) % cfg.thinning == 0:
            obs = state.observe(cfg.n)
            stats.sums += obs
            stats.count += 1
            if cfg.keep_samples:
                rows.append(obs)
        if step in checkpoints:
            ok = y_membership(state.entries(), cfg.qmax)
            stats.y_checks.append([step, bool(ok)])
            if not ok:
                stats.warnings.append(f"tuple left the Y test at step {step}")
    stats.moves_applied = cfg.steps
    if cfg.keep_samples:
        stats.samples = np.array(rows).reshape(-1, len(names))
    return stats


def left_translation_walk(x: GroupElement, gens, steps: int, burn_in: int, thinning: int, seed: int) -> dict:
    """Direct walk x <- h x, h uniform in gens and their inverses.

    Returns the means of tr(x), tr(x)^2 and tr(x g_k) for each generator, keyed
    like the first-coordinate statistics of a restricted Nielsen walk with
    start (x, g_1, g_2, ...).
    """
    base = [g.matrix() for g in gens]
    mats = [m for g in base for m in (g, g.conj().T)]
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(mats), size=steps)
    cur = x.matrix()
    sums = np.zeros(2 + len(base))
    count = 0
    for step in range(1, steps + 1):
        cur = mats[picks[step - 1]] @ cur
        if step % RENORMALIZE_EVERY == 0:
            u, _, vh = np.linalg.svd(cur)
            cur = u @ vh
            if np.iscomplexobj(cur):
                cur = cur / np.sqrt(np.linalg.det(cur))
        if step > burn_in and (step - burn_in) % thinning == 0:
            t = float(np.real(np.trace(cur)))
            sums[0] += t
            sums[1] += t * t
            for k, g in enumerate(base):
                sums[2 + k] += float(np.real(np.trace(cur @ g)))
            count += 1
    keys = ["tr[0]", "tr2[0]"] + [f"retr[0,{k + 1}]" for k in range(len(base))]
    out = {k: float(v / count) if count else None for k, v in zip(keys, sums)}
    out["count"] = count
    return out


# ---------------------------------------------------------------------------
# Haar oracles by Weyl integration

def haar_trace_moment(name: str, power: int) -> float:
    """E[tr(g)^power] under Haar measure on SO(3) or SU(2), by quadrature over the class angle."""
    if name == "so3":
        f = lambda t: (1 + 2 * math.cos(t)) ** power * (1 - math.cos(t)) / math.pi
    elif name == "su2":
        f = lambda t: (2 * math.cos(t)) ** power * 2 * math.sin(t) ** 2 / math.pi
    else:
        raise InputError(f"no quadrature oracle for {name}")
    return float(integrate.quad(f, 0.0, math.pi, epsabs=1e-13, epsrel=1e-13)[0])


def haar_expectations(cfg: WalkConfig) -> dict:
    """Haar values of the tracked statistics for a single simple block group."""
    name = str(cfg.spec)
    m1, m2 = haar_trace_moment(name, 1), haar_trace_moment(name, 2)
    out = {}
    for k in stat_names(cfg.n):
        out[k] = m1 if k.startswith("tr[") else m2 if k.startswith("tr2[") else 0.0
    return out


# ---------------------------------------------------------------------------
# Orbit density probe

def orbit_density_probe(start, targets, steps: int, seed: int = 0) -> list:
    """For each target tuple, the least max-coordinate distance seen along a random walk
    and along a greedy steering walk (best of the two).

    Each walk draws from its own child stream of ``seed``, so a longer probe
    extends a shorter one and the result is non-increasing in ``steps``.
    """
    start = list(start)
    n = len(start)
    if n < 3:
        raise InputError("walks need n >= 3")
    table = _move_table(n, False)
    streams = np.random.SeedSequence(seed).spawn(2 * len(targets))
    out = []
    for k, target in enumerate(targets):
        walk_rng = np.random.default_rng(streams[2 * k])
        greedy_rng = np.random.default_rng(streams[2 * k + 1])
        target = list(target)
        tstack = [np.array([t.blocks[b] for t in target]) for b in range(len(start[0].spec.blocks))]

        def dist(state):
            d2 = sum(np.sum(np.abs(s - t) ** 2, axis=(1, 2)) for s, t in zip(state.stacks, tstack))
            return float(np.sqrt(d2.max()))

        # random walk
        state = _State(start)
        best = dist(state)
        for step, pick in enumerate(walk_rng.integers(0, len(table), size=steps), 1):
            state.apply(*table[pick])
            if step % RENORMALIZE_EVERY == 0:
                state.renormalize()
            best = min(best, dist(state))
        # greedy steering with random tie-breaks
        state = _State(start)
        gbest = dist(state)
        for step in range(1, steps + 1):
            scores = []
            for row in table:
                trial = _State.__new__(_State)
                trial.spec = state.spec
                trial.stacks = [s.copy() for s in state.stacks]
                trial.apply(*row)
                scores.append(dist(trial))
            scores = np.array(scores)
            ties = np.nonzero(scores <= scores.min() + 1e-12)[0]
            state.apply(*table[ties[greedy_rng.integers(0, len(ties))]])
            if step % RENORMALIZE_EVERY == 0:
                state.renormalize()
            gbest = min(gbest, dist(state))
        out.append(min(best, gbest))
    return out
