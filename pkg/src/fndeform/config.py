"""Numerical thresholds shared by every module.

All defaults live in one frozen block so that the CLI can override them from a
JSON file and echo the resolved values into experiment manifests.
"""
from __future__ import annotations

import contextlib
import contextvars
import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    orth: float = 1e-10       # orthogonality residual of stored blocks
    rank: float = 1e-8        # singular-value cutoff for rank decisions
    torsion: float = 1e-8     # d(g^q, 1) below which g^q counts as trivial
    cut: float = 1e-6         # minimum gap of eigenangles from pi for log
    newton: float = 1e-10     # Gauss-Newton stopping residual
    relation: float = 1e-6    # integer-relation tolerance (Z^2 reports)
    abelian: float = 1e-12    # integer-relation tolerance (torus density)
    replay: float = 1e-8      # per-move replay tolerance
    tie: float = 1e-12        # distances closer than this are ties
    l_cert: int = 4           # word length searched for non-torsion witnesses

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**data)


_current = contextvars.ContextVar("fndeform_tolerances", default=Tolerances())


def tolerances() -> Tolerances:
    return _current.get()


@contextlib.contextmanager
def use_tolerances(tol: Tolerances):
    token = _current.set(tol)
    try:
        yield tol
    finally:
        _current.reset(token)
