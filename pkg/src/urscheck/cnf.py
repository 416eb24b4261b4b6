"""CNF formulae, assignments and samples.

Formulae are immutable; clauses are stored as sorted tuples of signed
literals, with duplicates and tautologies removed at construction.
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

Model = tuple  # tuple[bool, ...], position i holds the value of variable i+1
Source = Union[str, bytes]


class DimacsError(ValueError):
    """Malformed DIMACS input. ``line`` is 1-based, or None if not attributable."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimacsWarning(UserWarning):
    pass


def _normalize_clause(lits: Iterable[int]) -> tuple[int, ...] | None:
    """Sorted, deduplicated clause; None if tautological."""
    s = set(lits)
    if any(-l in s for l in s):
        return None
    return tuple(sorted(s, key=lambda l: (abs(l), l)))


@dataclass(frozen=True)
class CnfFormula:
    num_vars: int
    clauses: tuple[tuple[int, ...], ...]
    name: str = ""

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be non-negative")
        norm = []
        for c in self.clauses:
            if not c:
                raise ValueError("empty clause")
            for l in c:
                if l == 0 or abs(l) > self.num_vars:
                    raise ValueError(f"literal {l} out of range")
            nc = _normalize_clause(c)
            if nc is not None:
                norm.append(nc)
        object.__setattr__(self, "clauses", tuple(norm))

    @classmethod
    def from_clauses(cls, num_vars: int, clauses: Iterable[Iterable[int]], name: str = ""):
        return cls(num_vars, tuple(tuple(c) for c in clauses), name)

    @property
    def variables(self) -> range:
        return range(1, self.num_vars + 1)

    def clause_set(self) -> frozenset:
        """Order-insensitive view used for structural equality."""
        return frozenset(self.clauses)

    def same_structure(self, other: "CnfFormula") -> bool:
        return self.num_vars == other.num_vars and self.clause_set() == other.clause_set()


def parse_dimacs(text: Source, name: str = "") -> CnfFormula:
    """Parse DIMACS CNF.

    Tautological clauses and duplicate literals are dropped with a
    ``DimacsWarning``; a header/body clause count mismatch is also only a
    warning. Any structural problem raises ``DimacsError`` naming the line.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")

    num_vars = None
    declared = None
    clauses: list[tuple[int, ...]] = []
    current: list[int] = []
    current_start = 0
    dropped_taut = 0
    deduped = 0
    lineno = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            # end marker used by SATLIB files
            break
        if line.startswith("p"):
            if num_vars is not None:
                raise DimacsError("duplicate header", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"invalid header {line!r}", lineno)
            try:
                num_vars, declared = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"invalid header {line!r}", lineno) from None
            if num_vars < 0 or declared < 0:
                raise DimacsError(f"invalid header {line!r}", lineno)
            continue
        if num_vars is None:
            raise DimacsError("clause before 'p cnf' header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"invalid token {tok!r}", lineno) from None
            if lit == 0:
                if not current:
                    raise DimacsError("empty clause", lineno)
                nc = _normalize_clause(current)
                if nc is None:
                    dropped_taut += 1
                else:
                    if len(nc) != len(current):
                        deduped += 1
                    clauses.append(nc)
                current = []
                continue
            if abs(lit) > num_vars:
                raise DimacsError(f"literal {lit} out of range", lineno)
            if not current:
                current_start = lineno
            current.append(lit)

    if num_vars is None:
        raise DimacsError("missing 'p cnf' header")
    if current:
        raise DimacsError("unterminated final clause", current_start)

    if dropped_taut:
        warnings.warn(f"removed {dropped_taut} tautological clause(s)", DimacsWarning, stacklevel=2)
    if deduped:
        warnings.warn(f"deduplicated literals in {deduped} clause(s)", DimacsWarning, stacklevel=2)
    actual = len(clauses) + dropped_taut
    if actual != declared:
        warnings.warn(
            f"header declares {declared} clauses, found {actual}", DimacsWarning, stacklevel=2
        )
    return CnfFormula(num_vars, tuple(clauses), name)


def read_dimacs(path) -> CnfFormula:
    p = Path(path)
    return parse_dimacs(p.read_bytes(), name=p.stem)


def write_dimacs(f: CnfFormula) -> bytes:
    lines = [f"p cnf {f.num_vars} {len(f.clauses)}"]
    lines += [" ".join(map(str, c)) + " 0" for c in f.clauses]
    return ("\n".join(lines) + "\n").encode("ascii")


def satisfies(f: CnfFormula, m: Sequence[bool]) -> bool:
    if len(m) != f.num_vars:
        raise ValueError(f"model has length {len(m)}, formula has {f.num_vars} variables")
    for c in f.clauses:
        if not any(bool(m[l - 1]) if l > 0 else not m[-l - 1] for l in c):
            return False
    return True


def condition(f: CnfFormula, lit: int) -> CnfFormula:
    """Fix ``Var(lit)`` to the sign of ``lit`` by appending a unit clause."""
    if lit == 0 or abs(lit) > f.num_vars:
        raise ValueError(f"literal {lit} out of range")
    return CnfFormula(f.num_vars, f.clauses + ((lit,),), f.name)


def clause_arrays(f: CnfFormula) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-clause (positive var indices, negative var indices), 0-based."""
    out = []
    for c in f.clauses:
        pos = np.array([l - 1 for l in c if l > 0], dtype=np.intp)
        neg = np.array([-l - 1 for l in c if l < 0], dtype=np.intp)
        out.append((pos, neg))
    return out


def satisfied_rows(f: CnfFormula, bits: np.ndarray) -> np.ndarray:
    """Vectorized ``satisfies`` over the rows of an (N, num_vars) boolean matrix."""
    bits = np.asarray(bits, dtype=bool)
    ok = np.ones(bits.shape[0], dtype=bool)
    for pos, neg in clause_arrays(f):
        sat = np.zeros(bits.shape[0], dtype=bool)
        if pos.size:
            sat |= bits[:, pos].any(axis=1)
        if neg.size:
            sat |= ~bits[:, neg].all(axis=1)
        ok &= sat
    return ok


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Map each assignment row to its integer key, variable 1 most significant.

    Key order equals lexicographic order of the bit vectors (False < True).
    int64 for up to 63 variables, Python ints (object array) beyond.
    """
    bits = np.asarray(bits, dtype=bool)
    n = bits.shape[1]
    if n <= 63:
        weights = np.int64(1) << np.arange(n - 1, -1, -1, dtype=np.int64)
        return bits.astype(np.int64) @ weights
    keys = np.empty(bits.shape[0], dtype=object)
    for r, row in enumerate(bits):
        keys[r] = int("".join("1" if x else "0" for x in row), 2)
    return keys


def unpack_keys(keys: np.ndarray, n: int) -> np.ndarray:
    keys = np.asarray(keys)
    if n <= 63:
        shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
        return ((keys.astype(np.int64)[:, None] >> shifts) & 1).astype(bool)
    out = np.zeros((len(keys), n), dtype=bool)
    for r, k in enumerate(keys):
        k = int(k)
        for i in range(n):
            out[r, i] = (k >> (n - 1 - i)) & 1
    return out


@dataclass(frozen=True, eq=False)
class Sample:
    """Ordered multiset of assignments, stored as an (N, num_vars) bool matrix."""

    bits: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise ValueError("sample matrix must be 2-D")
        b = b.copy()
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @classmethod
    def from_models(cls, models: Iterable[Sequence[bool]], num_vars: int | None = None, **info):
        rows = [tuple(bool(x) for x in m) for m in models]
        if not rows:
            if num_vars is None:
                raise ValueError("num_vars required for an empty sample")
            return cls(np.zeros((0, num_vars), dtype=bool), info)
        return cls(np.array(rows, dtype=bool).reshape(len(rows), -1), info)

    @classmethod
    def concat(cls, parts: Sequence["Sample"], num_vars: int) -> "Sample":
        if not parts:
            return cls(np.zeros((0, num_vars), dtype=bool))
        return cls(np.concatenate([p.bits for p in parts], axis=0))

    def __len__(self) -> int:
        return self.bits.shape[0]

    @property
    def num_vars(self) -> int:
        return self.bits.shape[1]

    @property
    def models(self) -> list[Model]:
        return [tuple(bool(x) for x in row) for row in self.bits]

    @cached_property
    def keys(self) -> np.ndarray:
        return pack_rows(self.bits)

    @property
    def multiplicities(self) -> Counter:
        return Counter(self.models)

    def weights(self) -> np.ndarray:
        """Number of true variables in each sampled model."""
        return self.bits.sum(axis=1)
