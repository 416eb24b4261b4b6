"""Exact model counting.

``count_spectrum`` computes, for every k, the number of models with exactly
k variables set to true. The engine is a DPLL-style recursion: unit
propagation, split into variable-disjoint components, branch on one
variable per component and cache component spectra. Pure-literal
elimination is never used since it changes counts.
"""

from __future__ import annotations

import sys
from collections.abc import Sequence
from dataclasses import dataclass
from math import comb

import numpy as np

from .cnf import CnfFormula, Model, condition, pack_rows, unpack_keys

DEFAULT_ENUMERATION_CAP = 2**20


class CountingBudgetExceeded(RuntimeError):
    def __init__(self, budget: int):
        super().__init__(f"counting budget exhausted ({budget} decisions)")


class EnumerationCapExceeded(RuntimeError):
    def __init__(self, total: int, cap: int):
        self.total = total
        self.cap = cap
        super().__init__(f"enumeration cap exceeded ({total} > {cap})")


@dataclass(frozen=True)
class SolutionSpectrum:
    counts: tuple[int, ...]

    @property
    def num_vars(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def c_even(self) -> int:
        return sum(self.counts[0::2])

    @property
    def c_uneven(self) -> int:
        return sum(self.counts[1::2])

    def to_json(self) -> dict:
        # counts can exceed 2**53, keep them exact as strings in JSON
        return {
            "counts": [str(c) for c in self.counts],
            "total": str(self.total),
            "c_even": str(self.c_even),
            "c_uneven": str(self.c_uneven),
        }


@dataclass(frozen=True)
class MarginalTable:
    """``true_counts[v - 1]`` is the number of models with variable v true."""

    true_counts: tuple[int, ...]
    total: int

    @property
    def num_vars(self) -> int:
        return len(self.true_counts)

    def true_count(self, v: int) -> int:
        return self.true_counts[v - 1]

    def false_count(self, v: int) -> int:
        return self.total - self.true_counts[v - 1]

    @property
    def constant_vars(self) -> frozenset[int]:
        return frozenset(
            v for v, t in enumerate(self.true_counts, start=1) if t == 0 or t == self.total
        )

    def to_json(self) -> dict:
        return {
            "true_counts": [str(c) for c in self.true_counts],
            "total": str(self.total),
            "constant_vars": sorted(self.constant_vars),
        }


def _assign(clauses, lit):
    """Simplify under ``lit`` = true. None on conflict."""
    out = []
    for c in clauses:
        if lit in c:
            continue
        if -lit in c:
            c = tuple(l for l in c if l != -lit)
            if not c:
                return None
        out.append(c)
    return out


def _binomial_row(n: int) -> list[int]:
    return [comb(n, k) for k in range(n + 1)]


def _convolve(a: list[int], b: list[int]) -> list[int]:
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def _components(clauses):
    parent: dict[int, int] = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in clauses:
        vs = [abs(l) for l in c]
        for v in vs:
            parent.setdefault(v, v)
        r0 = find(vs[0])
        for v in vs[1:]:
            r = find(v)
            if r != r0:
                parent[r] = r0
    groups: dict[int, tuple[list, set]] = {}
    for c in clauses:
        root = find(abs(c[0]))
        cl, vs = groups.setdefault(root, ([], set()))
        cl.append(c)
        vs.update(abs(l) for l in c)
    return [(cl, frozenset(vs)) for cl, vs in groups.values()]


def _branch_var(clauses) -> int:
    shortest = min(len(c) for c in clauses)
    occ: dict[int, int] = {}
    for c in clauses:
        if len(c) == shortest:
            for l in c:
                occ[abs(l)] = occ.get(abs(l), 0) + 1
    return max(occ, key=lambda v: (occ[v], -v))


class SpectrumEngine:
    """Reusable counter; the component cache persists across calls."""

    def __init__(self, max_decisions: int | None = None):
        self.max_decisions = max_decisions
        self.decisions = 0
        self._cache: dict[frozenset, list[int]] = {}

    def spectrum(self, f: CnfFormula, assumptions: Sequence[int] = ()) -> SolutionSpectrum:
        clauses = list(f.clauses) + [(l,) for l in assumptions]
        limit = sys.getrecursionlimit()
        need = 4 * f.num_vars + 200
        if need > limit:
            sys.setrecursionlimit(need)
        counts = self._spectrum(clauses, frozenset(f.variables))
        return SolutionSpectrum(tuple(counts))

    def count(self, f: CnfFormula, assumptions: Sequence[int] = ()) -> int:
        return self.spectrum(f, assumptions).total

    def _spectrum(self, clauses, variables: frozenset) -> list[int]:
        width = len(variables) + 1
        fixed: set[int] = set()
        ntrue = 0
        while True:
            unit = next((c[0] for c in clauses if len(c) == 1), None)
            if unit is None:
                break
            clauses = _assign(clauses, unit)
            if clauses is None:
                return [0] * width
            fixed.add(abs(unit))
            ntrue += unit > 0

        result = [1]
        used = 0
        for cl, vs in _components(clauses):
            used += len(vs)
            result = _convolve(result, self._component(cl, vs))
            if not any(result):
                return [0] * width
        free = len(variables) - len(fixed) - used
        result = _convolve(result, _binomial_row(free))
        result = [0] * ntrue + result
        return result + [0] * (width - len(result))

    def _component(self, clauses, vs: frozenset) -> list[int]:
        key = frozenset(clauses)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        self.decisions += 1
        if self.max_decisions is not None and self.decisions > self.max_decisions:
            raise CountingBudgetExceeded(self.max_decisions)
        v = _branch_var(clauses)
        rest = vs - {v}
        zero = [0] * len(vs)
        pos_cl = _assign(clauses, v)
        pos = zero if pos_cl is None else self._spectrum(pos_cl, rest)
        neg_cl = _assign(clauses, -v)
        neg = zero if neg_cl is None else self._spectrum(neg_cl, rest)
        res = [a + b for a, b in zip([0] + pos, neg + [0])]
        self._cache[key] = res
        return res


def count_spectrum(f: CnfFormula, max_decisions: int | None = None) -> SolutionSpectrum:
    return SpectrumEngine(max_decisions).spectrum(f)


def model_count(f: CnfFormula, assumptions: Sequence[int] = (), max_decisions: int | None = None) -> int:
    return SpectrumEngine(max_decisions).count(f, assumptions)


def marginals(f: CnfFormula, max_decisions: int | None = None,
              engine: SpectrumEngine | None = None) -> MarginalTable:
    eng = engine or SpectrumEngine(max_decisions)
    total = eng.count(f)
    if total == 0:
        return MarginalTable((0,) * f.num_vars, 0)
    true_counts = tuple(eng.count(condition(f, v)) for v in f.variables)
    return MarginalTable(true_counts, total)


class ModelIndex(Sequence):
    """Models of a formula in lexicographic order (False < True).

    Backed by a sorted array of packed keys; position i is the model with
    id i + 1.
    """

    def __init__(self, num_vars: int, keys: np.ndarray):
        self.num_vars = num_vars
        self.keys = keys

    def __len__(self) -> int:
        return len(self.keys)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        row = unpack_keys(self.keys[i : i + 1] if i >= 0 else self.keys[[i]], self.num_vars)[0]
        return tuple(bool(x) for x in row)

    def __repr__(self):
        return f"ModelIndex(num_vars={self.num_vars}, size={len(self)})"

    @property
    def bits(self) -> np.ndarray:
        return unpack_keys(self.keys, self.num_vars)

    def ids(self, keys: np.ndarray) -> np.ndarray:
        """0-based position of each key, -1 where the key is not a model."""
        keys = np.asarray(keys)
        if len(self.keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        found = self.keys[pos_c] == keys
        return np.where(found, pos_c, -1).astype(np.int64)


def _clauses_by_last_var(f: CnfFormula):
    by_last: dict[int, list] = {}
    for c in f.clauses:
        by_last.setdefault(max(abs(l) for l in c), []).append(c)
    return by_last


def _enumerate_bfs(f: CnfFormula, frontier_limit: int) -> np.ndarray | None:
    n = f.num_vars
    wide = n > 63
    one = 1 if wide else np.int64(1)
    frontier = np.zeros(1, dtype=object if wide else np.int64)
    by_last = _clauses_by_last_var(f)
    for v in range(1, n + 1):
        frontier = np.stack([frontier * 2, frontier * 2 + one], axis=1).ravel()
        for c in by_last.get(v, ()):
            falsified = np.ones(len(frontier), dtype=bool)
            for l in c:
                bit = (frontier >> (v - abs(l))) & one
                if wide:
                    bit = bit.astype(np.int64)
                falsified &= (bit == 0) if l > 0 else (bit == 1)
            frontier = frontier[~falsified]
        if len(frontier) > frontier_limit:
            return None
    return frontier


def _enumerate_guided(f: CnfFormula, engine: SpectrumEngine) -> np.ndarray:
    """Depth-first, pruning every prefix whose extension count is zero."""
    n = f.num_vars
    out = []

    def walk(prefix: list[int], key: int):
        if len(prefix) == n:
            out.append(key)
            return
        v = len(prefix) + 1
        for lit, bit in ((-v, 0), (v, 1)):
            if engine.count(f, prefix + [lit]) > 0:
                walk(prefix + [lit], key * 2 + bit)

    if engine.count(f) > 0:
        walk([], 0)
    return np.array(out, dtype=object if n > 63 else np.int64)


def enumerate_models(f: CnfFormula, cap: int = DEFAULT_ENUMERATION_CAP,
                     total: int | None = None) -> ModelIndex:
    """All models in lexicographic order; raises ``EnumerationCapExceeded`` above ``cap``."""
    engine = SpectrumEngine()
    if total is None:
        total = engine.count(f)
    if total > cap:
        raise EnumerationCapExceeded(total, cap)
    keys = _enumerate_bfs(f, frontier_limit=max(16 * cap, 1 << 22))
    if keys is None:
        keys = _enumerate_guided(f, engine)
    assert len(keys) == total, (len(keys), total)
    return ModelIndex(f.num_vars, keys)


def enumerate_list(f: CnfFormula, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Model]:
    return list(enumerate_models(f, cap))


def sigma(m: Sequence[bool]) -> int:
    """Number of variables set to true."""
    return sum(1 for x in m if x)


__all__ = [
    "CountingBudgetExceeded",
    "EnumerationCapExceeded",
    "MarginalTable",
    "ModelIndex",
    "SolutionSpectrum",
    "SpectrumEngine",
    "count_spectrum",
    "enumerate_models",
    "marginals",
    "model_count",
    "pack_rows",
    "sigma",
]
