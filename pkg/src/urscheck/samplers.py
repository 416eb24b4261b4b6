"""Sample producers.

The reference sampler partitions the solution space variable by variable
(index order): at variable v it draws u uniformly in [0, c) where c is the
number of models under the current prefix, and sets v false iff u < c0,
the number of those models with v false. Every model is drawn with
probability exactly 1 / |R_F|.

Counts come from the sorted model index when the formula is small enough to
enumerate, otherwise from the exact counter with a cache keyed by prefix.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .cnf import CnfFormula, Sample, pack_rows, satisfied_rows, unpack_keys, write_dimacs
from .counting import DEFAULT_ENUMERATION_CAP, ModelIndex, SpectrumEngine, enumerate_models

log = logging.getLogger(__name__)

BIASED_VARIANTS = ("skew", "duplicator", "firstfall")
OUTPUT_FORMATS = ("literals", "bitstring")


class SamplerError(RuntimeError):
    pass


class SamplerTimeout(SamplerError):
    pass


class InvalidSampleError(SamplerError):
    def __init__(self, count: int, collected: int):
        self.count = count
        self.collected = collected
        noun = "sample" if count == 1 else "samples"
        super().__init__(f"{count} invalid {noun} (out of {collected})")


class SampleParseError(SamplerError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "builtin_uniform"  # builtin_uniform | builtin_biased | external
    variant: str | None = None
    strength: float = 0.0
    command: str | None = None
    output_format: str = "literals"
    batch_size: int = 1000
    timeout: float = 60.0
    invalid_policy: str = "fail"
    rng_seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("builtin_uniform", "builtin_biased", "external"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.invalid_policy not in ("fail", "filter"):
            raise ValueError(f"unknown invalid policy {self.invalid_policy!r}")
        if self.kind == "builtin_biased" and self.variant not in BIASED_VARIANTS:
            raise ValueError(f"unknown biased variant {self.variant!r}")
        if self.kind == "external":
            if not self.command or "{cnf}" not in self.command or "{n}" not in self.command:
                raise ValueError("external command template needs {cnf} and {n} placeholders")
            if self.output_format not in OUTPUT_FORMATS:
                raise ValueError(f"unknown output format {self.output_format!r}")

    @property
    def sampler_id(self) -> str:
        if self.name:
            return self.name
        if self.kind == "builtin_uniform":
            return "uniform"
        if self.kind == "builtin_biased":
            return f"{self.variant}-{self.strength:g}"
        return "external"

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "SamplerSpec":
        return cls(**d)

    def with_seed(self, seed: int) -> "SamplerSpec":
        return replace(self, rng_seed=seed)


# ---------------------------------------------------------------- randomness


def randbelow(rng: np.random.Generator, c: int) -> int:
    """Uniform integer in [0, c) by rejection on the next power of two."""
    if c < 1:
        raise ValueError("empty range")
    k = (c - 1).bit_length()
    while True:
        u = 0
        bits = k
        while bits > 0:
            take = min(bits, 32)
            u = (u << take) | int(rng.integers(0, 1 << take))
            bits -= take
        if u < c:
            return u


def randbelow_array(rng: np.random.Generator, c: np.ndarray) -> np.ndarray:
    """Vectorized ``randbelow`` for int64 bounds."""
    c = np.asarray(c, dtype=np.int64)
    if np.any(c < 1):
        raise ValueError("empty range")
    p = np.ones_like(c)
    while True:
        small = p < c
        if not small.any():
            break
        p[small] <<= 1
    out = np.empty_like(c)
    todo = np.arange(len(c))
    while len(todo):
        u = rng.integers(0, p[todo], dtype=np.int64)
        ok = u < c[todo]
        out[todo[ok]] = u[ok]
        todo = todo[~ok]
    return out


# ----------------------------------------------------------- prefix counting


class EngineCounts:
    """Exact counts of models extending a prefix of (v1, v2, ...) values."""

    def __init__(self, f: CnfFormula, engine: SpectrumEngine | None = None):
        self.f = f
        self.engine = engine or SpectrumEngine()
        self._cache: dict[tuple, int] = {}

    def __call__(self, prefix: tuple) -> int:
        hit = self._cache.get(prefix)
        if hit is None:
            lits = [v if b else -v for v, b in enumerate(prefix, start=1)]
            hit = self._cache[prefix] = self.engine.count(self.f, lits)
        return hit


def _walk(counts: Callable[[tuple], int], n: int, choose: Callable[[int, int], bool]) -> tuple:
    """Descend the prefix tree; ``choose(c0, c)`` returns True to set the variable true."""
    prefix: tuple = ()
    c = counts(prefix)
    for _ in range(n):
        c0 = counts(prefix + (False,))
        if choose(c0, c):
            prefix += (True,)
            c -= c0
        else:
            prefix += (False,)
            c = c0
    return prefix


def _resolve_index(f: CnfFormula, index, cap: int):
    """Model index when the formula is small enough, else prefix counts from the engine.

    ``index`` may already be a ``ModelIndex`` or an ``EngineCounts``.
    """
    if isinstance(index, EngineCounts):
        return None, index
    if index is not None:
        return index, None
    engine = SpectrumEngine()
    total = engine.count(f)
    if total == 0:
        raise SamplerError("formula is unsatisfiable")
    if total <= cap:
        return enumerate_models(f, cap, total=total), None
    return None, EngineCounts(f, engine)


def _index_levels(index: ModelIndex, n_draws: int, choose_vec) -> np.ndarray:
    """Vectorized partition walk over a sorted model index; returns model positions."""
    n = index.num_vars
    keys = index.keys
    lo = np.zeros(n_draws, dtype=np.int64)
    hi = np.full(n_draws, len(keys), dtype=np.int64)
    prefix = np.zeros(n_draws, dtype=keys.dtype if n <= 63 else object)
    for v in range(1, n + 1):
        first_true = (prefix * 2 + 1) << (n - v)
        mid = np.searchsorted(keys, first_true).astype(np.int64)
        mid = np.clip(mid, lo, hi)
        c = hi - lo
        c0 = mid - lo
        go_true = choose_vec(c0, c)
        lo = np.where(go_true, mid, lo)
        hi = np.where(go_true, hi, mid)
        prefix = prefix * 2 + go_true.astype(prefix.dtype)
    assert np.all(hi - lo == 1)
    return lo


def uniform_partition_sample(f: CnfFormula, n: int, rng: np.random.Generator,
                             index=None,
                             cap: int = DEFAULT_ENUMERATION_CAP) -> Sample:
    index, counts = _resolve_index(f, index, cap)
    if index is not None:
        if len(index) == 0:
            raise SamplerError("formula is unsatisfiable")
        pos = _index_levels(index, n, lambda c0, c: randbelow_array(rng, c) >= c0)
        return Sample(unpack_keys(index.keys[pos], f.num_vars))
    rows = [_walk(counts, f.num_vars, lambda c0, c: randbelow(rng, c) >= c0) for _ in range(n)]
    return Sample(np.array(rows, dtype=bool).reshape(n, f.num_vars))


def _skew_choice(strength: float):
    def p_true(c0, c):
        c1 = c - c0
        w1 = c1 * (1.0 + strength)
        return w1 / (w1 + c0)

    return p_true


def biased_sample(f: CnfFormula, n: int, variant: str, strength: float, rng: np.random.Generator,
                  index=None, cap: int = DEFAULT_ENUMERATION_CAP) -> Sample:
    """Deliberately non-uniform samplers used to check the power of the tests.

    skew: partition sampling with the weight of the true branch multiplied by
    (1 + strength). duplicator: ceil(n / (1 + strength)) uniform draws padded
    with repeats of the first. firstfall: the first model at or after a
    uniformly random assignment in lexicographic order, wrapping around.
    """
    if variant not in BIASED_VARIANTS:
        raise ValueError(f"unknown biased variant {variant!r}")
    if strength < 0:
        raise ValueError("strength must be non-negative")
    if variant == "duplicator":
        m = min(n, int(np.ceil(n / (1.0 + strength))))
        base = uniform_partition_sample(f, m, rng, index=index, cap=cap)
        if m == 0:
            return base
        pad = np.repeat(base.bits[:1], n - m, axis=0)
        return Sample(np.concatenate([base.bits, pad], axis=0))

    index, counts = _resolve_index(f, index, cap)
    if index is not None and len(index) == 0:
        raise SamplerError("formula is unsatisfiable")

    if variant == "skew":
        p_true = _skew_choice(strength)
        if index is not None:
            def choose_vec(c0, c):
                c0f, cf = c0.astype(float), c.astype(float)
                return rng.random(len(c)) < p_true(c0f, cf)

            pos = _index_levels(index, n, choose_vec)
            return Sample(unpack_keys(index.keys[pos], f.num_vars))
        rows = [_walk(counts, f.num_vars, lambda c0, c: rng.random() < p_true(c0, c)) for _ in range(n)]
        return Sample(np.array(rows, dtype=bool).reshape(n, f.num_vars))

    # firstfall
    starts = rng.integers(0, 2, size=(n, f.num_vars)).astype(bool)
    if index is not None:
        pos = np.searchsorted(index.keys, pack_rows(starts)) % len(index)
        return Sample(unpack_keys(index.keys[pos], f.num_vars))
    rows = [_first_at_or_after(counts, tuple(bool(x) for x in row)) for row in starts]
    return Sample(np.array(rows, dtype=bool).reshape(n, f.num_vars))


def _lex_min(counts, prefix: tuple, n: int) -> tuple:
    while len(prefix) < n:
        prefix += (False,) if counts(prefix + (False,)) else (True,)
    return prefix


def _first_at_or_after(counts, start: tuple) -> tuple:
    n = len(start)
    if counts(start):
        return start
    # candidates start[:i] + (True,) + anything, for positions where start is False;
    # the longest shared prefix gives the smallest model above start
    for i in range(n - 1, -1, -1):
        if not start[i]:
            p = start[:i] + (True,)
            if counts(p):
                return _lex_min(counts, p, n)
    return _lex_min(counts, (), n)


# ------------------------------------------------------------ validation/io


def validate_sample(f: CnfFormula, s: Sample) -> list[int]:
    """Positions of sampled assignments that are not models of ``f``."""
    if s.num_vars != f.num_vars:
        raise ValueError(f"sample has {s.num_vars} variables, formula has {f.num_vars}")
    return np.flatnonzero(~satisfied_rows(f, s.bits)).tolist()


def parse_models(text: str, num_vars: int, fmt: str = "literals") -> np.ndarray:
    """Parse sampler stdout into an (N, num_vars) bool matrix; blank lines are ignored."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if fmt == "bitstring":
            if len(line) != num_vars or set(line) - {"0", "1"}:
                raise SampleParseError(f"expected {num_vars} bits, got {line!r}", lineno)
            rows.append([ch == "1" for ch in line])
        elif fmt == "literals":
            try:
                lits = [int(t) for t in line.split()]
            except ValueError:
                raise SampleParseError(f"non-integer token in {line!r}", lineno) from None
            if lits and lits[-1] == 0:
                lits.pop()
            row = [None] * num_vars
            for l in lits:
                if l == 0 or abs(l) > num_vars:
                    raise SampleParseError(f"literal {l} out of range", lineno)
                if row[abs(l) - 1] is not None:
                    raise SampleParseError(f"variable {abs(l)} assigned twice", lineno)
                row[abs(l) - 1] = l > 0
            if None in row:
                raise SampleParseError(f"variable {row.index(None) + 1} unassigned", lineno)
            rows.append(row)
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    return np.array(rows, dtype=bool).reshape(len(rows), num_vars)


def format_models(bits: np.ndarray, fmt: str = "literals") -> str:
    lines = []
    for row in np.asarray(bits, dtype=bool):
        if fmt == "bitstring":
            lines.append("".join("1" if x else "0" for x in row))
        else:
            lines.append(" ".join(str(i if x else -i) for i, x in enumerate(row, start=1)) + " 0")
    return "\n".join(lines) + ("\n" if lines else "")


# ------------------------------------------------------------------ drivers


def _remaining(deadline: float | None) -> float | None:
    if deadline is None:
        return None
    left = deadline - time.monotonic()
    if left <= 0:
        raise SamplerTimeout("budget exhausted")
    return left


def run_external(spec: SamplerSpec, f: CnfFormula, n: int, cnf_path: str | None = None,
                 deadline: float | None = None) -> Sample:
    """Collect ``n`` models from an external sampler, ``spec.batch_size`` per call.

    The command template is split shell-style; ``{cnf}`` and ``{n}`` are
    substituted per token. Each call gets ``spec.timeout`` seconds (less if
    the overall ``deadline`` is closer).
    """
    if spec.kind != "external":
        raise ValueError("run_external needs an external sampler spec")
    tmp = None
    if cnf_path is None:
        fd, tmp = tempfile.mkstemp(suffix=".cnf")
        with os.fdopen(fd, "wb") as fh:
            fh.write(write_dimacs(f))
        cnf_path = tmp
    template = shlex.split(spec.command)
    parts: list[np.ndarray] = []
    collected = dropped = calls = empty_calls = 0
    try:
        while collected < n:
            ask = min(spec.batch_size, n - collected)
            argv = [t.replace("{cnf}", cnf_path).replace("{n}", str(ask)) for t in template]
            left = _remaining(deadline)
            timeout = spec.timeout if left is None else min(spec.timeout, left)
            calls += 1
            try:
                proc = subprocess.run(argv, capture_output=True, timeout=timeout)
            except subprocess.TimeoutExpired:
                raise SamplerTimeout(f"sampler call exceeded {timeout:.3g}s") from None
            except OSError as exc:
                raise SamplerError(f"could not launch sampler: {exc}") from exc
            if proc.returncode != 0:
                err = proc.stderr.decode(errors="replace").strip()[-500:]
                raise SamplerError(f"sampler exited with status {proc.returncode}: {err}")
            bits = parse_models(proc.stdout.decode(errors="replace"), f.num_vars, spec.output_format)
            bits = bits[: n - collected]
            ok = satisfied_rows(f, bits)
            bad = int((~ok).sum())
            if bad:
                if spec.invalid_policy == "fail":
                    raise InvalidSampleError(bad, collected + len(bits))
                dropped += bad
                bits = bits[ok]
            if len(bits) == 0:
                empty_calls += 1
                if empty_calls >= 3:
                    raise SamplerError("sampler returned no valid models in 3 consecutive calls")
            else:
                empty_calls = 0
            parts.append(bits)
            collected += len(bits)
    finally:
        if tmp is not None:
            os.unlink(tmp)
    s = Sample(np.concatenate(parts, axis=0) if parts else np.zeros((0, f.num_vars), bool))
    s.info.update(invocations=calls, dropped=dropped)
    return s


def collect_sample(spec: SamplerSpec, f: CnfFormula, n: int, rng: np.random.Generator,
                   index=None, cnf_path: str | None = None,
                   deadline: float | None = None,
                   cap: int = DEFAULT_ENUMERATION_CAP) -> Sample:
    """Draw ``n`` models in batches of ``spec.batch_size``, checking ``deadline`` between batches."""
    if spec.kind == "external":
        return run_external(spec, f, n, cnf_path=cnf_path, deadline=deadline)
    if index is None:
        index, counts = _resolve_index(f, None, cap)
        index = index if index is not None else counts
    parts = []
    done = calls = 0
    while done < n:
        _remaining(deadline)
        ask = min(spec.batch_size, n - done)
        if spec.kind == "builtin_uniform":
            part = uniform_partition_sample(f, ask, rng, index=index, cap=cap)
        elif spec.variant == "duplicator":
            # padding is relative to the whole sample, not each batch
            part = biased_sample(f, n, "duplicator", spec.strength, rng, index=index, cap=cap)
            parts, done, calls = [part], n, calls + 1
            break
        else:
            part = biased_sample(f, ask, spec.variant, spec.strength, rng, index=index, cap=cap)
        parts.append(part)
        done += len(part)
        calls += 1
    s = Sample.concat(parts, f.num_vars)
    s.info.update(invocations=calls, dropped=0)
    return s
