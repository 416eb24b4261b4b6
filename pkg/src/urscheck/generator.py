"""Synthetic k-CNF datasets.

Clauses pick k distinct variables uniformly and negate each with
probability 1/2. In planted mode the sign pattern is drawn uniformly among
the patterns that no planted assignment falsifies, so every planted
assignment is a model of every generated formula.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cnf import CnfFormula, write_dimacs
from .counting import model_count


class GeneratorError(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    num_vars: int
    num_clauses: int
    clause_width: int = 3
    planted: list = field(default_factory=list)  # list of bool sequences
    require_satisfiable: bool = False
    count: int = 1
    seed: int = 0
    max_retries: int = 1000

    def __post_init__(self):
        if self.num_vars < 1:
            raise ValueError("num_vars must be >= 1")
        if not 1 <= self.clause_width <= self.num_vars:
            raise ValueError(f"clause width {self.clause_width} not in [1, {self.num_vars}]")
        if self.num_clauses < 0:
            raise ValueError("num_clauses must be >= 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        for m in self.planted:
            if len(m) != self.num_vars:
                raise ValueError("planted assignment length differs from num_vars")


def _member_rngs(seed: int, count: int):
    # per-index streams so members can be regenerated independently
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _random_clause(rng: np.random.Generator, n: int, k: int) -> tuple[int, ...]:
    vs = rng.choice(n, size=k, replace=False) + 1
    signs = rng.integers(0, 2, size=k)
    return tuple(int(v) if s else -int(v) for v, s in zip(vs, signs))


def gen_random_kcnf(cfg: GeneratorConfig, name: str = "r") -> list[CnfFormula]:
    if cfg.planted:
        raise ValueError("use gen_planted_kcnf for planted configurations")
    out = []
    for i, rng in enumerate(_member_rngs(cfg.seed, cfg.count)):
        for _ in range(cfg.max_retries):
            clauses = [_random_clause(rng, cfg.num_vars, cfg.clause_width) for _ in range(cfg.num_clauses)]
            f = CnfFormula.from_clauses(cfg.num_vars, clauses, f"{name}_{i}")
            if not cfg.require_satisfiable or model_count(f) > 0:
                out.append(f)
                break
        else:
            raise GeneratorError(f"no satisfiable formula for member {i} after {cfg.max_retries} attempts")
    return out


def admissible_patterns(planted: np.ndarray, variables) -> list[tuple[bool, ...]]:
    """Sign patterns (True = positive literal) not falsified by any planted row.

    A pattern is falsified by m iff every literal is false under m, i.e. the
    pattern is the complement of m restricted to ``variables``.
    """
    cols = planted[:, [v - 1 for v in variables]]
    falsified = {tuple(bool(not x) for x in row) for row in cols}
    return [p for p in itertools.product((False, True), repeat=len(variables)) if p not in falsified]


def gen_planted_kcnf(cfg: GeneratorConfig, name: str = "p") -> list[CnfFormula]:
    if not cfg.planted:
        raise ValueError("planted set is empty")
    planted = np.array(cfg.planted, dtype=bool).reshape(len(cfg.planted), cfg.num_vars)
    k = cfg.clause_width
    out = []
    for i, rng in enumerate(_member_rngs(cfg.seed, cfg.count)):
        clauses = []
        for _ in range(cfg.num_clauses):
            for _ in range(cfg.max_retries):
                vs = [int(v) + 1 for v in rng.choice(cfg.num_vars, size=k, replace=False)]
                ok = admissible_patterns(planted, vs)
                if ok:
                    pat = ok[int(rng.integers(len(ok)))]
                    clauses.append(tuple(v if s else -v for v, s in zip(vs, pat)))
                    break
            else:
                raise GeneratorError(
                    f"planted set covers every sign pattern; no admissible clause after {cfg.max_retries} draws"
                )
        out.append(CnfFormula.from_clauses(cfg.num_vars, clauses, f"{name}_{i}"))
    return out


def random_assignments(num_vars: int, count: int, seed: int) -> list[list[bool]]:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(count, num_vars)).astype(bool).tolist()


def generate(cfg: GeneratorConfig, name: str) -> list[CnfFormula]:
    if cfg.planted:
        return gen_planted_kcnf(cfg, name)
    return gen_random_kcnf(cfg, name)


def write_dataset(formulae: list[CnfFormula], directory, name: str, cfg: GeneratorConfig | None = None,
                  extra: dict | None = None) -> Path:
    """Write ``<name>_<index>.cnf`` files plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for i, f in enumerate(formulae):
        fn = f"{name}_{i}.cnf"
        (d / fn).write_bytes(write_dimacs(f))
        files.append(fn)
    manifest = {"dataset": name, "files": files}
    if cfg is not None:
        c = asdict(cfg)
        c["planted"] = ["".join("1" if x else "0" for x in m) for m in cfg.planted]
        manifest["config"] = c
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d
