import json
import math

import numpy as np
import pytest

from urscheck.cnf import read_dimacs, satisfies, write_dimacs
from urscheck.counting import model_count
from urscheck.generator import (
    GeneratorConfig,
    GeneratorError,
    admissible_patterns,
    gen_planted_kcnf,
    gen_random_kcnf,
    generate,
    random_assignments,
    write_dataset,
)


def test_r30c90_recipe_small():
    cfg = GeneratorConfig(30, 90, 3, require_satisfiable=True, count=20, seed=7)
    fs = gen_random_kcnf(cfg, "r30c90")
    assert len(fs) == 20
    for f in fs:
        assert f.num_vars == 30 and len(f.clauses) == 90
        assert all(len({abs(l) for l in c}) == 3 for c in f.clauses)
        assert model_count(f) > 0
    assert [f.name for f in fs[:2]] == ["r30c90_0", "r30c90_1"]


def test_deterministic_under_seed():
    cfg = GeneratorConfig(30, 114, 3, require_satisfiable=True, count=5, seed=3)
    a = [write_dimacs(f) for f in gen_random_kcnf(cfg)]
    b = [write_dimacs(f) for f in gen_random_kcnf(cfg)]
    assert a == b
    c = [write_dimacs(f) for f in gen_random_kcnf(GeneratorConfig(30, 114, 3, count=5, seed=4))]
    assert a != c


def test_members_are_independent_of_count():
    # per-member streams: the first members do not change when the dataset grows
    a = gen_random_kcnf(GeneratorConfig(20, 60, count=3, seed=1))
    b = gen_random_kcnf(GeneratorConfig(20, 60, count=6, seed=1))
    assert [f.clauses for f in a] == [f.clauses for f in b[:3]]


def test_binomial_concentration():
    n, k, m = 30, 3, 10_000
    f = gen_random_kcnf(GeneratorConfig(n, m, k, seed=11))[0]
    assert len(f.clauses) == m
    var_hits = np.zeros(n + 1)
    pos = 0
    for c in f.clauses:
        for lit in c:
            var_hits[abs(lit)] += 1
            pos += lit > 0
    p = k / n
    sd = math.sqrt(m * p * (1 - p))
    assert np.all(np.abs(var_hits[1:] - m * p) <= 3 * sd + 1)
    sd_sign = math.sqrt(m * k * 0.25)
    assert abs(pos - m * k / 2) <= 3 * sd_sign


def test_planted_all_true_patterns():
    planted = np.ones((1, 5), dtype=bool)
    pats = admissible_patterns(planted, [1, 3, 5])
    assert len(pats) == 7
    assert all(any(p) for p in pats)


def test_planted_assignments_satisfy_every_formula():
    planted = random_assignments(30, 10, seed=5)
    cfg = GeneratorConfig(30, 150, 3, planted=planted, count=10, seed=2)
    for f in gen_planted_kcnf(cfg):
        assert all(satisfies(f, m) for m in planted)


def test_planted_scaled_count_bound():
    for seed in range(10):
        planted = random_assignments(14, 6, seed=seed)
        distinct = len({tuple(m) for m in planted})
        f = gen_planted_kcnf(GeneratorConfig(14, 70, 3, planted=planted, seed=seed))[0]
        assert model_count(f) >= distinct


def test_planted_infeasible_errors():
    # all 8 assignments of 3 variables cover every sign pattern
    planted = [[bool(i >> j & 1) for j in range(3)] for i in range(8)]
    with pytest.raises(GeneratorError, match="every sign pattern"):
        gen_planted_kcnf(GeneratorConfig(3, 1, 3, planted=planted, max_retries=20))


def test_unsatisfiable_density_errors():
    with pytest.raises(GeneratorError, match="no satisfiable formula"):
        gen_random_kcnf(GeneratorConfig(4, 200, 2, require_satisfiable=True, max_retries=3))


@pytest.mark.parametrize("kw", [
    dict(num_vars=30, num_clauses=90, clause_width=31),
    dict(num_vars=0, num_clauses=1),
    dict(num_vars=3, num_clauses=1, count=0),
    dict(num_vars=3, num_clauses=1, planted=[[True]]),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GeneratorConfig(**kw)


def test_write_dataset(tmp_path):
    planted = random_assignments(10, 2, seed=0)
    cfg = GeneratorConfig(10, 20, planted=planted, count=3, seed=9)
    fs = generate(cfg, "p10")
    d = write_dataset(fs, tmp_path / "p10", "p10", cfg)
    man = json.loads((d / "manifest.json").read_text())
    assert man["files"] == ["p10_0.cnf", "p10_1.cnf", "p10_2.cnf"]
    assert man["config"]["seed"] == 9
    assert man["config"]["planted"][0] == "".join("1" if x else "0" for x in planted[0])
    back = read_dimacs(d / "p10_1.cnf")
    assert back.clauses == fs[1].clauses and back.name == "p10_1"
