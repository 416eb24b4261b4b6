import math
import random
from math import comb

import numpy as np
import pytest

from urscheck.cnf import CnfFormula, Sample
from urscheck.counting import count_spectrum, enumerate_models, marginals
from urscheck.samplers import biased_sample, uniform_partition_sample
from urscheck.suite import (
    TestResult,
    Verdict,
    birthday_test,
    count_repeats,
    gof_test,
    monobit_test,
    sfpc_test,
    vf_test,
)

from oracles import binomial_band, random_cnf

T, F = True, False
OR2 = CnfFormula(2, ((1, 2),))  # models FT, TF, TT
P_13_5 = math.erfc(math.sqrt(13.5 / 2))  # chi-square(1) tail in closed form


def sample_of(counts):
    """Sample with the given multiplicity per model, in insertion order."""
    rows = [m for m, c in counts.items() for _ in range(c)]
    return Sample.from_models(rows, num_vars=len(next(iter(counts))))


def distinct_rows(n, width=24, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.choice(2**width, size=n, replace=False)
    return ((ids[:, None] >> np.arange(width - 1, -1, -1)) & 1).astype(bool)


def with_pairs(n, pairs, seed=0):
    """n rows with exactly ``pairs`` duplicated pairs (count_repeats == pairs)."""
    rows = distinct_rows(n - pairs, seed=seed)
    return Sample(np.concatenate([rows, rows[:pairs]]))


def test_closed_form_reference():
    assert P_13_5 == pytest.approx(2.3856e-4, rel=1e-4)


# ---------------------------------------------------------- worked examples


def test_monobit_examples():
    spec = count_spectrum(OR2)
    assert (spec.c_even, spec.c_uneven) == (1, 2)
    r = monobit_test(spec, sample_of({(T, T): 100, (F, T): 100, (T, F): 100}), 0.01)
    assert r.statistic == 0 and r.p_value == 1.0 and r.verdict is Verdict.CONSISTENT
    r = monobit_test(spec, sample_of({(T, T): 130, (F, T): 85, (T, F): 85}), 0.01)
    assert r.statistic == pytest.approx(13.5, abs=1e-12)
    assert r.p_value == pytest.approx(P_13_5, rel=1e-12)
    assert r.p_value == pytest.approx(2.39e-4, abs=1e-6)
    assert r.verdict is Verdict.REJECTED and r.dof_or_lambda == 1


def test_monobit_degenerate_and_low_expected():
    only_tt = CnfFormula(2, ((1,), (2,)))
    r = monobit_test(count_spectrum(only_tt), sample_of({(T, T): 50}), 0.01)
    assert r.verdict is Verdict.SKIPPED and r.reason == "degenerate parity" and r.p_value is None
    r = monobit_test(count_spectrum(OR2), sample_of({(T, T): 3, (F, T): 3}), 0.01)
    assert r.verdict is Verdict.SKIPPED and r.reason == "expected count below minimum"


def test_vf_examples():
    marg = marginals(OR2)
    assert marg.true_counts == (2, 2) and marg.total == 3
    r = vf_test(marg, sample_of({(F, T): 100, (T, F): 100, (T, T): 100}), 0.01)
    assert r.p_value == 1.0 and r.statistic == 0
    r = vf_test(marg, sample_of({(F, T): 70, (T, F): 100, (T, T): 130}), 0.01)
    assert r.extras["per_variable"]["1"] == pytest.approx(P_13_5, rel=1e-12)
    assert r.extras["per_variable"]["2"] == 1.0
    assert r.statistic == pytest.approx(13.5)
    assert r.p_value == pytest.approx(2 / (1 / P_13_5 + 1), rel=1e-12)


def test_vf_excludes_entailed_variable():
    f = CnfFormula(3, ((1, 2), (3,)))
    s = sample_of({(F, T, T): 100, (T, F, T): 100, (T, T, T): 100})
    r = vf_test(marginals(f), s, 0.01)
    assert r.extras["excluded"] == {"3": "constant"}
    assert r.extras["included"] == [1, 2]


def test_vf_cap_exclusion_and_skip():
    marg = marginals(OR2)
    s = sample_of({(F, T): 100, (T, F): 100, (T, T): 100})
    r = vf_test(marg, s, 0.01, exclude=[1])
    assert r.extras["excluded"] == {"1": "sample size cap"}
    r = vf_test(marg, s, 0.01, exclude=[1, 2])
    assert r.verdict is Verdict.SKIPPED and r.reason == "no qualifying variable"


def test_sfpc_examples():
    spec = count_spectrum(OR2)
    assert spec.counts == (0, 2, 1)
    r = sfpc_test(spec, sample_of({(F, T): 100, (T, F): 100, (T, T): 100}), 0.01)
    assert (r.statistic, r.dof_or_lambda, r.p_value) == (0, 1, 1.0)
    r = sfpc_test(spec, sample_of({(F, T): 115, (T, F): 115, (T, T): 70}), 0.01)
    assert r.statistic == pytest.approx(13.5)
    assert r.p_value == pytest.approx(P_13_5, rel=1e-12)
    assert r.verdict is Verdict.REJECTED


def test_sfpc_degenerate_and_bins():
    single = CnfFormula(2, ((1,), (2,)))
    r = sfpc_test(count_spectrum(single), sample_of({(T, T): 10}), 0.01)
    assert r.verdict is Verdict.SKIPPED and r.reason == "degenerate spectrum"
    free = CnfFormula(6, ())
    rng = np.random.default_rng(1)
    s = Sample(rng.integers(0, 2, size=(64, 6)).astype(bool))
    strict = sfpc_test(count_spectrum(free), s, 0.01)
    assert strict.dof_or_lambda == 6
    assert strict.extras["low_expected_bins"] == [0, 6]
    merged = sfpc_test(count_spectrum(free), s, 0.01, bin_policy="merge_tails")
    # expected 1,6,15,20,15,6,1 -> 7,15,20,15,7
    assert merged.dof_or_lambda == 4
    with pytest.raises(ValueError):
        sfpc_test(count_spectrum(single), sample_of({(T, F): 1}), 0.01)


def test_gof_examples():
    models = enumerate_models(OR2)
    r = gof_test(models, sample_of({(F, T): 5, (T, F): 5, (T, T): 5}), 0.01)
    assert r.statistic == 0 and r.p_value == 1.0
    r = gof_test(models, sample_of({(F, T): 10, (T, F): 5}), 0.01)
    assert r.statistic == pytest.approx(10.0, abs=1e-12)
    assert r.dof_or_lambda == 2
    assert abs(r.p_value - math.exp(-5)) < 1e-12
    assert r.verdict is Verdict.REJECTED
    assert r.extras["empty_cells"] == 1


def test_gof_skips_and_errors():
    models = enumerate_models(OR2)
    r = gof_test(models, sample_of({(F, T): 7, (T, F): 7}), 0.01)
    assert r.verdict is Verdict.SKIPPED and "five times" in r.reason
    with pytest.raises(ValueError, match="not models"):
        gof_test(models, sample_of({(F, F): 15}), 0.01)
    # a plain list of models works and order does not matter
    r = gof_test([(T, T), (F, T), (T, F)], sample_of({(F, T): 10, (T, F): 5}), 0.01)
    assert r.statistic == pytest.approx(10.0)


# ------------------------------------------------------------------ birthday


def test_count_repeats_fixtures():
    a, b, c = (T, F, F), (F, T, F), (F, F, T)
    assert count_repeats(Sample.from_models([a, b, c])) == 0
    assert count_repeats(Sample.from_models([a, a, a])) == 3
    assert count_repeats(Sample.from_models([a, a, b, b, b])) == 4
    assert count_repeats(Sample.from_models([a])) == 0


def test_birthday_lambda_and_clamp():
    assert comb(1000, 2) / 49_950 == 10.0
    s = with_pairs(1000, 10)
    assert count_repeats(s) == 10
    r = birthday_test(49_950, s, 0.01)
    assert r.dof_or_lambda == 10.0 and r.extras["lam"] == 10.0
    assert r.statistic == 10 and r.extras["repeats"] == 10
    assert r.p_value == 1.0 and r.verdict is Verdict.CONSISTENT


def test_birthday_far_tail():
    r = birthday_test(49_950, with_pairs(1000, 40), 0.01)
    assert r.p_value < 1e-9 and r.verdict is Verdict.REJECTED
    # too few repeats is also suspicious (two-sided)
    r = birthday_test(49_950, with_pairs(1000, 0), 0.01)
    assert r.p_value == pytest.approx(2 * math.exp(-10), rel=1e-12)


def test_birthday_permutation_invariant():
    s = with_pairs(600, 7, seed=3)
    perm = np.random.default_rng(4).permutation(len(s))
    a = birthday_test(1000, s, 0.01)
    b = birthday_test(1000, Sample(s.bits[perm]), 0.01)
    assert (a.statistic, a.p_value) == (b.statistic, b.p_value)


def test_birthday_skip_and_error():
    assert birthday_test(5, with_pairs(1, 0), 0.01).verdict is Verdict.SKIPPED
    with pytest.raises(ValueError):
        birthday_test(0, with_pairs(10, 0), 0.01)


# ------------------------------------------------------------- properties


def test_exact_expectation_samples_give_p_one():
    # 4 free variables: every model once per 16 rows matches every expectation exactly
    f = CnfFormula(4, ())
    bits = enumerate_models(f).bits
    s = Sample(np.tile(bits, (5, 1)))
    spec, marg = count_spectrum(f), marginals(f)
    for r in (monobit_test(spec, s, 0.01), vf_test(marg, s, 0.01),
              sfpc_test(spec, s, 0.01, "merge_tails"), gof_test(enumerate_models(f), s, 0.01)):
        assert r.statistic == 0 and r.p_value == 1.0


def test_results_are_deterministic_and_serializable():
    s = sample_of({(F, T): 70, (T, F): 100, (T, T): 130})
    a = vf_test(marginals(OR2), s, 0.01, "x")
    b = vf_test(marginals(OR2), s, 0.01, "x")
    assert a.to_json() == b.to_json()
    assert TestResult.from_json(a.to_json()) == a


def _h0_formulae():
    rng = random.Random(77)
    out = []
    while len(out) < 10:
        f = CnfFormula.from_clauses(12, random_cnf(rng, 12, 30))
        spec = count_spectrum(f)
        if 40 <= spec.total <= 400 and spec.c_even and spec.c_uneven:
            out.append(f)
    return out


@pytest.mark.slow
def test_h0_rejection_rates_in_binomial_band():
    formulae = _h0_formulae()
    truth = [(count_spectrum(f), marginals(f), enumerate_models(f)) for f in formulae]
    rng = np.random.default_rng(2025)
    trials = 1000
    rejected = dict.fromkeys(["monobit", "vf", "sfpc", "gof", "birthday"], 0)
    for t in range(trials):
        f = formulae[t % len(formulae)]
        spec, marg, idx = truth[t % len(formulae)]
        s = uniform_partition_sample(f, 1000, rng, index=idx)
        big = uniform_partition_sample(f, 5 * len(idx), rng, index=idx)
        results = [
            monobit_test(spec, s, 0.01),
            vf_test(marg, s, 0.01),
            sfpc_test(spec, s, 0.01, "merge_tails"),
            gof_test(idx, big, 0.01),
            birthday_test(spec.total, s, 0.01),
        ]
        for r in results:
            assert not r.skipped, r.reason
            rejected[r.test_id] += r.verdict is Verdict.REJECTED
    lo, hi = binomial_band(trials, 0.01)
    for test_id, k in rejected.items():
        # birthday is discrete and two-sided, so it can only be conservative
        lower = 0 if test_id == "birthday" else lo
        assert lower <= k <= hi, (test_id, k, (lo, hi))


def test_monobit_rejection_implies_vf_rejection_under_skew():
    formulae = _h0_formulae()
    rng = np.random.default_rng(31)
    both = mono = 0
    for t in range(300):
        f = formulae[t % len(formulae)]
        s = biased_sample(f, 1000, "skew", 2.0, rng)
        m = monobit_test(count_spectrum(f), s, 0.01)
        if m.verdict is Verdict.REJECTED:
            mono += 1
            both += vf_test(marginals(f), s, 0.01).verdict is Verdict.REJECTED
    assert mono >= 50
    assert both >= 0.95 * mono
