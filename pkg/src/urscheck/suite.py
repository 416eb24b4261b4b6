"""The five uniformity tests.

Each test maps exact ground truth about a formula plus a sample to a
``TestResult``. A result is Rejected iff its p-value is <= alpha; tests that
cannot be run meaningfully return Skipped with a reason and no p-value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from math import comb
from typing import Sequence

import numpy as np

from .cnf import Sample, pack_rows
from .counting import MarginalTable, ModelIndex, SolutionSpectrum
from .stats import chi_square_sf, hmp_combine, poisson_cdf, poisson_sf

TEST_IDS = ("monobit", "vf", "birthday", "sfpc", "gof")
MIN_EXPECTED = 5.0


class Verdict(str, Enum):
    CONSISTENT = "Consistent"
    REJECTED = "Rejected"
    SKIPPED = "Skipped"
    NOT_RUN = "NotRun"
    INDETERMINATE = "Indeterminate"


@dataclass
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    test_id: str
    formula_id: str
    n_samples: int
    verdict: Verdict
    alpha: float
    statistic: float | None = None
    dof_or_lambda: float | None = None
    p_value: float | None = None
    reason: str | None = None
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def skipped(self) -> bool:
        return self.verdict is Verdict.SKIPPED

    def to_json(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TestResult":
        d = dict(d)
        d["verdict"] = Verdict(d["verdict"])
        return cls(**d)


def skipped(test_id: str, formula_id: str, n: int, alpha: float, reason: str, **extras) -> TestResult:
    return TestResult(test_id, formula_id, n, Verdict.SKIPPED, alpha, reason=reason, extras=extras)


def _decided(test_id, formula_id, n, alpha, stat, dof, p, **extras) -> TestResult:
    verdict = Verdict.REJECTED if p <= alpha else Verdict.CONSISTENT
    return TestResult(test_id, formula_id, n, verdict, alpha, float(stat), float(dof), float(p), extras=extras)


def _chi2(observed: np.ndarray, expected: np.ndarray) -> float:
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    return float(math.fsum(((observed - expected) ** 2 / expected).tolist()))


def count_repeats(s: Sample) -> int:
    """Number of unordered sample pairs holding the same model."""
    if len(s) < 2:
        return 0
    _, mult = np.unique(s.keys, return_counts=True)
    return int(sum(int(c) * (int(c) - 1) // 2 for c in mult if c > 1))


def birthday_test(total: int, s: Sample, alpha: float, formula_id: str = "") -> TestResult:
    if total < 1:
        raise ValueError("birthday test needs a satisfiable formula")
    n = len(s)
    if n < 2:
        return skipped("birthday", formula_id, n, alpha, "sample too small")
    lam = comb(n, 2) / total  # exact integer ratio, correctly rounded
    r = count_repeats(s)
    upper = poisson_sf(r, lam)  # P(R >= r)
    lower = poisson_cdf(r, lam)  # P(R <= r)
    p = min(1.0, 2.0 * min(upper, lower))
    return _decided("birthday", formula_id, n, alpha, r, lam, p, repeats=r, lam=lam)


def monobit_test(spec: SolutionSpectrum, s: Sample, alpha: float, formula_id: str = "",
                 min_expected: float = MIN_EXPECTED) -> TestResult:
    n = len(s)
    total = spec.total
    if total == 0:
        raise ValueError("monobit test needs a satisfiable formula")
    if spec.c_even == 0 or spec.c_uneven == 0:
        return skipped("monobit", formula_id, n, alpha, "degenerate parity")
    e_even = n * (spec.c_even / total)
    e_odd = n - e_even
    if min(e_even, e_odd) < min_expected:
        return skipped("monobit", formula_id, n, alpha, "expected count below minimum",
                       e_even=e_even, e_uneven=e_odd)
    o_even = int(np.count_nonzero(s.weights() % 2 == 0))
    stat = _chi2([o_even, n - o_even], [e_even, e_odd])
    p = chi_square_sf(stat, 1)
    return _decided("monobit", formula_id, n, alpha, stat, 1, p,
                    o_even=o_even, e_even=e_even, e_uneven=e_odd)


def vf_test(marg: MarginalTable, s: Sample, alpha: float, formula_id: str = "",
            min_expected: float = MIN_EXPECTED, exclude: Sequence[int] = ()) -> TestResult:
    """Per-variable frequency tests combined with an equal-weight HMP."""
    n = len(s)
    total = marg.total
    if total == 0:
        raise ValueError("VF test needs a satisfiable formula")
    observed_true = s.bits.sum(axis=0)
    excluded: dict[str, str] = {}
    pvals: dict[str, float] = {}
    stats: list[float] = []
    exclude = set(exclude)
    for v in range(1, marg.num_vars + 1):
        t = marg.true_count(v)
        if t == 0 or t == total:
            excluded[str(v)] = "constant"
            continue
        if v in exclude:
            excluded[str(v)] = "sample size cap"
            continue
        e1 = n * (t / total)
        e0 = n - e1
        if min(e1, e0) < min_expected:
            excluded[str(v)] = "expected count below minimum"
            continue
        o1 = int(observed_true[v - 1])
        stats.append(_chi2([o1, n - o1], [e1, e0]))
        pvals[str(v)] = chi_square_sf(stats[-1], 1)
    if not pvals:
        return skipped("vf", formula_id, n, alpha, "no qualifying variable", excluded=excluded)
    p = hmp_combine(list(pvals.values()))
    return _decided("vf", formula_id, n, alpha, max(stats), 1, p,
                    included=[int(v) for v in pvals], excluded=excluded, per_variable=pvals)


def _merge_tails(expected: list[float], observed: list[int], min_expected: float):
    """Pool adjacent bins from both tails inwards, then any remaining low interior bin."""
    bins = [[e, o] for e, o in zip(expected, observed)]

    def pool_left(bs):
        while len(bs) > 1 and bs[0][0] < min_expected:
            e, o = bs.pop(0)
            bs[0][0] += e
            bs[0][1] += o

    pool_left(bins)
    bins.reverse()
    pool_left(bins)
    bins.reverse()
    i = 0
    while i < len(bins) and len(bins) > 1:
        if bins[i][0] < min_expected:
            j = i + 1 if i + 1 < len(bins) else i - 1
            bins[j][0] += bins[i][0]
            bins[j][1] += bins[i][1]
            bins.pop(i)
            i = max(0, min(i, j) - 1)
            continue
        i += 1
    return [b[0] for b in bins], [b[1] for b in bins]


def sfpc_test(spec: SolutionSpectrum, s: Sample, alpha: float, formula_id: str = "",
              bin_policy: str = "strict", min_expected: float = MIN_EXPECTED) -> TestResult:
    """Chi-square over the number of true variables per sampled model."""
    if bin_policy not in ("strict", "merge_tails"):
        raise ValueError(f"unknown bin policy {bin_policy!r}")
    n = len(s)
    total = spec.total
    if total == 0:
        raise ValueError("SFpC test needs a satisfiable formula")
    counts = np.bincount(s.weights(), minlength=spec.num_vars + 1)
    support = [k for k, c in enumerate(spec.counts) if c > 0]
    outside = int(counts.sum() - counts[support].sum()) if support else n
    if outside:
        raise ValueError(f"{outside} sampled assignment(s) have an impossible number of true variables")
    if len(support) < 2:
        return skipped("sfpc", formula_id, n, alpha, "degenerate spectrum")
    expected = [n * (spec.counts[k] / total) for k in support]
    observed = [int(counts[k]) for k in support]
    extras: dict = {"bin_policy": bin_policy}
    if bin_policy == "merge_tails":
        expected, observed = _merge_tails(expected, observed, min_expected)
        if len(expected) < 2:
            return skipped("sfpc", formula_id, n, alpha, "degenerate spectrum", **extras)
    else:
        low = [k for k, e in zip(support, expected) if e < min_expected]
        if low:
            extras["low_expected_bins"] = low
    extras["bins"] = len(expected)
    stat = _chi2(observed, expected)
    dof = len(expected) - 1
    return _decided("sfpc", formula_id, n, alpha, stat, dof, chi_square_sf(stat, dof), **extras)


def _as_index(models, num_vars: int) -> ModelIndex:
    if isinstance(models, ModelIndex):
        return models
    bits = np.array([tuple(m) for m in models], dtype=bool).reshape(len(models), num_vars)
    keys = np.sort(pack_rows(bits))
    return ModelIndex(num_vars, keys)


def gof_test(models, s: Sample, alpha: float, formula_id: str = "",
             min_expected: float = MIN_EXPECTED) -> TestResult:
    """Pearson chi-square over every model of the formula.

    ``models`` is a ``ModelIndex`` or any sequence of models; cell identity
    does not depend on the order.
    """
    n = len(s)
    index = _as_index(models, s.num_vars)
    size = len(index)
    if size == 0:
        raise ValueError("GOF test needs a satisfiable formula")
    if size == 1:
        return skipped("gof", formula_id, n, alpha, "single model")
    if n < min_expected * size:
        return skipped("gof", formula_id, n, alpha, "sample smaller than five times the model count")
    ids = index.ids(s.keys)
    bad = int(np.count_nonzero(ids < 0))
    if bad:
        raise ValueError(f"{bad} sampled assignment(s) are not models")
    observed = np.bincount(ids, minlength=size)
    e = n / size
    stat = float(math.fsum(((observed - e) ** 2).tolist()) / e)
    dof = size - 1
    return _decided("gof", formula_id, n, alpha, stat, dof, chi_square_sf(stat, dof),
                    max_count=int(observed.max()), empty_cells=int(np.count_nonzero(observed == 0)))
