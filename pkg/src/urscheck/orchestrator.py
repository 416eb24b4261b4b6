"""Test campaigns.

A unit is one (test, sampler, formula) execution. Units are persisted one
JSON file each as soon as they finish, so an interrupted campaign resumes by
computing only the missing units. Per-dataset verdicts combine the unit
p-values with an equal-weight harmonic mean p-value.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cnf import CnfFormula, write_dimacs
from .counting import (
    DEFAULT_ENUMERATION_CAP,
    CountingBudgetExceeded,
    MarginalTable,
    ModelIndex,
    SolutionSpectrum,
    SpectrumEngine,
    enumerate_models,
    marginals,
)
from .samplers import (
    InvalidSampleError,
    SamplerError,
    SamplerSpec,
    SamplerTimeout,
    collect_sample,
    validate_sample,
)
from .stats import hmp_combine
from .suite import (
    TEST_IDS,
    TestResult,
    Verdict,
    birthday_test,
    gof_test,
    monobit_test,
    sfpc_test,
    skipped,
    vf_test,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_PIPELINE = ("monobit", "vf", "birthday", "sfpc", "gof")


@dataclass
class CampaignConfig:
    alpha: float = 0.01
    tests: tuple = DEFAULT_PIPELINE
    early_stop: bool = False
    sample_sizes: dict = field(default_factory=dict)  # test_id -> N override
    unit_budget: float = 600.0  # seconds of sampling per unit
    parallelism: int = 1
    min_expected: float = 5.0
    floor: int = 1000
    vf_cap: int = 100_000
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    sfpc_bin_policy: str = "strict"
    max_decisions: int | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        self.tests = tuple(self.tests)
        if not self.tests:
            raise ValueError("at least one test is required")
        unknown = set(self.tests) - set(TEST_IDS)
        if unknown:
            raise ValueError(f"unknown tests: {sorted(unknown)}")
        if len(set(self.tests)) != len(self.tests):
            raise ValueError("duplicate test in pipeline")
        if self.unit_budget <= 0 or self.parallelism < 1 or self.floor < 1 or self.vf_cap < 1:
            raise ValueError("budgets, floor and parallelism must be positive")
        if self.sfpc_bin_policy not in ("strict", "merge_tails"):
            raise ValueError(f"unknown bin policy {self.sfpc_bin_policy!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["tests"] = list(self.tests)
        return d


@dataclass
class CombinedResult:
    test_id: str
    dataset_id: str
    sampler_id: str
    pvalues: list
    n_formulae_attempted: int
    n_formulae_completed: int
    hmp: float | None
    verdict: Verdict
    alpha: float
    total_wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CombinedResult":
        d = dict(d)
        d["verdict"] = Verdict(d["verdict"])
        return cls(**d)

    def statistical_view(self) -> tuple:
        """Everything except timings, for reproducibility comparisons."""
        return (self.test_id, self.dataset_id, self.sampler_id, tuple(self.pvalues),
                self.n_formulae_attempted, self.n_formulae_completed, self.hmp, self.verdict)


# ------------------------------------------------------------- ground truth


def formula_digest(f: CnfFormula) -> str:
    return hashlib.sha256(write_dimacs(f)).hexdigest()


@dataclass
class GroundTruth:
    spectrum: SolutionSpectrum
    marginals: MarginalTable | None
    index: ModelIndex | None
    enumeration_skipped: bool


class GroundTruthCache:
    """Exact statistics per formula content, computed once per key."""

    def __init__(self, enumeration_cap: int = DEFAULT_ENUMERATION_CAP, max_decisions: int | None = None):
        self.enumeration_cap = enumeration_cap
        self.max_decisions = max_decisions
        self._lock = threading.Lock()
        self._keys: dict[str, threading.Lock] = {}
        self._data: dict[str, GroundTruth] = {}

    def get(self, f: CnfFormula) -> GroundTruth:
        key = formula_digest(f)
        with self._lock:
            if key in self._data:
                return self._data[key]
            klock = self._keys.setdefault(key, threading.Lock())
        with klock:
            if key not in self._data:
                self._data[key] = self._compute(f)
            return self._data[key]

    def _compute(self, f: CnfFormula) -> GroundTruth:
        engine = SpectrumEngine(self.max_decisions)
        spec = engine.spectrum(f)
        total = spec.total
        marg = marginals(f, engine=engine) if total else None
        index = None
        if 0 < total <= self.enumeration_cap:
            index = enumerate_models(f, self.enumeration_cap, total=total)
        return GroundTruth(spec, marg, index, total > self.enumeration_cap)


# ------------------------------------------------------------- sample sizes


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def vf_requirements(marg: MarginalTable, min_expected: float = 5.0) -> dict[int, int]:
    """Smallest N giving every cell of each non-constant variable an expected count >= min_expected."""
    total = marg.total
    out = {}
    for v in range(1, marg.num_vars + 1):
        low = min(marg.true_count(v), marg.false_count(v))
        if low > 0:
            out[v] = math.ceil(min_expected * total / low)
    return out


def required_sample_size(test_id: str, spec: SolutionSpectrum, marg: MarginalTable | None = None,
                         min_expected: float = 5.0, floor: int = 1000, vf_cap: int = 100_000) -> int:
    total = spec.total
    if test_id == "gof":
        return math.ceil(min_expected * total)
    if test_id == "monobit":
        low = min(spec.c_even, spec.c_uneven)
        if low == 0:
            return floor
        return max(floor, math.ceil(min_expected * total / low))
    if test_id == "vf":
        if marg is None:
            raise ValueError("VF sample size needs the marginal table")
        reqs = [r for r in vf_requirements(marg, min_expected).values() if r <= vf_cap]
        return max([floor] + reqs)
    if test_id in ("sfpc", "birthday"):
        return floor
    raise ValueError(f"unknown test {test_id!r}")


def vf_capped_variables(marg: MarginalTable, min_expected: float, vf_cap: int) -> list[int]:
    return sorted(v for v, r in vf_requirements(marg, min_expected).items() if r > vf_cap)


# -------------------------------------------------------------------- units


def unit_seed(sampler_seed: int, f: CnfFormula, test_id: str) -> np.random.SeedSequence:
    digest = int(formula_digest(f)[:16], 16)
    return np.random.SeedSequence([sampler_seed & (2**64 - 1), digest, TEST_IDS.index(test_id)])


def _run_test(test_id: str, gt: GroundTruth, sample, cfg: CampaignConfig, formula_id: str,
              vf_exclude=()) -> TestResult:
    a = cfg.alpha
    if test_id == "monobit":
        return monobit_test(gt.spectrum, sample, a, formula_id, cfg.min_expected)
    if test_id == "vf":
        return vf_test(gt.marginals, sample, a, formula_id, cfg.min_expected, exclude=vf_exclude)
    if test_id == "birthday":
        return birthday_test(gt.spectrum.total, sample, a, formula_id)
    if test_id == "sfpc":
        return sfpc_test(gt.spectrum, sample, a, formula_id, cfg.sfpc_bin_policy, cfg.min_expected)
    return gof_test(gt.index, sample, a, formula_id, cfg.min_expected)


def run_test_unit(sampler: SamplerSpec, f: CnfFormula, test_id: str, cfg: CampaignConfig,
                  cache: GroundTruthCache | None = None, cnf_path: str | None = None,
                  formula_id: str | None = None) -> TestResult:
    """Run one unit. Every failure becomes a Skipped result with a reason."""
    fid = formula_id or f.name
    t0 = time.perf_counter()
    n = 0
    try:
        cache = cache or GroundTruthCache(cfg.enumeration_cap, cfg.max_decisions)
        try:
            gt = cache.get(f)
        except CountingBudgetExceeded:
            return _timed(skipped(test_id, fid, 0, cfg.alpha, "counting budget exhausted"), t0)
        if gt.spectrum.total == 0:
            return _timed(skipped(test_id, fid, 0, cfg.alpha, "unsatisfiable formula"), t0)
        if test_id == "gof" and gt.index is None:
            return _timed(skipped(test_id, fid, 0, cfg.alpha, "enumeration cap exceeded"), t0)

        n = cfg.sample_sizes.get(test_id) or required_sample_size(
            test_id, gt.spectrum, gt.marginals, cfg.min_expected, cfg.floor, cfg.vf_cap)
        vf_exclude = vf_capped_variables(gt.marginals, cfg.min_expected, cfg.vf_cap) if test_id == "vf" else ()
        rng = np.random.default_rng(unit_seed(sampler.rng_seed, f, test_id))
        deadline = time.monotonic() + cfg.unit_budget
        try:
            sample = collect_sample(sampler, f, n, rng, index=gt.index, cnf_path=cnf_path,
                                    deadline=deadline, cap=cfg.enumeration_cap)
        except SamplerTimeout:
            return _timed(skipped(test_id, fid, n, cfg.alpha, "budget exhausted"), t0)
        except InvalidSampleError as exc:
            return _timed(skipped(test_id, fid, n, cfg.alpha, f"invalid samples: {exc}"), t0)
        except SamplerError as exc:
            return _timed(skipped(test_id, fid, n, cfg.alpha, f"sampler error: {exc}"), t0)
        bad = validate_sample(f, sample)
        if bad:
            return _timed(skipped(test_id, fid, n, cfg.alpha, f"invalid samples: {len(bad)}"), t0)

        result = _run_test(test_id, gt, sample, cfg, fid, vf_exclude)
        result.extras.update({k: v for k, v in sample.info.items()})
        return _timed(result, t0)
    except Exception as exc:  # noqa: BLE001 - units never raise
        log.exception("unit %s/%s failed", test_id, fid)
        return _timed(skipped(test_id, fid, n, cfg.alpha, f"error: {type(exc).__name__}: {exc}"), t0)


def _timed(r: TestResult, t0: float) -> TestResult:
    r.wall_time = time.perf_counter() - t0
    return r


# -------------------------------------------------------------- aggregation


def combine_results(results: Sequence[TestResult], alpha: float, test_id: str | None = None,
                    dataset_id: str = "", sampler_id: str = "") -> CombinedResult:
    done = [r for r in results if not r.skipped]
    tid = test_id or (results[0].test_id if results else "")
    extras: dict = {"skip_reasons": _reason_counts(results)}
    if tid == "birthday" and done:
        reps = [r.extras["repeats"] for r in done]
        lams = [r.extras["lam"] for r in done]
        extras.update(min_repeats=min(reps), max_repeats=max(reps),
                      mean_repeats=sum(reps) / len(reps), mean_lambda=sum(lams) / len(lams))
    wall = sum(r.wall_time for r in done)
    extras["wall_time_all"] = sum(r.wall_time for r in results)
    if not done:
        return CombinedResult(tid, dataset_id, sampler_id, [], len(results), 0, None,
                              Verdict.INDETERMINATE, alpha, wall, extras)
    pvals = [r.p_value for r in done]
    hmp = hmp_combine(pvals)
    verdict = Verdict.REJECTED if hmp <= alpha else Verdict.CONSISTENT
    return CombinedResult(tid, dataset_id, sampler_id, pvals, len(results), len(done), hmp,
                          verdict, alpha, wall, extras)


def _reason_counts(results) -> dict:
    out: dict[str, int] = {}
    for r in results:
        if r.skipped:
            out[r.reason] = out.get(r.reason, 0) + 1
    return out


def not_run(test_id: str, dataset_id: str, sampler_id: str, attempted: int, alpha: float) -> CombinedResult:
    return CombinedResult(test_id, dataset_id, sampler_id, [], attempted, 0, None, Verdict.NOT_RUN, alpha)


# -------------------------------------------------------------- persistence


_SAFE = re.compile(r"[^A-Za-z0-9._+-]")


def safe_name(s: str) -> str:
    return _SAFE.sub("_", s) or "_"


def atomic_write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def unit_path(result_dir: Path, sampler_id: str, dataset_id: str, test_id: str, formula_id: str) -> Path:
    return (Path(result_dir) / "units" / safe_name(sampler_id) / safe_name(dataset_id)
            / test_id / f"{safe_name(formula_id)}.json")


def campaign_path(result_dir: Path, sampler_id: str, dataset_id: str) -> Path:
    return Path(result_dir) / "campaigns" / f"{safe_name(sampler_id)}__{safe_name(dataset_id)}.json"


def _formula_ids(dataset: Sequence[CnfFormula], dataset_id: str) -> list[str]:
    ids = [f.name or f"{dataset_id}_{i}" for i, f in enumerate(dataset)]
    if len(set(ids)) != len(ids):
        ids = [f"{fid}#{i}" for i, fid in enumerate(ids)]
    return ids


def run_pipeline(sampler: SamplerSpec, dataset: Sequence[CnfFormula], cfg: CampaignConfig,
                 dataset_id: str = "dataset", result_dir=None, cache: GroundTruthCache | None = None,
                 cnf_paths: Sequence[str] | None = None, dataset_path=None) -> list[CombinedResult]:
    """Run every configured test over the dataset in pipeline order.

    With ``early_stop`` the remaining tests are marked NotRun once one
    test's combined verdict is Rejected. With ``result_dir`` each unit is
    written as soon as it completes and existing unit files are reused.
    """
    if not dataset:
        raise ValueError("empty dataset")
    cache = cache or GroundTruthCache(cfg.enumeration_cap, cfg.max_decisions)
    fids = _formula_ids(dataset, dataset_id)
    sid = sampler.sampler_id
    if result_dir is not None:
        result_dir = Path(result_dir)
        _write_campaign(result_dir, sampler, cfg, dataset_id, fids, cnf_paths, dataset_path)

    combined: list[CombinedResult] = []
    stopped = False
    for test_id in cfg.tests:
        if stopped:
            combined.append(not_run(test_id, dataset_id, sid, len(dataset), cfg.alpha))
            continue

        def unit(i: int) -> TestResult:
            path = unit_path(result_dir, sid, dataset_id, test_id, fids[i]) if result_dir else None
            if path is not None and path.exists():
                try:
                    return TestResult.from_json(json.loads(path.read_text()))
                except (ValueError, TypeError, KeyError):
                    log.warning("recomputing corrupt unit file %s", path)
            r = run_test_unit(sampler, dataset[i], test_id, cfg, cache,
                              cnf_path=cnf_paths[i] if cnf_paths else None, formula_id=fids[i])
            if path is not None:
                atomic_write_json(path, r.to_json())
            return r

        if cfg.parallelism > 1:
            with ThreadPoolExecutor(cfg.parallelism) as pool:
                results = list(pool.map(unit, range(len(dataset))))
        else:
            results = [unit(i) for i in range(len(dataset))]
        c = combine_results(results, cfg.alpha, test_id, dataset_id, sid)
        combined.append(c)
        log.info("%s %s: #F=%d hmp=%s %s", sid, test_id, c.n_formulae_completed, c.hmp, c.verdict.value)
        if cfg.early_stop and c.verdict is Verdict.REJECTED:
            stopped = True

    if result_dir is not None:
        atomic_write_json(campaign_path(result_dir, sid, dataset_id).with_suffix(".summary.json"),
                          [c.to_json() for c in combined])
    return combined


def _write_campaign(result_dir: Path, sampler: SamplerSpec, cfg: CampaignConfig, dataset_id: str,
                    fids: list[str], cnf_paths, dataset_path) -> None:
    rel = lambda p: os.path.relpath(os.path.abspath(p), os.path.abspath(result_dir))  # noqa: E731
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "sampler_id": sampler.sampler_id,
        "sampler": sampler.to_json(),
        "config": cfg.to_json(),
        "dataset_id": dataset_id,
        "dataset_path": rel(dataset_path) if dataset_path else None,
        "formulae": fids,
        "formula_files": [rel(p) for p in cnf_paths] if cnf_paths else None,
    }
    atomic_write_json(campaign_path(result_dir, sampler.sampler_id, dataset_id), manifest)


def cost_ordering_violations(combined: Sequence[CombinedResult],
                             order=("monobit", "vf", "sfpc")) -> list[str]:
    """Soft check that accumulated wall time grows along ``order``; report only."""
    times = {c.test_id: c.total_wall_time for c in combined if c.n_formulae_completed}
    seq = [t for t in order if t in times]
    return [f"{a} ({times[a]:.3f}s) slower than {b} ({times[b]:.3f}s)"
            for a, b in zip(seq, seq[1:]) if times[a] > times[b]]
