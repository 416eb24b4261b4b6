"""Result directories: loading, re-aggregation and table rendering.

JSON unit files are the source of truth; the summary and the table are
recomputed from them on every call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .orchestrator import (
    SCHEMA_VERSION,
    CombinedResult,
    atomic_write_json,
    combine_results,
    not_run,
    unit_path,
)
from .suite import TEST_IDS, TestResult, Verdict


class ReportError(RuntimeError):
    pass


@dataclass
class ReportDocument:
    schema_version: int
    campaigns: list = field(default_factory=list)
    units: list = field(default_factory=list)  # TestResult
    combined: list = field(default_factory=list)  # CombinedResult
    timing: dict = field(default_factory=dict)  # sampler -> test -> seconds

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "campaigns": self.campaigns,
            "units": [u.to_json() for u in self.units],
            "combined": [c.to_json() for c in self.combined],
            "timing": self.timing,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ReportDocument":
        return cls(
            d["schema_version"],
            d["campaigns"],
            [TestResult.from_json(u) for u in d["units"]],
            [CombinedResult.from_json(c) for c in d["combined"]],
            d["timing"],
        )


def _load_json(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc


def load_report(result_dir) -> ReportDocument:
    """Rebuild every CombinedResult of a result directory from its unit files."""
    root = Path(result_dir)
    camp_files = sorted(p for p in (root / "campaigns").glob("*.json") if not p.name.endswith(".summary.json"))
    if not camp_files:
        raise ReportError(f"no campaigns under {root}")
    doc = ReportDocument(SCHEMA_VERSION)
    for cf in camp_files:
        camp = _load_json(cf)
        if camp.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"{cf}: unsupported schema version {camp.get('schema_version')}")
        doc.campaigns.append(camp)
        sid, did = camp["sampler_id"], camp["dataset_id"]
        cfg = camp["config"]
        alpha = cfg["alpha"]
        stopped = False
        for test_id in cfg["tests"]:
            results = []
            missing = 0
            for fid in camp["formulae"]:
                up = unit_path(root, sid, did, test_id, fid)
                if up.exists():
                    try:
                        results.append(TestResult.from_json(_load_json(up)))
                    except (TypeError, KeyError, ValueError) as exc:
                        raise ReportError(f"corrupt unit file {up}: {exc}") from exc
                else:
                    missing += 1
            if not results and (stopped or missing):
                doc.combined.append(not_run(test_id, did, sid, len(camp["formulae"]), alpha))
                continue
            if missing:
                raise ReportError(f"{sid}/{did}/{test_id}: {missing} unit file(s) missing")
            doc.units.extend(results)
            c = combine_results(results, alpha, test_id, did, sid)
            doc.combined.append(c)
            doc.timing.setdefault(sid, {})[test_id] = c.total_wall_time
            if cfg.get("early_stop") and c.verdict is Verdict.REJECTED:
                stopped = True
    return doc


def _fmt_p(c: CombinedResult | None, alpha: float) -> tuple[str, str]:
    if c is None:
        return "", ""
    if c.verdict is Verdict.NOT_RUN:
        return "-", "not run"
    if c.hmp is None:
        return str(c.n_formulae_completed), "n/a"
    p = f"{c.hmp:.3f}"
    return str(c.n_formulae_completed), f"**{p}**" if c.hmp > alpha else p


def render_table(combined: list[CombinedResult], alpha: float | None = None) -> str:
    """Sampler rows by test columns, each with #F and HMP; p-values above alpha in **bold**."""
    if not combined:
        return ""
    alpha = combined[0].alpha if alpha is None else alpha
    datasets = sorted({c.dataset_id for c in combined})
    out = []
    for did in datasets:
        rows = [c for c in combined if c.dataset_id == did]
        tests = [t for t in TEST_IDS if any(c.test_id == t for c in rows)]
        samplers = sorted({c.sampler_id for c in rows})
        cell = {(c.sampler_id, c.test_id): c for c in rows}
        header1 = ["dataset: " + did] + [t for t in tests for _ in (0, 1)]
        header2 = ["sampler"] + ["#F", "p-value"] * len(tests)
        body = []
        for sid in samplers:
            line = [sid]
            for t in tests:
                line.extend(_fmt_p(cell.get((sid, t)), alpha))
            body.append(line)
        widths = [max(len(r[i]) for r in [header1, header2] + body) for i in range(len(header2))]
        fmt = lambda r: " | ".join(s.rjust(w) if i else s.ljust(w) for i, (s, w) in enumerate(zip(r, widths)))  # noqa: E731
        out.append(fmt(header1))
        out.append(fmt(header2))
        out.append("-+-".join("-" * w for w in widths))
        out.extend(fmt(r) for r in body)
        out.append("")
    out.append(f"alpha = {alpha:g}; **bold**: HMP above alpha (consistent with uniform sampling)")
    return "\n".join(out) + "\n"


def write_summary(result_dir, doc: ReportDocument) -> None:
    root = Path(result_dir)
    atomic_write_json(root / "report.json", doc.to_json())
    (root / "table.txt").write_text(render_table(doc.combined))
