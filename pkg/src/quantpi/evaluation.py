"""Coverage, width, rogue-point and crossing diagnostics, plus report output."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from quantpi.train import BacktestPoint, IntervalSpec, PredictionInterval

REPORT_SCHEMA_VERSION = 1


class EmptyInputError(ValueError):
    pass


class MisalignedError(ValueError):
    pass


@dataclass
class CoverageReport:
    nominal_width: float
    success_rate: float
    mean_width: float
    rogue_rate: float
    crossing_count: int
    n: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CoverageReport:
        return cls(
            float(d["nominal_width"]), float(d["success_rate"]), float(d["mean_width"]),
            float(d["rogue_rate"]), int(d["crossing_count"]), int(d["n"]), dict(d.get("meta", {})),
        )


def _pairs(pairs):
    out = []
    for p in pairs:
        if isinstance(p, BacktestPoint):
            out.append((p.interval, p.actual))
        else:
            out.append((p[0], p[1]))
    return out


def coverage(pairs, nominal_width: float | None = None, meta: dict | None = None) -> CoverageReport:
    """Summarise ``(PredictionInterval, actual)`` pairs or backtest points.

    Coverage is inclusive at both ends; a rogue point has its median strictly
    outside ``[lower, upper]``.
    """
    pairs = _pairs(pairs)
    if not pairs:
        raise EmptyInputError("coverage needs at least one (interval, actual) pair")
    lo = np.array([pi.lower for pi, _ in pairs])
    md = np.array([pi.median for pi, _ in pairs])
    up = np.array([pi.upper for pi, _ in pairs])
    y = np.array([a for _, a in pairs], dtype=float)
    if nominal_width is None:
        spec = pairs[0][0].spec
        nominal_width = spec.beta if spec is not None else float("nan")
    n = len(pairs)
    return CoverageReport(
        nominal_width=float(nominal_width),
        success_rate=int(np.sum((lo <= y) & (y <= up))) / n,
        mean_width=float(np.mean(up - lo)),
        rogue_rate=int(np.sum((md < lo) | (md > up))) / n,
        crossing_count=int(np.sum(up < lo)),
        n=n,
        meta=dict(meta or {}),
    )


def nesting_violations(families) -> int:
    """Count positions where a narrower-beta interval is wider than a wider-beta one.

    Args:
        families: ``(IntervalSpec or beta, intervals)`` pairs; every interval
            list must cover the same positions.
    """
    families = [(s.beta if isinstance(s, IntervalSpec) else float(s), list(iv)) for s, iv in families]
    if not families:
        return 0
    n = len(families[0][1])
    if any(len(iv) != n for _, iv in families):
        raise MisalignedError("interval lists have different lengths")
    families.sort(key=lambda f: f[0])
    widths = np.array([[pi.upper - pi.lower for pi in iv] for _, iv in families])
    betas = np.array([b for b, _ in families])
    bad = np.zeros(n, dtype=bool)
    for i in range(len(families)):
        for j in range(i + 1, len(families)):
            if betas[i] < betas[j]:
                bad |= widths[i] > widths[j]
    return int(bad.sum())


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(v) -> str:
    # repr round-trips a float exactly (17 significant digits at most)
    return repr(float(v))


def emit_report(reports, path, fmt: str = "json") -> None:
    """Write one or more reports as versioned JSON or as CSV rows."""
    if isinstance(reports, CoverageReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise EmptyInputError("refusing to write an empty report")
    path = Path(path)
    if fmt == "json":
        if len(reports) == 1:
            doc = {"schema_version": REPORT_SCHEMA_VERSION, **reports[0].to_dict()}
        else:
            doc = {"schema_version": REPORT_SCHEMA_VERSION, "reports": [r.to_dict() for r in reports]}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    elif fmt == "csv":
        cols = ["nominal_width", "success_rate", "mean_width", "rogue_rate", "crossing_count", "n"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in reports:
                w.writerow([_fmt(r.nominal_width), _fmt(r.success_rate), _fmt(r.mean_width),
                            _fmt(r.rogue_rate), r.crossing_count, r.n])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path) -> list[CoverageReport]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
    if "reports" in doc:
        return [CoverageReport.from_dict(d) for d in doc["reports"]]
    return [CoverageReport.from_dict(doc)]


def _beta_tag(beta: float) -> str:
    return repr(float(beta))


def emit_plot_data(runs, path) -> None:
    """Write the data behind interval plots.

    Args:
        runs: mapping ``beta -> list of BacktestPoint`` (or a single list,
            whose intervals carry their spec). All lists must share timestamps.

    Columns: ``t, actual`` then ``median_<beta>, lower_<beta>, upper_<beta>``
    for each beta in increasing order.
    """
    if not isinstance(runs, dict):
        runs = list(runs)
        if not runs:
            raise EmptyInputError("no backtest points to write")
        runs = {runs[0].interval.spec.beta: runs}
    if not runs or any(len(v) == 0 for v in runs.values()):
        raise EmptyInputError("no backtest points to write")
    betas = sorted(runs)
    base = runs[betas[0]]
    for b in betas[1:]:
        if [p.timestamp for p in runs[b]] != [p.timestamp for p in base]:
            raise MisalignedError(f"timestamps for beta={b} differ from beta={betas[0]}")
    header = ["t", "actual"]
    for b in betas:
        tag = _beta_tag(b)
        header += [f"median_{tag}", f"lower_{tag}", f"upper_{tag}"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, p in enumerate(base):
            row = [p.timestamp, _fmt(p.actual)]
            for b in betas:
                pi = runs[b][i].interval
                row += [_fmt(pi.median), _fmt(pi.lower), _fmt(pi.upper)]
            w.writerow(row)


def read_plot_data(path) -> dict[float, list[BacktestPoint]]:
    """Inverse of :func:`emit_plot_data`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise EmptyInputError(f"{path} has no data rows")
    header = rows[0]
    if header[:2] != ["t", "actual"] or (len(header) - 2) % 3:
        raise ValueError(f"{path} is not a plot-data file")
    betas = [float(h.split("_", 1)[1]) for h in header[2::3]]
    out = {b: [] for b in betas}
    for row in rows[1:]:
        t, actual = int(row[0]), float(row[1])
        for k, b in enumerate(betas):
            med, lo, up = (float(v) for v in row[2 + 3 * k: 5 + 3 * k])
            out[b].append(BacktestPoint(t, PredictionInterval(lo, med, up, IntervalSpec(b)), actual))
    return out
