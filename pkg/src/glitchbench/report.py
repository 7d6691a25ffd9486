"""Summaries and sensitivity-map data: per-point tallies and jittered scatter CSVs."""

from __future__ import annotations

import csv
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .campaign import Attack, AttemptRecord, Outcome
from .physics import EMFIGlitch, VFIGlitch

JITTER_UM = 400.0
CATEGORY = {Outcome.EXPECTED: "expected", Outcome.CRASH_MUTE: "crash", Outcome.SUCCESSFUL: "success"}


@dataclass
class PointTally:
    x_um: float
    y_um: float
    expected_count: int = 0
    crash_count: int = 0
    success_count: int = 0

    @property
    def attempts(self) -> int:
        return self.expected_count + self.crash_count + self.success_count

    def add(self, outcome: Outcome) -> None:
        if outcome is Outcome.EXPECTED:
            self.expected_count += 1
        elif outcome is Outcome.CRASH_MUTE:
            self.crash_count += 1
        else:
            self.success_count += 1


def sensitivity_map(records: list[AttemptRecord]) -> list[PointTally]:
    points: dict[tuple[float, float], PointTally] = {}
    for r in records:
        g = r.glitch
        if isinstance(g, EMFIGlitch):
            key = (g.x_um, g.y_um)
            if key not in points:
                points[key] = PointTally(*key)
            points[key].add(r.outcome)
    return [points[k] for k in sorted(points)]


def jitter(record: AttemptRecord) -> tuple[float, float]:
    """Plot offset in [0, 400] um, drawn from the record's own seed."""
    rng = random.Random(record.seed ^ 0x6A177E5)
    return rng.uniform(0, JITTER_UM), rng.uniform(0, JITTER_UM)


def emfi_scatter_rows(records: list[AttemptRecord]):
    for r in records:
        g = r.glitch
        if isinstance(g, EMFIGlitch):
            dx, dy = jitter(r)
            yield {
                "index": r.index,
                "x_um": g.x_um,
                "y_um": g.y_um,
                "plot_x_um": g.x_um + dx,
                "plot_y_um": g.y_um + dy,
                "category": CATEGORY[r.outcome],
            }


def vfi_scatter_rows(records: list[AttemptRecord]):
    for r in records:
        g = r.glitch
        if isinstance(g, VFIGlitch):
            yield {"index": r.index, "voltage_v": g.voltage_v, "length_ns": g.length_ns, "category": CATEGORY[r.outcome]}


@dataclass
class GroupStats:
    attempts: int = 0
    expected: int = 0
    crash: int = 0
    success: int = 0

    @property
    def success_rate(self) -> float:
        return self.success / self.attempts if self.attempts else 0.0


def group_stats(records: list[AttemptRecord]) -> dict[tuple[str, str, str], GroupStats]:
    groups: dict[tuple[str, str, str], GroupStats] = defaultdict(GroupStats)
    for r in records:
        g = groups[(r.attack.value, r.clock.label, r.test_id.label)]
        g.attempts += 1
        setattr(g, CATEGORY[r.outcome], getattr(g, CATEGORY[r.outcome]) + 1)
    return dict(sorted(groups.items()))


def summary_text(records: list[AttemptRecord]) -> str:
    total = GroupStats()
    for r in records:
        total.attempts += 1
        setattr(total, CATEGORY[r.outcome], getattr(total, CATEGORY[r.outcome]) + 1)
    lines = [
        f"attempts: {total.attempts}",
        f"Expected: {total.expected}",
        f"CrashMute: {total.crash}",
        f"Successful: {total.success}",
        f"success_rate: {total.success_rate:.4f}",
    ]
    for (attack, clk, test), g in group_stats(records).items():
        lines.append(
            f"{attack} {clk} {test}: attempts={g.attempts} expected={g.expected} "
            f"crash={g.crash} success={g.success} success_rate={g.success_rate:.4f}"
        )
    unexplained = sum(1 for r in records if any("UnexplainedOutcome" in s for s in r.labels))
    if unexplained:
        lines.append(f"unexplained successful records: {unexplained}")
    return "\n".join(lines)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def write_report(records: list[AttemptRecord], out_dir: Path, stem: str = "report", svg: bool = False) -> list[Path]:
    """Write the map/scatter CSVs (and optionally an SVG) and return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    attacks = {r.attack for r in records}
    if Attack.EMFI in attacks or not records:
        p = out_dir / f"{stem}_points.csv"
        _write_csv(
            p,
            ["x_um", "y_um", "expected_count", "crash_count", "success_count"],
            (
                {"x_um": t.x_um, "y_um": t.y_um, "expected_count": t.expected_count,
                 "crash_count": t.crash_count, "success_count": t.success_count}
                for t in sensitivity_map(records)
            ),
        )
        written.append(p)
        p = out_dir / f"{stem}_emfi_scatter.csv"
        _write_csv(p, ["index", "x_um", "y_um", "plot_x_um", "plot_y_um", "category"], emfi_scatter_rows(records))
        written.append(p)
    if Attack.VFI in attacks:
        p = out_dir / f"{stem}_vfi_scatter.csv"
        _write_csv(p, ["index", "voltage_v", "length_ns", "category"], vfi_scatter_rows(records))
        written.append(p)
    if svg and records:
        written += _plot_svg(records, out_dir, stem)
    return written


COLORS = {"expected": "tab:green", "crash": "gold", "success": "tab:red"}


def _plot_svg(records: list[AttemptRecord], out_dir: Path, stem: str) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # optional extra
        raise RuntimeError("SVG output needs matplotlib (pip install 'glitchbench[plot]')") from exc
    paths = []
    for attack, rows, xkey, ykey, xlabel, ylabel in (
        (Attack.EMFI, list(emfi_scatter_rows(records)), "plot_x_um", "plot_y_um", "x (um)", "y (um)"),
        (Attack.VFI, list(vfi_scatter_rows(records)), "voltage_v", "length_ns", "glitch voltage (V)", "glitch length (ns)"),
    ):
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(6, 6))
        for cat in ("expected", "crash", "success"):
            pts = [(r[xkey], r[ykey]) for r in rows if r["category"] == cat]
            if pts:
                xs, ys = zip(*pts)
                ax.scatter(xs, ys, s=6, c=COLORS[cat], label=cat)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(loc="upper right")
        p = out_dir / f"{stem}_{attack.value.lower()}.svg"
        plt.rcParams["svg.hashsalt"] = "glitchbench"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
