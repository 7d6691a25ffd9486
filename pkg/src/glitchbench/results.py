"""Line-delimited JSON results files: one AttemptRecord per line, stable field order."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .campaign import Attack, AttemptRecord, Outcome
from .faults import FaultEvent
from .physics import CLOCKS, EMFIGlitch, VFIGlitch
from .testprogs import TestId

FIELD_ORDER = (
    "index", "seed", "attack", "clock_label", "freq_hz", "test", "n", "outcome",
    "t0_hex", "t1_hex", "corrupted_regs",
    "power_pct", "x_um", "y_um", "voltage_v", "length_ns", "delay_ns",
    "ground_truth_events", "labels", "flash_fetch_count",
)


class MalformedRecord(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


def _hex(v: int | None) -> str | None:
    return None if v is None else f"{v:#010x}"


def _unhex(s: str | None) -> int | None:
    return None if s is None else int(s, 16)


def record_to_dict(r: AttemptRecord) -> dict:
    d = {
        "index": r.index,
        "seed": r.seed,
        "attack": r.attack.value,
        "clock_label": r.clock.label,
        "freq_hz": r.clock.freq_hz,
        "test": r.test_id.label,
        "n": r.n,
        "outcome": r.outcome.value,
        "t0_hex": _hex(r.t0),
        "t1_hex": _hex(r.t1),
        "corrupted_regs": [[i, _hex(v)] for i, v in r.corrupted_registers],
    }
    g = r.glitch
    if r.attack is Attack.EMFI:
        d.update(
            power_pct=g.power_pct if g else None, x_um=g.x_um if g else None, y_um=g.y_um if g else None
        )
    else:
        d.update(voltage_v=g.voltage_v if g else None, length_ns=g.length_ns if g else None)
    d["delay_ns"] = g.delay_ns if g else None
    d["ground_truth_events"] = [e.to_dict() for e in r.ground_truth_events]
    d["labels"] = [list(s) for s in r.labels]
    d["flash_fetch_count"] = r.flash_fetch_count
    for k, v in r.extra.items():
        d.setdefault(k, v)
    return d


def render(r: AttemptRecord) -> str:
    return json.dumps(record_to_dict(r), separators=(",", ":"))


def record_from_dict(d: dict) -> AttemptRecord:
    attack = Attack(d["attack"])
    if d.get("delay_ns") is None:
        glitch = None
    elif attack is Attack.EMFI:
        glitch = EMFIGlitch(
            power_pct=float(d["power_pct"]), delay_ns=float(d["delay_ns"]),
            x_um=float(d["x_um"]), y_um=float(d["y_um"]),
        )
    else:
        glitch = VFIGlitch(voltage_v=float(d["voltage_v"]), length_ns=float(d["length_ns"]), delay_ns=float(d["delay_ns"]))
    clk = CLOCKS[d["clock_label"]]
    if float(d.get("freq_hz", clk.freq_hz)) != clk.freq_hz:
        raise ValueError(f"freq_hz does not match clock {clk.label}")
    extra = {k: v for k, v in d.items() if k not in FIELD_ORDER}
    return AttemptRecord(
        index=int(d["index"]),
        seed=int(d["seed"]),
        attack=attack,
        clock=clk,
        test_id=TestId.parse(d["test"]),
        n=int(d["n"]),
        outcome=Outcome(d["outcome"]),
        glitch=glitch,
        t0=_unhex(d.get("t0_hex")),
        t1=_unhex(d.get("t1_hex")),
        corrupted_registers=[(int(i), int(v, 16)) for i, v in d.get("corrupted_regs", [])],
        ground_truth_events=[FaultEvent.from_dict(e) for e in d.get("ground_truth_events", [])],
        labels=[list(s) for s in d.get("labels", [])],
        flash_fetch_count=d.get("flash_fetch_count"),
        extra=extra,
    )


def parse(line: str, line_no: int = 1) -> AttemptRecord:
    try:
        d = json.loads(line)
        if not isinstance(d, dict):
            raise ValueError("record is not an object")
        return record_from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedRecord(line_no, f"{type(exc).__name__}: {exc}") from exc


def read_results(path: Path) -> list[AttemptRecord]:
    records = []
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            if line.strip():
                records.append(parse(line, no))
    return records


def write_results(path: Path, records: Iterable[AttemptRecord]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for r in records:
            fh.write(render(r))
            fh.write("\n")
    tmp.replace(path)
