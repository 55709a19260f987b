"""Tabulation of externally computed SVP / VBench scores."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ArtifactIOError, ContractError

log = logging.getLogger(__name__)

METRIC_GROUPS = {
    "Semantic Fidelity": ["X-CLIP Score", "VQA Score (Qwen-VL)"],
    "Video Quality": [
        "Subject Consistency",
        "Background Consistency",
        "Motion smoothness",
        "Dynamic Degree",
        "Aesthetic Quality",
        "Imaging Quality",
    ],
}
_ALIASES = {"x-clip": "X-CLIP Score", "xclip": "X-CLIP Score", "vqa": "VQA Score (Qwen-VL)"}


def _fold(name: str) -> str:
    return " ".join(name.lower().replace("_", " ").split())


def canonical_metric(name: str) -> str:
    """Map case / underscore variants (``subject_consistency``) onto the table names."""
    key = name.strip()
    for group in METRIC_GROUPS.values():
        for m in group:
            if _fold(key) == _fold(m):
                return m
    return _ALIASES.get(key.lower(), key)


@dataclass
class SvpTable:
    variants: list = field(default_factory=list)
    values: dict = field(default_factory=dict)  # (metric, variant) -> float
    unknown_metrics: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, str]]:
        """(group, metric) in table order; unrecognised metrics go in a trailing group."""
        present = {m for m, _ in self.values}
        out = [(g, m) for g, ms in METRIC_GROUPS.items() for m in ms if m in present]
        out += [("Unrecognised", m) for m in self.unknown_metrics]
        return out

    def get(self, metric: str, variant: str):
        return self.values.get((canonical_metric(metric), variant))

    def to_csv(self, path) -> None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["group", "metric", *self.variants])
                for group, metric in self.rows():
                    cells = [self.values.get((metric, v)) for v in self.variants]
                    w.writerow([group, metric, *("" if c is None else f"{c:.3f}" for c in cells)])
        except OSError as exc:
            raise ArtifactIOError(f"cannot write SVP table ({exc.strerror})", path) from exc

    def to_markdown(self) -> str:
        if not self.values:
            return "(no scores)\n"
        lines = ["| Metric | " + " | ".join(self.variants) + " |", "|---|" + "---|" * len(self.variants)]
        group = None
        for g, metric in self.rows():
            if g != group:
                lines.append(f"| **{g}** |" + " |" * len(self.variants))
                group = g
            cells = [self.values.get((metric, v)) for v in self.variants]
            lines.append(f"| {metric} | " + " | ".join("" if c is None else f"{c:.3f}" for c in cells) + " |")
        return "\n".join(lines) + "\n"


def svp_ingest(path) -> SvpTable:
    """Pivot a ``metric,variant,value`` CSV; no scores are computed here."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot read scores ({exc.strerror})", path) from exc
    table = SvpTable()
    if not text.strip():
        table.warnings.append("empty score file")
        log.warning("svp: %s is empty", path)
        return table
    reader = csv.DictReader(text.splitlines())
    missing = {"metric", "variant", "value"} - set(reader.fieldnames or [])
    if missing:
        raise ContractError(f"score file lacks columns {sorted(missing)}")
    known = {m for ms in METRIC_GROUPS.values() for m in ms}
    for lineno, row in enumerate(reader, start=2):
        metric = canonical_metric(row["metric"])
        variant = row["variant"].strip()
        try:
            value = float(row["value"])
        except ValueError as exc:
            raise ContractError(f"line {lineno}: value {row['value']!r} is not a number") from exc
        if variant not in table.variants:
            table.variants.append(variant)
        if (metric, variant) in table.values:
            msg = f"line {lineno}: duplicate ({metric}, {variant}); keeping the later value"
            table.warnings.append(msg)
            log.warning("svp: %s", msg)
        table.values[(metric, variant)] = value
        if metric not in known and metric not in table.unknown_metrics:
            table.unknown_metrics.append(metric)
    if "Baseline" in table.variants:
        table.variants.remove("Baseline")
        table.variants.insert(0, "Baseline")
    return table
