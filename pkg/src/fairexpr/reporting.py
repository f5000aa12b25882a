"""Report files for one run and comparison tables across runs.

A run's ``report.json`` holds the full fairness report plus a small
``meta`` block (approach, augmentation flag, evaluation-set fingerprint).
``compare`` lines several runs up as columns grouped by augmentation and
ordered Baseline, Attri-aware, Disentangle, producing three tables:
class-wise accuracy per expression, mean class-wise accuracy per
subgroup, and fairness per grouping. The best value in each row is bold.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ValidationError
from .fairness import FairnessReport, grouping_display
from .models import KINDS

REPORT_JSON = "report.json"
REPORT_MD = "report.md"
APPROACH_LABELS = {"baseline": "Baseline", "attribute_aware": "Attri-aware", "disentangled": "Disentangle"}
AUGMENT_LABELS = {False: "Without Augmentation", True: "With Augmentation"}
MISSING = "n/a"


def fingerprint(records) -> str:
    """Digest of the evaluation set (ids, true labels, attributes), order-free."""
    h = hashlib.sha256()
    for r in sorted(records, key=lambda r: r.id):
        h.update(f"{r.id},{r.true},{','.join(map(str, r.attributes))}\n".encode())
    return h.hexdigest()


def pct(value) -> str:
    return MISSING if value is None else f"{100 * value:.1f}"


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def report_payload(report: FairnessReport, meta: dict) -> dict:
    return {"meta": dict(meta), **report.to_dict()}


def report_markdown(report: FairnessReport, meta: dict | None = None) -> str:
    meta = meta or {}
    out = ["# Evaluation report", ""]
    if meta:
        out += [f"- {k}: {meta[k]}" for k in sorted(meta)] + [""]
    out += [f"Overall accuracy: {pct(report.overall_accuracy)}%", "",
            "## Class-wise accuracy by expression", ""]
    rows = [[report.class_names[c], pct(v), str(report.per_class_support[c])]
            for c, v in report.per_class_recall.items()]
    rows.append(["Mean", pct(report.mean_classwise_accuracy), str(sum(report.per_class_support.values()))])
    out += _md_table(["Expression", "Accuracy (%)", "Support"], rows)

    out += ["", "## Class-wise accuracy by subgroup", ""]
    rows = []
    for g in report.groupings.values():
        for key in g.subgroups:
            stats = report.per_subgroup.get(key)
            if stats is None:
                rows.append([grouping_display(g.groups), report.display_label(key), MISSING, "0"])
            else:
                rows.append([grouping_display(g.groups), report.display_label(key), pct(stats.mean), str(stats.n)])
    out += _md_table(["Grouping", "Subgroup", "Mean class-wise accuracy (%)", "Support"], rows)

    out += ["", "## Fairness", ""]
    rows = []
    for g in report.groupings.values():
        dominant = report.display_label(g.dominant) if g.dominant else MISSING
        rows.append([grouping_display(g.groups), pct(g.fairness), dominant, g.note or ""])
    out += _md_table(["Grouping", "F (%)", "Dominant", "Note"], rows)
    return "\n".join(out) + "\n"


def write_report(report: FairnessReport, out_dir, meta: dict) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    js = out_dir / REPORT_JSON
    js.write_text(json.dumps(report_payload(report, meta), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    md = out_dir / REPORT_MD
    md.write_text(report_markdown(report, meta), encoding="utf-8")
    return js, md


# --- comparison --------------------------------------------------------------

@dataclass
class RunSummary:
    run_dir: Path
    payload: dict

    @property
    def approach(self) -> str:
        return self.payload["meta"]["approach"]

    @property
    def augmented(self) -> bool:
        return bool(self.payload["meta"]["augmentation"])

    @property
    def fingerprint(self) -> str:
        return self.payload["meta"]["eval_fingerprint"]

    @property
    def sort_key(self):
        return self.augmented, KINDS.index(self.approach), str(self.run_dir)

    @classmethod
    def load(cls, run_dir) -> "RunSummary":
        run_dir = Path(run_dir)
        path = run_dir / REPORT_JSON
        if not path.is_file():
            raise ValidationError(f"{run_dir}: no {REPORT_JSON}; run 'eval' and 'report' first")
        payload = json.loads(path.read_text(encoding="utf-8"))
        meta = payload.get("meta", {})
        for key in ("approach", "augmentation", "eval_fingerprint"):
            if key not in meta:
                raise ValidationError(f"{path}: meta.{key} missing")
        if meta["approach"] not in KINDS:
            raise ValidationError(f"{path}: unknown approach {meta['approach']!r}")
        return cls(run_dir, payload)


@dataclass
class ComparisonMatrix:
    """Runs as columns; each table is a list of (row label, value per column)."""

    runs: list[RunSummary]

    @classmethod
    def from_runs(cls, runs: Sequence[RunSummary]) -> "ComparisonMatrix":
        if len(runs) < 2:
            raise ValidationError(f"compare needs at least two runs, got {len(runs)}")
        first = runs[0]
        for r in runs[1:]:
            if r.fingerprint != first.fingerprint:
                raise ValidationError(f"{r.run_dir} was evaluated on a different set than {first.run_dir}")
        return cls(sorted(runs, key=lambda r: r.sort_key))

    @property
    def column_labels(self) -> list[tuple[str, str]]:
        return [(AUGMENT_LABELS[r.augmented], APPROACH_LABELS[r.approach]) for r in self.runs]

    def _rows(self, keys, getter):
        return [(label, [getter(r.payload, key) for r in self.runs]) for label, key in keys]

    def expression_table(self):
        names = list(self.runs[0].payload["per_class_recall"])
        rows = self._rows([(n, n) for n in names], lambda p, k: p["per_class_recall"].get(k))
        rows.append(("Mean", [r.payload["mean_classwise_accuracy"] for r in self.runs]))
        return rows

    def subgroup_table(self):
        sub = self.runs[0].payload["per_subgroup"]
        keys = sorted(sub, key=lambda k: sub[k].get("order", 0))
        labels = [(k.replace("|", ", "), k) for k in keys]
        return self._rows(labels, lambda p, k: p["per_subgroup"].get(k, {}).get("mean"))

    def fairness_table(self):
        fair = self.runs[0].payload["fairness"]
        # json keys are sorted on disk; "order" restores schema order
        ordered = sorted(fair.items(), key=lambda kv: kv[1].get("order", 0))
        labels = [(grouping_display(v["groups"]), name) for name, v in ordered]
        return self._rows(labels, lambda p, k: p["fairness"].get(k, {}).get("F"))

    def tables(self) -> dict:
        return {
            "classwise_accuracy_by_expression": self.expression_table(),
            "classwise_accuracy_by_subgroup": self.subgroup_table(),
            "fairness": self.fairness_table(),
        }

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"run_dir": str(r.run_dir), "approach": r.approach, "augmentation": r.augmented}
                for r in self.runs
            ],
            "eval_fingerprint": self.runs[0].fingerprint,
            "tables": {name: [{"row": label, "values": values} for label, values in rows]
                       for name, rows in self.tables().items()},
        }

    def _markdown_table(self, rows) -> list[str]:
        groups, names = [], []
        previous = None
        for aug, approach in self.column_labels:
            groups.append(aug if aug != previous else "")
            previous = aug
            names.append(approach)
        lines = _md_table(["", *groups], [["", *names]])
        for label, values in rows:
            present = [v for v in values if v is not None]
            best = max(present) if present else None
            cells = [f"**{pct(v)}**" if v is not None and v == best else pct(v) for v in values]
            lines.append("| " + " | ".join([label, *cells]) + " |")
        return lines

    def markdown(self) -> str:
        out = ["# Comparison", "", "Columns:", ""]
        out += [f"- {aug} / {name}: {r.run_dir.name}" for (aug, name), r in zip(self.column_labels, self.runs)]
        titles = {
            "classwise_accuracy_by_expression": "Class-wise accuracy (%) by expression",
            "classwise_accuracy_by_subgroup": "Mean class-wise accuracy (%) by subgroup",
            "fairness": "Fairness measure (%)",
        }
        for name, rows in self.tables().items():
            out += ["", f"## {titles[name]}", ""] + self._markdown_table(rows)
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js = out_dir / "compare.json"
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        md = out_dir / "compare.md"
        md.write_text(self.markdown(), encoding="utf-8")
        return js, md
