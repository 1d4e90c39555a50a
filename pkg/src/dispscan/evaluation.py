"""Classification metrics and comparison reports.

Recognition rates follow the row-normalized confusion-matrix convention:
the percentage of each true class that was classified correctly.
Undefined ratios (empty denominators) are reported as None, never as 0.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NonBinaryLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def n(self):
        return self.tn + self.fp + self.fn + self.tp

    @property
    def accuracy(self):
        return (self.tn + self.tp) / self.n if self.n else None

    @property
    def recall_dispersed(self):
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def recall_stable(self):
        d = self.tn + self.fp
        return self.tn / d if d else None

    @property
    def precision_dispersed(self):
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def precision_stable(self):
        d = self.tn + self.fn
        return self.tn / d if d else None

    @property
    def balanced_accuracy(self):
        r0, r1 = self.recall_stable, self.recall_dispersed
        if r0 is None or r1 is None:
            return None
        return 0.5 * (r0 + r1)

    def recognition_rates(self):
        """Row-normalized percentages, 2 decimals: {true class: (correct %, wrong %)}."""
        out = {}
        for name, correct, wrong in (("stable", self.tn, self.fp),
                                     ("dispersed", self.tp, self.fn)):
            total = correct + wrong
            if total:
                out[name] = (round(100.0 * correct / total, 2),
                             round(100.0 * wrong / total, 2))
            else:
                out[name] = (None, None)
        return out

    def to_dict(self):
        return {
            "tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "recall_stable": self.recall_stable,
            "recall_dispersed": self.recall_dispersed,
            "precision_stable": self.precision_stable,
            "precision_dispersed": self.precision_dispersed,
            "recognition_rates": self.recognition_rates(),
        }


def confusion(labels_true, labels_pred):
    yt = np.asarray(labels_true).reshape(-1)
    yp = np.asarray(labels_pred).reshape(-1)
    if yt.shape != yp.shape:
        raise LengthMismatch(f"{yt.shape[0]} true labels vs {yp.shape[0]} predictions")
    for arr, which in ((yt, "true"), (yp, "predicted")):
        if not np.isin(arr, (0, 1)).all():
            raise NonBinaryLabel(f"{which} labels must be 0 or 1")
    tn = int(np.sum((yt == 0) & (yp == 0)))
    fp = int(np.sum((yt == 0) & (yp == 1)))
    fn = int(np.sum((yt == 1) & (yp == 0)))
    tp = int(np.sum((yt == 1) & (yp == 1)))
    return ConfusionMatrix(tn, fp, fn, tp)


@dataclass(frozen=True)
class EvaluationReport:
    confusion: ConfusionMatrix
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {"confusion": self.confusion.to_dict(), "info": dict(self.info)}


@dataclass
class ComparisonReport:
    """One confusion matrix per (encoding, classifier) cell."""

    entries: list = field(default_factory=list)    # dicts with encoding/classifier/confusion
    metadata: dict = field(default_factory=dict)

    def add(self, encoding, classifier, cm, info=None):
        self.entries.append({"encoding": encoding, "classifier": classifier,
                             "confusion": cm, "info": dict(info or {})})

    def cell(self, encoding, classifier):
        for e in self.entries:
            if e["encoding"] == encoding and e["classifier"] == classifier:
                return e["confusion"]
        raise KeyError(f"no entry for ({encoding}, {classifier})")

    def to_dict(self):
        return {
            "metadata": dict(self.metadata),
            "entries": [{"encoding": e["encoding"], "classifier": e["classifier"],
                         "confusion": e["confusion"].to_dict(), "info": e["info"]}
                        for e in self.entries],
        }

    def to_text(self):
        rows = [("encoding", "classifier", "acc", "bal_acc",
                 "recall_stable", "recall_dispersed")]
        for e in self.entries:
            cm = e["confusion"]

            def fmt(v):
                return "undef" if v is None else f"{v:.4f}"

            rows.append((e["encoding"], e["classifier"], fmt(cm.accuracy),
                         fmt(cm.balanced_accuracy), fmt(cm.recall_stable),
                         fmt(cm.recall_dispersed)))
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines) + "\n"

    def to_svg(self):
        """Static bar chart of per-class recognition rates."""
        bar_w, gap, block_gap = 28, 6, 30
        chart_h, base_y, left = 220, 260, 60
        blocks = []
        x = left
        for e in self.entries:
            rates = e["confusion"].recognition_rates()
            vals = [(rates["stable"][0], "#4878a8"), (rates["dispersed"][0], "#c05040")]
            bars = []
            for v, color in vals:
                h = 0.0 if v is None else chart_h * v / 100.0
                bars.append((x, h, color, v))
                x += bar_w + gap
            label = f"{e['encoding']}/{e['classifier']}"
            blocks.append((bars, label))
            x += block_gap
        width = x + 20
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="320">',
                 '<style>text{font-family:monospace;font-size:10px}</style>',
                 f'<line x1="{left - 10}" y1="{base_y}" x2="{width - 10}" y2="{base_y}" '
                 'stroke="black"/>']
        for frac in (0.0, 0.5, 1.0):
            y = base_y - chart_h * frac
            parts.append(f'<text x="10" y="{y + 3:.1f}">{int(frac * 100)}%</text>')
        for bars, label in blocks:
            for bx, h, color, v in bars:
                parts.append(f'<rect x="{bx}" y="{base_y - h:.2f}" width="{bar_w}" '
                             f'height="{h:.2f}" fill="{color}"/>')
                shown = "n/a" if v is None else f"{v:.1f}"
                parts.append(f'<text x="{bx}" y="{base_y - h - 4:.2f}">{shown}</text>')
            mid = bars[0][0]
            parts.append(f'<text x="{mid}" y="{base_y + 14}" '
                         f'transform="rotate(25 {mid} {base_y + 14})">{label}</text>')
        parts.append('<rect x="10" y="10" width="12" height="12" fill="#4878a8"/>'
                     '<text x="26" y="20">stable recognition %</text>'
                     '<rect x="10" y="28" width="12" height="12" fill="#c05040"/>'
                     '<text x="26" y="38">dispersed recognition %</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"
