"""Report files: a human-readable table plus one tab-separated record per metric.

Record columns are ``protocol, dataset, metric, setting, value``. Figures are
written next to the record file by :mod:`transw.plotting`.
"""

import io
import os
from typing import Iterable, List, NamedTuple

from .evaluation import HITS_AT, ClassificationReport, LinkPredictionReport, UnknownFactReport
from .serialize import atomic_write

RECORD_HEADER = ("protocol", "dataset", "metric", "setting", "value")


class Record(NamedTuple):
    protocol: str
    dataset: str
    metric: str
    setting: str
    value: float


def link_prediction_records(report: LinkPredictionReport, dataset: str) -> List[Record]:
    return [Record("lp", dataset, m, s, v) for m, s, v in report.rows()]


def classification_records(report: ClassificationReport, dataset: str, relation_names=None) -> List[Record]:
    out = [Record("tc", dataset, "accuracy", "all", report.accuracy)]
    for r, (acc, _) in sorted(report.per_relation.items()):
        name = relation_names[r] if relation_names else str(r)
        out.append(Record("tc", dataset, "accuracy", f"relation={name}", acc))
    return out


def unknown_fact_records(report: UnknownFactReport, dataset: str) -> List[Record]:
    out = []
    for f in report.folds:
        fold = f"fold={f.fold + 1}"
        out += [
            Record("unknown", dataset, "accuracy", fold, f.mean),
            Record("unknown", dataset, "bias_low", fold, f.bias[0]),
            Record("unknown", dataset, "bias_high", fold, f.bias[1]),
            Record("unknown", dataset, "sigma", fold, f.sigma),
            Record("unknown", dataset, "train_facts", fold, f.train_facts),
            Record("unknown", dataset, "test_facts", fold, f.test_facts),
        ]
    lo, hi = report.mean_bias
    out += [Record("unknown", dataset, "accuracy", "mean", report.mean_accuracy),
            Record("unknown", dataset, "bias_low", "mean", lo),
            Record("unknown", dataset, "bias_high", "mean", hi)]
    return out


def format_value(v) -> str:
    if isinstance(v, int) or (isinstance(v, float) and v.is_integer() and abs(v) >= 1):
        return str(int(v))
    return f"{v:.6g}"


def records_text(records: Iterable[Record]) -> str:
    buf = io.StringIO()
    buf.write("\t".join(RECORD_HEADER) + "\n")
    for rec in records:
        buf.write("\t".join([rec.protocol, rec.dataset, rec.metric, rec.setting, format_value(rec.value)]) + "\n")
    return buf.getvalue()


def read_records(path) -> List[Record]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != RECORD_HEADER:
            raise ValueError(f"{path}: not a record file")
        for line in fh:
            p, d, m, s, v = line.rstrip("\n").split("\t")
            out.append(Record(p, d, m, s, float(v)))
    return out


def link_prediction_table(report: LinkPredictionReport, dataset: str) -> str:
    cols = [f"HITS@{n} {s}" for n in HITS_AT for s in ("raw", "filtered")]
    vals = [f"{100 * report.hits[(n, s)]:.2f}" for n in HITS_AT for s in ("raw", "filtered")]
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    lines = [f"Link prediction on {dataset} ({len(report.results)} ranked queries, %)",
             "  ".join(c.rjust(w) for c, w in zip(cols, widths)),
             "  ".join(v.rjust(w) for v, w in zip(vals, widths))]
    return "\n".join(lines) + "\n"


def classification_table(report: ClassificationReport, dataset: str, relation_names=None) -> str:
    lines = [f"Triple classification on {dataset}: accuracy {100 * report.accuracy:.2f}% over {report.n} triples",
             f"{'relation':<40} {'accuracy %':>10} {'n':>7}"]
    for r, (acc, n) in sorted(report.per_relation.items()):
        name = relation_names[r] if relation_names else str(r)
        lines.append(f"{name:<40} {100 * acc:>10.2f} {n:>7d}")
    return "\n".join(lines) + "\n"


def unknown_fact_table(report: UnknownFactReport, dataset: str) -> str:
    head = f"{'fold':>4} {'train facts/rels':>18} {'test facts/rels':>17} {'accuracy %':>10} {'bias %':>16} {'sigma':>10}"
    lines = [f"Unknown-relation detection on {dataset}", head]
    for f in report.folds:
        lo, hi = f.bias
        lines.append(f"{f.fold + 1:>4} {f'{f.train_facts}/{f.train_relations}':>18} "
                     f"{f'{f.test_facts}/{f.test_relations}':>17} {100 * f.mean:>10.2f} "
                     f"{f'({100 * lo:+.2f},{100 * hi:+.2f})':>16} {f.sigma:>10.4g}")
    lo, hi = report.mean_bias
    lines.append(f"{'mean':>4} {'':>18} {'':>17} {100 * report.mean_accuracy:>10.2f} "
                 f"{f'({100 * lo:+.2f},{100 * hi:+.2f})':>16}")
    return "\n".join(lines) + "\n"


def write_report(out_dir, stem: str, records: List[Record], table: str, figure=None) -> dict:
    """Write ``<stem>.tsv`` and ``<stem>.txt`` (and ``<stem>.png`` when a figure is given)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"records": os.path.join(out_dir, f"{stem}.tsv"), "table": os.path.join(out_dir, f"{stem}.txt")}
    atomic_write(paths["records"], records_text(records).encode("utf-8"))
    atomic_write(paths["table"], table.encode("utf-8"))
    if figure is not None:
        from .plotting import save_figure
        paths["figure"] = os.path.join(out_dir, f"{stem}.png")
        save_figure(figure, paths["figure"])
    return paths
