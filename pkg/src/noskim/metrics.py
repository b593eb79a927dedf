"""Dataset-level efficiency metrics, stealthiness and report rendering."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyTextError
from .model import SkimTransformer, remaining_token_ratio
from .tokenizer import Tokenizer

REPORT_VERSION = 1
DEFAULT_BINS = 1000


def _masks(items):
    return [np.asarray(getattr(t, "hard_masks", t), dtype=np.float64) for t in items]


def per_sample_rtr(traces) -> list[float]:
    return [float((m.sum(axis=1) / m.shape[1]).mean()) for m in _masks(traces)]


def layer_retention_curve(traces) -> list[float]:
    """Mean fraction of tokens kept at each layer, averaged over the dataset."""
    masks = _masks(traces)
    if not masks:
        return []
    return np.mean([m.sum(axis=1) / m.shape[1] for m in masks], axis=0).tolist()


def arr(traces) -> float:
    """Average remaining ratio over a dataset of traces (or L x n mask arrays).

    Summed in exact rational arithmetic and rounded once, so the value does not
    depend on summation order.
    """
    masks = _masks(traces)
    if not masks:
        raise ValueError("arr needs a non-empty dataset")
    layers = {m.shape[0] for m in masks}
    if len(layers) != 1:
        raise ValueError(f"mixed layer counts {sorted(layers)}")
    total = sum(Fraction(int(m.sum()), m.shape[1]) for m in masks)
    return float(total / (layers.pop() * len(masks)))


def crr(rtrs: Sequence[float], bins: int = DEFAULT_BINS) -> float:
    """Area under the empirical CDF of per-sample ratios on [0, 1], midpoint rule."""
    r = np.asarray(rtrs, dtype=np.float64)
    if r.size == 0:
        raise ValueError("crr needs a non-empty dataset")
    grid = (np.arange(bins) + 0.5) / bins
    cdf = (r[None, :] <= grid[:, None]).mean(axis=1)
    return float(cdf.mean())


def cdf_curve(values: Sequence[float], grid: Sequence[float]) -> list[float]:
    v = np.asarray(values, dtype=np.float64)
    return [float((v <= x).mean()) if v.size else 0.0 for x in grid]


class ReferenceEmbedding:
    """Sentence vectors from mean-pooled (frozen) input token embeddings."""

    def __init__(self, table: np.ndarray, tokenizer: Tokenizer):
        self.table = np.asarray(table, dtype=np.float64)
        self.tokenizer = tokenizer

    @classmethod
    def from_model(cls, model: SkimTransformer, tokenizer: Tokenizer) -> "ReferenceEmbedding":
        return cls(model.tok_emb.weight.detach().numpy().copy(), tokenizer)

    def embed(self, text: str) -> np.ndarray:
        ids = self.tokenizer.tokenize(text).ids[1:]
        if not ids:
            raise EmptyTextError("no content tokens to embed")
        return self.table[list(ids)].mean(axis=0)


def similarity(original: str, adversarial: str, ref: ReferenceEmbedding) -> float:
    a, b = ref.embed(original), ref.embed(adversarial)
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return max(-1.0, min(1.0, cos))


@dataclass
class DatasetEfficiency:
    rtr: list
    layer_curve: list
    arr: float
    crr: float

    @classmethod
    def from_traces(cls, traces, bins: int = DEFAULT_BINS) -> "DatasetEfficiency":
        if not traces:
            return cls([], [], float("nan"), float("nan"))
        r = per_sample_rtr(traces)
        return cls(r, layer_retention_curve(traces), arr(traces), crr(r, bins))


@dataclass
class PairReport:
    similarity: float
    label_preserved: bool
    rtr_before: float
    rtr_after: float
    queries: int
    wall_time: float
    correct_before: bool | None = None
    correct_after: bool | None = None


@dataclass
class PairEvaluation:
    before: DatasetEfficiency
    after: DatasetEfficiency
    pairs: list = field(default_factory=list)
    accuracy_before: float = float("nan")
    accuracy_after: float = float("nan")

    @property
    def mean_similarity(self) -> float:
        return float(np.mean([p.similarity for p in self.pairs])) if self.pairs else float("nan")

    @property
    def mean_queries(self) -> float:
        return float(np.mean([p.queries for p in self.pairs])) if self.pairs else float("nan")

    @property
    def mean_wall_time(self) -> float:
        return float(np.mean([p.wall_time for p in self.pairs])) if self.pairs else float("nan")


def _traces(model, tokenizer, texts, batch=256):
    out = []
    for i in range(0, len(texts), batch):
        out.extend(model.forward_many(tokenizer.tokenize_many(texts[i:i + batch])))
    return out


def evaluate_pairs(model: SkimTransformer, tokenizer: Tokenizer, results, bins: int = DEFAULT_BINS,
                   ref: ReferenceEmbedding | None = None) -> PairEvaluation:
    """Efficiency, accuracy and similarity of (original, adversarial) pairs.

    ``results`` are :class:`~noskim.attack.AttackResult` objects; their
    ``gold_label`` (when set) drives the accuracy columns.
    """
    ref = ref or ReferenceEmbedding.from_model(model, tokenizer)
    orig = [r.original_text for r in results]
    adv = [r.adversarial_text for r in results]
    tb, ta = _traces(model, tokenizer, orig), _traces(model, tokenizer, adv)
    out = PairEvaluation(DatasetEfficiency.from_traces(tb, bins), DatasetEfficiency.from_traces(ta, bins))
    hits_b, hits_a = [], []
    for r, x, y in zip(results, tb, ta):
        yb, ya = int(np.argmax(x.logits)), int(np.argmax(y.logits))
        r.similarity = similarity(r.original_text, r.adversarial_text, ref)
        r.original_label, r.adversarial_label = yb, ya
        cb = ca = None
        if r.gold_label is not None:
            cb, ca = yb == r.gold_label, ya == r.gold_label
            hits_b.append(cb)
            hits_a.append(ca)
        out.pairs.append(PairReport(r.similarity, yb == ya, remaining_token_ratio(x), remaining_token_ratio(y),
                                    r.total_queries, r.wall_time, cb, ca))
    if hits_b:
        out.accuracy_before = float(np.mean(hits_b))
        out.accuracy_after = float(np.mean(hits_a))
    return out


# -- report files ---------------------------------------------------------------

CSV_COLUMNS = ("scenario", "ops", "arr", "crr", "accuracy", "mean_similarity", "mean_queries", "mean_wall_time")


def budget_row(scenario: str, ops: int, ev: PairEvaluation) -> dict:
    return {
        "scenario": scenario,
        "ops": ops,
        "arr": ev.after.arr,
        "crr": ev.after.crr,
        "accuracy": ev.accuracy_after,
        "mean_similarity": ev.mean_similarity,
        "mean_queries": ev.mean_queries,
        "mean_wall_time": ev.mean_wall_time,
        "layer_curve": ev.after.layer_curve,
        "rtr": ev.after.rtr,
        "similarities": [p.similarity for p in ev.pairs],
    }


def build_report(config: dict, origin: PairEvaluation | None, per_budget: list, pairs: list | None = None,
                 extra: dict | None = None) -> dict:
    """Assemble the versioned report document."""
    report = {
        "report_version": REPORT_VERSION,
        "config": config,
        "origin": None if origin is None else {
            "arr": origin.before.arr,
            "crr": origin.before.crr,
            "accuracy": origin.accuracy_before,
            "layer_curve": origin.before.layer_curve,
            "rtr": origin.before.rtr,
        },
        "per_budget": per_budget,
        "pairs": pairs or [],
    }
    if extra:
        report.update(extra)
    return report


def _clean(obj):
    """NaN -> None so the JSON stays standard."""
    if isinstance(obj, float):
        return None if obj != obj else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(report), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(report: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.get("per_budget", []) + report.get("baselines", []):
            w.writerow(["" if row.get(c) is None else repr(row.get(c)) if isinstance(row.get(c), float)
                        else row.get(c) for c in CSV_COLUMNS])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["ops"] = int(r["ops"])
        for c in CSV_COLUMNS[2:]:
            r[c] = float(r[c]) if r[c] != "" else None
    return rows


def _svg_figure(draw, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "noskim", "svg.fonttype": "none"}):
        fig = draw(plt)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)


def _by_scenario(report):
    groups = {}
    for row in report.get("per_budget", []):
        groups.setdefault(row["scenario"], []).append(row)
    return groups


def write_svgs(report: dict, out_dir) -> list[Path]:
    """Layer-retention curves, cumulative ratio distributions and similarity CDFs."""
    out_dir = Path(out_dir)
    groups = _by_scenario(report)
    origin = report.get("origin") or {}
    names = sorted(groups) or ["(none)"]
    grid = np.linspace(0, 1, 101)

    def panels(plt, title):
        fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 3.2), squeeze=False)
        fig.suptitle(title)
        return fig, axes[0]

    def retention(plt):
        fig, axes = panels(plt, "Mean fraction of tokens kept per layer")
        for ax, name in zip(axes, names):
            if origin.get("layer_curve"):
                c = origin["layer_curve"]
                ax.plot(range(1, len(c) + 1), c, "k--", label="origin")
            for row in groups.get(name, []):
                c = row.get("layer_curve") or []
                ax.plot(range(1, len(c) + 1), c, label=f"ops={row['ops']}")
            ax.set_title(name)
            ax.set_xlabel("layer")
            ax.set_ylim(0, 1.05)
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=7)
        fig.tight_layout()
        return fig

    def cumulative(plt):
        fig, axes = panels(plt, "Cumulative distribution of remaining-token ratio")
        for ax, name in zip(axes, names):
            if origin.get("rtr"):
                ax.plot(grid, cdf_curve(origin["rtr"], grid), "k--", label="origin")
            for row in groups.get(name, []):
                ax.plot(grid, cdf_curve(row.get("rtr") or [], grid), label=f"ops={row['ops']}")
            ax.set_title(name)
            ax.set_xlabel("remaining-token ratio")
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=7)
        fig.tight_layout()
        return fig

    def sims(plt):
        fig, axes = panels(plt, "Cumulative distribution of similarity")
        for ax, name in zip(axes, names):
            for row in groups.get(name, []):
                ax.plot(grid, cdf_curve(row.get("similarities") or [], grid), label=f"ops={row['ops']}")
            ax.set_title(name)
            ax.set_xlabel("cosine similarity")
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=7)
        fig.tight_layout()
        return fig

    out_dir.mkdir(parents=True, exist_ok=True)
    return [_svg_figure(retention, out_dir / "curves_retention.svg"),
            _svg_figure(cumulative, out_dir / "curves_crr.svg"),
            _svg_figure(sims, out_dir / "curves_similarity.svg")]


def emit_report(report: dict, out_dir, formats: Sequence[str] = ("json", "csv", "svg")) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc}") from exc
    paths = []
    if "json" in formats:
        paths.append(write_json(report, out_dir / "report.json"))
    if "csv" in formats:
        paths.append(write_csv(report, out_dir / "report.csv"))
    if "svg" in formats:
        paths.extend(write_svgs(report, out_dir))
    return paths
