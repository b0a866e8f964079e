"""Rank/linear correlation metrics, macro classification metrics, the random
Gaussian baseline, and whole-model evaluation reports.

The raw metric operations are strict: constant input raises
DegenerateInputError("undefined: zero variance"). Batch evaluation stays
total by reporting such correlations as 0 with a ``degenerate`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, SchemaMismatchError, SkillGraphError
from .gnn import GnnModel, positional_features, predict_logits
from .graph import SurgicalGraph
from .util import canonical_json_dumps, get_logger

log = get_logger(__name__)


@dataclass
class MetricsReport:
    category: str
    mode: str | None
    n: int
    pearson: float
    spearman: float
    kendall: float
    precision: float
    recall: float
    f1: float
    degenerate: bool = False
    runs: int | None = None

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "mode": self.mode,
            "n": self.n,
            "pearson": self.pearson,
            "spearman": self.spearman,
            "kendall": self.kendall,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "degenerate": self.degenerate,
            "runs": self.runs,
        }

    def to_json(self) -> str:
        return canonical_json_dumps(self.to_dict())

    @staticmethod
    def from_dict(obj: dict) -> "MetricsReport":
        return MetricsReport(**obj)


def _as_float_array(x, name: str, min_len: int = 2) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1 or len(a) < min_len:
        raise SkillGraphError(f"{name} must be a 1-D sequence of length >= {min_len}")
    return a


def pearson(x, y) -> float:
    """Sample linear correlation coefficient."""
    x = _as_float_array(x, "x")
    y = _as_float_array(y, "y")
    if len(x) != len(y):
        raise SkillGraphError("inputs must have equal length")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("undefined: zero variance")
    return float(np.sum(dx * dy) / (sx * sy))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average-ranked data."""
    x = _as_float_array(x, "x")
    y = _as_float_array(y, "y")
    if len(x) != len(y):
        raise SkillGraphError("inputs must have equal length")
    return pearson(average_ranks(x), average_ranks(y))


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall rank correlation (tau-b), O(n^2) pair counting."""
    x = _as_float_array(x, "x")
    y = _as_float_array(y, "y")
    if len(x) != len(y):
        raise SkillGraphError("inputs must have equal length")
    iu = np.triu_indices(len(x), k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    concordant_minus_discordant = float(np.sum(sx * sy))
    n0 = len(iu[0])
    tied_x = n0 - float(np.sum(sx != 0))
    tied_y = n0 - float(np.sum(sy != 0))
    denom = np.sqrt((n0 - tied_x) * (n0 - tied_y))
    if denom == 0.0:
        raise DegenerateInputError("undefined: zero variance")
    return float(concordant_minus_discordant / denom)


def prf1(pred, truth) -> tuple[float, float, float]:
    """Macro precision/recall/F1 over classes present in truth or predictions.

    Empty denominators contribute 0 (never NaN); per-class F1 is the harmonic
    mean, macro-averaged afterwards.
    """
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth) or len(pred) < 1:
        raise SkillGraphError("pred and truth must be equal-length, non-empty")
    classes = sorted(set(truth) | set(pred))
    precisions, recalls, f1s = [], [], []
    for c in classes:
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return (
        float(np.mean(precisions)),
        float(np.mean(recalls)),
        float(np.mean(f1s)),
    )


def _safe_corr(fn, x, y) -> tuple[float, bool]:
    try:
        return fn(x, y), False
    except DegenerateInputError:
        return 0.0, True


def gaussian_baseline(
    truth,
    ordinal_scale: tuple[int, int],
    runs: int = 10,
    seed: int = 0,
    category: str = "Overall",
    mode: str | None = None,
) -> MetricsReport:
    """Random predictor baseline: metrics averaged over seeded Gaussian runs.

    Per run, predictions are drawn from a Gaussian moment-matched to the
    truth (population std); correlations use the raw draws, classification
    metrics the draws rounded and clamped to the ordinal scale. Run r uses
    the subseed seed + r.
    """
    t = _as_float_array(truth, "truth")
    if np.all(t == t[0]):
        raise DegenerateInputError("undefined: zero variance")
    mu = float(t.mean())
    sigma = float(t.std())
    cols = {k: [] for k in ("pearson", "spearman", "kendall",
                            "precision", "recall", "f1")}
    degenerate = False
    for r in range(runs):
        rng = np.random.default_rng(seed + r)
        raw = rng.normal(mu, sigma, size=len(t))
        pe, d1 = _safe_corr(pearson, raw, t)
        sp, d2 = _safe_corr(spearman, raw, t)
        kt, d3 = _safe_corr(kendall_tau, raw, t)
        degenerate = degenerate or d1 or d2 or d3
        clamped = np.clip(np.rint(raw), ordinal_scale[0], ordinal_scale[1]).astype(int)
        p, rc, f = prf1(list(clamped), [int(v) for v in t])
        for k, v in zip(cols, (pe, sp, kt, p, rc, f)):
            cols[k].append(v)
    return MetricsReport(
        category=category,
        mode=mode,
        n=len(t),
        pearson=float(np.mean(cols["pearson"])),
        spearman=float(np.mean(cols["spearman"])),
        kendall=float(np.mean(cols["kendall"])),
        precision=float(np.mean(cols["precision"])),
        recall=float(np.mean(cols["recall"])),
        f1=float(np.mean(cols["f1"])),
        degenerate=degenerate,
        runs=runs,
    )


def predict_ordinal(model: GnnModel, graph: SurgicalGraph,
                    positional: np.ndarray | None = None) -> int:
    logits = predict_logits(model, graph, positional)
    return model.ordinal_min + int(np.argmax(logits))


def evaluate_model(
    model: GnnModel,
    graphs: list[SurgicalGraph],
    category: str | None = None,
    mode: str | None = None,
    expected_schema_id: str | None = None,
) -> MetricsReport:
    """Score a trained model on labeled graphs (argmax class per clip).

    Correlations compare predicted and true ordinal values; constant inputs
    are reported as 0 with the degenerate flag instead of failing the batch.
    """
    category = category or model.category
    if model.category and category != model.category:
        raise SkillGraphError(
            f"model was trained for category {model.category!r}, asked for {category!r}"
        )
    if expected_schema_id is not None and model.feature_schema_id != expected_schema_id:
        raise SchemaMismatchError(
            f"checkpoint feature schema {model.feature_schema_id!r} does not match "
            f"dataset schema {expected_schema_id!r}"
        )
    if not graphs:
        raise SkillGraphError("empty evaluation split")
    graphs = sorted(graphs, key=lambda g: g.clip_id)
    preds, truths = [], []
    for g in graphs:
        if g.labels is None or category not in g.labels:
            raise SkillGraphError(f"graph {g.clip_id!r} has no label {category!r}")
        pos = positional_features(g.A, model.spectral_k) if model.use_positional else None
        preds.append(predict_ordinal(model, g, pos))
        truths.append(int(g.labels[category]))

    degenerate = False
    if len(preds) >= 2:
        pe, d1 = _safe_corr(pearson, preds, truths)
        sp, d2 = _safe_corr(spearman, preds, truths)
        kt, d3 = _safe_corr(kendall_tau, preds, truths)
        degenerate = d1 or d2 or d3
    else:
        pe = sp = kt = 0.0
        degenerate = True
    p, r, f = prf1(preds, truths)
    return MetricsReport(category, mode, len(preds), pe, sp, kt, p, r, f, degenerate)


TABLE_COLUMNS = ("Method", "Category", "Mode", "N", "Pearson", "Spearman",
                 "Kendall", "Precision", "Recall", "F1")


def format_reports(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table; one row per (method label, report)."""
    body = []
    for method, rep in rows:
        body.append(
            (
                method,
                rep.category,
                rep.mode or "-",
                str(rep.n),
                f"{rep.pearson:.3f}",
                f"{rep.spearman:.3f}",
                f"{rep.kendall:.3f}",
                f"{rep.precision:.3f}",
                f"{rep.recall:.3f}",
                f"{rep.f1:.3f}",
            )
        )
    widths = [
        max(len(TABLE_COLUMNS[c]), *(len(r[c]) for r in body)) if body else len(TABLE_COLUMNS[c])
        for c in range(len(TABLE_COLUMNS))
    ]
    def fmt(row):
        return "  ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip()

    lines = [fmt(TABLE_COLUMNS), fmt(tuple("-" * w for w in widths))]
    lines.extend(fmt(r) for r in body)
    return "\n".join(lines) + "\n"
