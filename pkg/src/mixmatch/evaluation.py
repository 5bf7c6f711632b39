"""Embedding-quality metrics, the strategy and graph-size experiments, CSV/SVG output."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from html import escape

import numpy as np

from .data import STREAM_EVAL, derive_rng
from .estimator import MixMatchEmbedder
from .graph import TripletError
from .metric import normalize, triplet_loss
from .sampling import sample_patches
from .tuning import make_triplets

log = logging.getLogger(__name__)

CSV_FIELDS = ("seed", "arm", "triplet_satisfaction", "knn_accuracy", "intra_inter_ratio",
              "iters", "wall_ms")
METRICS = ("triplet_satisfaction", "knn_accuracy", "intra_inter_ratio")
TIMING_FIELDS = ("wall_ms", "wall_ms_mean")


class EvaluationError(ValueError):
    """The evaluation batch cannot support the metrics (e.g. a single class)."""


@dataclass(frozen=True)
class EvalReport:
    triplet_satisfaction: float
    knn_accuracy: float
    intra_inter_ratio: float

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def pairwise_distances(embeddings) -> np.ndarray:
    u = normalize(embeddings)
    diff = u[:, None, :] - u[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_accuracy(embeddings, labels) -> float:
    """Leave-one-out 1-NN accuracy under the perceptual distance."""
    labels = np.asarray(labels)
    if len(labels) < 2:
        raise EvaluationError("1-NN needs at least two samples")
    D = pairwise_distances(embeddings)
    np.fill_diagonal(D, np.inf)
    return float(np.mean(labels[np.argmin(D, axis=1)] == labels))


def intra_inter_ratio(embeddings, labels) -> float:
    """Mean same-class distance over mean cross-class distance (pairs i < j)."""
    labels = np.asarray(labels)
    D = pairwise_distances(embeddings)
    iu = np.triu_indices(len(labels), k=1)
    same = (labels[:, None] == labels[None, :])[iu]
    d = D[iu]
    if not same.any() or same.all():
        raise EvaluationError("ratio needs both same-class and cross-class pairs")
    inter = d[~same].mean()
    if inter <= 0:
        raise EvaluationError("all cross-class pairs coincide")
    return float(d[same].mean() / inter)


def evaluate(embedder, images, cfg, seed) -> EvalReport:
    """Score ``embedder`` on a held-out batch drawn from every image once.

    The batch and its triplets come from the evaluation stream of ``seed``, so
    they never coincide with training draws and are shared by every model
    evaluated with the same ``(images, cfg, seed)``.
    """
    embedder = getattr(embedder, "embedder_", embedder)
    batch = sample_patches(images, cfg, derive_rng(seed, STREAM_EVAL, 0))
    labels = batch.labels
    if len(np.unique(labels)) < 2:
        raise EvaluationError("evaluation batch holds a single class")
    emb = embedder.forward(batch.pixel_matrix())
    try:
        trip = make_triplets(batch, "graph", derive_rng(seed, STREAM_EVAL, 1))
    except TripletError as exc:
        raise EvaluationError(str(exc)) from exc
    return EvalReport(
        triplet_satisfaction=triplet_loss(emb, trip, cfg.margin_alpha).satisfaction,
        knn_accuracy=knn_accuracy(emb, labels),
        intra_inter_ratio=intra_inter_ratio(emb, labels),
    )


# ------------------------------------------------------------ experiments

@dataclass
class ExperimentResult:
    experiment: str
    rows: list = field(default_factory=list)  # dicts keyed by CSV_FIELDS
    failures: list = field(default_factory=list)  # (seed, arm, message)

    def arms(self) -> list:
        seen = []
        for r in self.rows:
            if r["arm"] not in seen:
                seen.append(r["arm"])
        return seen

    def values(self, arm, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r["arm"] == arm], dtype=float)

    def summary(self) -> list:
        out = []
        for arm in self.arms():
            s = {"arm": arm, "runs": len(self.values(arm, "iters"))}
            for m in METRICS:
                v = self.values(arm, m)
                s[f"{m}_mean"] = float(v.mean())
                s[f"{m}_std"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
            s["wall_ms_mean"] = float(self.values(arm, "wall_ms").mean())
            out.append(s)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in CSV_FIELDS])
        summary = self.summary()
        if summary:
            w.writerow([])
            w.writerow(list(summary[0]))
            for s in summary:
                w.writerow([_fmt(v) for v in s.values()])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


def _fmt(v) -> str:
    # repr round-trips floats exactly, which keeps the CSVs byte-comparable
    return repr(v) if isinstance(v, float) else str(v)


def csv_without_timing(text: str) -> str:
    """Drop wall-clock columns so two result files can be compared byte for byte."""
    out = []
    drop = set()
    for line in text.splitlines():
        cells = line.split(",") if line else []
        if cells and cells[0] in ("seed", "arm"):
            drop = {i for i, c in enumerate(cells) if c in TIMING_FIELDS}
        out.append(",".join(c for i, c in enumerate(cells) if i not in drop))
    return "\n".join(out) + "\n"


def _run_arm(images, cfg, seed, arm, label, variant, result):
    try:
        model = MixMatchEmbedder.from_config(cfg, strategy=arm, variant=variant).fit(images)
        report = evaluate(model.embedder_, images, cfg, seed)
    except (TripletError, EvaluationError, ValueError) as exc:
        log.warning("seed %s arm %s failed: %s", seed, label, exc)
        result.failures.append((seed, label, str(exc)))
        return None
    row = {"seed": seed, "arm": label, **report.as_dict(), "iters": model.n_iter_,
           "wall_ms": model.ms_per_iteration_}
    result.rows.append(row)
    return row


def compare_strategies(images, cfg, seeds, variant="two-layer") -> ExperimentResult:
    """Train a graph-strategy and a random-triplet embedder per seed.

    Both arms share initialisation, patch streams and evaluation batch; only
    the triplet selection differs.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("compare_strategies needs at least two seeds")
    result = ExperimentResult("compare")
    for seed in seeds:
        run_cfg = replace(cfg, seed=int(seed))
        for arm in ("graph", "random"):
            _run_arm(images, run_cfg, seed, arm, arm, variant, result)
    return result


def batch_size_for_nodes(target: int, patches_per_image: int) -> int:
    if target < patches_per_image or target % patches_per_image:
        raise ValueError(
            f"node target {target} is not a positive multiple of "
            f"{patches_per_image} patches per image"
        )
    return target // patches_per_image


def sweep_graph_size(images, cfg, node_targets, seeds, variant="two-layer") -> ExperimentResult:
    """Vary images per batch so each graph holds ``target`` nodes."""
    sizes = [(int(t), batch_size_for_nodes(int(t), cfg.patches_per_image)) for t in node_targets]
    result = ExperimentResult("sweep")
    for target, per_batch in sizes:
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed), images_per_batch=per_batch)
            _run_arm(images, run_cfg, seed, "graph", f"nodes{target}", variant, result)
    return result


# ------------------------------------------------------------------- SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def line_chart_svg(series: dict, title: str, xlabel: str, ylabel: str,
                   width=480, height=320) -> str:
    """Minimal standalone SVG line chart; ``series`` maps name -> (xs, ys)."""
    pad_l, pad_r, pad_t, pad_b = 56, 110, 32, 44
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    x0, x1 = xs.min(), xs.max()
    y0, y1 = min(ys.min(), 0.0), max(ys.max(), 1e-9)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{pad_l - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for xv in (x0, x1):
        parts.append(f'<text x="{px(xv):.1f}" y="{pad_t + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
    for k, (name, (sx, sy)) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(sx, sy))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, b in zip(sx, sy):
            parts.append(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="2.5" fill="{color}"/>')
        ly = pad_t + 14 * k + 6
        parts.append(f'<rect x="{pad_l + pw + 10}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{pad_l + pw + 24}" y="{ly + 1}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def experiment_svg(result: ExperimentResult) -> str:
    if result.experiment == "sweep":
        nodes = [int(a.removeprefix("nodes")) for a in result.arms()]
        means = [result.values(a, "knn_accuracy").mean() for a in result.arms()]
        return line_chart_svg({"graph": (nodes, means)}, "1-NN accuracy vs graph size",
                              "nodes per graph", "mean 1-NN accuracy")
    series = {}
    for arm in result.arms():
        seeds = [r["seed"] for r in result.rows if r["arm"] == arm]
        series[arm] = (seeds, result.values(arm, "knn_accuracy"))
    return line_chart_svg(series, "1-NN accuracy per seed", "seed", "1-NN accuracy")
