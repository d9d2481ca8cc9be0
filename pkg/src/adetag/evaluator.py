"""Scoring and analysis: micro token P/R/F1 per task (span-level as a
secondary reading), per-sample F1 distributions, the correlation between
the two tasks, and attention-matrix export."""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .network import MODE_INFERENCE

ER_POSITIVE = ("B-Drug", "I-Drug", "B-Disease", "I-Disease")
ADE_POSITIVE = (1,)


def prf_counts(gold, pred, positive_set):
    """Micro token counts. TP: pred == gold in the positive set; FP: pred
    positive but wrong; FN: gold positive but missed."""
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} pred")
    positive = set(positive_set)
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        if p in positive and g == p:
            tp += 1
        else:
            if p in positive:
                fp += 1
            if g in positive:
                fn += 1
    return tp, fp, fn


def prf_from_counts(tp, fp, fn):
    """Percent-scale (P, R, F1); zero denominators give 0, never NaN."""
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def token_prf(gold, pred, positive_set):
    return prf_from_counts(*prf_counts(gold, pred, positive_set))


def bio_spans(labels):
    """Exact BIO spans as (type, start, end) triples."""
    spans = []
    start, kind = None, None
    for i, lab in enumerate(labels + ["O"]):
        if lab.startswith("B-") or lab == "O" or (
                lab.startswith("I-") and lab[2:] != kind):
            if start is not None:
                spans.append((kind, start, i))
                start, kind = None, None
            if lab.startswith("B-"):
                start, kind = i, lab[2:]
            elif lab.startswith("I-"):
                # dangling I- treated as span start, keeps scoring total
                start, kind = i, lab[2:]
    return spans


def binary_runs(labels):
    """Maximal runs of 1s as (start, end) spans."""
    spans, start = [], None
    for i, v in enumerate(list(labels) + [0]):
        if v == 1 and start is None:
            start = i
        elif v != 1 and start is not None:
            spans.append((start, i))
            start = None
    return spans


def span_prf(gold_spans, pred_spans):
    gold_set, pred_set = set(gold_spans), set(pred_spans)
    tp = len(gold_set & pred_set)
    return prf_from_counts(tp, len(pred_set) - tp, len(gold_set) - tp)


def pearson(xs, ys):
    """Pearson correlation; None when either side has zero variance."""
    if len(xs) != len(ys) or len(xs) < 2:
        return None
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    xd, yd = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.dot(xd, xd)) * float(np.dot(yd, yd)))
    if denom == 0.0:
        return None
    return float(np.dot(xd, yd) / denom)


@dataclass
class EvalReport:
    er: tuple                  # (P, R, F1), percent
    ade: tuple
    er_span: tuple             # secondary, exact-match span reading
    ade_span: tuple
    per_sample: list           # (sample id, er_f1, ade_f1)
    histogram_bins: dict       # decile counts per task; bins sum to n
    pearson_r: float | None
    n_samples: int
    flags: list = field(default_factory=list)

    def to_dict(self):
        def triple(t):
            return {"p": t[0], "r": t[1], "f1": t[2]}
        return {
            "er": triple(self.er),
            "ade": triple(self.ade),
            "er_span": triple(self.er_span),
            "ade_span": triple(self.ade_span),
            "per_sample": [{"id": i, "er_f1": e, "ade_f1": a}
                           for i, e, a in self.per_sample],
            "histogram_bins": self.histogram_bins,
            "pearson_r": self.pearson_r,
            "n_samples": self.n_samples,
            "flags": self.flags,
        }


def _decile_histogram(f1s):
    bins = [0] * 10
    for v in f1s:
        bins[min(int(v // 10), 9)] += 1
    return bins


def predict_sample(model, sample):
    """Inference labels for one sample: (entity label strings, ade 0/1)."""
    trace = model.forward(sample, mode=MODE_INFERENCE)
    ents = [model.vocab.label_name(i) for i in trace.predicted_labels]
    return ents, trace.predicted_ades()


def evaluate(model, samples, workers=1):
    """Corpus micro P/R/F1 per task plus per-sample analysis artifacts."""
    if not samples:
        raise ValueError("evaluate over an empty dataset")

    def score(sample):
        pred_ents, pred_ades = predict_sample(model, sample)
        return sample, pred_ents, pred_ades

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(score, samples))
    else:
        scored = [score(s) for s in samples]

    er_counts = np.zeros(3, dtype=np.int64)
    ade_counts = np.zeros(3, dtype=np.int64)
    er_spans_gold, er_spans_pred = [], []
    ade_spans_gold, ade_spans_pred = [], []
    per_sample = []
    for idx, (sample, pred_ents, pred_ades) in enumerate(scored):
        er_counts += prf_counts(sample.entity_labels, pred_ents, ER_POSITIVE)
        ade_counts += prf_counts(sample.ade_labels, pred_ades, ADE_POSITIVE)
        er_spans_gold.extend((idx,) + s for s in bio_spans(sample.entity_labels))
        er_spans_pred.extend((idx,) + s for s in bio_spans(pred_ents))
        ade_spans_gold.extend((idx,) + s for s in binary_runs(sample.ade_labels))
        ade_spans_pred.extend((idx,) + s for s in binary_runs(pred_ades))
        per_sample.append((
            sample.id,
            token_prf(sample.entity_labels, pred_ents, ER_POSITIVE)[2],
            token_prf(sample.ade_labels, pred_ades, ADE_POSITIVE)[2],
        ))

    flags = []
    for task, (tp, fp, fn) in (("er", er_counts), ("ade", ade_counts)):
        if tp + fp == 0:
            flags.append(f"{task}_precision_undefined")
        if tp + fn == 0:
            flags.append(f"{task}_recall_undefined")

    er_f1s = [e for _, e, _ in per_sample]
    ade_f1s = [a for _, _, a in per_sample]
    return EvalReport(
        er=prf_from_counts(*er_counts),
        ade=prf_from_counts(*ade_counts),
        er_span=span_prf(er_spans_gold, er_spans_pred),
        ade_span=span_prf(ade_spans_gold, ade_spans_pred),
        per_sample=per_sample,
        histogram_bins={"er": _decile_histogram(er_f1s),
                        "ade": _decile_histogram(ade_f1s)},
        pearson_r=pearson(er_f1s, ade_f1s),
        n_samples=len(samples),
        flags=flags,
    )


def export_attention(model, sample, out_path, fmt="csv", cell_px=12):
    """Dump the sample's attention matrix: CSV with a token header row and
    one row-stochastic line per token, or a P6 pixmap heat grid."""
    trace = model.forward(sample, mode=MODE_INFERENCE)
    if trace.attention is None:
        raise ValueError("model was built with attention disabled")
    attn = trace.attention
    if fmt == "csv":
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + sample.tokens)
            for token, row in zip(sample.tokens, attn):
                writer.writerow([token] + [f"{v:.12g}" for v in row])
    elif fmt == "image":
        _write_pixmap(attn, out_path, cell_px)
    else:
        raise ValueError(f"unknown attention export format {fmt!r}")
    return out_path


def _write_pixmap(attn, out_path, cell_px):
    """Binary P6 pixmap; darker cells carry more attention."""
    t = attn.shape[0]
    vmax = float(attn.max()) or 1.0
    gray = np.round(255.0 * (1.0 - attn / vmax)).astype(np.uint8)
    img = np.repeat(np.repeat(gray, cell_px, axis=0), cell_px, axis=1)
    rgb = np.stack([img, img, img], axis=-1)
    with open(out_path, "wb") as fh:
        fh.write(f"P6\n{t * cell_px} {t * cell_px}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
