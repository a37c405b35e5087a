"""Per-prediction explanations for the softmax classifier: the exact additive
decomposition of a class logit into per-feature weight-times-score terms."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .classify import SoftmaxModel, _softmax
from .core import FeatureCatalog, PartClass, VehicleCategory
from .spatial import ModelMismatchError, PartScoreVector


@dataclass(frozen=True)
class Contribution:
    feature_index: int
    part: PartClass
    category: VehicleCategory  # category the feature belongs to, not the prediction
    score: float  # P_k
    weight: float  # W[c, k]
    product: float  # weight * score


@dataclass(frozen=True)
class ContributionReport:
    category: VehicleCategory
    contributions: tuple[Contribution, ...]
    bias: float
    logit: float
    probability: float


def explain_softmax(
    model: SoftmaxModel,
    catalog: FeatureCatalog,
    scores: PartScoreVector,
    category: VehicleCategory | None = None,
) -> ContributionReport:
    """Decompose one class logit into signed per-feature contributions.

    Defaults to the predicted (argmax) class. Every feature with a nonzero
    part score appears; bias plus the contribution sum reconstructs the
    logit used by predict_softmax.
    """
    if model.catalog_hash and model.catalog_hash != catalog.hash:
        raise ModelMismatchError("model was trained against a different catalog")
    if scores.catalog_hash != catalog.hash:
        raise ModelMismatchError("part scores come from a different catalog")

    logits = model.W @ scores.scores + model.b
    probs = _softmax(logits)
    c = int(category) if category is not None else int(logits.argmax())

    contributions = []
    for k in np.flatnonzero(scores.scores != 0.0):
        spec = catalog.features[int(k)]
        weight = float(model.W[c, k])
        score = float(scores.scores[k])
        contributions.append(
            Contribution(
                feature_index=int(k),
                part=spec.part,
                category=spec.category,
                score=score,
                weight=weight,
                product=weight * score,
            )
        )
    contributions.sort(key=lambda t: (-abs(t.product), t.feature_index))
    return ContributionReport(
        category=VehicleCategory(c),
        contributions=tuple(contributions),
        bias=float(model.b[c]),
        logit=float(logits[c]),
        probability=float(probs[c]),
    )


def report_to_obj(report: ContributionReport) -> dict:
    return {
        "category": report.category.label,
        "bias": report.bias,
        "logit": report.logit,
        "probability": report.probability,
        "contributions": [
            {
                "k": t.feature_index,
                "part": t.part.label,
                "category": t.category.label,
                "score": t.score,
                "weight": t.weight,
                "product": t.product,
            }
            for t in report.contributions
        ],
    }


def report_from_obj(obj) -> ContributionReport:
    return ContributionReport(
        category=VehicleCategory.from_label(obj["category"]),
        contributions=tuple(
            Contribution(
                feature_index=int(t["k"]),
                part=PartClass.from_label(t["part"]),
                category=VehicleCategory.from_label(t["category"]),
                score=float(t["score"]),
                weight=float(t["weight"]),
                product=float(t["product"]),
            )
            for t in obj["contributions"]
        ),
        bias=float(obj["bias"]),
        logit=float(obj["logit"]),
        probability=float(obj["probability"]),
    )


def _render_text(report: ContributionReport) -> str:
    lines = [
        f"prediction: {report.category.label}"
        f"  (p={report.probability:.4f}, logit={report.logit:+.4f})",
        f"{'k':>3}  {'part':<30}{'feature category':<30}{'P_k':>8}{'weight':>10}{'w*P':>10}",
    ]
    for t in report.contributions:
        lines.append(
            f"{t.feature_index:>3}  {t.part.label:<30}{t.category.label:<30}"
            f"{t.score:>8.4f}{t.weight:>10.4f}{t.product:>+10.4f}"
        )
    lines.append(f"{'':>3}  {'bias':<60}{'':>8}{'':>10}{report.bias:>+10.4f}")
    return "\n".join(lines) + "\n"


_SVG_POS = "#c0392b"  # strengthens the class
_SVG_NEG = "#2980b9"  # weakens the class


def _render_svg(report: ContributionReport) -> str:
    row_h, label_w, chart_w = 22, 320, 280
    rows = len(report.contributions)
    height = row_h * (rows + 2) + 10
    width = label_w + chart_w + 20
    center = label_w + chart_w / 2
    top = max((abs(t.product) for t in report.contributions), default=0.0)
    top = max(top, abs(report.bias), 1e-12)
    scale = (chart_w / 2 - 4) / top

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<text x="6" y="16">{report.category.label}  p={report.probability:.4f}  '
        f"logit={report.logit:+.4f}</text>",
        f'<line x1="{center}" y1="24" x2="{center}" y2="{height - 4}" stroke="#999"/>',
    ]
    for i, t in enumerate(report.contributions):
        y = row_h * (i + 1) + 10
        w = abs(t.product) * scale
        x = center if t.product >= 0 else center - w
        color = _SVG_POS if t.product >= 0 else _SVG_NEG
        parts.append(
            f'<rect class="bar" x="{x:.2f}" y="{y}" width="{max(w, 0.5):.2f}" '
            f'height="{row_h - 6}" fill="{color}"/>'
        )
        parts.append(
            f'<text x="6" y="{y + row_h - 9}">{t.part.label} | {t.category.label} '
            f"({t.product:+.3f})</text>"
        )
    y = row_h * (rows + 1) + 10
    w = abs(report.bias) * scale
    x = center if report.bias >= 0 else center - w
    parts.append(
        f'<rect class="bias" x="{x:.2f}" y="{y}" width="{max(w, 0.5):.2f}" '
        f'height="{row_h - 6}" fill="#7f8c8d"/>'
    )
    parts.append(f'<text x="6" y="{y + row_h - 9}">bias ({report.bias:+.3f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_report(report: ContributionReport, format: str = "text") -> bytes:
    """Serialize a report as an aligned text table, lossless JSON, or a
    signed-bar SVG chart."""
    if format == "text":
        return _render_text(report).encode()
    if format == "json":
        return (json.dumps(report_to_obj(report), indent=1) + "\n").encode()
    if format == "svg":
        return _render_svg(report).encode()
    raise ValueError(f"unknown report format {format!r}")
