"""PSNR evaluation against the bicubic baseline and report rendering."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import GrayImage, degrade, load_image
from .errors import PageTooSmall, ShapeMismatch
from .srnet import LR_PATCH, SrModel, super_resolve_page

COLUMNS = ("id", "bicubic_db", "model_db", "gain_db")
AVERAGING = "per-image mean of PSNR values"
_NAME_RE = re.compile(r"^(?P<lang>[A-Za-z]+)_(?P<dpi>\d+)_(?P<id>.+)$")


def psnr(reference: GrayImage, test: GrayImage) -> float:
    """``20 log10(255 / RMSE)`` on 8-bit images; ``inf`` when identical."""
    a = reference.pixels if isinstance(reference, GrayImage) else np.asarray(reference)
    b = test.pixels if isinstance(test, GrayImage) else np.asarray(test)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return math.inf
    return 20.0 * math.log10(255.0 / math.sqrt(mse))


@dataclass
class EvalPage:
    id: str
    image: GrayImage
    language: Optional[str] = None
    dpi: Optional[int] = None

    @property
    def group(self) -> str:
        if self.language is None and self.dpi is None:
            return "all"
        return f"{self.language or '?'}/{self.dpi if self.dpi is not None else '?'}"


@dataclass
class EvalRow:
    id: str
    bicubic_db: float
    model_db: float
    group: str = "all"

    @property
    def gain_db(self) -> float:
        if self.model_db == self.bicubic_db:  # also covers inf == inf
            return 0.0
        return self.model_db - self.bicubic_db


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def groups(self) -> dict:
        out = {}
        for row in self.rows:
            out.setdefault(row.group, []).append(row)
        return out

    def aggregates(self) -> list:
        """``(label, mean bicubic, mean model, mean gain)`` per group, then overall."""
        agg = []
        groups = self.groups()
        labels = list(groups) + (["overall"] if len(groups) > 1 else [])
        for label in labels:
            rows = self.rows if label == "overall" else groups[label]
            b = float(np.mean([r.bicubic_db for r in rows]))
            m = float(np.mean([r.model_db for r in rows]))
            g = float(np.mean([r.gain_db for r in rows]))
            agg.append((label, b, m, g))
        return agg

    @property
    def mean_bicubic(self) -> float:
        return float(np.mean([r.bicubic_db for r in self.rows]))

    @property
    def mean_model(self) -> float:
        return float(np.mean([r.model_db for r in self.rows]))

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.rows == other.rows


def tags_from_name(name: str):
    """``<lang>_<dpi>_<id>`` file stems carry grouping tags."""
    m = _NAME_RE.match(Path(name).stem)
    if not m:
        return None, None
    return m.group("lang").lower(), int(m.group("dpi"))


def load_test_corpus(source, manifest=None) -> list[EvalPage]:
    """Pages from a directory (``*.pgm``/``*.png``) or from a manifest.

    ``manifest`` is a path to, or the parsed content of, a JSON array of
    ``{path, language, dpi}`` objects; relative paths resolve against
    ``source``.
    """
    source = Path(source)
    if manifest is None and source.is_file():
        manifest, source = source, source.parent
    if manifest is not None:
        if not isinstance(manifest, list):
            manifest = json.loads(Path(manifest).read_text())
        pages = []
        for entry in manifest:
            p = Path(entry["path"])
            p = p if p.is_absolute() else source / p
            pages.append(EvalPage(p.stem, load_image(p), entry.get("language"), entry.get("dpi")))
        return pages
    files = sorted(f for f in source.iterdir() if f.suffix.lower() in (".pgm", ".png"))
    return [EvalPage(f.stem, load_image(f), *tags_from_name(f.name)) for f in files]


def evaluate_corpus(model, pages, manifest=None) -> EvalReport:
    """PSNR of bicubic and model reconstructions of each degraded page.

    ``model`` is an SrModel or any callable mapping a degraded GrayImage to a
    reconstruction.  ``pages`` holds EvalPage objects or ``(id, GrayImage)``
    tuples; tuples take tags from ``manifest`` (``{id: {language, dpi}}``) or
    from the file-name convention.
    """
    run = (lambda img: super_resolve_page(model, img)) if isinstance(model, SrModel) else model
    report = EvalReport()
    for page in pages:
        if not isinstance(page, EvalPage):
            pid, img = page
            tags = (manifest or {}).get(pid)
            lang, dpi = (tags.get("language"), tags.get("dpi")) if tags else tags_from_name(pid)
            page = EvalPage(pid, img, lang, dpi)
        h, w = page.image.shape
        if h < LR_PATCH or w < LR_PATCH:
            raise PageTooSmall(f"{page.id}: {h}x{w} page is smaller than {LR_PATCH}x{LR_PATCH}")
        degraded = degrade(page.image)
        bic = psnr(page.image, degraded)
        mod = psnr(page.image, run(degraded))
        report.rows.append(EvalRow(page.id, bic, mod, page.group))
    return report


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) and v > 0 else f"{v:.2f}"


def _json_num(v: float):
    return "inf" if math.isinf(v) and v > 0 else v


def _from_json_num(v) -> float:
    return math.inf if v == "inf" else float(v)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "averaging": AVERAGING,
        "rows": [
            {"id": r.id, "group": r.group, "bicubic_db": _json_num(r.bicubic_db),
             "model_db": _json_num(r.model_db), "gain_db": _json_num(r.gain_db)}
            for r in report.rows
        ],
        "aggregates": [
            {"group": g, "bicubic_db": _json_num(b), "model_db": _json_num(m), "gain_db": _json_num(d)}
            for g, b, m, d in report.aggregates()
        ],
    }


def report_from_json(text) -> EvalReport:
    data = json.loads(text)
    return EvalReport([
        EvalRow(r["id"], _from_json_num(r["bicubic_db"]), _from_json_num(r["model_db"]), r.get("group", "all"))
        for r in data["rows"]
    ])


def render_report(report: EvalReport, fmt: str = "text") -> bytes:
    fmt = fmt.lower()
    if fmt == "json":
        return (json.dumps(report_to_dict(report), indent=2) + "\n").encode("utf-8")
    body = [(r.id, _fmt(r.bicubic_db), _fmt(r.model_db), _fmt(r.gain_db)) for r in report.rows]
    body += [(f"mean[{g}]", _fmt(b), _fmt(m), _fmt(d)) for g, b, m, d in report.aggregates()]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(body)
        return buf.getvalue().encode("utf-8")
    if fmt in ("text", "text-table", "table"):
        table = [COLUMNS] + body
        widths = [max(len(row[i]) for row in table) for i in range(4)]
        lines = [f"# PSNR in dB; group means are the {AVERAGING}"]
        for j, row in enumerate(table):
            lines.append("  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i])
                                   for i, cell in enumerate(row)))
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")
