"""Segmentation evaluation: pixel-wise, region-based, and consistency scores.

The measure definitions below are this artifact's normative forms (Hoover-
style region correspondence, Martin-style consistency errors); results are
self-consistent across the suite even where published benchmark variants
differ. Region measures operate on 4-connected regions; CC/EA/MS/CI/O/C/I./
II./RM fields are reserved but not computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DataError
from .refine import FOUR_CONN
from .tensor import IGNORE_LABEL

# measure name -> (direction, larger-is-better)
MEASURES = [
    ("CS", "region", True), ("OS", "region", False), ("US", "region", False),
    ("ME", "region", False), ("NE", "region", False),
    ("CA", "pixel", True), ("CO", "pixel", True),
    ("GCE", "consistency", False), ("LCE", "consistency", False),
]
RESERVED = ("CC", "EA", "MS", "CI", "O", "C", "I.", "II.", "RM")


def match_labels(pred: np.ndarray, gt: np.ndarray,
                 mode: str = "hungarian-overlap") -> np.ndarray:
    """Relabel pred so its classes correspond to gt classes.

    "identity" passes pred through; "hungarian-overlap" maximizes the total
    matched-pixel count over one-to-one class assignments. Unmatched pred
    classes keep fresh labels outside the gt class set.
    """
    pred = np.asarray(pred, dtype=np.uint8)
    gt = np.asarray(gt, dtype=np.uint8)
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if mode == "identity":
        return pred
    if mode != "hungarian-overlap":
        raise ConfigError(f"unknown matching mode '{mode}'")
    valid = (pred != IGNORE_LABEL) & (gt != IGNORE_LABEL)
    p_classes = [int(v) for v in np.unique(pred[valid])]
    g_classes = [int(v) for v in np.unique(gt[valid])]
    overlap = np.zeros((len(p_classes), len(g_classes)))
    for i, pc in enumerate(p_classes):
        pm = valid & (pred == pc)
        for j, gc in enumerate(g_classes):
            overlap[i, j] = np.sum(pm & (gt == gc))
    rows, cols = linear_sum_assignment(-overlap)
    mapping = {p_classes[i]: g_classes[j] for i, j in zip(rows, cols)}
    spare = (v for v in range(IGNORE_LABEL) if v not in g_classes)
    out = pred.copy()
    for pc in p_classes:
        tgt = mapping.get(pc)
        if tgt is None:
            tgt = next(spare)
        out[pred == pc] = tgt
    return out


def pixel_measures(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """CO: percent of correctly assigned pixels. CA: mean per-gt-class pixel
    accuracy (class-averaged recall). Ignored gt pixels are excluded."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    valid = gt != IGNORE_LABEL
    total = int(valid.sum())
    if total == 0:
        raise DataError("ground truth is entirely ignored")
    co = 100.0 * np.sum((pred == gt) & valid) / total
    recalls = []
    for cls in np.unique(gt[valid]):
        m = valid & (gt == cls)
        recalls.append(np.sum(pred[m] == cls) / m.sum())
    ca = 100.0 * float(np.mean(recalls))
    return float(co), ca


def _regions(labels: np.ndarray) -> list[np.ndarray]:
    out = []
    for cls in np.unique(labels):
        if cls == IGNORE_LABEL:
            continue
        comp, n = ndimage.label(labels == cls, structure=FOUR_CONN)
        for i in range(1, n + 1):
            out.append(comp == i)
    return out


def region_measures(pred: np.ndarray, gt: np.ndarray,
                    overlap_threshold: float = 0.75) -> tuple[float, float,
                                                              float, float,
                                                              float]:
    """Region correspondence by mutual overlap at threshold T.

    CS: gt regions with a pred region covering >= T of them while they cover
    >= T of it. OS: gt regions split across >= 2 pred regions each holding
    >= (1-T) of the gt region. US: pred regions merging >= 2 gt regions each
    holding >= (1-T) of the pred region. ME: gt regions in none of the above;
    NE: pred regions in none. CS/OS/ME are percentages of the gt region
    count, US/NE of the pred region count.
    """
    t = overlap_threshold
    gt_regions = _regions(np.asarray(gt))
    pred_regions = _regions(np.asarray(pred))
    ng, np_ = len(gt_regions), len(pred_regions)
    if ng == 0 or np_ == 0:
        raise DataError("maps contain no regions")
    inter = np.zeros((ng, np_))
    for i, g in enumerate(gt_regions):
        for j, p in enumerate(pred_regions):
            inter[i, j] = np.sum(g & p)
    gsz = np.array([g.sum() for g in gt_regions], dtype=float)
    psz = np.array([p.sum() for p in pred_regions], dtype=float)

    cs_pairs = (inter >= t * gsz[:, None]) & (inter >= t * psz[None, :])
    gt_cs = cs_pairs.any(axis=1)
    pred_cs = cs_pairs.any(axis=0)

    os_table = inter >= (1.0 - t) * gsz[:, None]
    gt_os = os_table.sum(axis=1) >= 2
    pred_os = (os_table & gt_os[:, None]).any(axis=0)

    us_table = inter >= (1.0 - t) * psz[None, :]
    pred_us = us_table.sum(axis=0) >= 2
    gt_us = (us_table & pred_us[None, :]).any(axis=1)

    gt_any = gt_cs | gt_os | gt_us
    pred_any = pred_cs | pred_os | pred_us
    cs = 100.0 * gt_cs.sum() / ng
    os_ = 100.0 * gt_os.sum() / ng
    us = 100.0 * pred_us.sum() / np_
    me = 100.0 * (~gt_any).sum() / ng
    ne = 100.0 * (~pred_any).sum() / np_
    return float(cs), float(os_), float(us), float(me), float(ne)


def consistency_measures(pred: np.ndarray,
                         gt: np.ndarray) -> tuple[float, float]:
    """Global/local consistency errors between two segmentations.

    With R(S, p) the region of S containing p and E(S1, S2, p) =
    |R(S1,p) \\ R(S2,p)| / |R(S1,p)|:
    GCE = 100/n * min(sum E(pred,gt,p), sum E(gt,pred,p));
    LCE = 100/n * sum min(E(pred,gt,p), E(gt,pred,p)).
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")

    def region_ids(m):
        out = np.zeros(m.shape, dtype=np.int64)
        nxt = 1
        for cls in np.unique(m):
            comp, k = ndimage.label(m == cls, structure=FOUR_CONN)
            out[comp > 0] += (comp[comp > 0] + nxt - 1)
            nxt += k
        return out - 1

    ra = region_ids(pred).ravel()
    rb = region_ids(gt).ravel()
    n = ra.size
    na, nb = ra.max() + 1, rb.max() + 1
    joint = np.zeros((na, nb), dtype=np.int64)
    np.add.at(joint, (ra, rb), 1)
    size_a = joint.sum(axis=1)
    size_b = joint.sum(axis=0)
    e_ab = (size_a[ra] - joint[ra, rb]) / size_a[ra]
    e_ba = (size_b[rb] - joint[ra, rb]) / size_b[rb]
    gce = 100.0 / n * min(e_ab.sum(), e_ba.sum())
    lce = 100.0 / n * np.minimum(e_ab, e_ba).sum()
    return float(gce), float(lce)


@dataclass
class EvalReport:
    """Suite-level averages plus per-image breakdown."""

    CS: float = 0.0
    OS: float = 0.0
    US: float = 0.0
    ME: float = 0.0
    NE: float = 0.0
    CA: float = 0.0
    CO: float = 0.0
    GCE: float = 0.0
    LCE: float = 0.0
    matching: str = "identity"
    per_image: list[dict] = field(default_factory=list)
    # reserved optional-extension fields, not computed by this artifact
    CC: float | None = None
    EA: float | None = None
    MS: float | None = None
    CI: float | None = None
    O: float | None = None
    C: float | None = None
    I_: float | None = None
    II_: float | None = None
    RM: float | None = None

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name, _, _ in MEASURES}

    def to_kv_lines(self) -> str:
        lines = [f"matching={self.matching}",
                 f"images={len(self.per_image)}"]
        lines += [f"{name}={getattr(self, name):.6f}"
                  for name, _, _ in MEASURES]
        for img in self.per_image:
            parts = [f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in img.items()]
            lines.append("image " + " ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv_lines(cls, text: str) -> "EvalReport":
        rep = cls()
        for line in text.splitlines():
            if line.startswith("image "):
                entry = {}
                for part in line[len("image "):].split():
                    k, v = part.split("=", 1)
                    try:
                        entry[k] = float(v)
                    except ValueError:
                        entry[k] = v
                rep.per_image.append(entry)
            elif "=" in line:
                k, v = line.split("=", 1)
                if k == "matching":
                    rep.matching = v
                elif k != "images" and hasattr(rep, k):
                    setattr(rep, k, float(v))
        return rep

    def to_table(self) -> str:
        """Aligned plain-text table; arrows mark whether larger is better."""
        groups = {"region": "Region-based measures",
                  "pixel": "Pixel-wise measures",
                  "consistency": "Consistency measures"}
        width = 28
        lines = [f"{'Measure':<{width // 2}}{'Value':>10}", "-" * width]
        for group, title in groups.items():
            lines.append(title)
            for name, g, larger in MEASURES:
                if g != group:
                    continue
                arrow = "↑" if larger else "↓"
                lines.append(f"{arrow} {name:<{width // 2 - 2}}"
                             f"{getattr(self, name):>10.2f}")
        return "\n".join(lines) + "\n"


def evaluate_pair(pred: np.ndarray, gt: np.ndarray,
                  mode: str = "identity",
                  overlap_threshold: float = 0.75) -> dict[str, float]:
    matched = match_labels(pred, gt, mode)
    co, ca = pixel_measures(matched, gt)
    cs, os_, us, me, ne = region_measures(matched, gt, overlap_threshold)
    gce, lce = consistency_measures(matched, gt)
    return {"CS": cs, "OS": os_, "US": us, "ME": me, "NE": ne,
            "CA": ca, "CO": co, "GCE": gce, "LCE": lce}


def evaluate_suite(preds: list[np.ndarray], gts: list[np.ndarray],
                   mode: str = "identity",
                   overlap_threshold: float = 0.75,
                   names: list[str] | None = None) -> EvalReport:
    """Average per-image measures uniformly across a suite."""
    if len(preds) != len(gts):
        raise ConfigError(f"{len(preds)} predictions vs {len(gts)} truths")
    if not preds:
        raise ConfigError("empty evaluation suite")
    report = EvalReport(matching=mode)
    acc: dict[str, list[float]] = {name: [] for name, _, _ in MEASURES}
    for i, (p, g) in enumerate(zip(preds, gts)):
        vals = evaluate_pair(p, g, mode, overlap_threshold)
        entry = {"name": names[i] if names else f"{i:03d}"}
        entry.update(vals)
        report.per_image.append(entry)
        for k, v in vals.items():
            acc[k].append(v)
    for name, _, _ in MEASURES:
        setattr(report, name, float(np.mean(acc[name])))
    return report
