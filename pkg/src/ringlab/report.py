"""CSV persistence and markdown/JSON reports laid out like the extraction,
AUC, TPR@FPR and distance-distribution tables."""
import csv
import io
import json
import math
import os

import numpy as np

from ringlab import stats
from ringlab.errors import InvalidArgument
from ringlab.lab import TrialRecord

TRIAL_COLUMNS = ("trial", "arm", "attack", "guidance", "mean_l1", "nmae", "nmse",
                 "roundtrip_nmse", "fp_converged")
UNRELIABLE_FRACTION = 0.10


def _fmt_float(v):
    return repr(float(v))


def write_trials_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in records:
            w.writerow([r.trial, r.arm, r.attack, r.guidance, _fmt_float(r.mean_l1), _fmt_float(r.nmae),
                        _fmt_float(r.nmse), _fmt_float(r.roundtrip_nmse), r.fp_converged])


def read_trials_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIAL_COLUMNS:
            raise InvalidArgument(f"{path}: expected columns {','.join(TRIAL_COLUMNS)}")
        return [
            TrialRecord(int(row["trial"]), row["arm"], row["attack"], row["guidance"], float(row["mean_l1"]),
                        float(row["nmae"]), float(row["nmse"]), float(row["roundtrip_nmse"]),
                        row["fp_converged"])
            for row in reader
        ]


def read_distance_csv(path):
    """Distances from a CSV with a ``distance`` or ``mean_l1`` column, or a bare first column."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise InvalidArgument(f"{path} is empty")
    header = [h.strip().lower() for h in rows[0]]
    for name in ("distance", "mean_l1"):
        if name in header:
            col = header.index(name)
            return np.array([float(r[col]) for r in rows[1:]])
    try:
        return np.array([float(r[0]) for r in rows])
    except ValueError:
        return np.array([float(r[0]) for r in rows[1:]])


def _scenarios(records):
    seen = []
    for r in records:
        key = (r.attack, r.guidance)
        if key not in seen:
            seen.append(key)
    return seen


def scenario_summary(records, fpr_levels=stats.FPR_LEVELS, bins=stats.KLD_BINS):
    """Per (attack, guidance): detection report plus watermarked-arm extraction summaries."""
    out = []
    for attack, guidance in _scenarios(records):
        rows = [r for r in records if r.attack == attack and r.guidance == guidance]
        ok = [r for r in rows if not r.failed]
        wm = [r for r in ok if r.arm == "watermarked"]
        cl = [r for r in ok if r.arm == "clean"]
        failed = len(rows) - len(ok)
        entry = {
            "attack": attack,
            "guidance": guidance,
            "rows": len(rows),
            "failed": failed,
            "unreliable": failed > UNRELIABLE_FRACTION * len(rows),
            "unconverged": sum(r.fp_converged == "0" for r in ok),
        }
        if wm:
            entry["extraction"] = {
                name: stats.summarize([getattr(r, name) for r in wm])._asdict()
                for name in ("nmae", "nmse", "mean_l1", "roundtrip_nmse")
            }
        if wm and cl:
            entry["detection"] = stats.detection_report(
                [r.mean_l1 for r in wm], [r.mean_l1 for r in cl], fpr_levels, bins).to_dict()
        out.append(entry)
    return out


def histogram_rows(records, bins=stats.KLD_BINS):
    """Distance histograms per scenario and arm on the scenario's shared range."""
    rows = []
    for attack, guidance in _scenarios(records):
        sel = [r for r in records if r.attack == attack and r.guidance == guidance and not r.failed]
        if not sel:
            continue
        values = np.array([r.mean_l1 for r in sel])
        lo, hi = values.min(), values.max()
        if lo == hi:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        for arm in ("watermarked", "clean"):
            counts, _ = np.histogram([r.mean_l1 for r in sel if r.arm == arm], bins=edges)
            for i, c in enumerate(counts):
                rows.append((attack, guidance, arm, repr(float(edges[i])), repr(float(edges[i + 1])), int(c)))
    return rows


def _ms(summary, digits=3):
    if summary is None:
        return "n/a"
    fmt = f"{{:.{digits}f}}" if abs(summary["mean"]) >= 10 ** -digits or summary["mean"] == 0 else "{:.3e}"
    return f"{fmt.format(summary['mean'])} ± {fmt.format(summary['std'])}"


def render_markdown(summary, fpr_levels=stats.FPR_LEVELS):
    buf = io.StringIO()
    p = lambda line="": buf.write(line + "\n")  # noqa: E731
    p("# Watermark detection report")
    p()
    p("## Watermark extraction metrics (watermarked arm)")
    p()
    p("| Attack | Guidance | NMAE | NMSE | mean L1 (Fourier) | roundtrip NMSE | failed | unconverged |")
    p("|---|---|---|---|---|---|---|---|")
    for s in summary:
        ex = s.get("extraction", {})
        p(f"| {s['attack']} | {s['guidance']} | {_ms(ex.get('nmae'))} | {_ms(ex.get('nmse'))} | "
          f"{_ms(ex.get('mean_l1'))} | {_ms(ex.get('roundtrip_nmse'))} | {s['failed']} | {s['unconverged']} |")
    p()
    attacks = list(dict.fromkeys(s["attack"] for s in summary))
    guidances = list(dict.fromkeys(s["guidance"] for s in summary))
    lookup = {(s["attack"], s["guidance"]): s for s in summary}
    p("## AUC under attacks")
    p()
    p("| Guidance | " + " | ".join(attacks) + " |")
    p("|---|" + "---|" * len(attacks))
    for g in guidances:
        cells = []
        for a in attacks:
            det = lookup.get((a, g), {}).get("detection")
            cells.append(f"{det['auc']:.4f}" if det else "n/a")
        p(f"| {g} | " + " | ".join(cells) + " |")
    p()
    p("## Detection performance")
    p()
    levels = " | ".join(f"thr @{100 * f:g}% FPR" for f in fpr_levels)
    p(f"| Attack | Guidance | TPR@{100 * fpr_levels[0]:g}%FPR | AUC | {levels} |")
    p("|---|---|---|---|" + "---|" * len(fpr_levels))
    for s in summary:
        det = s.get("detection")
        if not det:
            continue
        pts = det["tpr_at_fpr"]
        thr = " | ".join(f"{pt['threshold']:.3f}" for pt in pts)
        p(f"| {s['attack']} | {s['guidance']} | {pts[0]['tpr']:.3f} | {det['auc']:.4f} | {thr} |")
    p()
    p("## Distance distributions, watermarked vs non-watermarked")
    p()
    p("| Attack | Guidance | watermarked d | non-watermarked d | symmetric KLD |")
    p("|---|---|---|---|---|")
    for s in summary:
        det = s.get("detection")
        if not det:
            continue
        p(f"| {s['attack']} | {s['guidance']} | {_ms(det['watermarked'])} | {_ms(det['clean'])} | "
          f"{det['skld']:.3f} |")
    notes = [s for s in summary if s["unreliable"]]
    if notes:
        p()
        p("## Reliability")
        p()
        for s in notes:
            p(f"- {s['attack']} / {s['guidance']}: {s['failed']} of {s['rows']} rows failed; "
              "results marked unreliable")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_report(records, out_dir, fpr_levels=stats.FPR_LEVELS, bins=stats.KLD_BINS):
    """Write histogram.csv, report.md and report.json; return the scenario summary."""
    os.makedirs(out_dir, exist_ok=True)
    summary = scenario_summary(records, fpr_levels, bins)
    with open(os.path.join(out_dir, "histogram.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("attack", "guidance", "arm", "bin_lo", "bin_hi", "count"))
        w.writerows(histogram_rows(records, bins))
    with open(os.path.join(out_dir, "report.md"), "w") as fh:
        fh.write(render_markdown(summary, fpr_levels))
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
