"""CSV/JSON result files and a gnuplot script helper."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

COLUMNS = ("experiment", "t", "n", "series", "value", "ci_lo", "ci_hi", "predicted_exponent")


def format_number(x) -> str:
    """17 significant digits; integers as integers; '' for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, int)):
        return str(int(x))
    return format(float(x), ".17g")


def _json_number(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "null"
    return format_number(x)


def render(rows, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in rows:
            writer.writerow([r.experiment, format_number(r.t), format_number(r.n), r.series,
                             format_number(r.value), format_number(r.ci_lo), format_number(r.ci_hi),
                             format_number(r.predicted_exponent)])
        return buf.getvalue()
    if fmt == "json":
        records = []
        for r in rows:
            fields = [
                f'"experiment": {json.dumps(r.experiment)}',
                f'"t": {_json_number(r.t)}',
                f'"n": {_json_number(r.n)}',
                f'"series": {json.dumps(r.series)}',
                f'"value": {_json_number(r.value)}',
                f'"ci_lo": {_json_number(r.ci_lo)}',
                f'"ci_hi": {_json_number(r.ci_hi)}',
                f'"predicted_exponent": {_json_number(r.predicted_exponent)}',
            ]
            records.append("  {" + ", ".join(fields) + "}")
        return "[\n" + ",\n".join(records) + "\n]\n" if records else "[]\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_results(rows, path, fmt: str = "csv") -> None:
    """Write ``rows`` to ``path``; OSError messages carry the path."""
    text = render(rows, fmt)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results to {path}: {exc.strerror}") from exc


def load_rows(path):
    """Parse a results CSV back into dicts (numbers as floats, empty fields as None)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = dict(rec)
            for key in ("t", "value", "ci_lo", "ci_hi", "predicted_exponent"):
                row[key] = float(row[key]) if row[key] != "" else None
            row["n"] = int(row["n"])
            out.append(row)
    return out


def gnuplot_script(csv_path, output_image: str | None = None) -> str:
    """Log-log plot of every (series, t) pair found in a results CSV."""
    rows = load_rows(csv_path)
    pairs = sorted({(r["series"], r["t"]) for r in rows})
    image = output_image or str(Path(csv_path).with_suffix(".png"))
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        "set key outside right",
        "set xlabel 'n'",
        "set ylabel 'value'",
        "set terminal pngcairo size 1200,800",
        f"set output '{image}'",
    ]
    plots = []
    for series, t in pairs:
        cond = f"(strcol(4) eq '{series}' && abs($2 - {t!r}) < 1e-12)"
        plots.append(f"'{csv_path}' every ::1 using 3:({cond} ? $5 : NaN) with linespoints "
                     f"title '{series} t={t:g}'")
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
