"""Error tables: a plain-text rendering and a JSON document."""
from __future__ import annotations

import json
from pathlib import Path

COLUMNS = ("case", "arch", "N", "N_test", "params", "err_clean", "err_noisy")
ARCH_ORDER = {"sensor25": 0, "sensor9": 1, "image": 2}


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda r: (int(r["case"]), ARCH_ORDER.get(r["arch"], 99), r["arch"]))


def _pct(mean, std) -> str:
    if mean is None:
        return "-"
    return f"{100 * mean:.3f} ± {100 * std:.3f}%"


def render_table(rows: list[dict]) -> str:
    cells = [list(COLUMNS)]
    for r in sort_rows(rows):
        cells.append([
            f"Case {r['case']}", r["arch"], str(r["N"]), str(r["N_test"]), str(r["params"]),
            _pct(r["err_clean_mean"], r["err_clean_std"]), _pct(r.get("err_noisy_mean"), r.get("err_noisy_std")),
        ])
    widths = [max(len(row[i]) for row in cells) for i in range(len(COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def collect_rows(root) -> list[dict]:
    """Every ``results/*.json`` row below ``root``."""
    return [json.loads(p.read_text()) for p in sorted(Path(root).glob("**/results/*.json"))]


def write_report(rows: list[dict], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = sort_rows(rows)
    txt, js = out_dir / "report.txt", out_dir / "report.json"
    txt.write_text(render_table(rows))
    js.write_text(json.dumps({"rows": rows}, indent=1, sort_keys=True) + "\n")
    return txt, js


def read_report(path) -> list[dict]:
    return json.loads(Path(path).read_text())["rows"]
