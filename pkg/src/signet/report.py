"""Result serialization: delimited text, versioned JSON documents, figures.

Every emitter is deterministic byte-for-byte for a given result so outputs
can be diffed across runs. Floats render at 9 significant digits, integers
render plain, and a missing bound leaves its column empty.
"""

from __future__ import annotations

import json

import numpy as np

from .ehd import _COUNT_KEYS, CostReport
from .train import DriftReport
from .verify import IsometryProbe, SweepResult

__all__ = ["SCHEMA", "emit_report", "render_figure"]

SCHEMA = "signet-report/1"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    text = str(value)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def _row(values) -> str:
    return ",".join(_fmt(v) for v in values)


def _sweep_csv(res: SweepResult) -> list:
    lines = ["grid,mean,std,bound"]
    bound = res.bound if res.bound is not None else (None,) * len(res.grid)
    for g, m, s, b in zip(res.grid, res.mean, res.std, bound):
        lines.append(_row((g, m, s, b)))
    return lines


def _isometry_csv(res: IsometryProbe) -> list:
    header = "n,p,pairs,beta_inv,min_distortion,max_distortion"
    row = _row((res.n, res.p, res.pairs, res.beta_inv, res.min_distortion, res.max_distortion))
    return [header, row]


def _cost_csv(res: CostReport) -> list:
    lines = ["layer,kind," + ",".join(_COUNT_KEYS)]
    for i, entry in enumerate(res.layers):
        lines.append(_row((i + 1, entry["kind"], *(entry[k] for k in _COUNT_KEYS))))
    lines.append(_row(("total", "", *(res.totals[k] for k in _COUNT_KEYS))))
    return lines


def _drift_csv(res: DriftReport) -> list:
    lines = ["layer,ks"]
    for entry in res.layers:
        lines.append(_row((entry["layer"], entry["ks"])))
    return lines


def _scalars_csv(res: dict) -> list:
    lines = ["key,value"]
    for key in sorted(res):
        lines.append(_row((key, res[key])))
    return lines


def _to_csv(result) -> str:
    if isinstance(result, SweepResult):
        lines = _sweep_csv(result)
    elif isinstance(result, IsometryProbe):
        lines = _isometry_csv(result)
    elif isinstance(result, CostReport):
        lines = _cost_csv(result)
    elif isinstance(result, DriftReport):
        lines = _drift_csv(result)
    elif isinstance(result, dict):
        lines = _scalars_csv(result)
    else:
        raise TypeError(f"cannot report {type(result).__name__}")
    return "\n".join(lines) + "\n"


def _sanitize(value):
    """Recursively convert numpy containers and scalars for json.dumps."""
    if isinstance(value, np.ndarray):
        return [_sanitize(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, dict):
        return {str(k): _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    return value


def _to_json(result) -> str:
    if isinstance(result, SweepResult):
        kind, data = "sweep", {
            "grid": result.grid,
            "mean": result.mean,
            "std": result.std,
            "trials": result.trials,
            "bound": result.bound,
            "info": result.info,
        }
    elif isinstance(result, IsometryProbe):
        kind, data = "isometry", {
            "n": result.n,
            "p": result.p,
            "pairs": result.pairs,
            "beta_inv": result.beta_inv,
            "min_distortion": result.min_distortion,
            "max_distortion": result.max_distortion,
        }
    elif isinstance(result, CostReport):
        kind, data = "cost", {
            "layers": result.layers,
            "totals": result.totals,
            "bits_per_real": result.bits_per_real,
        }
    elif isinstance(result, DriftReport):
        kind, data = "drift", {"layers": result.layers}
    elif isinstance(result, dict):
        kind, data = "scalars", result
    else:
        raise TypeError(f"cannot report {type(result).__name__}")
    doc = {"schema": SCHEMA, "kind": kind, "data": _sanitize(data)}
    return json.dumps(doc, indent=2) + "\n"


def emit_report(result, fmt: str, path) -> None:
    """Write `result` to `path` as `fmt` ("csv" or "json")."""
    if fmt == "csv":
        text = _to_csv(result)
    elif fmt == "json":
        text = _to_json(result)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _sweep_figure(plt, res: SweepResult):
    grid = np.asarray(res.grid, dtype=float)
    mean = np.asarray(res.mean, dtype=float)
    std = np.asarray(res.std, dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.5))
    ax.errorbar(grid, mean, yerr=std, fmt="o-", capsize=3, label="measured")
    if res.bound is not None:
        ax.plot(grid, np.asarray(res.bound, dtype=float), "k--", label="bound")
    if grid.size >= 2 and grid.min() > 0 and grid.max() / grid.min() >= 8:
        ax.set_xscale("log", base=2)
        positive = mean.size and mean.min() > 0
        if positive and (res.bound is None or min(res.bound) > 0):
            ax.set_yscale("log")
    ax.set_xlabel("grid")
    ax.set_ylabel("mean")
    mode = res.info.get("mode")
    if mode:
        ax.set_title(str(mode))
    ax.legend(loc="best", fontsize=8)
    return fig


def _isometry_figure(plt, res: IsometryProbe):
    fig, ax = plt.subplots(figsize=(4.4, 3.3))
    ax.axhline(res.beta_inv, ls="--", color="tab:red", label="distortion budget")
    ax.axhline(-res.beta_inv, ls="--", color="tab:red")
    ax.axhline(0.0, color="0.7", lw=0.8)
    ax.plot([0, 0], [res.min_distortion, res.max_distortion], "o-", color="tab:blue",
            label="observed range")
    ax.set_xlim(-1.0, 1.0)
    ax.set_xticks([])
    ax.set_ylabel("relative distortion")
    ax.set_title(f"n={res.n}, p={res.p}, pairs={res.pairs}")
    ax.legend(loc="best", fontsize=8)
    return fig


def _drift_figure(plt, res: DriftReport):
    layers = [int(e["layer"]) for e in res.layers]
    ks = [float(e["ks"]) for e in res.layers]
    fig, ax = plt.subplots(figsize=(4.4, 3.3))
    ax.bar(layers, ks, color="tab:blue", width=0.6)
    ax.set_xticks(layers)
    ax.set_xlabel("layer")
    ax.set_ylabel("KS statistic")
    return fig


def _cost_figure(plt, res: CostReport):
    ops = ("xor_words", "popcount_words", "int_adds", "sign_evals", "real_macs", "fp_macs")
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.6, 3.3))
    vals = [res.totals[k] for k in ops]
    ax0.bar(range(len(ops)), vals, color="tab:blue")
    ax0.set_xticks(range(len(ops)))
    ax0.set_xticklabels([k.replace("_", "\n") for k in ops], fontsize=7)
    ax0.set_yscale("symlog")
    ax0.set_ylabel("operations")
    mem = [res.totals["ehd_memory_bits"], res.totals["fp_memory_bits"]]
    ax1.bar([0, 1], mem, color=["tab:blue", "tab:orange"])
    ax1.set_xticks([0, 1])
    ax1.set_xticklabels(["packed", "float"], fontsize=8)
    ax1.set_ylabel("weight memory (bits)")
    return fig


def render_figure(result, path) -> bool:
    """Render a figure for `result` to `path`; False when it has no figure."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(result, SweepResult):
        fig = _sweep_figure(plt, result)
    elif isinstance(result, IsometryProbe):
        fig = _isometry_figure(plt, result)
    elif isinstance(result, DriftReport):
        fig = _drift_figure(plt, result)
    elif isinstance(result, CostReport):
        fig = _cost_figure(plt, result)
    else:
        return False
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return True
