"""Command-line surface over training, conversion, verification, and faults.

Every subcommand takes `--seed`, `--config <file>`, and `--out <dir>`, writes
its reports under the output directory, and removes anything it wrote when a
later step fails, so an output directory never holds a partial result. All
randomness descends from the single seed, split once per subcommand, and no
output embeds wall-clock state: rerunning a command reproduces its files
byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 data or model-file
error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .config import ConfigError, Settings, build_arch, parse_config
from .data import DataError, load_idx, synth_sphere
from .ehd import EhdModel, EmbedSpec, convert_model, cost_report, ehd_evaluate
from .gnet import ASU, RASU, TASU, DenseLayer, GNetModel
from .modelio import ModelIOError, load_model, save_model
from .report import _fmt, emit_report, render_figure
from .rng import RngStream
from .robust import robustness_sweep
from .train import TrainConfig, evaluate, fit, init_model, weight_drift
from .verify import (
    SweepResult,
    asu_isometry_probe,
    grad_check,
    grothendieck_mc,
    layer_discrepancy_sweep,
    near_isometry_sweep,
    network_delta_trace,
    rademacher_error_curve,
)

__all__ = ["cli", "main"]

_USAGE_EXIT = 1
_DATA_EXIT = 2

# Stable per-subcommand stream tags so adding a command never reshuffles
# the randomness of the others.
_TAGS = {
    "train": 1,
    "eval": 2,
    "convert": 3,
    "ehd-eval": 4,
    "grothendieck": 5,
    "isometry": 6,
    "layer": 7,
    "network": 8,
    "asu-iso": 9,
    "rademacher": 10,
    "gradcheck": 11,
    "robust-weights": 12,
    "robust-floatbits": 13,
    "robust-hypervector": 14,
    "cost": 15,
    "drift": 16,
}

_ROBUST_MODES = {
    "weights": "per-layer",
    "floatbits": "float-bit-patterns",
    "hypervector": "first-embedding-only",
}


class UsageError(Exception):
    """Bad flags or inconsistent command arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _Outputs:
    """Tracks files written by one command so failures leave no partials."""

    def __init__(self, out_dir: str):
        self.dir = out_dir
        self.paths = []

    def path(self, name: str) -> str:
        os.makedirs(self.dir, exist_ok=True)
        p = os.path.join(self.dir, name)
        self.paths.append(p)
        return p

    def discard(self) -> None:
        for p in self.paths:
            try:
                os.remove(p)
            except OSError:
                pass


# ----------------------------------------------------------------- helpers
def _rng(args, tag: str) -> RngStream:
    return RngStream(args.seed).derive(_TAGS[tag])


def _settings(args) -> Settings:
    if args.config is None:
        return Settings({})
    return parse_config(args.config)


def _warn_unused(cfg: Settings) -> None:
    extra = cfg.unused()
    if extra:
        print(f"warning: unused config keys: {', '.join(sorted(extra))}", file=sys.stderr)


def _dataset(cfg: Settings, split: str):
    source = cfg.get_str("data", "synth")
    if source == "synth":
        n = cfg.get_int("synth_n", 512)
        dim = cfg.get_int("synth_dim", 8)
        classes = cfg.get_int("synth_classes", 3)
        noise = cfg.get_float("synth_noise", 0.05)
        base = cfg.get_int("synth_seed", 7)
        return synth_sphere(n, dim, classes, noise, base + (1 if split == "test" else 0))
    if source == "mnist":
        d = cfg.get_str("mnist_dir", "data/mnist")
        prefix = "train" if split == "train" else "t10k"
        ds = load_idx(
            os.path.join(d, f"{prefix}-images-idx3-ubyte.gz"),
            os.path.join(d, f"{prefix}-labels-idx1-ubyte.gz"),
            split=split,
        )
        limit = cfg.get_int("train_limit" if split == "train" else "test_limit", 0)
        if limit:
            ds = ds.subset(np.arange(min(limit, len(ds))))
        return ds
    raise ConfigError(f"unknown data source {source!r}")


def _input_shape(arch_text: str, ds) -> tuple:
    first = arch_text.split(",")[0].strip()
    shape = ds.sample_shape
    if first.startswith("conv"):
        return tuple(shape) if len(shape) == 3 else (1,) + tuple(shape)
    return (int(np.prod(shape)),)


def _optional_float(cfg: Settings, key: str):
    value = cfg.get_float(key, math.nan)
    return None if math.isnan(value) else value


def _load_gnet(path) -> GNetModel:
    model = load_model(path)
    if not isinstance(model, GNetModel):
        raise UsageError(f"{path} holds a binary model; this command needs a float model")
    return model


def _load_ehd(path) -> EhdModel:
    model = load_model(path)
    if not isinstance(model, EhdModel):
        raise UsageError(f"{path} holds a float model; this command needs a converted model")
    return model


def _emit_all(result, stem: str, outputs: _Outputs) -> None:
    emit_report(result, "csv", outputs.path(f"{stem}.csv"))
    emit_report(result, "json", outputs.path(f"{stem}.json"))
    render_figure(result, outputs.path(f"{stem}.png"))


def _unit_rows(rng: RngStream, n: int, p: int) -> np.ndarray:
    W = rng.normal((n, p))
    return W / np.linalg.norm(W, axis=1, keepdims=True)


def _activation(name: str, kappa: float):
    if name == "asu":
        return ASU
    if name == "rasu":
        return RASU
    if name == "tasu":
        return TASU(kappa)
    raise UsageError(f"unknown activation {name!r}")


def _int_grid(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as e:
        raise UsageError(f"bad grid {text!r}") from e


def _float_grid(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as e:
        raise UsageError(f"bad grid {text!r}") from e


def _write_history(history, path) -> None:
    keys = ("epoch", "loss", "train_acc", "test_acc")
    lines = [",".join(keys)]
    for row in history:
        lines.append(",".join(_fmt(row[k]) for k in keys))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- commands
def _cmd_train(args, outputs: _Outputs) -> None:
    cfg = _settings(args)
    train_ds = _dataset(cfg, "train")
    test_ds = _dataset(cfg, "test")
    arch_text = cfg.get_str("arch")
    arch = build_arch(
        arch_text,
        _input_shape(arch_text, train_ds),
        cfg.get_str("act", "rasu"),
        _optional_float(cfg, "kappa"),
    )
    tc = TrainConfig(
        epochs=cfg.get_int("epochs", 5),
        batch_size=cfg.get_int("batch", 64),
        lr=cfg.get_float("lr", 0.01),
        seed=args.seed,
        optimizer=cfg.get_str("optimizer", "adam"),
    )
    _warn_unused(cfg)
    model = init_model(arch, _rng(args, "train"))
    model, history = fit(model, train_ds, tc, eval_dataset=test_ds)
    save_model(model, outputs.path("model.gnet"))
    _write_history(history, outputs.path("history.csv"))
    last = history[-1]
    print(
        f"epochs={last['epoch']} loss={last['loss']:.6f} "
        f"train_acc={last['train_acc']:.4f} test_acc={last['test_acc']:.4f}"
    )


def _cmd_eval(args, outputs: _Outputs) -> None:
    model = _load_gnet(args.model)
    cfg = _settings(args)
    ds = _dataset(cfg, args.split)
    _warn_unused(cfg)
    acc = evaluate(model, ds)
    metrics = {"accuracy": acc, "samples": len(ds)}
    emit_report(metrics, "csv", outputs.path("metrics.csv"))
    emit_report(metrics, "json", outputs.path("metrics.json"))
    print(f"accuracy={acc:.4f} samples={len(ds)}")


def _cmd_convert(args, outputs: _Outputs) -> None:
    model = _load_gnet(args.model)
    cfg = _settings(args)
    kind = cfg.get_str("embed_kind", "rademacher")
    width = cfg.get_int("embed_n", 8192)
    _warn_unused(cfg)
    specs = [EmbedSpec(kind, width, args.seed, li) for li in range(len(model.layers))]
    ehd = convert_model(model, specs)
    save_model(ehd, outputs.path("model.ehdg"))
    print(f"converted {len(model.layers)} layers: kind={kind} width={width}")


def _cmd_ehd_eval(args, outputs: _Outputs) -> None:
    model = _load_ehd(args.model)
    cfg = _settings(args)
    ds = _dataset(cfg, args.split)
    _warn_unused(cfg)
    acc = ehd_evaluate(model, ds)
    metrics = {"accuracy": acc, "samples": len(ds)}
    emit_report(metrics, "csv", outputs.path("metrics.csv"))
    emit_report(metrics, "json", outputs.path("metrics.json"))
    print(f"accuracy={acc:.4f} samples={len(ds)}")


def _cmd_grothendieck(args, outputs: _Outputs) -> None:
    rng = _rng(args, "grothendieck")
    pairs, estimates, targets = [], [], []
    for i in range(args.pairs):
        sub = rng.derive(0, i)
        u = sub.derive(0).normal((args.p,))
        v = sub.derive(1).normal((args.p,))
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        est = grothendieck_mc(u, v, args.n, args.kind, rng.derive(1, i))
        target = (2.0 / math.pi) * math.asin(float(np.clip(u @ v, -1.0, 1.0)))
        print(
            f"pair {i + 1}: estimate={est:.6f} target={target:.6f} "
            f"abs_err={abs(est - target):.3e}"
        )
        pairs.append(i + 1)
        estimates.append(est)
        targets.append(target)
    res = SweepResult(
        grid=tuple(pairs),
        mean=tuple(estimates),
        std=(0.0,) * len(pairs),
        trials=args.n,
        bound=tuple(targets),
        info={"mode": f"sign correlation, {args.kind}", "p": args.p},
    )
    _emit_all(res, "grothendieck", outputs)


def _cmd_isometry(args, outputs: _Outputs) -> None:
    res = near_isometry_sweep(args.n, _int_grid(args.grid), args.pairs, _rng(args, "isometry"))
    _emit_all(res, "isometry", outputs)
    print(
        f"N={res.grid[-1]}: mean|D_H-D_G|={res.mean[-1]:.6f} "
        f"metric_identity_max={res.info['metric_identity_max']:.3e}"
    )


def _cmd_layer(args, outputs: _Outputs) -> None:
    rng = _rng(args, "layer")
    layer = DenseLayer(_unit_rows(rng.derive(0), args.n, args.p), 0.0, _activation(args.act, args.kappa))
    inputs = _unit_rows(rng.derive(1), args.samples, args.p)
    res = layer_discrepancy_sweep(
        layer,
        inputs,
        _int_grid(args.grid),
        args.trials,
        args.kind,
        rng.derive(2),
        c=args.c,
        lmin=args.lmin,
        eps=args.eps,
    )
    _emit_all(res, "layer", outputs)
    print(f"N={res.grid[-1]}: mean discrepancy={res.mean[-1]:.6f} bound={res.bound[-1]:.6f}")


def _cmd_network(args, outputs: _Outputs) -> None:
    gnet = _load_gnet(args.model)
    ehd = _load_ehd(args.ehd)
    cfg = _settings(args)
    ds = _dataset(cfg, args.split)
    _warn_unused(cfg)
    X = ds.inputs.reshape((len(ds),) + gnet.input_shape)[: args.samples]
    res = network_delta_trace(gnet, ehd, X)
    _emit_all(res, "network", outputs)
    per_layer = " ".join(f"{m:.4f}" for m in res.mean)
    print(f"per-layer discrepancy: {per_layer}")


def _cmd_asu_iso(args, outputs: _Outputs) -> None:
    probe = asu_isometry_probe(args.n, args.p, args.pairs, _rng(args, "asu-iso"))
    _emit_all(probe, "asu_iso", outputs)
    print(
        f"beta_inv={probe.beta_inv:.6f} observed=[{probe.min_distortion:.6f}, "
        f"{probe.max_distortion:.6f}]"
    )


def _cmd_rademacher(args, outputs: _Outputs) -> None:
    res = rademacher_error_curve(
        _int_grid(args.grid), args.trials, args.n, _rng(args, "rademacher")
    )
    _emit_all(res, "rademacher", outputs)
    print(f"p={res.grid[-1]}: mean|err|={res.mean[-1]:.6f}")


def _cmd_gradcheck(args, outputs: _Outputs) -> None:
    cfg = _settings(args)
    ds = _dataset(cfg, "train")
    arch_text = cfg.get_str("arch", "dense:8,head:3")
    arch = build_arch(
        arch_text,
        _input_shape(arch_text, ds),
        cfg.get_str("act", "rasu"),
        _optional_float(cfg, "kappa"),
    )
    _warn_unused(cfg)
    model = init_model(arch, _rng(args, "gradcheck"))
    m = min(args.samples, len(ds))
    X = ds.inputs.reshape((len(ds),) + model.input_shape)[:m]
    labels = ds.labels[:m]
    err = grad_check(model, X, labels)
    metrics = {"max_rel_err": err, "samples": m}
    emit_report(metrics, "csv", outputs.path("gradcheck.csv"))
    emit_report(metrics, "json", outputs.path("gradcheck.json"))
    print(f"max_rel_err={err:.3e} samples={m}")


def _cmd_robust(args, outputs: _Outputs) -> None:
    mode = _ROBUST_MODES[args.fault]
    if mode == "float-bit-patterns" and args.model is None:
        raise UsageError("floatbits needs --model")
    if mode != "float-bit-patterns" and args.ehd is None:
        raise UsageError(f"{args.fault} needs --ehd")
    gnet = _load_gnet(args.model) if args.model else None
    ehd = _load_ehd(args.ehd) if args.ehd else None
    cfg = _settings(args)
    ds = _dataset(cfg, args.split)
    _warn_unused(cfg)
    res = robustness_sweep(
        gnet,
        ehd,
        ds,
        _float_grid(args.grid),
        args.trials,
        mode,
        _rng(args, f"robust-{args.fault}"),
        include_embeds=not args.codes_only,
        bits_per_weight=args.bits,
    )
    _emit_all(res, f"robust_{args.fault}", outputs)
    for rho, m, s in zip(res.grid, res.mean, res.std):
        print(f"rho={rho:g}: accuracy={m:.4f} std={s:.4f}")


def _cmd_cost(args, outputs: _Outputs) -> None:
    gnet = _load_gnet(args.model)
    ehd = _load_ehd(args.ehd)
    rep = cost_report(gnet, ehd, bits_per_real=args.bits)
    _emit_all(rep, "cost", outputs)
    t = rep.totals
    print(
        f"binary: xor={t['xor_words']} popcount={t['popcount_words']} "
        f"adds={t['int_adds']} | float: macs={t['fp_macs']} | "
        f"memory bits {t['ehd_memory_bits']} vs {t['fp_memory_bits']}"
    )


def _cmd_drift(args, outputs: _Outputs) -> None:
    a = _load_gnet(args.model_a)
    b = _load_gnet(args.model_b)
    rep = weight_drift(a, b)
    _emit_all(rep, "drift", outputs)
    print(f"max_ks={rep.max_ks:.6f}")


# ------------------------------------------------------------------ parser
def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", default=None, metavar="FILE")
    sub.add_argument("--out", default=".", metavar="DIR")


def _build_parser() -> _Parser:
    parser = _Parser(prog="signet", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="cmd", required=True)

    p = subs.add_parser("train", help="fit a float model from a config")
    _add_common(p)
    p.set_defaults(handler=_cmd_train)

    p = subs.add_parser("eval", help="accuracy of a float model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(handler=_cmd_eval)

    p = subs.add_parser("convert", help="embed a float model into packed sign codes")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(handler=_cmd_convert)

    p = subs.add_parser("ehd-eval", help="accuracy of a converted model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(handler=_cmd_ehd_eval)

    verify = subs.add_parser("verify", help="quantitative checks of the conversion")
    vsubs = verify.add_subparsers(dest="check", required=True)

    p = vsubs.add_parser("grothendieck", help="sign-correlation estimate vs arcsin target")
    _add_common(p)
    p.add_argument("--n", type=int, default=100000, help="samples per estimate")
    p.add_argument("--p", type=int, default=32, help="vector dimension")
    p.add_argument("--pairs", type=int, default=5)
    p.add_argument("--kind", choices=("gaussian", "rademacher"), default="gaussian")
    p.set_defaults(handler=_cmd_grothendieck)

    p = vsubs.add_parser("isometry", help="Hamming vs geodesic distance of sign codes")
    _add_common(p)
    p.add_argument("--n", type=int, default=16, help="vector dimension")
    p.add_argument("--grid", default="1024,4096,16384", help="code widths")
    p.add_argument("--pairs", type=int, default=200)
    p.set_defaults(handler=_cmd_isometry)

    p = vsubs.add_parser("layer", help="single-layer discrepancy vs width")
    _add_common(p)
    p.add_argument("--n", type=int, default=64, help="layer units")
    p.add_argument("--p", type=int, default=32, help="input dimension")
    p.add_argument("--grid", default="256,1024,4096", help="embedding widths")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--samples", type=int, default=4, help="probe inputs")
    p.add_argument("--act", choices=("asu", "rasu", "tasu"), default="rasu")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--kind", choices=("gaussian", "rademacher"), default="gaussian")
    p.add_argument("--c", type=float, default=3.0, help="confidence constant in the bound")
    p.add_argument("--lmin", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.set_defaults(handler=_cmd_layer)

    p = vsubs.add_parser("network", help="per-layer discrepancy of a converted model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--ehd", required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(handler=_cmd_network)

    p = vsubs.add_parser("asu-iso", help="distortion envelope of a normalized arcsin layer")
    _add_common(p)
    p.add_argument("--n", type=int, default=256, help="layer units")
    p.add_argument("--p", type=int, default=16, help="input dimension")
    p.add_argument("--pairs", type=int, default=200)
    p.set_defaults(handler=_cmd_asu_iso)

    p = vsubs.add_parser("rademacher", help="sign-identity error vs dimension")
    _add_common(p)
    p.add_argument("--grid", default="64,256,1024", help="dimensions")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--n", type=int, default=100000, help="samples per trial")
    p.set_defaults(handler=_cmd_rademacher)

    p = vsubs.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _add_common(p)
    p.add_argument("--samples", type=int, default=16)
    p.set_defaults(handler=_cmd_gradcheck)

    robust = subs.add_parser("robust", help="accuracy under injected faults")
    rsubs = robust.add_subparsers(dest="fault", required=True)
    for fault, blurb in (
        ("weights", "flip packed code and embedding bits"),
        ("floatbits", "flip raw float weight bits"),
        ("hypervector", "flip input hypervector bits"),
    ):
        p = rsubs.add_parser(fault, help=blurb)
        _add_common(p)
        p.add_argument("--model", default=None)
        p.add_argument("--ehd", default=None)
        p.add_argument("--grid", default="0,0.05,0.1,0.2", help="flip fractions")
        p.add_argument("--trials", type=int, default=5)
        p.add_argument("--split", choices=("train", "test"), default="test")
        p.add_argument("--codes-only", action="store_true",
                       help="leave embedding bits untouched")
        p.add_argument("--bits", type=int, choices=(32, 64), default=32,
                       help="float width for floatbits")
        p.set_defaults(handler=_cmd_robust)

    p = subs.add_parser("cost", help="binary vs float inference cost")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--ehd", required=True)
    p.add_argument("--bits", type=int, default=32, help="bits per float weight")
    p.set_defaults(handler=_cmd_cost)

    p = subs.add_parser("drift", help="weight distribution shift between two models")
    _add_common(p)
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.set_defaults(handler=_cmd_drift)

    return parser


def cli(argv) -> int:
    """Run one command; returns the process exit code."""
    parser = _build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return _USAGE_EXIT
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return _USAGE_EXIT
    except SystemExit as e:  # --help
        return int(e.code or 0)
    outputs = _Outputs(args.out)
    try:
        args.handler(args, outputs)
        return 0
    except (UsageError, ConfigError, ValueError) as e:
        outputs.discard()
        print(f"error: {e}", file=sys.stderr)
        return _USAGE_EXIT
    except (DataError, ModelIOError, OSError) as e:
        outputs.discard()
        print(f"error: {e}", file=sys.stderr)
        return _DATA_EXIT


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
