"""Command-line entry point: ``geobound <verb> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness
from .bounds import BoundConstants, FunctionClassSpec, evaluate_bounds
from .estimate import estimate_geometry
from .fixtures import FIXTURES, make_fixture
from .harness import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, ConfigError
from .lipnet import TrainConfig, risk, train
from .spaceform import SpaceFormGeometry, embed_ambient, make_task, sample_uniform_ball

log = logging.getLogger("geobound")


def write_sample(sample, path) -> None:
    """Ambient points plus labels as CSV, geometry and seed in a JSON sidecar."""
    path = Path(path)
    X = sample.ambient_points if sample.ambient_points is not None else sample.intrinsic_points
    cols = [f"x{i}" for i in range(X.shape[1])]
    data = X
    if sample.labels is not None:
        cols.append("label")
        data = np.column_stack([X, sample.labels])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    side = dict(sample.geometry.to_dict(), seed=sample.seed)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def read_labeled(path):
    """(X, y) from a CSV whose header ends in ``label``."""
    path = Path(path)
    header = path.read_text().split("\n", 1)[0].split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header[-1] != "label":
        raise ConfigError(f"{path} has no label column")
    return data[:, :-1], data[:, -1]


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _constants(text) -> BoundConstants:
    try:
        return BoundConstants.parse(text) if text else BoundConstants()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad --constants: {exc}") from exc


def cmd_sample(args) -> int:
    geom = SpaceFormGeometry.ball(args.d, args.kappa, args.radius)
    s = sample_uniform_ball(geom, args.n, args.seed)
    s = embed_ambient(s, args.D or geom.model_dim, args.embed_seed)
    if args.task:
        s = make_task(s, args.task, args.seed, noise=args.noise)
    write_sample(s, args.out)
    print(args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    X = harness.load_points(args.input)
    if args.drop_last:
        X = X[:, :-1]
    est = estimate_geometry(X, k=args.k, n_triangles=args.triangles, seed=args.seed)
    out = est.to_dict()
    if not args.residuals:
        out["diagnostics"].pop("residuals", None)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_bound(args) -> int:
    geom = SpaceFormGeometry.ball(args.d, args.kappa, args.radius)
    spec = FunctionClassSpec(L=args.L, B=args.B, L_loss=args.L_loss)
    rep = evaluate_bounds(geom, spec, args.n, args.D, _constants(args.constants), eps=args.eps)
    print(rep.to_json())
    return EXIT_OK


def cmd_train(args) -> int:
    X, y = read_labeled(args.input)
    cfg = TrainConfig(hidden_width=args.width, epochs=args.epochs, batch=min(args.batch, len(X)),
                      step_size=args.step_size, target_norm=args.target_norm, loss=args.loss,
                      seed=args.seed, output_bound=args.B)
    res = train(X, np.clip(y, -args.B, args.B), cfg)
    Path(args.out).write_text(res.net.to_json())
    print(json.dumps({"checkpoint": args.out, "train_risk": risk(res.net, X, y, args.loss),
                      "loss_history": res.loss_history}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = _parse_sets(args.set)
    overrides["experiment.kind"] = args.kind
    if args.constants:
        for k, v in asdict(_constants(args.constants)).items():
            overrides[f"constants.{k}"] = repr(v)
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    text = Path(args.config).read_text() if args.config else ""
    if args.config and args.config.endswith(".csv"):
        text = harness.config_from_results(text)
    cfg = harness.parse_config(text, overrides)
    table, run_dir, code = harness.run_experiment(cfg, args.out)
    print(run_dir)
    summary = table.metadata.get("summary")
    if summary:
        print(json.dumps(summary, indent=2, default=str))
    return code


def cmd_plotdata(args) -> int:
    table = harness.read_csv(args.input)
    try:
        manifest = harness.emit_plot_data(table, args.x, args.y, args.group, args.out)
    except harness.UnknownColumnError as exc:
        raise ConfigError(f"unknown column {exc}") from exc
    print(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_fixtures(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.names or sorted(FIXTURES):
        X = make_fixture(name, seed=args.seed)
        p = out / f"{name}.csv"
        header = ",".join(f"x{i}" for i in range(X.shape[1]))
        np.savetxt(p, X, delimiter=",", header=header, comments="", fmt="%.17g")
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geobound", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("sample", help="sample a space-form ball and embed it")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--D", type=int, default=0, help="ambient dimension (default: model)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-seed", type=int, default=None)
    p.add_argument("--task", choices=["regression", "classification"])
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("estimate", help="estimate intrinsic dimension and curvature")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--triangles", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-last", action="store_true", help="ignore a trailing label column")
    p.add_argument("--residuals", action="store_true")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("bound", help="evaluate all bounds for one configuration")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--B", type=float, default=1.0)
    p.add_argument("--L-loss", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--constants", default="")
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("train", help="train a spectrally normalized net on a labeled CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--target-norm", type=float, default=1.0)
    p.add_argument("--loss", choices=["squared", "hinge"], default="squared")
    p.add_argument("--B", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("experiment", help="run an experiment grid")
    p.add_argument("kind", choices=harness.KINDS)
    p.add_argument("--config", help="INI file, or a results.csv to rerun")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--constants", default="", help="e.g. c_pack=1,big_o_scale=0.5")
    p.add_argument("--out", default=None, help="base output directory")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("plotdata", help="split a results CSV into per-group series")
    p.add_argument("--input", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--group", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plotdata)

    p = sub.add_parser("fixtures", help="write the bundled point-cloud fixtures")
    p.add_argument("--out", required=True)
    p.add_argument("--names", nargs="*", choices=sorted(FIXTURES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_fixtures)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
