"""Command line: ``tnn-spde run | report | validate``.

Settings are resolved in increasing priority: built-in desk defaults, the
paper-scale preset (when enabled), a TOML config file, ``TNNSPDE_*``
environment variables, then command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diffnet import NetArchitecture
from .errors import InvalidArgumentError, NonCoerciveProblemError, NumericFailureError
from .loss import FORMS
from .metrics import error_report
from .optim import Schedule, Stage, paper_schedule, read_history, train
from .problem import EXAMPLES, ellipticity_lower_bound, make_problem
from .quad import composite_rule
from .tnn import model_for_problem, save_checkpoint

logger = logging.getLogger("tnn_spde")

ENV_PREFIX = "TNNSPDE_"

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NONCOERCIVE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4, 5
EXIT_INTERRUPTED = 130

# final (e_l2, e_h1) of the published tables, keyed by (example, M)
PAPER_ERRORS = {
    ("example1", 10): (6.515e-08, 2.047e-07), ("example1", 20): (3.606e-07, 1.133e-06),
    ("example1", 50): (5.345e-06, 1.720e-05), ("example1", 100): (6.506e-06, 2.226e-05),
    ("example2", 10): (6.206e-08, 1.950e-07), ("example2", 20): (2.832e-07, 8.898e-07),
    ("example2", 50): (5.803e-06, 1.830e-05), ("example2", 100): (6.031e-06, 1.941e-05),
    ("example3", 10): (3.609e-08, 1.141e-07), ("example3", 20): (5.958e-07, 1.872e-06),
    ("example3", 50): (5.983e-06, 1.898e-05), ("example3", 100): (6.855e-06, 2.198e-05),
}


@dataclass
class RunConfig:
    example: str = "example1"
    M: int = 10
    alpha: float = 2.0
    d: int = 1
    p: int = 20
    hidden_layers: int = 3
    width: int = 100
    loss: str = "weak"
    subintervals: int = 50
    gauss_points: int = 8
    adam_steps: int = 20_000
    adam_lr: float = 1e-3
    lbfgs_steps: int = 500
    lbfgs_lr: float = 0.1
    eval_every: int = 100
    checkpoint_every: int = 0
    seed: int = 0
    out: str = "runs/latest"
    deterministic: bool = False
    paper_scale: bool = False

    def validate(self):
        if self.example not in EXAMPLES:
            raise InvalidArgumentError(f"example must be one of {', '.join(EXAMPLES)}, got {self.example!r}")
        if self.loss not in FORMS:
            raise InvalidArgumentError(f"loss must be one of {', '.join(FORMS)}, got {self.loss!r}")
        if self.d != 1:
            raise InvalidArgumentError("only d = 1 spatial dimension is supported by the shipped examples")
        for name in ("M", "p", "hidden_layers", "width", "subintervals", "gauss_points", "eval_every"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        for name in ("adam_steps", "lbfgs_steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")
        if self.adam_steps + self.lbfgs_steps < 1:
            raise InvalidArgumentError("the schedule has no steps")
        for name in ("adam_lr", "lbfgs_lr", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite")

    def schedule(self) -> Schedule:
        stages = []
        if self.adam_steps:
            stages.append(Stage("adam", self.adam_lr, self.adam_steps))
        if self.lbfgs_steps:
            stages.append(Stage("lbfgs", self.lbfgs_lr, self.lbfgs_steps))
        return Schedule(tuple(stages), self.loss, self.eval_every, self.checkpoint_every)

    def to_toml(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, str):
                s = json.dumps(v)
            else:
                s = repr(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    kind = FIELDS[name].type
    if kind == "bool":
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off", ""):
                return False
            raise InvalidArgumentError(f"{name}: cannot read {value!r} as a boolean")
        return bool(value)
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{name}: cannot read {value!r} as {kind}") from None
    return str(value)


def paper_preset(M: int) -> dict:
    sched = paper_schedule(M)
    adam, lbfgs = sched.stages
    return dict(subintervals=200, gauss_points=16, p=50, loss=sched.form,
                adam_steps=adam.steps, adam_lr=adam.lr, lbfgs_steps=lbfgs.steps, lbfgs_lr=lbfgs.lr,
                eval_every=sched.eval_every)


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    unknown = sorted(set(doc) - set(FIELDS))
    if unknown:
        raise InvalidArgumentError(f"{path}: unknown keys {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in doc.items()}


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name in FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = _coerce(name, environ[key])
    return out


def resolve_config(cli: dict, config_path=None, environ=None) -> RunConfig:
    layers = [load_config_file(config_path) if config_path else {}, env_overrides(environ),
              {k: v for k, v in cli.items() if v is not None}]
    merged = {}
    for layer in layers:
        merged.update(layer)
    values = dataclasses.asdict(RunConfig())
    if merged.get("paper_scale"):
        values.update(paper_preset(int(merged.get("M", values["M"]))))
    for layer in layers:
        values.update({k: _coerce(k, v) for k, v in layer.items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _limit_threads(deterministic: bool):
    """Pin BLAS and torch to one thread so reductions run in a fixed order."""
    if not deterministic:
        return None
    from threadpoolctl import threadpool_limits

    try:
        import torch

        torch.set_num_threads(1)
    except ImportError:  # pragma: no cover
        pass
    return threadpool_limits(limits=1)


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(cfg.to_toml())
    except OSError as exc:
        logger.error("cannot write to output directory %s: %s", out, exc)
        return EXIT_IO

    spec = make_problem(cfg.example, cfg.M, cfg.alpha)
    try:
        bound = ellipticity_lower_bound(spec)
    except NonCoerciveProblemError as exc:
        logger.error("%s", exc)
        return EXIT_NONCOERCIVE
    rules = [composite_rule(I, cfg.subintervals, cfg.gauss_points) for I in spec.domains]
    arch = NetArchitecture(cfg.hidden_layers, cfg.width, cfg.p)
    model = model_for_problem(spec, arch, cfg.seed)
    ckpt = out / "checkpoint.json"
    logger.info("%s M=%d, %d parameters, %s loss, %d steps", cfg.example, cfg.M, model.n_params, cfg.loss,
                cfg.adam_steps + cfg.lbfgs_steps)

    limiter = _limit_threads(cfg.deterministic)
    t0 = time.perf_counter()
    status = EXIT_OK
    history = None
    try:
        history = train(model, spec, rules, cfg.schedule(), checkpoint_path=ckpt)
    except NumericFailureError as exc:
        logger.error("numeric failure (%s); last good parameters saved to %s", exc, ckpt)
        status = EXIT_NUMERIC
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    runtime = time.perf_counter() - t0

    try:
        save_checkpoint(model, ckpt)
        if history is not None:
            history.write_csv(out / "metrics.csv", cfg.deterministic)
            history.write_timings(out / "timing.csv")
            last = history.rows[-1]
            errs = error_report(model, spec, rules)
            final = {
                "example": cfg.example, "M": cfg.M, "loss_form": cfg.loss,
                "steps": last.step, "interrupted": history.interrupted,
                "final_loss": last.loss, "e_l2": last.e_l2, "e_h1": last.e_h1, "e_h1_full": errs.e_h1_full,
                "ellipticity_lower_bound": bound, "runtime_s": runtime,
            }
            (out / "final.json").write_text(json.dumps(final, indent=1) + "\n")
            logger.info("final e_l2=%.4e e_h1=%.4e after %d steps (%.1f s)", last.e_l2, last.e_h1, last.step, runtime)
            if history.interrupted:
                status = EXIT_INTERRUPTED
    except OSError as exc:
        logger.error("cannot write results to %s: %s", out, exc)
        return EXIT_IO
    return status


# report

def _locate(path: Path):
    if path.is_dir():
        return path / "metrics.csv", path
    return path, path.parent


def _run_identity(run_dir: Path):
    final = run_dir / "final.json"
    if final.exists():
        doc = json.loads(final.read_text())
        return doc["example"], int(doc["M"])
    cfg = run_dir / "config.toml"
    if cfg.exists():
        doc = load_config_file(cfg)
        return doc["example"], int(doc["M"])
    raise InvalidArgumentError(f"{run_dir}: no final.json or config.toml to identify the run")


def collect_rows(paths) -> list[dict]:
    rows = []
    for p in paths:
        metrics, run_dir = _locate(Path(p))
        try:
            history = read_history(metrics)
            if not len(history):
                raise InvalidArgumentError(f"{metrics}: no rows")
            example, M = _run_identity(run_dir)
        except (OSError, ValueError, KeyError, tomllib.TOMLDecodeError) as exc:
            logger.warning("skipping %s: %s", p, exc)
            continue
        last = history.rows[-1]
        rows.append({"example": example, "M": M, "steps": last.step, "e_l2": last.e_l2, "e_h1": last.e_h1,
                     "source": str(metrics)})
    rows.sort(key=lambda r: (r["example"], r["M"]))
    return rows


def format_report(rows, fmt="markdown", paper_reference=False) -> str:
    header = ["example", "M", "steps", "e_l2", "e_h1"]
    if paper_reference:
        header.append("paper e_l2 / e_h1")
    body = []
    for r in rows:
        cells = [r["example"], str(r["M"]), str(r["steps"]), f"{r['e_l2']:.3e}", f"{r['e_h1']:.3e}"]
        if paper_reference:
            ref = PAPER_ERRORS.get((r["example"], r["M"]))
            cells.append(f"{ref[0]:.3e} / {ref[1]:.3e}" if ref else "")
        body.append(cells)
    if fmt == "csv":
        lines = [",".join(header)] + [",".join(c) for c in body]
    else:
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(c) + " |" for c in body]
    return "\n".join(lines) + "\n"


def report(paths, fmt="markdown", paper_reference=False, output=None) -> int:
    rows = collect_rows(paths)
    text = format_report(rows, fmt, paper_reference)
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if rows else EXIT_FAILED


def validate(suites=None) -> int:
    from .validate import run_suites

    results = run_suites(suites)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAILED


# argument parsing

def _add_run_flags(p):
    p.add_argument("--config", help="TOML file with run settings (flat keys named like the flags)")
    p.add_argument("--example", choices=EXAMPLES)
    p.add_argument("--M", type=int)
    p.add_argument("--alpha", type=float, help="decay exponent of example 1's coefficients")
    p.add_argument("--p", type=int, help="TNN rank")
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--loss", choices=FORMS)
    p.add_argument("--subintervals", type=int)
    p.add_argument("--gauss-points", type=int)
    p.add_argument("--adam-steps", type=int)
    p.add_argument("--adam-lr", type=float)
    p.add_argument("--lbfgs-steps", type=int)
    p.add_argument("--lbfgs-lr", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--paper-scale", action="store_true", default=None,
                   help="200x16 quadrature, p=50 and the published schedules")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded kernels; metrics.csv is byte-reproducible")
    p.add_argument("--validate", action="store_true", help="run the validation suites instead of training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnn-spde", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="logging level (default INFO)")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_run_flags(sub.add_parser("run", parents=[common], help="train a TNN on one benchmark"))
    rep = sub.add_parser("report", parents=[common], help="tabulate final errors of finished runs")
    rep.add_argument("paths", nargs="+", help="run directories or metrics.csv files")
    rep.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    rep.add_argument("--paper-reference", action="store_true", help="add the published errors as a column")
    rep.add_argument("--output")
    val = sub.add_parser("validate", parents=[common], help="run the self-check suites")
    from .validate import SUITES

    val.add_argument("--suite", action="append", choices=sorted(SUITES))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.verb == "validate":
        return validate(args.suite)
    if args.verb == "report":
        return report(args.paths, args.format, args.paper_reference, args.output)
    if args.validate:
        return validate()
    cli = {k: v for k, v in vars(args).items() if k in FIELDS}
    try:
        cfg = resolve_config(cli, args.config)
    except (InvalidArgumentError, OSError, tomllib.TOMLDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    try:
        return run(cfg)
    except KeyboardInterrupt:
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
