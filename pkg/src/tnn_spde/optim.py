"""Adam, fixed-step L-BFGS and the staged training driver."""

from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .loss import FORMS, loss_plan
from .metrics import error_report
from .tnn import TNNModel, build_factors, save_checkpoint

logger = logging.getLogger(__name__)

CURVATURE_EPS = 1e-14
OPTIMIZERS = ("adam", "lbfgs")
HISTORY_HEADER = ("step", "stage", "loss", "e_l2", "e_h1", "elapsed_s")


def _check_finite(grads, blocks):
    if np.all(np.isfinite(grads)):
        return
    for name, sl in blocks or [("parameters", slice(None))]:
        if not np.all(np.isfinite(grads[sl])):
            raise NumericFailureError("non-finite gradient", where=name)
    raise NumericFailureError("non-finite gradient")


class Adam:
    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray, lr: float, blocks=None) -> None:
        """In-place update of ``params``."""
        if params.shape != grads.shape or params.shape != self.m.shape:
            raise InvalidArgumentError(f"shape mismatch: params {params.shape}, grads {grads.shape}")
        _check_finite(grads, blocks)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grads
        self.v *= b2
        self.v += (1.0 - b2) * (grads * grads)
        mhat = self.m / (1.0 - b1**self.t)
        vhat = self.v / (1.0 - b2**self.t)
        params -= lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(state: Adam, params, grads, lr, blocks=None):
    state.step(params, grads, lr, blocks)
    return params, state


class LBFGS:
    """Limited-memory BFGS with a fixed step length and no line search."""

    def __init__(self, n: int, memory: int = 10):
        self.memory = memory
        self.s: deque = deque(maxlen=memory)
        self.y: deque = deque(maxlen=memory)
        self.rho: deque = deque(maxlen=memory)
        self.prev_params: np.ndarray | None = None
        self.prev_grads: np.ndarray | None = None
        self.n = n
        self.fallbacks = 0

    def __len__(self):
        return len(self.s)

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Store a curvature pair unless s.y <= CURVATURE_EPS."""
        sy = float(s @ y)
        if not sy > CURVATURE_EPS:
            return False
        self.s.append(s)
        self.y.append(y)
        self.rho.append(1.0 / sy)
        return True

    def direction(self, grads: np.ndarray) -> np.ndarray:
        q = grads.copy()
        alphas = []
        for s, y, rho in zip(reversed(self.s), reversed(self.y), reversed(self.rho)):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if self.s:
            s, y = self.s[-1], self.y[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(zip(self.s, self.y, self.rho), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q

    def step(self, params: np.ndarray, grads: np.ndarray, lr: float, blocks=None) -> None:
        if params.shape != grads.shape or params.shape != (self.n,):
            raise InvalidArgumentError(f"shape mismatch: params {params.shape}, grads {grads.shape}")
        _check_finite(grads, blocks)
        with np.errstate(over="ignore", invalid="ignore"):
            if self.prev_params is not None:
                self.push(params - self.prev_params, grads - self.prev_grads)
            d = self.direction(grads)
        if not np.all(np.isfinite(d)):
            logger.warning("L-BFGS direction not finite; taking a steepest-descent step")
            self.fallbacks += 1
            d = -grads
        self.prev_params = params.copy()
        self.prev_grads = grads.copy()
        params += lr * d


def lbfgs_step(state: LBFGS, params, grads, lr, blocks=None):
    state.step(params, grads, lr, blocks)
    return params, state


@dataclass(frozen=True)
class Stage:
    kind: str
    lr: float
    steps: int

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise InvalidArgumentError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise InvalidArgumentError("learning rate must be positive")
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgumentError(f"stage step count must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class Schedule:
    stages: tuple
    form: str = "weak"
    eval_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.stages:
            raise InvalidArgumentError("a schedule needs at least one stage")
        if self.form not in FORMS:
            raise InvalidArgumentError(f"unknown loss form {self.form!r}")
        if self.eval_every < 1:
            raise InvalidArgumentError("evaluation cadence must be >= 1")

    @property
    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)


def desk_schedule(form="weak", adam_steps=20_000, adam_lr=1e-3, lbfgs_steps=500, lbfgs_lr=0.1, eval_every=100):
    stages = [Stage("adam", adam_lr, adam_steps)]
    if lbfgs_steps:
        stages.append(Stage("lbfgs", lbfgs_lr, lbfgs_steps))
    return Schedule(tuple(stages), form, eval_every)


def paper_schedule(M: int, eval_every: int = 1000) -> Schedule:
    """Strong form for M <= 20, weak form above, with the published step counts and rates."""
    if M <= 20:
        return Schedule((Stage("adam", 5e-4, 100_000), Stage("lbfgs", 0.5, 10_000)), "strong", eval_every)
    return Schedule((Stage("adam", 1e-4, 95_000), Stage("lbfgs", 0.1, 5_000)), "weak", eval_every)


@dataclass
class HistoryRow:
    step: int
    stage: str
    loss: float
    e_l2: float
    e_h1: float
    elapsed_s: float


@dataclass
class History:
    rows: list = field(default_factory=list)
    interrupted: bool = False

    def append(self, row: HistoryRow):
        if self.rows and row.step <= self.rows[-1].step:
            raise InvalidArgumentError("history steps must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path, deterministic: bool = False) -> None:
        """17-significant-digit CSV; elapsed_s is written as 0 in deterministic mode."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for r in self.rows:
                elapsed = 0.0 if deterministic else r.elapsed_s
                w.writerow([r.step, r.stage, _fmt(r.loss), _fmt(r.e_l2), _fmt(r.e_h1), _fmt(elapsed)])

    def write_timings(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "elapsed_s"))
            for r in self.rows:
                w.writerow([r.step, _fmt(r.elapsed_s)])


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def read_history(path) -> History:
    hist = History()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_HEADER:
            raise InvalidArgumentError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            hist.append(HistoryRow(int(rec["step"]), rec["stage"], float(rec["loss"]), float(rec["e_l2"]),
                                   float(rec["e_h1"]), float(rec["elapsed_s"])))
    return hist


def train(model: TNNModel, spec, rules, schedule: Schedule, callbacks=(), checkpoint_path=None) -> History:
    """Run the schedule's stages in order, updating ``model.theta`` in place.

    At step 0, every ``eval_every`` steps, and after the last update the loss
    and projection errors are recorded. A callback ``cb(row, model)`` returning
    True stops training after that row; so does KeyboardInterrupt.
    """
    plan = loss_plan(spec, rules, schedule.form)
    orders = [max(o, 1) if spec.role(t) == "spatial" else o for t, o in enumerate(plan.orders)]
    blocks = model.parameter_blocks()
    history = History()
    t0 = time.perf_counter()
    good = model.theta.copy()
    step = 0

    def record(stage, report, tables):
        errs = error_report(model, spec, rules, tables)
        row = HistoryRow(step, stage, report.value, errs.e_l2, errs.e_h1, time.perf_counter() - t0)
        history.append(row)
        logger.info("step %d [%s] loss=%.10g e_l2=%.4e e_h1=%.4e", step, stage, row.loss, row.e_l2, row.e_h1)
        return any(cb(row, model) for cb in callbacks)

    try:
        for stage in schedule.stages:
            opt = Adam(model.n_params) if stage.kind == "adam" else LBFGS(model.n_params)
            for _ in range(stage.steps):
                tables = build_factors(model, rules, orders)
                report = plan.evaluate(model, tables)
                if step % schedule.eval_every == 0 and record(stage.kind, report, tables):
                    history.interrupted = True
                    return history
                good[...] = model.theta
                opt.step(model.theta, report.grad, stage.lr, blocks)
                step += 1
                if checkpoint_path and schedule.checkpoint_every and step % schedule.checkpoint_every == 0:
                    save_checkpoint(model, checkpoint_path)
        tables = build_factors(model, rules, orders)
        report = plan.evaluate(model, tables, need_grad=False)
        record(schedule.stages[-1].kind, report, tables)
    except NumericFailureError:
        model.theta[...] = good
        if checkpoint_path:
            save_checkpoint(model, checkpoint_path)
        raise
    except KeyboardInterrupt:
        history.interrupted = True
    return history
