"""Multi-task training loop over the aggregators.

Per step the trainer computes per-task gradients in the configured space,
optionally rescales them, runs the configured aggregation method, maps
representation-space directions back through the trunk with one backward
pass, and applies the step (trunk gets the aggregate direction, each head its
own task gradient).  Weight decay is applied at the optimizer level: the
descent direction gets ``-l2 * theta`` for trunk and heads alike, matching
the usual decoupled use of an L2 penalty.

Every ``norm_every`` updates the norm of the plain summed data gradient
``||sum_i grad_i||`` is measured on the current mini-batch (pre-aggregation,
pre-decay) and averaged per epoch; it is the under-optimization diagnostic.

All randomness derives from `TrainConfig.seed` through labelled child
streams ("data", "dropout", "method", "theta0"), so two methods trained from
the same seed see the same data order and dropout masks.
"""

import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import aggregators as agg
from .errors import TrainingDivergedError, ValidationError
from .gradcore import AggregateUpdate, GradientSet, GradSpace, combine
from .net import (
    AdamState,
    Batch,
    MultiTaskModel,
    forward_head,
    forward_trunk,
    jvp_trunk,
    per_task_param_grads,
    per_task_repr_grads,
    sgd_or_adam_step,
    task_loss,
)
from .seeding import spawn_rng
from .tasks import QuadraticSuite, TaskSuite

__all__ = [
    "METHODS",
    "TrainConfig",
    "EpochRow",
    "RunRecord",
    "TrainResult",
    "DirectParameters",
    "train",
    "evaluate",
    "select_model",
    "select_model_per_task",
    "write_run_csv",
    "atomic_write_text",
]

METHODS = (
    "unitary",
    "mgda",
    "imtl",
    "pcgrad",
    "graddrop",
    "rlw",
    "rgd",
    "sign_agnostic_graddrop",
)

RLW_DISTS = ("dirichlet", "normal", "fixed_ones")

# Default gradient space per method on dataset suites; parameter-space
# surgery is the historical choice for pcgrad, everything else works on the
# (usually cheaper) shared representation.
_DEFAULT_SPACE = {
    "unitary": "representation",
    "mgda": "representation",
    "imtl": "representation",
    "pcgrad": "parameter",
    "graddrop": "representation",
    "rlw": "representation",
    "rgd": "representation",
    "sign_agnostic_graddrop": "representation",
}


@dataclass
class TrainConfig:
    method: str = "unitary"
    space: str | None = None  # None -> per-method default ("parameter" on analytic suites)
    epochs: int = 10
    batch_size: int = 64
    eta: float = 1e-2
    lr_decay: float = 0.95
    l2: float = 0.0
    dropout: float = 0.0  # recorded for provenance; the model carries the live value
    seed: int = 0
    optimizer: str = "adam"
    eval_every: int = 1
    norm_every: int = 1
    mgda_rescale: bool = True
    mgda_max_iter: int = 250
    mgda_tol: float = 1e-8
    imtl_l: bool = False
    imtl_l_step: float | None = None
    graddrop_flip: bool = False
    rlw_dist: str = "dirichlet"
    rgd_p: float = 0.5
    mask_keep_p: float = 0.5
    steps_per_epoch: int = 20  # analytic suites only
    unitary_fast_path: bool = True

    def resolved_space(self, analytic: bool) -> str:
        if analytic:
            return "parameter"
        if self.space is not None:
            return self.space
        return _DEFAULT_SPACE[self.method]

    def validate(self, analytic: bool = False) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if self.space not in (None, "parameter", "representation"):
            raise ValidationError(f"unknown space {self.space!r}")
        if self.method == "pcgrad" and self.resolved_space(analytic) != "parameter":
            raise ValidationError("pcgrad computes per-task gradients over the parameters")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.rlw_dist not in RLW_DISTS:
            raise ValidationError(f"unknown rlw distribution {self.rlw_dist!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValidationError("epochs, batch_size and steps_per_epoch must be >= 1")
        if not self.eta > 0.0 or not 0.0 < self.lr_decay <= 1.0:
            raise ValidationError("need eta > 0 and lr_decay in (0, 1]")
        if self.l2 < 0.0:
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")
        if self.eval_every < 1 or self.norm_every < 1:
            raise ValidationError("eval_every and norm_every must be >= 1")
        if not 0.0 < self.rgd_p <= 1.0:
            raise ValidationError(f"rgd_p must be in (0, 1], got {self.rgd_p}")
        if not 0.0 < self.mask_keep_p <= 1.0:
            raise ValidationError(f"mask_keep_p must be in (0, 1], got {self.mask_keep_p}")


@dataclass
class EpochRow:
    epoch: int
    train_losses: np.ndarray  # per-task mean over the epoch's steps
    loss_total: float
    val_scores: np.ndarray | None  # oriented scores (higher is better), None if skipped
    val_avg: float  # nan if this epoch was not evaluated
    update_norm: float  # epoch mean of ||sum_i grad_i|| samples
    trunk_backwards: int  # cumulative
    head_backwards: int  # cumulative
    seconds: float
    stalls: int  # steps whose aggregate direction was exactly zero


@dataclass
class RunRecord:
    method: str
    seed: int
    rows: list
    selected_epoch: int = -1
    test_scores: np.ndarray | None = None
    test_avg: float = math.nan

    @property
    def task_count(self) -> int:
        return len(self.rows[0].train_losses)

    def update_norm_series(self) -> np.ndarray:
        return np.array([row.update_norm for row in self.rows])

    def epoch_seconds(self) -> np.ndarray:
        return np.array([row.seconds for row in self.rows])


@dataclass
class DirectParameters:
    """Bare parameter vector for suites with analytic losses."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()


@dataclass
class TrainResult:
    record: RunRecord
    model: object  # final MultiTaskModel or DirectParameters
    selected_params: object  # parameter snapshot at the selected epoch


def _aggregate(
    cfg: TrainConfig,
    gs: GradientSet,
    losses: np.ndarray,
    rng: np.random.Generator,
    z: np.ndarray | None = None,
) -> AggregateUpdate:
    method = cfg.method
    if method == "unitary":
        return agg.unitary(gs)
    if method == "mgda":
        qp_input = gs
        if cfg.mgda_rescale:
            norms = gs.row_norms()
            # fall back to raw rows on degenerate inputs mid-run (exhausted
            # losses or vanished gradients) instead of aborting the step
            if np.all(norms > 0.0) and np.all(losses > 0.0):
                qp_input = agg.mgda_rescale(gs, losses)
        return agg.mgda(qp_input, max_iter=cfg.mgda_max_iter, tol=cfg.mgda_tol)
    if method == "imtl":
        return agg.imtl_g(gs)
    if method == "pcgrad":
        return agg.pcgrad(gs, rng)
    if method == "graddrop":
        if gs.space is GradSpace.REPRESENTATION:
            return agg.graddrop_repr(gs, z, rng, flip=cfg.graddrop_flip)
        return agg.graddrop(gs, rng, flip=cfg.graddrop_flip)
    if method == "rlw":
        if cfg.rlw_dist == "fixed_ones":
            w = np.ones(gs.task_count)
            return AggregateUpdate(direction=combine(gs, w), weights=w, method="rlw_fixed")
        return agg.rlw(gs, cfg.rlw_dist, rng)
    if method == "rgd":
        return agg.rgd(gs, cfg.rgd_p, rng)
    if method == "sign_agnostic_graddrop":
        if gs.space is GradSpace.REPRESENTATION:
            return agg.sign_agnostic_graddrop(gs, cfg.mask_keep_p, rng)
        masks = (rng.uniform(size=gs.rows.shape) < cfg.mask_keep_p).astype(np.float64)
        masked = GradientSet(gs.rows * masks, gs.space)
        return AggregateUpdate(
            direction=combine(masked, np.ones(gs.task_count)),
            trace=agg.BernoulliMaskSample(cfg.mask_keep_p, np.empty(0), masks),
            method="sign_agnostic_graddrop",
        )
    raise ValidationError(f"unknown method {method!r}")


def _classification_score(model, X, labels, task: int) -> float:
    cache = forward_trunk(model, X, mode="eval")
    pred = forward_head(model, task, cache.z).pred
    return float((np.argmax(pred, axis=1) == labels).mean())


def evaluate(model, suite, split: str = "val"):
    """Oriented per-task scores plus their average; deterministic (dropout off).

    Classification tasks score accuracy; regression tasks score the negative
    loss, so higher is uniformly better and scores can be averaged.
    """
    if isinstance(suite, QuadraticSuite):
        scores = -suite.losses(model.theta)
        return scores, float(scores.mean())
    data = suite.split(split)
    scores = np.empty(suite.task_count)
    for t, kind in enumerate(suite.loss_kinds):
        if kind == "cross_entropy":
            scores[t] = _classification_score(model, data.X, data.ys[t], t)
        else:
            cache = forward_trunk(model, data.X, mode="eval")
            pred = forward_head(model, t, cache.z).pred
            scores[t] = -task_loss(pred, data.ys[t], kind)
    return scores, float(scores.mean())


def select_model(record_or_rows) -> int:
    """Epoch with the best average validation score; ties break earliest."""
    rows = record_or_rows.rows if isinstance(record_or_rows, RunRecord) else record_or_rows
    if not rows:
        raise ValidationError("need at least one epoch to select a model")
    avgs = np.array([row.val_avg for row in rows])
    finite = np.isfinite(avgs)
    if not finite.any():
        raise ValidationError("no evaluated epochs to select from")
    avgs = np.where(finite, avgs, -np.inf)
    return int(np.argmax(avgs))  # argmax returns the first (earliest) maximum


def select_model_per_task(record_or_rows) -> list:
    """Best epoch per task score, for suites whose metrics cannot be averaged."""
    rows = record_or_rows.rows if isinstance(record_or_rows, RunRecord) else record_or_rows
    evaluated = [(i, row) for i, row in enumerate(rows) if row.val_scores is not None]
    if not evaluated:
        raise ValidationError("no evaluated epochs to select from")
    m = len(evaluated[0][1].val_scores)
    out = []
    for t in range(m):
        series = np.array([row.val_scores[t] for _, row in evaluated])
        out.append(evaluated[int(np.argmax(series))][0])
    return out


def train(model, suite, config: TrainConfig) -> TrainResult:
    """Run the configured method on the suite; returns record and models.

    Raises :class:`TrainingDivergedError` (naming the failing step) if any
    loss or parameter goes non-finite.
    """
    analytic = isinstance(suite, QuadraticSuite)
    config.validate(analytic=analytic)
    if analytic:
        return _train_analytic(model, suite, config)
    return _train_dataset(model, suite, config)


def _train_dataset(model: MultiTaskModel, suite: TaskSuite, cfg: TrainConfig) -> TrainResult:
    m = suite.task_count
    kinds = suite.loss_kinds
    space = cfg.resolved_space(analytic=False)
    if cfg.method == "unitary" and not cfg.unitary_fast_path:
        space = "parameter"  # force the m-backward sum path for comparison runs
    data_rng = spawn_rng(cfg.seed, "data")
    dropout_rng = spawn_rng(cfg.seed, "dropout")
    method_rng = spawn_rng(cfg.seed, "method")
    opt = AdamState() if cfg.optimizer == "adam" else None
    imtl_state = (
        agg.LossScaleState.zeros(m, cfg.imtl_l_step if cfg.imtl_l_step else cfg.eta)
        if cfg.imtl_l
        else None
    )
    train_split = suite.train
    n = train_split.size
    rows_out = []
    best_avg = -math.inf
    best_epoch = -1
    best_params = model.clone_params()
    step = 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.eta * cfg.lr_decay**epoch
        order = data_rng.permutation(n)
        losses_accum = np.zeros(m)
        norm_samples = []
        stalls = 0
        n_steps = 0

        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = Batch(train_split.X[idx], tuple(y[idx] for y in train_split.ys))
            try:
                if space == "parameter":
                    gs, head_grads, losses, cache = per_task_param_grads(
                        model, batch, kinds, lam=0.0, rng=dropout_rng, mode="train"
                    )
                else:
                    gs, head_grads, losses, cache = per_task_repr_grads(
                        model, batch, kinds, rng=dropout_rng, mode="train"
                    )

                scales = None
                if imtl_state is not None:
                    imtl_state, scales = agg.imtl_l_step(imtl_state, losses)

                if step % cfg.norm_every == 0:
                    if space == "parameter":
                        unitary_sum = gs.rows.sum(axis=0)
                    else:
                        unitary_sum = jvp_trunk(model, cache, gs.rows.sum(axis=0), count=False)
                    norm_samples.append(float(np.linalg.norm(unitary_sum)))

                agg_input = gs if scales is None else gs.scaled(scales)
                update = _aggregate(
                    cfg, agg_input, losses, method_rng, z=cache.z.ravel()
                )
                if not update.direction.any():
                    stalls += 1
                if space == "parameter":
                    direction = update.direction
                else:
                    direction = jvp_trunk(model, cache, update.direction)
                if cfg.l2 > 0.0:
                    direction = direction - cfg.l2 * model.trunk_param_vector()
                    head_grads = [
                        [
                            (dW + cfg.l2 * model.heads[t][l].W, db + cfg.l2 * model.heads[t][l].b)
                            for l, (dW, db) in enumerate(grads)
                        ]
                        for t, grads in enumerate(head_grads)
                    ]
                if scales is not None:
                    head_grads = [
                        [(scales[t] * dW, scales[t] * db) for dW, db in grads]
                        for t, grads in enumerate(head_grads)
                    ]
                sgd_or_adam_step(model, direction, head_grads, lr, opt, step=step)
            except TrainingDivergedError as err:
                raise TrainingDivergedError(
                    f"{cfg.method} diverged: {err.args[0]}", step=step
                ) from err
            losses_accum += losses
            n_steps += 1
            step += 1

        val_scores, val_avg = (None, math.nan)
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            val_scores, val_avg = evaluate(model, suite, "val")
            if val_avg > best_avg:
                best_avg = val_avg
                best_epoch = epoch
                best_params = model.clone_params()
        rows_out.append(
            EpochRow(
                epoch=epoch,
                train_losses=losses_accum / n_steps,
                loss_total=float(losses_accum.sum() / n_steps),
                val_scores=val_scores,
                val_avg=val_avg,
                update_norm=float(np.mean(norm_samples)) if norm_samples else math.nan,
                trunk_backwards=model.trunk_backwards,
                head_backwards=model.head_backwards,
                seconds=time.perf_counter() - t0,
                stalls=stalls,
            )
        )

    record = RunRecord(method=cfg.method, seed=cfg.seed, rows=rows_out)
    record.selected_epoch = best_epoch if best_epoch >= 0 else select_model(rows_out)
    final_params = model.clone_params()
    model.load_params(best_params)
    if suite.test.size > 0:
        record.test_scores, record.test_avg = evaluate(model, suite, "test")
    model.load_params(final_params)
    return TrainResult(record=record, model=model, selected_params=best_params)


def _train_analytic(model, suite: QuadraticSuite, cfg: TrainConfig) -> TrainResult:
    if not isinstance(model, DirectParameters):
        raise ValidationError("analytic suites train a DirectParameters model")
    theta = model.theta.copy()
    if theta.shape != (suite.dim,):
        raise ValidationError(f"theta must have shape ({suite.dim},), got {theta.shape}")
    method_rng = spawn_rng(cfg.seed, "method")
    opt = AdamState() if cfg.optimizer == "adam" else None
    rows_out = []
    best_avg = -math.inf
    best_epoch = -1
    best_theta = theta.copy()
    step = 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.eta * cfg.lr_decay**epoch
        losses_accum = np.zeros(suite.task_count)
        norm_samples = []
        stalls = 0
        for _ in range(cfg.steps_per_epoch):
            losses = suite.losses(theta)
            if not np.all(np.isfinite(losses)):
                raise TrainingDivergedError(f"{cfg.method} diverged: non-finite loss", step=step)
            gs = suite.gradient_set(theta)
            if step % cfg.norm_every == 0:
                norm_samples.append(float(np.linalg.norm(gs.rows.sum(axis=0))))
            update = _aggregate(cfg, gs, losses, method_rng)
            if not update.direction.any():
                stalls += 1
            if opt is None:
                theta = theta + lr * update.direction
            else:
                opt.begin_step()
                theta = theta - lr * opt.direction("theta", -update.direction)
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(
                    f"{cfg.method} diverged: non-finite parameters", step=step
                )
            losses_accum += losses
            step += 1

        val_scores = -suite.losses(theta)
        val_avg = float(val_scores.mean())
        if val_avg > best_avg:
            best_avg = val_avg
            best_epoch = epoch
            best_theta = theta.copy()
        rows_out.append(
            EpochRow(
                epoch=epoch,
                train_losses=losses_accum / cfg.steps_per_epoch,
                loss_total=float(losses_accum.sum() / cfg.steps_per_epoch),
                val_scores=val_scores,
                val_avg=val_avg,
                update_norm=float(np.mean(norm_samples)) if norm_samples else math.nan,
                trunk_backwards=0,
                head_backwards=0,
                seconds=time.perf_counter() - t0,
                stalls=stalls,
            )
        )

    record = RunRecord(method=cfg.method, seed=cfg.seed, rows=rows_out)
    record.selected_epoch = best_epoch
    record.test_scores = -suite.losses(best_theta)
    record.test_avg = float(record.test_scores.mean())
    model.theta = theta
    return TrainResult(record=record, model=model, selected_params=best_theta.copy())


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_run_csv(record: RunRecord, path) -> None:
    """Serialize per-epoch rows; floats are written with full repr precision."""
    m = record.task_count
    header = (
        ["epoch"]
        + [f"loss_task_{t + 1}" for t in range(m)]
        + ["loss_total"]
        + [f"val_task_{t + 1}" for t in range(m)]
        + ["val_avg", "update_norm", "trunk_backwards", "head_backwards", "seconds", "stalls"]
    )
    lines = [",".join(header)]
    for row in record.rows:
        vals = [str(row.epoch)]
        vals += [repr(float(x)) for x in row.train_losses]
        vals.append(repr(row.loss_total))
        if row.val_scores is None:
            vals += ["nan"] * m
        else:
            vals += [repr(float(x)) for x in row.val_scores]
        vals += [
            repr(row.val_avg),
            repr(row.update_norm),
            str(row.trunk_backwards),
            str(row.head_backwards),
            repr(row.seconds),
            str(row.stalls),
        ]
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def run_summary(record: RunRecord, cfg: TrainConfig, csv_name: str) -> dict:
    """JSON-ready run summary consumed by the report command."""
    return {
        "method": cfg.method,
        "seed": cfg.seed,
        "l2": cfg.l2,
        "dropout": cfg.dropout,
        "selected_epoch": record.selected_epoch,
        "best_val_avg": float(record.rows[record.selected_epoch].val_avg),
        "test_scores": [float(x) for x in record.test_scores]
        if record.test_scores is not None
        else None,
        "test_avg": record.test_avg,
        "epoch_seconds": [row.seconds for row in record.rows],
        "trunk_backwards": record.rows[-1].trunk_backwards,
        "head_backwards": record.rows[-1].head_backwards,
        "csv": csv_name,
    }
