import csv
import dataclasses
import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import ABLATION_BOLD_THRESHOLD, BASIS_OPERATIONS, SPLIT_ROLES
from .errors import DatasetFormatError, InvalidParameterError, TrainingDivergedError
from .graphgen import DynamicGraphSeries, load_series
from .model import ModelParams, Variant, forward
from .solvers import SolverConfig
from .tensor import Array, Tensor, add_n, no_record, record

logger = logging.getLogger(__name__)

LOSSES = ("mse", "bce")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    patience: int = 300
    min_epochs: int = 0
    loss: str = "mse"
    solver: SolverConfig = SolverConfig()
    seed: int = 0
    decoupled: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidParameterError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidParameterError("learning rate must be positive")
        if self.weight_decay < 0:
            raise InvalidParameterError("weight decay must be >= 0")
        if not 1 <= self.patience <= self.epochs:
            raise InvalidParameterError("patience must lie in [1, epochs]")
        if self.min_epochs < 0:
            raise InvalidParameterError("min_epochs must be >= 0")
        if self.loss not in LOSSES:
            raise InvalidParameterError(f"loss must be one of {LOSSES}")


@dataclasses.dataclass
class OptimState:
    m: Dict[str, Array]
    v: Dict[str, Array]
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptimState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.tensors.items()},
            v={name: np.zeros_like(t.data) for name, t in params.tensors.items()},
        )


# Losses -----------------------------------------------------------------------


def mse(
    predictions: Sequence[Tensor], targets: Sequence[Array], mask: Sequence[int]
) -> Tensor:
    """Mean squared error over the snapshots listed in ``mask``."""
    if len(predictions) != len(targets):
        raise InvalidParameterError(
            f"{len(predictions)} predictions for {len(targets)} targets"
        )
    if not mask:
        raise InvalidParameterError("the loss mask selects no snapshots")
    terms = [
        (predictions[k] - Tensor._wrap(np.asarray(targets[k]))).square().mean()
        for k in mask
    ]
    return add_n(terms) / len(terms)


def bce_logits(logits: Tensor, target: Union[float, Array]) -> Tensor:
    """Logistic cross-entropy softplus(x) - x y, averaged over entries."""
    labels = np.broadcast_to(np.asarray(target, dtype=np.float64), logits.shape)
    y = Tensor._wrap(labels)
    return (logits.softplus() - logits * y).mean()


# Optimizer --------------------------------------------------------------------


def adam_step(
    params: ModelParams,
    grads: Dict[str, Array],
    state: OptimState,
    lr: float,
    wd: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    decoupled: bool = True,
) -> Tuple[ModelParams, OptimState]:
    """One bias-corrected Adam update, in place.

    Decoupled decay shrinks p by (1 - lr wd) before the Adam delta; otherwise
    wd p is added to the gradient.
    """
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        g = np.zeros_like(tensor.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != tensor.shape:
            raise InvalidParameterError(f"gradient of {name!r} has shape {g.shape}")
        if wd and not decoupled:
            g = g + wd * tensor.data
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        if wd and decoupled:
            tensor.data *= 1.0 - lr * wd
        tensor.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return params, state


@dataclasses.dataclass
class EarlyStopping:
    """Stop once ``patience`` epochs pass without improvement after ``min_epochs``."""

    patience: int
    min_epochs: int = 0
    best: float = math.inf
    best_epoch: int = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch`` (1-based); True if it is the new best."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - max(self.best_epoch, self.min_epochs) >= self.patience


# Data -------------------------------------------------------------------------


@dataclasses.dataclass
class Dataset:
    train: List[DynamicGraphSeries]
    val: List[DynamicGraphSeries]
    test: List[DynamicGraphSeries] = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.train or not self.val:
            raise InvalidParameterError("a dataset needs train and val series")
        if len({s.n for s in self.train + self.val + self.test}) != 1:
            raise InvalidParameterError("all series must share one node count")

    @property
    def classification(self) -> bool:
        return self.train[0].labels is not None

    @classmethod
    def from_files(
        cls,
        train: Iterable[Union[str, Path]],
        val: Iterable[Union[str, Path]],
        test: Iterable[Union[str, Path]] = (),
    ) -> "Dataset":
        return cls(
            train=[load_series(p) for p in train],
            val=[load_series(p) for p in val],
            test=[load_series(p) for p in test],
        )

    @classmethod
    def from_dir(cls, directory: Union[str, Path]) -> "Dataset":
        """Series files named ``*-{train,val,test}-*.json``, in sorted order."""
        root = Path(directory)
        if not root.is_dir():
            raise DatasetFormatError(f"dataset directory {root} does not exist")
        files = {role: sorted(root.glob(f"*-{role}-*.json")) for role in SPLIT_ROLES}
        return cls.from_files(files["train"], files["val"], files["test"])


def _targets(series: DynamicGraphSeries) -> List[Array]:
    if series.features is None:
        raise InvalidParameterError("regression needs node features as targets")
    return series.features


def _label(series: DynamicGraphSeries) -> float:
    if not series.labels:
        raise InvalidParameterError("classification needs a label per series")
    return float(series.labels[0])


def _final_logit(
    params: ModelParams, series: DynamicGraphSeries, solver: SolverConfig
) -> Tensor:
    final = [float(series.times[-1])]
    return forward(params, series, save_times=final, solver=solver)[-1]


def series_loss(
    params: ModelParams,
    series: DynamicGraphSeries,
    solver: SolverConfig,
    role: str = "train",
) -> Tensor:
    if series.labels is not None:
        return bce_logits(_final_logit(params, series, solver), _label(series))
    predictions = forward(params, series, solver=solver)
    return mse(predictions, _targets(series), series.split.indices(role))


def batch_loss(
    params: ModelParams,
    batch: Sequence[DynamicGraphSeries],
    solver: SolverConfig,
    role: str = "train",
) -> Tensor:
    """Mean loss over ``batch``, accumulated in list order."""
    return add_n([series_loss(params, s, solver, role) for s in batch]) / len(batch)


# Training ---------------------------------------------------------------------


@dataclasses.dataclass
class TrainResult:
    params: ModelParams
    history: List[Dict[str, float]]
    epochs_run: int
    best_epoch: int
    wall_seconds: float


def _validation(
    params: ModelParams, dataset: Dataset, solver: SolverConfig
) -> Tuple[float, float]:
    with no_record():
        if dataset.classification:
            return batch_loss(params, dataset.val, solver).item(), math.nan
        interp = batch_loss(params, dataset.val, solver, role="interp").item()
        extrap = batch_loss(params, dataset.val, solver, role="extrap").item()
    return interp, extrap


def train(params: ModelParams, dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Full-batch training with early stopping on the validation loss.

    Returns the parameters of the best validation epoch; ``params`` itself ends
    in that state too.
    """
    expected = "bce" if dataset.classification else "mse"
    if config.loss != expected:
        raise InvalidParameterError(f"this dataset needs the {expected} loss")

    started = time.perf_counter()
    state = OptimState.zeros(params)
    stopper = EarlyStopping(config.patience, config.min_epochs)
    best_state = params.state()
    history: List[Dict[str, float]] = []
    epoch = 0

    for epoch in range(1, config.epochs + 1):
        with record() as tape:
            loss = batch_loss(params, dataset.train, config.solver)
        value = loss.item()
        if not math.isfinite(value):
            failed = params.copy()
            failed.load_state(best_state)
            raise TrainingDivergedError(epoch, failed, history)
        grads = named_grads(params, tape.backward(loss))
        adam_step(
            params,
            grads,
            state,
            config.learning_rate,
            config.weight_decay,
            config.beta1,
            config.beta2,
            config.eps,
            config.decoupled,
        )

        interp, extrap = _validation(params, dataset, config.solver)
        history.append(
            {"epoch": epoch, "train": value, "interp_val": interp, "extrap_val": extrap}
        )
        if stopper.update(epoch, interp):
            best_state = params.state()
        logger.info(
            "epoch=%d train=%.6g interp_val=%.6g extrap_val=%.6g",
            epoch,
            value,
            interp,
            extrap,
        )
        if stopper.should_stop(epoch):
            logger.info("early stop epoch=%d best_epoch=%d", epoch, stopper.best_epoch)
            break

    params.load_state(best_state)
    return TrainResult(
        params=params,
        history=history,
        epochs_run=epoch,
        best_epoch=stopper.best_epoch,
        wall_seconds=time.perf_counter() - started,
    )


def named_grads(params: ModelParams, grads: Dict[int, Tensor]) -> Dict[str, Array]:
    """Gradients from :func:`backward` keyed by parameter name."""
    return {
        name: grads[t.node_id].data
        for name, t in params.tensors.items()
        if t.node_id is not None and t.node_id in grads
    }


# Evaluation -------------------------------------------------------------------


@dataclasses.dataclass
class Evaluation:
    metrics: Dict[str, float]
    per_snapshot: List[Dict[str, Any]]


def _snapshot_role(batch: Sequence[DynamicGraphSeries], index: int) -> str:
    """The split shared by every series at ``index``, else ``mixed``."""
    roles = set()
    for series in batch:
        for role in ("train", "interp", "extrap"):
            if index in series.split.indices(role):
                roles.add(role)
                break
        else:
            roles.add("train")
    return roles.pop() if len(roles) == 1 else "mixed"


def evaluate(
    params: ModelParams,
    batch: Sequence[DynamicGraphSeries],
    solver: Optional[SolverConfig] = None,
) -> Evaluation:
    """Per-split MSE plus a per-snapshot curve, or accuracy for labelled series.

    The curve has one row per snapshot index, averaged over the batch. Interp
    indices are drawn per series, so an index that is train in one series and
    interp in another is labelled ``mixed``.
    """
    solver = solver or SolverConfig()
    if not batch:
        raise InvalidParameterError("nothing to evaluate")
    with no_record():
        if batch[0].labels is not None:
            logits = [_final_logit(params, s, solver) for s in batch]
            correct = [
                float((logit.item() > 0.0) == bool(_label(s)))
                for logit, s in zip(logits, batch)
            ]
            losses = [bce_logits(l, _label(s)).item() for l, s in zip(logits, batch)]
            bce = float(np.mean(losses))
            return Evaluation({"accuracy": float(np.mean(correct)), "bce": bce}, [])

        errors: List[List[float]] = []
        for s in batch:
            predictions = forward(params, s, solver=solver)
            errors.append(
                [
                    float(np.mean((p.data - np.asarray(y)) ** 2))
                    for p, y in zip(predictions, _targets(s))
                ]
            )

    metrics = {}
    for role in ("train", "interp", "extrap"):
        per_series = [
            np.mean([e[k] for k in s.split.indices(role)])
            for e, s in zip(errors, batch)
        ]
        metrics[f"{role}_mse"] = float(np.mean(per_series))
    per_snapshot = [
        {
            "index": k,
            "time": float(np.mean([s.times[k] for s in batch])),
            "split": _snapshot_role(batch, k),
            "mse": float(np.mean([e[k] for e in errors])),
        }
        for k in range(batch[0].num_times)
    ]
    return Evaluation(metrics, per_snapshot)


def extrapolation_growth(per_snapshot: Sequence[Dict[str, Any]]) -> float:
    """Ratio of the last to the first extrapolation-phase snapshot loss."""
    extrap = [row["mse"] for row in per_snapshot if row["split"] == "extrap"]
    if len(extrap) < 2:
        raise InvalidParameterError("need at least two extrapolation snapshots")
    return float(extrap[-1] / max(extrap[0], 1e-300))


# Reports ----------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class AblationRow:
    operation: str
    layer: int
    channel: str
    weight: float

    @property
    def bold(self) -> bool:
        return abs(self.weight) > ABLATION_BOLD_THRESHOLD


def ablate_fusion(params: ModelParams) -> List[AblationRow]:
    """One row per basis map, fusion layer and channel (A or dA)."""
    if params.variant not in (Variant.PENG, Variant.PENG_FEATURES):
        raise InvalidParameterError(
            f"fusion ablation needs a peng model, got {params.variant.value!r}"
        )
    rows = []
    for layer, pair in enumerate(params.fusion, start=1):
        for channel, weights in zip(("A", "dA"), pair):
            values = weights.values()
            for index, (group, target) in BASIS_OPERATIONS.items():
                rows.append(
                    AblationRow(
                        operation=f"{group} {target}".strip(),
                        layer=layer,
                        channel=channel,
                        weight=float(values[index - 1]),
                    )
                )
    return rows


def confidence_interval(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and 95% half-width 1.96 s / sqrt(runs)."""
    if not values:
        raise InvalidParameterError("no values")
    data = np.asarray(values, dtype=np.float64)
    if len(data) == 1:
        return float(data[0]), 0.0
    return float(data.mean()), float(1.96 * data.std(ddof=1) / math.sqrt(len(data)))


def write_csv(
    path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_history(path: Union[str, Path], history: Sequence[Dict[str, float]]) -> None:
    write_csv(
        path,
        ["epoch", "train", "interp_val", "extrap_val"],
        ([h["epoch"], h["train"], h["interp_val"], h["extrap_val"]] for h in history),
    )


def write_ablation(path: Union[str, Path], rows: Sequence[AblationRow]) -> None:
    write_csv(
        path,
        ["operation", "layer", "channel", "weight", "bold"],
        (
            [r.operation, r.layer, r.channel, f"{r.weight:.4f}", int(r.bold)]
            for r in rows
        ),
    )


def write_per_snapshot(path: Union[str, Path], rows: Sequence[Dict[str, Any]]) -> None:
    write_csv(
        path,
        ["index", "time", "split", "mse"],
        ([r["index"], r["time"], r["split"], r["mse"]] for r in rows),
    )


METRICS_HEADER = [
    "seed",
    "variant",
    "task",
    "graph_kind",
    "split",
    "value",
    "epochs_run",
    "wall_seconds",
]


# Checkpoints ------------------------------------------------------------------


@dataclasses.dataclass
class Checkpoint:
    params: ModelParams
    solver: SolverConfig
    seed: int
    training: Dict[str, Any] = dataclasses.field(default_factory=dict)
    meta: Dict[str, Any] = dataclasses.field(default_factory=dict)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    payload = {
        **checkpoint.params.to_dict(),
        "solver": checkpoint.solver.to_dict(),
        "seed": checkpoint.seed,
        "training": checkpoint.training,
        "meta": checkpoint.meta,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path} is not valid JSON: {e}") from e
    try:
        solver = SolverConfig.from_dict(payload.get("solver", {}))
        seed = int(payload.get("seed", 0))
    except (TypeError, ValueError) as e:
        raise DatasetFormatError(f"Malformed checkpoint {path}: {e}") from e
    return Checkpoint(
        params=ModelParams.from_dict(payload),
        solver=solver,
        seed=seed,
        training=dict(payload.get("training") or {}),
        meta=dict(payload.get("meta") or {}),
    )
