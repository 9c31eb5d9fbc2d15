import dataclasses
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from .constants import DEFAULT_FLIP_RATE, GRAPH_KINDS, SCALE_PRESETS, TASKS
from .errors import InvalidParameterError
from .model import VARIANT_NAMES, ModelConfig, Variant
from .solvers import SolverConfig
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

SOLVER_DEFAULTS: Dict[str, Any] = {
    "solver": "tsit5",
    "rtol": 1e-3,
    "atol": 1e-6,
    "num_steps": 128,
}

# Settings that switch to their ``sir_`` counterpart for the sir task.
SIR_OVERRIDES = (
    "n",
    "t_end",
    "num_times",
    "hidden",
    "num_layers",
    "patience",
    "min_epochs",
)

RUN_FIELDS = (
    "task",
    "graph_kind",
    "variant",
    "scale",
    "seeds",
    "data_dir",
    "output",
    "checkpoint",
)


@dataclasses.dataclass(frozen=True)
class GraphConfig:
    kind: str
    n: int
    t_end: float
    num_times: int
    num_changes: int
    flip_rate: float = DEFAULT_FLIP_RATE
    params: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in GRAPH_KINDS:
            raise InvalidParameterError(
                f"Unknown graph kind {self.kind!r}; expected one of {GRAPH_KINDS}"
            )
        if not 0 < self.flip_rate < 1:
            raise InvalidParameterError("flip rate must lie in (0, 1)")


@dataclasses.dataclass
class RunConfig:
    command: str
    task: str = "heat"
    graph_kind: str = "community"
    variant: str = Variant.PENG.value
    scale: str = "desk"
    seeds: List[int] = dataclasses.field(default_factory=lambda: [0])
    data_dir: Optional[str] = None
    output: Optional[str] = None
    checkpoint: Optional[str] = None
    settings: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise InvalidParameterError(
                f"Unknown task {self.task!r}; expected one of {TASKS}"
            )
        if self.graph_kind not in GRAPH_KINDS:
            raise InvalidParameterError(
                f"Unknown graph kind {self.graph_kind!r}; expected one of {GRAPH_KINDS}"
            )
        if self.variant not in VARIANT_NAMES:
            raise InvalidParameterError(
                f"Unknown variant {self.variant!r}; expected one of {VARIANT_NAMES}"
            )
        if self.scale not in SCALE_PRESETS:
            raise InvalidParameterError(
                f"Unknown scale {self.scale!r}; expected one of {sorted(SCALE_PRESETS)}"
            )
        if not self.seeds:
            raise InvalidParameterError("at least one seed is required")

    def get(self, key: str) -> Any:
        """A setting, with the sir-specific value taking over for the sir task."""
        if self.task == "sir" and key in SIR_OVERRIDES:
            sir_key = f"sir_{key}"
            if sir_key in self.settings:
                return self.settings[sir_key]
        try:
            return self.settings[key]
        except KeyError:
            raise InvalidParameterError(f"setting {key!r} is not configured") from None

    def graph_config(self) -> GraphConfig:
        return GraphConfig(
            kind=self.graph_kind,
            n=int(self.get("n")),
            t_end=float(self.get("t_end")),
            num_times=int(self.get("num_times")),
            num_changes=int(self.get("num_changes")),
            flip_rate=float(self.settings.get("flip_rate", DEFAULT_FLIP_RATE)),
            params=dict(self.settings.get("graph_params") or {}),
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            method=self.get("solver"),
            rtol=float(self.get("rtol")),
            atol=float(self.get("atol")),
            num_steps=int(self.get("num_steps")),
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=int(self.get("epochs")),
            learning_rate=float(self.get("learning_rate")),
            weight_decay=float(self.get("weight_decay")),
            patience=min(int(self.get("patience")), int(self.get("epochs"))),
            min_epochs=int(self.get("min_epochs")),
            loss="bce" if self.task == "sir" else "mse",
            solver=self.solver_config(),
            seed=seed,
            decoupled=bool(self.settings.get("decoupled", True)),
        )

    def model_options(self) -> Dict[str, Any]:
        options: Dict[str, Any] = {
            "hidden": int(self.get("hidden")),
            "num_layers": int(self.get("num_layers")),
            "per_layer_fusion": bool(self.settings.get("per_layer_fusion", False)),
        }
        if self.task == "sir":
            options.update(readout="graph", output_dim=1)
        return options

    def model_config(self, series: Any, seed: int) -> ModelConfig:
        return ModelConfig.for_series(
            self.variant, series, seed=seed, **self.model_options()
        )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config_file(path: str) -> Dict[str, Any]:
    if not Path(path).is_file():
        raise InvalidParameterError(f"config file {path} does not exist")
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidParameterError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise InvalidParameterError(f"config file {path} must hold a JSON object")
    return payload


def resolve_run_config(command: str, options: Dict[str, Any]) -> RunConfig:
    """Merge preset, ``--config`` file and flags; later sources win.

    ``options`` holds parsed command-line values; ``None`` means "not given".
    Keys naming a :class:`RunConfig` field set that field, every other key is
    a setting override.
    """
    given = {k: v for k, v in options.items() if v is not None}
    layers: List[Dict[str, Any]] = []
    if given.get("config"):
        layers.append(load_config_file(given.pop("config")))
    else:
        given.pop("config", None)
    layers.append(given)

    scale = "desk"
    for layer in layers:
        scale = layer.get("scale", scale)
    if scale not in SCALE_PRESETS:
        raise InvalidParameterError(
            f"Unknown scale {scale!r}; expected one of {sorted(SCALE_PRESETS)}"
        )

    fields: Dict[str, Any] = {"scale": scale}
    settings: Dict[str, Any] = {**SOLVER_DEFAULTS, **SCALE_PRESETS[scale]}
    explicit: Dict[str, Any] = {}
    for layer in layers:
        for key, value in layer.items():
            if key in RUN_FIELDS:
                fields[key] = value
            elif key != "settings":
                explicit[key] = value
        explicit.update(layer.get("settings") or {})
    settings.update(explicit)
    # An explicit size or time range also applies to the sir task.
    for key in SIR_OVERRIDES:
        if key in explicit and f"sir_{key}" not in explicit:
            settings[f"sir_{key}"] = explicit[key]

    if fields.get("task") == "sir" and "graph_kind" not in fields:
        fields["graph_kind"] = settings["sir_graph_kind"]

    base = int(settings.pop("seed", 0))
    if isinstance(fields.get("seeds"), int):
        fields["seeds"] = list(range(base, base + fields["seeds"]))
    elif "seeds" not in fields:
        fields["seeds"] = [base]
    run = RunConfig(command=command, settings=settings, **fields)
    logger.info("resolved config command=%s scale=%s", command, scale)
    return run
