"""Graph-convolutional CDE models: the PENG fusion model and its GN-CDE baselines.

Every variant shares the same latent state ``Z`` (n x d_z), initial-state network
and readout; they differ only in how the effective adjacency of the graph
convolution stack is formed from the control paths.
"""
import abc
import dataclasses
import enum
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np

from .equivariant import PermEquivWeights, fuse
from .errors import DatasetFormatError, InvalidParameterError, ShapeError
from .graphgen import DynamicGraphSeries
from .pathinterp import (
    ControlPath,
    CubicPath,
    MonotoneCubicWarp,
    WarpedPath,
    augment_time,
    fit,
)
from .solvers import LatentPath, SolverConfig, solve
from .tensor import ACTIVATIONS, Array, Tensor

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5
READOUTS = ("node", "graph")


class Variant(str, enum.Enum):
    CONSTANT = "constant"
    GNODE = "gnode"
    ADJACENCY = "adjacency"
    PREMULT = "premult"
    ORIGINAL = "original"
    PENG = "peng"
    PENG_FEATURES = "peng-features"

    @classmethod
    def parse(cls, value: Union[str, "Variant"]) -> "Variant":
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise InvalidParameterError(
                f"Unknown variant {value!r}; expected one of {choices}"
            ) from None


VARIANT_NAMES: List[str] = [v.value for v in Variant]

EQUIVARIANT_VARIANTS = (
    Variant.ADJACENCY,
    Variant.ORIGINAL,
    Variant.PENG,
    Variant.PENG_FEATURES,
)


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    variant: Variant
    n: int
    hidden: int = 16
    num_layers: int = 2
    feature_dim: int = 0
    output_dim: int = 1
    readout: str = "node"
    activation: str = "tanh"
    layer_norm: bool = True
    per_layer_fusion: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.n < 2 or self.hidden < 1 or self.output_dim < 1:
            raise InvalidParameterError(
                "n >= 2, hidden >= 1 and output_dim >= 1 required"
            )
        if self.num_layers < 1:
            raise InvalidParameterError("num_layers must be >= 1")
        if self.feature_dim < 0:
            raise InvalidParameterError("feature_dim must be >= 0")
        if self.readout not in READOUTS:
            raise InvalidParameterError(f"readout must be one of {READOUTS}")
        if self.activation not in ACTIVATIONS:
            raise InvalidParameterError(
                f"Unknown activation {self.activation!r}; "
                f"expected {sorted(ACTIVATIONS)}"
            )
        if self.variant is Variant.PENG_FEATURES and self.feature_dim < 1:
            raise InvalidParameterError("peng-features needs node features")

    @classmethod
    def for_series(
        cls, variant: Union[str, Variant], series: DynamicGraphSeries, **options: Any
    ) -> "ModelConfig":
        options.setdefault("output_dim", max(series.feature_dim, 1))
        return cls(
            variant=Variant.parse(variant),
            n=series.n,
            feature_dim=series.feature_dim,
            **options,
        )

    @property
    def control_channels(self) -> int:
        return self.feature_dim + 1

    @property
    def field_width(self) -> int:
        if self.variant is Variant.PENG_FEATURES:
            return self.hidden * self.control_channels
        return self.hidden

    def to_dict(self) -> Dict[str, Any]:
        payload = dataclasses.asdict(self)
        payload["variant"] = self.variant.value
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ModelConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in fields})


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ModelParams:
    """Named parameter tensors of one model; the variant decides which are present."""

    def __init__(self, config: ModelConfig, tensors: Dict[str, Tensor]) -> None:
        self.config = config
        self.tensors = tensors

    @classmethod
    def initialize(cls, config: ModelConfig) -> "ModelParams":
        rng = np.random.default_rng(config.seed)
        d_z = config.hidden
        values: Dict[str, Array] = {
            "init.graph": glorot(rng, 2, d_z),
            "readout.weight": glorot(rng, d_z, config.output_dim),
            "readout.bias": np.zeros(config.output_dim),
        }
        if config.feature_dim:
            values["init.self"] = glorot(rng, config.feature_dim, d_z)

        if config.variant is Variant.CONSTANT:
            values["constant"] = glorot(rng, config.n, d_z)
        else:
            widths = [d_z] * config.num_layers + [config.field_width]
            for layer in range(config.num_layers):
                values[f"gcn.{layer}"] = glorot(rng, widths[layer], widths[layer + 1])
            if config.layer_norm:
                for layer in range(config.num_layers - 1):
                    values[f"ln.{layer}.gain"] = np.ones(d_z)
                    values[f"ln.{layer}.bias"] = np.zeros(d_z)

        if config.variant in (Variant.PENG, Variant.PENG_FEATURES):
            identity = PermEquivWeights.identity().values()
            for k in range(cls._fusion_sets(config)):
                values[f"fusion.{k}.A"] = identity.copy()
                values[f"fusion.{k}.dA"] = identity.copy()
        elif config.variant is Variant.PREMULT:
            values["premult.A"] = glorot(rng, config.n, config.n)
            values["premult.dA"] = glorot(rng, config.n, config.n)

        tensors = {name: Tensor.parameter(v, name=name) for name, v in values.items()}
        return cls(config, tensors)

    @staticmethod
    def _fusion_sets(config: ModelConfig) -> int:
        return config.num_layers if config.per_layer_fusion else 1

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    @property
    def gcn(self) -> List[Tensor]:
        return [self.tensors[f"gcn.{l}"] for l in range(self.config.num_layers)]

    @property
    def fusion(self) -> List[Tuple[PermEquivWeights, PermEquivWeights]]:
        return [
            (
                PermEquivWeights(self.tensors[f"fusion.{k}.A"]),
                PermEquivWeights(self.tensors[f"fusion.{k}.dA"]),
            )
            for k in range(self._fusion_sets(self.config))
        ]

    def fusion_parameter_count(self) -> int:
        return sum(
            t.size
            for name, t in self.tensors.items()
            if name.startswith(("fusion.", "premult."))
        )

    def layer_norm(self, layer: int) -> Optional[Tuple[Tensor, Tensor]]:
        gain = self.tensors.get(f"ln.{layer}.gain")
        if gain is None:
            return None
        return gain, self.tensors[f"ln.{layer}.bias"]

    def copy(self) -> "ModelParams":
        tensors = {
            name: Tensor.parameter(t.data.copy(), name=name)
            for name, t in self.tensors.items()
        }
        return ModelParams(self.config, tensors)

    def state(self) -> Dict[str, Array]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state(self, state: Dict[str, Array]) -> None:
        for name, tensor in self.tensors.items():
            if name not in state:
                raise DatasetFormatError(f"checkpoint is missing parameter {name!r}")
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != tensor.shape:
                raise DatasetFormatError(
                    f"parameter {name!r} has shape {values.shape}, "
                    f"expected {tensor.shape}"
                )
            tensor.data[...] = values

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant.value,
            "config": self.config.to_dict(),
            "params": {
                name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
                for name, t in self.tensors.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ModelParams":
        try:
            params = cls.initialize(ModelConfig.from_dict(payload["config"]))
            state = {
                name: np.reshape(
                    np.asarray(entry["values"], dtype=np.float64), entry["shape"]
                )
                for name, entry in payload["params"].items()
            }
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"Malformed checkpoint: {e}") from e
        params.load_state(state)
        return params


@dataclasses.dataclass(frozen=True)
class GraphControls:
    """Time-augmented control paths of one series.

    ``adjacency`` has channel shape (n, n, 2) with channel 1 holding A;
    ``features`` has channel shape (n, d_x + 1) with channel 0 holding time.
    """

    adjacency: ControlPath
    features: Optional[ControlPath] = None
    initial_features: Optional[Array] = None

    @classmethod
    def from_series(cls, series: DynamicGraphSeries) -> "GraphControls":
        times = series.times
        adjacency = fit(times, augment_time(series.adjacency, times))
        features = None
        initial = None
        if series.features is not None:
            features = fit(times, augment_time(series.features, times, new_axis=False))
            initial = np.asarray(series.features[0], dtype=np.float64)
        return cls(adjacency=adjacency, features=features, initial_features=initial)

    @property
    def t0(self) -> float:
        return self.adjacency.t0

    @property
    def t1(self) -> float:
        return self.adjacency.t1

    def a(self, t: float) -> Tensor:
        return self.adjacency.eval(t)[..., 1]

    def da(self, t: float) -> Tensor:
        return self.adjacency.deriv(t)[..., 1]

    def a_snapshot(self, t: float) -> Tensor:
        return self.adjacency.snapshot(t)[..., 1]

    def dx(self, t: float) -> Tensor:
        if self.features is None:
            raise InvalidParameterError("this series has no feature path")
        return self.features.deriv(t)

    def warped(self, warp: MonotoneCubicWarp) -> "GraphControls":
        """Controls composed with ``warp``; the warp must fix both endpoints."""

        def compose(path: Optional[ControlPath]) -> Optional[ControlPath]:
            if path is None:
                return None
            if not isinstance(path, CubicPath):
                raise InvalidParameterError("only fitted cubic paths can be warped")
            return WarpedPath(path, warp)

        return dataclasses.replace(
            self, adjacency=compose(self.adjacency), features=compose(self.features)
        )


def layer_norm(h: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize every node's feature vector, then scale and shift."""
    centered = h - h.mean(axis=1, keepdims=True)
    variance = centered.square().mean(axis=1, keepdims=True)
    return centered / (variance + LAYER_NORM_EPS).sqrt() * gain + bias


def gcn_stack(params: ModelParams, adjacency: Sequence[Tensor], z: Tensor) -> Tensor:
    """sigma(A Z W) per layer; layer l uses adjacency[l] or the single shared one."""
    activation = ACTIVATIONS[params.config.activation]
    h = z
    for layer, weight in enumerate(params.gcn):
        a = adjacency[layer] if len(adjacency) > 1 else adjacency[0]
        h = activation(a @ (h @ weight))
        norm = params.layer_norm(layer)
        if norm is not None:
            h = layer_norm(h, *norm)
    return h


class GraphVectorField(abc.ABC):
    """f(t, Z) for one model and one set of controls; counts its evaluations."""

    def __init__(self, params: ModelParams, controls: GraphControls) -> None:
        self.params = params
        self.controls = controls
        self.evaluations = 0

    def __call__(self, t: float, z: Tensor) -> Tensor:
        self.evaluations += 1
        if z.shape != (self.params.config.n, self.params.config.hidden):
            raise ShapeError(f"latent state has shape {z.shape}")
        return self.evaluate(t, z)

    def evaluate(self, t: float, z: Tensor) -> Tensor:
        return gcn_stack(self.params, self.effective_adjacency(t), z)

    @abc.abstractmethod
    def effective_adjacency(self, t: float) -> List[Tensor]:
        """One fused adjacency per fusion set (usually a single one)."""


class ConstantField(GraphVectorField):
    def evaluate(self, t: float, z: Tensor) -> Tensor:
        return self.params.tensors["constant"]

    def effective_adjacency(self, t: float) -> List[Tensor]:
        return []


class SnapshotField(GraphVectorField):
    def effective_adjacency(self, t: float) -> List[Tensor]:
        return [self.controls.a_snapshot(t)]


class AdjacencyField(GraphVectorField):
    def effective_adjacency(self, t: float) -> List[Tensor]:
        return [self.controls.a(t)]


class PreMultField(GraphVectorField):
    def effective_adjacency(self, t: float) -> List[Tensor]:
        w1 = self.params.tensors["premult.A"]
        w2 = self.params.tensors["premult.dA"]
        return [w1 @ self.controls.a(t) + w2 @ self.controls.da(t)]


class SumField(GraphVectorField):
    def effective_adjacency(self, t: float) -> List[Tensor]:
        return [self.controls.a(t) + self.controls.da(t)]


class EquivariantFusionField(GraphVectorField):
    def effective_adjacency(self, t: float) -> List[Tensor]:
        a, da = self.controls.a(t), self.controls.da(t)
        return [fuse(l1, l2, a, da) for l1, l2 in self.params.fusion]


class EquivariantFeatureField(EquivariantFusionField):
    """Field output read as n x d_z x (d_x + 1), contracted node-wise with dX/dt."""

    def evaluate(self, t: float, z: Tensor) -> Tensor:
        config = self.params.config
        n, d_z, channels = config.n, config.hidden, config.control_channels
        out = super().evaluate(t, z).reshape(n, d_z, channels)
        dx = self.controls.dx(t).reshape(n, 1, channels)
        return (out * dx).sum(axis=2)


FIELDS: Dict[Variant, Type[GraphVectorField]] = {
    Variant.CONSTANT: ConstantField,
    Variant.GNODE: SnapshotField,
    Variant.ADJACENCY: AdjacencyField,
    Variant.PREMULT: PreMultField,
    Variant.ORIGINAL: SumField,
    Variant.PENG: EquivariantFusionField,
    Variant.PENG_FEATURES: EquivariantFeatureField,
}


def vector_field(params: ModelParams, controls: GraphControls) -> GraphVectorField:
    return FIELDS[params.variant](params, controls)


def init_state(params: ModelParams, controls: GraphControls, t0: float) -> Tensor:
    """Z0 = sigma(A_t0 H W_graph [+ X_t0 W_self]) with H = [t0 1, degree / (n - 1)]."""
    config = params.config
    a = controls.a(t0)
    n = a.shape[0]
    degree = a.data.sum(axis=1, keepdims=True) / (n - 1)
    summary = np.concatenate([np.full((n, 1), t0), degree], axis=1)
    pre = a @ (Tensor._wrap(summary) @ params.tensors["init.graph"])
    self_weight = params.tensors.get("init.self")
    if self_weight is not None:
        if controls.initial_features is None:
            raise InvalidParameterError("the model expects node features")
        x0 = Tensor._wrap(controls.initial_features)
        if x0.shape != (n, config.feature_dim):
            raise ShapeError(f"initial features have shape {x0.shape}")
        pre = pre + x0 @ self_weight
    return ACTIVATIONS[config.activation](pre)


def readout(params: ModelParams, z: Tensor) -> Tensor:
    out = z @ params.tensors["readout.weight"] + params.tensors["readout.bias"]
    if params.config.readout == "graph":
        return out.mean(axis=0)
    return out


def solve_latent(
    params: ModelParams,
    controls: GraphControls,
    save_times: Sequence[float],
    solver: SolverConfig,
    grid: Optional[Sequence[float]] = None,
) -> LatentPath:
    field = vector_field(params, controls)
    z0 = init_state(params, controls, controls.t0)
    latent = solve(field, z0, save_times, solver, t0=controls.t0, grid=grid)
    logger.debug(
        "forward variant=%s saves=%d evaluations=%d",
        params.variant.value,
        len(save_times),
        field.evaluations,
    )
    return latent


def forward(
    params: ModelParams,
    series: Union[DynamicGraphSeries, GraphControls],
    save_times: Optional[Sequence[float]] = None,
    solver: Optional[SolverConfig] = None,
    grid: Optional[Sequence[float]] = None,
) -> List[Tensor]:
    """Per-save-time predictions (n x d_y per node, or (d_y,) for graph readout)."""
    if isinstance(series, DynamicGraphSeries):
        controls = GraphControls.from_series(series)
        if save_times is None:
            save_times = [float(t) for t in series.times]
    else:
        controls = series
    if save_times is None:
        raise InvalidParameterError("save_times are required with explicit controls")
    latent = solve_latent(params, controls, save_times, solver or SolverConfig(), grid)
    return [readout(params, z) for z in latent.states]

