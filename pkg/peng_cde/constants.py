from typing import Any, Dict, List, Tuple

# The 15 linear permutation equivariant maps on
# n x n matrices: index -> (operation group, replication target).
BASIS_OPERATIONS: Dict[int, Tuple[str, str]] = {
    1: ("Identity", ""),
    2: ("Transpose", ""),
    3: ("Diagonalisation", ""),
    4: ("Sum rows on", "rows"),
    5: ("Sum rows on", "columns"),
    6: ("Sum rows on", "diagonal"),
    7: ("Sum columns on", "rows"),
    8: ("Sum columns on", "columns"),
    9: ("Sum columns on", "diagonal"),
    10: ("Sum all on", "all"),
    11: ("Sum all on", "diagonal"),
    12: ("Sum diagonal on", "all"),
    13: ("Sum diagonal on", "diagonal"),
    14: ("Diagonal on", "rows"),
    15: ("Diagonal on", "columns"),
}

NUM_BASIS_MAPS = len(BASIS_OPERATIONS)

IDENTITY_INDEX = 1

ABLATION_BOLD_THRESHOLD = 0.1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

TASKS: List[str] = ["heat", "gene", "wealth", "opinion", "sir"]

GRAPH_KINDS: List[str] = ["grid", "small-world", "power-law", "community"]

SPLIT_ROLES: List[str] = ["train", "val", "test"]

CHECK_SUITES: List[str] = [
    "equivariance",
    "timewarp",
    "projection",
    "gradients",
    "solver-order",
]

GRAPH_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "grid": {"rows": None},
    "small-world": {"k": 4, "p": 0.1},
    "power-law": {"m": 2},
    "community": {"blocks": 4, "p_in": 0.2, "p_out": 0.01},
}

# ~1% of node pairs flip at each topology change event.
DEFAULT_FLIP_RATE = 0.01

# Fraction of snapshots held out for extrapolation / interpolation validation
# (20 of 120 each).
EXTRAP_FRACTION = 20 / 120
INTERP_FRACTION = 20 / 120

SIR_REGIMES: Dict[str, Dict[str, float]] = {
    "outbreak": {"beta": 0.3, "gamma": 0.3},
    "die-out": {"beta": 0.25, "gamma": 0.7},
}

SIR_LABELS: Dict[str, int] = {"die-out": 0, "outbreak": 1}

SCALE_PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "n": 50,
        "t_end": 5.0,
        "num_times": 60,
        "num_changes": 6,
        "epochs": 300,
        "hidden": 16,
        "num_layers": 2,
        "learning_rate": 1e-2,
        "weight_decay": 1e-4,
        "patience": 300,
        "min_epochs": 0,
        "batch": 4,
        "sir_n": 25,
        "sir_t_end": 1.0,
        "sir_num_times": 40,
        "sir_graph_kind": "grid",
        "sir_hidden": 32,
        "sir_num_layers": 3,
        "sir_trajectories": 8,
        "sir_patience": 50,
        "sir_min_epochs": 50,
    },
    "paper": {
        "n": 400,
        "t_end": 5.0,
        "num_times": 120,
        "num_changes": 12,
        "epochs": 2000,
        "hidden": 16,
        "num_layers": 2,
        "learning_rate": 1e-2,
        "weight_decay": 1e-4,
        "patience": 2000,
        "min_epochs": 0,
        "batch": 4,
        "sir_n": 100,
        "sir_t_end": 1.0,
        "sir_num_times": 100,
        "sir_graph_kind": "grid",
        "sir_hidden": 32,
        "sir_num_layers": 3,
        "sir_trajectories": 50,
        "sir_patience": 200,
        "sir_min_epochs": 200,
    },
}
