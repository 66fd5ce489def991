"""Simulation configuration: YAML document <-> validated ``SimConfig``.

Layout (every key optional except ``graph``)::

    graph: example2.graph            # edge list; input paths are relative to this file
    dynamics:
      template: double-integrator-3d # or A: [[..]], B: [[..]], translational: [..]
    weights:
      P: [10, 10, 10, 1, 1, 1]       # scalar, diagonal list, or full matrix
      Q: 1.0
      P_v: riccati                   # riccati | identity | matrix
      theta: 0.99
      N_max: 20
      v_ratio: 0.1
      eps: 1.0e-6
      alpha: 1.0e-3
    network:
      channel_model: reference       # "reference" or a model file
      channel_trace: null            # replay a trace file instead of sampling
      agent_model: reference
      eta: 0.1
      Ts: 10.0                       # ms per step
      tau_max: 100                   # history depth in steps
      mask: 100000.0
    simulation:
      steps: 2000
      seed: 0
      init_scale: 1.0
      output: runs/example           # relative to the working directory
      snapshot_every: 0              # 0: snapshots at start and end only
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .presets import DYNAMICS_TEMPLATES

REFERENCE = "reference"

DEFAULTS = {
    "graph": None,
    "dynamics": {"template": "double-integrator-3d"},
    "weights": {"P": 1.0, "Q": 1.0, "P_v": "riccati", "theta": 0.99, "N_max": 20,
                "v_ratio": 0.1, "eps": 1e-6, "alpha": 1e-3},
    "network": {"channel_model": REFERENCE, "channel_trace": None, "agent_model": REFERENCE,
                "eta": 0.1, "Ts": 10.0, "tau_max": 100, "mask": 1e5},
    "simulation": {"steps": 2000, "seed": 0, "init_scale": 1.0, "output": "runs/out",
                   "snapshot_every": 0},
}
SECTIONS = ("dynamics", "weights", "network", "simulation")


def _merge(user: dict) -> dict:
    if not isinstance(user, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    out = copy.deepcopy(DEFAULTS)
    for key, val in user.items():
        if key not in out:
            raise ConfigError(key, "unknown key")
        if key in SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(key, "must be a mapping")
            if key == "dynamics":
                out[key] = dict(val)
                continue
            for sub, v in val.items():
                if sub not in out[key]:
                    raise ConfigError(f"{key}.{sub}", "unknown key")
                out[key][sub] = v
        else:
            out[key] = val
    return out


def _matrix(name: str, value, size: int | None = None) -> np.ndarray:
    """Scalar -> s*I, flat list -> diag, nested list -> matrix."""
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(name, "must be a number, a list or a nested list of numbers") from None
    if a.ndim == 0:
        if size is None:
            raise ConfigError(name, "a scalar needs a known dimension")
        a = float(a) * np.eye(size)
    elif a.ndim == 1:
        a = np.diag(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or (size is not None and a.shape[0] != size):
        raise ConfigError(name, f"expected a {size}x{size} matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(name, "entries must be finite")
    return a


def _number(name, value, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(name, f"must be an integer, got {value!r}")
    bad_lo = lo is not None and (value <= lo if lo_open else value < lo)
    bad_hi = hi is not None and (value >= hi if hi_open else value > hi)
    if bad_lo or bad_hi or value != value:
        lb = "(" if lo_open else "["
        hb = ")" if hi_open else "]"
        raise ConfigError(name, f"{value!r} outside {lb}{lo}, {hi}{hb}")
    return int(value) if integer else float(value)


@dataclass(frozen=True, eq=False)
class SimConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        object.__setattr__(self, "data", _merge(self.data))
        object.__setattr__(self, "base_dir", Path(self.base_dir))
        self.validate()

    # -- access ---------------------------------------------------------
    def __getitem__(self, dotted: str):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    def resolve(self, value) -> Path:
        """Input path relative to the config file's directory."""
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return Path(self["simulation.output"])

    @property
    def ts(self) -> float:
        return float(self["network.Ts"])

    def dynamics(self):
        """(A, B, translational) for a single agent."""
        d = self.data["dynamics"]
        if "template" in d:
            return DYNAMICS_TEMPLATES[d["template"]](self.ts / 1000.0)
        A = np.asarray(d["A"], dtype=float)
        B = np.asarray(d["B"], dtype=float)
        return A, B, tuple(d.get("translational", range(A.shape[0])))

    def weight_matrices(self, n: int, m: int):
        w = self.data["weights"]
        P = _matrix("weights.P", w["P"], n)
        Q = _matrix("weights.Q", w["Q"], m)
        P_v = w["P_v"] if isinstance(w["P_v"], str) else _matrix("weights.P_v", w["P_v"])
        return P, Q, P_v

    # -- validation -----------------------------------------------------
    def validate(self) -> None:
        d = self.data
        if d["graph"] is None:
            raise ConfigError("graph", "required")
        if not self.resolve(d["graph"]).is_file():
            raise ConfigError("graph", f"file not found: {self.resolve(d['graph'])}")
        dyn = d["dynamics"]
        if "template" in dyn:
            if set(dyn) - {"template"}:
                raise ConfigError("dynamics", "give either a template or A/B matrices, not both")
            if dyn["template"] not in DYNAMICS_TEMPLATES:
                raise ConfigError("dynamics.template",
                                  f"unknown template {dyn['template']!r}; known: {sorted(DYNAMICS_TEMPLATES)}")
        else:
            extra = set(dyn) - {"A", "B", "translational"}
            if extra:
                raise ConfigError(f"dynamics.{sorted(extra)[0]}", "unknown key")
            if "A" not in dyn or "B" not in dyn:
                raise ConfigError("dynamics", "needs a template or both A and B")
            try:
                A = np.asarray(dyn["A"], dtype=float)
                B = np.asarray(dyn["B"], dtype=float)
            except (TypeError, ValueError):
                raise ConfigError("dynamics", "A and B must be numeric matrices") from None
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ConfigError("dynamics.A", "must be a square matrix")
            if B.ndim != 2 or B.shape[0] != A.shape[0]:
                raise ConfigError("dynamics.B", "must have as many rows as A")
            tr = dyn.get("translational", list(range(A.shape[0])))
            if not tr or any(not isinstance(t, int) or not 0 <= t < A.shape[0] for t in tr):
                raise ConfigError("dynamics.translational", "must list state indices")
        A, B, _ = self.dynamics()
        w = d["weights"]
        P, Q, P_v = self.weight_matrices(A.shape[0], B.shape[1])
        for name, mat in (("weights.P", P), ("weights.Q", Q)):
            if not np.allclose(mat, mat.T) or np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() <= 0:
                raise ConfigError(name, "must be symmetric positive definite")
        if isinstance(P_v, str) and P_v not in ("riccati", "identity"):
            raise ConfigError("weights.P_v", "must be 'riccati', 'identity' or a matrix")
        _number("weights.theta", w["theta"], 0, 1, lo_open=True, hi_open=True)
        _number("weights.N_max", w["N_max"], 1, None, integer=True)
        _number("weights.v_ratio", w["v_ratio"], 0, 1, lo_open=True, hi_open=True)
        _number("weights.eps", w["eps"], 0, None)
        _number("weights.alpha", w["alpha"], 0, None, lo_open=True)
        net = d["network"]
        for key in ("channel_model", "agent_model"):
            v = net[key]
            if not isinstance(v, str):
                raise ConfigError(f"network.{key}", "must be 'reference' or a model file path")
            if v != REFERENCE and not self.resolve(v).is_file():
                raise ConfigError(f"network.{key}", f"file not found: {self.resolve(v)}")
        if net["channel_trace"] is not None and not self.resolve(net["channel_trace"]).is_file():
            raise ConfigError("network.channel_trace", f"file not found: {self.resolve(net['channel_trace'])}")
        _number("network.eta", net["eta"], 0, 1)
        _number("network.Ts", net["Ts"], 0, None, lo_open=True)
        _number("network.tau_max", net["tau_max"], 1, None, integer=True)
        _number("network.mask", net["mask"], 0, None, lo_open=True)
        sim = d["simulation"]
        _number("simulation.steps", sim["steps"], 1, None, integer=True)
        _number("simulation.seed", sim["seed"], 0, None, integer=True)
        _number("simulation.init_scale", sim["init_scale"], 0, None, lo_open=True)
        _number("simulation.snapshot_every", sim["snapshot_every"], 0, None, integer=True)
        if not isinstance(sim["output"], str) or not sim["output"]:
            raise ConfigError("simulation.output", "must be a directory path")

    # -- (de)serialization ----------------------------------------------
    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def with_overrides(self, **dotted) -> "SimConfig":
        """Copy with ``section__key=value`` overrides, e.g. ``simulation__steps=10``."""
        data = self.to_dict()
        for key, val in dotted.items():
            parts = key.split("__")
            node = data
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = val
        return SimConfig(data, self.base_dir)

    def with_absolute_inputs(self) -> "SimConfig":
        """Copy whose input file paths no longer depend on ``base_dir``."""
        data = self.to_dict()
        data["graph"] = str(self.resolve(data["graph"]).resolve())
        net = data["network"]
        for key in ("channel_model", "agent_model", "channel_trace"):
            if net[key] not in (None, REFERENCE):
                net[key] = str(self.resolve(net[key]).resolve())
        return SimConfig(data, self.base_dir)

    def __eq__(self, other) -> bool:
        return isinstance(other, SimConfig) and self.data == other.data


def parse_config(text: str, base_dir=None) -> SimConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<syntax>", str(exc)) from None
    return SimConfig(data if data is not None else {}, base_dir or Path.cwd())


def load_config(path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)
