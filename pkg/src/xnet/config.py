"""Run configuration: one JSON file drives every pipeline stage.

Defaults live in the dataclasses; `xnetctl --print-config` dumps them.
Unknown keys are rejected so typos fail loudly. All stage randomness
derives from the single global seed (see util.derive_seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path as FilePath

from .errors import ConfigError, ValidationError
from .netcore import Topology, TrafficMatrix, builtin_geant, builtin_triangle, load_tm, load_topology
from .qrouter import Hyperparams, RewardWeights
from .util import derive_seed


def _from_mapping(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class TopologyConfig:
    source: str = "builtin"  # builtin | file
    name: str = "geant"      # builtin: geant | triangle
    path: str | None = None  # file: CSV path

    def resolve(self) -> Topology:
        if self.source == "builtin":
            if self.name == "geant":
                return builtin_geant()
            if self.name == "triangle":
                return builtin_triangle()
            raise ConfigError(f"unknown builtin topology {self.name!r}")
        if self.source == "file":
            if not self.path:
                raise ConfigError("topology.source=file requires topology.path")
            if not FilePath(self.path).is_file():
                raise ConfigError(f"topology file not found: {self.path}")
            return load_topology(self.path)
        raise ConfigError(f"unknown topology source {self.source!r}")


@dataclass(frozen=True)
class TrafficConfig:
    source: str = "synthetic"  # synthetic | dir
    n: int = 16
    peak_scale: float = 1.0
    seed: int | None = None    # None: derived from the global seed
    path: str | None = None    # dir: directory of tm_<HH>-<MM>.csv files

    def resolve(self, t: Topology, global_seed: int) -> list[TrafficMatrix]:
        from .netcore import synth_diurnal

        if self.source == "synthetic":
            seed = self.seed if self.seed is not None else derive_seed(global_seed, "traffic")
            return synth_diurnal(t, self.n, seed, self.peak_scale)
        if self.source == "dir":
            if not self.path:
                raise ConfigError("traffic.source=dir requires traffic.path")
            root = FilePath(self.path)
            if not root.is_dir():
                raise ConfigError(f"traffic matrix directory not found: {self.path}")
            files = sorted(root.glob("tm_*.csv"))
            if not files:
                raise ConfigError(f"no tm_*.csv files in {self.path}")
            tms = [load_tm(f, topology=t) for f in files]
            return sorted(tms, key=lambda tm: tm.tag)
        raise ConfigError(f"unknown traffic source {self.source!r}")


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 0.8
    gamma: float = 0.999
    epsilon: float = 0.1
    episodes_per_pair: int = 300
    max_steps: int | None = None
    hop_cost: float = 0.1
    weights: tuple[float, float, float] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    warm_start: bool = False

    def hyperparams(self, seed: int) -> Hyperparams:
        return Hyperparams(alpha=self.alpha, gamma=self.gamma, epsilon=self.epsilon,
                           episodes_per_pair=self.episodes_per_pair,
                           max_steps=self.max_steps, hop_cost=self.hop_cost, seed=seed)

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(*self.weights)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = 16
    min_leaf: int = 5
    feature_frac: float | None = None


@dataclass(frozen=True)
class GbtConfig:
    n_rounds: int = 200
    eta: float = 0.1
    max_depth: int | None = 6
    lam: float = 1.0
    min_leaf: int = 5


@dataclass(frozen=True)
class SurrogateConfig:
    test_frac: float = 0.2
    ridge_lam: float = 1.0
    forest: ForestConfig = field(default_factory=ForestConfig)
    gbt: GbtConfig = field(default_factory=GbtConfig)


@dataclass(frozen=True)
class ExplainConfig:
    background_rows: int = 128
    shap_rows: int = 256
    ice_rows: int = 64
    grid_size: int = 20


@dataclass(frozen=True)
class TunerConfig:
    step: float = 0.25
    top_k: int = 2
    prune: bool = True


@dataclass(frozen=True)
class EvalConfig:
    weights: tuple[tuple[float, float, float], ...] = (
        (0.6, 0.3, 0.1),
        (0.65, 0.35, 0.0),
    )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    out_dir: str = "runs/out"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    tuner: TunerConfig = field(default_factory=TunerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    out: dict = {}
    simple = {"seed", "out_dir"}
    nested = {
        "topology": (TopologyConfig, None),
        "traffic": (TrafficConfig, None),
        "agent": (AgentConfig, "weights"),
        "surrogate": (SurrogateConfig, None),
        "explain": (ExplainConfig, None),
        "tuner": (TunerConfig, None),
        "eval": (EvalConfig, "weights"),
    }
    unknown = sorted(set(data) - simple - set(nested))
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    for key in simple:
        if key in data:
            out[key] = data[key]
    for key, (cls, tuple_field) in nested.items():
        if key not in data:
            continue
        section = dict(data[key])
        if key == "surrogate":
            if "forest" in section:
                section["forest"] = _from_mapping(ForestConfig, section["forest"],
                                                  "config surrogate.forest")
            if "gbt" in section:
                section["gbt"] = _from_mapping(GbtConfig, section["gbt"],
                                               "config surrogate.gbt")
        if tuple_field and tuple_field in section:
            raw = section[tuple_field]
            if key == "agent":
                section[tuple_field] = tuple(float(v) for v in raw)
            else:
                section[tuple_field] = tuple(tuple(float(v) for v in w) for w in raw)
        out[key] = _from_mapping(cls, section, f"config {key}")
    cfg = _from_mapping(RunConfig, out, "config")
    try:
        cfg.agent.reward_weights()
        for w in cfg.eval.weights:
            RewardWeights(*w)
    except ValidationError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return cfg


def load_config(path: str | FilePath) -> RunConfig:
    p = FilePath(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
