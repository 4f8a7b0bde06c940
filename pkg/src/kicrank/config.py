"""Run configuration: TOML/JSON loading, defaults and seed substreams.

A run is described by one file with optional ``[train]``, ``[gateway]``
and ``[ablations]`` tables; everything else sits at the top level. The
effective configuration (after defaults) is dumped next to the outputs
as JSON, and that dump is itself a loadable config, so a run can be
reproduced from its artifacts. Secrets never live in config files; the
API key comes from the environment.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .gateway import GatewayConfig
from .retriever import TrainConfig
from .verbalizer import FREEBASE, WORDNET

M_SEARCH_SET = (10, 20, 30, 40, 50)


class ConfigError(Exception):
    pass


@dataclass
class AblationFlags:
    shuffle_candidates: bool = False
    random_demos: bool = False
    no_icl: bool = False
    trivial_prompt: bool = False


@dataclass
class RunConfig:
    dataset_dir: str = "."
    output_dir: str = "out"
    m: int = 10
    mode: str | None = None
    scheme: str | None = None
    demo_batch_size: int = 4
    token_budget: int = 4096
    reply_reserve: int = 512
    seed: int = 0
    jobs: int = 1
    alignment: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    ablations: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"m must be at least 1, got {self.m}")
        if self.demo_batch_size < 1:
            raise ConfigError("demo_batch_size must be at least 1")
        if self.token_budget <= self.reply_reserve:
            raise ConfigError("token_budget must exceed reply_reserve")
        if self.mode is None:
            self.mode = "score" if self._looks_like_wordnet() else "sort"
        if self.scheme is None:
            self.scheme = WORDNET if self._looks_like_wordnet() else FREEBASE
        self.gateway.validate()

    def _looks_like_wordnet(self) -> bool:
        return "wn" in Path(self.dataset_dir).name.lower()

    @property
    def conversation_budget(self) -> int:
        return self.token_budget - self.reply_reserve


def _build(cls, data: dict, context: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {context} key(s): {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | Path) -> RunConfig:
    """Read a TOML (or JSON) run description into a ``RunConfig``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        data = json.loads(path.read_text("utf-8"))
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    data = dict(data)
    sections = {
        "train": _build(TrainConfig, data.pop("train", {}), "train"),
        "gateway": _build(GatewayConfig, data.pop("gateway", {}), "gateway"),
        "ablations": _build(AblationFlags, data.pop("ablations", {}), "ablations"),
    }
    return _build(RunConfig, {**data, **sections}, "run")


def dump_config(config: RunConfig, path: str | Path) -> None:
    """Write the effective configuration as reloadable JSON."""
    data = dataclasses.asdict(config)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", "utf-8")


def derive_seed(master: int, *labels) -> int:
    """Named substream seed: a pure function of the run seed and the
    stream labels, so ablations only perturb their own randomness."""
    digest = hashlib.sha256(repr((master, labels)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
