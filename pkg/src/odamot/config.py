"""Plain-text ``key = value`` run configuration.

Keys are grouped by prefix: ``tracker.*`` mirrors :class:`TrackerConfig`,
``mtl.*`` mirrors :class:`MtlConfig`, ``scenario.*`` mirrors
:class:`ScenarioConfig` and ``pretrain.*`` holds the batch-training knobs.
``seed`` and ``mode`` are top level, and ``paths.*`` names files. Blank lines
and ``#`` comments are ignored; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .mtl import MtlConfig
from .sim import ScenarioConfig
from .tracker import MODES, TrackerConfig


@dataclass
class PretrainConfig:
    n_pos: int = 2000
    n_neg: int = 8000
    lam: float = 1e-4
    rounds: int = 3
    mine_prob: float = 0.3
    heldout: float = 0.2


_DOCS = {
    "seed": "master seed for simulation, pretraining and tracking",
    "mode": "tracker variant: odamot, cit or cft",
    "tracker.T": "frames before a lost track dies and before overlapping tracks merge",
    "tracker.overlap_merge": "overlap above which two tracks count as overlapping",
    "tracker.n_particles": "particles per target",
    "tracker.sigma0": "initial relative particle noise",
    "tracker.feature_norm": "L2 norm features are scaled to before scoring",
    "mtl.lam": "pull of target models towards the category mean",
    "mtl.eta": "SGD learning rate",
    "mtl.epochs": "SGD passes per frame",
    "scenario.delta": "domain shift magnitude between source and target",
    "pretrain.heldout": "fraction of source samples kept for the accuracy report",
    "paths.model": "detector weights file (ODMW)",
    "paths.data": "sequence directory with features/, proposals/, flow/",
    "paths.gt": "KITTI ground-truth file",
    "paths.results": "KITTI results file",
    "paths.adapted": "where the adapted category detector is written (odamot only)",
    "paths.out": "output directory or file",
    "paths.pos": "ODFT file of positive source features (pretrain from files)",
    "paths.neg": "ODFT file of negative source features (pretrain from files)",
}

_PATH_KEYS = ("model", "data", "gt", "results", "adapted", "out", "pos", "neg")


def _fields(cls, prefix, skip=()):
    out = {}
    inst = cls()
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        out[f"{prefix}.{f.name}"] = getattr(inst, f.name)
    return out


def default_values() -> dict:
    """Every recognised key with its default."""
    vals = {"seed": 0, "mode": "odamot"}
    vals.update(_fields(TrackerConfig, "tracker", skip=("mtl", "seed", "mode")))
    vals.update(_fields(MtlConfig, "mtl"))
    vals.update(_fields(ScenarioConfig, "scenario", skip=("seed",)))
    vals.update(_fields(PretrainConfig, "pretrain"))
    vals.update({f"paths.{k}": None for k in _PATH_KEYS})
    return vals


def _fmt(v) -> str:
    if v is None:
        return "(unset)"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def describe_keys() -> str:
    """One line per key, ``key = default  # doc``, for ``--help``."""
    lines = []
    for k, v in default_values().items():
        doc = _DOCS.get(k)
        lines.append(f"  {k} = {_fmt(v)}" + (f"    # {doc}" if doc else ""))
    return "\n".join(lines)


def _coerce(key, raw: str, default):
    raw = raw.strip()
    try:
        if key.startswith("paths."):
            return raw or None
        if key == "scenario.shift_dir":
            return None if raw.lower() in ("", "none") else tuple(float(x) for x in raw.split(","))
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


@dataclass
class RunConfig:
    values: dict = field(default_factory=default_values)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            cfg.set(k.strip(), v, where=f"{source}:{lineno}")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        return cls.from_text(p.read_text(), str(p))

    def set(self, key: str, raw, where: str = "override") -> None:
        if key not in self.values:
            raise ConfigError(f"{where}: unknown key {key!r}")
        default = default_values()[key]
        self.values[key] = _coerce(key, raw, default) if isinstance(raw, str) else raw

    def apply(self, pairs) -> "RunConfig":
        """Apply ``key=value`` strings (command-line overrides)."""
        for p in pairs or ():
            if "=" not in p:
                raise ConfigError(f"override {p!r} is not key=value")
            k, v = p.split("=", 1)
            self.set(k.strip(), v)
        return self

    def __getitem__(self, key):
        return self.values[key]

    def _section(self, prefix) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def mode(self) -> str:
        m = str(self.values["mode"]).upper()
        if m not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(x.lower() for x in MODES)}")
        return m

    def path(self, name: str):
        v = self.values[f"paths.{name}"]
        return Path(v) if v else None

    def mtl(self) -> MtlConfig:
        try:
            return MtlConfig(**self._section("mtl"))
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def tracker(self) -> TrackerConfig:
        try:
            return TrackerConfig(mode=self.mode, seed=self.seed, mtl=self.mtl(),
                                 **self._section("tracker"))
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def scenario(self) -> ScenarioConfig:
        try:
            return ScenarioConfig(seed=self.seed, **self._section("scenario"))
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def pretrain(self) -> PretrainConfig:
        p = PretrainConfig(**self._section("pretrain"))
        if p.n_pos < 0 or p.n_neg < 0 or p.rounds < 0 or not 0 <= p.heldout < 1 or p.lam < 0:
            raise ConfigError(f"invalid pretrain settings {p}")
        return p

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(v) if v is not None else ''}\n" for k, v in self.values.items())
