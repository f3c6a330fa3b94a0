"""INI experiment configuration.

A run config has up to five sections, every key optional::

    [search]     SearchConfig fields (epochs, lr, controller, selector, ...)
    [novelty]    k, n, sigma, gamma, w
    [space]      num_input_nodes, num_op_nodes, inputs_per_node, ops, num_cell_types
    [dataset]    name, sizes, noise, seed, num_classes
    [evaluator]  kind = supernet | oracle, plus oracle settings

A comparison plan is a run config (the base) plus ``[plan]`` and any number of
``[cell LABEL]`` sections holding ``[search]``-key overrides.  Without cell
sections the plan is the full controller x selector grid.  Unknown sections
and keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .arch import MICRO_OPS, CellSpec
from .novelty import NoveltyConfig
from .oracle import MODES, TabularOracle
from .search import CONTROLLERS, SELECTORS, SearchConfig
from .supernet import DATASETS, MicroDataset, make_dataset


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "moons"
    sizes: tuple[int, int, int] = (256, 128, 128)
    noise: float = 0.1
    seed: int = 0
    num_classes: int = 2

    def build(self) -> MicroDataset:
        return make_dataset(self.name, self.sizes, self.noise, self.seed, self.num_classes)


@dataclass(frozen=True)
class EvaluatorConfig:
    kind: str = "supernet"
    mode: str = "hash-smooth"
    seed: int = 0
    local_peak: float = 0.6
    local_width: float = 0.8
    global_peak: float = 0.95
    global_width: float = 0.4

    def __post_init__(self):
        if self.kind not in ("supernet", "oracle"):
            raise ValueError("evaluator kind must be 'supernet' or 'oracle'")
        if self.mode not in MODES:
            raise ValueError(f"oracle mode must be one of {MODES}")

    def build(self, spec: CellSpec) -> TabularOracle | None:
        if self.kind == "supernet":
            return None
        if self.mode == "deceptive":
            return TabularOracle.deceptive(spec, self.seed, self.local_peak, self.local_width,
                                           self.global_peak, self.global_width)
        return TabularOracle(spec, "hash-smooth", self.seed)


@dataclass(frozen=True)
class SpaceConfig:
    num_input_nodes: int = 1
    num_op_nodes: int = 4
    inputs_per_node: int = 1
    ops: tuple[str, ...] = MICRO_OPS
    num_cell_types: int = 1

    def build(self) -> CellSpec:
        return CellSpec(self.num_input_nodes, self.num_op_nodes, self.inputs_per_node,
                        self.ops, self.num_cell_types)


@dataclass(frozen=True)
class RunConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    space: SpaceConfig = field(default_factory=SpaceConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    source: str = ""

    def to_dict(self) -> dict:
        return {
            "search": self.search.to_dict(),
            "space": dataclasses.asdict(self.space) | {"ops": list(self.space.ops)},
            "dataset": dataclasses.asdict(self.dataset) | {"sizes": list(self.dataset.sizes)},
            "evaluator": dataclasses.asdict(self.evaluator),
        }

    def echo(self) -> dict:
        """Config block stored in result documents: raw text plus resolved values."""
        return {"source": self.source, "resolved": self.to_dict()}


@dataclass(frozen=True)
class Plan:
    base: RunConfig
    cells: tuple[tuple[str, SearchConfig], ...]
    repeats: int = 5
    jobs: int = 1


# -- parsing -----------------------------------------------------------------

_SECTIONS = {
    "search": SearchConfig,
    "novelty": NoveltyConfig,
    "space": SpaceConfig,
    "dataset": DatasetConfig,
    "evaluator": EvaluatorConfig,
}


def _convert(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            items = [v.strip() for v in value.split(",") if v.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(v) for v in items)
            return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return value.strip()


def _section_kwargs(cp: configparser.ConfigParser, section: str, cls, skip=()) -> dict:
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)} - set(skip)
    out = {}
    for key, value in cp.items(section, raw=True):
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        out[key] = _convert(value, getattr(defaults, key), f"{section}.{key}")
    return out


def _read(text: str, origin: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00defaults")
    cp.optionxform = str
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    return cp


def _run_from_parser(cp: configparser.ConfigParser, text: str, extra_sections=()) -> RunConfig:
    for section in cp.sections():
        if section not in _SECTIONS and not any(section == s or section.startswith(s + " ")
                                                for s in extra_sections):
            raise ConfigError(f"unknown section [{section}]")
    get = lambda name, cls, skip=(): (_section_kwargs(cp, name, cls, skip)
                                      if cp.has_section(name) else {})
    try:
        novelty = NoveltyConfig(**get("novelty", NoveltyConfig))
        search = SearchConfig(novelty=novelty, **get("search", SearchConfig, skip=("novelty",)))
        space = SpaceConfig(**get("space", SpaceConfig))
        space.build()
        dataset = DatasetConfig(**get("dataset", DatasetConfig))
        if dataset.name not in DATASETS:
            raise ValueError(f"unknown dataset {dataset.name!r}")
        if len(dataset.sizes) != 3:
            raise ValueError("dataset.sizes needs three comma-separated integers")
        evaluator = EvaluatorConfig(**get("evaluator", EvaluatorConfig))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return RunConfig(search, space, dataset, evaluator, text)


def _read_file(path) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc


def parse_run_config(text: str, origin: str = "<config>") -> RunConfig:
    return _run_from_parser(_read(text, origin), text)


def load_run_config(path) -> RunConfig:
    return parse_run_config(_read_file(path), str(path))


def default_grid(base: SearchConfig) -> tuple[tuple[str, SearchConfig], ...]:
    return tuple((f"{c}/{s}", replace(base, controller=c, selector=s))
                 for c in CONTROLLERS for s in SELECTORS)


def parse_plan(text: str, origin: str = "<plan>") -> Plan:
    cp = _read(text, origin)
    base = _run_from_parser(cp, text, extra_sections=("plan", "cell"))
    repeats, jobs = 5, 1
    if cp.has_section("plan"):
        for key, value in cp.items("plan", raw=True):
            if key == "repeats":
                repeats = _convert(value, 0, "plan.repeats")
            elif key == "jobs":
                jobs = _convert(value, 0, "plan.jobs")
            else:
                raise ConfigError(f"unknown key {key!r} in section [plan]")
    if repeats < 1:
        raise ConfigError("plan.repeats must be >= 1")
    if jobs < 1:
        raise ConfigError("plan.jobs must be >= 1")
    cells = []
    for section in cp.sections():
        if section == "cell":
            raise ConfigError("cell sections need a label: [cell LABEL]")
        if not section.startswith("cell "):
            continue
        label = section[5:].strip()
        if not label:
            raise ConfigError("cell sections need a label: [cell LABEL]")
        if any(label == existing for existing, _ in cells):
            raise ConfigError(f"duplicate cell label {label!r}")
        try:
            cells.append((label, replace(base.search,
                                         **_section_kwargs(cp, section, SearchConfig,
                                                           skip=("novelty",)))))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[{section}]: {exc}") from exc
    return Plan(base, tuple(cells) or default_grid(base.search), repeats, jobs)


def load_plan(path) -> Plan:
    return parse_plan(_read_file(path), str(path))
