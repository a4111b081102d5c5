"""Experiment configuration: plain dataclasses that round-trip through JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .certify import CertOptions
from .haar import DEFAULT_NONVANISH_TOL, STRATEGIES

TREE_KINDS = ("uniform", "random", "file")
SYMBOL_KINDS = ("constant", "petermichl", "variable")
APPLY_OPERATORS = ("auto", "multiplier", "petermichl", "petermichl-adjoint")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class TreeSpec:
    kind: str = "uniform"
    depth: int = 3
    branching: int = 2
    leaf_weight_rule: str = "equal"
    weights: list | None = None
    total_mass: float = 1.0
    seed: int = 0
    branching_range: list = field(default_factory=lambda: [2, 3])
    weight_law: str = "log-uniform"
    stop_prob: float = 0.0
    path: str | None = None
    strict: bool = False
    validate: bool = True

    def check(self) -> None:
        if self.kind not in TREE_KINDS:
            raise ConfigError("tree.kind", f"expected one of {TREE_KINDS}, got {self.kind!r}")
        if self.kind == "file":
            if not self.path:
                raise ConfigError("tree.path", "required for kind 'file'")
            return
        if not isinstance(self.depth, int) or self.depth < 1:
            raise ConfigError("tree.depth", f"must be an integer >= 1, got {self.depth!r}")
        if self.kind == "uniform":
            if not isinstance(self.branching, int) or self.branching < 2:
                raise ConfigError("tree.branching", f"must be an integer >= 2, "
                                  f"got {self.branching!r}")
            if self.leaf_weight_rule not in ("equal", "listed"):
                raise ConfigError("tree.leaf_weight_rule",
                                  f"expected 'equal' or 'listed', got {self.leaf_weight_rule!r}")
            if self.leaf_weight_rule == "listed" and not self.weights:
                raise ConfigError("tree.leaf_weight_rule",
                                  "'listed' requires tree.weights, none given")
            if not self.total_mass > 0:
                raise ConfigError("tree.total_mass", "must be positive")
        else:
            if len(self.branching_range) != 2:
                raise ConfigError("tree.branching_range", "must be [low, high]")
            if not 0.0 <= self.stop_prob < 1.0:
                raise ConfigError("tree.stop_prob", "must lie in [0, 1)")


@dataclass
class HaarSpec:
    strategy: str = "rotated-helmert"
    seed: int = 0
    nonvanish_tol: float = DEFAULT_NONVANISH_TOL

    def check(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError("haar.strategy",
                              f"expected one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.nonvanish_tol < 1.0:
            raise ConfigError("haar.nonvanish_tol", "must lie in [0, 1)")


@dataclass
class SymbolSpec:
    """``constant``: ``preset`` (ones | zeros | random:<seed>) or ``path``;
    ``petermichl``: ``alphas`` preset name or ``path`` to an alpha file;
    ``variable``: ``path`` to a symbol file."""

    kind: str = "petermichl"
    preset: str = "ones"
    alphas: str = "plus-minus"
    path: str | None = None

    def check(self) -> None:
        if self.kind not in SYMBOL_KINDS:
            raise ConfigError("symbol.kind",
                              f"expected one of {SYMBOL_KINDS}, got {self.kind!r}")
        if self.kind == "variable" and not self.path:
            raise ConfigError("symbol.path", "required for kind 'variable'")
        if self.kind == "constant" and not self.path:
            name = self.preset.partition(":")[0]
            if name not in ("ones", "zeros", "random"):
                raise ConfigError("symbol.preset", f"unknown preset {self.preset!r}")


@dataclass
class CertifySpec:
    checks: list = field(default_factory=lambda: list(CertOptions().checks))
    triple_limit: int = CertOptions.triple_limit
    sampled_triples: int = CertOptions.sampled_triples
    dense_limit: int = CertOptions.dense_limit
    ultrametric_limit: int = CertOptions.ultrametric_limit
    gram_limit: int = CertOptions.gram_limit
    trials: int = CertOptions.trials
    probe_trials: int = CertOptions.probe_trials
    p: float = CertOptions.p
    power_iterations: int = CertOptions.power_iterations
    seed: int = 0
    depths: list = field(default_factory=lambda: [3, 4, 5, 6, 7, 8])
    stability_tol: float = 0.10

    def check(self) -> None:
        known = set(CertOptions().checks)
        for c in self.checks:
            if c not in known:
                raise ConfigError("certify.checks", f"unknown check {c!r}")
        if not self.p > 1:
            raise ConfigError("certify.p", "must exceed 1")
        if any(not isinstance(d, int) or d < 1 for d in self.depths):
            raise ConfigError("certify.depths", "must be positive integers")

    def options(self, threads: int = 1) -> CertOptions:
        return CertOptions(triple_limit=self.triple_limit,
                           sampled_triples=self.sampled_triples,
                           dense_limit=self.dense_limit,
                           ultrametric_limit=self.ultrametric_limit,
                           gram_limit=self.gram_limit, trials=self.trials,
                           probe_trials=self.probe_trials, p=self.p,
                           power_iterations=self.power_iterations, seed=self.seed,
                           threads=threads, checks=tuple(self.checks))


@dataclass
class ApplySpec:
    input: str | None = None
    operator: str = "auto"

    def check(self) -> None:
        if self.operator not in APPLY_OPERATORS:
            raise ConfigError("apply.operator",
                              f"expected one of {APPLY_OPERATORS}, got {self.operator!r}")


@dataclass
class ExperimentConfig:
    tree: TreeSpec = field(default_factory=TreeSpec)
    haar: HaarSpec = field(default_factory=HaarSpec)
    symbol: SymbolSpec = field(default_factory=SymbolSpec)
    certify: CertifySpec = field(default_factory=CertifySpec)
    apply: ApplySpec = field(default_factory=ApplySpec)
    out: str | None = None

    def check(self) -> None:
        for part in (self.tree, self.haar, self.symbol, self.certify, self.apply):
            part.check()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config", "top level must be a JSON object")
        parts = {}
        sections = {"tree": TreeSpec, "haar": HaarSpec, "symbol": SymbolSpec,
                    "certify": CertifySpec, "apply": ApplySpec}
        for key in doc:
            if key not in sections and key != "out":
                raise ConfigError(key, "unknown section")
        for key, typ in sections.items():
            parts[key] = _section(typ, doc.get(key, {}), key)
        cfg = cls(**parts, out=doc.get("out"))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(doc)


def _section(typ, doc, name):
    if not isinstance(doc, dict):
        raise ConfigError(name, "must be a JSON object")
    names = {f.name for f in dataclasses.fields(typ)}
    for key in doc:
        if key not in names:
            raise ConfigError(f"{name}.{key}", "unknown field")
    return typ(**doc)
