"""Run configuration: INI files with sections, documented defaults and CLI overrides."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from .evaluation import MODELS
from .generator import DEFAULT_EPS
from .hawkes_pair import KernelParams
from .inference.graph import Stage1Config
from .inference.kernel import Stage2Config
from .io import EdgeListSpec, config_hash
from .random_measures import CcrmHyper, GgpHyper

COMMANDS = ("simulate", "moments", "fit", "predict", "evaluate", "degrees")


@dataclass
class RunSection:
    seed: int = 0                     # 64-bit master seed
    n_chains: int = 2
    p: int = 1                        # number of communities
    split: float = 0.85               # train fraction of interactions
    eps: float = DEFAULT_EPS          # truncation level for infinite-activity sampling
    out: str = "hawkes-ccrm-run"      # output directory


@dataclass
class DataSection:
    path: str = ""                    # edge list; empty means simulate from [model]
    format: str = "src,dst,time"
    delimiter: str = ""               # empty means whitespace
    scale: float = 1.0
    zero_base: bool = True
    jitter: float = 0.0


@dataclass
class ModelSection:
    """Generative parameters for simulate / moments and synthetic inputs."""

    alpha: float = 50.0
    sigma: float = 0.3
    tau: float = 1.0
    a: Tuple[float, ...] = (0.08,)    # one value is broadcast to every community
    b: Tuple[float, ...] = (4.0,)
    eta: float = 0.85
    delta: float = 3.0
    T: float = 300.0


@dataclass
class Stage1Section:
    iterations: int = 100_000
    burn_in: int = -1                 # -1 means half of iterations
    thin: int = 10
    leapfrog: int = 10
    step_size: float = 0.01
    hyper_step: float = 0.02


@dataclass
class Stage2Section:
    iterations: int = 10_000
    burn_in: int = -1
    thin: int = 1
    proposal_var: Tuple[float, ...] = (1.5, 2.5)
    proposal_is_sd: bool = False
    joint: bool = False
    pair_set: str = "connected"


@dataclass
class EvaluateSection:
    models: Tuple[str, ...] = MODELS
    method: str = "analytic"          # analytic or simulate
    n_sims: int = 100
    global_iterations: int = 4000


@dataclass
class PredictSection:
    model: str = "hawkes_ccrm"
    fit_dir: str = ""                 # reuse a `fit` run and forecast past its horizon
    horizon: float = 0.0              # 0 means the held-out window


@dataclass
class MomentsSection:
    method: str = "quadrature"
    n_samples: int = 2000
    replicates: int = 0               # generator replicates for an empirical check


@dataclass
class DegreesSection:
    replicates: int = 100


SECTIONS = {
    "run": RunSection, "data": DataSection, "model": ModelSection, "stage1": Stage1Section,
    "stage2": Stage2Section, "evaluate": EvaluateSection, "predict": PredictSection,
    "moments": MomentsSection, "degrees": DegreesSection,
}


def _coerce(raw: str, default: Any, where: str):
    try:
        if isinstance(default, bool):
            return configparser.RawConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(float(x) for x in items)
    except (ValueError, KeyError):
        raise ValueError(f"config {where}: cannot parse {raw!r}") from None
    return raw.strip()


@dataclass
class RunConfig:
    command: str = "fit"
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    predict: PredictSection = field(default_factory=PredictSection)
    moments: MomentsSection = field(default_factory=MomentsSection)
    degrees: DegreesSection = field(default_factory=DegreesSection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.run.p < 1:
            raise ValueError("p must be >= 1")
        if self.stage1.iterations < 1 or self.stage2.iterations < 1:
            raise ValueError("iteration counts must be positive")
        if not 0 < self.run.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if not 0 <= self.run.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit nonnegative integer")
        unknown = set(self.evaluate.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")

    @classmethod
    def from_file(cls, path: Optional[str], command: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        if path:
            with open(path) as fh:
                parser.read_file(fh)
        sections = {}
        for name, klass in SECTIONS.items():
            obj = klass()
            if parser.has_section(name):
                known = {f.name.lower(): f.name for f in fields(klass)}
                for key, raw in parser.items(name):
                    if key.lower() not in known:
                        raise ValueError(f"config [{name}]: unknown key {key!r}")
                    attr = known[key.lower()]
                    setattr(obj, attr, _coerce(raw, getattr(obj, attr), f"[{name}] {key}"))
            sections[name] = obj
        extra = set(parser.sections()) - set(SECTIONS)
        if extra:
            raise ValueError(f"unknown config sections {sorted(extra)}")
        return cls(command=command, **sections)

    def override(self, **kw) -> "RunConfig":
        """Apply CLI flags; ``None`` values are ignored."""
        mapping = {"seed": ("run", "seed"), "out": ("run", "out"), "split": ("run", "split"), "p": ("run", "p"),
                   "format": ("data", "format"), "data": ("data", "path"),
                   "iters_stage1": ("stage1", "iterations"), "iters_stage2": ("stage2", "iterations")}
        for key, val in kw.items():
            if val is None:
                continue
            sec, attr = mapping[key]
            setattr(getattr(self, sec), attr, val)
        self.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"command": self.command, **{name: asdict(getattr(self, name)) for name in SECTIONS}}

    @property
    def hash(self) -> str:
        """Digest of everything that affects numbers; the output directory is excluded."""
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k != "out"}
        d.pop("command")
        return config_hash(d)

    # Typed views used by the pipelines.

    def edge_spec(self) -> EdgeListSpec:
        return EdgeListSpec.from_format(self.data.format, delimiter=self.data.delimiter or None,
                                        scale=self.data.scale, zero_base=self.data.zero_base,
                                        jitter=self.data.jitter)

    def hyper(self) -> Tuple[GgpHyper, CcrmHyper, KernelParams]:
        m, p = self.model, self.run.p

        def per_community(v, name):
            if len(v) == 1:
                return tuple(v) * p
            if len(v) != p:
                raise ValueError(f"[model] {name} needs 1 or p={p} values")
            return tuple(v)

        return (GgpHyper(m.alpha, m.sigma, m.tau),
                CcrmHyper(per_community(m.a, "a"), per_community(m.b, "b")),
                KernelParams(m.eta, m.delta))

    def stage1_config(self) -> Stage1Config:
        s = self.stage1
        return Stage1Config(p=self.run.p, iterations=s.iterations, burn_in=None if s.burn_in < 0 else s.burn_in,
                            thin=s.thin, n_chains=self.run.n_chains, leapfrog=s.leapfrog, step_size=s.step_size,
                            hyper_step=s.hyper_step, eps=self.run.eps)

    def stage2_config(self) -> Stage2Config:
        s = self.stage2
        return Stage2Config(proposal_var=tuple(s.proposal_var), proposal_is_sd=s.proposal_is_sd,
                            iterations=s.iterations, burn_in=None if s.burn_in < 0 else s.burn_in,
                            thin=s.thin, n_chains=self.run.n_chains, pair_set=s.pair_set, joint=s.joint)


def default_config_text() -> str:
    """Every section and key with its default, as INI text."""
    lines = []
    for name, klass in SECTIONS.items():
        lines.append(f"[{name}]")
        for f in fields(klass):
            v = getattr(klass(), f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
