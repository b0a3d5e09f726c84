"""Experiment configuration and run manifests (JSON on disk)."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .lagrangian import MagneticLagrangian, TrigOneForm


class ConfigError(ValueError):
    pass


@dataclass
class GridSpec:
    n: int = 32
    h: float = 0.05
    v_cap: float | None = None
    max_steps: int = 2

    def kwargs(self) -> dict:
        return {"n": self.n, "h": self.h, "v_cap": self.v_cap, "max_steps": self.max_steps}


@dataclass
class Tolerances:
    alpha: float = 1e-9
    lp: float = 1e-10
    tight: float | None = None  # None: relative default of the Lax-Oleinik module
    static: float | None = None
    speed_frac: float = 0.1
    spec: float = 1e-3


@dataclass
class PerturbSpec:
    epsilon: float = 0.1
    epsilons: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0])
    profile: str = "quadratic"
    B_radius: float = 0.25
    sigma: float = 0.04
    n_freq: int = 16
    grid_n: int = 64
    r_U_cells: float = 4.0


@dataclass
class OrbitSpec:
    x0: list = field(default_factory=lambda: [0.0, 0.5])
    v0: list = field(default_factory=lambda: [1.0, 0.0])
    period: float | None = None  # given: wrap the seed as a closed orbit; None: shoot
    h: float = 1e-3
    nodes: int = 32
    lift: list | None = None  # constant field X; defaults to v0
    B_radius: float = 0.4
    n_freq: int = 24
    epsilons: list = field(default_factory=lambda: [0.0, 0.025, 0.05, 0.1])
    weight: list = field(default_factory=list)  # extra trig terms of the weight 1 + ...
    manifolds: bool = False
    arc_length: float = 1.5
    manifold_points: int = 60


@dataclass
class ContinuitySpec:
    indices: list = field(default_factory=lambda: [2, 4, 8, 16, 32])
    freq: list = field(default_factory=lambda: [1, 0])
    component: str = "b"  # ξ_n = ξ + (1/n) sin(2π k·x) dx_component


_SECTIONS = {"grid": GridSpec, "tolerances": Tolerances, "perturbation": PerturbSpec,
             "orbit": OrbitSpec, "continuity": ContinuitySpec}


@dataclass
class ExperimentConfig:
    model: dict | str = field(default_factory=lambda: {"a": [], "b": []})
    classes: list = field(default_factory=lambda: [[0.0, 0.0]])
    grid: GridSpec = field(default_factory=GridSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    perturbation: PerturbSpec = field(default_factory=PerturbSpec)
    orbit: OrbitSpec = field(default_factory=OrbitSpec)
    continuity: ContinuitySpec = field(default_factory=ContinuitySpec)
    out: str = "magkam_out"
    seed: int = 0
    base_dir: str = field(default=".", repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in _SECTIONS:
                sec = _SECTIONS[k]
                bad = set(v) - {f.name for f in fields(sec)}
                if bad:
                    raise ConfigError(f"unknown keys in {k}: {sorted(bad)}")
                kw[k] = sec(**v)
            else:
                kw[k] = v
        cfg = cls(**kw, base_dir=base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d, str(path.parent))

    def validate(self):
        g = self.grid
        if g.n < 8:
            raise ConfigError("grid.n must be >= 8")
        if g.h <= 0 or (g.v_cap is not None and g.v_cap <= 0) or g.max_steps < 1:
            raise ConfigError("grid.h, grid.v_cap and grid.max_steps must be positive")
        for k, v in asdict(self.tolerances).items():
            if v is not None and not v > 0:
                raise ConfigError(f"tolerance {k} must be > 0")
        if not self.classes or any(len(c) != 2 for c in self.classes):
            raise ConfigError("classes must be a nonempty list of pairs")
        if isinstance(self.model, str) and not self._resolve(self.model).exists():
            raise ConfigError(f"model file not found: {self.model}")
        p = self.perturbation
        if p.profile not in ("quadratic", "sine"):
            raise ConfigError(f"unknown profile {p.profile!r}")
        if p.epsilon < 0 or any(e < 0 for e in p.epsilons):
            raise ConfigError("perturbation epsilons must be >= 0")
        self.form()  # parse check

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def form(self) -> TrigOneForm:
        src = self.model
        try:
            if isinstance(src, str):
                src = json.loads(self._resolve(src).read_text())
            return TrigOneForm.from_json(src)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad model form: {exc}") from exc

    def lagrangian(self) -> MagneticLagrangian:
        return MagneticLagrangian(self.form())

    @property
    def hash(self) -> str:
        """Digest of everything that affects results (output location excluded)."""
        d = self.to_dict()
        d.pop("out")
        d["model"] = self.form().to_json()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def out_dir(self, override: str | None = None) -> Path:
        return Path(override or os.environ.get("MAGKAM_OUT") or self._resolve(self.out))


def header(cfg: ExperimentConfig) -> str:
    return f"# magkam {__version__} config={cfg.hash}"


@dataclass
class RunManifest:
    command: str
    config_hash: str
    versions: dict
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    dry_run: bool = False

    def dumps(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def versions() -> dict:
    import numpy
    import scipy
    import numba
    return {"magkam": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def write_output(path: Path, cfg: ExperimentConfig, body: str):
    """Write ``body`` behind the header line; the body alone is deterministic."""
    path.write_text(header(cfg) + "\n" + body if body.endswith("\n") else
                    header(cfg) + "\n" + body + "\n")


def read_output(path) -> tuple[str, str]:
    """Split an emitted file into its header line and body."""
    text = Path(path).read_text()
    first, _, body = text.partition("\n")
    return first, body
