"""Scenario configuration: a small TOML key tree, validated field by field."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import tomli

from .dynamics import PdeForm

SCENARIO_KINDS = ("solve", "verify-deterministic", "verify-stochastic", "flow-demo")
SOURCES = ("exact", "solver", "file", "frozen")
FAMILIES = ("constant", "taylor_green", "shear")
INITIALS = ("taylor_green", "zero", "constant")
EXPECTS = ("critical", "non-critical", "pass", "none")

_ALLOWED = {
    "": {"name", "description", "anchor", "scenario", "expect", "grid", "time", "pde", "trajectory",
         "battery", "stochastic", "output", "tolerances", "flow"},
    "grid": {"dim", "n"},
    "time": {"T", "K"},
    "pde": {"q", "form"},
    "trajectory": {"source", "family", "params", "initial", "dt", "path"},
    "battery": {"profiles", "delta"},
    "stochastic": {"enabled", "samples", "dt", "master_seed", "particles"},
    "output": {"dir", "dump_trajectory"},
    "tolerances": {"theta_crit_rel", "theta_res_rel"},
    "flow": {"eps", "profile"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    scenario: str
    description: str = ""
    anchor: str = ""
    expect: str = "none"
    dim: int = 2
    n: int = 64
    T: float = 1.0
    K: int = 200
    q: float = 2.0
    form: PdeForm = PdeForm.PROOF
    source: str = "exact"
    family: str = "taylor_green"
    params: dict = field(default_factory=dict)
    initial: str = "taylor_green"
    solver_dt: float = 1e-3
    path: str = ""
    profiles: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    delta: float = 1e-3
    stochastic: bool = False
    samples: int = 64
    sde_dt: float = 1e-3
    master_seed: int = 0
    particles: int = 16
    output_dir: str = ""
    dump_trajectory: bool = False
    theta_crit_rel: float = 1e-4
    theta_res_rel: float = 1e-5
    flow_eps: float = 0.05
    flow_profile: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> ScenarioConfig:
        for section, keys in _ALLOWED.items():
            block = d if not section else d.get(section, {})
            if not isinstance(block, dict):
                raise ConfigError(f"field '{section}': expected a table")
            for key in block:
                if key not in keys:
                    where = f"{section}.{key}" if section else key
                    raise ConfigError(f"field '{where}': unknown key")

        def get(section, key, default, typ):
            block = d.get(section, {}) if section else d
            val = block.get(key, default)
            where = f"{section}.{key}" if section else key
            try:
                if typ is bool and not isinstance(val, bool):
                    raise TypeError
                return typ(val)
            except (TypeError, ValueError):
                raise ConfigError(f"field '{where}': expected {typ.__name__}, got {val!r}") from None

        if "name" not in d or "scenario" not in d:
            raise ConfigError("fields 'name' and 'scenario' are required")
        cfg = cls(
            name=get("", "name", "", str),
            scenario=get("", "scenario", "", str),
            description=get("", "description", "", str),
            anchor=get("", "anchor", "", str),
            expect=get("", "expect", "none", str),
            dim=get("grid", "dim", 2, int),
            n=get("grid", "n", 64, int),
            T=get("time", "T", 1.0, float),
            K=get("time", "K", 200, int),
            q=get("pde", "q", 2.0, float),
            source=get("trajectory", "source", "exact", str),
            family=get("trajectory", "family", "taylor_green", str),
            params=dict(d.get("trajectory", {}).get("params", {})),
            initial=get("trajectory", "initial", "taylor_green", str),
            solver_dt=get("trajectory", "dt", 1e-3, float),
            path=get("trajectory", "path", "", str),
            profiles=list(d.get("battery", {}).get("profiles", [0, 1, 2, 3, 4])),
            delta=get("battery", "delta", 1e-3, float),
            stochastic=get("stochastic", "enabled", False, bool),
            samples=get("stochastic", "samples", 64, int),
            sde_dt=get("stochastic", "dt", 1e-3, float),
            master_seed=get("stochastic", "master_seed", 0, int),
            particles=get("stochastic", "particles", 16, int),
            output_dir=get("output", "dir", "", str),
            dump_trajectory=get("output", "dump_trajectory", False, bool),
            theta_crit_rel=get("tolerances", "theta_crit_rel", 1e-4, float),
            theta_res_rel=get("tolerances", "theta_res_rel", 1e-5, float),
            flow_eps=get("flow", "eps", 0.05, float),
            flow_profile=get("flow", "profile", 0, int),
            base_dir=base_dir or Path.cwd(),
        )
        try:
            cfg.form = PdeForm(d.get("pde", {}).get("form", "proof_form"))
        except ValueError:
            raise ConfigError(f"field 'pde.form': must be one of {[f.value for f in PdeForm]}") from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        checks = [
            (self.scenario in SCENARIO_KINDS, "scenario", f"must be one of {SCENARIO_KINDS}"),
            (self.expect in EXPECTS, "expect", f"must be one of {EXPECTS}"),
            (self.source in SOURCES, "trajectory.source", f"must be one of {SOURCES}"),
            (self.source != "exact" or self.family in FAMILIES, "trajectory.family", f"must be one of {FAMILIES}"),
            (self.source not in ("solver", "frozen") or self.initial in INITIALS, "trajectory.initial",
             f"must be one of {INITIALS}"),
            (self.dim in (2, 3), "grid.dim", "must be 2 or 3"),
            (self.n >= 8 and self.n % 2 == 0, "grid.n", "must be even and >= 8"),
            (self.T > 0, "time.T", "must be positive"),
            (self.K >= 8 and self.K % 2 == 0, "time.K", "must be even and >= 8"),
            (self.q >= 2 or self.scenario in ("solve", "flow-demo"), "pde.q", "must be >= 2 for verification"),
            (len(self.profiles) >= 1, "battery.profiles", "battery must not be empty"),
            (all(isinstance(p, int) and 0 <= p < 5 for p in self.profiles), "battery.profiles", "indices must lie in 0..4"),
            (1e-4 <= self.delta <= 1e-2, "battery.delta", "must lie in [1e-4, 1e-2]"),
            (self.samples >= 2, "stochastic.samples", "must be >= 2"),
            (self.particles >= 4, "stochastic.particles", "must be >= 4"),
            (abs(self.flow_eps) <= 1, "flow.eps", "must satisfy |eps| <= 1"),
        ]
        for ok, where, msg in checks:
            if not ok:
                raise ConfigError(f"field '{where}': {msg}")
        if self.scenario == "verify-stochastic" and not self.stochastic:
            raise ConfigError("field 'stochastic.enabled': must be true for verify-stochastic")
        if self.source == "file":
            p = self.resolve(self.path)
            if not (p / "manifest.json").exists():
                raise ConfigError(f"field 'trajectory.path': no trajectory manifest in {p}")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


def parse_config_text(text: str, base_dir: Path | None = None) -> ScenarioConfig:
    try:
        d = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from None
    return ScenarioConfig.from_dict(d, base_dir)


def bundled_names() -> list[str]:
    root = resources.files("pvlab") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_text(name: str) -> str:
    root = resources.files("pvlab") / "scenarios"
    f = root / f"{name}.toml"
    if not f.is_file():
        raise KeyError(name)
    return f.read_text()


def load_config(ref: str) -> ScenarioConfig:
    """Load a config from a file path or a bundled scenario name."""
    p = Path(ref)
    if p.is_file():
        return parse_config_text(p.read_text(), p.parent.resolve())
    try:
        text = bundled_text(ref)
    except KeyError:
        raise ConfigError(f"no config file or bundled scenario named {ref!r}") from None
    return parse_config_text(text)
