"""Plain-text experiment configuration (INI sections, ``key = value``).

User-facing units are micrometers, milliseconds, mm/s and 1/s; everything is
converted to SI here. Example::

    [environment]
    d_um = 4
    k_per_s = 62.5

    [simulation]
    mode = poisson
    realizations = 1000

    [protocols]
    sat_t_ms = 2.5
    rtt_tau = 2
    envd_window = 7
    ml = yes

    [sweep]
    distance_um = 2:10:1
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .channel import EnvironmentParams
from .estimators import MlSearchSpec
from .harness import (
    ConfigError,
    EnvdConfig,
    ExperimentConfig,
    MlConfig,
    ProtocolConfig,
    RttConfig,
    SatConfig,
    Sweep,
    SweepKind,
)
from .particle_sim import SimConfig, SimMode

UM = 1e-6
MS = 1e-3
MM_S = 1e-3

# section -> key -> default (user units); None means "absent unless given"
SCHEMA: dict[str, dict[str, object]] = {
    "environment": {
        "d_um": 4.0,
        "v_par_mm_s": 0.0,
        "v_perp_mm_s": 0.0,
        "diff_coeff_m2_s": 1e-9,
        "k_per_s": 0.0,
        "n_emitted": 100_000,
        "r_rx_um": 0.5,
    },
    "simulation": {
        "dt_ms": 0.1,
        "n_steps": 200,
        "seed": 0,
        "mode": "poisson",
        "realizations": 1000,
    },
    "protocols": {
        "sat_t_ms": None,
        "rtt_tau": None,
        "envd_window": None,
        "ml": False,
        "ml_d_min_um": 0.01,
        "ml_d_max_um": 20.0,
        "ml_grid": 2000,
        "ml_refine": True,
    },
    "sweep": {
        "distance_um": None,
        "flow_mm_s": None,
        "time_ms": None,
    },
}


@dataclass
class RunConfig:
    env: EnvironmentParams
    sim: SimConfig
    realizations: int
    protocols: tuple[ProtocolConfig, ...]
    sweep_kind: SweepKind | None
    sweep_values: list[float]  # user units (um or mm/s)
    time_ms: list[float] | None
    resolved: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.resolved)

    def experiment(self) -> ExperimentConfig:
        if self.sweep_kind is None:
            raise ConfigError("[sweep] needs distance_um or flow_mm_s for an experiment")
        if not self.protocols:
            raise ConfigError("[protocols] configures no protocol")
        scale = UM if self.sweep_kind is SweepKind.DISTANCE else MM_S
        return ExperimentConfig(
            base_env=self.env,
            sweep=Sweep(self.sweep_kind, tuple(v * scale for v in self.sweep_values)),
            n_realizations=self.realizations,
            sim=self.sim,
            protocols=self.protocols,
        )


def config_digest(resolved: dict) -> str:
    """SHA-256 of the resolved configuration, independent of key order."""
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None:
            name = re.split(r"[=:]", stripped, maxsplit=1)[0].strip().lower()
            if name == key:
                return no
    return None


def parse_list(raw: str) -> list[float]:
    """Comma/whitespace separated numbers, or an inclusive ``start:stop:step`` range."""
    raw = raw.strip()
    if not raw:
        return []
    if ":" in raw:
        parts = [float(p) for p in raw.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValueError(f"bad range {raw!r}; expected start:stop:step with step > 0")
        start, stop, step = parts
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    return [float(p) for p in re.split(r"[,\s]+", raw) if p]


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _int(raw: str) -> int:
    f = float(raw)
    if f != int(f):
        raise ValueError(f"expected an integer, got {raw!r}")
    return int(f)


_PARSERS = {
    "n_emitted": _int,
    "n_steps": _int,
    "seed": _int,
    "realizations": _int,
    "ml_grid": _int,
    "mode": lambda s: SimMode(s.strip().lower()).value,
    "ml": _bool,
    "ml_refine": _bool,
    "sat_t_ms": parse_list,
    "rtt_tau": parse_list,
    "envd_window": lambda s: [_int(v) for v in re.split(r"[,\s]+", s.strip()) if v],
    "distance_um": parse_list,
    "flow_mm_s": parse_list,
    "time_ms": parse_list,
}


def read_config(text: str, source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    """Parse configuration text; every error is a :class:`ConfigError` naming the line."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        msg = exc.message if hasattr(exc, "message") else str(exc)
        loc = f"{source}:{lineno}" if lineno else source
        raise ConfigError(f"{loc}: {msg.splitlines()[0]}") from exc

    def fail(section, key, msg):
        line = _line_of(text, section, key)
        loc = f"{source}:{line}" if line else source
        where = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{loc}: {where}: {msg}")

    resolved: dict[str, dict] = {}
    for section in parser.sections():
        if section.lower() not in SCHEMA:
            fail(section.lower(), None, f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        values = dict(keys)
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in keys:
                    fail(section, key, "unknown key")
                try:
                    values[key] = _PARSERS.get(key, float)(raw)
                except ValueError as exc:
                    fail(section, key, str(exc))
        resolved[section] = values

    for (section, key), value in (overrides or {}).items():
        if value is not None:
            resolved[section][key] = value

    env_s, sim_s, prot_s, sweep_s = (resolved[s] for s in ("environment", "simulation", "protocols", "sweep"))
    try:
        env = EnvironmentParams(
            d=env_s["d_um"] * UM,
            v_par=env_s["v_par_mm_s"] * MM_S,
            v_perp=env_s["v_perp_mm_s"] * MM_S,
            diff_coeff=env_s["diff_coeff_m2_s"],
            k_degrade=env_s["k_per_s"],
            n_emitted=int(env_s["n_emitted"]),
            r_rx=env_s["r_rx_um"] * UM,
        )
    except ValueError as exc:
        fail("environment", None, str(exc))
    try:
        sim = SimConfig(dt=sim_s["dt_ms"] * MS, n_steps=int(sim_s["n_steps"]),
                        seed=int(sim_s["seed"]), mode=sim_s["mode"])
    except ValueError as exc:
        fail("simulation", None, str(exc))
    if sim_s["realizations"] < 1:
        fail("simulation", "realizations", "must be >= 1")

    protocols: list[ProtocolConfig] = []
    try:
        search = MlSearchSpec(prot_s["ml_d_min_um"] * UM, prot_s["ml_d_max_um"] * UM,
                              int(prot_s["ml_grid"]), bool(prot_s["ml_refine"]))
    except ValueError as exc:
        fail("protocols", "ml_grid", str(exc))
    for t in prot_s["sat_t_ms"] or []:
        protocols.append(SatConfig(t * MS))
    for tau in prot_s["rtt_tau"] or []:
        protocols.append(RttConfig(tau))
    for w in prot_s["envd_window"] or []:
        protocols.append(EnvdConfig(w, search))
    if prot_s["ml"]:
        protocols.append(MlConfig(search))

    if sweep_s["distance_um"] is not None and sweep_s["flow_mm_s"] is not None:
        fail("sweep", "flow_mm_s", "give either distance_um or flow_mm_s, not both")
    kind, values = None, []
    if sweep_s["distance_um"] is not None:
        kind, values = SweepKind.DISTANCE, sweep_s["distance_um"]
        if not values:
            fail("sweep", "distance_um", "empty list")
    elif sweep_s["flow_mm_s"] is not None:
        kind, values = SweepKind.FLOW_PARALLEL, sweep_s["flow_mm_s"]
        if not values:
            fail("sweep", "flow_mm_s", "empty list")
    if sweep_s["time_ms"] is not None and not sweep_s["time_ms"]:
        fail("sweep", "time_ms", "empty time grid")

    run = RunConfig(env, sim, int(sim_s["realizations"]), tuple(protocols), kind, values,
                    sweep_s["time_ms"], resolved)
    if kind is not None and protocols:
        try:
            run.experiment()
        except ConfigError as exc:
            fail("protocols" if "window" in str(exc) or "time" in str(exc) else "sweep", None, str(exc))
    return run


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return read_config(text, str(path), overrides)
