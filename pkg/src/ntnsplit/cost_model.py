"""Traffic, compute, power and latency model of a LEO/HAPS-hosted O-RAN DU.

The CU always sits at the ground gateway; the DU sits on whichever NTN
platform is active.  Every function here is pure and works on immutable
parameter records, so a :class:`Scenario` can be shared between workers.

Units: traffic in Mbps, compute loads in GOPS (capacities in TOPS), power in
W, latency in ms.  Loads are converted to TOPS only where they multiply an
energy-per-operation figure (J/TO * TO/s = W).
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

PLATFORMS = ("SAT", "HAP")
FUNCTIONS = ("PHY", "RLC", "MAC", "PDCP")
SPEED_OF_LIGHT_MPS = 3.0e8

# Fronthaul-like rate of the fully centralised split, independent of load.
OPTION3_TRAFFIC_MBPS = 2500.0


@dataclass(frozen=True)
class SplitOption:
    id: int
    du_functions: frozenset
    cu_functions: frozenset
    latency_limit_ms: float
    traffic_law: str


SPLIT_OPTIONS = (
    SplitOption(0, frozenset(FUNCTIONS), frozenset(), 30.0, "lambda"),
    SplitOption(1, frozenset({"PHY", "RLC", "MAC"}), frozenset({"PDCP"}), 30.0, "lambda"),
    SplitOption(2, frozenset({"PHY"}), frozenset({"RLC", "MAC", "PDCP"}), 2.0, "1.02*lambda+1.5"),
    SplitOption(3, frozenset(), frozenset(FUNCTIONS), 0.25, "2500"),
)

OptionLike = Union[int, SplitOption]


def as_option(option: OptionLike) -> SplitOption:
    if isinstance(option, SplitOption):
        return option
    if isinstance(option, bool) or not 0 <= int(option) < len(SPLIT_OPTIONS):
        raise ValueError(f"unknown split option {option!r}")
    return SPLIT_OPTIONS[int(option)]


@dataclass(frozen=True)
class PlatformParams:
    id: str
    idle_power_w: float
    epo_j_per_to: float
    comp_max_tops: float
    distance_to_gateway_m: float
    link_capacity_mbps: float
    link_power_w: float


@dataclass(frozen=True)
class GatewayParams:
    idle_power_w: float = 36.0
    epo_j_per_to: float = 0.0742
    comp_max_tops: float = 485.0


@dataclass(frozen=True)
class FunctionLoads:
    phy_gops: float = 1280.0
    rlc_gops: float = 50.0
    mac_gops: float = 50.0
    pdcp_gops: float = 100.0

    def of(self, function: str) -> float:
        return getattr(self, f"{function.lower()}_gops")

    @property
    def total_gops(self) -> float:
        return self.phy_gops + self.rlc_gops + self.mac_gops + self.pdcp_gops


DEFAULT_PLATFORMS = {
    "SAT": PlatformParams("SAT", 10.0, 0.625, 32.0, 600e3, 100.0, 35.0),
    "HAP": PlatformParams("HAP", 7.5, 5.64, 1.33, 20e3, 10000.0, 4.0),
}


@dataclass(frozen=True)
class Scenario:
    """Everything the cost model needs: both platforms, the gateway, and loads."""

    platforms: Mapping[str, PlatformParams] = field(
        default_factory=lambda: dict(DEFAULT_PLATFORMS)
    )
    gateway: GatewayParams = field(default_factory=GatewayParams)
    loads: FunctionLoads = field(default_factory=FunctionLoads)
    speed_of_light_mps: float = SPEED_OF_LIGHT_MPS

    def platform(self, platform_id: str) -> PlatformParams:
        try:
            return self.platforms[platform_id]
        except KeyError:
            raise ValueError(f"unknown platform {platform_id!r}") from None

    def to_dict(self) -> dict:
        return {
            "speed_of_light_mps": self.speed_of_light_mps,
            "platform": {k: asdict(p) for k, p in sorted(self.platforms.items())},
            "gateway": asdict(self.gateway),
            "function_loads": asdict(self.loads),
        }


@dataclass(frozen=True)
class Assignment:
    """The single active (platform, split option) pair."""

    platform: str
    option: int

    def __post_init__(self):
        if self.platform not in PLATFORMS:
            raise ValueError(f"unknown platform {self.platform!r}")
        as_option(self.option)

    @property
    def platform_index(self) -> int:
        return PLATFORMS.index(self.platform)

    def __str__(self) -> str:
        return f"({self.platform},{self.option})"


@dataclass(frozen=True)
class FeasibilityReport:
    latency_ok: bool
    traffic_ok: bool
    node_comp_ok: bool
    gateway_comp_ok: bool
    latency_ms: float
    latency_limit_ms: float
    tra_mbps: float
    link_capacity_mbps: float
    node_comp_tops: float
    node_comp_max_tops: float
    gateway_comp_tops: float
    gateway_comp_max_tops: float

    @property
    def feasible(self) -> bool:
        return self.latency_ok and self.traffic_ok and self.node_comp_ok and self.gateway_comp_ok

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        """Constraint outcomes in the order latency, traffic, node, gateway."""
        return (self.latency_ok, self.traffic_ok, self.node_comp_ok, self.gateway_comp_ok)


# --------------------------------------------------------------------------
# Scenario files
# --------------------------------------------------------------------------

def _build(cls, base, overrides: Mapping, section: str):
    known = {f.name for f in fields(cls)} - {"id"}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    values = {}
    for key, value in overrides.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}")
        values[key] = float(value)
    return replace(base, **values)


def validate_scenario(scenario: Scenario) -> Scenario:
    if set(scenario.platforms) != set(PLATFORMS):
        raise ConfigError(f"scenario must define exactly platforms {PLATFORMS}")
    for pid, p in scenario.platforms.items():
        if p.id != pid:
            raise ConfigError(f"platform keyed {pid!r} carries id {p.id!r}")
        for f in fields(p):
            if f.name != "id" and not (math.isfinite(getattr(p, f.name)) and getattr(p, f.name) > 0):
                raise ConfigError(f"[platform.{pid}] {f.name} must be strictly positive")
    for f in fields(scenario.gateway):
        v = getattr(scenario.gateway, f.name)
        if not (math.isfinite(v) and v > 0):
            raise ConfigError(f"[gateway] {f.name} must be strictly positive")
    for f in fields(scenario.loads):
        v = getattr(scenario.loads, f.name)
        if not (math.isfinite(v) and v >= 0):
            raise ConfigError(f"[function_loads] {f.name} must be nonnegative")
    if not scenario.speed_of_light_mps > 0:
        raise ConfigError("speed_of_light_mps must be strictly positive")
    return scenario


def scenario_from_dict(data: Mapping) -> Scenario:
    """Build a scenario from parsed file contents, defaulting every missing key.

    Sections other than ``platform``, ``gateway`` and ``function_loads`` are
    ignored so run-level sections can share the same file.
    """
    platform_sections = data.get("platform", {})
    if not isinstance(platform_sections, Mapping):
        raise ConfigError("[platform] must be a table of per-platform sections")
    unknown = set(platform_sections) - set(PLATFORMS)
    if unknown:
        raise ConfigError(f"unknown platforms {sorted(unknown)}")
    platforms = {
        pid: _build(PlatformParams, DEFAULT_PLATFORMS[pid], platform_sections.get(pid, {}), f"platform.{pid}")
        for pid in PLATFORMS
    }
    scenario = Scenario(
        platforms=platforms,
        gateway=_build(GatewayParams, GatewayParams(), data.get("gateway", {}), "gateway"),
        loads=_build(FunctionLoads, FunctionLoads(), data.get("function_loads", {}), "function_loads"),
        speed_of_light_mps=float(data.get("speed_of_light_mps", SPEED_OF_LIGHT_MPS)),
    )
    return validate_scenario(scenario)


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_scenario(path) -> Scenario:
    return scenario_from_dict(read_config_file(path))


def default_scenario() -> Scenario:
    return Scenario()


# --------------------------------------------------------------------------
# Physics
# --------------------------------------------------------------------------

def traffic_demand(option: OptionLike, lambda_ru: float) -> float:
    """Feeder-link (midhaul) traffic in Mbps for an RU load of ``lambda_ru`` Mbps."""
    o = as_option(option).id
    if o in (0, 1):
        return float(lambda_ru)
    if o == 2:
        return 1.02 * lambda_ru + 1.5
    return OPTION3_TRAFFIC_MBPS


def node_comp_load(option: OptionLike, loads: FunctionLoads) -> float:
    """GOPS executed onboard the NTN node (the DU side)."""
    return sum(loads.of(f) for f in FUNCTIONS if f in as_option(option).du_functions)


def gateway_comp_load(option: OptionLike, loads: FunctionLoads) -> float:
    """GOPS executed at the gateway (the CU side)."""
    return sum(loads.of(f) for f in FUNCTIONS if f in as_option(option).cu_functions)


def processing_power_node(p: PlatformParams, option: OptionLike, loads: FunctionLoads) -> float:
    return p.idle_power_w + p.epo_j_per_to * node_comp_load(option, loads) / 1000.0


def processing_power_gateway(g: GatewayParams, option: OptionLike, loads: FunctionLoads) -> float:
    # Idle power is charged even when the CU hosts nothing (option 0).
    return g.idle_power_w + g.epo_j_per_to * gateway_comp_load(option, loads) / 1000.0


def transmission_power(p: PlatformParams, option: OptionLike, lambda_ru: float) -> float:
    """Feeder-link power, linear in traffic up to ``link_power_w`` at capacity.

    Not capped: traffic above capacity yields more than ``link_power_w``;
    :func:`check_feasibility` is where that gets flagged.
    """
    return p.link_power_w / p.link_capacity_mbps * traffic_demand(option, lambda_ru)


def propagation_latency(p: PlatformParams, speed_of_light_mps: float = SPEED_OF_LIGHT_MPS) -> float:
    # Multiply before dividing so 600 km / 3e8 m/s lands exactly on 2.0 ms.
    return p.distance_to_gateway_m * 1000.0 / speed_of_light_mps


def total_power(a: Assignment, lambda_ru: float, scenario: Scenario) -> float:
    p = scenario.platform(a.platform)
    return (
        processing_power_node(p, a.option, scenario.loads)
        + processing_power_gateway(scenario.gateway, a.option, scenario.loads)
        + transmission_power(p, a.option, lambda_ru)
    )


def check_feasibility(a: Assignment, lambda_ru: float, scenario: Scenario) -> FeasibilityReport:
    p = scenario.platform(a.platform)
    opt = as_option(a.option)
    latency = propagation_latency(p, scenario.speed_of_light_mps)
    tra = traffic_demand(opt, lambda_ru)
    node_tops = node_comp_load(opt, scenario.loads) / 1000.0
    gat_tops = gateway_comp_load(opt, scenario.loads) / 1000.0
    return FeasibilityReport(
        latency_ok=latency <= opt.latency_limit_ms,
        traffic_ok=tra <= p.link_capacity_mbps,
        node_comp_ok=node_tops <= p.comp_max_tops,
        gateway_comp_ok=gat_tops <= scenario.gateway.comp_max_tops,
        latency_ms=latency,
        latency_limit_ms=opt.latency_limit_ms,
        tra_mbps=tra,
        link_capacity_mbps=p.link_capacity_mbps,
        node_comp_tops=node_tops,
        node_comp_max_tops=p.comp_max_tops,
        gateway_comp_tops=gat_tops,
        gateway_comp_max_tops=scenario.gateway.comp_max_tops,
    )
