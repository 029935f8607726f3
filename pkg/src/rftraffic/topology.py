"""Deployment geometry, link identifiers, system parameters and class taxonomies.

The sensing installation consists of three transmitter posts facing three
receiver posts across a single lane.  Every transmitter/receiver pairing is a
radio link, giving nine links in total.  Links connecting directly opposed
posts (1, 5, 9) are "straight"; the remaining six cross the lane diagonally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

LINK_IDS: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9)
STRAIGHT_LINKS: tuple[int, ...] = (1, 5, 9)

#: Link numbering is row-major over (tx index, rx index) node pairs, which
#: makes links 1, 5, 9 the straight ones and 3, 7 the longest diagonals.
LINK_NODE_MAP: dict[int, tuple[int, int]] = {
    1 + 3 * tx + rx: (tx, rx) for tx in range(3) for rx in range(3)
}


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration input."""


def is_straight(link: int) -> bool:
    return link in STRAIGHT_LINKS


@dataclass(frozen=True)
class Topology:
    """Longitudinal layout of the six sensor posts and the nine links."""

    longitudinal_spacing_m: float = 5.0
    tx_positions: tuple[float, float, float] = field(default=None)  # type: ignore[assignment]
    rx_positions: tuple[float, float, float] = field(default=None)  # type: ignore[assignment]
    link_map: dict[int, tuple[int, int]] = field(default_factory=lambda: dict(LINK_NODE_MAP))
    straight_links: tuple[int, ...] = STRAIGHT_LINKS

    def __post_init__(self):
        if self.longitudinal_spacing_m <= 0:
            raise ConfigError("longitudinal spacing must be positive")
        s = self.longitudinal_spacing_m
        if self.tx_positions is None:
            object.__setattr__(self, "tx_positions", (0.0, s, 2.0 * s))
        if self.rx_positions is None:
            object.__setattr__(self, "rx_positions", (0.0, s, 2.0 * s))
        if sorted(self.link_map) != list(LINK_IDS):
            raise ConfigError("link map must cover link ids 1..9")
        pairs = set(self.link_map.values())
        if len(pairs) != 9:
            raise ConfigError("link map must be a bijection onto the 9 node pairs")

    def link_midpoint_m(self, link: int) -> float:
        """Longitudinal coordinate of the point where a link crosses the lane."""
        tx, rx = self.link_map[link]
        return 0.5 * (self.tx_positions[tx] + self.rx_positions[rx])


def link_distance(topology: Topology, i: int, j: int) -> float:
    """Longitudinal distance between the transmitter posts of two straight links.

    Defined only for straight links; the speed estimator relies on these
    distances.  Symmetric, and zero for i == j.
    """
    for link in (i, j):
        if link not in topology.straight_links:
            raise ValueError(
                f"link {link} is diagonal; distance is only defined between straight links"
            )
    tx_i = topology.link_map[i][0]
    tx_j = topology.link_map[j][0]
    return abs(topology.tx_positions[tx_i] - topology.tx_positions[tx_j])


@dataclass(frozen=True)
class SystemParams:
    """Sampling and detector thresholds of the deployed system."""

    sample_period_ms: float = 8.0
    filter_size_n: int = 10
    guard_w: int = 10
    start_offset_h: int = 5
    theta_start: float = 0.92
    theta_end: float = 0.975
    theta_guard: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.theta_start < self.theta_guard < self.theta_end < 1.0):
            raise ConfigError("thresholds must satisfy 0 < start < guard < end < 1")
        if self.filter_size_n < 1 or self.guard_w < 1 or self.start_offset_h < 0:
            raise ConfigError("filter size and guard must be >= 1, start offset >= 0")
        if self.sample_period_ms <= 0:
            raise ConfigError("sample period must be positive")


BINARY_CLASSES = ("car-like", "truck-like")
SIZE_CLASSES = ("small", "mid-size", "large")
BODY_STYLE_CLASSES = (
    "passenger car",
    "passenger car with trailer",
    "van",
    "truck",
    "truck with trailer",
    "semitruck",
    "bus",
)

_TO_BINARY = {
    "passenger car": "car-like",
    "passenger car with trailer": "car-like",
    "van": "car-like",
    "truck": "truck-like",
    "truck with trailer": "truck-like",
    "semitruck": "truck-like",
    "bus": "truck-like",
}
_TO_SIZE = {
    "passenger car": "small",
    "passenger car with trailer": "mid-size",
    "van": "mid-size",
    "truck": "large",
    "truck with trailer": "large",
    "semitruck": "large",
    "bus": "large",
}


@dataclass(frozen=True)
class Taxonomy:
    """A class scheme together with its ordered label list."""

    name: str
    classes: tuple[str, ...]

    def index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise KeyError(f"label {label!r} not in taxonomy {self.name!r}") from None


BINARY = Taxonomy("binary", BINARY_CLASSES)
SIZE_BASED = Taxonomy("size_based", SIZE_CLASSES)
BODY_STYLE = Taxonomy("body_style", BODY_STYLE_CLASSES)

TAXONOMIES: dict[str, Taxonomy] = {t.name: t for t in (BINARY, SIZE_BASED, BODY_STYLE)}


def get_taxonomy(name: str) -> Taxonomy:
    try:
        return TAXONOMIES[name]
    except KeyError:
        raise ConfigError(f"unknown taxonomy {name!r}") from None


def coarsen_label(label: str, target: Taxonomy) -> str:
    """Map a body-style class onto a coarser taxonomy (identity at body-style level)."""
    if label not in BODY_STYLE_CLASSES:
        raise KeyError(f"unknown body-style label {label!r}")
    if target.name == "body_style":
        return label
    if target.name == "binary":
        return _TO_BINARY[label]
    if target.name == "size_based":
        return _TO_SIZE[label]
    raise ConfigError(f"unknown taxonomy {target.name!r}")


def labels_for_taxonomy(labels: list[str], taxonomy: Taxonomy) -> list[str]:
    """Translate dataset labels into `taxonomy`, coarsening body-style labels."""
    out = []
    for lab in labels:
        if lab in taxonomy.classes:
            out.append(lab)
        elif lab in BODY_STYLE_CLASSES:
            out.append(coarsen_label(lab, taxonomy))
        else:
            raise KeyError(f"label {lab!r} cannot be mapped onto taxonomy {taxonomy.name!r}")
    return out


_CONFIG_KEYS = {
    "longitudinal_spacing_m": float,
    "sample_period_ms": float,
    "filter_size_n": int,
    "guard_w": int,
    "start_offset_h": int,
    "theta_start": float,
    "theta_end": float,
    "theta_guard": float,
}


def load_system_config(path: str) -> tuple[Topology, SystemParams]:
    """Read a `key = value` configuration file; unknown keys are rejected.

    Omitted keys fall back to the deployed defaults, so an empty file yields
    the default Topology/SystemParams pair.
    """
    values: dict[str, float | int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](val.strip())
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: invalid value for {key!r}: {val.strip()!r}")
    spacing = values.pop("longitudinal_spacing_m", 5.0)
    topology = Topology(longitudinal_spacing_m=float(spacing))
    params = SystemParams(**values)
    return topology, params
