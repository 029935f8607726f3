"""Attenuation-phase detection and per-vehicle speed/length/direction estimation.

Each link's raw RSSI stream is normalized to its idle level and smoothed with a
moving average.  A two-state machine then segments the filtered series into
attenuation phases: the phase starts once the value at lag ``w`` undercuts the
start threshold (backdated by ``h`` samples to include the turning point), and
ends once the value at lag ``w`` exceeds the end threshold while the mean of
the most recent ``w`` values clears the guard threshold.  The delayed, guarded
release keeps multi-dip fingerprints (vehicles towing trailers) in a single
phase.

Phases from all nine links are associated into per-vehicle observations by
temporal overlap, and the straight links (1, 5, 9) yield the signed speed --
negative for wrong-way drivers -- and the length estimate.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .simulate import TraceBundle
from .topology import LINK_IDS, STRAIGHT_LINKS, SystemParams, Topology, link_distance


@dataclass(frozen=True)
class FilteredSeries:
    """Idle-normalized, moving-average filtered samples of one link."""

    link: int
    values: np.ndarray
    t0_ms: float
    sample_period_ms: float

    def timestamp(self, index: int) -> float:
        return self.t0_ms + index * self.sample_period_ms


@dataclass(frozen=True)
class AttenuationEvent:
    """One detected attenuation phase on one link."""

    link: int
    t_start_ms: float
    t_end_ms: float
    min_level: float
    vehicle_id: int = -1

    def __post_init__(self):
        if not self.t_end_ms > self.t_start_ms:
            raise ValueError("attenuation phase must have positive duration")

    @property
    def duration_ms(self) -> float:
        return self.t_end_ms - self.t_start_ms


@dataclass
class VehicleObservation:
    """All per-link phases attributed to one vehicle plus derived estimates."""

    vehicle_id: int
    events: dict[int, AttenuationEvent]
    v_mps: float | None = None
    l_m: float | None = None
    direction: str | None = None  # "forward" | "wrong_way"
    low_confidence: bool = False


def normalize_and_filter(
    stream: np.ndarray,
    idle_level_dbm: float,
    filter_size_n: int,
    link: int = 1,
    t0_ms: float = 0.0,
    sample_period_ms: float = 8.0,
) -> FilteredSeries:
    """Divide raw samples by the idle level and apply the moving average.

    The first ``filter_size_n - 1`` outputs use a growing window over the
    samples available so far, keeping output timestamps aligned with input.
    An empty stream yields an empty series.
    """
    if filter_size_n < 1:
        raise ValueError("filter size must be >= 1")
    if idle_level_dbm == 0:
        raise ValueError("idle level must be nonzero")
    stream = np.asarray(stream, dtype=float)
    if stream.size == 0:
        return FilteredSeries(link, np.empty(0), t0_ms, sample_period_ms)
    normalized = stream / idle_level_dbm
    csum = np.cumsum(normalized)
    n = filter_size_n
    out = np.empty_like(normalized)
    head = min(n, len(normalized))
    out[:head] = csum[:head] / np.arange(1, head + 1)
    if len(normalized) > n:
        out[n:] = (csum[n:] - csum[:-n]) / n
    return FilteredSeries(link, out, t0_ms, sample_period_ms)


def detect_events(series: FilteredSeries, params: SystemParams) -> list[AttenuationEvent]:
    """Run the two-state attenuation machine over one filtered series.

    Returned phases are disjoint and time ordered.  A phase that has not been
    released by the end of the series is discarded (the decision needs ``w``
    trailing samples).
    """
    v = series.values
    n = len(v)
    w = params.guard_w
    h = params.start_offset_h
    if n < w + h:
        warnings.warn(f"series of {n} samples is shorter than guard+offset; no detection")
        return []

    start_ok = v < params.theta_start
    start_ok[n - w:] = False  # start decision needs w trailing samples
    csum = np.concatenate([[0.0], np.cumsum(v)])
    guard_mean = np.full(n, -np.inf)
    # mean of v[j+1 .. j+w] for j with a full guard window
    guard_mean[: n - w] = (csum[w + 1: n + 1] - csum[1: n - w + 1]) / w
    end_ok = (v > params.theta_end) & (guard_mean >= params.theta_guard)

    start_idx = np.flatnonzero(start_ok)
    end_idx = np.flatnonzero(end_ok)

    events: list[AttenuationEvent] = []
    pos = 0
    prev_end = -1
    while True:
        si = np.searchsorted(start_idx, pos)
        if si >= len(start_idx):
            break
        j_start = int(start_idx[si])
        ei = np.searchsorted(end_idx, j_start + 1)
        if ei >= len(end_idx):
            break
        j_end = int(end_idx[ei])
        back = max(j_start - h, prev_end + 1, 0)
        events.append(
            AttenuationEvent(
                link=series.link,
                t_start_ms=series.timestamp(back),
                t_end_ms=series.timestamp(j_end),
                min_level=float(v[back: j_end + 1].min()),
            )
        )
        prev_end = j_end
        pos = j_end + 1
    return events


def associate_vehicles(
    events: list[AttenuationEvent], guard_ms: float = 80.0
) -> list[VehicleObservation]:
    """Group phases into vehicles by overlap of guard-padded intervals.

    Phases are swept in start order; a phase joins the open group when its
    padded interval intersects the group's padded span, otherwise it opens the
    next vehicle.  Ids are dense integers from zero.  If one link contributes
    several phases to a group, the earliest is kept.
    """
    ordered = sorted(events, key=lambda e: (e.t_start_ms, e.link))
    observations: list[VehicleObservation] = []
    group_end = None
    current: dict[int, AttenuationEvent] = {}
    for event in ordered:
        if group_end is not None and event.t_start_ms - guard_ms <= group_end + guard_ms:
            group_end = max(group_end, event.t_end_ms)
            current.setdefault(event.link, event)
        else:
            if current:
                observations.append(_close_group(current, len(observations)))
            current = {event.link: event}
            group_end = event.t_end_ms
    if current:
        observations.append(_close_group(current, len(observations)))
    return observations


def _close_group(group: dict[int, AttenuationEvent], vehicle_id: int) -> VehicleObservation:
    tagged = {link: replace(ev, vehicle_id=vehicle_id) for link, ev in group.items()}
    return VehicleObservation(vehicle_id=vehicle_id, events=tagged)


def estimate_speed(
    obs: VehicleObservation,
    topology: Topology,
    sample_period_ms: float = 8.0,
) -> tuple[float | None, bool]:
    """Signed average speed from straight-link onset differences.

    Returns ``(speed_mps, low_confidence)``.  Speed is None when a straight
    link is missing or an onset difference is below one sample period.  With
    mixed onset orderings the majority sign wins and the estimate is flagged
    low-confidence.
    """
    if any(link not in obs.events for link in STRAIGHT_LINKS):
        return None, False
    starts = {link: obs.events[link].t_start_ms for link in STRAIGHT_LINKS}
    terms = []
    for i, j in ((1, 5), (1, 9), (5, 9)):
        dt_ms = starts[j] - starts[i]
        if abs(dt_ms) < sample_period_ms:
            return None, False
        terms.append(link_distance(topology, i, j) / (dt_ms / 1000.0))
    positive = sum(1 for t in terms if t > 0)
    if positive in (0, 3):
        return float(np.mean(terms)), False
    majority = [t for t in terms if (t > 0) == (positive >= 2)]
    return float(np.mean(majority)), True


def estimate_length(obs: VehicleObservation, v_mps: float | None) -> float | None:
    """Length estimate |v|/3 * (tau_1 + tau_5 + tau_9); None when unavailable."""
    if v_mps is None or v_mps == 0:
        return None
    if any(link not in obs.events for link in STRAIGHT_LINKS):
        return None
    tau_s = sum(obs.events[link].duration_ms for link in STRAIGHT_LINKS) / 1000.0
    return abs(v_mps) / 3.0 * tau_s


def filter_bundle(bundle: TraceBundle, params: SystemParams) -> dict[int, FilteredSeries]:
    """Normalize and filter all nine streams of a bundle."""
    return {
        link: normalize_and_filter(
            bundle.link_stream(link),
            bundle.link_idle(link),
            params.filter_size_n,
            link=link,
            t0_ms=bundle.t0_ms,
            sample_period_ms=bundle.sample_period_ms,
        )
        for link in LINK_IDS
    }


def process_bundle(
    bundle: TraceBundle,
    topology: Topology,
    params: SystemParams,
) -> tuple[list[VehicleObservation], dict[int, FilteredSeries]]:
    """Full detection chain: filter, segment, associate, estimate."""
    filtered = filter_bundle(bundle, params)
    all_events: list[AttenuationEvent] = []
    for link in LINK_IDS:
        all_events.extend(detect_events(filtered[link], params))
    guard_ms = params.guard_w * params.sample_period_ms
    observations = associate_vehicles(all_events, guard_ms=guard_ms)
    for obs in observations:
        v, low_conf = estimate_speed(obs, topology, params.sample_period_ms)
        obs.v_mps = v
        obs.low_confidence = low_conf
        obs.l_m = estimate_length(obs, v)
        obs.direction = None if v is None else ("wrong_way" if v < 0 else "forward")
    return observations, filtered


EVENTS_HEADER = ["vehicle_id", "link", "t_start_ms", "t_end_ms", "min_level"]
OBSERVATIONS_HEADER = ["vehicle_id", "v_mps", "l_m", "direction"]


def write_events_csv(path: str, observations: list[VehicleObservation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENTS_HEADER)
        for obs in observations:
            for link in sorted(obs.events):
                ev = obs.events[link]
                writer.writerow(
                    [obs.vehicle_id, link, repr(ev.t_start_ms), repr(ev.t_end_ms), repr(ev.min_level)]
                )


def write_observations_csv(path: str, observations: list[VehicleObservation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATIONS_HEADER)
        for obs in observations:
            writer.writerow(
                [
                    obs.vehicle_id,
                    "" if obs.v_mps is None else repr(obs.v_mps),
                    "" if obs.l_m is None else repr(obs.l_m),
                    obs.direction or "",
                ]
            )


class PipelineSink:
    """Replay consumer that buffers samples and runs the detection chain.

    Feed it to :func:`rftraffic.simulate.replay`; call :meth:`finish` once the
    stream ends to obtain the observations and filtered series.
    """

    def __init__(self, topology: Topology, params: SystemParams):
        self.topology = topology
        self.params = params
        self._samples: dict[int, list[float]] = {link: [] for link in LINK_IDS}
        self._t0: float | None = None
        self.count = 0

    def __call__(self, sample) -> None:
        if self._t0 is None:
            self._t0 = sample.t_ms
        self._samples[sample.link].append(sample.rssi_dbm)
        self.count += 1

    def finish(self) -> tuple[list[VehicleObservation], dict[int, FilteredSeries]]:
        lengths = {len(v) for v in self._samples.values()}
        if lengths == {0}:
            return [], {}
        streams = np.array([self._samples[link] for link in LINK_IDS])
        head = streams[:, : min(25, streams.shape[1])]
        bundle = TraceBundle(
            rssi_dbm=streams,
            idle_level_dbm=head.mean(axis=1),
            sample_period_ms=self.params.sample_period_ms,
            t0_ms=self._t0 or 0.0,
        )
        return process_bundle(bundle, self.topology, self.params)
