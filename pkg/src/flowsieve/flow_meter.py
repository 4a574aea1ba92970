"""Bidirectional flow metering: packet records to per-flow timing features.

Packets sharing a canonical 5-tuple key are grouped into flows (split when
the gap to the previous packet exceeds the flow timeout) and summarized into
28 numeric features: endpoint identifiers, duration, byte and packet rates,
inter-arrival time statistics (overall and per direction), and active/idle
burst statistics.
"""

from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import DataError

TCP = 6
UDP = 17
SUPPORTED_PROTOCOLS = (TCP, UDP)

DEFAULT_ACTIVITY_TIMEOUT_US = 5_000_000
DEFAULT_FLOW_TIMEOUT_US = 120_000_000

LABELS = ("NonTor", "Tor", "Unlabeled")

# Canonical feature order; the flow CSV is these 28 columns plus "label".
FEATURE_COLUMNS = (
    "src_ip", "src_port", "dst_ip", "dst_port", "protocol",
    "flow_duration", "flow_bytes_per_s", "flow_packets_per_s",
    "flow_iat_mean", "flow_iat_std", "flow_iat_max", "flow_iat_min",
    "fwd_iat_mean", "fwd_iat_std", "fwd_iat_max", "fwd_iat_min",
    "bwd_iat_mean", "bwd_iat_std", "bwd_iat_max", "bwd_iat_min",
    "active_mean", "active_std", "active_max", "active_min",
    "idle_mean", "idle_std", "idle_max", "idle_min",
)
CSV_COLUMNS = FEATURE_COLUMNS + ("label",)


class ParseError(DataError):
    """A packet record field failed validation; message names field and line."""


class OutOfOrderError(DataError):
    """Packet stream not sorted by timestamp."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class FourStats(NamedTuple):
    mean: float
    std: float
    max: float
    min: float


ZERO_STATS = FourStats(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PacketRecord:
    """One timestamped packet observation. IPs are 32-bit unsigned ints."""

    timestamp_us: int
    src_ip: int
    src_port: int
    dst_ip: int
    dst_port: int
    protocol: int
    payload_bytes: int


@dataclass(frozen=True)
class FlowKey:
    """Direction-independent conversation key; endpoint_a <= endpoint_b."""

    endpoint_a: tuple[int, int]
    endpoint_b: tuple[int, int]
    protocol: int


@dataclass
class MeterConfig:
    activity_timeout_us: int = DEFAULT_ACTIVITY_TIMEOUT_US
    flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US

    def __post_init__(self):
        if self.activity_timeout_us <= 0 or self.flow_timeout_us <= 0:
            raise ValueError("timeouts must be positive")
        if self.activity_timeout_us > self.flow_timeout_us:
            raise ValueError("activity timeout must not exceed flow timeout")


@dataclass
class FlowAccumulator:
    """In-progress state of one flow. Forward = orientation of first packet."""

    key: FlowKey
    initiator: tuple[int, int]
    responder: tuple[int, int]
    first_ts: int
    last_ts: int
    byte_count: int = 0
    timestamps_fwd: list[int] = field(default_factory=list)
    timestamps_bwd: list[int] = field(default_factory=list)
    timestamps_all: list[int] = field(default_factory=list)

    @property
    def packet_count(self) -> int:
        return len(self.timestamps_fwd) + len(self.timestamps_bwd)

    def add(self, pkt: PacketRecord) -> None:
        if (pkt.src_ip, pkt.src_port) == self.initiator:
            self.timestamps_fwd.append(pkt.timestamp_us)
        else:
            self.timestamps_bwd.append(pkt.timestamp_us)
        self.timestamps_all.append(pkt.timestamp_us)
        self.byte_count += pkt.payload_bytes
        self.last_ts = pkt.timestamp_us


@dataclass(frozen=True)
class FlowFeatures:
    """The 28-feature vector of one completed flow plus its class label."""

    src_ip: int
    src_port: int
    dst_ip: int
    dst_port: int
    protocol: int
    flow_duration: float
    flow_bytes_per_s: float
    flow_packets_per_s: float
    flow_iat: FourStats
    fwd_iat: FourStats
    bwd_iat: FourStats
    active: FourStats
    idle: FourStats
    label: str = "Unlabeled"

    def as_row(self) -> list[float]:
        """Feature values flattened in the canonical FEATURE_COLUMNS order."""
        row = [
            float(self.src_ip), float(self.src_port), float(self.dst_ip),
            float(self.dst_port), float(self.protocol),
            self.flow_duration, self.flow_bytes_per_s, self.flow_packets_per_s,
        ]
        for stats in (self.flow_iat, self.fwd_iat, self.bwd_iat,
                      self.active, self.idle):
            row.extend(stats)
        return row


def _parse_ip(text: str, fieldname: str, line_number: int) -> int:
    try:
        return int(ipaddress.IPv4Address(text))
    except (ipaddress.AddressValueError, ValueError):
        raise ParseError(
            f"line {line_number}: {fieldname}: malformed IPv4 address {text!r}"
        ) from None


def _parse_int(text: str, fieldname: str, line_number: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(
            f"line {line_number}: {fieldname}: not an integer: {text!r}"
        ) from None


def parse_packet_record(row: str, line_number: int = 0) -> PacketRecord:
    """Parse one comma-separated packet record.

    Expected fields: timestamp_us, src_ip, src_port, dst_ip, dst_port,
    protocol, bytes. Raises ParseError naming the offending field and line.
    """
    fields = [f.strip() for f in row.strip().split(",")]
    if len(fields) != 7:
        raise ParseError(
            f"line {line_number}: expected 7 fields, got {len(fields)}"
        )
    ts = _parse_int(fields[0], "timestamp_us", line_number)
    if ts < 0:
        raise ParseError(f"line {line_number}: timestamp_us: negative value {ts}")
    src_ip = _parse_ip(fields[1], "src_ip", line_number)
    src_port = _parse_int(fields[2], "src_port", line_number)
    dst_ip = _parse_ip(fields[3], "dst_ip", line_number)
    dst_port = _parse_int(fields[4], "dst_port", line_number)
    for name, port in (("src_port", src_port), ("dst_port", dst_port)):
        if not 0 <= port <= 65535:
            raise ParseError(f"line {line_number}: {name}: port out of range: {port}")
    protocol = _parse_int(fields[5], "protocol", line_number)
    if protocol not in SUPPORTED_PROTOCOLS:
        raise ParseError(f"line {line_number}: protocol: unsupported protocol {protocol}")
    payload = _parse_int(fields[6], "bytes", line_number)
    if payload < 0:
        raise ParseError(f"line {line_number}: bytes: negative value {payload}")
    return PacketRecord(ts, src_ip, src_port, dst_ip, dst_port, protocol, payload)


def read_packet_file(path) -> list[PacketRecord]:
    """Read a packet-record text file; a non-numeric first field marks a header."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            first = line.split(",", 1)[0].strip()
            if line_number == 1:
                try:
                    int(first)
                except ValueError:
                    continue  # header line
            records.append(parse_packet_record(line, line_number))
    return records


def canonical_key(pkt: PacketRecord) -> FlowKey:
    """Direction-independent key: endpoints ordered by (ip, port)."""
    src = (pkt.src_ip, pkt.src_port)
    dst = (pkt.dst_ip, pkt.dst_port)
    a, b = (src, dst) if src <= dst else (dst, src)
    return FlowKey(a, b, pkt.protocol)


def assemble_flows(packets: Iterable[PacketRecord],
                   cfg: MeterConfig | None = None) -> list[FlowAccumulator]:
    """Group a time-sorted packet stream into bidirectional flows.

    A packet joins the open flow with its key iff the gap since that flow's
    last packet is within the flow timeout; otherwise the flow is closed and
    a new one opened. Raises OutOfOrderError on a timestamp regression.
    """
    cfg = cfg or MeterConfig()
    open_flows: dict[FlowKey, FlowAccumulator] = {}
    closed: list[FlowAccumulator] = []
    prev_ts = None
    for index, pkt in enumerate(packets):
        if prev_ts is not None and pkt.timestamp_us < prev_ts:
            raise OutOfOrderError(
                f"out-of-order timestamp at index {index}: "
                f"{pkt.timestamp_us} < {prev_ts}", index)
        prev_ts = pkt.timestamp_us
        key = canonical_key(pkt)
        flow = open_flows.get(key)
        if flow is not None and pkt.timestamp_us - flow.last_ts > cfg.flow_timeout_us:
            closed.append(flow)
            flow = None
        if flow is None:
            flow = FlowAccumulator(
                key=key,
                initiator=(pkt.src_ip, pkt.src_port),
                responder=(pkt.dst_ip, pkt.dst_port),
                first_ts=pkt.timestamp_us,
                last_ts=pkt.timestamp_us,
            )
            open_flows[key] = flow
        flow.add(pkt)
    closed.extend(open_flows.values())
    closed.sort(key=lambda f: (f.first_ts, f.key.endpoint_a, f.key.endpoint_b,
                               f.key.protocol))
    return closed


def stats_summary(values: list[float]) -> FourStats:
    """(mean, population std, max, min); the empty list maps to all zeros."""
    if not values:
        return ZERO_STATS
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return FourStats(float(mean), math.sqrt(var), float(max(values)), float(min(values)))


def segment_active_idle(timestamps: list[int],
                        activity_timeout_us: int) -> tuple[list[int], list[int]]:
    """Split a flow's timeline into active bursts and idle gaps.

    Gaps within the activity timeout extend the current burst; larger gaps
    close it and are recorded as idle durations. Zero-length bursts
    (single-packet bursts) are dropped so active minima stay meaningful.
    """
    if not timestamps:
        raise ValueError("empty timestamp list")
    active: list[int] = []
    idle: list[int] = []
    burst_start = prev = timestamps[0]
    for ts in timestamps[1:]:
        gap = ts - prev
        if gap > activity_timeout_us:
            if prev > burst_start:
                active.append(prev - burst_start)
            idle.append(gap)
            burst_start = ts
        prev = ts
    if prev > burst_start:
        active.append(prev - burst_start)
    return active, idle


def compute_features(flow: FlowAccumulator, cfg: MeterConfig | None = None,
                     label: str = "Unlabeled") -> FlowFeatures:
    """Summarize a completed flow into the 28-feature vector."""
    cfg = cfg or MeterConfig()
    duration_us = flow.last_ts - flow.first_ts
    duration_s = duration_us / 1e6
    if duration_s > 0:
        bytes_per_s = flow.byte_count / duration_s
        packets_per_s = flow.packet_count / duration_s
    else:
        bytes_per_s = packets_per_s = 0.0  # zero-duration policy

    def iats(ts: list[int]) -> list[int]:
        return [b - a for a, b in zip(ts, ts[1:])]

    active, idle = segment_active_idle(flow.timestamps_all, cfg.activity_timeout_us)
    return FlowFeatures(
        src_ip=flow.initiator[0],
        src_port=flow.initiator[1],
        dst_ip=flow.responder[0],
        dst_port=flow.responder[1],
        protocol=flow.key.protocol,
        flow_duration=duration_s,
        flow_bytes_per_s=bytes_per_s,
        flow_packets_per_s=packets_per_s,
        flow_iat=stats_summary(iats(flow.timestamps_all)),
        fwd_iat=stats_summary(iats(flow.timestamps_fwd)),
        bwd_iat=stats_summary(iats(flow.timestamps_bwd)),
        active=stats_summary(active),
        idle=stats_summary(idle),
        label=label,
    )


def format_cell(value: float) -> str:
    """Integral values print exactly; others with 6 significant digits.

    A value whose 6-digit rounding is integral prints as that integer, so
    rewriting a CSV produced by this formatter is byte-stable.
    """
    if value == int(value) and abs(value) < 2 ** 53:
        return str(int(value))
    rounded = float(f"{value:.6g}")
    if rounded == int(rounded) and abs(rounded) < 2 ** 53:
        return str(int(rounded))
    return f"{value:.6g}"


def write_flow_csv(features: Iterable[FlowFeatures], path) -> None:
    """Write the 29-column flow CSV (header + one row per flow)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(CSV_COLUMNS) + "\n")
        for feat in features:
            cells = [format_cell(v) for v in feat.as_row()]
            cells.append(feat.label)
            handle.write(",".join(cells) + "\n")


def meter_packets(packets: list[PacketRecord], cfg: MeterConfig | None = None,
                  label: str = "Unlabeled") -> list[FlowFeatures]:
    """Assemble flows and compute features in one pass."""
    cfg = cfg or MeterConfig()
    return [compute_features(flow, cfg, label) for flow in assemble_flows(packets, cfg)]
