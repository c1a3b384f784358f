"""Weighted resource-fair TTI scheduler with relative-priority flows.

Every flow carries a priority slope. While a flow is backlogged and unserved
its weight grows linearly (slope per TTI); the flow holding the largest
weight is granted the TTI and its weight resets to zero. Flows with empty
buffers hold no weight, so allocation is gated on buffered data. With two
permanently backlogged flows of slopes n:1 this yields a served-TTI
frequency ratio of n:1 (the high-slope flow wins a repeating cycle of n+1
TTIs n times).

When the granted flow drains mid-TTI the residual capacity spills to the
next-highest-weight backlogged flow, so the link is work conserving; only
the primary grantee's weight is reset.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Optional

UPLINK = "uplink"
DOWNLINK = "downlink"

# packet kinds
CONTROL_STATE = "control_state"
COMMAND = "command"
CAMERA = "camera"
BACKGROUND = "background"

PACKET_KINDS = frozenset({CONTROL_STATE, COMMAND, CAMERA, BACKGROUND})


class Packet:
    """One schedulable unit of traffic.

    `ref` correlates a packet with its context (camera frame index, or the
    id of the control packet a command echoes); `payload` carries opaque
    application data (state snapshots, command values).
    """

    __slots__ = ("id", "flow_id", "size", "created_at", "kind", "ref",
                 "payload", "delivered_at")

    def __init__(self, id, flow_id, size, created_at, kind, ref=None,
                 payload=None):
        if size <= 0:
            raise ValueError(f"packet size must be positive, got {size}")
        if created_at < 0:
            raise ValueError("packet created_at must be non-negative")
        if kind not in PACKET_KINDS:
            raise ValueError(f"unknown packet kind {kind!r}")
        self.id = id
        self.flow_id = flow_id
        self.size = size
        self.created_at = created_at
        self.kind = kind
        self.ref = ref
        self.payload = payload
        self.delivered_at = None

    def __repr__(self):
        return (f"Packet(id={self.id}, flow={self.flow_id}, size={self.size},"
                f" created_at={self.created_at}, kind={self.kind})")


@dataclass
class LinkConfig:
    """Static description of one link direction.

    capacity_bps : line rate in bits/s
    tti_ms       : scheduler allocation period in ms
    base_delay_ms: one-way propagation + core delay applied after service
    buffer_cap_bits: optional per-flow cap; excess enqueues are tail-dropped
    """

    capacity_bps: float
    tti_ms: float = 0.5
    base_delay_ms: float = 13.65
    buffer_cap_bits: Optional[float] = None

    def __post_init__(self):
        if self.capacity_bps <= 0:
            raise ValueError("capacity must be positive")
        if self.tti_ms <= 0:
            raise ValueError("tti must be positive")
        if self.base_delay_ms < 0:
            raise ValueError("base delay must be non-negative")

    @property
    def tti_budget_bits(self) -> float:
        return self.capacity_bps * self.tti_ms / 1000.0


class QosFlow:
    """A schedulable data flow: FIFO byte buffer plus priority state."""

    __slots__ = ("id", "direction", "priority_slope", "weight", "buffer",
                 "head_served_bits", "buffered_bits", "enqueued_bits",
                 "delivered_bits", "dropped_bits", "_next_packet_id",
                 "_pending_slope")

    def __init__(self, id: int, direction: str, priority_slope: float = 1.0):
        if priority_slope <= 0:
            raise ValueError("priority slope must be positive")
        if direction not in (UPLINK, DOWNLINK):
            raise ValueError(f"unknown direction {direction!r}")
        self.id = id
        self.direction = direction
        self.priority_slope = priority_slope
        self.weight = 0.0
        self.buffer: deque[Packet] = deque()
        self.head_served_bits = 0.0   # partially transmitted head packet
        self.buffered_bits = 0.0
        self.enqueued_bits = 0.0
        self.delivered_bits = 0.0
        self.dropped_bits = 0.0
        self._next_packet_id = 0
        self._pending_slope = None

    def make_packet(self, size, created_at, kind, ref=None, payload=None) -> Packet:
        pkt = Packet(self._next_packet_id, self.id, size, created_at, kind,
                     ref, payload)
        self._next_packet_id += 1
        return pkt

    def enqueue(self, packet: Packet, buffer_cap_bits=None) -> bool:
        """Append to the FIFO; returns False on tail-drop at the cap."""
        self.enqueued_bits += packet.size
        if buffer_cap_bits is not None and \
                self.buffered_bits + packet.size > buffer_cap_bits:
            self.dropped_bits += packet.size
            return False
        self.buffer.append(packet)
        self.buffered_bits += packet.size
        return True

    def flush(self) -> float:
        """Discard all buffered bits (user departs / offload abandoned)."""
        discarded = self.buffered_bits - self.head_served_bits
        self.dropped_bits += discarded
        self.delivered_bits += self.head_served_bits
        self.buffer.clear()
        self.buffered_bits = 0.0
        self.head_served_bits = 0.0
        return discarded


class Allocation(NamedTuple):
    flow_id: int
    bits: float


def accumulate_weight(flow: QosFlow, ttis_since_service: int) -> float:
    """Weight after `ttis_since_service` unserved TTIs: slope times count."""
    if ttis_since_service < 0:
        raise ValueError("ttis_since_service must be non-negative")
    flow.weight = flow.priority_slope * ttis_since_service
    return flow.weight


def head_of_line_delay(flow: QosFlow, now: float) -> float:
    """Age in ms of the oldest buffered packet; 0 for an empty buffer."""
    if not flow.buffer:
        return 0.0
    return now - flow.buffer[0].created_at


def set_priority(flow: QosFlow, new_slope: float) -> QosFlow:
    """Replace the flow's slope; takes effect at the next TTI boundary."""
    if new_slope <= 0:
        raise ValueError("priority slope must be positive")
    flow._pending_slope = new_slope
    return flow


def schedule_tti(link: LinkConfig, flows: list[QosFlow], now_ms: float):
    """Run one TTI of the scheduler over `flows`.

    Weight update happens first (pending slope changes apply, backlogged
    flows grow by their slope, empty flows reset to zero), then the
    max-weight backlogged flow is granted the TTI budget. Ties break toward
    the higher slope, then the lower flow id. If the grantee drains, the
    remainder spills to the next flow by the same ordering.

    Returns (allocations, completed) where `completed` is a list of
    (packet, departure_ms) for every packet whose last bit was sent this
    TTI, in departure order.
    """
    if not flows:
        raise ValueError("schedule_tti requires at least one flow")

    for f in flows:
        if f._pending_slope is not None:
            f.priority_slope = f._pending_slope
            f._pending_slope = None
        if f.buffered_bits > 0:
            f.weight += f.priority_slope
        else:
            f.weight = 0.0

    budget = link.tti_budget_bits
    capacity = link.capacity_bps
    allocations: list[Allocation] = []
    completed: list[tuple[Packet, float]] = []

    candidates = [f for f in flows if f.buffered_bits > 0]
    remaining = budget
    sent = 0.0  # bits already pushed onto the wire this TTI
    primary = True
    while remaining > 1e-9 and candidates:
        best = candidates[0]
        for f in candidates[1:]:
            if (f.weight, f.priority_slope, -f.id) > \
                    (best.weight, best.priority_slope, -best.id):
                best = f
        candidates.remove(best)
        if primary:
            best.weight = 0.0
            primary = False

        take = min(remaining, best.buffered_bits)
        granted = take
        buf = best.buffer
        while take > 1e-9:
            head = buf[0]
            head_left = head.size - best.head_served_bits
            if head_left <= take + 1e-9:
                sent += head_left
                take -= head_left
                best.head_served_bits = 0.0
                buf.popleft()
                completed.append((head, now_ms + sent * 1000.0 / capacity))
            else:
                best.head_served_bits += take
                sent += take
                take = 0.0
        best.buffered_bits -= granted
        best.delivered_bits += granted
        remaining -= granted
        allocations.append(Allocation(best.id, granted))

    return allocations, completed
