"""Cell composition: traffic sources, both link directions, delay metering.

Sources produce packets with closed-form due times (no accumulating float
steps), the scheduler allocates each TTI per direction, and served packets
arrive one base delay after their departure instant. Camera frames are
paced onto the uplink as MTU-sized packets spread across the frame
interval, so a frame never monopolizes the FIFO ahead of the small control
packets that share the flow.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .scheduler import (
    BACKGROUND,
    CAMERA,
    COMMAND,
    CONTROL_STATE,
    DOWNLINK,
    UPLINK,
    LinkConfig,
    Packet,
    QosFlow,
    schedule_tti,
)

INF = math.inf


@dataclass
class RttSample:
    """Round trip of one control/command exchange; rtt is exactly the sum
    of the uplink and downlink components (processing is out of scope)."""

    sent_at: float
    echoed_at: float
    rtt: float
    ul_delay: float
    dl_delay: float

    @property
    def components(self):
        return (self.ul_delay, self.dl_delay)


class FrameSource:
    """Constant-bit-rate frame stream (camera).

    Each frame is emitted as full `packet_bits` packets plus a remainder,
    paced uniformly across the frame interval. Rate changes latch at the
    next frame boundary; requests below the floor clamp and set a flag.
    """

    def __init__(self, rate_bps: float, frame_hz: float,
                 packet_bits: int = 12_000, floor_bps: float = 5e6,
                 kind: str = CAMERA):
        if rate_bps <= 0 or frame_hz <= 0 or packet_bits <= 0:
            raise ValueError("camera source parameters must be positive")
        self.nominal_bps = rate_bps
        self.rate_bps = rate_bps
        self.floor_bps = floor_bps
        self.frame_hz = frame_hz
        self.packet_bits = packet_bits
        self.kind = kind
        self.frame_interval = 1000.0 / frame_hz
        self.clamped = False
        self.active = True
        self._pending_rate: Optional[float] = None
        self._frame_idx = 0
        self._plan: list[tuple[float, int, bool]] = []   # (due, size, last)
        self._plan_pos = 0
        self._frame_start = 0.0

    def set_rate(self, rate_bps: float) -> float:
        """Request a new rate; effective at the next frame boundary."""
        self.clamped = rate_bps < self.floor_bps
        self._pending_rate = max(rate_bps, self.floor_bps)
        return self._pending_rate

    def set_active(self, active: bool, now_ms: float):
        if active and not self.active:
            # skip the frames that elapsed while off
            self._frame_idx = math.ceil(now_ms / self.frame_interval)
            self._plan = []
            self._plan_pos = 0
        self.active = active

    def _build_frame(self):
        if self._pending_rate is not None:
            self.rate_bps = self._pending_rate
            self._pending_rate = None
        start = self._frame_idx * self.frame_interval
        frame_bits = round(self.rate_bps / self.frame_hz)
        n_full, rem = divmod(frame_bits, self.packet_bits)
        sizes = [self.packet_bits] * n_full + ([rem] if rem else [])
        spacing = self.frame_interval / len(sizes)
        self._plan = [(start + i * spacing, size, i == len(sizes) - 1)
                      for i, size in enumerate(sizes)]
        self._plan_pos = 0
        self._frame_start = start

    def emit_until(self, end_ms: float):
        """(due, size, kind, ref, payload) for every packet due before
        end_ms; camera payload carries (frame_start, is_last)."""
        out = []
        if not self.active:
            return out
        while True:
            if self._plan_pos >= len(self._plan):
                if self._frame_idx * self.frame_interval >= end_ms:
                    break
                self._build_frame()
                self._frame_idx += 1
            due, size, last = self._plan[self._plan_pos]
            if due >= end_ms:
                break
            self._plan_pos += 1
            out.append((due, size, self.kind, self._frame_idx - 1,
                        (self._frame_start, last)))
        return out


class PeriodicSource:
    """Small fixed-size packet every period (control state stream)."""

    def __init__(self, hz: float, packet_bits: int = 12_000,
                 kind: str = CONTROL_STATE,
                 payload_fn: Optional[Callable[[float], object]] = None):
        if hz <= 0 or packet_bits <= 0:
            raise ValueError("periodic source parameters must be positive")
        self.period = 1000.0 / hz
        self.packet_bits = packet_bits
        self.kind = kind
        self.payload_fn = payload_fn
        self.rate_bps = hz * packet_bits
        self._idx = 0

    def emit_until(self, end_ms: float):
        out = []
        while self._idx * self.period < end_ms:
            due = self._idx * self.period
            payload = self.payload_fn(due) if self.payload_fn else None
            out.append((due, self.packet_bits, self.kind, self._idx, payload))
            self._idx += 1
        return out


class PacedSource:
    """Back-to-back packets at a constant rate inside an on/off window
    (background load)."""

    def __init__(self, rate_bps: float, window_ms: tuple[float, float],
                 packet_bits: int = 12_000, kind: str = BACKGROUND):
        if rate_bps <= 0 or packet_bits <= 0:
            raise ValueError("background source parameters must be positive")
        self.rate_bps = rate_bps
        self.window = window_ms
        self.packet_bits = packet_bits
        self.kind = kind
        self.spacing = packet_bits / rate_bps * 1000.0
        self._idx = 0

    def emit_until(self, end_ms: float):
        out = []
        start, stop = self.window
        while True:
            due = start + self._idx * self.spacing
            if due >= end_ms or due >= stop:
                break
            out.append((due, self.packet_bits, self.kind, self._idx, None))
            self._idx += 1
        return out


def set_source_rate(source: FrameSource, rate_bps: float) -> FrameSource:
    """Adjust a frame source's rate (next frame boundary, floor-clamped)."""
    source.set_rate(rate_bps)
    return source


class CellModel:
    """One cell: uplink and downlink schedulers plus the attached traffic.

    Multiple sources may feed one flow (the platform's whole traffic
    profile rides a single QoS flow that is re-prioritized as one unit).
    """

    def __init__(self, uplink: LinkConfig, downlink: LinkConfig,
                 jitter_ms: float = 0.0, jitter_rng=None):
        self.uplink = uplink
        self.downlink = downlink
        self.flows: dict[int, QosFlow] = {}
        self._ul_flows: list[QosFlow] = []
        self._dl_flows: list[QosFlow] = []
        self._sources: list[tuple[object, QosFlow]] = []
        self.clock = 0.0
        self._in_flight_ul: deque = deque()
        self._in_flight_dl: deque = deque()
        self._last_arrival = {UPLINK: 0.0, DOWNLINK: 0.0}
        self.outages: list[tuple[float, float]] = []
        self.jitter_ms = jitter_ms
        self.jitter_rng = jitter_rng
        self._next_flow_id = 0

    def add_flow(self, direction: str, priority_slope: float = 1.0) -> QosFlow:
        flow = QosFlow(self._next_flow_id, direction, priority_slope)
        self._next_flow_id += 1
        self.flows[flow.id] = flow
        (self._ul_flows if direction == UPLINK else self._dl_flows).append(flow)
        return flow

    def attach_source(self, source, flow: QosFlow):
        self._sources.append((source, flow))

    def in_outage(self, t_ms: float) -> bool:
        return any(a <= t_ms < b for a, b in self.outages)

    def enqueue_command(self, flow: QosFlow, created_at: float,
                        echo_of: int, payload=None,
                        size_bits: int = 2000) -> Packet:
        """Edge-side injection of a downlink command correlated to an
        uplink control packet."""
        pkt = flow.make_packet(size_bits, created_at, COMMAND,
                               ref=echo_of, payload=payload)
        flow.enqueue(pkt, self.downlink.buffer_cap_bits)
        return pkt

    def _arrival(self, direction: str, departure: float, base: float) -> float:
        arrival = departure + base
        if self.jitter_ms > 0.0 and self.jitter_rng is not None:
            arrival += self.jitter_rng.uniform(-self.jitter_ms, self.jitter_ms)
        # one FIFO pipe: jitter may stretch but never reorder
        arrival = max(arrival, self._last_arrival[direction])
        self._last_arrival[direction] = arrival
        return arrival

    def step(self, dt: float):
        """Advance one TTI; returns [(arrival_ms, packet, direction)] for
        every packet delivered during the tick."""
        if dt != self.uplink.tti_ms:
            raise ValueError("step must advance exactly one TTI")
        end = self.clock + dt

        staged: dict[int, list] = {}
        for source, flow in self._sources:
            items = source.emit_until(end)
            if items:
                staged.setdefault(flow.id, []).extend(items)
        for fid, items in staged.items():
            flow = self.flows[fid]
            items.sort(key=lambda x: x[0])
            cap = (self.uplink if flow.direction == UPLINK
                   else self.downlink).buffer_cap_bits
            for due, size, kind, ref, payload in items:
                flow.enqueue(flow.make_packet(size, due, kind, ref, payload),
                             cap)

        if not self.in_outage(self.clock):
            if self._ul_flows:
                _, done = schedule_tti(self.uplink, self._ul_flows, self.clock)
                for pkt, dep in done:
                    self._in_flight_ul.append(
                        (self._arrival(UPLINK, dep, self.uplink.base_delay_ms),
                         pkt))
            if self._dl_flows:
                _, done = schedule_tti(self.downlink, self._dl_flows,
                                       self.clock)
                for pkt, dep in done:
                    self._in_flight_dl.append(
                        (self._arrival(DOWNLINK, dep,
                                       self.downlink.base_delay_ms), pkt))

        delivered = []
        for queue, direction in ((self._in_flight_ul, UPLINK),
                                 (self._in_flight_dl, DOWNLINK)):
            while queue and queue[0][0] < end:
                arrival, pkt = queue.popleft()
                pkt.delivered_at = arrival
                delivered.append((arrival, pkt, direction))
        self.clock = end
        return delivered

    def buffered_bits(self, direction: str = UPLINK) -> float:
        flows = self._ul_flows if direction == UPLINK else self._dl_flows
        return sum(f.buffered_bits for f in flows)


def measure_rtt(cell: CellModel, control_packet: Packet,
                command_packet: Packet) -> Optional[RttSample]:
    """Correlate a delivered control packet with its command echo.

    Returns None when the ids do not match or either leg was never
    delivered (loss/drop)."""
    if command_packet.ref != control_packet.id:
        return None
    if control_packet.delivered_at is None or \
            command_packet.delivered_at is None:
        return None
    ul = control_packet.delivered_at - control_packet.created_at
    dl = command_packet.delivered_at - command_packet.created_at
    return RttSample(sent_at=control_packet.created_at,
                     echoed_at=control_packet.delivered_at,
                     rtt=ul + dl, ul_delay=ul, dl_delay=dl)
