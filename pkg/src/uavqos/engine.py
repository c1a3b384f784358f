"""Closed-loop scenario engine.

One master clock at TTI resolution drives everything: traffic emission and
scheduling every tick, the plant at its integration step, the edge
controller at its own period, the QoS supervisor and trace reporting at
the evaluation period. A run is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cell import (
    CellModel,
    FrameSource,
    PacedSource,
    PeriodicSource,
    measure_rtt,
)
from .fsm import (
    LOW_LATENCY,
    Q1,
    Q3,
    QosSupervisor,
    SignalSet,
    emit_signals,
    rate_adapt_step,
)
from .plant import (
    CircularReference,
    ControllerConfig,
    PlantState,
    controller_tick,
    onboard_fallback_tick,
    plant_step,
)
from .scenario import ScenarioConfig
from .scheduler import (
    CAMERA,
    COMMAND,
    CONTROL_STATE,
    DOWNLINK,
    UPLINK,
    LinkConfig,
    set_priority,
)
from .sensing import (
    LatencyWindows,
    RiskState,
    SigmoidParams,
    clutter_prob,
    latency_condition,
    risk_update,
    spaciousness,
    synth_point_cloud,
    window_mean,
)


class SimulationContractError(Exception):
    """An internal invariant broke; the message names the offending tick."""


@dataclass
class TraceRecord:
    """One reporting-interval row; field order fixes the CSV column order."""

    time: float            # ms
    state: str
    signals: str
    ul_buffer: float       # total uplink buffered bits
    rtt: float             # ms, mean of the interval's samples
    cam_latency: float     # ms, latest per-frame delivery delay
    cam_rate: float        # Mbps, camera source rate
    uav_goodput: float     # Mbps delivered over the interval
    bg_goodput: float      # Mbps delivered over the interval
    s_k: float             # m, filtered spaciousness
    P_lat: float
    P_cs: float
    tracking_error: float  # m

    FIELDS = ("time", "state", "signals", "ul_buffer", "rtt", "cam_latency",
              "cam_rate", "uav_goodput", "bg_goodput", "s_k", "P_lat",
              "P_cs", "tracking_error")


@dataclass
class PhaseSummary:
    start_ms: float
    end_ms: float
    state: str
    bg_active: bool
    mean_rtt_ms: float
    mean_uav_goodput_mbps: float
    mean_bg_goodput_mbps: float
    mean_cam_latency_ms: float


@dataclass
class RunSummary:
    name: str
    seed: int
    duration_ms: float
    phases: list[PhaseSummary]
    max_tracking_error_m: float
    state_dwell: dict[str, int]
    stability: str
    instability_time_ms: Optional[float]


class Simulation:
    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        root = np.random.default_rng(config.seed)
        self.rng_env, self.rng_pfsm, self.rng_jitter = root.spawn(3)

        ul = LinkConfig(config.uplink.capacity_bps, config.uplink.tti_ms,
                        config.uplink.base_delay_ms,
                        config.uplink.buffer_cap_bits)
        dl = LinkConfig(config.downlink.capacity_bps, config.downlink.tti_ms,
                        config.downlink.base_delay_ms,
                        config.downlink.buffer_cap_bits)
        self.cell = CellModel(ul, dl, jitter_ms=config.jitter_ms,
                              jitter_rng=self.rng_jitter
                              if config.jitter_ms > 0 else None)
        self.cell.outages = list(config.link_outages_ms)

        pf = config.pfsm
        start_slope = pf.qos_slope if config.qos == "always" \
            else pf.default_slope
        self.uav_flow = self.cell.add_flow(UPLINK, start_slope)
        self.cmd_flow = self.cell.add_flow(DOWNLINK, 1.0)
        self.bg_flow = None
        if config.background is not None:
            self.bg_flow = self.cell.add_flow(UPLINK, pf.default_slope)
            self.cell.attach_source(
                PacedSource(config.background.rate_bps,
                            config.background.active_window_ms,
                            config.background.packet_bits), self.bg_flow)

        ctrl_cfg = config.control
        self.control_src = PeriodicSource(
            hz=ctrl_cfg.rate_bps / ctrl_cfg.packet_bits,
            packet_bits=ctrl_cfg.packet_bits,
            payload_fn=self._state_snapshot)
        self.cell.attach_source(self.control_src, self.uav_flow)
        self.camera = None
        if config.camera is not None:
            cam_cfg = config.camera
            self.camera = FrameSource(cam_cfg.rate_bps, cam_cfg.frame_hz,
                                      cam_cfg.packet_bits,
                                      floor_bps=cam_cfg.floor_bps)
            self.cell.attach_source(self.camera, self.uav_flow)

        pc = config.plant
        self.ctrl_cfg = ControllerConfig(
            period_ms=pc.period_ms, kp=pc.kp, kd=pc.kd,
            command_limit=pc.command_limit, plant_dt_ms=pc.plant_dt_ms,
            divergence_threshold_m=pc.divergence_threshold_m)
        self.reference = CircularReference(pc.circle_radius_m,
                                           pc.circle_period_s,
                                           pc.circle_altitude_m)
        self.plant = PlantState(position=self.reference.position(0.0),
                                velocity=self.reference.velocity(0.0),
                                reference=self.reference.position(0.0))

        self.cam_sig = SigmoidParams(pf.cam_sigmoid.steepness,
                                     pf.cam_sigmoid.midpoint,
                                     pf.latency_threshold)
        self.cc_sig = SigmoidParams(pf.cc_sigmoid.steepness,
                                    pf.cc_sigmoid.midpoint,
                                    pf.latency_threshold)
        self.cs_sig = SigmoidParams(pf.risk_sigmoid.steepness,
                                    pf.risk_sigmoid.midpoint,
                                    pf.clutter_threshold)
        self.windows = LatencyWindows(pf.cam_window, pf.cc_window,
                                      pf.cam_weight, pf.cc_weight)
        self.risk = RiskState(alpha=pf.ema_alpha, beta=pf.ema_beta)
        self.supervisor = None
        if config.qos == "dynamic":
            self.supervisor = QosSupervisor(
                th_lat=pf.latency_threshold, mode=pf.mode, rng=self.rng_pfsm,
                hl_persist_evals=pf.hl_persist_evals,
                escalation_grace_evals=pf.escalation_grace_evals)

        # runtime state
        self.offloaded = True
        self.hold_point: Optional[np.ndarray] = None
        self.edge_state: Optional[tuple] = None
        self.edge_cmd = np.zeros(3)
        self.applied_cmd = np.zeros(3)
        self.pending_ctrl: dict[int, object] = {}
        self.last_rtt_arrival = 0.0
        self.cam_rate_req = config.camera.rate_bps if config.camera else 0.0
        self.next_adapt_ms: Optional[float] = None
        self.next_recover_ms: Optional[float] = None
        self.diverged_at: Optional[float] = None
        self.max_tracking_error = 0.0
        self._bg_flushed = False
        self.p_lat = 0.0
        self.p_cs = 0.0
        self.signals = SignalSet(LOW_LATENCY, "LR")
        self.cam_latency_last = 0.0
        self.rtt_last = 0.0

    # -- callbacks -----------------------------------------------------

    def _state_snapshot(self, _due_ms):
        return (self.plant.position, self.plant.velocity)

    # -- per-phase helpers ----------------------------------------------

    def _static_state(self) -> str:
        if self.supervisor is not None:
            return self.supervisor.state
        return Q3 if self.cfg.qos == "always" else Q1

    def _environment_target(self, t_ms):
        for seg in self.cfg.environment:
            if t_ms < seg.until_ms:
                return seg
        return self.cfg.environment[-1]

    def _apply_qos(self, enabled: bool):
        want = self.cfg.pfsm.qos_slope if enabled \
            else self.cfg.pfsm.default_slope
        target = self.uav_flow._pending_slope or self.uav_flow.priority_slope
        if target != want:
            set_priority(self.uav_flow, want)

    def _enter_autonomy(self, t_ms):
        self.offloaded = False
        self.hold_point = self.plant.position.copy()
        if self.camera is not None:
            self.camera.set_active(False, t_ms)
        self.uav_flow.flush()

    def _exit_autonomy(self, t_ms):
        self.offloaded = True
        self.hold_point = None
        if self.camera is not None:
            self.camera.set_active(True, t_ms)

    def _run_rate_adaptation(self, adapting: bool, low_latency: bool, t_ms):
        if self.camera is None:
            return
        pf = self.cfg.pfsm
        nominal = self.cfg.camera.rate_bps
        if adapting:
            self.next_recover_ms = None
            if self.next_adapt_ms is None:
                self.next_adapt_ms = t_ms
            if t_ms >= self.next_adapt_ms:
                self.cam_rate_req = rate_adapt_step(
                    self.cam_rate_req, nominal, pf.rate_floor_bps,
                    adapting=True, factor=pf.rate_adapt_factor)
                self.camera.set_rate(self.cam_rate_req)
                self.next_adapt_ms = t_ms + pf.rate_adapt_period_ms
        else:
            self.next_adapt_ms = None
            if low_latency and self.offloaded and self.cam_rate_req < nominal:
                if self.next_recover_ms is None:
                    self.next_recover_ms = t_ms
                if t_ms >= self.next_recover_ms:
                    self.cam_rate_req = rate_adapt_step(
                        self.cam_rate_req, nominal, pf.rate_floor_bps,
                        adapting=False, factor=pf.rate_adapt_factor)
                    self.camera.set_rate(self.cam_rate_req)
                    self.next_recover_ms = t_ms + pf.rate_adapt_period_ms
            elif self.cam_rate_req >= nominal:
                self.next_recover_ms = None

    def _check_conservation(self, tick):
        for f in self.cell.flows.values():
            drift = f.enqueued_bits - (f.buffered_bits + f.delivered_bits
                                       + f.dropped_bits)
            if abs(drift) > 1.0:
                raise SimulationContractError(
                    f"bit conservation broke on flow {f.id} at tick {tick} "
                    f"(drift {drift} bits)")

    # -- main loop -------------------------------------------------------

    def run(self) -> tuple[list[TraceRecord], RunSummary]:
        cfg = self.cfg
        pf = cfg.pfsm
        tti = cfg.uplink.tti_ms
        n_ticks = int(round(cfg.duration_ms / tti))
        plant_every = int(round(cfg.plant.plant_dt_ms / tti))
        ctrl_every = int(round(cfg.plant.period_ms / tti))
        eval_every = int(round(pf.eval_period_ms / tti))
        report_every = int(round(cfg.reporting_interval_ms / tti))

        traces: list[TraceRecord] = []
        interval_uav = interval_bg = 0.0
        interval_rtt_sum = 0.0
        interval_rtt_n = 0
        bg_window = cfg.background.active_window_ms if cfg.background else None

        for k in range(n_ticks):
            t = k * tti

            if k and k % plant_every == 0 and self.diverged_at is None:
                if self.offloaded:
                    self.plant.reference = self.reference.position(t)
                    cmd = self.applied_cmd
                else:
                    self.plant.reference = self.hold_point
                    cmd = onboard_fallback_tick(self.plant, self.ctrl_cfg)
                plant_step(self.plant, cmd, cfg.plant.plant_dt_ms)
                self.max_tracking_error = max(self.max_tracking_error,
                                              self.plant.tracking_error)
                if self.plant.tracking_error > \
                        self.ctrl_cfg.divergence_threshold_m or \
                        not np.isfinite(self.plant.position).all():
                    self.diverged_at = t

            if k % ctrl_every == 0 and self.edge_state is not None:
                pos, vel = self.edge_state
                delayed = PlantState(position=pos, velocity=vel,
                                     reference=self.reference.position(t))
                self.edge_cmd = controller_tick(
                    delayed, self.ctrl_cfg,
                    ref_velocity=self.reference.velocity(t))

            for arrival, pkt, direction in self.cell.step(tti):
                if direction == UPLINK:
                    if pkt.flow_id == self.uav_flow.id:
                        interval_uav += pkt.size
                        if pkt.kind == CONTROL_STATE:
                            self.pending_ctrl[pkt.id] = pkt
                            self.edge_state = pkt.payload
                            self.cell.enqueue_command(
                                self.cmd_flow, arrival, pkt.id,
                                payload=self.edge_cmd,
                                size_bits=cfg.command_packet_bits)
                        elif pkt.kind == CAMERA and pkt.payload[1]:
                            sample = arrival - pkt.payload[0]
                            self.windows.push_camera(sample)
                            self.cam_latency_last = sample
                    else:
                        interval_bg += pkt.size
                elif pkt.kind == COMMAND:
                    ctrl = self.pending_ctrl.pop(pkt.ref, None)
                    if ctrl is not None:
                        sample = measure_rtt(self.cell, ctrl, pkt)
                        if sample is not None:
                            self.windows.push_control(sample.rtt)
                            interval_rtt_sum += sample.rtt
                            interval_rtt_n += 1
                            self.last_rtt_arrival = arrival
                    self.applied_cmd = pkt.payload

            t_end = (k + 1) * tti
            if (k + 1) % eval_every == 0:
                self._evaluate(t_end)
                if bg_window is not None and not self._bg_flushed and \
                        t_end > bg_window[1]:
                    self.bg_flow.flush()       # background user departs
                    self._bg_flushed = True

            if (k + 1) % report_every == 0:
                if interval_rtt_n:
                    self.rtt_last = interval_rtt_sum / interval_rtt_n
                scale = 1000.0 / cfg.reporting_interval_ms / 1e6
                traces.append(TraceRecord(
                    time=t_end,
                    state=self._static_state(),
                    signals=str(self.signals),
                    ul_buffer=self.cell.buffered_bits(UPLINK),
                    rtt=self.rtt_last,
                    cam_latency=self.cam_latency_last,
                    cam_rate=(self.camera.rate_bps if self.camera else 0.0)
                    / 1e6,
                    uav_goodput=interval_uav * scale,
                    bg_goodput=interval_bg * scale,
                    s_k=self.risk.s if self.risk.s is not None else 0.0,
                    P_lat=self.p_lat,
                    P_cs=self.p_cs,
                    tracking_error=self.plant.tracking_error,
                ))
                interval_uav = interval_bg = 0.0
                interval_rtt_sum, interval_rtt_n = 0.0, 0
                self._check_conservation(k)

        summary = self._summarize(traces)
        return traces, summary

    def _evaluate(self, t):
        cfg = self.cfg
        pf = cfg.pfsm
        seg = self._environment_target(t)
        cloud = synth_point_cloud(seg.spaciousness_m, self.plant.position,
                                  self.rng_env, noise_std=seg.noise_std)
        sample = spaciousness(cloud)
        _, level = risk_update(self.risk, sample)

        t1 = window_mean(self.windows.cam_window)
        t2 = window_mean(self.windows.cc_window)
        if t1 is not None and t2 is not None:
            self.p_lat = latency_condition(t1, t2, self.windows,
                                           self.cam_sig, self.cc_sig)
        self.p_cs = clutter_prob(self.risk.s, self.cs_sig)
        link_ok = (t - self.last_rtt_arrival) <= pf.link_lost_timeout_ms
        at_floor = self.camera is not None and \
            self.cam_rate_req <= pf.rate_floor_bps

        if self.supervisor is None:
            self.signals = emit_signals(self.p_lat, self.p_cs, level,
                                        link_ok, pf.latency_threshold)
            return

        was_offloaded = self.offloaded
        event = self.supervisor.evaluate(self.p_lat, self.p_cs, level,
                                         link_ok, at_rate_floor=at_floor)
        self.signals = event.signals
        self._apply_qos(event.action.qos_enabled)
        if was_offloaded and not event.action.offload:
            self._enter_autonomy(t)
        elif not was_offloaded and event.action.offload:
            self._exit_autonomy(t)
        self._run_rate_adaptation(event.action.rate_adaptation,
                                  event.signals.latency == LOW_LATENCY, t)

    def _summarize(self, traces) -> RunSummary:
        cfg = self.cfg
        bg_window = cfg.background.active_window_ms if cfg.background else None

        def bg_active(t):
            return bg_window is not None and \
                bg_window[0] < t <= bg_window[1]

        phases: list[PhaseSummary] = []
        group: list[TraceRecord] = []

        def close(group):
            if not group:
                return
            phases.append(PhaseSummary(
                start_ms=group[0].time,
                end_ms=group[-1].time,
                state=group[0].state,
                bg_active=bg_active(group[0].time),
                mean_rtt_ms=sum(r.rtt for r in group) / len(group),
                mean_uav_goodput_mbps=sum(r.uav_goodput for r in group)
                / len(group),
                mean_bg_goodput_mbps=sum(r.bg_goodput for r in group)
                / len(group),
                mean_cam_latency_ms=sum(r.cam_latency for r in group)
                / len(group),
            ))

        for rec in traces:
            if group and (rec.state != group[0].state
                          or bg_active(rec.time) != bg_active(group[0].time)):
                close(group)
                group = []
            group.append(rec)
        close(group)

        dwell: dict[str, int] = {}
        for rec in traces:
            dwell[rec.state] = dwell.get(rec.state, 0) + 1

        return RunSummary(
            name=cfg.name,
            seed=cfg.seed,
            duration_ms=cfg.duration_ms,
            phases=phases,
            max_tracking_error_m=self.max_tracking_error,
            state_dwell=dwell,
            stability="unstable" if self.diverged_at is not None else "stable",
            instability_time_ms=self.diverged_at,
        )


def run(config: ScenarioConfig) -> tuple[list[TraceRecord], RunSummary]:
    """Execute one scenario; deterministic for a given (config, seed)."""
    return Simulation(config).run()
