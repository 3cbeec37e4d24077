//! Deterministic discrete-event engine.
//!
//! Time is a `u64` tick counter at 0.05 ms resolution — a quarter of the
//! codec's classification tolerance, so pulse durations are never aliased
//! by the clock. Events are ordered by `(time, robot_id, insertion
//! sequence)`; with per-robot RNG streams and no hash-order iteration the
//! entire run, including the trace bytes, is a pure function of the
//! configuration and seed.

pub mod config;
pub mod experiments;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;

use crate::channel::{BoardProfile, ChannelLayout, ChannelParams, LinkEnd};
use crate::codec::{
    decode_stream, encode_control, encode_frame_raw, encode_proximity, CodecParams, LinkEvent,
    PulseTrain,
};
use crate::error::Result;
use crate::protocol::{Emission, EmissionKind, RobotController};
use crate::rngutil::{robot_stream, stream_rng};
use crate::world::WorldModel;

pub const TICKS_PER_MS: u64 = 20;
/// Pause between finishing a reception and starting the reply.
pub const TURNAROUND_MS: f64 = 0.5;

pub fn ms_to_ticks(ms: f64) -> u64 {
    (ms * TICKS_PER_MS as f64).round().max(0.0) as u64
}

pub fn ticks_to_ms(ticks: u64) -> f64 {
    ticks as f64 / TICKS_PER_MS as f64
}

fn fmt_ms(ticks: u64) -> String {
    // 0.05 ms resolution renders exactly in two decimals.
    format!("{:.2}", ticks_to_ms(ticks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Cycle,
    TimerExpiry,
    TxEnd { tx: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: u64,
    robot: usize,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.robot, self.seq).cmp(&(other.time, other.robot, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// How one transmission lands at one receiver.
#[derive(Debug, Clone, Copy)]
struct Incidence {
    rx_robot: usize,
    /// Channel the receiver can decode it on (its polled channel, or the
    /// best channel under hardware pulse detection).
    channel: usize,
    volts: f64,
    /// Above threshold on the decode channel.
    decodable: bool,
    /// Above threshold on *some* channel: undecodable energy still costs
    /// the polling receiver the all-channel wait.
    energy: bool,
}

#[derive(Debug, Clone)]
struct Transmission {
    tx_robot: usize,
    train: PulseTrain,
    t0: u64,
    t1: u64,
    incidences: Vec<Incidence>,
}

/// Trace rows, already formatted: byte-identical output is part of the
/// engine's contract.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub pulses: Vec<String>,
    pub events: Vec<String>,
}

impl Trace {
    pub const PULSE_HEADER: &'static str = "time_ms,robot_id,channel,edge";
    pub const EVENT_HEADER: &'static str = "time_ms,robot_id,event,peer_id,channel,detail";

    pub fn pulses_csv(&self) -> String {
        let mut s = String::from(Self::PULSE_HEADER);
        for row in &self.pulses {
            s.push('\n');
            s.push_str(row);
        }
        s.push('\n');
        s
    }

    pub fn events_csv(&self) -> String {
        let mut s = String::from(Self::EVENT_HEADER);
        for row in &self.events {
            s.push('\n');
            s.push_str(row);
        }
        s.push('\n');
        s
    }
}

pub struct Engine {
    pub world: WorldModel,
    pub controllers: Vec<RobotController>,
    boards: Vec<BoardProfile>,
    layout: ChannelLayout,
    chan_params: ChannelParams,
    codec: CodecParams,
    rngs: Vec<ChaCha8Rng>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: u64,
    duration: u64,
    transmissions: Vec<Transmission>,
    /// Per robot: indices of transmissions currently incident on it.
    active: Vec<Vec<usize>>,
    /// Per robot: recent own-transmission intervals, for half-duplex checks.
    tx_intervals: Vec<Vec<(u64, u64)>>,
    /// Per robot: end of the robot's latest own transmission.
    busy_until: Vec<u64>,
    /// Relay mode: every decoded novel frame is re-broadcast indefinitely.
    pub relay: bool,
    /// Relay hops use the confirmed handshake instead of blind repeats.
    pub relay_confirmed: bool,
    seen_data: Vec<Vec<u8>>,
    trace_enabled: bool,
    pub trace: Trace,
    /// Per robot: terminal state already reported in the trace.
    outcome_traced: Vec<bool>,
    /// First time a requester heard a Ready: the contact instant.
    pub first_contact_ms: Option<f64>,
    pub collisions: u64,
}

impl Engine {
    pub fn new(
        world: WorldModel,
        controllers: Vec<RobotController>,
        boards: Vec<BoardProfile>,
        layout: ChannelLayout,
        chan_params: ChannelParams,
        master_seed: u64,
        duration_ms: f64,
        trace_enabled: bool,
    ) -> Result<Self> {
        assert_eq!(world.robots.len(), controllers.len());
        assert_eq!(world.robots.len(), boards.len());
        let n = controllers.len();
        let rngs = (0..n)
            .map(|i| stream_rng(master_seed, robot_stream(i)))
            .collect();
        let mut engine = Engine {
            world,
            controllers,
            boards,
            layout,
            chan_params,
            codec: CodecParams::default(),
            rngs,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            duration: ms_to_ticks(duration_ms),
            transmissions: Vec::new(),
            active: vec![Vec::new(); n],
            tx_intervals: vec![Vec::new(); n],
            busy_until: vec![0; n],
            relay: false,
            relay_confirmed: false,
            seen_data: vec![Vec::new(); n],
            trace_enabled,
            trace: Trace::default(),
            outcome_traced: vec![false; n],
            first_contact_ms: None,
            collisions: 0,
        };
        // Stagger the first cycles deterministically so robots do not start
        // in lockstep.
        for r in 0..n {
            let jitter = ms_to_ticks(engine.draw_range(r, 0.0, 10.0));
            engine.schedule(jitter, r, EventKind::Cycle);
        }
        Ok(engine)
    }

    fn draw_range(&mut self, robot: usize, lo: f64, hi: f64) -> f64 {
        use rand::Rng;
        self.rngs[robot].gen_range(lo..=hi)
    }

    fn schedule(&mut self, time: u64, robot: usize, kind: EventKind) {
        self.queue.push(Reverse(Event {
            time,
            robot,
            seq: self.seq,
            kind,
        }));
        self.seq += 1;
    }

    fn now_ms(&self) -> f64 {
        ticks_to_ms(self.now)
    }

    fn trace_event(
        &mut self,
        robot: usize,
        event: &str,
        peer: Option<usize>,
        channel: Option<usize>,
        detail: &str,
    ) {
        if !self.trace_enabled {
            return;
        }
        let peer = peer.map_or(String::from("-"), |p| p.to_string());
        let channel = channel.map_or(String::from("-"), |c| c.to_string());
        self.trace.events.push(format!(
            "{},{},{},{},{},{}",
            fmt_ms(self.now),
            robot,
            event,
            peer,
            channel,
            detail
        ));
    }

    /// Runs the event loop to the configured duration (or queue exhaustion).
    pub fn run(&mut self) {
        while let Some(&Reverse(ev)) = self.queue.peek() {
            if ev.time > self.duration {
                break;
            }
            let Some(Reverse(ev)) = self.queue.pop() else { break };
            self.now = ev.time;
            match ev.kind {
                EventKind::Cycle => self.handle_cycle(ev.robot),
                EventKind::TimerExpiry => self.handle_timer(ev.robot),
                EventKind::TxEnd { tx } => self.handle_tx_end(tx),
            }
        }
        self.now = self.duration;
    }

    /// Convenience: run until `predicate` holds, checking after every event.
    pub fn run_until<F: FnMut(&Engine) -> bool>(&mut self, mut predicate: F) {
        while let Some(&Reverse(ev)) = self.queue.peek() {
            if ev.time > self.duration || predicate(self) {
                break;
            }
            let Some(Reverse(ev)) = self.queue.pop() else { break };
            self.now = ev.time;
            match ev.kind {
                EventKind::Cycle => self.handle_cycle(ev.robot),
                EventKind::TimerExpiry => self.handle_timer(ev.robot),
                EventKind::TxEnd { tx } => self.handle_tx_end(tx),
            }
        }
    }

    fn arm_timer(&mut self, robot: usize) {
        if let Some(t) = self.controllers[robot].next_timer_ms() {
            let ticks = ms_to_ticks(t).max(self.now);
            self.schedule(ticks, robot, EventKind::TimerExpiry);
        }
    }

    fn handle_timer(&mut self, robot: usize) {
        // Stale timers (already rescheduled or cleared) fall through the
        // deadline check inside the controller.
        let now_ms = self.now_ms();
        let emissions = self.controllers[robot].on_timer(now_ms);
        if !emissions.is_empty() {
            self.trace_event(robot, "stage_timeout", None, None, "retry");
        }
        self.execute_emissions(robot, self.now, &emissions);
        self.after_controller_change(robot);
        self.arm_timer(robot);
    }

    fn handle_cycle(&mut self, robot: usize) {
        // Dwell: while a decodable train is still arriving, the robot stays
        // in receive and defers its own cycle past the train's end.
        let dwell_until = self.active[robot]
            .iter()
            .filter_map(|&t| {
                let tx = &self.transmissions[t];
                let inc = tx.incidences.iter().find(|i| i.rx_robot == robot)?;
                (inc.decodable && tx.t1 > self.now).then_some(tx.t1)
            })
            .max();
        if let Some(t1) = dwell_until {
            self.schedule(t1 + 1, robot, EventKind::Cycle);
            return;
        }
        // Undecodable energy on some channel costs the polling receiver the
        // full all-channel wait before the cycle proceeds.
        let energy_stall = !self.boards[robot].hardware_pulse_detect
            && self.active[robot].iter().any(|&t| {
                let tx = &self.transmissions[t];
                tx.t1 > self.now
                    && tx
                        .incidences
                        .iter()
                        .any(|i| i.rx_robot == robot && i.energy && !i.decodable)
            });

        let now_ms = self.now_ms();
        let out = {
            let controller = &mut self.controllers[robot];
            let rng = &mut self.rngs[robot];
            controller.step_cycle(now_ms, rng)
        };
        if out.rotate_deg != 0.0 {
            self.world.robots[robot].pose.rotate(out.rotate_deg);
            let heading = self.world.robots[robot].pose.heading;
            self.trace_event(robot, "motion", None, None, &format!("heading={heading:.1}"));
        }
        let stall_ms = if energy_stall {
            crate::protocol::RECEIVE_WORST_CASE_MS - crate::protocol::RECEIVE_SCAN_BUDGET_MS
        } else {
            0.0
        };
        let last_end = self.execute_emissions(robot, self.now + ms_to_ticks(stall_ms), &out.emissions);
        self.after_controller_change(robot);
        self.arm_timer(robot);

        let budget: f64 = out.phases.iter().map(|p| p.budget_ms).sum();
        let mut next = self.now + ms_to_ticks(out.cycle_length_ms.max(budget + stall_ms));
        if let Some(end) = last_end {
            next = next.max(end + 1);
        }
        self.schedule(next, robot, EventKind::Cycle);
    }

    /// Transmits the controller's emissions, serialized (a robot emits on
    /// one channel at a time) and pushed past any transmission in progress.
    /// Returns the final tick of the last pulse, if any.
    fn execute_emissions(&mut self, robot: usize, base: u64, emissions: &[Emission]) -> Option<u64> {
        let mut last_end = None;
        for e in emissions {
            let mut start = base + ms_to_ticks(e.at_offset_ms);
            if start < self.busy_until[robot] {
                start = self.busy_until[robot] + ms_to_ticks(self.codec.gap_ms);
            }
            let end = self.transmit(robot, start, e);
            last_end = Some(last_end.map_or(end, |l: u64| l.max(end)));
        }
        last_end
    }

    fn transmit(&mut self, robot: usize, start: u64, e: &Emission) -> u64 {
        let start_ms = ticks_to_ms(start);
        let (train, label, detail) = match e.kind {
            EmissionKind::Control(kind) => (
                encode_control(kind, &self.codec, start_ms, e.channel),
                match kind {
                    crate::codec::ControlKind::Request => "tx_request",
                    crate::codec::ControlKind::ReadyOrAck => "tx_ready_or_ack",
                },
                String::new(),
            ),
            EmissionKind::Frame(f) => (
                encode_frame_raw(f.data, f.parity, &self.codec, start_ms, e.channel),
                "tx_frame",
                format!("data=0x{:02X}", f.data),
            ),
            EmissionKind::Proximity => (
                encode_proximity(&self.codec, start_ms, e.channel),
                "tx_proximity",
                String::new(),
            ),
        };
        let t0 = ms_to_ticks(train.start_ms());
        let t1 = ms_to_ticks(train.end_ms());
        self.busy_until[robot] = self.busy_until[robot].max(t1);
        self.tx_intervals[robot].push((t0, t1));
        if self.tx_intervals[robot].len() > 64 {
            self.tx_intervals[robot].remove(0);
        }
        if self.trace_enabled {
            for p in &train.pulses {
                let on = ms_to_ticks(p.start_ms);
                let off = ms_to_ticks(p.end_ms());
                self.trace
                    .pulses
                    .push(format!("{},{},{},on", fmt_ms(on), robot, e.channel));
                self.trace
                    .pulses
                    .push(format!("{},{},{},off", fmt_ms(off), robot, e.channel));
            }
        }
        self.trace_event(robot, label, None, Some(e.channel), &detail);

        let incidences = self.compute_incidences(robot, e.channel);
        let tx_index = self.transmissions.len();
        for inc in &incidences {
            self.active[inc.rx_robot].push(tx_index);
        }
        self.transmissions.push(Transmission {
            tx_robot: robot,
            train,
            t0,
            t1,
            incidences,
        });
        self.schedule(t1, robot, EventKind::TxEnd { tx: tx_index });
        t1
    }

    fn compute_incidences(&self, robot: usize, tx_channel: usize) -> Vec<Incidence> {
        let tx_end = LinkEnd {
            pose: self.world.robots[robot].pose,
            channel: tx_channel,
            board: &self.boards[robot],
            world_robot: Some(robot),
        };
        let mut out = Vec::new();
        for q in 0..self.controllers.len() {
            if q == robot {
                continue;
            }
            let q_pose = self.world.robots[q].pose;
            let (best_ch, best_v) = crate::channel::best_rx_channel(
                &self.world,
                &self.chan_params,
                &self.layout,
                &tx_end,
                q_pose,
                &self.boards[q],
                Some(q),
            );
            let (channel, volts) = if self.boards[q].hardware_pulse_detect {
                (best_ch, best_v)
            } else {
                let polled = self.controllers[q].rx_channel;
                let rx = LinkEnd {
                    pose: q_pose,
                    channel: polled,
                    board: &self.boards[q],
                    world_robot: Some(q),
                };
                (
                    polled,
                    crate::channel::signal_volts(
                        &self.world,
                        &self.chan_params,
                        &self.layout,
                        &tx_end,
                        &rx,
                    ),
                )
            };
            let decodable = volts >= self.chan_params.detect_threshold_v;
            let energy = best_v >= self.chan_params.detect_threshold_v;
            if decodable || energy {
                out.push(Incidence {
                    rx_robot: q,
                    channel,
                    volts,
                    decodable,
                    energy,
                });
            }
        }
        out
    }

    fn handle_tx_end(&mut self, tx_index: usize) {
        let (incidences, t0, t1, tx_robot) = {
            let tx = &self.transmissions[tx_index];
            (tx.incidences.clone(), tx.t0, tx.t1, tx.tx_robot)
        };
        for inc in &incidences {
            let q = inc.rx_robot;
            if !inc.decodable {
                continue;
            }
            // Half-duplex: a robot transmitting during the train hears none
            // of it.
            let self_blocked = self.tx_intervals[q]
                .iter()
                .any(|&(a, b)| a < t1 && t0 < b);
            if self_blocked {
                self.trace_event(q, "rx_blocked", Some(tx_robot), Some(inc.channel), "half_duplex");
                continue;
            }
            // Collision: another supra-threshold transmission overlapped on
            // the same decode channel.
            let collided = self.transmissions.iter().enumerate().any(|(j, other)| {
                j != tx_index
                    && other.t0 < t1
                    && t0 < other.t1
                    && other.incidences.iter().any(|i| {
                        i.rx_robot == q
                            && i.channel == inc.channel
                            && i.volts >= self.chan_params.detect_threshold_v
                    })
            });
            if collided {
                self.collisions += 1;
                self.trace_event(q, "collision", Some(tx_robot), Some(inc.channel), "");
                continue;
            }
            let train = self.transmissions[tx_index].train.clone();
            let events = decode_stream(&train, &self.codec);
            for ev in &events {
                self.deliver_event(q, tx_robot, inc.channel, ev);
            }
        }
        // Retire the transmission from every active list.
        for lists in self.active.iter_mut() {
            lists.retain(|&t| t != tx_index);
        }
    }

    fn deliver_event(&mut self, q: usize, tx_robot: usize, channel: usize, ev: &LinkEvent) {
        let label = match ev {
            LinkEvent::Frame(_) => "frame_rx",
            LinkEvent::ParityError => "parity_error",
            LinkEvent::Request => "request_rx",
            LinkEvent::ReadyOrAck => "ready_or_ack_rx",
            LinkEvent::ProximityEcho => "proximity_echo",
            LinkEvent::Garbage => "garbage",
        };
        let detail = match ev {
            LinkEvent::Frame(f) => format!("data=0x{:02X}", f.data),
            _ => String::new(),
        };
        self.trace_event(q, label, Some(tx_robot), Some(channel), &detail);

        // A Ready answering a live Request is the moment of contact.
        if matches!(ev, LinkEvent::ReadyOrAck)
            && self.controllers[q].state == crate::protocol::ProtocolState::ReqSent
            && self.first_contact_ms.is_none()
        {
            self.first_contact_ms = Some(self.now_ms());
            self.trace_event(q, "contact", Some(tx_robot), Some(channel), "");
        }

        let now_ms = self.now_ms();
        let replies = self.controllers[q].on_link_event(now_ms, ev, channel, Some(tx_robot));
        let base = self.now + ms_to_ticks(TURNAROUND_MS);
        self.execute_emissions(q, base, &replies);
        self.after_controller_change(q);
        self.arm_timer(q);
    }

    /// Relay plumbing and terminal-state bookkeeping after any controller
    /// interaction.
    fn after_controller_change(&mut self, q: usize) {
        use crate::protocol::{DeliveryOutcome, ProtocolState};
        if self.relay {
            // Novel payloads get re-broadcast indefinitely; duplicates are
            // dropped by the data-byte dedup.
            let novel: Vec<u8> = self.controllers[q]
                .inbox
                .iter()
                .map(|r| r.frame.data)
                .filter(|d| !self.seen_data[q].contains(d))
                .collect();
            let now = self.now_ms();
            for data in novel {
                let frame = crate::codec::Frame::new(data);
                let c = &mut self.controllers[q];
                if c.is_terminal() {
                    c.reset();
                }
                let sent = if self.relay_confirmed {
                    c.send_with_confirmation(frame, now, now + 10_000_000.0)
                } else {
                    c.send_without_confirmation(frame, u32::MAX)
                };
                // A controller mid-delivery refuses a new payload; leave the
                // data unmarked so a later reception retries the adoption.
                if sent.is_ok() {
                    self.seen_data[q].push(data);
                    self.trace_event(q, "relay_adopt", None, None, &format!("data=0x{data:02X}"));
                }
            }
        }
        let delivered = {
            let c = &self.controllers[q];
            c.state == ProtocolState::Done && c.outcome == Some(DeliveryOutcome::Delivered)
        };
        if delivered {
            if !self.outcome_traced[q] {
                self.outcome_traced[q] = true;
                self.trace_event(q, "delivered", None, None, "");
            }
            if self.relay {
                // Keep relaying the same payload after a confirmed delivery.
                if let Some(&data) = self.seen_data[q].first() {
                    let now = self.now_ms();
                    let c = &mut self.controllers[q];
                    c.reset();
                    let _ = c.send_with_confirmation(
                        crate::codec::Frame::new(data),
                        now,
                        now + 10_000_000.0,
                    );
                }
            }
        } else if self.controllers[q].state == ProtocolState::Failed {
            if !self.outcome_traced[q] {
                self.outcome_traced[q] = true;
                self.trace_event(q, "failed", None, None, "");
            }
        } else {
            self.outcome_traced[q] = false;
        }
    }

    /// Seeds a relay payload at `robot`, using confirmed or unconfirmed
    /// delivery, and marks it as already seen there.
    pub fn inject_relay_message(&mut self, robot: usize, data: u8, confirmed: bool) -> Result<()> {
        self.relay = true;
        self.relay_confirmed = confirmed;
        self.seen_data[robot].push(data);
        let frame = crate::codec::Frame::new(data);
        if confirmed {
            self.controllers[robot].send_with_confirmation(frame, 0.0, 10_000_000.0)?;
        } else {
            self.controllers[robot].send_without_confirmation(frame, u32::MAX)?;
        }
        Ok(())
    }

    /// First time `robot` decoded a frame carrying `data`, in milliseconds.
    pub fn first_reception_ms(&self, robot: usize, data: u8) -> Option<f64> {
        self.controllers[robot]
            .inbox
            .iter()
            .find(|r| r.frame.data == data)
            .map(|r| r.time_ms)
    }
}
