//! Per-robot controller: the autonomy cycle and both delivery protocols.
//!
//! Each robot runs a fixed-order cycle of phases — proximity sensing,
//! receive scan, send, decide, act — whose total length is drawn per cycle
//! from a configured range. Two delivery modes exist:
//!
//! * **Unconfirmed**: the frame is simply transmitted `n` times on the
//!   rotating transmit channel; completion is declared after the n-th
//!   emission regardless of reception.
//! * **Confirmed**: a four-exchange handshake (Request, Ready, Data, Ack),
//!   each stage guarded by a timeout with retry until a caller deadline.
//!
//! The controller is a pure state machine: it never touches the clock or
//! the world. The event engine (or a test) feeds it cycle boundaries, link
//! events, and timer expirations, and executes the emissions it returns.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{ControlKind, Frame};
use crate::error::{Result, SimError};

pub const DEFAULT_STAGE_TIMEOUT_MS: f64 = 150.0;
pub const PROXIMITY_BUDGET_MS: f64 = 1.0;
/// Six 8-bit conversions at the ADC's conversion rate.
pub const RECEIVE_SCAN_BUDGET_MS: f64 = 1.2;
/// Detecting energy on some channel without decoding a message costs a full
/// all-channel wait on top of the scan itself.
pub const RECEIVE_WORST_CASE_MS: f64 = 12.0 + RECEIVE_SCAN_BUDGET_MS;
pub const DECIDE_BUDGET_MS: f64 = 0.5;
pub const ACT_BUDGET_MS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolState {
    Idle,
    ReqSent,
    ReadySent,
    DataSent,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    ProximitySense,
    Receive,
    Send,
    Decide,
    Act,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclePhase {
    pub phase: PhaseKind,
    pub budget_ms: f64,
}

/// Final outcome of a confirmed delivery attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOutcome {
    Delivered,
    Failed,
}

/// Something the controller wants transmitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmissionKind {
    Control(ControlKind),
    Frame(Frame),
    Proximity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    /// Offset from the triggering instant (cycle start or event arrival).
    pub at_offset_ms: f64,
    pub kind: EmissionKind,
    pub channel: usize,
}

/// Everything one cycle produces for the engine to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    pub phases: Vec<CyclePhase>,
    pub emissions: Vec<Emission>,
    /// Heading change applied during the Act phase.
    pub rotate_deg: f64,
    /// Drawn cycle length; the engine extends it if emissions run longer.
    pub cycle_length_ms: f64,
}

/// A successfully decoded frame, as stored in the inbox.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub frame: Frame,
    pub time_ms: f64,
    pub peer: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub channel_count: usize,
    /// Start-to-start interval between resends of the same message.
    pub resend_range_ms: (f64, f64),
    pub cycle_range_ms: (f64, f64),
    pub stage_timeout_ms: f64,
    /// Receive phase costs nothing when a hardware pulse detector raises
    /// interrupts; otherwise the 6-channel ADC scan is paid every cycle.
    pub hardware_pulse_detect: bool,
    pub proximity_enabled: bool,
    /// Heading change per cycle; decorrelates chassis blind arcs over time.
    pub spin_deg_per_cycle: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            channel_count: 6,
            resend_range_ms: (10.0, 100.0),
            cycle_range_ms: (10.0, 150.0),
            stage_timeout_ms: DEFAULT_STAGE_TIMEOUT_MS,
            hardware_pulse_detect: false,
            proximity_enabled: false,
            spin_deg_per_cycle: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_count == 0 {
            return Err(SimError::param("channel_count", "must be at least 1"));
        }
        let ok = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0;
        if !ok(self.resend_range_ms) {
            return Err(SimError::param("resend_range_ms", "must be a positive range"));
        }
        if !ok(self.cycle_range_ms) {
            return Err(SimError::param("cycle_range_ms", "must be a positive range"));
        }
        if self.stage_timeout_ms <= 0.0 {
            return Err(SimError::param("stage_timeout_ms", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeliveryMode {
    None,
    Unconfirmed,
    Confirmed,
}

#[derive(Debug, Clone)]
pub struct RobotController {
    pub robot_id: usize,
    pub state: ProtocolState,
    pub tx_channel: usize,
    pub rx_channel: usize,
    pub outbox: VecDeque<Frame>,
    pub inbox: Vec<Reception>,
    pub retry_count: u32,
    pub config: ControllerConfig,
    mode: DeliveryMode,
    /// Remaining repeat emissions for unconfirmed delivery.
    repeats_remaining: u32,
    pub unconfirmed_completions: u32,
    /// Acting as the responder side of a handshake.
    responder: bool,
    /// Channel the handshake is parked on (where the Request was heard or
    /// sent); both sides answer on it until the exchange resolves.
    parked_channel: Option<usize>,
    pub peer: Option<usize>,
    /// Deadline of the current handshake stage.
    stage_deadline_ms: Option<f64>,
    /// Caller deadline for confirmed delivery.
    caller_deadline_ms: Option<f64>,
    /// Earliest time the next spontaneous send may start.
    next_send_at_ms: f64,
    pub outcome: Option<DeliveryOutcome>,
    pub proximity_echoes: u32,
}

impl RobotController {
    pub fn new(robot_id: usize, config: ControllerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channel_count;
        Ok(RobotController {
            robot_id,
            state: ProtocolState::Idle,
            tx_channel: rng.gen_range(0..c),
            rx_channel: rng.gen_range(0..c),
            outbox: VecDeque::new(),
            inbox: Vec::new(),
            retry_count: 0,
            config,
            mode: DeliveryMode::None,
            repeats_remaining: 0,
            unconfirmed_completions: 0,
            responder: false,
            parked_channel: None,
            peer: None,
            stage_deadline_ms: None,
            caller_deadline_ms: None,
            next_send_at_ms: 0.0,
            outcome: None,
            proximity_echoes: 0,
        })
    }

    /// Enqueues `repeats` fire-and-forget emissions of `frame`.
    pub fn send_without_confirmation(&mut self, frame: Frame, repeats: u32) -> Result<()> {
        if repeats == 0 {
            return Err(SimError::param("repeats", "must be at least 1"));
        }
        if self.mode == DeliveryMode::Confirmed && !self.is_terminal() {
            return Err(SimError::param("controller", "confirmed delivery in progress"));
        }
        self.mode = DeliveryMode::Unconfirmed;
        self.outbox.push_back(frame);
        self.repeats_remaining = repeats;
        self.outcome = None;
        Ok(())
    }

    /// Starts a confirmed delivery that must finish by `deadline_ms`.
    pub fn send_with_confirmation(
        &mut self,
        frame: Frame,
        now_ms: f64,
        deadline_ms: f64,
    ) -> Result<()> {
        if deadline_ms <= now_ms {
            return Err(SimError::param("deadline_ms", "must lie in the future"));
        }
        self.mode = DeliveryMode::Confirmed;
        self.outbox.push_back(frame);
        self.caller_deadline_ms = Some(deadline_ms);
        self.retry_count = 0;
        self.outcome = None;
        Ok(())
    }

    /// Explicitly leaves a terminal state; the only way out of Done/Failed.
    pub fn reset(&mut self) {
        self.state = ProtocolState::Idle;
        self.mode = DeliveryMode::None;
        self.responder = false;
        self.parked_channel = None;
        self.peer = None;
        self.stage_deadline_ms = None;
        self.caller_deadline_ms = None;
        self.retry_count = 0;
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.state, ProtocolState::Done | ProtocolState::Failed)
    }

    /// Earliest pending named deadline, for the engine's timer queue.
    pub fn next_timer_ms(&self) -> Option<f64> {
        self.stage_deadline_ms
    }

    fn advance_tx(&mut self) {
        self.tx_channel = (self.tx_channel + 1) % self.config.channel_count;
    }

    /// Re-aims the transmitter at a uniformly drawn channel. Spontaneous
    /// sends use this instead of the deterministic +1 step so two searching
    /// robots cannot lock their rotations into a never-matching phase.
    fn retarget_tx(&mut self, rng: &mut ChaCha8Rng) {
        self.tx_channel = rng.gen_range(0..self.config.channel_count);
    }

    fn receive_budget(&self) -> f64 {
        if self.config.hardware_pulse_detect {
            0.0
        } else {
            RECEIVE_SCAN_BUDGET_MS
        }
    }

    /// Runs one autonomy cycle starting at `now_ms`.
    pub fn step_cycle(&mut self, now_ms: f64, rng: &mut ChaCha8Rng) -> CycleOutput {
        // Cycle-boundary safety net for stage timeouts; the engine normally
        // fires them through `on_timer` at the exact deadline.
        let mut emissions = Vec::new();
        if let Some(t) = self.stage_deadline_ms {
            if now_ms >= t {
                emissions.extend(self.on_timer(now_ms));
            }
        }

        let mut phases = vec![CyclePhase {
            phase: PhaseKind::ProximitySense,
            budget_ms: if self.config.proximity_enabled {
                PROXIMITY_BUDGET_MS
            } else {
                0.0
            },
        }];
        if self.config.proximity_enabled {
            emissions.push(Emission {
                at_offset_ms: 0.0,
                kind: EmissionKind::Proximity,
                channel: self.tx_channel,
            });
        }
        phases.push(CyclePhase {
            phase: PhaseKind::Receive,
            budget_ms: self.receive_budget(),
        });

        let send_offset: f64 = phases.iter().map(|p| p.budget_ms).sum();
        let mut send_budget = 0.0;
        if now_ms >= self.next_send_at_ms {
            if let Some(e) = self.spontaneous_send(now_ms, send_offset, rng) {
                emissions.push(e);
                send_budget = 0.0; // airtime accounted by the engine
            }
        }
        phases.push(CyclePhase {
            phase: PhaseKind::Send,
            budget_ms: send_budget,
        });
        phases.push(CyclePhase {
            phase: PhaseKind::Decide,
            budget_ms: DECIDE_BUDGET_MS,
        });
        phases.push(CyclePhase {
            phase: PhaseKind::Act,
            budget_ms: ACT_BUDGET_MS,
        });

        // The polled channel rotates every cycle unless a handshake has
        // parked it where the peer is known to answer.
        if self.parked_channel.is_none() {
            self.rx_channel = (self.rx_channel + 1) % self.config.channel_count;
        }

        let floor: f64 = phases.iter().map(|p| p.budget_ms).sum();
        let drawn = rng.gen_range(self.config.cycle_range_ms.0..=self.config.cycle_range_ms.1);
        CycleOutput {
            phases,
            emissions,
            rotate_deg: self.config.spin_deg_per_cycle,
            cycle_length_ms: drawn.max(floor),
        }
    }

    fn spontaneous_send(
        &mut self,
        now_ms: f64,
        offset_ms: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<Emission> {
        match self.mode {
            DeliveryMode::Unconfirmed if self.repeats_remaining > 0 => {
                let frame = *self.outbox.front()?;
                self.repeats_remaining -= 1;
                if self.repeats_remaining == 0 {
                    self.outbox.pop_front();
                    self.unconfirmed_completions += 1;
                    self.mode = DeliveryMode::None;
                }
                let e = Emission {
                    at_offset_ms: offset_ms,
                    kind: EmissionKind::Frame(frame),
                    channel: self.tx_channel,
                };
                self.retarget_tx(rng);
                self.next_send_at_ms = now_ms + self.draw_resend(rng);
                Some(e)
            }
            DeliveryMode::Confirmed
                if self.state == ProtocolState::Idle && !self.outbox.is_empty() =>
            {
                Some(self.start_request(now_ms, offset_ms, rng))
            }
            // Still knocking: while no Ready has arrived the Request is
            // repeated at the resend cadence on the next channel, without
            // waiting out the stage timeout.
            DeliveryMode::Confirmed if self.state == ProtocolState::ReqSent => {
                self.parked_channel = Some(self.tx_channel);
                self.rx_channel = self.tx_channel;
                let e = Emission {
                    at_offset_ms: offset_ms,
                    kind: EmissionKind::Control(ControlKind::Request),
                    channel: self.tx_channel,
                };
                self.retarget_tx(rng);
                self.next_send_at_ms = now_ms + self.draw_resend(rng);
                Some(e)
            }
            _ => None,
        }
    }

    fn draw_resend(&self, rng: &mut ChaCha8Rng) -> f64 {
        rng.gen_range(self.config.resend_range_ms.0..=self.config.resend_range_ms.1)
    }

    fn start_request(&mut self, now_ms: f64, offset_ms: f64, rng: &mut ChaCha8Rng) -> Emission {
        self.state = ProtocolState::ReqSent;
        self.responder = false;
        self.parked_channel = Some(self.tx_channel);
        // Listen where we transmitted: the peer answers on the channel it
        // heard, which for flat sectors is the reverse of the same path.
        self.rx_channel = self.tx_channel;
        self.stage_deadline_ms = Some(now_ms + offset_ms + self.config.stage_timeout_ms);
        let e = Emission {
            at_offset_ms: offset_ms,
            kind: EmissionKind::Control(ControlKind::Request),
            channel: self.tx_channel,
        };
        self.retarget_tx(rng);
        self.next_send_at_ms = now_ms + self.draw_resend(rng);
        e
    }

    /// Handles a decoded link event heard on `channel` at `now_ms`.
    /// Returns reply emissions (offsets relative to `now_ms`).
    pub fn on_link_event(
        &mut self,
        now_ms: f64,
        event: &crate::codec::LinkEvent,
        channel: usize,
        peer: Option<usize>,
    ) -> Vec<Emission> {
        use crate::codec::LinkEvent as E;
        match event {
            E::Request => self.on_request(now_ms, channel, peer),
            E::ReadyOrAck => self.on_ready_or_ack(now_ms, channel),
            E::Frame(frame) => self.on_frame(now_ms, *frame, channel, peer),
            E::ParityError => Vec::new(), // sender retries on its own timeout
            E::ProximityEcho => {
                self.proximity_echoes += 1;
                Vec::new()
            }
            E::Garbage => Vec::new(),
        }
    }

    fn become_responder(&mut self, now_ms: f64, channel: usize, peer: Option<usize>) -> Vec<Emission> {
        self.state = ProtocolState::ReadySent;
        self.responder = true;
        self.parked_channel = Some(channel);
        self.rx_channel = channel;
        self.peer = peer;
        self.stage_deadline_ms = Some(now_ms + self.config.stage_timeout_ms);
        vec![Emission {
            at_offset_ms: 0.0,
            kind: EmissionKind::Control(ControlKind::ReadyOrAck),
            channel,
        }]
    }

    fn on_request(&mut self, now_ms: f64, channel: usize, peer: Option<usize>) -> Vec<Emission> {
        match self.state {
            ProtocolState::Idle => self.become_responder(now_ms, channel, peer),
            // Hearing a Request while requesting: yield and serve the peer.
            // If both sides hear each other at once, both yield and the
            // stage timeout returns them to requesting.
            ProtocolState::ReqSent => self.become_responder(now_ms, channel, peer),
            // A repeated Request from a retrying peer: answer again.
            ProtocolState::ReadySent => {
                self.stage_deadline_ms = Some(now_ms + self.config.stage_timeout_ms);
                vec![Emission {
                    at_offset_ms: 0.0,
                    kind: EmissionKind::Control(ControlKind::ReadyOrAck),
                    channel,
                }]
            }
            _ => Vec::new(),
        }
    }

    fn on_ready_or_ack(&mut self, now_ms: f64, channel: usize) -> Vec<Emission> {
        match self.state {
            // Ready: the peer accepted our Request; send the data frame.
            ProtocolState::ReqSent => {
                let Some(frame) = self.outbox.front().copied() else {
                    return Vec::new();
                };
                self.state = ProtocolState::DataSent;
                self.parked_channel = Some(channel);
                self.rx_channel = channel;
                self.stage_deadline_ms = Some(now_ms + self.config.stage_timeout_ms);
                vec![Emission {
                    at_offset_ms: 0.0,
                    kind: EmissionKind::Frame(frame),
                    channel,
                }]
            }
            // Ack: delivery confirmed.
            ProtocolState::DataSent => {
                self.outbox.pop_front();
                self.state = ProtocolState::Done;
                self.outcome = Some(DeliveryOutcome::Delivered);
                self.mode = DeliveryMode::None;
                self.responder = false;
                self.parked_channel = None;
                self.stage_deadline_ms = None;
                self.caller_deadline_ms = None;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn on_frame(
        &mut self,
        now_ms: f64,
        frame: Frame,
        channel: usize,
        peer: Option<usize>,
    ) -> Vec<Emission> {
        self.inbox.push(Reception {
            frame,
            time_ms: now_ms,
            peer,
        });
        if self.responder && self.state == ProtocolState::ReadySent {
            // Acknowledge and wind the exchange down; the responder side
            // has no caller waiting on an outcome.
            self.state = ProtocolState::Idle;
            self.responder = false;
            self.parked_channel = None;
            self.peer = None;
            self.stage_deadline_ms = None;
            return vec![Emission {
                at_offset_ms: 0.0,
                kind: EmissionKind::Control(ControlKind::ReadyOrAck),
                channel,
            }];
        }
        Vec::new()
    }

    /// Fires the pending stage timeout. Requesters retry (or fail once the
    /// caller deadline has passed); responders abandon the exchange.
    pub fn on_timer(&mut self, now_ms: f64) -> Vec<Emission> {
        let Some(deadline) = self.stage_deadline_ms else {
            return Vec::new();
        };
        if now_ms + 1e-9 < deadline {
            return Vec::new();
        }
        self.stage_deadline_ms = None;
        match self.state {
            ProtocolState::ReqSent | ProtocolState::DataSent => {
                self.retry_count += 1;
                if let Some(d) = self.caller_deadline_ms {
                    if now_ms + 1e-9 >= d {
                        self.state = ProtocolState::Failed;
                        self.outcome = Some(DeliveryOutcome::Failed);
                        self.mode = DeliveryMode::None;
                        self.parked_channel = None;
                        return Vec::new();
                    }
                }
                // Fresh attempt from the top of the handshake, on the next
                // channel in the rotation.
                self.state = ProtocolState::Idle;
                self.parked_channel = None;
                self.state = ProtocolState::ReqSent;
                self.parked_channel = Some(self.tx_channel);
                self.rx_channel = self.tx_channel;
                self.stage_deadline_ms = Some(now_ms + self.config.stage_timeout_ms);
                let e = Emission {
                    at_offset_ms: 0.0,
                    kind: EmissionKind::Control(ControlKind::Request),
                    channel: self.tx_channel,
                };
                self.advance_tx();
                vec![e]
            }
            ProtocolState::ReadySent => {
                self.state = ProtocolState::Idle;
                self.responder = false;
                self.parked_channel = None;
                self.peer = None;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

/// How the two robots' channel selections evolve relative to each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationPolicy {
    /// Both sides rotate round-robin from independent uniform phases; the
    /// per-attempt match probability is `1/(c_tx * c_rx)`.
    IndependentUniform,
    /// Phases advance in lockstep with a fixed offset: the match either
    /// happens every `c` attempts or never, depending on whether the offset
    /// lines the facing channels up.
    PhaseLocked { offset: usize, aligned: bool },
}

/// Probability that, on one attempt, the transmitter emits on the channel
/// facing the receiver while the receiver polls the channel facing back.
pub fn rendezvous_probability(
    tx_channels: usize,
    rx_channels: usize,
    policy: RotationPolicy,
) -> Result<f64> {
    if tx_channels == 0 || rx_channels == 0 {
        return Err(SimError::param("channels", "counts must be at least 1"));
    }
    match policy {
        RotationPolicy::IndependentUniform => Ok(1.0 / (tx_channels as f64 * rx_channels as f64)),
        RotationPolicy::PhaseLocked { aligned, .. } => {
            if tx_channels != rx_channels {
                return Err(SimError::param(
                    "channels",
                    "phase-locked rotation needs equal channel counts",
                ));
            }
            Ok(if aligned { 1.0 / tx_channels as f64 } else { 0.0 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::LinkEvent;
    use crate::rngutil::stream_rng;

    fn ctl(id: usize, cfg: ControllerConfig) -> RobotController {
        let mut rng = stream_rng(99, id as u64);
        RobotController::new(id, cfg, &mut rng).unwrap()
    }

    fn quiet_cfg() -> ControllerConfig {
        ControllerConfig {
            resend_range_ms: (10.0, 10.0),
            cycle_range_ms: (10.0, 10.0),
            ..ControllerConfig::default()
        }
    }

    #[test]
    fn rendezvous_probabilities() {
        let p = rendezvous_probability(6, 6, RotationPolicy::IndependentUniform).unwrap();
        assert!((p - 1.0 / 36.0).abs() < 1e-15);
        let p = rendezvous_probability(1, 1, RotationPolicy::IndependentUniform).unwrap();
        assert_eq!(p, 1.0);
        // 4x4: enumerate all 16 phase pairs as an oracle.
        let mut hits = 0;
        for tx in 0..4 {
            for rx in 0..4 {
                if tx == 2 && rx == 1 {
                    hits += 1;
                }
            }
        }
        let p = rendezvous_probability(4, 4, RotationPolicy::IndependentUniform).unwrap();
        assert!((p - hits as f64 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn idle_cycle_uses_minimum_budget_and_exact_scan_cost() {
        let mut c = ctl(0, quiet_cfg());
        let mut rng = stream_rng(1, 0);
        let out = c.step_cycle(0.0, &mut rng);
        assert!(out.emissions.is_empty());
        let receive = out
            .phases
            .iter()
            .find(|p| p.phase == PhaseKind::Receive)
            .unwrap();
        assert_eq!(receive.budget_ms, 1.2);
        let order: Vec<PhaseKind> = out.phases.iter().map(|p| p.phase).collect();
        assert_eq!(
            order,
            vec![
                PhaseKind::ProximitySense,
                PhaseKind::Receive,
                PhaseKind::Send,
                PhaseKind::Decide,
                PhaseKind::Act
            ]
        );
        assert!(out.cycle_length_ms >= 1.2);
    }

    #[test]
    fn hardware_detect_zeroes_receive_cost() {
        let mut c = ctl(
            0,
            ControllerConfig {
                hardware_pulse_detect: true,
                ..quiet_cfg()
            },
        );
        let mut rng = stream_rng(2, 0);
        let out = c.step_cycle(0.0, &mut rng);
        let receive = out
            .phases
            .iter()
            .find(|p| p.phase == PhaseKind::Receive)
            .unwrap();
        assert_eq!(receive.budget_ms, 0.0);
    }

    #[test]
    fn worst_case_all_channel_listen_is_13_2_ms() {
        assert!((RECEIVE_WORST_CASE_MS - 13.2).abs() < 1e-12);
    }

    #[test]
    fn channels_rotate_round_robin() {
        let mut c = ctl(0, quiet_cfg());
        let mut rng = stream_rng(3, 0);
        let start_rx = c.rx_channel;
        for i in 1..=13u64 {
            c.step_cycle(i as f64 * 10.0, &mut rng);
            assert_eq!(c.rx_channel, (start_rx + i as usize) % 6);
        }
    }

    /// Drives two controllers over a lossless abstract medium and returns
    /// the over-the-air exchange log.
    fn run_handshake(a: &mut RobotController, b: &mut RobotController) -> Vec<EmissionKind> {
        fn as_event(kind: EmissionKind) -> Option<LinkEvent> {
            match kind {
                EmissionKind::Control(ControlKind::Request) => Some(LinkEvent::Request),
                EmissionKind::Control(ControlKind::ReadyOrAck) => Some(LinkEvent::ReadyOrAck),
                EmissionKind::Frame(f) => Some(LinkEvent::Frame(f)),
                EmissionKind::Proximity => None,
            }
        }
        // Lossless, always-heard medium: channel filtering is the engine's
        // job, not under test here.
        fn step_one(
            me: &mut RobotController,
            them: &mut RobotController,
            rng: &mut ChaCha8Rng,
            now: f64,
            log: &mut Vec<EmissionKind>,
        ) {
            let out = me.step_cycle(now, rng);
            let mut pending: Vec<Emission> = out
                .emissions
                .into_iter()
                .filter(|e| e.kind != EmissionKind::Proximity)
                .collect();
            while let Some(e) = pending.pop() {
                log.push(e.kind);
                let Some(event) = as_event(e.kind) else { continue };
                let replies = them.on_link_event(now, &event, e.channel, Some(me.robot_id));
                for r in replies {
                    log.push(r.kind);
                    let Some(ev) = as_event(r.kind) else { continue };
                    pending.extend(me.on_link_event(now, &ev, r.channel, Some(them.robot_id)));
                }
            }
        }

        let mut rng_a = stream_rng(11, 0);
        let mut rng_b = stream_rng(11, 1);
        let mut log = Vec::new();
        let mut now = 0.0;
        for _ in 0..400 {
            step_one(a, b, &mut rng_a, now, &mut log);
            step_one(b, a, &mut rng_b, now, &mut log);
            if a.is_terminal() || b.is_terminal() {
                break;
            }
            now += 10.0;
        }
        log
    }

    #[test]
    fn zero_noise_confirmed_delivery_is_exactly_four_exchanges() {
        let mut a = ctl(0, quiet_cfg());
        let mut b = ctl(1, quiet_cfg());
        let frame = Frame::new(0x42);
        a.send_with_confirmation(frame, 0.0, 5_000.0).unwrap();
        let log = run_handshake(&mut a, &mut b);
        assert_eq!(a.state, ProtocolState::Done);
        assert_eq!(a.outcome, Some(DeliveryOutcome::Delivered));
        assert_eq!(
            log,
            vec![
                EmissionKind::Control(ControlKind::Request),
                EmissionKind::Control(ControlKind::ReadyOrAck),
                EmissionKind::Frame(frame),
                EmissionKind::Control(ControlKind::ReadyOrAck),
            ]
        );
        assert_eq!(b.inbox.len(), 1);
        assert_eq!(b.inbox[0].frame, frame);
        assert_eq!(b.inbox[0].peer, Some(0));
    }

    #[test]
    fn requester_yields_on_hearing_a_request() {
        // The common case: only one side hears the other's Request; the
        // hearer abandons its own attempt and serves the peer.
        let mut a = ctl(0, quiet_cfg());
        let mut b = ctl(7, quiet_cfg());
        a.send_with_confirmation(Frame::new(1), 0.0, 5_000.0).unwrap();
        b.send_with_confirmation(Frame::new(2), 0.0, 5_000.0).unwrap();
        let mut rng = stream_rng(5, 0);
        a.step_cycle(0.0, &mut rng);
        let eb = b.step_cycle(0.0, &mut rng);
        assert_eq!(a.state, ProtocolState::ReqSent);
        assert_eq!(b.state, ProtocolState::ReqSent);
        let req_b = eb.emissions[0];
        let ra = a.on_link_event(1.0, &LinkEvent::Request, req_b.channel, Some(7));
        assert_eq!(a.state, ProtocolState::ReadySent);
        assert_eq!(ra.len(), 1);
        // The exchange then completes with b as sender.
        let data = b.on_link_event(2.0, &LinkEvent::ReadyOrAck, ra[0].channel, Some(0));
        assert_eq!(b.state, ProtocolState::DataSent);
        let ack = a.on_link_event(
            3.0,
            &LinkEvent::Frame(Frame::new(2)),
            data[0].channel,
            Some(7),
        );
        assert_eq!(ack.len(), 1);
        b.on_link_event(4.0, &LinkEvent::ReadyOrAck, ack[0].channel, Some(0));
        assert_eq!(b.outcome, Some(DeliveryOutcome::Delivered));
    }

    #[test]
    fn mutual_yield_recovers_through_stage_timeout() {
        // Requests crossing in flight put both sides into ReadySent; the
        // stage timeout returns each to Idle so one can retry as requester.
        let cfg = quiet_cfg();
        let timeout = cfg.stage_timeout_ms;
        let mut a = ctl(0, cfg.clone());
        let mut b = ctl(7, cfg);
        a.send_with_confirmation(Frame::new(1), 0.0, 60_000.0).unwrap();
        b.send_with_confirmation(Frame::new(2), 0.0, 60_000.0).unwrap();
        let mut rng = stream_rng(5, 0);
        let ea = a.step_cycle(0.0, &mut rng);
        let eb = b.step_cycle(0.0, &mut rng);
        a.on_link_event(1.0, &LinkEvent::Request, eb.emissions[0].channel, Some(7));
        b.on_link_event(1.0, &LinkEvent::Request, ea.emissions[0].channel, Some(0));
        assert_eq!(a.state, ProtocolState::ReadySent);
        assert_eq!(b.state, ProtocolState::ReadySent);
        a.on_timer(1.0 + timeout + 1.0);
        b.on_timer(1.0 + timeout + 1.0);
        assert_eq!(a.state, ProtocolState::Idle);
        assert_eq!(b.state, ProtocolState::Idle);
        // Both still have the payload queued for a fresh attempt.
        assert!(!a.outbox.is_empty());
        assert!(!b.outbox.is_empty());
    }

    #[test]
    fn absent_receiver_fails_at_deadline_with_expected_retries() {
        let mut c = ctl(0, quiet_cfg());
        c.send_with_confirmation(Frame::new(9), 0.0, 600.0).unwrap();
        let mut rng = stream_rng(6, 0);
        let out = c.step_cycle(0.0, &mut rng);
        assert_eq!(out.emissions.len(), 1);
        assert_eq!(c.state, ProtocolState::ReqSent);
        // Fire every stage timeout exactly when due.
        let mut guard = 0;
        while !c.is_terminal() {
            let t = c.next_timer_ms().expect("live state must carry a timer");
            c.on_timer(t);
            guard += 1;
            assert!(guard < 100);
        }
        assert_eq!(c.state, ProtocolState::Failed);
        assert_eq!(c.outcome, Some(DeliveryOutcome::Failed));
        // floor(600 / 150) timeouts before the deadline cuts it off. The
        // request leaves after the 1.2 ms receive scan, so the 4th timeout
        // lands past 600 ms and converts the retry into Failed.
        assert_eq!(c.retry_count, 4);
    }

    #[test]
    fn terminal_states_are_sticky_until_reset() {
        let mut c = ctl(0, quiet_cfg());
        c.send_with_confirmation(Frame::new(9), 0.0, 100.0).unwrap();
        let mut rng = stream_rng(7, 0);
        c.step_cycle(0.0, &mut rng);
        while !c.is_terminal() {
            let t = c.next_timer_ms().unwrap();
            c.on_timer(t);
        }
        assert_eq!(c.state, ProtocolState::Failed);
        // No stimulus moves a terminal controller.
        let r = c.on_link_event(500.0, &LinkEvent::Request, 0, Some(3));
        assert!(r.is_empty());
        assert_eq!(c.state, ProtocolState::Failed);
        let out = c.step_cycle(510.0, &mut rng);
        assert!(out.emissions.is_empty());
        assert_eq!(c.state, ProtocolState::Failed);
        c.reset();
        assert_eq!(c.state, ProtocolState::Idle);
    }

    #[test]
    fn unconfirmed_send_completes_after_nth_emission() {
        let mut c = ctl(0, quiet_cfg());
        c.send_without_confirmation(Frame::new(0xAB), 3).unwrap();
        let mut rng = stream_rng(8, 0);
        let mut frames = 0;
        let mut now = 0.0;
        for _ in 0..20 {
            let out = c.step_cycle(now, &mut rng);
            frames += out
                .emissions
                .iter()
                .filter(|e| matches!(e.kind, EmissionKind::Frame(_)))
                .count();
            now += out.cycle_length_ms.max(10.0);
        }
        // Completion declared regardless of any receiver existing.
        assert_eq!(frames, 3);
        assert_eq!(c.unconfirmed_completions, 1);
        assert!(c.outbox.is_empty());
    }

    #[test]
    fn unconfirmed_single_shot_delivers_to_aligned_listener() {
        let mut tx = ctl(0, quiet_cfg());
        let mut rx = ctl(1, quiet_cfg());
        let frame = Frame::new(0x5A);
        tx.send_without_confirmation(frame, 1).unwrap();
        let mut rng = stream_rng(9, 0);
        let out = tx.step_cycle(0.0, &mut rng);
        let e = out
            .emissions
            .iter()
            .find(|e| matches!(e.kind, EmissionKind::Frame(_)))
            .unwrap();
        rx.on_link_event(1.0, &LinkEvent::Frame(frame), e.channel, Some(0));
        assert_eq!(rx.inbox.len(), 1);
        assert_eq!(rx.inbox[0].frame, frame);
    }

    #[test]
    fn send_phase_is_outbox_gated() {
        let mut c = ctl(0, quiet_cfg());
        let mut rng = stream_rng(10, 0);
        for i in 0..5 {
            let out = c.step_cycle(i as f64 * 10.0, &mut rng);
            assert!(out.emissions.is_empty());
        }
    }

    #[test]
    fn empirical_match_frequency_converges_to_1_in_36() {
        // Two independently rotating 6-channel robots facing each other:
        // the transmitter's facing channel is some fixed index a, the
        // receiver's is b; a send lands iff tx polls a while rx polls b.
        let mut rng = stream_rng(123, 0);
        let trials = 100_000;
        let mut hits = 0u32;
        let mut tx_phase = rng.gen_range(0..6);
        let mut rx_phase = rng.gen_range(0..6);
        for _ in 0..trials {
            // Random cycle counts elapse between attempts on each side,
            // realizing independent phases.
            tx_phase = (tx_phase + rng.gen_range(1..=7)) % 6;
            rx_phase = (rx_phase + rng.gen_range(1..=7)) % 6;
            if tx_phase == 2 && rx_phase == 5 {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        let expect = 1.0 / 36.0;
        assert!(
            (freq - expect).abs() / expect < 0.10,
            "match frequency {freq} vs {expect}"
        );
    }

    /// Bounded model check: two controllers, every subset of the first 10
    /// over-the-air deliveries may be lost. In every history the requester
    /// either terminates (Done/Failed) or still holds a live timer — there
    /// is no silent stuck state — and terminal states are only Done/Failed.
    #[test]
    fn no_livelock_under_bounded_loss() {
        for mask in 0u32..1024 {
            let mut a = ctl(0, quiet_cfg());
            let mut b = ctl(1, quiet_cfg());
            a.send_with_confirmation(Frame::new(0x33), 0.0, 700.0).unwrap();
            let mut rng = stream_rng(13, mask as u64);
            let mut now = 0.0;
            let mut sent = 0usize;
            for _ in 0..200 {
                if let Some(t) = a.next_timer_ms() {
                    if t <= now {
                        let ems = a.on_timer(t);
                        deliver(&mut a, &mut b, ems, &mut sent, mask, now);
                    }
                }
                if let Some(t) = b.next_timer_ms() {
                    if t <= now {
                        b.on_timer(t);
                    }
                }
                let out = a.step_cycle(now, &mut rng);
                deliver(&mut a, &mut b, out.emissions, &mut sent, mask, now);
                if a.is_terminal() {
                    break;
                }
                now += 10.0;
            }
            assert!(
                a.is_terminal(),
                "mask {mask}: requester stuck in {:?} at {now} ms",
                a.state
            );
            // With no losses at all, delivery must succeed.
            if mask == 0 {
                assert_eq!(a.outcome, Some(DeliveryOutcome::Delivered));
            }
        }

        fn deliver(
            a: &mut RobotController,
            b: &mut RobotController,
            emissions: Vec<Emission>,
            sent: &mut usize,
            mask: u32,
            now: f64,
        ) {
            let mut pending = emissions;
            while let Some(e) = pending.pop() {
                let lost = *sent < 10 && mask & (1 << *sent) != 0;
                *sent += 1;
                if lost {
                    continue;
                }
                let ev = match e.kind {
                    EmissionKind::Control(ControlKind::Request) => LinkEvent::Request,
                    EmissionKind::Control(ControlKind::ReadyOrAck) => LinkEvent::ReadyOrAck,
                    EmissionKind::Frame(f) => LinkEvent::Frame(f),
                    EmissionKind::Proximity => continue,
                };
                // Replies from b go back to a (and a's counter-replies to b)
                // through the same lossy medium.
                let replies = b.on_link_event(now, &ev, e.channel, Some(a.robot_id));
                for r in replies {
                    let lost = *sent < 10 && mask & (1 << *sent) != 0;
                    *sent += 1;
                    if lost {
                        continue;
                    }
                    let ev = match r.kind {
                        EmissionKind::Control(ControlKind::Request) => LinkEvent::Request,
                        EmissionKind::Control(ControlKind::ReadyOrAck) => LinkEvent::ReadyOrAck,
                        EmissionKind::Frame(f) => LinkEvent::Frame(f),
                        EmissionKind::Proximity => continue,
                    };
                    pending.extend(a.on_link_event(now, &ev, r.channel, Some(b.robot_id)));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ControllerConfig::default();
        cfg.resend_range_ms = (0.0, 10.0);
        assert!(cfg.validate().is_err());
        let mut cfg = ControllerConfig::default();
        cfg.channel_count = 0;
        assert!(cfg.validate().is_err());
        assert!(ControllerConfig::default().validate().is_ok());
    }
}
