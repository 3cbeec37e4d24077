//! Directional IR channel model.
//!
//! Each robot carries an identical ring of emitter/receiver pairs, one per
//! channel, with channel `i` aimed at `heading + i * 360/count` degrees.
//! Received amplitude follows an inverse-power law in distance scaled by the
//! emitter gain at the transmitter and the receiver gain at the receiver,
//! referenced to 0.75 V for an aligned pair at 150 mm. Board profiles add
//! per-board blind arcs (chassis shadowing at the corners) and the option of
//! hardware pulse detection, which lets a receiver react on any channel
//! instead of only the one it is currently polling.

use crate::error::{Result, SimError};
use crate::ir::{pattern_gain, RadiationPattern};
use crate::world::{norm_deg, wrap_deg, HitTarget, Pose, WorldModel};

/// Geometry of the transducer ring shared by all robots in a scenario.
#[derive(Debug, Clone)]
pub struct ChannelLayout {
    pub channel_count: usize,
    pub emitter: RadiationPattern,
    pub receiver: RadiationPattern,
}

impl ChannelLayout {
    /// Six flat 60-degree sectors: the hardware default. Every bearing is
    /// covered by exactly one emitter and one receiver (boundary bearings by
    /// two, resolved to the lower channel index).
    pub fn six_sector() -> Self {
        ChannelLayout {
            channel_count: 6,
            emitter: RadiationPattern::flat_sector(30.0),
            receiver: RadiationPattern::flat_sector(30.0),
        }
    }

    pub fn with_count(channel_count: usize) -> Result<Self> {
        if channel_count == 0 {
            return Err(SimError::param("channel_count", "must be at least 1"));
        }
        let half = 180.0 / channel_count as f64;
        Ok(ChannelLayout {
            channel_count,
            emitter: RadiationPattern::flat_sector(half),
            receiver: RadiationPattern::flat_sector(half),
        })
    }

    pub fn sector_width_deg(&self) -> f64 {
        360.0 / self.channel_count as f64
    }

    /// World-frame boresight of channel `ch` for a robot with this heading.
    pub fn channel_axis_deg(&self, heading_deg: f64, ch: usize) -> f64 {
        norm_deg(heading_deg + ch as f64 * self.sector_width_deg())
    }
}

/// Amplitude model parameters.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    /// Amplitude for an on-axis pair at the reference distance.
    pub v_ref: f64,
    pub ref_distance_mm: f64,
    /// Exponent of the inverse-power distance law.
    pub decay_exponent: f64,
    /// Minimum amplitude a receiver front-end can register.
    pub detect_threshold_v: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            v_ref: 0.75,
            ref_distance_mm: 150.0,
            decay_exponent: 4.0,
            detect_threshold_v: 0.1,
        }
    }
}

impl ChannelParams {
    /// Distance at which an aligned, unobstructed pair sits exactly at the
    /// detection threshold.
    pub fn comm_radius_mm(&self) -> f64 {
        self.ref_distance_mm * (self.v_ref / self.detect_threshold_v).powf(1.0 / self.decay_exponent)
    }
}

/// An angular interval of body-frame bearings, `[start, start + width)`.
#[derive(Debug, Clone, Copy)]
pub struct DeadArc {
    pub center_deg: f64,
    pub width_deg: f64,
}

impl DeadArc {
    pub fn contains(&self, body_bearing_deg: f64) -> bool {
        wrap_deg(body_bearing_deg, self.center_deg).abs() < self.width_deg / 2.0
    }
}

/// Per-board electrical and mechanical traits.
#[derive(Debug, Clone)]
pub struct BoardProfile {
    pub name: &'static str,
    /// Body-frame arcs where the chassis shadows the emitters.
    pub emitter_dead_arcs: Vec<DeadArc>,
    /// Body-frame arcs where the chassis shadows the receivers.
    pub receiver_dead_arcs: Vec<DeadArc>,
    /// Closer than this the transducer geometry breaks down; no link forms.
    pub min_radius_mm: f64,
    /// Hardware front-end that raises an interrupt on any channel, so the
    /// controller does not have to be polling the right channel to receive.
    pub hardware_pulse_detect: bool,
}

fn corner_arcs(width_deg: f64, offset_deg: f64) -> Vec<DeadArc> {
    (0..4)
        .map(|i| DeadArc {
            center_deg: norm_deg(45.0 + 90.0 * i as f64 + offset_deg),
            width_deg,
        })
        .collect()
}

impl BoardProfile {
    /// First hardware revision: wide chassis shadows (about 12% of bearings
    /// blind on the receive side), polling receivers only. Emitter and
    /// receiver shadows sit at different bearings because the two transducer
    /// rings are mounted at different heights on the chassis corners.
    pub fn v1() -> Self {
        BoardProfile {
            name: "v1",
            emitter_dead_arcs: corner_arcs(11.0, 0.0),
            receiver_dead_arcs: corner_arcs(11.0, -30.0),
            min_radius_mm: 2.0,
            hardware_pulse_detect: false,
        }
    }

    /// Second revision: slimmer chassis posts (about 2% blind) and a
    /// hardware pulse detector on the receive path.
    pub fn v2() -> Self {
        BoardProfile {
            name: "v2",
            emitter_dead_arcs: corner_arcs(2.0, 0.0),
            receiver_dead_arcs: corner_arcs(2.0, -30.0),
            min_radius_mm: 2.0,
            hardware_pulse_detect: true,
        }
    }

    /// Third revision: same optics as v2 with minor electrical cleanups that
    /// this model does not distinguish.
    pub fn v3() -> Self {
        BoardProfile {
            name: "v3",
            ..BoardProfile::v2()
        }
    }

    /// Hypothetical board with no blind arcs and no hardware detector;
    /// useful as an experimental control.
    pub fn ideal() -> Self {
        BoardProfile {
            name: "ideal",
            emitter_dead_arcs: Vec::new(),
            receiver_dead_arcs: Vec::new(),
            min_radius_mm: 2.0,
            hardware_pulse_detect: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "v1" => Ok(Self::v1()),
            "v2" => Ok(Self::v2()),
            "v3" => Ok(Self::v3()),
            "ideal" => Ok(Self::ideal()),
            other => Err(SimError::param(
                "board",
                format!("unknown board '{other}' (expected v1, v2, v3, or ideal)"),
            )),
        }
    }

    pub fn emitter_blocked(&self, body_bearing_deg: f64) -> bool {
        self.emitter_dead_arcs.iter().any(|a| a.contains(body_bearing_deg))
    }

    pub fn receiver_blocked(&self, body_bearing_deg: f64) -> bool {
        self.receiver_dead_arcs.iter().any(|a| a.contains(body_bearing_deg))
    }
}

/// One side of a point-to-point link.
#[derive(Debug, Clone)]
pub struct LinkEnd<'a> {
    pub pose: Pose,
    pub channel: usize,
    pub board: &'a BoardProfile,
    /// Index of this robot's body in the world, excluded from occlusion
    /// tests so a robot does not shadow its own link.
    pub world_robot: Option<usize>,
}

/// True if any obstacle or third robot body sits on the segment between the
/// two endpoints.
pub fn line_occluded(world: &WorldModel, tx: &LinkEnd, rx: &LinkEnd) -> bool {
    let d = tx.pose.position().dist(rx.pose.position());
    if d <= 1e-9 {
        return false;
    }
    let bearing = tx.pose.bearing_to(rx.pose.position());
    let mut exclude = Vec::new();
    if let Some(i) = tx.world_robot {
        exclude.push(i);
    }
    if let Some(i) = rx.world_robot {
        exclude.push(i);
    }
    match crate::world::ray_cast_excluding(world, tx.pose.position(), bearing, &exclude) {
        Some(hit) => {
            // A grazing hit at the receiver itself does not occlude.
            if hit.distance < d - 1e-6 {
                return true;
            }
            if let HitTarget::Robot(r) = hit.target {
                if Some(r) == rx.world_robot {
                    return false;
                }
            }
            false
        }
        None => false,
    }
}

/// Received amplitude in volts for a single emitter/receiver channel pair.
///
/// Returns 0 when the endpoints are closer than either board's minimum
/// radius, the line of sight is occluded, either end's bearing falls in a
/// chassis dead arc, or either gain is zero.
pub fn signal_volts(
    world: &WorldModel,
    params: &ChannelParams,
    layout: &ChannelLayout,
    tx: &LinkEnd,
    rx: &LinkEnd,
) -> f64 {
    let d = tx.pose.position().dist(rx.pose.position());
    if d < tx.board.min_radius_mm || d < rx.board.min_radius_mm {
        return 0.0;
    }
    let bearing_tx_world = tx.pose.bearing_to(rx.pose.position());
    let bearing_rx_world = rx.pose.bearing_to(tx.pose.position());

    let tx_body = wrap_deg(bearing_tx_world, tx.pose.heading);
    let rx_body = wrap_deg(bearing_rx_world, rx.pose.heading);
    if tx.board.emitter_blocked(tx_body) || rx.board.receiver_blocked(rx_body) {
        return 0.0;
    }

    let tx_axis = layout.channel_axis_deg(tx.pose.heading, tx.channel);
    let rx_axis = layout.channel_axis_deg(rx.pose.heading, rx.channel);
    let ge = pattern_gain(&layout.emitter, wrap_deg(bearing_tx_world, tx_axis));
    let gr = pattern_gain(&layout.receiver, wrap_deg(bearing_rx_world, rx_axis));
    if ge <= 0.0 || gr <= 0.0 {
        return 0.0;
    }
    if line_occluded(world, tx, rx) {
        return 0.0;
    }
    params.v_ref * (params.ref_distance_mm / d).powf(params.decay_exponent) * ge * gr
}

/// Picks the receive channel with the highest amplitude for a given
/// transmitter; ties resolve to the lowest channel index. Returns the
/// channel and its amplitude (possibly 0 if nothing is visible).
pub fn best_rx_channel(
    world: &WorldModel,
    params: &ChannelParams,
    layout: &ChannelLayout,
    tx: &LinkEnd,
    rx_pose: Pose,
    rx_board: &BoardProfile,
    rx_world_robot: Option<usize>,
) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for ch in 0..layout.channel_count {
        let rx = LinkEnd {
            pose: rx_pose,
            channel: ch,
            board: rx_board,
            world_robot: rx_world_robot,
        };
        let v = signal_volts(world, params, layout, tx, &rx);
        if v > best.1 {
            best = (ch, v);
        }
    }
    if best.1 < 0.0 {
        best.1 = 0.0;
    }
    best
}

/// A transmission as seen at one receiver: its amplitude there and the
/// interval during which the channel is occupied.
#[derive(Debug, Clone, Copy)]
pub struct IncidentSignal {
    pub volts: f64,
    pub start_ms: f64,
    pub end_ms: f64,
}

/// Outcome of listening on one channel over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelActivity {
    /// No signal above the detection threshold.
    Silent,
    /// Exactly one supra-threshold transmission at a time; decodable.
    Clean,
    /// Two or more supra-threshold transmissions overlap; nothing decodes.
    Collided,
}

/// Classifies the activity on a channel given every transmission incident on
/// it during `[window_start, window_end]`.
pub fn detect_interference(
    params: &ChannelParams,
    incident: &[IncidentSignal],
    window_start_ms: f64,
    window_end_ms: f64,
) -> ChannelActivity {
    let supra: Vec<&IncidentSignal> = incident
        .iter()
        .filter(|s| {
            s.volts >= params.detect_threshold_v
                && s.end_ms > window_start_ms
                && s.start_ms < window_end_ms
        })
        .collect();
    if supra.is_empty() {
        return ChannelActivity::Silent;
    }
    for i in 0..supra.len() {
        for j in i + 1..supra.len() {
            if supra[i].start_ms < supra[j].end_ms && supra[j].start_ms < supra[i].end_ms {
                return ChannelActivity::Collided;
            }
        }
    }
    ChannelActivity::Clean
}

/// Fraction of bearings from which an on-axis probe transmitter at
/// `probe_distance_mm` cannot be heard on any channel. Sweeps the full
/// circle in 1-degree steps.
pub fn coverage_gap_fraction(
    params: &ChannelParams,
    layout: &ChannelLayout,
    board: &BoardProfile,
    probe_distance_mm: f64,
) -> Result<f64> {
    if probe_distance_mm > params.comm_radius_mm() {
        return Err(SimError::param(
            "probe_distance_mm",
            "probe beyond communication radius; every bearing would be blind",
        ));
    }
    if probe_distance_mm < board.min_radius_mm {
        return Err(SimError::param("probe_distance_mm", "probe inside minimum radius"));
    }
    let world = WorldModel::empty();
    let probe_board = BoardProfile::ideal();
    let rx_pose = Pose::new(0.0, 0.0, 0.0).unwrap();
    let mut blind = 0usize;
    let steps = 360usize;
    for s in 0..steps {
        let bearing = s as f64;
        let (dx, dy) = crate::world::unit_vec(bearing);
        let probe_pose = Pose::new(
            probe_distance_mm * dx,
            probe_distance_mm * dy,
            norm_deg(bearing + 180.0), // aimed back at the receiver
        )
        .unwrap();
        let tx = LinkEnd {
            pose: probe_pose,
            channel: 0,
            board: &probe_board,
            world_robot: None,
        };
        let (_, v) = best_rx_channel(&world, params, layout, &tx, rx_pose, board, None);
        if v < params.detect_threshold_v {
            blind += 1;
        }
    }
    Ok(blind as f64 / steps as f64)
}
