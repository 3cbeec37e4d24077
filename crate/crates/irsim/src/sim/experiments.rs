//! Monte Carlo experiment suite.
//!
//! Every experiment fans seeds out with rayon and merges results back in
//! seed order, so reports are bit-identical regardless of thread count.
//! Each report declares its bounds; `pass` is computed mechanically.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    coverage_gap_fraction, detect_interference, signal_volts, BoardProfile, ChannelActivity,
    ChannelLayout, ChannelParams, IncidentSignal, LinkEnd,
};
use crate::error::{Result, SimError};
use crate::ir::RadiationPattern;
use crate::protocol::{ControllerConfig, RobotController, RotationPolicy};
use crate::rngutil::{derive_seed, stream_rng};
use crate::sim::Engine;
use crate::world::{Pose, WorldModel};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Measurement {
    pub seed: u64,
    /// The measured value, absent when the run timed out.
    pub value: Option<f64>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub count: usize,
    pub timeouts: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p5: Option<f64>,
    pub p95: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    /// What each measurement value means, including its unit.
    pub metric: String,
    /// Which statistic is tested against the bounds ("mean", "median",
    /// "value").
    pub statistic: String,
    pub statistic_value: Option<f64>,
    pub bounds: [f64; 2],
    pub pass: bool,
    pub summary: Summary,
    pub measurements: Vec<Measurement>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn summarize(measurements: &[Measurement]) -> Summary {
    let mut values: Vec<f64> = measurements.iter().filter_map(|m| m.value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let timeouts = measurements.iter().filter(|m| m.timed_out).count();
    if values.is_empty() {
        return Summary {
            count: 0,
            timeouts,
            mean: None,
            median: None,
            p5: None,
            p95: None,
        };
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Summary {
        count: values.len(),
        timeouts,
        mean: Some(mean),
        median: Some(percentile(&values, 0.5)),
        p5: Some(percentile(&values, 0.05)),
        p95: Some(percentile(&values, 0.95)),
    }
}

fn report(
    name: &str,
    metric: &str,
    statistic: &str,
    bounds: [f64; 2],
    measurements: Vec<Measurement>,
) -> ExperimentReport {
    let summary = summarize(&measurements);
    let statistic_value = match statistic {
        "mean" => summary.mean,
        "median" => summary.median,
        _ => measurements.first().and_then(|m| m.value),
    };
    let pass = statistic_value.is_some_and(|v| v >= bounds[0] && v <= bounds[1]);
    ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        name: name.into(),
        metric: metric.into(),
        statistic: statistic.into(),
        statistic_value,
        bounds,
        pass,
        summary,
        measurements,
    }
}

fn make_controller(
    id: usize,
    cfg: &ControllerConfig,
    master_seed: u64,
) -> Result<RobotController> {
    let mut rng = stream_rng(master_seed ^ 0x5EED_C0DE, id as u64);
    RobotController::new(id, cfg.clone(), &mut rng)
}

fn pair_engine(
    distance_mm: f64,
    board: &BoardProfile,
    layout: ChannelLayout,
    cfg: &ControllerConfig,
    master_seed: u64,
    duration_ms: f64,
) -> Result<Engine> {
    let mut world = WorldModel::empty();
    world.add_robot(Pose::new(0.0, 0.0, 0.0)?)?;
    world.add_robot(Pose::new(distance_mm, 0.0, 180.0)?)?;
    let controllers = (0..2)
        .map(|i| make_controller(i, cfg, master_seed))
        .collect::<Result<Vec<_>>>()?;
    Engine::new(
        world,
        controllers,
        vec![board.clone(), board.clone()],
        layout,
        ChannelParams::default(),
        master_seed,
        duration_ms,
        false,
    )
}

/// Time to the first answered Request between two robots trying to reach
/// each other.
pub fn experiment_contact_time(
    distance_mm: f64,
    board_name: &str,
    channel_count: usize,
    seeds: u64,
    base_seed: u64,
    bounds: [f64; 2],
) -> Result<ExperimentReport> {
    let board = BoardProfile::by_name(board_name)?;
    let layout = ChannelLayout::with_count(channel_count)?;
    let cfg = ControllerConfig {
        channel_count,
        resend_range_ms: (10.0, 100.0),
        cycle_range_ms: (10.0, 30.0),
        hardware_pulse_detect: board.hardware_pulse_detect,
        ..ControllerConfig::default()
    };
    let duration_ms = 30_000.0;
    let measurements: Vec<Measurement> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let master = derive_seed(base_seed, s);
            let mut engine =
                pair_engine(distance_mm, &board, layout.clone(), &cfg, master, duration_ms)
                    .expect("pair scenario is valid");
            for i in 0..2 {
                engine.controllers[i]
                    .send_with_confirmation(crate::codec::Frame::new(0x42), 0.0, duration_ms)
                    .expect("controllers start idle");
            }
            engine.run_until(|e| e.first_contact_ms.is_some());
            let value = engine.first_contact_ms.map(|ms| ms / 1000.0);
            Measurement {
                seed: s,
                timed_out: value.is_none(),
                value,
            }
        })
        .collect();
    Ok(report(
        "contact_time",
        "first answered request, seconds",
        "mean",
        bounds,
        measurements,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationVariant {
    /// Hop-by-hop blind rebroadcast, no acknowledgements.
    NoConfirm,
    /// Confirmed handshake per hop on polling-only boards with corner
    /// blind arcs.
    ConfirmedV1,
    /// Confirmed handshake per hop with hardware pulse detection.
    ConfirmedV2,
}

impl PropagationVariant {
    pub fn name(self) -> &'static str {
        match self {
            PropagationVariant::NoConfirm => "no_confirm",
            PropagationVariant::ConfirmedV1 => "confirmed_v1",
            PropagationVariant::ConfirmedV2 => "confirmed_v2",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "no_confirm" => Ok(PropagationVariant::NoConfirm),
            "confirmed_v1" => Ok(PropagationVariant::ConfirmedV1),
            "confirmed_v2" => Ok(PropagationVariant::ConfirmedV2),
            other => Err(SimError::param(
                "variant",
                format!("unknown propagation variant {other:?}"),
            )),
        }
    }

    fn board(self) -> BoardProfile {
        match self {
            PropagationVariant::NoConfirm => BoardProfile::ideal(),
            PropagationVariant::ConfirmedV1 => BoardProfile::v1(),
            PropagationVariant::ConfirmedV2 => BoardProfile::v2(),
        }
    }

    fn confirmed(self) -> bool {
        !matches!(self, PropagationVariant::NoConfirm)
    }

    pub fn default_bounds(self) -> [f64; 2] {
        match self {
            PropagationVariant::NoConfirm => [8.0, 18.0],
            PropagationVariant::ConfirmedV1 => [16.0, 72.0],
            PropagationVariant::ConfirmedV2 => [0.8, 6.0],
        }
    }
}

/// Time for a payload injected at one end of an `n`-robot line to be decoded
/// at the other end via hop-by-hop relay.
pub fn experiment_propagation(
    variant: PropagationVariant,
    n: usize,
    spacing_mm: f64,
    seeds: u64,
    base_seed: u64,
    bounds: [f64; 2],
) -> Result<ExperimentReport> {
    if n < 2 {
        return Err(SimError::param("n", "line needs at least two robots"));
    }
    let board = variant.board();
    let cfg = ControllerConfig {
        resend_range_ms: (10.0, 60.0),
        cycle_range_ms: (10.0, 30.0),
        hardware_pulse_detect: board.hardware_pulse_detect,
        // Robots keep turning, so fixed blind arcs sweep across the line
        // bearing instead of being permanently aligned or misaligned.
        spin_deg_per_cycle: 20.0, // overridden per robot below
        ..ControllerConfig::default()
    };
    let duration_ms = 180_000.0;
    let payload = 0x5A;
    let measurements: Vec<Measurement> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let master = derive_seed(base_seed, s);
            let mut world = WorldModel::empty();
            for i in 0..n {
                world
                    .add_robot(Pose::new(i as f64 * spacing_mm, 0.0, 0.0).unwrap())
                    .unwrap();
            }
            let controllers = (0..n)
                .map(|i| {
                    // Per-robot turn rates keep headings from quantizing onto
                    // a shared grid, which can pin a blind arc on a neighbor.
                    let mut rng = stream_rng(master ^ 0xD1CE, i as u64);
                    let cfg_i = ControllerConfig {
                        spin_deg_per_cycle: rng.gen_range(12.0..32.0),
                        ..cfg.clone()
                    };
                    make_controller(i, &cfg_i, master).unwrap()
                })
                .collect();
            let mut engine = Engine::new(
                world,
                controllers,
                vec![board.clone(); n],
                ChannelLayout::six_sector(),
                ChannelParams::default(),
                master,
                duration_ms,
                false,
            )
            .unwrap();
            engine
                .inject_relay_message(0, payload, variant.confirmed())
                .unwrap();
            let last = n - 1;
            engine.run_until(|e| e.first_reception_ms(last, payload).is_some());
            let value = engine.first_reception_ms(last, payload).map(|ms| ms / 1000.0);
            Measurement {
                seed: s,
                timed_out: value.is_none(),
                value,
            }
        })
        .collect();
    Ok(report(
        &format!("propagation_{}", variant.name()),
        "end-to-end relay latency over the line, seconds",
        "median",
        bounds,
        measurements,
    ))
}

/// Empirical frequency of both sides polling the mutually facing channel on
/// the same attempt, under independent uniform rotation phases.
pub fn experiment_channel_match(
    channels: usize,
    trials: u64,
    base_seed: u64,
    bounds: [f64; 2],
) -> Result<ExperimentReport> {
    let expected = crate::protocol::rendezvous_probability(
        channels,
        channels,
        RotationPolicy::IndependentUniform,
    )?;
    let mut rng = stream_rng(base_seed, 0);
    let mut hits = 0u64;
    for _ in 0..trials {
        let tx = rng.gen_range(0..channels);
        let rx = rng.gen_range(0..channels);
        // A match needs the transmitter aimed at the facing sector while
        // the receiver polls its own facing sector.
        if tx == 0 && rx == 0 {
            hits += 1;
        }
    }
    let freq = hits as f64 / trials as f64;
    let mut rep = report(
        "channel_match",
        "per-attempt rendezvous frequency",
        "value",
        bounds,
        vec![Measurement {
            seed: base_seed,
            value: Some(freq),
            timed_out: false,
        }],
    );
    rep.metric = format!(
        "per-attempt rendezvous frequency (analytic {expected:.5})"
    );
    Ok(rep)
}

/// Fraction of bearings at `probe_distance_mm` from which no channel hears a
/// probe transmitter, for a given chassis profile.
pub fn experiment_deadzone(
    board_name: &str,
    probe_distance_mm: f64,
    bounds: [f64; 2],
) -> Result<ExperimentReport> {
    let board = BoardProfile::by_name(board_name)?;
    let fraction = coverage_gap_fraction(
        &ChannelParams::default(),
        &ChannelLayout::six_sector(),
        &board,
        probe_distance_mm,
    )?;
    Ok(report(
        &format!("deadzone_{board_name}"),
        "blind fraction of the 360-degree surround",
        "value",
        bounds,
        vec![Measurement {
            seed: 0,
            value: Some(fraction),
            timed_out: false,
        }],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceZone {
    /// 50 mm.
    Close,
    /// 100 mm.
    Near,
    /// 200 mm.
    Far,
}

impl InterferenceZone {
    pub fn radius_mm(self) -> f64 {
        match self {
            InterferenceZone::Close => 50.0,
            InterferenceZone::Near => 100.0,
            InterferenceZone::Far => 200.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InterferenceZone::Close => "close",
            InterferenceZone::Near => "near",
            InterferenceZone::Far => "far",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "close" => Ok(InterferenceZone::Close),
            "near" => Ok(InterferenceZone::Near),
            "far" => Ok(InterferenceZone::Far),
            other => Err(SimError::param("zone", format!("unknown zone {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Transmitter bearings uniform over the full circle.
    UniformRing,
    /// All transmitters inside the receiver's forward sector.
    CoSector,
    /// Transmitter `i` centred in sector `i`: guaranteed disjoint sectors.
    AdjacentSectors,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::UniformRing => "uniform_ring",
            Placement::CoSector => "co_sector",
            Placement::AdjacentSectors => "adjacent_sectors",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "uniform_ring" => Ok(Placement::UniformRing),
            "co_sector" => Ok(Placement::CoSector),
            "adjacent_sectors" => Ok(Placement::AdjacentSectors),
            other => Err(SimError::param(
                "placement",
                format!("unknown placement {other:?}"),
            )),
        }
    }
}

/// Collision rate at a central receiver while several in-zone transmitters
/// emit overlapping pulse trains.
pub fn experiment_interference(
    zone: InterferenceZone,
    placement: Placement,
    tx_count: usize,
    trials: u64,
    base_seed: u64,
    bounds: [f64; 2],
) -> Result<ExperimentReport> {
    if tx_count < 1 {
        return Err(SimError::param("tx_count", "need at least one transmitter"));
    }
    let params = ChannelParams::default();
    let layout = ChannelLayout::six_sector();
    let board = BoardProfile::ideal();
    let radius = zone.radius_mm();
    let sector = layout.sector_width_deg();

    let mut rng = stream_rng(base_seed, 0);
    let mut collided_trials = 0u64;
    for _ in 0..trials {
        let mut world = WorldModel::empty();
        world.add_robot(Pose::new(0.0, 0.0, 0.0).unwrap()).unwrap();
        let mut bearings = Vec::with_capacity(tx_count);
        for i in 0..tx_count {
            let bearing: f64 = match placement {
                Placement::UniformRing => rng.gen_range(-180.0..180.0),
                Placement::CoSector => rng.gen_range(-sector / 2.0..sector / 2.0),
                Placement::AdjacentSectors => {
                    let center = i as f64 * sector;
                    // Stay clear of the sector edges so discretization never
                    // smears a transmitter into the neighbouring sector.
                    rng.gen_range(center - sector / 4.0..center + sector / 4.0)
                }
            };
            bearings.push(bearing);
        }
        // All transmitters emit simultaneously in a shared window, aimed at
        // the receiver. They are treated as point sources: this probes the
        // channel model, and body packing at close range would otherwise
        // reject or occlude most co-sector placements.
        let poses: Vec<Pose> = bearings
            .iter()
            .map(|&bearing| {
                let rad = bearing.to_radians();
                Pose::new(
                    radius * rad.cos(),
                    radius * rad.sin(),
                    crate::world::norm_deg(bearing + 180.0),
                )
                .unwrap()
            })
            .collect();
        let mut any_collision = false;
        for ch in 0..layout.channel_count {
            let incident: Vec<IncidentSignal> = poses
                .iter()
                .map(|&pose| {
                    let tx = LinkEnd {
                        pose,
                        channel: 0, // aimed at the receiver: boresight channel
                        board: &board,
                        world_robot: None,
                    };
                    let rx = LinkEnd {
                        pose: world.robots[0].pose,
                        channel: ch,
                        board: &board,
                        world_robot: Some(0),
                    };
                    IncidentSignal {
                        volts: signal_volts(&world, &params, &layout, &tx, &rx),
                        start_ms: 0.0,
                        end_ms: 38.25,
                    }
                })
                .collect();
            if detect_interference(&params, &incident, 0.0, 38.25) == ChannelActivity::Collided {
                any_collision = true;
                break;
            }
        }
        if any_collision {
            collided_trials += 1;
        }
    }
    let rate = collided_trials as f64 / trials as f64;
    Ok(report(
        &format!("interference_{}_{}", zone.name(), placement.name()),
        "fraction of trials with a same-channel collision at the receiver",
        "value",
        bounds,
        vec![Measurement {
            seed: base_seed,
            value: Some(rate),
            timed_out: false,
        }],
    ))
}

/// Directional transducer lobes measured from real parts: a focused emitter
/// and a broader, softer receiver. Used where sector-boundary idealization
/// would hide pattern-mismatch effects.
pub fn measured_lobes() -> ChannelLayout {
    ChannelLayout {
        channel_count: 6,
        emitter: RadiationPattern {
            half_angle: 18.0,
            lobe_exponent: 2.0,
            side_floor: 0.003,
            side_extent: 40.0,
        },
        receiver: RadiationPattern {
            half_angle: 30.0,
            lobe_exponent: 0.8,
            side_floor: 0.05,
            side_extent: 48.0,
        },
    }
}

/// Ratio of bidirectional to any-direction contact over random pair
/// geometries at distances spanning the working range. The attenuation is
/// not asserted anywhere in the channel model; it has to emerge from the
/// lobe shapes.
pub fn experiment_bidirectional(
    trials: u64,
    base_seed: u64,
    bounds: [f64; 2],
) -> Result<ExperimentReport> {
    let params = ChannelParams::default();
    let layout = measured_lobes();
    let board = BoardProfile::ideal();

    let reaches = |world: &WorldModel, a: usize, b: usize| -> bool {
        let pa = world.robots[a].pose;
        let pb = world.robots[b].pose;
        for tx_ch in 0..layout.channel_count {
            for rx_ch in 0..layout.channel_count {
                let tx = LinkEnd {
                    pose: pa,
                    channel: tx_ch,
                    board: &board,
                    world_robot: Some(a),
                };
                let rx = LinkEnd {
                    pose: pb,
                    channel: rx_ch,
                    board: &board,
                    world_robot: Some(b),
                };
                if signal_volts(world, &params, &layout, &tx, &rx) >= params.detect_threshold_v {
                    return true;
                }
            }
        }
        false
    };

    let mut rng = stream_rng(base_seed, 0);
    let mut any_direction = 0u64;
    let mut both_directions = 0u64;
    for _ in 0..trials {
        let d = rng.gen_range(50.0..=140.0);
        let phi: f64 = rng.gen_range(-180.0..180.0);
        let ha = rng.gen_range(-180.0..180.0);
        let hb = rng.gen_range(-180.0..180.0);
        let mut world = WorldModel::empty();
        world.add_robot(Pose::new(0.0, 0.0, ha).unwrap()).unwrap();
        let rad = phi.to_radians();
        world
            .add_robot(Pose::new(d * rad.cos(), d * rad.sin(), hb).unwrap())
            .unwrap();
        let ab = reaches(&world, 0, 1);
        let ba = reaches(&world, 1, 0);
        if ab || ba {
            any_direction += 1;
        }
        if ab && ba {
            both_directions += 1;
        }
    }
    if any_direction == 0 {
        return Err(SimError::config(
            "trials",
            "no contact in any trial; cannot form a ratio",
        ));
    }
    let ratio = both_directions as f64 / any_direction as f64;
    Ok(report(
        "bidirectional_attenuation",
        "bidirectional contacts per any-direction contact",
        "value",
        bounds,
        vec![Measurement {
            seed: base_seed,
            value: Some(ratio),
            timed_out: false,
        }],
    ))
}
