//! Scenario files: JSON in, fully validated engine out.

use serde::{Deserialize, Serialize};

use crate::channel::{BoardProfile, ChannelLayout, ChannelParams};
use crate::error::{Result, SimError};
use crate::protocol::{ControllerConfig, DEFAULT_STAGE_TIMEOUT_MS};
use crate::rngutil::stream_rng;
use crate::sim::Engine;
use crate::world::{Point, Pose, Rect, SegmentObstacle, WorldModel};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_deg: f64,
    /// Chassis profile: "ideal", "v1", "v2", or "v3".
    #[serde(default = "default_board")]
    pub board: String,
    #[serde(default)]
    pub spin_deg_per_cycle: f64,
    /// Confirmed-delivery payload this robot tries to send, if any.
    #[serde(default)]
    pub send_confirmed: Option<u8>,
    /// Unconfirmed broadcast payload, if any.
    #[serde(default)]
    pub send_unconfirmed: Option<u8>,
}

fn default_board() -> String {
    "ideal".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub x0_mm: f64,
    pub y0_mm: f64,
    pub x1_mm: f64,
    pub y1_mm: f64,
    #[serde(default = "default_reflectivity")]
    pub reflectivity: f64,
}

fn default_reflectivity() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(default = "default_resend")]
    pub resend_range_ms: (f64, f64),
    #[serde(default = "default_cycle")]
    pub cycle_range_ms: (f64, f64),
    #[serde(default = "default_stage_timeout")]
    pub stage_timeout_ms: f64,
}

fn default_resend() -> (f64, f64) {
    (10.0, 100.0)
}
fn default_cycle() -> (f64, f64) {
    (10.0, 150.0)
}
fn default_stage_timeout() -> f64 {
    DEFAULT_STAGE_TIMEOUT_MS
}

impl Default for TimingSpec {
    fn default() -> Self {
        TimingSpec {
            resend_range_ms: default_resend(),
            cycle_range_ms: default_cycle(),
            stage_timeout_ms: default_stage_timeout(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub duration_ms: f64,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Optional bounding box `[x0, y0, x1, y1]` in millimetres.
    #[serde(default)]
    pub arena_mm: Option<[f64; 4]>,
    #[serde(default)]
    pub timing: TimingSpec,
    /// Robots whose decoded frames are relayed onwards.
    #[serde(default)]
    pub relay: bool,
    #[serde(default)]
    pub trace: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(SimError::config(
                "version",
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        if !(self.duration_ms > 0.0) {
            return Err(SimError::config("duration_ms", "must be positive"));
        }
        if self.robots.is_empty() {
            return Err(SimError::config("robots", "at least one robot is required"));
        }
        for (i, r) in self.robots.iter().enumerate() {
            if !r.x_mm.is_finite() || !r.y_mm.is_finite() || !r.heading_deg.is_finite() {
                return Err(SimError::config(format!("robots[{i}]"), "non-finite pose"));
            }
            BoardProfile::by_name(&r.board)?;
            if r.send_confirmed.is_some() && r.send_unconfirmed.is_some() {
                return Err(SimError::config(
                    format!("robots[{i}]"),
                    "choose confirmed or unconfirmed delivery, not both",
                ));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(0.0..=1.0).contains(&o.reflectivity) {
                return Err(SimError::config(
                    format!("obstacles[{i}].reflectivity"),
                    "must lie in [0, 1]",
                ));
            }
            if o.x0_mm == o.x1_mm && o.y0_mm == o.y1_mm {
                return Err(SimError::config(format!("obstacles[{i}]"), "zero length"));
            }
        }
        if let Some([x0, y0, x1, y1]) = self.arena_mm {
            if !(x1 > x0 && y1 > y0) {
                return Err(SimError::config("arena_mm", "must describe a non-empty box"));
            }
        }
        let t = &self.timing;
        let ok = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0;
        if !ok(t.resend_range_ms) || !ok(t.cycle_range_ms) || t.stage_timeout_ms <= 0.0 {
            return Err(SimError::config(
                "timing",
                "ranges must be positive and ordered",
            ));
        }
        Ok(())
    }

    pub fn build_engine(&self) -> Result<Engine> {
        self.validate()?;
        let mut world = WorldModel::empty();
        if let Some([x0, y0, x1, y1]) = self.arena_mm {
            world.arena = Rect {
                min: Point::new(x0, y0),
                max: Point::new(x1, y1),
            };
        }
        for o in &self.obstacles {
            world.obstacles.push(SegmentObstacle::new(
                Point::new(o.x0_mm, o.y0_mm),
                Point::new(o.x1_mm, o.y1_mm),
                o.reflectivity,
            )?);
        }
        let mut controllers = Vec::with_capacity(self.robots.len());
        let mut boards = Vec::with_capacity(self.robots.len());
        for (i, r) in self.robots.iter().enumerate() {
            world.add_robot(Pose::new(r.x_mm, r.y_mm, r.heading_deg)?)?;
            let board = BoardProfile::by_name(&r.board)?;
            let cfg = ControllerConfig {
                resend_range_ms: self.timing.resend_range_ms,
                cycle_range_ms: self.timing.cycle_range_ms,
                stage_timeout_ms: self.timing.stage_timeout_ms,
                hardware_pulse_detect: board.hardware_pulse_detect,
                spin_deg_per_cycle: r.spin_deg_per_cycle,
                ..ControllerConfig::default()
            };
            // Controller init draws come from a distinct stream family so
            // runtime draws (stream = 1 + id) stay untouched.
            let mut rng = stream_rng(self.seed ^ 0x5EED_C0DE, i as u64);
            controllers.push(crate::protocol::RobotController::new(i, cfg, &mut rng)?);
            boards.push(board);
        }
        let mut engine = Engine::new(
            world,
            controllers,
            boards,
            ChannelLayout::six_sector(),
            ChannelParams::default(),
            self.seed,
            self.duration_ms,
            self.trace,
        )?;
        engine.relay = self.relay;
        for (i, r) in self.robots.iter().enumerate() {
            if let Some(data) = r.send_confirmed {
                if self.relay {
                    engine.inject_relay_message(i, data, true)?;
                } else {
                    engine.controllers[i].send_with_confirmation(
                        crate::codec::Frame::new(data),
                        0.0,
                        self.duration_ms,
                    )?;
                }
            } else if let Some(data) = r.send_unconfirmed {
                if self.relay {
                    engine.inject_relay_message(i, data, false)?;
                } else {
                    engine.controllers[i]
                        .send_without_confirmation(crate::codec::Frame::new(data), u32::MAX)?;
                }
            }
        }
        Ok(engine)
    }
}
