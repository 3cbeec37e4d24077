//! Rotational range scanning and object classification.
//!
//! When the front proximity reading falls in the trigger band the robot
//! stops, turns 60 degrees left, and sweeps right collecting 60 ADC samples
//! at 2-degree steps (120 degrees total). Each sample integrates reflected
//! irradiance over a narrow sensing cone, which reproduces the edge blur
//! that limits optical resolution to a few tens of millimeters.
//!
//! The classifier is rule-based: validity masking, run merging, jump
//! splitting, then a decision ladder over segment count, slope sign
//! changes, an interior-extremum test, and a total-least-squares line fit.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ir::{adc_from_distance, distance_from_adc, noise_sigma, pattern_gain, AdcModel, RadiationPattern};
use crate::world::{ray_cast_excluding, Point, Pose, SegmentObstacle, WorldModel};

/// True iff the front distance reading means "obstacle at scanning range".
pub fn scan_trigger(distance_reading_mm: f64) -> bool {
    (50.0..=70.0).contains(&distance_reading_mm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionMode {
    /// Exact 60-degree left turn, exact 2-degree steps.
    Ideal,
    /// The left turn underachieves and the sweep covers only ~90 degrees,
    /// so every profile lands earlier in the sample sequence.
    Biased,
}

/// Sensing geometry and classifier thresholds.
#[derive(Debug, Clone)]
pub struct ScanParams {
    pub sample_count: usize,
    pub ideal_start_deg: f64,
    pub ideal_step_deg: f64,
    pub biased_start_deg: f64,
    pub biased_step_deg: f64,
    /// Sensor sits this far ahead of the rotation center, along the beam.
    pub sensor_offset_mm: f64,
    pub cone_half_angle_deg: f64,
    pub cone_rays: usize,
    /// Recovered distances beyond this are masked invalid.
    pub validity_max_mm: f64,
    /// Moving-average window for slope computations.
    pub smoothing_window: usize,
    /// Slopes smaller than this are noise, not shape.
    pub slope_deadband_mm: f64,
    /// A distance step larger than max(abs, rel * d) splits a run.
    pub jump_abs_mm: f64,
    pub jump_rel: f64,
    /// Runs shorter than this are edge-blur fragments and are dropped.
    pub min_segment_len: usize,
    /// Line-fit RMS residual below which a segment counts as flat.
    pub flat_rms_mm: f64,
    /// Interior extremum must beat both segment ends by this much.
    pub extremum_drop_mm: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            sample_count: 60,
            ideal_start_deg: 60.0,
            ideal_step_deg: 2.0,
            biased_start_deg: 40.5,
            biased_step_deg: 1.5,
            sensor_offset_mm: 20.0,
            cone_half_angle_deg: 3.0,
            cone_rays: 9,
            validity_max_mm: 200.0,
            smoothing_window: 3,
            slope_deadband_mm: 3.0,
            jump_abs_mm: 18.0,
            jump_rel: 0.3,
            min_segment_len: 5,
            flat_rms_mm: 8.0,
            extremum_drop_mm: 8.0,
        }
    }
}

/// The raw result of one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanProfile {
    /// Exactly `sample_count` ADC values.
    pub samples: Vec<u32>,
    /// Angular step between consecutive samples (positive; sweep runs
    /// from left to right, i.e. bearings decrease).
    pub step_deg: f64,
    /// Bearing of sample 0 relative to the pre-scan heading.
    pub start_bearing_deg: f64,
}

impl ScanProfile {
    /// Bearing of sample `i` relative to the pre-scan heading.
    pub fn bearing_deg(&self, i: usize) -> f64 {
        self.start_bearing_deg - self.step_deg * i as f64
    }
}

/// Sweeps the sensing cone and records one ADC value per step.
///
/// The sensing rays share the lines through the rotation center (the sensor
/// rides 20 mm out along the beam), so hit distances are measured from the
/// center and shortened by the offset before hitting the ADC curve. Pass
/// `exclude_robot` when the scanning robot's own body disc is in the world.
/// `rng: None` produces noise-free samples.
pub fn perform_scan(
    pose: &Pose,
    world: &WorldModel,
    model: &AdcModel,
    params: &ScanParams,
    mode: MotionMode,
    exclude_robot: Option<usize>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ScanProfile> {
    let (start, step) = match mode {
        MotionMode::Ideal => (params.ideal_start_deg, params.ideal_step_deg),
        MotionMode::Biased => (params.biased_start_deg, params.biased_step_deg),
    };
    let cone = RadiationPattern {
        half_angle: params.cone_half_angle_deg,
        lobe_exponent: 2.0,
        side_floor: 0.0,
        side_extent: params.cone_half_angle_deg,
    };
    let exclude: Vec<usize> = exclude_robot.into_iter().collect();
    let ray_step = 2.0 * params.cone_half_angle_deg / (params.cone_rays - 1) as f64;

    let mut samples = Vec::with_capacity(params.sample_count);
    for i in 0..params.sample_count {
        let bearing = pose.heading + start - step * i as f64;
        // Gain-weighted mean irradiance over the cone; rays that miss (or
        // hit behind the sensor) contribute zero, so partial coverage at
        // object edges fades the reading instead of cutting it.
        let mut energy = 0.0;
        let mut total_gain = 0.0;
        for r in 0..params.cone_rays {
            let offset = -params.cone_half_angle_deg + r as f64 * ray_step;
            let gain = pattern_gain(&cone, offset);
            total_gain += gain;
            let hit = ray_cast_excluding(world, pose.position(), bearing + offset, &exclude);
            if let Some(h) = hit {
                let d_sensor = h.distance - params.sensor_offset_mm;
                if d_sensor > 0.0 {
                    let refl = h.reflectivity(world) * h.incidence_angle.to_radians().cos().max(0.0);
                    energy += gain * refl / (d_sensor * d_sensor);
                }
            }
        }
        let adc = if energy <= 0.0 || total_gain <= 0.0 {
            0
        } else {
            // Equivalent single-ray distance of the integrated reading.
            let d_eq = (total_gain / energy).sqrt();
            adc_from_distance(model, d_eq, 1.0, world.ambient_level, rng.as_deref_mut())?
        };
        samples.push(adc);
    }
    Ok(ScanProfile {
        samples,
        step_deg: step,
        start_bearing_deg: start,
    })
}

/// One contiguous run of valid, jump-free samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSegment {
    pub start_index: usize,
    /// Sensor distances, one per sample in the run.
    pub distances_mm: Vec<f64>,
    pub extent_deg: f64,
    pub d_min_mm: f64,
    pub d_max_mm: f64,
    /// Sign alternations of the smoothed slope, deadband-filtered.
    pub slope_sign_changes: usize,
}

impl ScanSegment {
    pub fn len(&self) -> usize {
        self.distances_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances_mm.is_empty()
    }

    pub fn end_index(&self) -> usize {
        self.start_index + self.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanFeatures {
    pub valid: Vec<bool>,
    pub segments: Vec<ScanSegment>,
    pub step_deg: f64,
    pub start_bearing_deg: f64,
    pub sensor_offset_mm: f64,
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let half = w / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn slope_sign_changes(distances: &[f64], smoothing_window: usize, deadband_mm: f64) -> usize {
    let smooth = moving_average(distances, smoothing_window);
    let mut last_sign = 0i8;
    let mut changes = 0;
    for w in smooth.windows(2) {
        let d = w[1] - w[0];
        if d.abs() < deadband_mm {
            continue;
        }
        let sign = if d > 0.0 { 1 } else { -1 };
        if last_sign != 0 && sign != last_sign {
            changes += 1;
        }
        last_sign = sign;
    }
    changes
}

/// Converts a profile into validity-masked distance segments.
pub fn extract_features(profile: &ScanProfile, model: &AdcModel, params: &ScanParams) -> ScanFeatures {
    let n = profile.samples.len();
    let mut dist: Vec<Option<f64>> = profile
        .samples
        .iter()
        .map(|&adc| {
            distance_from_adc(model, adc, 1.0).filter(|&d| d <= params.validity_max_mm)
        })
        .collect();

    // A single invalid sample between two valid ones is a beam-spread
    // artifact: bridge it by interpolation.
    for i in 1..n.saturating_sub(1) {
        if dist[i].is_none() {
            if let (Some(a), Some(b)) = (dist[i - 1], dist[i + 1]) {
                dist[i] = Some((a + b) / 2.0);
            }
        }
    }
    let valid: Vec<bool> = dist.iter().map(|d| d.is_some()).collect();

    // Split valid runs at distance jumps, then drop fragments.
    let mut segments = Vec::new();
    let mut run: Vec<(usize, f64)> = Vec::new();
    let flush = |run: &mut Vec<(usize, f64)>, segments: &mut Vec<ScanSegment>| {
        if run.len() >= params.min_segment_len {
            let distances: Vec<f64> = run.iter().map(|&(_, d)| d).collect();
            let d_min = distances.iter().cloned().fold(f64::INFINITY, f64::min);
            let d_max = distances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // Slope steps smaller than the sensor's own wobble at this
            // range carry no shape information.
            let deadband = params
                .slope_deadband_mm
                .max(2.5 * noise_sigma(model, d_max));
            segments.push(ScanSegment {
                start_index: run[0].0,
                extent_deg: (distances.len() - 1) as f64 * profile.step_deg,
                slope_sign_changes: slope_sign_changes(
                    &distances,
                    params.smoothing_window,
                    deadband,
                ),
                distances_mm: distances,
                d_min_mm: d_min,
                d_max_mm: d_max,
            });
        }
        run.clear();
    };
    for (i, d) in dist.iter().enumerate() {
        match d {
            Some(d) => {
                if let Some(&(_, prev)) = run.last() {
                    // A depth discontinuity must clear both the geometric
                    // threshold and the sensor wobble at this range.
                    let near = prev.min(*d);
                    let threshold = params.jump_abs_mm.max(params.jump_rel * near)
                        + 3.0 * noise_sigma(model, near);
                    if (d - prev).abs() > threshold {
                        flush(&mut run, &mut segments);
                    }
                }
                run.push((i, *d));
            }
            None => flush(&mut run, &mut segments),
        }
    }
    flush(&mut run, &mut segments);

    ScanFeatures {
        valid,
        segments,
        step_deg: profile.step_deg,
        start_bearing_deg: profile.start_bearing_deg,
        sensor_offset_mm: params.sensor_offset_mm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectClass {
    FlatObject { width_mm: f64 },
    ConvexCorner,
    ConcaveCorner,
    Gap { width_mm: f64 },
    Complex,
    Unknown,
}

/// RMS perpendicular residual of the total-least-squares line through the
/// segment's points in the scan plane.
fn line_fit_rms(features: &ScanFeatures, seg: &ScanSegment) -> f64 {
    let pts: Vec<Point> = seg
        .distances_mm
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let bearing = (features.start_bearing_deg
                - features.step_deg * (seg.start_index + j) as f64)
                .to_radians();
            let r = d + features.sensor_offset_mm;
            Point::new(r * bearing.cos(), r * bearing.sin())
        })
        .collect();
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Smaller eigenvalue of the 2x2 scatter matrix = residual sum of squares.
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let lambda = (tr - (tr * tr - 4.0 * det).max(0.0).sqrt()) / 2.0;
    (lambda.max(0.0) / n).sqrt()
}

fn segment_mid_distance(seg: &ScanSegment) -> f64 {
    seg.distances_mm[seg.len() / 2]
}

/// Interior index (excluding a 2-sample margin at each end) of the smoothed
/// extremum, if it beats both ends by the drop threshold.
fn interior_extremum(
    seg: &ScanSegment,
    params: &ScanParams,
    drop_mm: f64,
    maximum: bool,
) -> bool {
    if seg.len() < 7 {
        return false;
    }
    let smooth = moving_average(&seg.distances_mm, params.smoothing_window);
    let interior = &smooth[2..smooth.len() - 2];
    let (best_val, _) = interior.iter().enumerate().fold(
        (if maximum { f64::NEG_INFINITY } else { f64::INFINITY }, 0),
        |acc, (i, &v)| {
            if (maximum && v > acc.0) || (!maximum && v < acc.0) {
                (v, i)
            } else {
                acc
            }
        },
    );
    let ends = [smooth[0], smooth[smooth.len() - 1]];
    if maximum {
        ends.iter().all(|&e| best_val - e >= drop_mm)
    } else {
        ends.iter().all(|&e| e - best_val >= drop_mm)
    }
}

/// Applies the decision ladder to the extracted features.
pub fn classify(features: &ScanFeatures, model: &AdcModel, params: &ScanParams) -> ObjectClass {
    match features.segments.len() {
        0 => ObjectClass::Unknown,
        1 => classify_single(features, &features.segments[0], model, params),
        2 => {
            let (a, b) = (&features.segments[0], &features.segments[1]);
            let between = b.start_index.saturating_sub(a.end_index() + 1);
            if between >= 2 {
                // Two runs flanking a blind span: report the hole's width at
                // the flank distance.
                let extent = (between + 1) as f64 * features.step_deg;
                let d_flank = (a.distances_mm[a.len() - 1] + b.distances_mm[0]) / 2.0
                    + features.sensor_offset_mm;
                ObjectClass::Gap {
                    width_mm: 2.0 * d_flank * (extent / 2.0).to_radians().tan(),
                }
            } else {
                ObjectClass::Complex
            }
        }
        _ => ObjectClass::Complex,
    }
}

fn classify_single(
    features: &ScanFeatures,
    seg: &ScanSegment,
    model: &AdcModel,
    params: &ScanParams,
) -> ObjectClass {
    if seg.len() < 4 {
        return ObjectClass::Unknown;
    }
    if seg.slope_sign_changes >= 2 {
        return ObjectClass::Complex;
    }
    // An interior distance maximum with falling flanks can only be a corner
    // opening toward the robot; flat surfaces always bottom out at the
    // perpendicular and rise toward the flanks.
    // Require the extremum to clear the noise floor at this range, not just
    // the geometric threshold.
    let drop = params
        .extremum_drop_mm
        .max(2.5 * noise_sigma(model, seg.d_max_mm));
    if interior_extremum(seg, params, drop, true) {
        return ObjectClass::ConcaveCorner;
    }
    let rms_limit = params.flat_rms_mm.max(1.5 * noise_sigma(model, seg.d_max_mm));
    if line_fit_rms(features, seg) <= rms_limit {
        let d_mid = segment_mid_distance(seg) + features.sensor_offset_mm;
        let width = 2.0 * d_mid * (seg.extent_deg / 2.0).to_radians().tan();
        return ObjectClass::FlatObject { width_mm: width };
    }
    if interior_extremum(seg, params, drop, false) {
        return ObjectClass::ConvexCorner;
    }
    ObjectClass::Complex
}

/// Canonical test scenes, centered on the scan direction. Distances are
/// measured from the rotation center; the robot sits at the origin heading
/// along +x.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Flat32,
    Flat48,
    Flat144,
    ConvexCorner90,
    ConcaveCorner90,
    Gap45,
    Complex,
}

impl SceneKind {
    pub const ALL: [SceneKind; 7] = [
        SceneKind::Flat32,
        SceneKind::Flat48,
        SceneKind::Flat144,
        SceneKind::ConvexCorner90,
        SceneKind::ConcaveCorner90,
        SceneKind::Gap45,
        SceneKind::Complex,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::Flat32 => "flat-32mm",
            SceneKind::Flat48 => "flat-48mm",
            SceneKind::Flat144 => "flat-144mm",
            SceneKind::ConvexCorner90 => "convex-corner-90",
            SceneKind::ConcaveCorner90 => "concave-corner-90",
            SceneKind::Gap45 => "gap-45mm",
            SceneKind::Complex => "complex",
        }
    }

    pub fn by_name(name: &str) -> Option<SceneKind> {
        SceneKind::ALL.iter().copied().find(|s| s.name() == name)
    }

    /// The class the scene is built to represent (`Complex` included).
    pub fn expected_class(&self) -> ObjectClass {
        match self {
            SceneKind::Flat32 => ObjectClass::FlatObject { width_mm: 32.0 },
            SceneKind::Flat48 => ObjectClass::FlatObject { width_mm: 48.0 },
            SceneKind::Flat144 => ObjectClass::FlatObject { width_mm: 144.0 },
            SceneKind::ConvexCorner90 => ObjectClass::ConvexCorner,
            SceneKind::ConcaveCorner90 => ObjectClass::ConcaveCorner,
            SceneKind::Gap45 => ObjectClass::Gap { width_mm: 45.0 },
            SceneKind::Complex => ObjectClass::Complex,
        }
    }

    /// Builds the scene and the scanning pose.
    pub fn build(&self) -> (WorldModel, Pose) {
        let mut world = WorldModel::empty();
        let pose = Pose::new(0.0, 0.0, 0.0).unwrap();
        let wall = |x0: f64, y0: f64, x1: f64, y1: f64| {
            SegmentObstacle::new(Point::new(x0, y0), Point::new(x1, y1), 1.0).unwrap()
        };
        match self {
            SceneKind::Flat32 => world.obstacles.push(wall(60.0, -16.0, 60.0, 16.0)),
            SceneKind::Flat48 => world.obstacles.push(wall(60.0, -24.0, 60.0, 24.0)),
            SceneKind::Flat144 => world.obstacles.push(wall(100.0, -72.0, 100.0, 72.0)),
            SceneKind::ConvexCorner90 => {
                // Apex toward the robot, faces receding at 45 degrees.
                world.obstacles.push(wall(60.0, 0.0, 260.0, 200.0));
                world.obstacles.push(wall(60.0, 0.0, 260.0, -200.0));
            }
            SceneKind::ConcaveCorner90 => {
                // Apex away from the robot, faces approaching at 45 degrees,
                // sized to stay inside the sweep of both motion modes.
                world.obstacles.push(wall(60.0, 0.0, 32.4, 27.6));
                world.obstacles.push(wall(60.0, 0.0, 32.4, -27.6));
            }
            SceneKind::Gap45 => {
                // Two coplanar flanks with a 45 mm hole between them.
                world.obstacles.push(wall(60.0, 22.5, 60.0, 44.0));
                world.obstacles.push(wall(60.0, -22.5, 60.0, -44.0));
            }
            SceneKind::Complex => {
                // Three walls at distinct distances, separated in bearing so
                // the cone never blends neighbours into one run.
                world.obstacles.push(wall(55.0, -40.0, 55.0, -12.0));
                world.obstacles.push(wall(80.0, -5.0, 95.0, 25.0));
                world.obstacles.push(wall(100.0, 45.0, 80.0, 72.0));
            }
        }
        (world, pose)
    }
}
