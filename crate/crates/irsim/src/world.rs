//! 2D arena geometry and exact ray casting against segment obstacles and
//! robot body discs. All lengths are millimeters, all angles degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Radius of the disc used to occlude line-of-sight through a robot body.
/// The chassis is a 30x30 mm square; a 15 mm disc covers it.
pub const ROBOT_BODY_RADIUS_MM: f64 = 15.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn sub(self, other: Point) -> (f64, f64) {
        (self.x - other.x, self.y - other.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        let (dx, dy) = self.sub(other);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Normalize an angle in degrees to [0, 360).
pub fn norm_deg(a: f64) -> f64 {
    let r = a % 360.0;
    if r < 0.0 {
        r + 360.0
    } else {
        r
    }
}

/// Smallest signed difference a - b, wrapped to [-180, 180).
pub fn wrap_deg(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % 360.0;
    if d < -180.0 {
        d += 360.0;
    } else if d >= 180.0 {
        d -= 360.0;
    }
    d
}

pub fn unit_vec(direction_deg: f64) -> (f64, f64) {
    let r = direction_deg.to_radians();
    (r.cos(), r.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in [0, 360).
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() || !heading.is_finite() {
            return Err(SimError::param("pose", "coordinates must be finite"));
        }
        Ok(Pose {
            x,
            y,
            heading: norm_deg(heading),
        })
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn rotate(&mut self, delta_deg: f64) {
        self.heading = norm_deg(self.heading + delta_deg);
    }

    /// Bearing from this pose to a point, in world degrees.
    pub fn bearing_to(&self, p: Point) -> f64 {
        norm_deg((p.y - self.y).atan2(p.x - self.x).to_degrees())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentObstacle {
    pub a: Point,
    pub b: Point,
    /// Surface reflectivity in [0, 1]; white paper ~1.0, grey cardboard ~0.6.
    pub reflectivity: f64,
}

impl SegmentObstacle {
    pub fn new(a: Point, b: Point, reflectivity: f64) -> Result<Self> {
        if a.dist(b) < EPS {
            return Err(SimError::param("obstacle", "endpoints must be distinct"));
        }
        if !(0.0..=1.0).contains(&reflectivity) {
            return Err(SimError::param("reflectivity", "must be in [0, 1]"));
        }
        Ok(SegmentObstacle { a, b, reflectivity })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// A robot as seen by the geometry layer: a pose plus an occluding body disc.
#[derive(Debug, Clone, Copy)]
pub struct RobotBody {
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub arena: Rect,
    pub obstacles: Vec<SegmentObstacle>,
    pub robots: Vec<RobotBody>,
    /// Ambient light level in [0, 1].
    pub ambient_level: f64,
}

impl WorldModel {
    pub fn new(arena: Rect, obstacles: Vec<SegmentObstacle>, ambient_level: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ambient_level) {
            return Err(SimError::param("ambient_level", "must be in [0, 1]"));
        }
        Ok(WorldModel {
            arena,
            obstacles,
            robots: Vec::new(),
            ambient_level,
        })
    }

    /// Empty world with a large arena, convenient for tests.
    pub fn empty() -> Self {
        WorldModel {
            arena: Rect {
                min: Point::new(-10_000.0, -10_000.0),
                max: Point::new(10_000.0, 10_000.0),
            },
            obstacles: Vec::new(),
            robots: Vec::new(),
            ambient_level: 0.0,
        }
    }

    /// Adds a robot, rejecting overlap with an existing body disc.
    pub fn add_robot(&mut self, pose: Pose) -> Result<usize> {
        for r in &self.robots {
            if r.pose.position().dist(pose.position()) < 2.0 * ROBOT_BODY_RADIUS_MM {
                return Err(SimError::param("robot", "bodies overlap at spawn"));
            }
        }
        self.robots.push(RobotBody { pose });
        Ok(self.robots.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HitTarget {
    Obstacle(usize),
    Robot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub target: HitTarget,
    /// Angle between the ray and the surface normal, in [0, 90].
    pub incidence_angle: f64,
}

impl RayHit {
    /// Reflectivity of the surface that was hit. Robot bodies reflect like
    /// grey plastic.
    pub fn reflectivity(&self, world: &WorldModel) -> f64 {
        match self.target {
            HitTarget::Obstacle(i) => world.obstacles[i].reflectivity,
            HitTarget::Robot(_) => 0.5,
        }
    }
}

fn ray_segment(origin: Point, u: (f64, f64), seg: &SegmentObstacle) -> Option<(f64, f64)> {
    // Solve origin + t*u = a + s*(b-a) for t > 0, s in [0, 1].
    let (dx, dy) = seg.b.sub(seg.a);
    let denom = u.0 * dy - u.1 * dx;
    if denom.abs() < EPS {
        return None; // parallel or degenerate
    }
    let (ax, ay) = seg.a.sub(origin);
    let t = (ax * dy - ay * dx) / denom;
    let s = (ax * u.1 - ay * u.0) / denom;
    if t <= EPS || !(-EPS..=1.0 + EPS).contains(&s) {
        return None;
    }
    // Incidence: angle between ray and segment normal.
    let len = (dx * dx + dy * dy).sqrt();
    let (nx, ny) = (-dy / len, dx / len);
    let cos_inc = (u.0 * nx + u.1 * ny).abs().min(1.0);
    Some((t, cos_inc.acos().to_degrees()))
}

fn ray_disc(origin: Point, u: (f64, f64), center: Point, radius: f64) -> Option<(f64, f64)> {
    let (cx, cy) = center.sub(origin);
    let proj = cx * u.0 + cy * u.1;
    let d2 = cx * cx + cy * cy - proj * proj;
    let r2 = radius * radius;
    if d2 > r2 {
        return None;
    }
    let half = (r2 - d2).sqrt();
    let t = if proj - half > EPS {
        proj - half
    } else if proj + half > EPS {
        proj + half
    } else {
        return None;
    };
    // Normal at the hit point points from center to hit.
    let hx = origin.x + t * u.0 - center.x;
    let hy = origin.y + t * u.1 - center.y;
    let hlen = (hx * hx + hy * hy).sqrt();
    let cos_inc = ((u.0 * hx + u.1 * hy) / hlen).abs().min(1.0);
    Some((t, cos_inc.acos().to_degrees()))
}

/// Distance along the ray at which it leaves the arena rectangle.
fn arena_exit(arena: &Rect, origin: Point, u: (f64, f64)) -> f64 {
    let mut exit = f64::INFINITY;
    if u.0.abs() > EPS {
        for wall_x in [arena.min.x, arena.max.x] {
            let t = (wall_x - origin.x) / u.0;
            if t > EPS {
                exit = exit.min(t);
            }
        }
    }
    if u.1.abs() > EPS {
        for wall_y in [arena.min.y, arena.max.y] {
            let t = (wall_y - origin.y) / u.1;
            if t > EPS {
                exit = exit.min(t);
            }
        }
    }
    exit
}

/// Nearest intersection of a ray with any obstacle segment or robot body,
/// or `None` if the ray leaves the arena without hitting anything.
pub fn ray_cast(world: &WorldModel, origin: Point, direction_deg: f64) -> Option<RayHit> {
    ray_cast_excluding(world, origin, direction_deg, &[])
}

/// Like [`ray_cast`] but ignoring the listed robot indices (used for
/// line-of-sight checks between a transmitter and a receiver).
pub fn ray_cast_excluding(
    world: &WorldModel,
    origin: Point,
    direction_deg: f64,
    exclude_robots: &[usize],
) -> Option<RayHit> {
    if !direction_deg.is_finite() {
        return None;
    }
    let u = unit_vec(direction_deg);
    let max_t = arena_exit(&world.arena, origin, u);
    let mut best: Option<RayHit> = None;
    let mut consider = |t: f64, inc: f64, target: HitTarget| {
        if t <= max_t + EPS && best.map_or(true, |b| t < b.distance) {
            best = Some(RayHit {
                distance: t,
                target,
                incidence_angle: inc,
            });
        }
    };
    for (i, seg) in world.obstacles.iter().enumerate() {
        if let Some((t, inc)) = ray_segment(origin, u, seg) {
            consider(t, inc, HitTarget::Obstacle(i));
        }
    }
    for (i, robot) in world.robots.iter().enumerate() {
        if exclude_robots.contains(&i) {
            continue;
        }
        if let Some((t, inc)) = ray_disc(origin, u, robot.pose.position(), ROBOT_BODY_RADIUS_MM) {
            consider(t, inc, HitTarget::Robot(i));
        }
    }
    best
}

/// Casts `ray_count` rays uniformly spaced in [-half_angle, +half_angle]
/// around `direction_deg`. The count must be odd so the center ray exists.
pub fn cone_cast(
    world: &WorldModel,
    origin: Point,
    direction_deg: f64,
    half_angle: f64,
    ray_count: usize,
) -> Result<Vec<(f64, Option<RayHit>)>> {
    if !(0.0 < half_angle && half_angle <= 90.0) {
        return Err(SimError::param("half_angle", "must be in (0, 90]"));
    }
    if ray_count < 3 || ray_count % 2 == 0 {
        return Err(SimError::param("ray_count", "must be odd and >= 3"));
    }
    let step = 2.0 * half_angle / (ray_count - 1) as f64;
    let mut out = Vec::with_capacity(ray_count);
    for i in 0..ray_count {
        let offset = -half_angle + i as f64 * step;
        out.push((offset, ray_cast(world, origin, direction_deg + offset)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_world(x: f64) -> WorldModel {
        let mut w = WorldModel::empty();
        w.obstacles.push(
            SegmentObstacle::new(Point::new(x, -500.0), Point::new(x, 500.0), 1.0).unwrap(),
        );
        w
    }

    #[test]
    fn perpendicular_wall_at_100() {
        let w = wall_world(100.0);
        let hit = ray_cast(&w, Point::new(0.0, 0.0), 0.0).unwrap();
        assert!((hit.distance - 100.0).abs() < 1e-9);
        assert!(hit.incidence_angle.abs() < 1e-9);
    }

    #[test]
    fn parallel_ray_misses() {
        let w = wall_world(100.0);
        assert!(ray_cast(&w, Point::new(0.0, 0.0), 90.0).is_none());
    }

    #[test]
    fn oblique_hit_45_degrees() {
        // Wall at x = 50; ray at 45 degrees reaches it at 50 / cos(45) = 70.71.
        let w = wall_world(50.0);
        let hit = ray_cast(&w, Point::new(0.0, 0.0), 45.0).unwrap();
        assert!((hit.distance - 70.710678).abs() < 0.01);
        assert!((hit.incidence_angle - 45.0).abs() < 1e-6);
    }

    #[test]
    fn hit_never_behind_origin() {
        let w = wall_world(-10.0);
        assert!(ray_cast(&w, Point::new(0.0, 0.0), 0.0).is_none());
    }

    #[test]
    fn robot_body_occludes() {
        let mut w = WorldModel::empty();
        w.add_robot(Pose::new(100.0, 0.0, 0.0).unwrap()).unwrap();
        let hit = ray_cast(&w, Point::new(0.0, 0.0), 0.0).unwrap();
        assert_eq!(hit.target, HitTarget::Robot(0));
        assert!((hit.distance - 85.0).abs() < 1e-9);
        let none = ray_cast_excluding(&w, Point::new(0.0, 0.0), 0.0, &[0]);
        assert!(none.is_none());
    }

    #[test]
    fn spawn_overlap_rejected() {
        let mut w = WorldModel::empty();
        w.add_robot(Pose::new(0.0, 0.0, 0.0).unwrap()).unwrap();
        assert!(w.add_robot(Pose::new(20.0, 0.0, 0.0).unwrap()).is_err());
        assert!(w.add_robot(Pose::new(40.0, 0.0, 0.0).unwrap()).is_ok());
    }

    #[test]
    fn cone_cast_flat_wall() {
        let w = wall_world(100.0);
        let rays = cone_cast(&w, Point::new(0.0, 0.0), 0.0, 10.0, 3).unwrap();
        assert_eq!(rays.len(), 3);
        let center = rays[1].1.unwrap();
        assert!((center.distance - 100.0).abs() < 1e-9);
        for i in [0usize, 2] {
            let edge = rays[i].1.unwrap();
            assert!((edge.distance - 100.0 / 10f64.to_radians().cos()).abs() < 0.01);
        }
    }

    #[test]
    fn cone_cast_empty_world() {
        let w = WorldModel::empty();
        let rays = cone_cast(&w, Point::new(0.0, 0.0), 37.0, 10.0, 5).unwrap();
        assert!(rays.iter().all(|(_, h)| h.is_none()));
    }

    #[test]
    fn cone_cast_object_edge() {
        // 32 mm object centered on the ray axis at 100 mm, aimed at its edge:
        // the center ray and one side hit, the other side misses.
        let mut w = WorldModel::empty();
        w.obstacles.push(
            SegmentObstacle::new(Point::new(100.0, -32.0), Point::new(100.0, 0.0), 1.0).unwrap(),
        );
        let rays = cone_cast(&w, Point::new(0.0, 0.0), 0.0, 10.0, 9).unwrap();
        let hits: Vec<bool> = rays.iter().map(|(_, h)| h.is_some()).collect();
        assert!(hits[4], "center ray must hit the edge");
        assert!(hits.iter().take(4).all(|h| *h), "low side hits");
        assert!(hits.iter().skip(5).all(|h| !*h), "high side misses");
    }

    #[test]
    fn cone_cast_rejects_even_count() {
        let w = WorldModel::empty();
        assert!(cone_cast(&w, Point::new(0.0, 0.0), 0.0, 10.0, 4).is_err());
    }

    /// Independent oracle: bracket the surface crossing by marching along the
    /// ray and bisecting on the side-of-segment predicate.
    fn brute_force_distance(seg: &SegmentObstacle, origin: Point, dir: f64) -> Option<f64> {
        let u = unit_vec(dir);
        let point_at = |t: f64| Point::new(origin.x + t * u.0, origin.y + t * u.1);
        let side = |p: Point| {
            let (dx, dy) = seg.b.sub(seg.a);
            let (px, py) = p.sub(seg.a);
            dx * py - dy * px
        };
        let within = |p: Point| {
            let (dx, dy) = seg.b.sub(seg.a);
            let (px, py) = p.sub(seg.a);
            let s = (px * dx + py * dy) / (dx * dx + dy * dy);
            (0.0..=1.0).contains(&s)
        };
        let step = 1e-3;
        let mut t = 0.0;
        let mut prev = side(point_at(0.0));
        while t < 2000.0 {
            let next_t = t + step;
            let cur = side(point_at(next_t));
            if prev == 0.0 || (prev > 0.0) != (cur > 0.0) {
                // bisect in [t, next_t]
                let (mut lo, mut hi) = (t, next_t);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if (side(point_at(mid)) > 0.0) == (prev > 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let hit_t = 0.5 * (lo + hi);
                if within(point_at(hit_t)) {
                    return Some(hit_t);
                }
            }
            prev = cur;
            t = next_t;
        }
        None
    }

    #[test]
    fn ray_cast_matches_brute_force_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 60 {
            let seg = SegmentObstacle::new(
                Point::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0)),
                Point::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0)),
                1.0,
            )
            .unwrap();
            let dir = rng.gen_range(0.0..360.0);
            let mut w = WorldModel::empty();
            w.obstacles.push(seg);
            let fast = ray_cast(&w, Point::new(0.0, 0.0), dir);
            let slow = brute_force_distance(&seg, Point::new(0.0, 0.0), dir);
            match (fast, slow) {
                (Some(h), Some(t)) => {
                    assert!(
                        (h.distance - t).abs() < 1e-6,
                        "mismatch: {} vs {}",
                        h.distance,
                        t
                    );
                    checked += 1;
                }
                (None, None) => {}
                // The marching oracle can skim an endpoint the exact solver
                // rejects (or vice versa) only within its step size of the
                // segment ends; treat near-endpoint grazes as agreement.
                (a, b) => {
                    let t = a.map(|h| h.distance).or(b).unwrap();
                    let p = {
                        let u = unit_vec(dir);
                        Point::new(t * u.0, t * u.1)
                    };
                    let graze = p.dist(seg.a).min(p.dist(seg.b)) < 1e-2;
                    assert!(graze, "disagreement away from endpoints: {:?} {:?}", a, b);
                }
            }
        }
    }

    #[test]
    fn rotation_equivariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = Point::new(rng.gen_range(50.0..300.0), rng.gen_range(-200.0..200.0));
            let b = Point::new(rng.gen_range(50.0..300.0), rng.gen_range(-200.0..200.0));
            if a.dist(b) < 1.0 {
                continue;
            }
            let dir = rng.gen_range(-30.0..30.0);
            let phi: f64 = rng.gen_range(0.0..360.0);
            let rot = |p: Point| {
                let r = phi.to_radians();
                Point::new(p.x * r.cos() - p.y * r.sin(), p.x * r.sin() + p.y * r.cos())
            };
            let mut w1 = WorldModel::empty();
            w1.obstacles.push(SegmentObstacle::new(a, b, 1.0).unwrap());
            let mut w2 = WorldModel::empty();
            w2.obstacles
                .push(SegmentObstacle::new(rot(a), rot(b), 1.0).unwrap());
            let h1 = ray_cast(&w1, Point::new(0.0, 0.0), dir);
            let h2 = ray_cast(&w2, Point::new(0.0, 0.0), dir + phi);
            match (h1, h2) {
                (Some(x), Some(y)) => assert!((x.distance - y.distance).abs() < 1e-6),
                (None, None) => {}
                other => panic!("rotation changed hit status: {:?}", other),
            }
        }
    }
}
