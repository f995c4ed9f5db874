//! Road test cases: control points, Catmull-Rom interpolation, validity,
//! structural features and the random generation / mutation operators used
//! by the search.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 20;
pub const DEFAULT_LANE_WIDTH: f64 = 4.0;
pub const DEFAULT_BBOX_SIDE: f64 = 250.0;
pub const DEFAULT_TURN_THRESHOLD_DEG: f64 = 5.0;

/// Radii above this are reported as straight (infinite radius).
pub const STRAIGHT_RADIUS: f64 = 1.0e6;

const START_END_TOLERANCE: f64 = 1.0e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadError {
    #[error("a road needs at least 4 control points, got {0}")]
    TooFewControlPoints(usize),
    #[error("samples_per_segment must be >= 2, got {0}")]
    TooFewSamples(usize),
    #[error("lane_width must be positive and finite, got {0}")]
    BadLaneWidth(f64),
    #[error("bbox_side must be positive and finite, got {0}")]
    BadBoundingBox(f64),
    #[error("control point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("degenerate road: consecutive points {0} and {1} coincide")]
    DegenerateSpec(usize, usize),
    #[error("no valid road generated after {0} attempts")]
    GenerationExhausted(usize),
    #[error("no valid mutant found after {0} attempts")]
    MutationExhausted(usize),
}

/// A planar point in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

pub type ControlPoint = Point;

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl std::ops::Add for Point {
    type Output = Point;

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Abstract road representation: the test case that search evolves and
/// migration re-instantiates on every simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub control_points: Vec<ControlPoint>,
    pub samples_per_segment: usize,
    pub lane_width: f64,
    pub bbox_side: f64,
}

impl RoadSpec {
    pub fn new(control_points: Vec<ControlPoint>) -> Result<Self, RoadError> {
        let spec = RoadSpec {
            control_points,
            samples_per_segment: DEFAULT_SAMPLES_PER_SEGMENT,
            lane_width: DEFAULT_LANE_WIDTH,
            bbox_side: DEFAULT_BBOX_SIDE,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_samples(mut self, samples_per_segment: usize) -> Self {
        self.samples_per_segment = samples_per_segment;
        self
    }

    /// Checks the structural invariants (not road validity).
    pub fn check(&self) -> Result<(), RoadError> {
        if self.control_points.len() < 4 {
            return Err(RoadError::TooFewControlPoints(self.control_points.len()));
        }
        if self.samples_per_segment < 2 {
            return Err(RoadError::TooFewSamples(self.samples_per_segment));
        }
        if !(self.lane_width.is_finite() && self.lane_width > 0.0) {
            return Err(RoadError::BadLaneWidth(self.lane_width));
        }
        if !(self.bbox_side.is_finite() && self.bbox_side > 0.0) {
            return Err(RoadError::BadBoundingBox(self.bbox_side));
        }
        if let Some(i) = self.control_points.iter().position(|p| !p.is_finite()) {
            return Err(RoadError::NonFinite(i));
        }
        Ok(())
    }

    /// The same road driven in the opposite direction.
    pub fn reversed(&self) -> RoadSpec {
        let mut r = self.clone();
        r.control_points.reverse();
        r
    }

    /// Stable content identifier (hex digest of the canonical JSON form).
    pub fn content_id(&self) -> String {
        let json = serde_json::to_vec(self).expect("RoadSpec serializes");
        crate::seeds::short_digest(&json)
    }
}

/// Interpolated right-lane center line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadPolyline {
    pub center_points: Vec<Point>,
    /// Tangent angle at each point, radians.
    pub headings: Vec<f64>,
    /// Arc length from the first point to each point, meters.
    pub cumulative_length: Vec<f64>,
}

impl RoadPolyline {
    /// Builds a polyline from raw points, estimating headings by chord
    /// directions (central differences inside, one-sided at the ends).
    pub fn from_points(points: Vec<Point>) -> Result<Self, RoadError> {
        if points.len() < 2 {
            return Err(RoadError::TooFewControlPoints(points.len()));
        }
        check_distinct(&points)?;
        let n = points.len();
        let headings = (0..n)
            .map(|i| {
                let (a, b) = match i {
                    0 => (points[0], points[1]),
                    i if i == n - 1 => (points[n - 2], points[n - 1]),
                    i => (points[i - 1], points[i + 1]),
                };
                let d = b - a;
                d.y.atan2(d.x)
            })
            .collect();
        Ok(Self::assemble(points, headings))
    }

    fn assemble(center_points: Vec<Point>, headings: Vec<f64>) -> Self {
        let mut cumulative_length = Vec::with_capacity(center_points.len());
        let mut acc = 0.0;
        cumulative_length.push(0.0);
        for w in center_points.windows(2) {
            acc += w[0].dist(w[1]);
            cumulative_length.push(acc);
        }
        RoadPolyline {
            center_points,
            headings,
            cumulative_length,
        }
    }

    pub fn len(&self) -> usize {
        self.center_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.cumulative_length.last().copied().unwrap_or(0.0)
    }

    pub fn start(&self) -> Point {
        self.center_points[0]
    }

    pub fn end(&self) -> Point {
        self.center_points[self.center_points.len() - 1]
    }
}

fn check_distinct(points: &[Point]) -> Result<(), RoadError> {
    match points.windows(2).position(|w| w[0] == w[1]) {
        Some(i) => Err(RoadError::DegenerateSpec(i, i + 1)),
        None => Ok(()),
    }
}

/// Uniform Catmull-Rom interpolation through `P2 .. P(n-1)`.
///
/// Each segment `P(i+1) -> P(i+2)` is sampled at `samples_per_segment`
/// parameter values `k / s`; the final point is the last interior control
/// point, copied exactly.
pub fn interpolate_catmull_rom(spec: &RoadSpec) -> Result<RoadPolyline, RoadError> {
    spec.check()?;
    let cps = &spec.control_points;
    check_distinct(cps)?;
    let s = spec.samples_per_segment;
    let n_seg = cps.len() - 3;
    let mut points = Vec::with_capacity(n_seg * s + 1);
    let mut headings = Vec::with_capacity(n_seg * s + 1);

    for seg in 0..n_seg {
        let (p0, p1, p2, p3) = (cps[seg], cps[seg + 1], cps[seg + 2], cps[seg + 3]);
        for k in 0..s {
            let t = k as f64 / s as f64;
            points.push(catmull_rom_point(p0, p1, p2, p3, t));
            headings.push(catmull_rom_heading(p0, p1, p2, p3, t));
        }
    }
    let last = n_seg - 1;
    let (p0, p1, p2, p3) = (cps[last], cps[last + 1], cps[last + 2], cps[last + 3]);
    points.push(p2);
    headings.push(catmull_rom_heading(p0, p1, p2, p3, 1.0));

    check_distinct(&points)?;
    Ok(RoadPolyline::assemble(points, headings))
}

fn catmull_rom_point(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let t2 = t * t;
    let t3 = t2 * t;
    let coord = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b
            + (-a + c) * t
            + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2
            + (-a + 3.0 * b - 3.0 * c + d) * t3)
    };
    Point::new(coord(p0.x, p1.x, p2.x, p3.x), coord(p0.y, p1.y, p2.y, p3.y))
}

fn catmull_rom_heading(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> f64 {
    let deriv = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * ((-a + c)
            + 2.0 * (2.0 * a - 5.0 * b + 4.0 * c - d) * t
            + 3.0 * (-a + 3.0 * b - 3.0 * c + d) * t * t)
    };
    let dx = deriv(p0.x, p1.x, p2.x, p3.x);
    let dy = deriv(p0.y, p1.y, p2.y, p3.y);
    if dx.hypot(dy) > 1e-12 {
        dy.atan2(dx)
    } else {
        // Stationary tangent: fall back to the segment chord.
        let c = p2 - p1;
        c.y.atan2(c.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    StartEqualsEnd,
    OutOfBoundingBox,
    SelfIntersection,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InvalidReason::StartEqualsEnd => "start equals end",
            InvalidReason::OutOfBoundingBox => "out of bounding box",
            InvalidReason::SelfIntersection => "self intersection",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidityResult {
    Valid,
    Invalid(InvalidReason),
}

impl ValidityResult {
    pub fn is_valid(self) -> bool {
        matches!(self, ValidityResult::Valid)
    }
}

/// Applies the three validity rules in order: distinct endpoints, every
/// polyline point inside `[0, bbox_side]^2`, no crossing between
/// non-adjacent polyline segments.
pub fn validate_road(polyline: &RoadPolyline, spec: &RoadSpec) -> ValidityResult {
    if polyline.start().dist(polyline.end()) <= START_END_TOLERANCE {
        return ValidityResult::Invalid(InvalidReason::StartEqualsEnd);
    }
    let side = spec.bbox_side;
    let inside = |p: &Point| (0.0..=side).contains(&p.x) && (0.0..=side).contains(&p.y);
    if !polyline.center_points.iter().all(inside) {
        return ValidityResult::Invalid(InvalidReason::OutOfBoundingBox);
    }
    if has_self_intersection(&polyline.center_points) {
        return ValidityResult::Invalid(InvalidReason::SelfIntersection);
    }
    ValidityResult::Valid
}

/// Interpolates and validates in one go; a degenerate spec is invalid.
pub fn is_valid_spec(spec: &RoadSpec) -> bool {
    interpolate_catmull_rom(spec)
        .map(|poly| validate_road(&poly, spec).is_valid())
        .unwrap_or(false)
}

fn has_self_intersection(pts: &[Point]) -> bool {
    let n_seg = pts.len().saturating_sub(1);
    // Axis-aligned boxes of each segment, used as a cheap reject.
    let boxes: Vec<[f64; 4]> = pts
        .windows(2)
        .map(|w| {
            [
                w[0].x.min(w[1].x),
                w[0].x.max(w[1].x),
                w[0].y.min(w[1].y),
                w[0].y.max(w[1].y),
            ]
        })
        .collect();
    for i in 0..n_seg {
        for j in (i + 2)..n_seg {
            let (a, b) = (boxes[i], boxes[j]);
            if a[1] < b[0] || b[1] < a[0] || a[3] < b[2] || b[3] < a[2] {
                continue;
            }
            if segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                return true;
            }
        }
    }
    false
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = orient(p3, p4, p1);
    let d2 = orient(p3, p4, p2);
    let d3 = orient(p1, p2, p3);
    let d4 = orient(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p4, p1))
        || (d2 == 0.0 && on_segment(p3, p4, p2))
        || (d3 == 0.0 && on_segment(p1, p2, p3))
        || (d4 == 0.0 && on_segment(p1, p2, p4))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Counts turns: maximal runs of same-signed heading deltas whose summed
/// sweep exceeds `angle_threshold_deg`. Zero deltas end a run.
pub fn count_turns(polyline: &RoadPolyline, angle_threshold_deg: f64) -> u32 {
    let threshold = angle_threshold_deg.to_radians();
    let mut turns = 0;
    let mut run_sign = 0.0_f64;
    let mut run_sweep = 0.0;
    for w in polyline.headings.windows(2) {
        let d = wrap_angle(w[1] - w[0]);
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        if sign != 0.0 && sign == run_sign {
            run_sweep += d.abs();
            continue;
        }
        if run_sweep > threshold {
            turns += 1;
        }
        run_sign = sign;
        run_sweep = d.abs();
    }
    if run_sweep > threshold {
        turns += 1;
    }
    turns
}

/// Circumradius of a point triple; `f64::INFINITY` when (near-)collinear.
pub fn circumradius(a: Point, b: Point, c: Point) -> f64 {
    let twice_area = orient(a, b, c).abs();
    if twice_area == 0.0 {
        return f64::INFINITY;
    }
    let r = a.dist(b) * b.dist(c) * c.dist(a) / (2.0 * twice_area);
    if r > STRAIGHT_RADIUS {
        f64::INFINITY
    } else {
        r
    }
}

/// Minimum circumradius over consecutive point triples.
pub fn min_radius(polyline: &RoadPolyline) -> f64 {
    polyline
        .center_points
        .windows(3)
        .map(|w| circumradius(w[0], w[1], w[2]))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadFeatures {
    pub turn_count: u32,
    /// Reciprocal of the minimum radius, 1/m; zero for a straight road.
    pub curvature: f64,
}

pub fn road_features(polyline: &RoadPolyline, turn_threshold_deg: f64) -> RoadFeatures {
    let r = min_radius(polyline);
    RoadFeatures {
        turn_count: count_turns(polyline, turn_threshold_deg),
        curvature: if r.is_finite() { 1.0 / r } else { 0.0 },
    }
}

/// Parameters of the random road generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadGenParams {
    pub n_ctrl: usize,
    pub samples_per_segment: usize,
    pub lane_width: f64,
    pub bbox_side: f64,
    /// Distance between consecutive control points, meters.
    pub segment_length: f64,
    /// Largest heading change at a single control point, degrees.
    pub max_turn_deg: f64,
    /// Largest accumulated same-direction sweep, degrees.
    pub max_sweep_deg: f64,
    pub max_attempts: usize,
}

impl Default for RoadGenParams {
    fn default() -> Self {
        RoadGenParams {
            n_ctrl: 8,
            samples_per_segment: DEFAULT_SAMPLES_PER_SEGMENT,
            lane_width: DEFAULT_LANE_WIDTH,
            bbox_side: DEFAULT_BBOX_SIDE,
            segment_length: 25.0,
            max_turn_deg: 100.0,
            max_sweep_deg: 270.0,
            max_attempts: 1000,
        }
    }
}

/// Draws a valid random road. Control points follow a random walk with a
/// fixed step and a bounded heading change; a change that would push the
/// current same-direction sweep past `max_sweep_deg` is mirrored.
pub fn generate_random_road(seed: u64, params: &RoadGenParams) -> Result<RoadSpec, RoadError> {
    if params.n_ctrl < 4 {
        return Err(RoadError::TooFewControlPoints(params.n_ctrl));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(&mut rng, params)
}

pub fn generate_with_rng<R: Rng>(
    rng: &mut R,
    params: &RoadGenParams,
) -> Result<RoadSpec, RoadError> {
    if params.n_ctrl < 4 {
        return Err(RoadError::TooFewControlPoints(params.n_ctrl));
    }
    let side = params.bbox_side;
    let max_turn = params.max_turn_deg.to_radians();
    let max_sweep = params.max_sweep_deg.to_radians();
    for _ in 0..params.max_attempts {
        let mut p = Point::new(
            rng.random_range(0.2 * side..0.8 * side),
            rng.random_range(0.2 * side..0.8 * side),
        );
        let mut heading = rng.random_range(-PI..PI);
        let mut sweep = 0.0_f64;
        let mut cps = Vec::with_capacity(params.n_ctrl);
        cps.push(p);
        for i in 1..params.n_ctrl {
            // The first leg sets the entry direction only.
            if i > 1 {
                let mut delta = rng.random_range(-max_turn..=max_turn);
                if delta * sweep > 0.0 && (sweep + delta).abs() > max_sweep {
                    delta = -delta;
                }
                sweep = if delta * sweep > 0.0 {
                    sweep + delta
                } else {
                    delta
                };
                heading += delta;
            }
            p = p + Point::new(heading.cos(), heading.sin()).scale(params.segment_length);
            cps.push(p);
        }
        let spec = RoadSpec {
            control_points: cps,
            samples_per_segment: params.samples_per_segment,
            lane_width: params.lane_width,
            bbox_side: params.bbox_side,
        };
        if is_valid_spec(&spec) {
            return Ok(spec);
        }
    }
    Err(RoadError::GenerationExhausted(params.max_attempts))
}

/// Displaces one uniformly chosen interior control point by independent
/// uniform offsets in `[-displacement, displacement]`, retrying until the
/// mutant is valid.
pub fn mutate_road(
    spec: &RoadSpec,
    seed: u64,
    displacement: f64,
    max_attempts: usize,
) -> Result<RoadSpec, RoadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mutate_with_rng(spec, &mut rng, displacement, max_attempts)
}

pub fn mutate_with_rng<R: Rng>(
    spec: &RoadSpec,
    rng: &mut R,
    displacement: f64,
    max_attempts: usize,
) -> Result<RoadSpec, RoadError> {
    spec.check()?;
    if displacement == 0.0 {
        return Ok(spec.clone());
    }
    let d = displacement.abs();
    let n = spec.control_points.len();
    for _ in 0..max_attempts {
        let idx = rng.random_range(1..n - 1);
        let dx = rng.random_range(-d..=d);
        let dy = rng.random_range(-d..=d);
        let mut mutant = spec.clone();
        let cp = &mut mutant.control_points[idx];
        *cp = *cp + Point::new(dx, dy);
        if is_valid_spec(&mutant) {
            return Ok(mutant);
        }
    }
    Err(RoadError::MutationExhausted(max_attempts))
}
