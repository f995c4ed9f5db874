//! Lane-relative measurement against the right-lane center line.

use crate::road::{wrap_angle, Point, RoadPolyline};

/// Distance ahead used for the lookahead curvature estimate, meters.
const LOOKAHEAD: f64 = 5.0;
const WINDOW_BACK: usize = 3;
const WINDOW_AHEAD: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMeasure {
    /// Signed offset from the lane center, positive toward the right edge.
    pub lateral_position: f64,
    /// `lane_width / 2 - |lateral_position|`; negative when out of bound.
    pub lateral_distance: f64,
    /// Arc length of the projection onto the center line.
    pub progress: f64,
    pub segment: usize,
    /// True once the vehicle has crossed the perpendicular at the road end.
    pub past_end: bool,
    pub road_heading: f64,
}

#[derive(Debug, Clone, Copy)]
struct Projection {
    segment: usize,
    t: f64,
    signed_left: f64,
    dist: f64,
}

fn project(poly: &RoadPolyline, i: usize, p: Point) -> Projection {
    let a = poly.center_points[i];
    let b = poly.center_points[i + 1];
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = ab.dot(p - a) / len2;
    let tc = t.clamp(0.0, 1.0);
    let foot = a + ab.scale(tc);
    let dist = p.dist(foot);
    let side = ab.cross(p - a);
    let signed_left = if side >= 0.0 { dist } else { -dist };
    Projection {
        segment: i,
        t,
        signed_left,
        dist,
    }
}

fn finish(poly: &RoadPolyline, lane_width: f64, p: Point, proj: Projection) -> LaneMeasure {
    let last = poly.len() - 2;
    let i = proj.segment;
    let a = poly.center_points[i];
    let b = poly.center_points[i + 1];
    let seg_len = a.dist(b);
    let past_end = i == last && proj.t > 1.0;
    // Beyond either end, measure against the extended end segment.
    let signed_left = if past_end || (i == 0 && proj.t < 0.0) {
        (b - a).cross(p - a) / seg_len
    } else {
        proj.signed_left
    };
    let lateral_position = -signed_left;
    let tc = proj.t.clamp(0.0, 1.0);
    LaneMeasure {
        lateral_position,
        lateral_distance: lane_width / 2.0 - lateral_position.abs(),
        progress: poly.cumulative_length[i] + tc * seg_len,
        segment: i,
        past_end,
        road_heading: poly.headings[i] + tc * wrap_angle(poly.headings[i + 1] - poly.headings[i]),
    }
}

/// Lateral position and distance of `p` relative to the nearest point of
/// the whole center line.
pub fn lateral_measures(p: Point, polyline: &RoadPolyline, lane_width: f64) -> (f64, f64) {
    let m = measure_global(p, polyline, lane_width);
    (m.lateral_position, m.lateral_distance)
}

pub fn measure_global(p: Point, polyline: &RoadPolyline, lane_width: f64) -> LaneMeasure {
    let best = nearest(polyline, p, 0..polyline.len() - 1);
    finish(polyline, lane_width, p, best)
}

fn nearest(poly: &RoadPolyline, p: Point, range: std::ops::Range<usize>) -> Projection {
    range
        .map(|i| project(poly, i, p))
        .min_by(|a, b| a.dist.total_cmp(&b.dist))
        .expect("non-empty segment range")
}

/// Curvature of the center line `LOOKAHEAD` meters past `progress`,
/// from the heading change over that stretch.
pub fn lookahead_curvature(poly: &RoadPolyline, progress: f64) -> f64 {
    let heading_at = |s: f64| {
        let s = s.clamp(0.0, poly.total_length());
        let i = match poly.cumulative_length.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(poly.len() - 2);
        let seg = poly.cumulative_length[i + 1] - poly.cumulative_length[i];
        let t = ((s - poly.cumulative_length[i]) / seg).clamp(0.0, 1.0);
        poly.headings[i] + t * wrap_angle(poly.headings[i + 1] - poly.headings[i])
    };
    let s0 = progress.min(poly.total_length());
    let s1 = (progress + LOOKAHEAD).min(poly.total_length());
    if s1 - s0 <= 1e-9 {
        return 0.0;
    }
    wrap_angle(heading_at(s1) - heading_at(s0)) / (s1 - s0)
}

/// Measures along an episode, searching only a window of segments around
/// the previous match so that nearby but later stretches of road are never
/// mistaken for the current one.
#[derive(Debug, Clone)]
pub struct LaneTracker<'a> {
    polyline: &'a RoadPolyline,
    lane_width: f64,
    segment: usize,
}

impl<'a> LaneTracker<'a> {
    pub fn new(polyline: &'a RoadPolyline, lane_width: f64) -> Self {
        LaneTracker {
            polyline,
            lane_width,
            segment: 0,
        }
    }

    pub fn measure(&mut self, p: Point) -> LaneMeasure {
        let n_seg = self.polyline.len() - 1;
        let lo = self.segment.saturating_sub(WINDOW_BACK);
        let hi = (self.segment + WINDOW_AHEAD + 1).min(n_seg);
        let best = nearest(self.polyline, p, lo..hi);
        self.segment = best.segment;
        finish(self.polyline, self.lane_width, p, best)
    }

    pub fn polyline(&self) -> &RoadPolyline {
        self.polyline
    }
}
