//! Oriented rectangles, convex clipping and intersection-over-union.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{VehicleParams, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box: length {length}, width {width}")]
    DegenerateBox { length: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: [f64; 2], heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    /// Footprint of a vehicle whose rear axle sits at `state`. The box is
    /// centred halfway between the axles.
    pub fn for_vehicle(state: &VehicleState, params: &VehicleParams) -> Self {
        Self::at_rear_axle([state.x, state.y], state.alpha, params)
    }

    pub fn at_rear_axle(rear: [f64; 2], heading: f64, params: &VehicleParams) -> Self {
        let (s, c) = heading.sin_cos();
        let half = params.wheelbase / 2.0;
        Self::new(
            [rear[0] + half * c, rear[1] + half * s],
            heading,
            params.length,
            params.width,
        )
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(GeometryError::DegenerateBox {
                length: self.length,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center[0] + lx * c - ly * s,
                self.center[1] + lx * s + ly * c,
            ]
        })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let lx = dx * c + dy * s;
        let ly = -dx * s + dy * c;
        lx.abs() <= self.length / 2.0 && ly.abs() <= self.width / 2.0
    }
}

/// Shoelace area (positive for counter-clockwise polygons).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - a[1] * b[0];
    }
    twice / 2.0
}

fn side(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`, one
/// half-plane at a time.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let s_cur = side(cur, a, b);
            let s_prev = side(prev, a, b);
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(intersect(prev, cur, s_prev, s_cur));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(intersect(prev, cur, s_prev, s_cur));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    let poly = clip_convex(&a.corners(), &b.corners());
    Ok(polygon_area(&poly).max(0.0))
}

/// Intersection over union of two oriented boxes, in `[0, 1]`.
pub fn obb_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64, GeometryError> {
    if a == b {
        a.validate()?;
        return Ok(1.0);
    }
    let inter = intersection_area(a, b)?;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}
