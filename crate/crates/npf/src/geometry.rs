//! Convex domain geometry: projection onto the closure, the penalty
//! gradient that drives penalized dynamics, the bounded signed-distance
//! extension, and the inward unit normal field.
//!
//! All shapes admit closed-form projections. The signed distance is
//! positive inside, zero on the boundary, negative outside, and clipped
//! to `normal_cutoff` in magnitude so it stays bounded. Its gradient is
//! evaluated almost everywhere; on the measure-zero singular set (ball
//! center, box medial axis) the normal is reported as the zero vector.

use serde::{Deserialize, Serialize};

use crate::error::{NpfError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Interval { lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
}

/// A bounded convex domain together with the cutoff used to keep the
/// signed-distance extension bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    shape: Shape,
    dim: usize,
    normal_cutoff: f64,
}

pub const DEFAULT_NORMAL_CUTOFF: f64 = 1.0;

impl Domain {
    pub fn new(shape: Shape, normal_cutoff: f64) -> Result<Self> {
        if !(normal_cutoff.is_finite() && normal_cutoff > 0.0) {
            return Err(NpfError::invalid(format!(
                "normal_cutoff must be > 0, got {normal_cutoff}"
            )));
        }
        let dim = match &shape {
            Shape::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(NpfError::invalid(format!(
                        "interval requires lo < hi, got [{lo}, {hi}]"
                    )));
                }
                1
            }
            Shape::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return Err(NpfError::invalid("ball center must be finite and non-empty"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(NpfError::invalid(format!("ball radius must be > 0, got {radius}")));
                }
                center.len()
            }
            Shape::AxisBox { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(NpfError::invalid("axis box bounds must be non-empty and equal length"));
                }
                for i in 0..lo.len() {
                    if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                        return Err(NpfError::invalid(format!(
                            "axis box requires lo < hi per coordinate, got [{}, {}] at index {i}",
                            lo[i], hi[i]
                        )));
                    }
                }
                lo.len()
            }
        };
        Ok(Domain { shape, dim, normal_cutoff })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Domain::new(Shape::Interval { lo, hi }, DEFAULT_NORMAL_CUTOFF)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Domain::new(Shape::Ball { center, radius }, DEFAULT_NORMAL_CUTOFF)
    }

    pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        Domain::new(Shape::AxisBox { lo, hi }, DEFAULT_NORMAL_CUTOFF)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn normal_cutoff(&self) -> f64 {
        self.normal_cutoff
    }

    fn check_dim(&self, x: &[f64], context: &'static str) -> Result<()> {
        if x.len() != self.dim {
            return Err(NpfError::DimensionMismatch {
                context,
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Euclidean-nearest point of the closed domain; identity on the closure.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x, "project")?;
        let mut out = x.to_vec();
        self.project_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn project_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Interval { lo, hi } => {
                out[0] = x[0].clamp(*lo, *hi);
            }
            Shape::Ball { center, radius } => {
                let mut norm_sq = 0.0;
                for i in 0..x.len() {
                    let u = x[i] - center[i];
                    out[i] = u;
                    norm_sq += u * u;
                }
                let norm = norm_sq.sqrt();
                if norm <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let scale = radius / norm;
                    for i in 0..x.len() {
                        out[i] = center[i] + out[i] * scale;
                    }
                }
            }
            Shape::AxisBox { lo, hi } => {
                for i in 0..x.len() {
                    out[i] = x[i].clamp(lo[i], hi[i]);
                }
            }
        }
    }

    /// Penalty gradient `2 * (x - project(x))`; vanishes exactly on the closure.
    pub fn penalty_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x, "penalty_gradient")?;
        let mut out = vec![0.0; self.dim];
        self.penalty_gradient_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn penalty_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.project_into(x, out);
        for i in 0..x.len() {
            out[i] = 2.0 * (x[i] - out[i]);
        }
    }

    /// Bounded signed-distance extension: positive inside, zero on the
    /// boundary, negative outside, clipped to `normal_cutoff` in magnitude.
    pub fn distance_extension(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x, "distance_extension")?;
        let raw = self.signed_distance_raw(x);
        Ok(raw.clamp(-self.normal_cutoff, self.normal_cutoff))
    }

    /// Unclipped signed distance to the boundary.
    pub(crate) fn signed_distance_raw(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            Shape::Ball { center, radius } => {
                let norm = dist(x, center);
                radius - norm
            }
            Shape::AxisBox { lo, hi } => {
                let inside = x
                    .iter()
                    .enumerate()
                    .all(|(i, &xi)| xi >= lo[i] && xi <= hi[i]);
                if inside {
                    let mut best = f64::INFINITY;
                    for i in 0..x.len() {
                        best = best.min(x[i] - lo[i]).min(hi[i] - x[i]);
                    }
                    best
                } else {
                    let mut d_sq = 0.0;
                    for i in 0..x.len() {
                        let excess = (lo[i] - x[i]).max(0.0) + (x[i] - hi[i]).max(0.0);
                        d_sq += excess * excess;
                    }
                    -d_sq.sqrt()
                }
            }
        }
    }

    /// Distance from `x` to the closed domain; zero on the closure.
    pub fn distance_to_closure(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x, "distance_to_closure")?;
        Ok((-self.signed_distance_raw(x)).max(0.0))
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x, "contains")?;
        Ok(self.signed_distance_raw(x) >= 0.0)
    }

    /// Gradient of the signed-distance extension: the unit vector pointing
    /// from the nearest boundary point toward the interior, the same
    /// direction at any distance. Returns the zero vector on the singular
    /// set where the gradient is undefined.
    pub fn inward_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x, "inward_normal")?;
        let mut out = vec![0.0; self.dim];
        self.inward_normal_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn inward_normal_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.shape {
            Shape::Interval { lo, hi } => {
                let mid = 0.5 * (lo + hi);
                if x[0] < mid {
                    out[0] = 1.0;
                } else if x[0] > mid {
                    out[0] = -1.0;
                }
            }
            Shape::Ball { center, .. } => {
                let norm = dist(x, center);
                if norm > 0.0 {
                    for i in 0..x.len() {
                        out[i] = -(x[i] - center[i]) / norm;
                    }
                }
            }
            Shape::AxisBox { lo, hi } => {
                let inside = x
                    .iter()
                    .enumerate()
                    .all(|(i, &xi)| xi >= lo[i] && xi <= hi[i]);
                if inside {
                    // Nearest face determines the gradient; ties sit on the
                    // medial axis where it is undefined.
                    let mut best = f64::INFINITY;
                    let mut arg = None;
                    let mut tied = false;
                    for i in 0..x.len() {
                        for (d, sign) in [(x[i] - lo[i], 1.0), (hi[i] - x[i], -1.0)] {
                            if d < best {
                                best = d;
                                arg = Some((i, sign));
                                tied = false;
                            } else if d == best {
                                tied = true;
                            }
                        }
                    }
                    if let (Some((i, sign)), false) = (arg, tied) {
                        out[i] = sign;
                    }
                } else {
                    let mut proj = vec![0.0; x.len()];
                    self.project_into(x, &mut proj);
                    let norm = dist(x, &proj);
                    if norm > 0.0 {
                        for i in 0..x.len() {
                            out[i] = -(x[i] - proj[i]) / norm;
                        }
                    }
                }
            }
        }
    }

    /// Axis-aligned bounding box of the closure.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::AxisBox { lo, hi } => (lo.clone(), hi.clone()),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn interval_projection() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        assert_eq!(d.project(&[0.4]).unwrap(), vec![0.4]);
        assert_eq!(d.project(&[1.3]).unwrap(), vec![1.0]);
        assert_eq!(d.project(&[-0.2]).unwrap(), vec![0.0]);
    }

    #[test]
    fn ball_projection_is_radial() {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = d.project(&[2.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        // interior fixed point
        assert_eq!(d.project(&[0.3, -0.2]).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn penalty_gradient_examples() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        assert_eq!(d.penalty_gradient(&[0.7]).unwrap(), vec![0.0]);
        let g = d.penalty_gradient(&[1.3]).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15);

        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let g = b.penalty_gradient(&[2.0, 0.0]).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15 && g[1].abs() < 1e-15);
    }

    #[test]
    fn distance_extension_examples() {
        let d = Domain::new(Shape::Interval { lo: 0.0, hi: 1.0 }, 10.0).unwrap();
        assert_eq!(d.distance_extension(&[0.5]).unwrap(), 0.5);
        assert_eq!(d.distance_extension(&[1.0]).unwrap(), 0.0);

        let b = Domain::new(
            Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 },
            10.0,
        )
        .unwrap();
        assert!((b.distance_extension(&[2.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn distance_extension_is_clipped() {
        let d = Domain::interval(0.0, 1.0).unwrap(); // cutoff 1.0
        assert_eq!(d.distance_extension(&[5.0]).unwrap(), -1.0);
        let wide = Domain::new(Shape::Interval { lo: 0.0, hi: 10.0 }, 1.0).unwrap();
        assert_eq!(wide.distance_extension(&[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn inward_normal_examples() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        assert_eq!(d.inward_normal(&[0.0]).unwrap(), vec![1.0]);
        assert_eq!(d.inward_normal(&[1.0]).unwrap(), vec![-1.0]);
        // singular midpoint
        assert_eq!(d.inward_normal(&[0.5]).unwrap(), vec![0.0]);

        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let n = b.inward_normal(&[1.0, 0.0]).unwrap();
        assert!((n[0] + 1.0).abs() < 1e-15 && n[1].abs() < 1e-15);
        // singular center
        assert_eq!(b.inward_normal(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn box_normal_picks_nearest_face() {
        let d = Domain::axis_box(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(d.inward_normal(&[0.1, 0.5]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(d.inward_normal(&[1.0, 0.9]).unwrap(), vec![0.0, -1.0]);
        // medial-axis tie
        assert_eq!(d.inward_normal(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
        // outside a corner: normal points back toward the corner
        let n = d.inward_normal(&[3.0, 2.0]).unwrap();
        let expected = [-1.0 / 2.0_f64.sqrt(), -1.0 / 2.0_f64.sqrt()];
        assert!((n[0] - expected[0]).abs() < 1e-15);
        assert!((n[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(d.project(&[1.0]).is_err());
        assert!(d.penalty_gradient(&[1.0, 2.0, 3.0]).is_err());
        assert!(d.distance_extension(&[1.0]).is_err());
        assert!(d.inward_normal(&[]).is_err());
    }

    #[test]
    fn rejects_invalid_shapes() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::ball(vec![0.0], -1.0).is_err());
        assert!(Domain::axis_box(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Domain::axis_box(vec![0.0, 2.0], vec![1.0, 1.0]).is_err());
        assert!(Domain::new(Shape::Interval { lo: 0.0, hi: 1.0 }, 0.0).is_err());
    }

    fn domains() -> Vec<Domain> {
        vec![
            Domain::interval(0.0, 1.0).unwrap(),
            Domain::ball(vec![0.5, -0.25], 0.75).unwrap(),
            Domain::axis_box(vec![-1.0, 0.0, 0.5], vec![1.0, 2.0, 1.5]).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn normal_and_penalty_gradient_oppose(raw in proptest::collection::vec(-2.0..3.0f64, 3)) {
            for d in domains() {
                let x = &raw[..d.dim()];
                let n = d.inward_normal(x).unwrap();
                let g = d.penalty_gradient(x).unwrap();
                let dot: f64 = n.iter().zip(&g).map(|(a, b)| a * b).sum();
                prop_assert!(dot <= 1e-12, "dot = {dot} at {x:?}");
            }
        }

        #[test]
        fn projection_is_idempotent(raw in proptest::collection::vec(-2.0..3.0f64, 3)) {
            for d in domains() {
                let x = &raw[..d.dim()];
                let p = d.project(x).unwrap();
                let pp = d.project(&p).unwrap();
                for (a, b) in p.iter().zip(&pp) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn penalty_gradient_matches_projection(raw in proptest::collection::vec(-2.0..3.0f64, 3)) {
            for d in domains() {
                let x = &raw[..d.dim()];
                let g = d.penalty_gradient(x).unwrap();
                let p = d.project(x).unwrap();
                for i in 0..d.dim() {
                    prop_assert!((g[i] - 2.0 * (x[i] - p[i])).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn normal_is_unit_or_zero(raw in proptest::collection::vec(-2.0..3.0f64, 3)) {
            for d in domains() {
                let x = &raw[..d.dim()];
                let n = d.inward_normal(x).unwrap();
                let len = norm(&n);
                prop_assert!(len.abs() <= 1e-12 || (len - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn sign_of_distance_matches_membership(raw in proptest::collection::vec(-2.0..3.0f64, 3)) {
            for d in domains() {
                let x = &raw[..d.dim()];
                let l = d.distance_extension(x).unwrap();
                let inside = d.contains(x).unwrap();
                prop_assert_eq!(l >= 0.0, inside);
            }
        }
    }
}
