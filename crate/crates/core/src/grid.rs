//! Lattice discretization of the box `[-half_width, half_width]^d`.
//!
//! Nodes are stored implicitly: node `i` has multi-index `(k_0, .., k_{d-1})`
//! in row-major order (axis 0 most significant), so increasing node index is
//! lexicographic order. Every reduction over a node set walks it in that order,
//! which keeps sums bit-reproducible.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Relative slack for the closed-ball test, so that nodes lying on the sphere
/// are included regardless of rounding in the distance.
const BALL_TIE_SLACK: f64 = 1e-12;

/// Grid description as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points_per_axis: usize,
    spacing: f64,
    node_count: usize,
}

/// Closed ball `{y : |y - center| <= radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Argument(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    /// The ball `cB`: same center, radius scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.center.clone(), self.radius * factor)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        dist2(&self.center, y) <= self.radius * self.radius * (1.0 + BALL_TIE_SLACK)
    }
}

/// One real value per grid node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Volume of the unit ball in `R^d`, `pi^{d/2} / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0 + 1.0)
}

/// Surface area of the unit sphere `S^{d-1}`, equal to `d * v_d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("grid dimension must be positive".into()));
        }
        if points_per_axis < 2 {
            return Err(Error::Argument("need at least 2 points per axis".into()));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Argument(format!("half_width must be positive, got {half_width}")));
        }
        let node_count = points_per_axis
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::Resource("node count overflows usize".into()))?;
        Ok(Self {
            dim,
            half_width,
            points_per_axis,
            spacing: 2.0 * half_width / (points_per_axis - 1) as f64,
            node_count,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(spec.d, spec.half_width, spec.points_per_axis)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { d: self.dim, half_width: self.half_width, points_per_axis: self.points_per_axis }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Quadrature weight `h^d` carried by every node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn axis_coord(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.spacing
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.points_per_axis;
            rest /= self.points_per_axis;
        }
        out
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &k| acc * self.points_per_axis + k)
    }

    pub fn node_into(&self, idx: usize, out: &mut [f64]) {
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = self.axis_coord(rest % self.points_per_axis);
            rest /= self.points_per_axis;
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.node_into(idx, &mut out);
        out
    }

    /// All node coordinates, node-major (`node_count * d` values).
    pub fn coordinates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count * self.dim];
        for (i, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.node_into(i, chunk);
        }
        out
    }

    pub fn node_distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.multi_index(i), self.multi_index(j));
        let s: f64 = a
            .iter()
            .zip(&b)
            .map(|(&p, &q)| {
                let k = p as f64 - q as f64;
                k * k
            })
            .sum();
        s.sqrt() * self.spacing
    }

    /// Closed-box membership with a rounding allowance of `1e-9 h`.
    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = 1e-9 * self.spacing;
        x.len() == self.dim && x.iter().all(|&c| c.abs() <= self.half_width + tol)
    }

    /// Index of the node located at `x`, if `x` is a node up to `1e-9 h`.
    pub fn node_at(&self, x: &[f64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim);
        for &c in x {
            let k = ((c + self.half_width) / self.spacing).round();
            if (k * self.spacing - self.half_width - c).abs() > 1e-9 * self.spacing {
                return None;
            }
            multi.push((k as usize).min(self.points_per_axis - 1));
        }
        Some(self.index_of(&multi))
    }

    /// Node closest to `x` after clamping into the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = x
            .iter()
            .map(|&c| (((c + self.half_width) / self.spacing).round().max(0.0) as usize).min(self.points_per_axis - 1))
            .collect();
        self.index_of(&multi)
    }

    /// Distance from `x` to the nearest wall of the box.
    pub fn wall_distance(&self, x: &[f64]) -> f64 {
        x.iter().map(|c| self.half_width - c.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Nodes at least `fraction * half_width` away from every wall.
    pub fn interior_nodes(&self, fraction: f64) -> Vec<usize> {
        let margin = fraction * self.half_width - 1e-9 * self.spacing;
        let mut p = vec![0.0; self.dim];
        (0..self.node_count)
            .filter(|&i| {
                self.node_into(i, &mut p);
                self.wall_distance(&p) >= margin
            })
            .collect()
    }

    pub fn field_from_fn(&self, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let mut p = vec![0.0; self.dim];
        ScalarField(
            (0..self.node_count)
                .map(|i| {
                    self.node_into(i, &mut p);
                    f(&p)
                })
                .collect(),
        )
    }

    /// Calls `visit(node, |y - center|^2)` for every node of the closed ball,
    /// in lexicographic node order.
    pub fn for_each_in_ball(&self, ball: &Ball, mut visit: impl FnMut(usize, f64)) {
        let d = self.dim;
        let r = ball.radius;
        let r2 = r * r * (1.0 + BALL_TIE_SLACK);
        let n = self.points_per_axis as isize;
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for axis in 0..d {
            let c = ball.center[axis] + self.half_width;
            let a = ((c - r) / self.spacing - 1e-9).ceil() as isize;
            let b = ((c + r) / self.spacing + 1e-9).floor() as isize;
            let (a, b) = (a.max(0), b.min(n - 1));
            if a > b {
                return;
            }
            lo[axis] = a as usize;
            hi[axis] = b as usize;
        }
        let mut k = lo.clone();
        let mut p = vec![0.0; d];
        loop {
            let mut s = 0.0;
            for axis in 0..d {
                p[axis] = self.axis_coord(k[axis]);
                let diff = p[axis] - ball.center[axis];
                s += diff * diff;
            }
            if s <= r2 {
                visit(self.index_of(&k), s);
            }
            // odometer, last axis fastest
            let mut axis = d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if k[axis] < hi[axis] {
                    k[axis] += 1;
                    break;
                }
                k[axis] = lo[axis];
            }
        }
    }

    pub fn nodes_in_ball(&self, ball: &Ball) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(ball, |i, _| out.push(i));
        out
    }

    fn check_field(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.node_count {
            return Err(Error::Argument(format!(
                "field has {} values, grid has {} nodes",
                f.len(),
                self.node_count
            )));
        }
        Ok(())
    }

    fn check_center(&self, ball: &Ball) -> Result<()> {
        if ball.center.len() != self.dim {
            return Err(Error::Argument("ball center has wrong dimension".into()));
        }
        if !self.contains(&ball.center) {
            return Err(Error::Domain(format!("ball center {:?} outside the box", ball.center)));
        }
        Ok(())
    }

    /// Riemann sum `h^d * sum f(y)` over nodes of the closed ball; 0 when no
    /// node qualifies.
    pub fn integrate_ball(&self, f: &[f64], ball: &Ball) -> Result<f64> {
        self.check_field(f)?;
        self.check_center(ball)?;
        let mut s = 0.0;
        self.for_each_in_ball(ball, |i, _| s += f[i]);
        Ok(s * self.cell_volume())
    }

    /// Mean of `f` over the nodes of the ball. Unlike [`Grid::integrate_ball`]
    /// an empty ball is an error.
    pub fn ball_average(&self, f: &[f64], ball: &Ball) -> Result<f64> {
        self.check_field(f)?;
        self.check_center(ball)?;
        let (mut s, mut count) = (0.0, 0usize);
        self.for_each_in_ball(ball, |i, _| {
            s += f[i];
            count += 1;
        });
        if count == 0 {
            return Err(Error::Argument(format!("ball {ball:?} contains no node")));
        }
        Ok(s / count as f64)
    }

    /// Multilinear interpolation of a nodal field at `x`; zero outside the box.
    pub fn interpolate(&self, f: &[f64], x: &[f64]) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        let d = self.dim;
        let last = self.points_per_axis - 1;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for axis in 0..d {
            let s = ((x[axis] + self.half_width) / self.spacing).clamp(0.0, last as f64);
            let k = (s.floor() as usize).min(last.saturating_sub(1));
            base[axis] = k;
            frac[axis] = s - k as f64;
        }
        let mut acc = 0.0;
        let mut corner = vec![0usize; d];
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            for axis in 0..d {
                let bit = (mask >> axis) & 1;
                corner[axis] = base[axis] + bit;
                w *= if bit == 1 { frac[axis] } else { 1.0 - frac[axis] };
            }
            if w != 0.0 {
                acc += w * f[self.index_of(&corner)];
            }
        }
        acc
    }

    /// The dilation `x -> f(r x)`, resampled by multilinear interpolation with
    /// zero extension outside the box.
    pub fn dilate(&self, f: &[f64], r: f64) -> Result<ScalarField> {
        self.check_field(f)?;
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Argument(format!("dilation factor must be positive, got {r}")));
        }
        if r == 1.0 {
            return Ok(ScalarField(f.to_vec()));
        }
        let mut p = vec![0.0; self.dim];
        let out = (0..self.node_count)
            .map(|i| {
                self.node_into(i, &mut p);
                p.iter_mut().for_each(|c| *c *= r);
                self.interpolate(f, &p)
            })
            .collect();
        Ok(ScalarField(out))
    }
}
