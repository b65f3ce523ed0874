//! Momentum torus, hopping models and the oscillatory-integral diagnostics
//! built on the dispersion relation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::ls_slope;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("grid side must be even and at least 2, got {0}")]
    OddOrTinySide(usize),
    #[error("grid dimension must be at least 1")]
    ZeroDimension,
    #[error("grid with {points} points exceeds the supported size")]
    GridTooLarge { points: u128 },
    #[error("offset {offset:?} has dimension {got}, model dimension is {expected}")]
    DimensionMismatch { offset: Vec<i64>, got: usize, expected: usize },
    #[error("hopping amplitude at {0:?} has no equal mirror entry at the negated offset")]
    AsymmetricHopping(Vec<i64>),
    #[error("potential at {0:?} has no equal mirror entry at the negated offset")]
    AsymmetricPotential(Vec<i64>),
    #[error("offset {0:?} listed twice")]
    DuplicateOffset(Vec<i64>),
    #[error("coordinate {0} is not a point of a grid with side {1}")]
    NotOnGrid(f64, usize),
    #[error("l3 tail not converged at t={t}: doubling the window changed the sum by a fraction {change:.3e}")]
    TailNotConverged { t: f64, change: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Discrete torus `{-N/2, ..., N/2-1}^d / N` with exact mod-N index arithmetic.
///
/// Points are stored as linear indices; axis `a` carries the digit
/// `(i / N^a) % N`, where digit `j` stands for the integer `j` if `j < N/2`
/// and `j - N` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentumGrid {
    dim: usize,
    side: usize,
    len: usize,
}

impl MomentumGrid {
    pub const MAX_POINTS: usize = 1 << 24;

    pub fn new(dim: usize, side: usize) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if side < 2 || side % 2 != 0 {
            return Err(LatticeError::OddOrTinySide(side));
        }
        let points = (side as u128).pow(dim as u32);
        if points > Self::MAX_POINTS as u128 {
            return Err(LatticeError::GridTooLarge { points });
        }
        Ok(Self { dim, side, len: points as usize })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Quadrature weight `N^{-d}` of a single point.
    pub fn weight(&self) -> f64 {
        1.0 / self.len as f64
    }

    #[inline]
    pub fn digit(&self, i: usize, axis: usize) -> usize {
        (i / self.side.pow(axis as u32)) % self.side
    }

    #[inline]
    fn signed_digit(&self, d: usize) -> i64 {
        if d < self.side / 2 {
            d as i64
        } else {
            d as i64 - self.side as i64
        }
    }

    /// Integer coordinates `n` of a point, each in `[-N/2, N/2)`.
    pub fn integer_coords(&self, i: usize) -> Vec<i64> {
        (0..self.dim).map(|a| self.signed_digit(self.digit(i, a))).collect()
    }

    /// Momentum coordinates `k = n/N`.
    pub fn coords(&self, i: usize) -> Vec<f64> {
        self.integer_coords(i)
            .into_iter()
            .map(|n| n as f64 / self.side as f64)
            .collect()
    }

    /// Index of the point with integer coordinates `n` (taken mod N).
    pub fn index(&self, n: &[i64]) -> usize {
        assert_eq!(n.len(), self.dim, "coordinate dimension");
        let side = self.side as i64;
        let mut out = 0;
        let mut stride = 1;
        for &c in n {
            out += c.rem_euclid(side) as usize * stride;
            stride *= self.side;
        }
        out
    }

    /// Index of the point with momentum coordinates `k`; each `k·N` must be an integer.
    pub fn index_of_coords(&self, k: &[f64]) -> Result<usize, LatticeError> {
        if k.len() != self.dim {
            return Err(LatticeError::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.dim,
                k.len()
            )));
        }
        let mut n = Vec::with_capacity(self.dim);
        for &c in k {
            let scaled = c * self.side as f64;
            let r = scaled.round();
            if (scaled - r).abs() > 1e-9 {
                return Err(LatticeError::NotOnGrid(c, self.side));
            }
            n.push(r as i64);
        }
        Ok(self.index(&n))
    }

    #[inline]
    pub fn add(&self, a: usize, b: usize) -> usize {
        let n = self.side;
        let (mut a, mut b) = (a, b);
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let s = a % n + b % n;
            out += if s >= n { s - n } else { s } * stride;
            a /= n;
            b /= n;
            stride *= n;
        }
        out
    }

    #[inline]
    pub fn sub(&self, a: usize, b: usize) -> usize {
        let n = self.side;
        let (mut a, mut b) = (a, b);
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let (x, y) = (a % n, b % n);
            out += if x >= y { x - y } else { x + n - y } * stride;
            a /= n;
            b /= n;
            stride *= n;
        }
        out
    }

    #[inline]
    pub fn neg(&self, a: usize) -> usize {
        self.sub(0, a)
    }

    /// `2π k·x` for grid point `i` and lattice site `x`.
    pub fn phase(&self, i: usize, x: &[i64]) -> f64 {
        let mut s: i64 = 0;
        for (a, &xa) in x.iter().enumerate() {
            s += self.signed_digit(self.digit(i, a)) * xa;
        }
        2.0 * PI * (s.rem_euclid(self.side as i64) as f64) / self.side as f64
    }
}

/// One entry of a finitely supported even function on `Z^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub offset: Vec<i64>,
    pub value: f64,
}

impl Site {
    pub fn new(offset: Vec<i64>, value: f64) -> Self {
        Self { offset, value }
    }
}

/// Hopping amplitudes `α(x)` and pair potential `V(x)`, both symmetric under `x → -x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoppingModel {
    dim: usize,
    hopping: Vec<Site>,
    potential: Vec<Site>,
}

fn check_even(dim: usize, sites: &[Site], hop: bool) -> Result<(), LatticeError> {
    for (i, s) in sites.iter().enumerate() {
        if s.offset.len() != dim {
            return Err(LatticeError::DimensionMismatch {
                offset: s.offset.clone(),
                got: s.offset.len(),
                expected: dim,
            });
        }
        if sites[..i].iter().any(|t| t.offset == s.offset) {
            return Err(LatticeError::DuplicateOffset(s.offset.clone()));
        }
    }
    for s in sites {
        let mirror: Vec<i64> = s.offset.iter().map(|c| -c).collect();
        let ok = sites.iter().any(|t| t.offset == mirror && t.value == s.value);
        if !ok {
            return Err(if hop {
                LatticeError::AsymmetricHopping(s.offset.clone())
            } else {
                LatticeError::AsymmetricPotential(s.offset.clone())
            });
        }
    }
    Ok(())
}

fn cosine_series(sites: &[Site], k: &[f64]) -> f64 {
    sites
        .iter()
        .map(|s| {
            let dot: f64 = s.offset.iter().zip(k).map(|(&x, &kk)| x as f64 * kk).sum();
            s.value * (2.0 * PI * dot).cos()
        })
        .sum()
}

impl HoppingModel {
    pub fn new(dim: usize, hopping: Vec<Site>, potential: Vec<Site>) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        check_even(dim, &hopping, true)?;
        check_even(dim, &potential, false)?;
        Ok(Self { dim, hopping, potential })
    }

    /// Nearest-neighbour hopping with `α(0) = 2d|α₁| + 1`, so that `min ω = 1`
    /// when `α₁ > 0`.
    pub fn nearest_neighbor(dim: usize, alpha1: f64, potential: Vec<Site>) -> Result<Self, LatticeError> {
        let onsite = 2.0 * dim as f64 * alpha1.abs() + 1.0;
        Self::nearest_neighbor_with_onsite(dim, onsite, alpha1, potential)
    }

    pub fn nearest_neighbor_with_onsite(
        dim: usize,
        onsite: f64,
        alpha1: f64,
        potential: Vec<Site>,
    ) -> Result<Self, LatticeError> {
        let mut hopping = vec![Site::new(vec![0; dim], onsite)];
        for a in 0..dim {
            for s in [1, -1] {
                let mut x = vec![0; dim];
                x[a] = s;
                hopping.push(Site::new(x, alpha1));
            }
        }
        Self::new(dim, hopping, potential)
    }

    /// Potential supported on the origin only, so `V̂ ≡ v0`.
    pub fn contact_potential(dim: usize, v0: f64) -> Vec<Site> {
        vec![Site::new(vec![0; dim], v0)]
    }

    /// Potential with `V(0) = v0` and `V(±e_a) = neighbor[a]`.
    pub fn axis_potential(dim: usize, v0: f64, neighbor: &[f64]) -> Vec<Site> {
        let mut out = vec![Site::new(vec![0; dim], v0)];
        for (a, &v) in neighbor.iter().enumerate().take(dim) {
            if v != 0.0 {
                for s in [1, -1] {
                    let mut x = vec![0; dim];
                    x[a] = s;
                    out.push(Site::new(x, v));
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hopping(&self) -> &[Site] {
        &self.hopping
    }

    pub fn potential(&self) -> &[Site] {
        &self.potential
    }

    /// `ω(k) = Σ_x α(x) cos(2π k·x)`.
    pub fn omega(&self, k: &[f64]) -> f64 {
        cosine_series(&self.hopping, k)
    }

    /// `∇ω(k) = -2π Σ_x α(x) x sin(2π k·x)`.
    pub fn gradient(&self, k: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for s in &self.hopping {
            let dot: f64 = s.offset.iter().zip(k).map(|(&x, &kk)| x as f64 * kk).sum();
            let sn = (2.0 * PI * dot).sin();
            for (ga, &xa) in g.iter_mut().zip(&s.offset) {
                *ga -= 2.0 * PI * s.value * xa as f64 * sn;
            }
        }
        g
    }

    /// `V̂(k) = Σ_x V(x) cos(2π k·x)`.
    pub fn potential_hat(&self, k: &[f64]) -> f64 {
        cosine_series(&self.potential, k)
    }

    /// True when every hopping offset lies on a coordinate axis, so that
    /// `ω(k) = α(0) + Σ_a ω_a(k_a)`.
    pub fn is_axis_separable(&self) -> bool {
        self.hopping
            .iter()
            .all(|s| s.offset.iter().filter(|&&c| c != 0).count() <= 1)
    }

    pub fn dispersion(&self, grid: &MomentumGrid) -> Result<DispersionField, LatticeError> {
        if grid.dim() != self.dim {
            return Err(LatticeError::InvalidArgument(format!(
                "grid dimension {} does not match model dimension {}",
                grid.dim(),
                self.dim
            )));
        }
        let n = grid.len();
        let mut omega = Vec::with_capacity(n);
        let mut gradient = Vec::with_capacity(n * self.dim);
        let mut vhat = Vec::with_capacity(n);
        for i in 0..n {
            let k = grid.coords(i);
            omega.push(self.omega(&k));
            gradient.extend(self.gradient(&k));
            vhat.push(self.potential_hat(&k));
        }
        Ok(DispersionField {
            grid: grid.clone(),
            model: self.clone(),
            omega,
            gradient,
            potential_hat: vhat,
        })
    }
}

/// `ω`, `∇ω` and `V̂` tabulated on a momentum grid.
#[derive(Debug, Clone)]
pub struct DispersionField {
    grid: MomentumGrid,
    model: HoppingModel,
    omega: Vec<f64>,
    gradient: Vec<f64>,
    potential_hat: Vec<f64>,
}

impl DispersionField {
    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    pub fn model(&self) -> &HoppingModel {
        &self.model
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn gradient(&self, i: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.gradient[i * d..(i + 1) * d]
    }

    pub fn potential_hat(&self) -> &[f64] {
        &self.potential_hat
    }

    pub fn min_omega(&self) -> f64 {
        self.omega.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_omega(&self) -> f64 {
        self.omega.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest Euclidean norm of `∇ω` over the grid.
    pub fn max_gradient_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.gradient(i).iter().map(|g| g * g).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Copy with `ω` replaced, e.g. by a renormalized dispersion.
    pub fn with_omega(&self, omega: Vec<f64>) -> Self {
        assert_eq!(omega.len(), self.grid.len());
        Self { omega, ..self.clone() }
    }
}

/// `p_t(x) = N^{-d} Σ_k e^{-itω(k)} e^{i2πx·k}` on the grid of `disp`.
pub fn free_propagator(disp: &DispersionField, t: f64, x: &[i64]) -> Complex64 {
    crossing_kernel(disp, x, t, 0.0, 0.0, 0, 0)
}

/// `N^{-d} Σ_k e^{-it(ω(k) + σ ω(k - k0))}`.
pub fn interference_integral(disp: &DispersionField, t: f64, k0: usize, sigma: i8) -> Complex64 {
    let g = disp.grid();
    let w = disp.omega();
    let s = sigma as f64;
    let terms: Vec<Complex64> = (0..g.len())
        .map(|k| Complex64::from_polar(1.0, -t * (w[k] + s * w[g.sub(k, k0)])))
        .collect();
    complex_mean(&terms)
}

/// `∫dk e^{i2πx·k} e^{-i(t0 ω(k) + t1 ω(k+u1) + t2 ω(k+u2))}` by grid quadrature.
pub fn crossing_kernel(
    disp: &DispersionField,
    x: &[i64],
    t0: f64,
    t1: f64,
    t2: f64,
    u1: usize,
    u2: usize,
) -> Complex64 {
    let g = disp.grid();
    let w = disp.omega();
    let terms: Vec<Complex64> = (0..g.len())
        .map(|k| {
            let ph = g.phase(k, x) - t0 * w[k] - t1 * w[g.add(k, u1)] - t2 * w[g.add(k, u2)];
            Complex64::from_polar(1.0, ph)
        })
        .collect();
    complex_mean(&terms)
}

fn complex_mean(xs: &[Complex64]) -> Complex64 {
    let re: Vec<f64> = xs.iter().map(|z| z.re).collect();
    let im: Vec<f64> = xs.iter().map(|z| z.im).collect();
    Complex64::new(crate::numerics::mean(&re), crate::numerics::mean(&im))
}

/// `C ∏_a |sin(2π u_a)|^{-1/7}`; infinite whenever a component is a multiple of 1/2.
pub fn fcr_nearest_neighbor(u: &[f64], constant: f64) -> f64 {
    let mut out = constant;
    for &ua in u {
        let twice = 2.0 * ua;
        if twice == twice.round() {
            return f64::INFINITY;
        }
        out *= (2.0 * PI * ua).sin().abs().powf(-1.0 / 7.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L3ScanOptions {
    /// Half-width `R` of the site box `|x_a| ≤ R`; the check compares against `2R`.
    pub window: usize,
    /// Largest tolerated relative change when the window is doubled.
    pub tail_fraction: f64,
}

impl Default for L3ScanOptions {
    fn default() -> Self {
        Self { window: 128, tail_fraction: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L3Scan {
    pub times: Vec<f64>,
    pub sums: Vec<f64>,
    /// Least-squares slope of `ln Σ|p_t|³` against `ln t`.
    pub slope: f64,
    pub resolution: usize,
}

/// `Σ_x |p_t(x)|³` over the site box, for each `t`, with a window-doubling
/// convergence check. The propagator is evaluated on a fine auxiliary grid
/// (side a power of two, at least `8R`); separable models factorize into
/// one-dimensional transforms.
pub fn l3_dispersivity_scan(
    model: &HoppingModel,
    times: &[f64],
    opts: &L3ScanOptions,
) -> Result<L3Scan, LatticeError> {
    if opts.window == 0 {
        return Err(LatticeError::InvalidArgument("window must be positive".into()));
    }
    if times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(LatticeError::InvalidArgument("scan times must be positive".into()));
    }
    let r = opts.window;
    let side = (8 * r).max(16).next_power_of_two();
    let d = model.dim();
    let mut sums = Vec::with_capacity(times.len());
    for &t in times {
        let (small, big) = if model.is_axis_separable() {
            let mut small = 1.0;
            let mut big = 1.0;
            for a in 0..d {
                let axis: Vec<Site> = model
                    .hopping()
                    .iter()
                    .filter(|s| s.offset[a] != 0)
                    .map(|s| Site::new(vec![s.offset[a]], s.value))
                    .collect();
                let p = propagator_fft(&axis, 1, side, t);
                let (s1, s2) = box_cubes(&p, 1, side, r);
                small *= s1;
                big *= s2;
            }
            (small, big)
        } else {
            let points = (side as u128).pow(d as u32);
            if points > (1u128 << 24) {
                return Err(LatticeError::GridTooLarge { points });
            }
            let p = propagator_fft(model.hopping(), d, side, t);
            box_cubes(&p, d, side, r)
        };
        let change = (big - small).abs() / big;
        if change > opts.tail_fraction {
            return Err(LatticeError::TailNotConverged { t, change });
        }
        sums.push(big);
    }
    let slope = if times.len() >= 2 {
        let lx: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = sums.iter().map(|s| s.ln()).collect();
        ls_slope(&lx, &ly)
    } else {
        f64::NAN
    };
    Ok(L3Scan { times: times.to_vec(), sums, slope, resolution: side })
}

/// Propagator on all sites of a `side^dim` torus via inverse FFTs along each axis.
fn propagator_fft(hopping: &[Site], dim: usize, side: usize, t: f64) -> Vec<Complex64> {
    let grid = MomentumGrid::new(dim, side).expect("auxiliary grid");
    let n = grid.len();
    let mut data: Vec<Complex64> = (0..n)
        .map(|i| {
            // digit j ↔ k = j/side; cos is 1-periodic so the signed shift is irrelevant
            let k: Vec<f64> = (0..dim).map(|a| grid.digit(i, a) as f64 / side as f64).collect();
            Complex64::from_polar(1.0, -t * cosine_series(hopping, &k))
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(side);
    let mut line = vec![Complex64::new(0.0, 0.0); side];
    for a in 0..dim {
        let stride = side.pow(a as u32);
        for base in 0..n {
            if (base / stride) % side != 0 {
                continue;
            }
            for (j, l) in line.iter_mut().enumerate() {
                *l = data[base + j * stride];
            }
            fft.process(&mut line);
            for (j, l) in line.iter().enumerate() {
                data[base + j * stride] = *l;
            }
        }
    }
    let scale = 1.0 / n as f64;
    data.iter_mut().for_each(|z| *z *= scale);
    data
}

/// Sums of `|p|³` over the boxes of half-width `r` and `2r`.
fn box_cubes(p: &[Complex64], dim: usize, side: usize, r: usize) -> (f64, f64) {
    let grid = MomentumGrid::new(dim, side).expect("auxiliary grid");
    let mut small = Vec::new();
    let mut big = Vec::new();
    for (i, z) in p.iter().enumerate() {
        let n = grid.integer_coords(i);
        let reach = n.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
        let c = z.norm().powi(3);
        if reach <= 2 * r {
            big.push(c);
            if reach <= r {
                small.push(c);
            }
        }
    }
    (crate::numerics::pairwise_sum(&small), crate::numerics::pairwise_sum(&big))
}
