//! Collision tables and the collision-operator family: Boltzmann-Nordheim,
//! cubic wave, quadratic particle, the multi-argument correlation operators
//! and the constrained (loss-only) operator.
//!
//! Integrals `∫dk₂dk₃dk₄ δ(k₁+k₂−k₃−k₄)` become `N^{-2d} Σ_{k₂,k₃}` with
//! `k₄ = k₁+k₂−k₃` taken mod 1, so umklapp quadruples are included. The energy
//! delta is a Lorentzian of width `ε`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{DispersionField, MomentumGrid};
use crate::numerics::Neumaier;
use crate::state::{DistributionField, Statistics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollisionError {
    #[error("field statistics {field:?} do not match table statistics {table:?}")]
    StatisticsMismatch { table: Statistics, field: Statistics },
    #[error("{0:?} statistics have no quantum correction factor")]
    NoQuantumStatistics(Statistics),
    #[error("field grid does not match the table grid")]
    GridMismatch,
    #[error("mollifier width must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("collision tables support at most {max} grid points, got {points}")]
    GridTooLarge { points: usize, max: usize },
    #[error("argument index {index} out of range for a correlation of arity {arity}")]
    IndexOutOfRange { index: usize, arity: usize },
    #[error("collision operators need a correlation with at least 3 arguments, got {0}")]
    ArityTooSmall(usize),
    #[error("materialized correlation would hold {entries} entries (limit {limit})")]
    TensorTooLarge { entries: usize, limit: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Lorentzian mollifier `(1/π) ε / (Ω² + ε²)`.
#[inline]
pub fn lorentzian(gap: f64, epsilon: f64) -> f64 {
    epsilon / (PI * (gap * gap + epsilon * epsilon))
}

/// One grid energy spacing, `max|∇ω| / N`; `1/N` for a flat band.
pub fn default_epsilon(disp: &DispersionField) -> f64 {
    let g = disp.max_gradient_norm();
    let n = disp.grid().side() as f64;
    if g > 0.0 {
        g / n
    } else {
        1.0 / n
    }
}

/// One momentum-conserving quadruple seen from its output point `k1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub k4: usize,
    /// `V̂(k₂−k₃)`
    pub v23: f64,
    /// `V̂(k₂−k₄)`
    pub v24: f64,
    /// `Ω = ω₁+ω₂−ω₃−ω₄`
    pub gap: f64,
    /// `δ_ε(Ω)`
    pub delta: f64,
}

#[derive(Debug, Clone, Copy)]
struct Stored {
    k4: u32,
    v23: f64,
    v24: f64,
    gap: f64,
    delta: f64,
}

/// Quadruple enumeration with mollified energy weights.
///
/// Small grids keep every quadruple in memory; larger ones recompute
/// couplings and weights inside the loop from the index tables.
#[derive(Debug, Clone)]
pub struct CollisionTable {
    disp: DispersionField,
    statistics: Statistics,
    epsilon: f64,
    /// `sub[a * M + b]` is the index of `k_a − k_b`.
    sub: Vec<u32>,
    /// `add[a * M + b]` is the index of `k_a + k_b`.
    add: Vec<u32>,
    stored: Option<Vec<Stored>>,
}

impl CollisionTable {
    pub const MAX_POINTS: usize = 2048;
    /// Quadruple count up to which weights are stored explicitly.
    pub const EXPLICIT_LIMIT: usize = 1 << 20;

    pub fn build(disp: &DispersionField, statistics: Statistics, epsilon: f64) -> Result<Self, CollisionError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(CollisionError::InvalidEpsilon(epsilon));
        }
        let grid = disp.grid();
        let m = grid.len();
        if m > Self::MAX_POINTS {
            return Err(CollisionError::GridTooLarge { points: m, max: Self::MAX_POINTS });
        }
        let mut sub = vec![0u32; m * m];
        let mut add = vec![0u32; m * m];
        for a in 0..m {
            for b in 0..m {
                sub[a * m + b] = grid.sub(a, b) as u32;
                add[a * m + b] = grid.add(a, b) as u32;
            }
        }
        let mut table = Self { disp: disp.clone(), statistics, epsilon, sub, add, stored: None };
        if m * m * m <= Self::EXPLICIT_LIMIT {
            let mut stored = Vec::with_capacity(m * m * m);
            for k1 in 0..m {
                table.for_each_implicit(k1, |q| {
                    stored.push(Stored { k4: q.k4 as u32, v23: q.v23, v24: q.v24, gap: q.gap, delta: q.delta })
                });
            }
            table.stored = Some(stored);
        }
        Ok(table)
    }

    /// Table with the default mollifier width.
    pub fn with_default_epsilon(disp: &DispersionField, statistics: Statistics) -> Result<Self, CollisionError> {
        Self::build(disp, statistics, default_epsilon(disp))
    }

    /// Same quadruples with a different mollifier width.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, CollisionError> {
        Self::build(&self.disp, self.statistics, epsilon)
    }

    pub fn grid(&self) -> &MomentumGrid {
        self.disp.grid()
    }

    pub fn dispersion(&self) -> &DispersionField {
        &self.disp
    }

    pub fn statistics(&self) -> Statistics {
        self.statistics
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_explicit(&self) -> bool {
        self.stored.is_some()
    }

    /// Quadruples per output point, `N^{2d}`.
    pub fn quadruples_per_point(&self) -> usize {
        let m = self.grid().len();
        m * m
    }

    /// Integration weight per `(k₂, k₃)` pair, `N^{-2d}`.
    pub fn pair_weight(&self) -> f64 {
        1.0 / self.quadruples_per_point() as f64
    }

    pub fn theta(&self) -> Result<f64, CollisionError> {
        self.statistics.theta().ok_or(CollisionError::NoQuantumStatistics(self.statistics))
    }

    fn for_each_implicit<F: FnMut(Quad)>(&self, k1: usize, mut f: F) {
        let m = self.grid().len();
        let omega = self.disp.omega();
        let vhat = self.disp.potential_hat();
        let w1 = omega[k1];
        for k2 in 0..m {
            let w12 = w1 + omega[k2];
            for k3 in 0..m {
                let d23 = self.sub[k2 * m + k3] as usize;
                let k4 = self.add[k1 * m + d23] as usize;
                let d24 = self.sub[k2 * m + k4] as usize;
                let gap = w12 - omega[k3] - omega[k4];
                f(Quad {
                    k1,
                    k2,
                    k3,
                    k4,
                    v23: vhat[d23],
                    v24: vhat[d24],
                    gap,
                    delta: lorentzian(gap, self.epsilon),
                });
            }
        }
    }

    /// Visits the quadruples of output point `k1` in `(k₂, k₃)` row-major order.
    pub fn for_each_quad<F: FnMut(Quad)>(&self, k1: usize, mut f: F) {
        match &self.stored {
            Some(stored) => {
                let m = self.grid().len();
                let base = k1 * m * m;
                for k2 in 0..m {
                    for k3 in 0..m {
                        let s = stored[base + k2 * m + k3];
                        f(Quad {
                            k1,
                            k2,
                            k3,
                            k4: s.k4 as usize,
                            v23: s.v23,
                            v24: s.v24,
                            gap: s.gap,
                            delta: s.delta,
                        });
                    }
                }
            }
            None => self.for_each_implicit(k1, f),
        }
    }

    /// `N^{-2d} Σ_{k₂,k₃} summand(q)` at every output point, compensated and in
    /// a fixed order, so results do not depend on the thread count.
    pub fn quadrature<F>(&self, summand: F) -> Vec<f64>
    where
        F: Fn(&Quad) -> f64 + Sync,
    {
        let w = self.pair_weight();
        (0..self.grid().len())
            .into_par_iter()
            .map(|k1| {
                let mut acc = Neumaier::default();
                self.for_each_quad(k1, |q| acc.add(summand(&q)));
                acc.total() * w
            })
            .collect()
    }

    /// Complex counterpart of [`CollisionTable::quadrature`] at one point.
    pub fn quadrature_at_complex<F>(&self, k1: usize, mut summand: F) -> Complex64
    where
        F: FnMut(&Quad) -> Complex64,
    {
        let (mut re, mut im) = (Neumaier::default(), Neumaier::default());
        self.for_each_quad(k1, |q| {
            let z = summand(&q);
            re.add(z.re);
            im.add(z.im);
        });
        Complex64::new(re.total(), im.total()) * self.pair_weight()
    }

    fn check_grid(&self, field: &DistributionField) -> Result<(), CollisionError> {
        if field.grid() != self.grid() {
            return Err(CollisionError::GridMismatch);
        }
        Ok(())
    }

    fn check_quantum(&self, field: &DistributionField) -> Result<f64, CollisionError> {
        self.check_grid(field)?;
        let theta = self.theta()?;
        if field.statistics() != self.statistics {
            return Err(CollisionError::StatisticsMismatch { table: self.statistics, field: field.statistics() });
        }
        Ok(theta)
    }
}

/// Boltzmann-Nordheim operator
/// `π N^{-2d} Σ |V̂₂₃ + θV̂₂₄|² δ_ε(Ω) (W̃₁W̃₂W₃W₄ − W₁W₂W̃₃W̃₄)`.
pub fn evaluate_bn(table: &CollisionTable, field: &DistributionField) -> Result<Vec<f64>, CollisionError> {
    let theta = table.check_quantum(field)?;
    Ok(bn_raw(table, theta, field.values()))
}

pub(crate) fn bn_raw(table: &CollisionTable, theta: f64, w: &[f64]) -> Vec<f64> {
    table.quadrature(|q| {
        let c = q.v23 + theta * q.v24;
        let (w1, w2, w3, w4) = (w[q.k1], w[q.k2], w[q.k3], w[q.k4]);
        let gain = (1.0 + theta * w1) * (1.0 + theta * w2) * w3 * w4;
        let loss = w1 * w2 * (1.0 + theta * w3) * (1.0 + theta * w4);
        PI * c * c * q.delta * (gain - loss)
    })
}

/// Cubic wave operator with coupling `|V̂₂₃ + V̂₂₄|²`.
pub fn evaluate_nls(table: &CollisionTable, field: &DistributionField) -> Result<Vec<f64>, CollisionError> {
    table.check_grid(field)?;
    let w = field.values();
    Ok(table.quadrature(|q| {
        let c = q.v23 + q.v24;
        let (w1, w2, w3, w4) = (w[q.k1], w[q.k2], w[q.k3], w[q.k4]);
        PI * c * c * q.delta * (w2 * w3 * w4 + w1 * w3 * w4 - w1 * w2 * w4 - w1 * w2 * w3)
    }))
}

/// Quadratic particle operator with coupling `2π|V̂₂₃|²`.
pub fn evaluate_cl(table: &CollisionTable, field: &DistributionField) -> Result<Vec<f64>, CollisionError> {
    table.check_grid(field)?;
    let w = field.values();
    Ok(table.quadrature(|q| {
        let (w1, w2, w3, w4) = (w[q.k1], w[q.k2], w[q.k3], w[q.k4]);
        2.0 * PI * q.v23 * q.v23 * q.delta * (w3 * w4 - w1 * w2)
    }))
}

/// The quadratic cross term `2π V̂₂₃V̂₂₄ δ (W₃W₄ − W₁W₂)` that the boson
/// operator carries beyond the wave and particle operators.
pub fn evaluate_exchange(table: &CollisionTable, field: &DistributionField) -> Result<Vec<f64>, CollisionError> {
    table.check_grid(field)?;
    let w = field.values();
    Ok(table.quadrature(|q| {
        let (w1, w2, w3, w4) = (w[q.k1], w[q.k2], w[q.k3], w[q.k4]);
        2.0 * PI * q.v23 * q.v24 * q.delta * (w3 * w4 - w1 * w2)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    /// `max |C − (C_NLS + C_CL)|`
    pub deviation: f64,
    /// `max |C − (C_NLS + C_CL + exchange)|`
    pub deviation_with_exchange: f64,
    /// `max |C|`, the natural scale for both deviations.
    pub scale: f64,
}

/// Compares the boson operator with the sum of the wave and particle operators.
pub fn decomposition_check(table: &CollisionTable, field: &DistributionField) -> Result<DecompositionReport, CollisionError> {
    let theta = table.check_quantum(field)?;
    if theta < 0.0 {
        return Err(CollisionError::StatisticsMismatch { table: table.statistics, field: Statistics::Boson });
    }
    let c = evaluate_bn(table, field)?;
    let nls = evaluate_nls(table, field)?;
    let cl = evaluate_cl(table, field)?;
    let ex = evaluate_exchange(table, field)?;
    let mut report = DecompositionReport { deviation: 0.0, deviation_with_exchange: 0.0, scale: 0.0 };
    for i in 0..c.len() {
        let r = c[i] - nls[i] - cl[i];
        report.deviation = report.deviation.max(r.abs());
        report.deviation_with_exchange = report.deviation_with_exchange.max((r - ex[i]).abs());
        report.scale = report.scale.max(c[i].abs());
    }
    Ok(report)
}

/// `(|⟨C⟩|, |⟨ωC⟩|)` with grid averages.
pub fn conservation_residuals(disp: &DispersionField, rate: &[f64]) -> (f64, f64) {
    let mut n = Neumaier::default();
    let mut e = Neumaier::default();
    for (c, w) in rate.iter().zip(disp.omega()) {
        n.add(*c);
        e.add(c * w);
    }
    let len = rate.len() as f64;
    ((n.total() / len).abs(), (e.total() / len).abs())
}

/// Number and energy residuals of the Boltzmann-Nordheim operator.
pub fn conservation_report(table: &CollisionTable, field: &DistributionField) -> Result<(f64, f64), CollisionError> {
    let c = evaluate_bn(table, field)?;
    Ok(conservation_residuals(table.dispersion(), &c))
}

/// `|∂C(W)(k)/∂W(k)|` bound: the collision rate felt by `W(k)` itself.
pub fn loss_diagonal(table: &CollisionTable, field: &DistributionField) -> Result<Vec<f64>, CollisionError> {
    let theta = table.check_quantum(field)?;
    let w = field.values();
    Ok(table.quadrature(|q| {
        let c = q.v23 + theta * q.v24;
        let (w2, w3, w4) = (w[q.k2], w[q.k3], w[q.k4]);
        let d = theta * (1.0 + theta * w2) * w3 * w4 - w2 * (1.0 + theta * w3) * (1.0 + theta * w4);
        PI * c * c * q.delta * d.abs()
    }))
}

// ---------------------------------------------------------------------------
// Correlation functions and their collision operators

/// A function of `n` (momentum index, parity) arguments, parity `±1`.
pub trait Correlation: Sync {
    fn arity(&self) -> usize;
    fn grid_len(&self) -> usize;
    fn value(&self, args: &[(usize, i8)]) -> Complex64;
}

/// `ρ̂_n = Π W(k_j, τ_j)` with `W(k,1) = W(k)`, `W(k,−1) = 1 + θW(k)`.
#[derive(Debug, Clone)]
pub struct ProductCorrelation {
    plus: Vec<f64>,
    minus: Vec<f64>,
    arity: usize,
}

impl ProductCorrelation {
    pub fn new(field: &DistributionField, arity: usize) -> Self {
        Self { plus: field.values().to_vec(), minus: field.tilde(), arity }
    }
}

impl Correlation for ProductCorrelation {
    fn arity(&self) -> usize {
        self.arity
    }

    fn grid_len(&self) -> usize {
        self.plus.len()
    }

    fn value(&self, args: &[(usize, i8)]) -> Complex64 {
        let mut p = 1.0;
        for &(k, tau) in args {
            p *= if tau > 0 { self.plus[k] } else { self.minus[k] };
        }
        Complex64::new(p, 0.0)
    }
}

/// Dense correlation over `(grid point, parity)^n`.
///
/// Slot of one argument: `2k` for parity `+1`, `2k+1` for `−1`; the first
/// argument is the fastest-varying.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    arity: usize,
    grid_len: usize,
    values: Vec<Complex64>,
}

impl CorrelationTensor {
    pub const MAX_ARITY: usize = 3;
    pub const MAX_ENTRIES: usize = 1 << 24;

    pub fn zeros(grid_len: usize, arity: usize) -> Result<Self, CollisionError> {
        let entries = Self::entries(grid_len, arity)?;
        Ok(Self { arity, grid_len, values: vec![Complex64::new(0.0, 0.0); entries] })
    }

    fn entries(grid_len: usize, arity: usize) -> Result<usize, CollisionError> {
        let per = 2 * grid_len;
        let entries = (0..arity).try_fold(1usize, |acc, _| acc.checked_mul(per)).unwrap_or(usize::MAX);
        if arity > Self::MAX_ARITY || entries > Self::MAX_ENTRIES {
            return Err(CollisionError::TensorTooLarge { entries, limit: Self::MAX_ENTRIES });
        }
        Ok(entries)
    }

    /// Evaluates `source` at every argument tuple.
    pub fn materialize<C: Correlation + ?Sized>(source: &C) -> Result<Self, CollisionError> {
        let (arity, grid_len) = (source.arity(), source.grid_len());
        let entries = Self::entries(grid_len, arity)?;
        let values = (0..entries)
            .into_par_iter()
            .map_init(
                || vec![(0usize, 1i8); arity],
                |args, flat| {
                    decode(flat, grid_len, args);
                    source.value(args)
                },
            )
            .collect();
        Ok(Self { arity, grid_len, values })
    }

    pub fn from_values(grid_len: usize, arity: usize, values: Vec<Complex64>) -> Result<Self, CollisionError> {
        let entries = Self::entries(grid_len, arity)?;
        if values.len() != entries {
            return Err(CollisionError::LengthMismatch { expected: entries, got: values.len() });
        }
        Ok(Self { arity, grid_len, values })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn flat_index(&self, args: &[(usize, i8)]) -> usize {
        let per = 2 * self.grid_len;
        args.iter().rev().fold(0, |acc, &(k, tau)| acc * per + 2 * k + usize::from(tau < 0))
    }

    /// Values at `(k, +1)` for a one-argument tensor, i.e. the scalar field.
    pub fn plus_component(&self) -> Vec<Complex64> {
        (0..self.grid_len).map(|k| self.values[2 * k]).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

fn decode(mut flat: usize, grid_len: usize, args: &mut [(usize, i8)]) {
    let per = 2 * grid_len;
    for a in args.iter_mut() {
        let s = flat % per;
        flat /= per;
        *a = (s / 2, if s % 2 == 0 { 1 } else { -1 });
    }
}

impl Correlation for CorrelationTensor {
    fn arity(&self) -> usize {
        self.arity
    }

    fn grid_len(&self) -> usize {
        self.grid_len
    }

    fn value(&self, args: &[(usize, i8)]) -> Complex64 {
        self.values[self.flat_index(args)]
    }
}

/// Energy factor multiplying each quadruple in the correlation operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyWeight {
    /// `2π δ_ε(Ω)`
    Limiting,
    /// `2 cos(Ωs)`
    Cosine(f64),
    /// `2 e^{iΩs}`
    Phase(f64),
    /// `2 ∫₀^T e^{−ηs} e^{iΩs} ds`; `T = ∞` allowed for `η > 0`.
    PhaseIntegral { horizon: f64, damping: f64 },
}

impl EnergyWeight {
    pub fn factor(&self, q: &Quad) -> Complex64 {
        match *self {
            EnergyWeight::Limiting => Complex64::new(2.0 * PI * q.delta, 0.0),
            EnergyWeight::Cosine(s) => Complex64::new(2.0 * (q.gap * s).cos(), 0.0),
            EnergyWeight::Phase(s) => 2.0 * Complex64::from_polar(1.0, q.gap * s),
            EnergyWeight::PhaseIntegral { horizon, damping } => {
                let rate = Complex64::new(-damping, q.gap);
                if rate.norm() == 0.0 {
                    return Complex64::new(2.0 * horizon, 0.0);
                }
                let tail = if horizon.is_infinite() { Complex64::new(0.0, 0.0) } else { (rate * horizon).exp() };
                2.0 * (tail - 1.0) / rate
            }
        }
    }
}

/// Which brackets act on a target argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bracket {
    /// Gain term plus the three loss-type terms.
    Full,
    /// The three loss-type terms only (the constrained line).
    LossOnly,
}

/// Lazily evaluated `Σ_j C_{j,n+2} ρ̂_{n+2}`: arity `n` from an input of arity
/// `n+2`. The two new arguments occupy the last two slots of the input.
pub struct CollisionAction<'a, C: Correlation + ?Sized> {
    table: &'a CollisionTable,
    input: &'a C,
    weight: EnergyWeight,
    targets: Vec<(usize, Bracket)>,
    theta: f64,
}

impl<'a, C: Correlation + ?Sized> CollisionAction<'a, C> {
    pub fn new(
        table: &'a CollisionTable,
        input: &'a C,
        weight: EnergyWeight,
        targets: Vec<(usize, Bracket)>,
    ) -> Result<Self, CollisionError> {
        let theta = table.theta()?;
        let arity = input.arity();
        if arity < 3 {
            return Err(CollisionError::ArityTooSmall(arity));
        }
        if input.grid_len() != table.grid().len() {
            return Err(CollisionError::GridMismatch);
        }
        for &(j, _) in &targets {
            if j >= arity - 2 {
                return Err(CollisionError::IndexOutOfRange { index: j, arity: arity - 2 });
            }
        }
        Ok(Self { table, input, weight, targets, theta })
    }

    /// All targets with the full bracket.
    pub fn assembled(table: &'a CollisionTable, input: &'a C, weight: EnergyWeight) -> Result<Self, CollisionError> {
        let n = input.arity().saturating_sub(2);
        Self::new(table, input, weight, (0..n).map(|j| (j, Bracket::Full)).collect())
    }

    fn single(&self, j: usize, bracket: Bracket, args: &[(usize, i8)], buf: &mut Vec<(usize, i8)>) -> Complex64 {
        let n = args.len();
        let (kj, tau) = args[j];
        let theta = self.theta;
        let input = self.input;
        buf.clear();
        buf.extend_from_slice(args);
        buf.push((0, 1));
        buf.push((0, 1));
        let weight = self.weight;
        self.table.quadrature_at_complex(kj, |q| {
            let coupling = q.v23 * (q.v23 + theta * q.v24);
            if coupling == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let mut eval = |slot_j: (usize, i8), a: (usize, i8), b: (usize, i8)| {
                buf[j] = slot_j;
                buf[n] = a;
                buf[n + 1] = b;
                input.value(buf)
            };
            let mut s = theta * eval((kj, tau), (q.k3, 1), (q.k4, 1))
                - eval((kj, tau), (q.k2, 1), (q.k3, -1))
                - theta * eval((kj, tau), (q.k2, 1), (q.k4, 1));
            if bracket == Bracket::Full {
                s += eval((q.k2, -tau), (q.k3, tau), (q.k4, tau));
            }
            weight.factor(&q) * coupling * s
        })
    }
}

impl<C: Correlation + ?Sized> Correlation for CollisionAction<'_, C> {
    fn arity(&self) -> usize {
        self.input.arity() - 2
    }

    fn grid_len(&self) -> usize {
        self.input.grid_len()
    }

    fn value(&self, args: &[(usize, i8)]) -> Complex64 {
        let mut buf = Vec::with_capacity(args.len() + 2);
        self.targets.iter().map(|&(j, b)| self.single(j, b, args, &mut buf)).sum()
    }
}

/// Limiting operator acting on arguments `(j, n+1, n+2)`, materialized.
pub fn correlation_collision<C: Correlation + ?Sized>(
    table: &CollisionTable,
    input: &C,
    j: usize,
) -> Result<CorrelationTensor, CollisionError> {
    let action = CollisionAction::new(table, input, EnergyWeight::Limiting, vec![(j, Bracket::Full)])?;
    CorrelationTensor::materialize(&action)
}

/// `C_{n+2} = Σ_j C_{j,n+2}` with the limiting energy factor, materialized.
pub fn assembled_collision<C: Correlation + ?Sized>(
    table: &CollisionTable,
    input: &C,
) -> Result<CorrelationTensor, CollisionError> {
    CorrelationTensor::materialize(&CollisionAction::assembled(table, input, EnergyWeight::Limiting)?)
}

/// Time-dependent operator at time `s` acting on `(j, n+1, n+2)`.
pub fn correlation_collision_timedep<C: Correlation + ?Sized>(
    table: &CollisionTable,
    input: &C,
    j: usize,
    s: f64,
) -> Result<CorrelationTensor, CollisionError> {
    let action = CollisionAction::new(table, input, EnergyWeight::Cosine(s), vec![(j, Bracket::Full)])?;
    CorrelationTensor::materialize(&action)
}

/// Constrained operator on the first argument at time `s`: complex phase,
/// loss-type brackets only.
pub fn constrained_collision<C: Correlation + ?Sized>(
    table: &CollisionTable,
    input: &C,
    s: f64,
) -> Result<CorrelationTensor, CollisionError> {
    let action = CollisionAction::new(table, input, EnergyWeight::Phase(s), vec![(0, Bracket::LossOnly)])?;
    CorrelationTensor::materialize(&action)
}

/// Constrained operator integrated against `e^{−ηs}` over `[0, T]`.
pub fn constrained_collision_integrated<C: Correlation + ?Sized>(
    table: &CollisionTable,
    input: &C,
    horizon: f64,
    damping: f64,
) -> Result<CorrelationTensor, CollisionError> {
    let weight = EnergyWeight::PhaseIntegral { horizon, damping };
    let action = CollisionAction::new(table, input, weight, vec![(0, Bracket::LossOnly)])?;
    CorrelationTensor::materialize(&action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{HoppingModel, Site};
    use crate::state::{equilibrium_field, random_field, InverseTemperature, RandomFieldSpec};

    fn disp(dim: usize, n: usize) -> DispersionField {
        let mut pot = vec![Site::new(vec![0; dim], 1.0)];
        for a in 0..dim {
            let mut e = vec![0; dim];
            e[a] = 1;
            pot.push(Site::new(e.clone(), 0.3));
            e[a] = -1;
            pot.push(Site::new(e, 0.3));
        }
        let model = HoppingModel::nearest_neighbor(dim, -1.0, pot).unwrap();
        model.dispersion(&MomentumGrid::new(dim, n).unwrap()).unwrap()
    }

    #[test]
    fn quadruple_enumeration_covers_all_pairs() {
        let d = disp(2, 4);
        let t = CollisionTable::build(&d, Statistics::Boson, 0.1).unwrap();
        assert!(t.is_explicit());
        let mut seen = vec![false; 256];
        let mut count = 0;
        t.for_each_quad(5, |q| {
            count += 1;
            seen[q.k2 * 16 + q.k3] = true;
        });
        assert_eq!(count, t.quadruples_per_point());
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn explicit_and_implicit_agree() {
        let d = disp(2, 4);
        let t = CollisionTable::build(&d, Statistics::Boson, 0.2).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        t.for_each_quad(7, |q| a.push(q));
        t.for_each_implicit(7, |q| b.push(q));
        assert_eq!(a, b);
    }

    #[test]
    fn flat_band_gives_uniform_delta() {
        let g = MomentumGrid::new(2, 4).unwrap();
        let model = HoppingModel::new(2, vec![Site::new(vec![0, 0], 2.5)], HoppingModel::contact_potential(2, 1.0)).unwrap();
        let d = model.dispersion(&g).unwrap();
        let eps = 0.25;
        let t = CollisionTable::build(&d, Statistics::Boson, eps).unwrap();
        for k1 in 0..16 {
            t.for_each_quad(k1, |q| assert!((q.delta - 1.0 / (PI * eps)).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_field_has_no_collisions() {
        let d = disp(2, 4);
        let t = CollisionTable::build(&d, Statistics::Fermion, 0.3).unwrap();
        let z = DistributionField::new(d.grid().clone(), Statistics::Fermion, vec![0.0; 16]).unwrap();
        assert!(evaluate_bn(&t, &z).unwrap().iter().all(|&c| c == 0.0));
        assert!(evaluate_nls(&t, &z).unwrap().iter().all(|&c| c == 0.0));
        assert!(evaluate_cl(&t, &z).unwrap().iter().all(|&c| c == 0.0));
        assert_eq!(conservation_report(&t, &z).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn constant_field_kills_wave_and_particle_operators() {
        let d = disp(2, 4);
        let t = CollisionTable::build(&d, Statistics::Boson, 0.3).unwrap();
        let f = DistributionField::new(d.grid().clone(), Statistics::NlsWave, vec![0.7; 16]).unwrap();
        assert!(evaluate_nls(&t, &f).unwrap().iter().all(|c| c.abs() < 1e-14));
        assert!(evaluate_cl(&t, &f).unwrap().iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn statistics_are_checked() {
        let d = disp(2, 4);
        let t = CollisionTable::build(&d, Statistics::Boson, 0.3).unwrap();
        let f = DistributionField::new(d.grid().clone(), Statistics::Fermion, vec![0.5; 16]).unwrap();
        assert!(matches!(evaluate_bn(&t, &f), Err(CollisionError::StatisticsMismatch { .. })));
        let tf = CollisionTable::build(&d, Statistics::Fermion, 0.3).unwrap();
        assert!(decomposition_check(&tf, &f).is_err());
        assert!(matches!(CollisionTable::build(&d, Statistics::Boson, 0.0), Err(CollisionError::InvalidEpsilon(_))));
    }

    #[test]
    fn fermion_contact_potential_is_inert() {
        let g = MomentumGrid::new(2, 4).unwrap();
        let model = HoppingModel::nearest_neighbor(2, 1.0, HoppingModel::contact_potential(2, 2.0)).unwrap();
        let d = model.dispersion(&g).unwrap();
        let t = CollisionTable::build(&d, Statistics::Fermion, 0.2).unwrap();
        let f = random_field(&g, Statistics::Fermion, &RandomFieldSpec::for_statistics(Statistics::Fermion, 3)).unwrap();
        assert!(evaluate_bn(&t, &f).unwrap().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn equilibrium_residual_shrinks_with_width() {
        let d = disp(2, 6);
        let eq = equilibrium_field(&d, InverseTemperature::Finite(0.7), -1.0, Statistics::Boson).unwrap();
        let r = |eps: f64| {
            let t = CollisionTable::build(&d, Statistics::Boson, eps).unwrap();
            evaluate_bn(&t, &eq).unwrap().iter().fold(0.0f64, |m, c| m.max(c.abs()))
        };
        let ratio = r(5e-4) / r(1e-3);
        assert!((0.45..0.55).contains(&ratio), "{ratio}");
    }

    #[test]
    fn product_correlation_reproduces_boltzmann_nordheim() {
        let d = disp(2, 4);
        for stats in [Statistics::Boson, Statistics::Fermion] {
            let t = CollisionTable::build(&d, stats, 0.3).unwrap();
            let f = random_field(d.grid(), stats, &RandomFieldSpec::for_statistics(stats, 11)).unwrap();
            let c = evaluate_bn(&t, &f).unwrap();
            let rho3 = ProductCorrelation::new(&f, 3);
            let out = correlation_collision(&t, &rho3, 0).unwrap();
            let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (k, z) in out.plus_component().iter().enumerate() {
                assert!((z.re - c[k]).abs() <= 1e-12 * scale && z.im == 0.0);
            }
        }
    }

    #[test]
    fn correlation_arguments_are_validated() {
        let d = disp(2, 4);
        let t = CollisionTable::build(&d, Statistics::Boson, 0.3).unwrap();
        let f = random_field(d.grid(), Statistics::Boson, &RandomFieldSpec::for_statistics(Statistics::Boson, 1)).unwrap();
        let rho3 = ProductCorrelation::new(&f, 3);
        assert!(matches!(correlation_collision(&t, &rho3, 1), Err(CollisionError::IndexOutOfRange { .. })));
        let rho2 = ProductCorrelation::new(&f, 2);
        assert!(matches!(correlation_collision(&t, &rho2, 0), Err(CollisionError::ArityTooSmall(2))));
    }

    #[test]
    fn tensor_round_trip_indexing() {
        let f = DistributionField::new(MomentumGrid::new(1, 4).unwrap(), Statistics::Boson, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = ProductCorrelation::new(&f, 2);
        let t = CorrelationTensor::materialize(&p).unwrap();
        for (k1, t1, k2, t2) in [(0, 1, 3, -1), (2, -1, 1, 1), (3, -1, 3, -1)] {
            let args = [(k1, t1), (k2, t2)];
            assert_eq!(t.value(&args), p.value(&args));
        }
        assert!(matches!(CorrelationTensor::zeros(4, 4), Err(CollisionError::TensorTooLarge { .. })));
    }

    #[test]
    fn phase_integral_weight_limits() {
        let q = Quad { k1: 0, k2: 0, k3: 0, k4: 0, v23: 1.0, v24: 0.0, gap: 0.7, delta: 0.0 };
        let w = EnergyWeight::PhaseIntegral { horizon: f64::INFINITY, damping: 0.05 };
        let z = w.factor(&q);
        assert!((z.re - 2.0 * PI * lorentzian(0.7, 0.05)).abs() < 1e-14);
        let q0 = Quad { gap: 0.0, ..q };
        let z0 = EnergyWeight::PhaseIntegral { horizon: 3.0, damping: 0.0 }.factor(&q0);
        assert_eq!(z0, Complex64::new(6.0, 0.0));
    }
}
