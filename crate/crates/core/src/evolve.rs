//! Time integration of `∂_t W = C(W)` with conservation and entropy
//! instrumentation, plus the Taylor coefficients of the kinetic series.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::collision::{
    bn_raw, loss_diagonal, Bracket, CollisionAction, CollisionError, CollisionTable, Correlation, CorrelationTensor,
    EnergyWeight, ProductCorrelation,
};
use crate::numerics::{fmt_float, Neumaier};
use crate::state::{thermo, DistributionField, StateError, ThermoSummary};

/// Admissibility band for integrated fields.
pub const BAND: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error("field left the admissible range: {0}")]
    AdmissibilityViolated(StateError),
    #[error("entropy production needs 0 < W{upper}; W({index}) = {value}")]
    BoundaryField { index: usize, value: f64, upper: &'static str },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid horizon {0}")]
    InvalidHorizon(f64),
    #[error("kinetic series order {0} not supported (0, 1 or 2)")]
    OrderUnsupported(usize),
}

fn rate(table: &CollisionTable, theta: f64, w: &[f64]) -> Vec<f64> {
    bn_raw(table, theta, w)
}

fn check_field(table: &CollisionTable, field: &DistributionField) -> Result<f64, EvolveError> {
    if field.grid() != table.grid() {
        return Err(CollisionError::GridMismatch.into());
    }
    let theta = table.theta()?;
    if field.statistics() != table.statistics() {
        return Err(CollisionError::StatisticsMismatch { table: table.statistics(), field: field.statistics() }.into());
    }
    Ok(theta)
}

/// One classical fourth-order Runge-Kutta step.
pub fn step(table: &CollisionTable, field: &DistributionField, dt: f64) -> Result<DistributionField, EvolveError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(EvolveError::InvalidStep(dt));
    }
    let theta = check_field(table, field)?;
    let w = field.values();
    let shifted = |k: &[f64], h: f64| -> Vec<f64> { w.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1 = rate(table, theta, w);
    let k2 = rate(table, theta, &shifted(&k1, 0.5 * dt));
    let k3 = rate(table, theta, &shifted(&k2, 0.5 * dt));
    let k4 = rate(table, theta, &shifted(&k3, dt));
    let next: Vec<f64> = (0..w.len())
        .map(|i| w[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    DistributionField::within(field.grid().clone(), field.statistics(), next, BAND)
        .map_err(EvolveError::AdmissibilityViolated)
}

/// `0.1 / max_k |∂C(W)(k)/∂W(k)|`.
pub fn default_step(table: &CollisionTable, field: &DistributionField) -> Result<f64, EvolveError> {
    let diag = loss_diagonal(table, field)?;
    let top = diag.iter().copied().fold(0.0, f64::max);
    Ok(if top > 0.0 { 0.1 / top } else { 1.0 })
}

/// Entropy production `(π/4) N^{-3d} Σ |V̂₂₃+θV̂₂₄|² δ_ε (x−y) log(x/y)` with
/// `x = W̃₁W̃₂W₃W₄`, `y = W₁W₂W̃₃W̃₄`; equals `dS/dt` under the same quadrature.
pub fn entropy_production(table: &CollisionTable, field: &DistributionField) -> Result<f64, EvolveError> {
    let theta = check_field(table, field)?;
    let w = field.values();
    for (index, &value) in w.iter().enumerate() {
        if value <= 0.0 {
            return Err(EvolveError::BoundaryField { index, value, upper: "" });
        }
        if theta < 0.0 && value >= 1.0 {
            return Err(EvolveError::BoundaryField { index, value, upper: " < 1" });
        }
    }
    let tilde = field.tilde();
    let log_ratio: Vec<f64> = tilde.iter().zip(w).map(|(t, v)| (t / v).ln()).collect();
    let per_point = table.quadrature(|q| {
        let c = q.v23 + theta * q.v24;
        let x = tilde[q.k1] * tilde[q.k2] * w[q.k3] * w[q.k4];
        let y = w[q.k1] * w[q.k2] * tilde[q.k3] * tilde[q.k4];
        let l = log_ratio[q.k1] + log_ratio[q.k2] - log_ratio[q.k3] - log_ratio[q.k4];
        // both factors share a sign; a disagreement is roundoff near x = y
        let f = ((x - y) * l).max(0.0);
        c * c * q.delta * f
    });
    let mut acc = Neumaier::default();
    for p in &per_point {
        acc.add(*p);
    }
    Ok(0.25 * PI * acc.total() / per_point.len() as f64)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<DistributionField>,
    pub summaries: Vec<ThermoSummary>,
    /// `NaN` where the field touches the boundary.
    pub sigma: Vec<f64>,
}

impl Trajectory {
    /// Columns `t, rho, energy, entropy, sigma`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("t,rho,energy,entropy,sigma\n");
        for i in 0..self.times.len() {
            let s = &self.summaries[i];
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_float(self.times[i]),
                fmt_float(s.density),
                fmt_float(s.energy),
                fmt_float(s.entropy),
                fmt_float(self.sigma[i])
            );
        }
        out
    }

    /// One row per recorded time: `t, W(0), ..., W(M-1)`.
    pub fn fields_csv(&self) -> String {
        let m = self.fields.first().map_or(0, |f| f.values().len());
        let mut out = String::from("t");
        for k in 0..m {
            let _ = write!(out, ",w{k}");
        }
        out.push('\n');
        for (t, f) in self.times.iter().zip(&self.fields) {
            out.push_str(&fmt_float(*t));
            for v in f.values() {
                out.push(',');
                out.push_str(&fmt_float(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> &DistributionField {
        self.fields.last().expect("trajectory records the initial field")
    }
}

/// Integrates to `horizon` with steps of at most `dt`, recording every
/// `record_every` steps and at the end.
pub fn run(
    table: &CollisionTable,
    initial: &DistributionField,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<Trajectory, EvolveError> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(EvolveError::InvalidHorizon(horizon));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(EvolveError::InvalidStep(dt));
    }
    check_field(table, initial)?;
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps > 0 { horizon / steps as f64 } else { dt };
    let every = record_every.max(1);
    let disp = table.dispersion();
    let mut traj = Trajectory { times: Vec::new(), fields: Vec::new(), summaries: Vec::new(), sigma: Vec::new() };
    let mut record = |t: f64, f: &DistributionField| {
        traj.times.push(t);
        traj.summaries.push(thermo(f, disp));
        traj.sigma.push(entropy_production(table, f).unwrap_or(f64::NAN));
        traj.fields.push(f.clone());
    };
    let mut current = initial.clone();
    record(0.0, &current);
    for n in 1..=steps {
        current = step(table, &current, h)?;
        if n % every == 0 || n == steps {
            record(n as f64 * h, &current);
        }
    }
    Ok(traj)
}

/// Taylor coefficients `a_n = (C₃⋯C_{2n+1} ρ̂_{2n+1})(k, 1)` of `W(k, t)` for
/// the product correlations of `field`, `n ≤ order`.
pub fn kinetic_series_coefficients(
    table: &CollisionTable,
    field: &DistributionField,
    order: usize,
) -> Result<Vec<Vec<f64>>, EvolveError> {
    if order > 2 {
        return Err(EvolveError::OrderUnsupported(order));
    }
    check_field(table, field)?;
    let mut out = vec![field.values().to_vec()];
    if order == 0 {
        return Ok(out);
    }
    let m = field.values().len();
    let at_plus = |c: &dyn Fn(&[(usize, i8)]) -> Complex64| -> Vec<f64> { (0..m).map(|k| c(&[(k, 1)]).re).collect() };

    let rho3 = ProductCorrelation::new(field, 3);
    let first = CollisionAction::new(table, &rho3, EnergyWeight::Limiting, vec![(0, Bracket::Full)])?;
    out.push(at_plus(&|a| first.value(a)));
    if order == 1 {
        return Ok(out);
    }

    let rho5 = ProductCorrelation::new(field, 5);
    let inner = CollisionAction::assembled(table, &rho5, EnergyWeight::Limiting)?;
    let rho3_evolved = CorrelationTensor::materialize(&inner)?;
    let outer = CollisionAction::new(table, &rho3_evolved, EnergyWeight::Limiting, vec![(0, Bracket::Full)])?;
    out.push(at_plus(&|a| outer.value(a)));
    Ok(out)
}
