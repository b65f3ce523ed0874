//! Distribution fields `W(k)` on the momentum grid, equilibria, thermodynamic
//! summaries and moment matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{DispersionField, MomentumGrid};
use crate::numerics::{bisect, mean, xlogx};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("field has {got} values, grid has {expected} points")]
    LengthMismatch { got: usize, expected: usize },
    #[error("value {value} at index {index} is not finite")]
    NotFinite { index: usize, value: f64 },
    #[error("value {value} at index {index} is negative")]
    Negative { index: usize, value: f64 },
    #[error("fermion occupation {value} at index {index} exceeds 1")]
    AboveOne { index: usize, value: f64 },
    #[error("boson equilibrium needs beta>0 with mu<min(omega)={omega_min} or beta<0 with mu>max(omega)={omega_max}; got beta={beta}, mu={mu}")]
    InvalidBosonParameters { beta: f64, mu: f64, omega_min: f64, omega_max: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("target moments out of range: {0}")]
    OutOfRange(String),
    #[error("moment matching did not converge (residual {residual:.3e})")]
    NoConvergence { residual: f64 },
    #[error("{0} not supported for {1:?} statistics")]
    Unsupported(&'static str, Statistics),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Boson,
    Fermion,
    NlsWave,
    ClassicalParticle,
}

impl Statistics {
    /// `+1` for bosons, `-1` for fermions; the wave and particle limits have none.
    pub fn theta(self) -> Option<f64> {
        match self {
            Statistics::Boson => Some(1.0),
            Statistics::Fermion => Some(-1.0),
            _ => None,
        }
    }

    pub fn require_theta(self, what: &'static str) -> Result<f64, StateError> {
        self.theta().ok_or(StateError::Unsupported(what, self))
    }
}

/// Occupation numbers `W(k) ≥ 0` (and `≤ 1` for fermions).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    grid: MomentumGrid,
    statistics: Statistics,
    values: Vec<f64>,
}

impl DistributionField {
    pub fn new(grid: MomentumGrid, statistics: Statistics, values: Vec<f64>) -> Result<Self, StateError> {
        Self::within(grid, statistics, values, 0.0)
    }

    /// Like [`DistributionField::new`] but accepts values up to `band` outside
    /// the admissible range.
    pub fn within(
        grid: MomentumGrid,
        statistics: Statistics,
        values: Vec<f64>,
        band: f64,
    ) -> Result<Self, StateError> {
        if values.len() != grid.len() {
            return Err(StateError::LengthMismatch { got: values.len(), expected: grid.len() });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(StateError::NotFinite { index, value });
            }
            if value < -band {
                return Err(StateError::Negative { index, value });
            }
            if statistics == Statistics::Fermion && value > 1.0 + band {
                return Err(StateError::AboveOne { index, value });
            }
        }
        Ok(Self { grid, statistics, values })
    }

    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    pub fn statistics(&self) -> Statistics {
        self.statistics
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `W̃ = 1 + θW`; for the classical limits this is `1`.
    pub fn tilde(&self) -> Vec<f64> {
        let theta = self.statistics.theta().unwrap_or(0.0);
        self.values.iter().map(|w| 1.0 + theta * w).collect()
    }

    /// Product tensor entry `W(k)` for `τ = +1`, `W̃(k)` for `τ = -1`.
    pub fn ordered(&self, k: usize, tau: i8) -> f64 {
        if tau > 0 {
            self.values[k]
        } else {
            1.0 + self.statistics.theta().unwrap_or(0.0) * self.values[k]
        }
    }

    /// `N^{-d} Σ |W - V|`.
    pub fn l1_distance(&self, other: &DistributionField) -> f64 {
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        mean(&diff)
    }
}

/// Inverse temperature including the fermionic ground-state limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseTemperature {
    Finite(f64),
    PlusInfinity,
    MinusInfinity,
}

#[inline]
fn occupation(theta: f64, x: f64) -> f64 {
    // 1/(e^x - θ)
    if theta > 0.0 {
        1.0 / x.exp_m1()
    } else if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (x.exp() + 1.0)
    }
}

/// `W = 1/(e^{β(ω-μ)} - θ)` (Rayleigh-Jeans `1/(β(ω-μ))` and Maxwell
/// `e^{-β(ω-μ)}` for the classical limits).
pub fn equilibrium_field(
    disp: &DispersionField,
    beta: InverseTemperature,
    mu: f64,
    statistics: Statistics,
) -> Result<DistributionField, StateError> {
    let omega = disp.omega();
    let grid = disp.grid().clone();
    let (lo, hi) = (disp.min_omega(), disp.max_omega());
    if !mu.is_finite() {
        return Err(StateError::InvalidParameters(format!("mu must be finite, got {mu}")));
    }
    let values: Vec<f64> = match (statistics, beta) {
        (Statistics::Fermion, InverseTemperature::PlusInfinity) => {
            omega.iter().map(|&w| if w <= mu { 1.0 } else { 0.0 }).collect()
        }
        (Statistics::Fermion, InverseTemperature::MinusInfinity) => {
            omega.iter().map(|&w| if w >= mu { 1.0 } else { 0.0 }).collect()
        }
        (Statistics::Fermion, InverseTemperature::Finite(b)) if b.is_finite() => {
            omega.iter().map(|&w| occupation(-1.0, b * (w - mu))).collect()
        }
        (Statistics::Boson, InverseTemperature::Finite(b)) => {
            let ok = (b > 0.0 && mu < lo) || (b < 0.0 && mu > hi);
            if !ok || !b.is_finite() {
                return Err(StateError::InvalidBosonParameters { beta: b, mu, omega_min: lo, omega_max: hi });
            }
            omega.iter().map(|&w| occupation(1.0, b * (w - mu))).collect()
        }
        (Statistics::Boson, _) => {
            return Err(StateError::InvalidBosonParameters { beta: f64::INFINITY, mu, omega_min: lo, omega_max: hi })
        }
        (Statistics::NlsWave, InverseTemperature::Finite(b)) => {
            if omega.iter().any(|&w| !(b * (w - mu) > 0.0)) {
                return Err(StateError::InvalidParameters(
                    "Rayleigh-Jeans equilibrium needs beta(omega-mu) > 0 everywhere".into(),
                ));
            }
            omega.iter().map(|&w| 1.0 / (b * (w - mu))).collect()
        }
        (Statistics::ClassicalParticle, InverseTemperature::Finite(b)) if b.is_finite() => {
            omega.iter().map(|&w| (-b * (w - mu)).exp()).collect()
        }
        _ => {
            return Err(StateError::InvalidParameters(format!(
                "{beta:?} is not a valid inverse temperature for {statistics:?}"
            )))
        }
    };
    DistributionField::new(grid, statistics, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoSummary {
    pub density: f64,
    pub energy: f64,
    pub entropy: f64,
}

/// Density `⟨W⟩`, energy `⟨ωW⟩` and the statistics-dependent entropy.
pub fn thermo(field: &DistributionField, disp: &DispersionField) -> ThermoSummary {
    let w = field.values();
    let omega = disp.omega();
    let density = mean(w);
    let ew: Vec<f64> = w.iter().zip(omega).map(|(a, b)| a * b).collect();
    let s: Vec<f64> = w.iter().map(|&x| entropy_density(field.statistics(), x)).collect();
    ThermoSummary { density, energy: mean(&ew), entropy: mean(&s) }
}

/// Pointwise entropy density with `0 log 0 = 0`.
pub fn entropy_density(statistics: Statistics, w: f64) -> f64 {
    match statistics {
        Statistics::Fermion => -xlogx(w) - xlogx(1.0 - w),
        Statistics::Boson => -xlogx(w) + xlogx(1.0 + w),
        Statistics::NlsWave => w.ln(),
        Statistics::ClassicalParticle => w - xlogx(w),
    }
}

/// Result of matching `(ρ, 𝖾)` by an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMatch {
    pub beta: f64,
    /// `None` when `β = 0`: the chemical potential is then undetermined
    /// (or infinite); `log_fugacity` carries the information.
    pub mu: Option<f64>,
    /// `η = βμ`.
    pub log_fugacity: f64,
    pub degenerate: bool,
    pub newton_converged: bool,
}

impl EquilibriumMatch {
    pub fn field(&self, disp: &DispersionField, statistics: Statistics) -> Result<DistributionField, StateError> {
        let theta = statistics.require_theta("equilibrium matching")?;
        let values = disp
            .omega()
            .iter()
            .map(|&w| occupation(theta, self.beta * w - self.log_fugacity))
            .collect();
        DistributionField::new(disp.grid().clone(), statistics, values)
    }
}

struct Moments<'a> {
    omega: &'a [f64],
    theta: f64,
}

impl Moments<'_> {
    fn eval(&self, beta: f64, eta: f64) -> (f64, f64) {
        let w: Vec<f64> = self.omega.iter().map(|&o| occupation(self.theta, beta * o - eta)).collect();
        let ew: Vec<f64> = w.iter().zip(self.omega).map(|(a, b)| a * b).collect();
        (mean(&w), mean(&ew))
    }

    /// Upper limit of `η` keeping every boson occupation finite.
    fn eta_max(&self, beta: f64) -> f64 {
        if self.theta < 0.0 {
            return f64::INFINITY;
        }
        self.omega.iter().map(|&o| beta * o).fold(f64::INFINITY, f64::min)
    }

    /// `η(β)` with `ρ(β, η) = rho`; density increases with `η`.
    fn eta_for_density(&self, beta: f64, rho: f64) -> Option<f64> {
        if self.theta < 0.0 {
            let f = |eta: f64| self.eval(beta, eta).0 - rho;
            let mut b = 1.0;
            while f(-b) > 0.0 || f(b) < 0.0 {
                b *= 2.0;
                if b > 1e12 {
                    return None;
                }
            }
            bisect(f, -b, b, 1e-16)
        } else {
            let top = self.eta_max(beta);
            let f = |s: f64| self.eval(beta, top - s.exp()).0 - rho;
            let mut b = 1.0;
            while f(-b) < 0.0 || f(b) > 0.0 {
                b *= 2.0;
                if b > 1e4 {
                    return None;
                }
            }
            bisect(f, -b, b, 1e-16).map(|s| top - s.exp())
        }
    }
}

/// Grid analogue of the boson critical line: the density and excitation
/// energy of `W_{β, μ → ω_ext}` with the extremal points (the grid condensate)
/// excluded. `ω_ext` is `min ω` for `β > 0` and `max ω` for `β < 0`.
///
/// Diagnostic only: on a finite grid the extremal point itself can hold any
/// density, so matching never rejects a boson target on this basis.
pub fn boson_grid_critical(disp: &DispersionField, beta: f64) -> (f64, f64) {
    let omega = disp.omega();
    let ext = if beta > 0.0 { disp.min_omega() } else { disp.max_omega() };
    let scale = disp.max_omega().abs().max(disp.min_omega().abs()).max(1.0);
    let mut w = Vec::with_capacity(omega.len());
    let mut ex = Vec::with_capacity(omega.len());
    for &o in omega {
        if (o - ext).abs() <= 1e-12 * scale {
            w.push(0.0);
            ex.push(0.0);
            continue;
        }
        let occ = occupation(1.0, beta * (o - ext));
        w.push(occ);
        ex.push(occ * (o - ext).abs());
    }
    (mean(&w), mean(&ex))
}

fn fermion_energy_band(omega: &[f64], rho: f64) -> (f64, f64) {
    let mut sorted = omega.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let fill = |it: &mut dyn Iterator<Item = f64>| {
        let mut left = rho * n;
        let mut e = 0.0;
        for o in it {
            let take = left.min(1.0);
            e += take * o;
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        e / n
    };
    (fill(&mut sorted.iter().copied()), fill(&mut sorted.iter().rev().copied()))
}

/// Finds `(β, μ)` whose equilibrium has density `rho` and energy `energy`.
///
/// Damped Newton on `(β, η = βμ)` with a finite-difference Jacobian; if it
/// stalls, nested bisection (density in `η`, energy in `β` on a doubling
/// bracket) takes over.
pub fn match_equilibrium(
    rho: f64,
    energy: f64,
    disp: &DispersionField,
    statistics: Statistics,
) -> Result<EquilibriumMatch, StateError> {
    let theta = statistics.require_theta("equilibrium matching")?;
    let omega = disp.omega();
    let (lo, hi) = (disp.min_omega(), disp.max_omega());
    let mean_omega = mean(omega);
    let e_scale = rho.abs() * lo.abs().max(hi.abs()).max(1e-300);
    if !(rho > 0.0) || !energy.is_finite() {
        return Err(StateError::OutOfRange(format!("density must be positive, got {rho}")));
    }
    if !(energy > rho * lo && energy < rho * hi) {
        return Err(StateError::OutOfRange(format!(
            "energy {energy} outside ({}, {})",
            rho * lo,
            rho * hi
        )));
    }
    if theta < 0.0 {
        if rho >= 1.0 {
            return Err(StateError::OutOfRange(format!("fermion density {rho} must be below 1")));
        }
        let (emin, emax) = fermion_energy_band(omega, rho);
        let slack = 1e-12 * e_scale;
        if energy <= emin + slack || energy >= emax - slack {
            return Err(StateError::OutOfRange(format!(
                "fermion energy {energy} outside the open band ({emin}, {emax})"
            )));
        }
    }
    let m = Moments { omega, theta };
    let offset = energy - rho * mean_omega;

    if offset.abs() <= 1e-13 * e_scale {
        let eta = if theta < 0.0 { (rho / (1.0 - rho)).ln() } else { -(1.0 + 1.0 / rho).ln() };
        return Ok(EquilibriumMatch {
            beta: 0.0,
            mu: None,
            log_fugacity: eta,
            degenerate: true,
            newton_converged: true,
        });
    }

    let residual = |beta: f64, eta: f64| {
        let (r, e) = m.eval(beta, eta);
        [(r - rho) / rho, (e - energy) / e_scale]
    };
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let admissible = |beta: f64, eta: f64| theta < 0.0 || eta < m.eta_max(beta);

    // start from the linear-response temperature
    let var: f64 = mean(&omega.iter().map(|o| (o - mean_omega).powi(2)).collect::<Vec<_>>());
    let mut beta = -offset / (rho * var.max(1e-300));
    let mut newton_converged = false;
    if let Some(mut eta) = m.eta_for_density(beta, rho) {
        let mut r = residual(beta, eta);
        for _ in 0..200 {
            if norm(r) < 1e-10 {
                newton_converged = true;
                break;
            }
            let hb = 1e-7 * (1.0 + beta.abs());
            let he = 1e-7 * (1.0 + eta.abs());
            let rb = residual(beta + hb, eta);
            let re = residual(beta, eta - he);
            let j = [
                [(rb[0] - r[0]) / hb, (r[0] - re[0]) / he],
                [(rb[1] - r[1]) / hb, (r[1] - re[1]) / he],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !det.is_finite() || det == 0.0 {
                break;
            }
            let db = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
            let de = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let (nb, ne) = (beta + scale * db, eta + scale * de);
                if admissible(nb, ne) {
                    let nr = residual(nb, ne);
                    if nr.iter().all(|x| x.is_finite()) && norm(nr) < norm(r) {
                        beta = nb;
                        eta = ne;
                        r = nr;
                        accepted = true;
                        break;
                    }
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if newton_converged {
            return Ok(finish(beta, eta, false, true));
        }
    }

    // nested bisection
    let g = |b: f64| match m.eta_for_density(b, rho) {
        Some(eta) => m.eval(b, eta).1 - energy,
        None => f64::NAN,
    };
    let mut span = 1.0;
    let (mut a, mut c) = (-span, span);
    loop {
        let (ga, gc) = (g(a), g(c));
        if ga.is_finite() && gc.is_finite() && ga > 0.0 && gc < 0.0 {
            break;
        }
        span *= 2.0;
        if span > 1e8 {
            return Err(StateError::OutOfRange(format!(
                "no inverse temperature brackets energy {energy} at density {rho}"
            )));
        }
        a = -span;
        c = span;
    }
    let b = bisect(g, a, c, 1e-15).ok_or(StateError::NoConvergence { residual: f64::NAN })?;
    beta = b;
    let eta = m.eta_for_density(beta, rho).ok_or(StateError::NoConvergence { residual: f64::NAN })?;
    let res = norm(residual(beta, eta));
    if res > 1e-10 {
        return Err(StateError::NoConvergence { residual: res });
    }
    Ok(finish(beta, eta, false, false))
}

fn finish(beta: f64, eta: f64, degenerate: bool, newton: bool) -> EquilibriumMatch {
    EquilibriumMatch {
        beta,
        mu: if beta != 0.0 { Some(eta / beta) } else { None },
        log_fugacity: eta,
        degenerate,
        newton_converged: newton,
    }
}

/// Reproducible smooth random field: low Fourier modes around the midpoint of
/// `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomFieldSpec {
    pub seed: u64,
    pub lower: f64,
    pub upper: f64,
    /// Fraction of the half-width used by the modes, in `[0, 1]`.
    pub amplitude: f64,
    pub max_mode: usize,
}

impl RandomFieldSpec {
    pub fn for_statistics(statistics: Statistics, seed: u64) -> Self {
        let (lower, upper) = match statistics {
            Statistics::Fermion => (0.0, 1.0),
            _ => (0.05, 2.0),
        };
        Self { seed, lower, upper, amplitude: 0.9, max_mode: 2 }
    }
}

pub fn random_field(
    grid: &MomentumGrid,
    statistics: Statistics,
    spec: &RandomFieldSpec,
) -> Result<DistributionField, StateError> {
    if !(spec.lower <= spec.upper) || !(0.0..=1.0).contains(&spec.amplitude) {
        return Err(StateError::InvalidParameters("need lower <= upper and amplitude in [0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = grid.dim();
    let m = spec.max_mode as i64;
    let span = (2 * m + 1) as usize;
    let mut modes = Vec::new();
    for idx in 0..span.pow(d as u32) {
        let v: Vec<i64> = (0..d).map(|a| ((idx / span.pow(a as u32)) % span) as i64 - m).collect();
        if v.iter().all(|&c| c == 0) {
            continue;
        }
        let c: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        modes.push((v, c, phi));
    }
    let norm: f64 = modes.iter().map(|m| m.1.abs()).sum::<f64>().max(1e-300);
    let mid = 0.5 * (spec.lower + spec.upper);
    let half = 0.5 * (spec.upper - spec.lower);
    let values = (0..grid.len())
        .map(|i| {
            let k = grid.coords(i);
            let s: f64 = modes
                .iter()
                .map(|(v, c, phi)| {
                    let dot: f64 = v.iter().zip(&k).map(|(&a, &b)| a as f64 * b).sum();
                    c * (std::f64::consts::TAU * dot + phi).cos()
                })
                .sum();
            (mid + spec.amplitude * half * s / norm).clamp(spec.lower, spec.upper)
        })
        .collect();
    DistributionField::new(grid.clone(), statistics, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::HoppingModel;

    fn disp(d: usize, n: usize) -> DispersionField {
        HoppingModel::nearest_neighbor(d, 1.0, HoppingModel::contact_potential(d, 1.0))
            .unwrap()
            .dispersion(&MomentumGrid::new(d, n).unwrap())
            .unwrap()
    }

    #[test]
    fn constructor_rejects_bad_values() {
        let g = MomentumGrid::new(1, 4).unwrap();
        assert!(matches!(
            DistributionField::new(g.clone(), Statistics::Fermion, vec![0.1, 1.2, 0.0, 0.3]),
            Err(StateError::AboveOne { index: 1, .. })
        ));
        assert!(matches!(
            DistributionField::new(g.clone(), Statistics::Boson, vec![0.1, -0.2, 0.0, 0.3]),
            Err(StateError::Negative { index: 1, .. })
        ));
        assert!(DistributionField::new(g, Statistics::Boson, vec![0.1]).is_err());
    }

    #[test]
    fn detailed_balance_ratio() {
        let d = disp(2, 6);
        for (stats, beta, mu) in [(Statistics::Boson, 1.3, 0.5), (Statistics::Fermion, 0.7, 4.0), (Statistics::Boson, -0.4, 9.5)] {
            let f = equilibrium_field(&d, InverseTemperature::Finite(beta), mu, stats).unwrap();
            for (k, (&w, wt)) in f.values().iter().zip(f.tilde()).enumerate() {
                let lhs = wt / w;
                let rhs = (beta * (d.omega()[k] - mu)).exp();
                assert!((lhs - rhs).abs() <= 1e-12 * rhs);
            }
        }
    }

    #[test]
    fn boson_parameter_window() {
        let d = disp(2, 4);
        assert!(matches!(
            equilibrium_field(&d, InverseTemperature::Finite(1.0), 1.5, Statistics::Boson),
            Err(StateError::InvalidBosonParameters { .. })
        ));
        assert!(equilibrium_field(&d, InverseTemperature::Finite(-1.0), 10.0, Statistics::Boson).is_ok());
        assert!(equilibrium_field(&d, InverseTemperature::PlusInfinity, 0.0, Statistics::Boson).is_err());
    }

    #[test]
    fn fermion_ground_states() {
        let d = disp(2, 4);
        let f = equilibrium_field(&d, InverseTemperature::PlusInfinity, 5.0, Statistics::Fermion).unwrap();
        let g = equilibrium_field(&d, InverseTemperature::MinusInfinity, 5.0, Statistics::Fermion).unwrap();
        for (k, &w) in d.omega().iter().enumerate() {
            assert_eq!(f.values()[k], if w <= 5.0 { 1.0 } else { 0.0 });
            assert_eq!(g.values()[k], if w >= 5.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn entropy_boundary_is_finite() {
        let d = disp(1, 4);
        let f = DistributionField::new(d.grid().clone(), Statistics::Fermion, vec![0.0, 1.0, 0.5, 0.0]).unwrap();
        let s = thermo(&f, &d).entropy;
        assert!((s - std::f64::consts::LN_2 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn match_recovers_parameters() {
        let d = disp(2, 6);
        for (stats, beta, mu) in [
            (Statistics::Fermion, 0.8, 4.5),
            (Statistics::Fermion, -1.5, 6.0),
            (Statistics::Boson, 0.9, 0.2),
            (Statistics::Boson, -0.6, 10.0),
        ] {
            let f = equilibrium_field(&d, InverseTemperature::Finite(beta), mu, stats).unwrap();
            let t = thermo(&f, &d);
            let m = match_equilibrium(t.density, t.energy, &d, stats).unwrap();
            assert!((m.beta - beta).abs() < 1e-8 * beta.abs(), "{stats:?} {} vs {beta}", m.beta);
            assert!((m.mu.unwrap() - mu).abs() < 1e-7 * mu.abs().max(1.0));
        }
    }

    #[test]
    fn match_degenerate_fermion_half_filling() {
        let d = disp(2, 6);
        let mean_omega = mean(d.omega());
        let m = match_equilibrium(0.5, 0.5 * mean_omega, &d, Statistics::Fermion).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.beta, 0.0);
        assert_eq!(m.mu, None);
        assert_eq!(m.log_fugacity, 0.0);
    }

    #[test]
    fn match_rejects_unreachable_targets() {
        let d = disp(2, 6);
        assert!(matches!(match_equilibrium(1.2, 5.0, &d, Statistics::Fermion), Err(StateError::OutOfRange(_))));
        // energy below the lowest possible filling
        assert!(matches!(match_equilibrium(0.3, 0.3, &d, Statistics::Fermion), Err(StateError::OutOfRange(_))));
        // on a finite grid the extremal point absorbs any excess boson density
        let (rc, ex) = boson_grid_critical(&d, 1.0);
        let omin = d.min_omega();
        let rho = 3.0 * rc;
        let m = match_equilibrium(rho, ex + omin * rho, &d, Statistics::Boson).unwrap();
        let t = thermo(&m.field(&d, Statistics::Boson).unwrap(), &d);
        assert!((t.density - rho).abs() < 1e-9 * rho);
        assert!(m.mu.unwrap() < omin);
    }

    #[test]
    fn random_field_reproducible_and_bounded() {
        let g = MomentumGrid::new(2, 6).unwrap();
        let spec = RandomFieldSpec::for_statistics(Statistics::Fermion, 7);
        let a = random_field(&g, Statistics::Fermion, &spec).unwrap();
        let b = random_field(&g, Statistics::Fermion, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&w| w > 0.0 && w < 1.0));
        let flat = random_field(&g, Statistics::Boson, &RandomFieldSpec { amplitude: 0.0, ..spec }).unwrap();
        assert!(flat.values().iter().all(|&w| w == 0.5));
    }
}
