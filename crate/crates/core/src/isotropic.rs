//! Isotropic Boltzmann-Nordheim equation for bosons with `ω = k²/2` on a
//! uniform energy grid, condensation diagnostics and the critical line.
//!
//! Cells sit at `ε_j = (j + ½)Δ`, so `ε₂ = ε₃ + ε₄ − ε₁` is again a cell
//! centre and the energy delta is resolved exactly. Pairs whose partner cell
//! lies beyond the cutoff are dropped; the truncated system conserves mass and
//! energy exactly and the dropped flux is reported.

use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{bisect, fmt_float, integrate, xlogx, Neumaier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsotropicError {
    #[error("energy grid needs at least 2 cells and a positive cutoff (cells={cells}, cutoff={cutoff})")]
    InvalidGrid { cells: usize, cutoff: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("density {value} at cell {cell} is negative or not finite")]
    NegativeDensity { cell: usize, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("quadrature did not reach tolerance: {0}")]
    QuadratureFailure(String),
    #[error("target out of range: {0}")]
    OutOfRange(String),
    #[error("step size fell below {0}")]
    StepUnderflow(f64),
}

/// Uniform cell-centred energy grid on `[0, cutoff]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    cells: usize,
    spacing: f64,
    centres: Vec<f64>,
    roots: Vec<f64>,
}

impl EnergyGrid {
    pub fn new(cells: usize, cutoff: f64) -> Result<Self, IsotropicError> {
        if cells < 2 || !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(IsotropicError::InvalidGrid { cells, cutoff });
        }
        let spacing = cutoff / cells as f64;
        let centres: Vec<f64> = (0..cells).map(|j| (j as f64 + 0.5) * spacing).collect();
        let roots = centres.iter().map(|e| e.sqrt()).collect();
        Ok(Self { cells, spacing, centres, roots })
    }

    /// Default cutoff `20/β`.
    pub fn for_temperature(cells: usize, beta: f64) -> Result<Self, IsotropicError> {
        Self::new(cells, 20.0 / beta)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cutoff(&self) -> f64 {
        self.spacing * self.cells as f64
    }

    pub fn centres(&self) -> &[f64] {
        &self.centres
    }

    /// Measure weight `√ε_j Δ`.
    pub fn measure(&self, j: usize) -> f64 {
        self.roots[j] * self.spacing
    }
}

/// Density `f(ε_j)` on an energy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyState {
    pub grid: EnergyGrid,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
}

impl EnergyState {
    pub fn new(grid: EnergyGrid, f: Vec<f64>) -> Result<Self, IsotropicError> {
        if f.len() != grid.cells {
            return Err(IsotropicError::LengthMismatch { expected: grid.cells, got: f.len() });
        }
        check_nonnegative(&f, 0.0)?;
        Ok(Self { grid, f })
    }

    /// Samples of `1/(e^{β(ε−μ)} − 1)`, `β > 0`, `μ < Δ/2`.
    pub fn bose_einstein(grid: EnergyGrid, beta: f64, mu: f64) -> Result<Self, IsotropicError> {
        if !(beta > 0.0) || !(mu < grid.centres[0]) {
            return Err(IsotropicError::InvalidParameters(format!(
                "need beta > 0 and mu below the lowest cell {}; got beta={beta}, mu={mu}",
                grid.centres[0]
            )));
        }
        let f = grid.centres.iter().map(|e| 1.0 / (beta * (e - mu)).exp_m1()).collect();
        Ok(Self { grid, f })
    }

    pub fn moments(&self) -> Moments {
        let (mut m, mut e, mut s) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
        for (j, &fj) in self.f.iter().enumerate() {
            let w = self.grid.measure(j);
            m.add(w * fj);
            e.add(w * self.grid.centres[j] * fj);
            s.add(w * (xlogx(1.0 + fj) - xlogx(fj)));
        }
        Moments { mass: m.total(), energy: e.total(), entropy: s.total() }
    }

    /// Mass held in cells with `ε < threshold`.
    pub fn window_mass(&self, threshold: f64) -> f64 {
        let mut acc = Neumaier::default();
        for (j, &fj) in self.f.iter().enumerate() {
            if self.grid.centres[j] < threshold {
                acc.add(self.grid.measure(j) * fj);
            }
        }
        acc.total()
    }

    /// `∫|f − g| √ε dε` on the common grid.
    pub fn l1_distance(&self, other: &EnergyState) -> f64 {
        let mut acc = Neumaier::default();
        for j in 0..self.f.len() {
            acc.add(self.grid.measure(j) * (self.f[j] - other.f[j]).abs());
        }
        acc.total()
    }

    /// Rows `ε, f`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("energy,f\n");
        for (e, f) in self.grid.centres.iter().zip(&self.f) {
            out.push_str(&format!("{},{}\n", fmt_float(*e), fmt_float(*f)));
        }
        out
    }
}

fn check_nonnegative(f: &[f64], band: f64) -> Result<(), IsotropicError> {
    for (cell, &value) in f.iter().enumerate() {
        if !value.is_finite() || value < -band {
            return Err(IsotropicError::NegativeDensity { cell, value });
        }
    }
    Ok(())
}

/// Collision rate per cell, plus the mass and energy rates that the
/// truncation drops (partner cell beyond the cutoff, evaluated with `f₂ = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionRate {
    pub rate: Vec<f64>,
    pub dropped_mass: f64,
    pub dropped_energy: f64,
    /// `max_j |∂C_j/∂f_j|`, the fastest relaxation rate.
    pub stiffness: f64,
}

fn collide(grid: &EnergyGrid, f: &[f64]) -> CollisionRate {
    let m = grid.cells;
    let d2 = grid.spacing * grid.spacing;
    let roots = &grid.roots;
    let per: Vec<(f64, f64, f64)> = (0..m)
        .into_par_iter()
        .map(|j1| {
            let (f1, r1) = (f[j1], roots[j1]);
            let mut acc = Neumaier::default();
            let mut lost = Neumaier::default();
            let mut diag = 0.0;
            for j3 in 0..m {
                let (f3, r3) = (f[j3], roots[j3]);
                // ε₂ ≥ Δ/2 ⇔ j₃ + j₄ ≥ j₁
                let start = j1.saturating_sub(j3);
                for j4 in start..m {
                    let (f4, r4) = (f[j4], roots[j4]);
                    let j2 = j3 + j4 - j1;
                    if j2 >= m {
                        // partner beyond the cutoff: gain with f₂ = 0
                        let kernel = r1.min(r3).min(r4) / r1;
                        lost.add(kernel * (1.0 + f1) * f3 * f4);
                        continue;
                    }
                    let (f2, r2) = (f[j2], roots[j2]);
                    let kernel = r1.min(r2).min(r3).min(r4) / r1;
                    let bracket = (1.0 + f1) * (1.0 + f2) * f3 * f4 - f1 * f2 * (1.0 + f3) * (1.0 + f4);
                    acc.add(kernel * bracket);
                    diag += kernel * ((1.0 + f2) * f3 * f4 - f2 * (1.0 + f3) * (1.0 + f4)).abs();
                }
            }
            (acc.total() * d2, lost.total() * d2, diag * d2)
        })
        .collect();
    let rate: Vec<f64> = per.iter().map(|p| p.0).collect();
    let (mut dm, mut de) = (Neumaier::default(), Neumaier::default());
    for (j, p) in per.iter().enumerate() {
        dm.add(grid.measure(j) * p.1);
        de.add(grid.measure(j) * grid.centres[j] * p.1);
    }
    let stiffness = per.iter().map(|p| p.2).fold(0.0, f64::max);
    CollisionRate { rate, dropped_mass: dm.total(), dropped_energy: de.total(), stiffness }
}

/// `C_r(f)` on the grid with the dropped-pair flux.
pub fn isotropic_collision(state: &EnergyState) -> CollisionRate {
    collide(&state.grid, &state.f)
}

/// `(Σ √ε_j Δ C_j, Σ ε_j √ε_j Δ C_j)`.
pub fn conservation_rates(grid: &EnergyGrid, rate: &[f64]) -> (f64, f64) {
    let (mut m, mut e) = (Neumaier::default(), Neumaier::default());
    for (j, c) in rate.iter().enumerate() {
        m.add(grid.measure(j) * c);
        e.add(grid.measure(j) * grid.centres[j] * c);
    }
    (m.total(), e.total())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicRunOptions {
    pub horizon: f64,
    /// Largest step.
    pub dt: f64,
    /// Cap on the relative change of any cell per step.
    pub max_relative_change: f64,
    pub record_every: f64,
    /// Threshold `ε` of the low-energy window diagnostic.
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<EnergyState>,
    pub moments: Vec<Moments>,
    pub window_mass: Vec<f64>,
    /// Dropped mass rate at each recorded time.
    pub leakage: Vec<f64>,
    pub steps: usize,
}

impl IsotropicTrajectory {
    /// Columns `t, mass, energy, entropy, window_mass, leakage`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mass,energy,entropy,window_mass,leakage\n");
        for i in 0..self.times.len() {
            let m = self.moments[i];
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_float(self.times[i]),
                fmt_float(m.mass),
                fmt_float(m.energy),
                fmt_float(m.entropy),
                fmt_float(self.window_mass[i]),
                fmt_float(self.leakage[i])
            ));
        }
        out
    }

    pub fn last(&self) -> &EnergyState {
        self.states.last().expect("trajectory records the initial state")
    }
}

fn rk4(grid: &EnergyGrid, f: &[f64], k1: &[f64], h: f64) -> Vec<f64> {
    let shift = |k: &[f64], s: f64| -> Vec<f64> { f.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k2 = collide(grid, &shift(k1, 0.5 * h)).rate;
    let k3 = collide(grid, &shift(&k2, 0.5 * h)).rate;
    let k4 = collide(grid, &shift(&k3, h)).rate;
    (0..f.len()).map(|i| f[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// RK4 with a step limited by `dt`, by the relative change of the fastest
/// cell and by `0.5/stiffness`; a step that would produce a negative density
/// is halved.
pub fn evolve_isotropic(initial: &EnergyState, opts: &IsotropicRunOptions) -> Result<IsotropicTrajectory, IsotropicError> {
    if !(opts.dt > 0.0) || !(opts.horizon >= 0.0) || !(opts.max_relative_change > 0.0) {
        return Err(IsotropicError::InvalidParameters(format!("{opts:?}")));
    }
    check_nonnegative(&initial.f, 0.0)?;
    let grid = &initial.grid;
    let mut traj = IsotropicTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        moments: Vec::new(),
        window_mass: Vec::new(),
        leakage: Vec::new(),
        steps: 0,
    };
    let mut f = initial.f.clone();
    let mut t = 0.0;
    let mut next_record = 0.0;
    let floor = 1e-12 * grid.cutoff();
    loop {
        let c = collide(grid, &f);
        if t >= next_record - 1e-12 * opts.horizon.max(1.0) || t >= opts.horizon {
            let state = EnergyState { grid: grid.clone(), f: f.clone() };
            traj.times.push(t);
            traj.moments.push(state.moments());
            traj.window_mass.push(state.window_mass(opts.window));
            traj.leakage.push(c.dropped_mass);
            traj.states.push(state);
            next_record += opts.record_every.max(opts.dt);
        }
        if t >= opts.horizon {
            break;
        }
        let top = f.iter().copied().fold(0.0, f64::max);
        let mut h = opts.dt.min(opts.horizon - t);
        if c.stiffness > 0.0 {
            h = h.min(0.5 / c.stiffness);
        }
        for (fj, cj) in f.iter().zip(&c.rate) {
            if *cj != 0.0 {
                h = h.min(opts.max_relative_change * (fj + 1e-3 * top + floor) / cj.abs());
            }
        }
        let mut next = rk4(grid, &f, &c.rate, h);
        let mut halvings = 0;
        while next.iter().any(|x| *x < -1e-9 || !x.is_finite()) {
            halvings += 1;
            h *= 0.5;
            if halvings > 30 {
                return Err(IsotropicError::StepUnderflow(h));
            }
            next = rk4(grid, &f, &c.rate, h);
        }
        f = next;
        t = if opts.horizon - (t + h) < 1e-12 * opts.horizon { opts.horizon } else { t + h };
        traj.steps += 1;
    }
    Ok(traj)
}

/// Fits `(β, μ)` with `μ < Δ/2` to the grid moments of `state`: density in
/// `μ` by bisection, energy in `β` by an outer bisection.
pub fn match_grid_equilibrium(grid: &EnergyGrid, mass: f64, energy: f64) -> Result<(f64, f64), IsotropicError> {
    if !(mass > 0.0) || !(energy > 0.0) {
        return Err(IsotropicError::OutOfRange(format!("mass {mass}, energy {energy}")));
    }
    let lowest = grid.centres[0];
    // parametrize by the gap `g = ε₀ − μ > 0` so the lowest cell never rounds to μ
    let moments = |beta: f64, gap: f64| {
        let (mut m, mut e) = (Neumaier::default(), Neumaier::default());
        for j in 0..grid.cells {
            let fj = 1.0 / (beta * ((grid.centres[j] - lowest) + gap)).exp_m1();
            m.add(grid.measure(j) * fj);
            e.add(grid.measure(j) * grid.centres[j] * fj);
        }
        (m.total(), e.total())
    };
    let gap_for = |beta: f64| -> Option<f64> {
        let g = |s: f64| moments(beta, s.exp()).0 - mass;
        bisect(g, -700.0, 60.0, 1e-15).map(f64::exp)
    };
    let mean_energy = |beta: f64| -> f64 {
        match gap_for(beta) {
            Some(gap) => moments(beta, gap).1 - energy,
            None => f64::NAN,
        }
    };
    // mean energy decreases with β
    let (mut lo, mut hi) = (1e-3, 1.0);
    while mean_energy(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(IsotropicError::OutOfRange("energy too low for the grid".into()));
        }
    }
    while !(mean_energy(lo) > 0.0) {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(IsotropicError::OutOfRange("energy too high for the grid".into()));
        }
    }
    let beta = bisect(mean_energy, lo, hi, 1e-14).ok_or_else(|| IsotropicError::OutOfRange("no bracket".into()))?;
    let gap = gap_for(beta).ok_or_else(|| IsotropicError::OutOfRange("density not matched".into()))?;
    Ok((beta, lowest - gap))
}

/// `ρ₀(β)` and `𝖾₀(β)` on a set of inverse temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCurve {
    pub betas: Vec<f64>,
    pub rho0: Vec<f64>,
    pub e0: Vec<f64>,
}

/// `∫₀^∞ εᵖ √ε /(e^{βε} − 1) dε` with `ε = u²`, which removes the
/// endpoint singularity: `∫ 2u^{2p+2} /(e^{βu²} − 1) du`.
fn bose_moment(beta: f64, power: i32) -> Result<f64, IsotropicError> {
    let upper = (800.0 / beta).sqrt();
    let integrand = |u: f64| {
        if u == 0.0 {
            if power == 0 {
                2.0 / beta
            } else {
                0.0
            }
        } else {
            2.0 * u.powi(2 * power + 2) / (beta * u * u).exp_m1()
        }
    };
    let (value, err) = integrate(integrand, 0.0, upper, 1e-15, 1e-13);
    if !(err <= 1e-11 * value.abs()) {
        return Err(IsotropicError::QuadratureFailure(format!("beta={beta}, power={power}, error {err:e}")));
    }
    Ok(value)
}

pub fn critical_curve(betas: &[f64]) -> Result<CriticalCurve, IsotropicError> {
    if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(IsotropicError::InvalidParameters("inverse temperatures must be positive".into()));
    }
    let rho_ref = bose_moment(1.0, 0)?;
    let e_ref = bose_moment(1.0, 1)?;
    let mut curve = CriticalCurve { betas: betas.to_vec(), rho0: Vec::new(), e0: Vec::new() };
    for &b in betas {
        let r = bose_moment(b, 0)?;
        let e = bose_moment(b, 1)?;
        let (r_scaled, e_scaled) = (rho_ref * b.powf(-1.5), e_ref * b.powf(-2.5));
        if (r - r_scaled).abs() > 1e-9 * r_scaled || (e - e_scaled).abs() > 1e-9 * e_scaled {
            return Err(IsotropicError::QuadratureFailure(format!(
                "scaling violated at beta={b}: rho {r} vs {r_scaled}, e {e} vs {e_scaled}"
            )));
        }
        curve.rho0.push(r);
        curve.e0.push(e);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Subcritical,
    Supercritical { condensate: f64 },
}

/// Critical density at energy `energy`: `β` solves `𝖾₀(β) = 𝖾` through the
/// scaling `𝖾₀(β) = β^{−5/2} 𝖾₀(1)`, then `ρ_c = ρ₀(β)`.
pub fn critical_density(energy: f64, curve: &CriticalCurve) -> Result<(f64, f64), IsotropicError> {
    if !(energy > 0.0) || curve.betas.is_empty() {
        return Err(IsotropicError::OutOfRange(format!("energy {energy}")));
    }
    let (b0, r0, e0) = (curve.betas[0], curve.rho0[0], curve.e0[0]);
    let (rho_ref, e_ref) = (r0 * b0.powf(1.5), e0 * b0.powf(2.5));
    // exact sample hit keeps the boundary case on the curve
    if let Some(i) = curve.e0.iter().position(|&e| e == energy) {
        return Ok((curve.betas[i], curve.rho0[i]));
    }
    let beta = (e_ref / energy).powf(0.4);
    Ok((beta, rho_ref * beta.powf(-1.5)))
}

/// Normal fluid or condensate; `ρ = ρ_c` counts as normal.
pub fn classify(rho: f64, energy: f64, curve: &CriticalCurve) -> Result<Phase, IsotropicError> {
    if !(rho > 0.0) {
        return Err(IsotropicError::OutOfRange(format!("density {rho}")));
    }
    let (_, rho_c) = critical_density(energy, curve)?;
    Ok(if rho > rho_c { Phase::Supercritical { condensate: rho - rho_c } } else { Phase::Subcritical })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeta_gamma(s: f64, gamma: f64) -> f64 {
        // partial sum plus Euler-Maclaurin tail
        let n = 20000.0f64;
        let partial: f64 = (1..20000).map(|k| (k as f64).powf(-s)).sum();
        let tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s / 12.0 * n.powf(-s - 1.0);
        gamma * (partial + tail)
    }

    #[test]
    fn critical_moments_match_zeta_series() {
        let c = critical_curve(&[1.0, 4.0]).unwrap();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let rho = zeta_gamma(1.5, 0.5 * sqrt_pi);
        let e = zeta_gamma(2.5, 0.75 * sqrt_pi);
        assert!((c.rho0[0] - rho).abs() < 1e-8, "{} {}", c.rho0[0], rho);
        assert!((c.e0[0] - e).abs() < 1e-8);
        assert!((c.rho0[1] - c.rho0[0] / 8.0).abs() < 1e-10);
    }

    #[test]
    fn classification_examples() {
        let c = critical_curve(&[1.3]).unwrap();
        assert_eq!(classify(c.rho0[0], c.e0[0], &c).unwrap(), Phase::Subcritical);
        match classify(c.rho0[0] + 0.5, c.e0[0], &c).unwrap() {
            Phase::Supercritical { condensate } => assert!((condensate - 0.5).abs() < 1e-12),
            p => panic!("{p:?}"),
        }
        assert!(classify(-1.0, 1.0, &c).is_err());
    }

    #[test]
    fn zero_state_and_equilibrium_are_stationary() {
        let g = EnergyGrid::new(40, 20.0).unwrap();
        let z = EnergyState::new(g.clone(), vec![0.0; 40]).unwrap();
        assert!(isotropic_collision(&z).rate.iter().all(|&c| c == 0.0));
        let be = EnergyState::bose_einstein(g, 1.0, -0.3).unwrap();
        let c = isotropic_collision(&be);
        let scale = be.f.iter().fold(0.0f64, |m, x| m.max(*x));
        assert!(c.rate.iter().all(|x| x.abs() < 1e-12 * scale));
    }

    #[test]
    fn truncated_collisions_conserve_mass_and_energy() {
        let g = EnergyGrid::new(50, 15.0).unwrap();
        let f: Vec<f64> = g.centres().iter().map(|e| 2.0 * (-(e - 3.0).powi(2)).exp() + 0.1).collect();
        let s = EnergyState::new(g.clone(), f).unwrap();
        let c = isotropic_collision(&s);
        let scale = c.rate.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let (dm, de) = conservation_rates(&g, &c.rate);
        assert!(dm.abs() < 1e-12 * scale && de.abs() < 1e-11 * scale, "{dm} {de}");
        assert!(c.dropped_mass > 0.0);
    }

    #[test]
    fn grid_matching_recovers_parameters() {
        let g = EnergyGrid::new(60, 20.0).unwrap();
        let be = EnergyState::bose_einstein(g.clone(), 1.2, -0.4).unwrap();
        let m = be.moments();
        let (b, mu) = match_grid_equilibrium(&g, m.mass, m.energy).unwrap();
        assert!((b - 1.2).abs() < 1e-9 && (mu + 0.4).abs() < 1e-9, "{b} {mu}");
    }
}
