use kinetic::isotropic::*;
use proptest::prelude::*;

fn gaussian(grid: &EnergyGrid, amplitude: f64, centre: f64) -> EnergyState {
    let f = grid.centres().iter().map(|e| amplitude * (-(e - centre).powi(2) / 2.0).exp()).collect();
    EnergyState::new(grid.clone(), f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn mass_conserved_and_entropy_rises(amplitude in 0.2f64..4.0, centre in 0.5f64..4.0) {
        let grid = EnergyGrid::new(30, 12.0).unwrap();
        let s = gaussian(&grid, amplitude, centre);
        let opts = IsotropicRunOptions { horizon: 1.0, dt: 0.05, max_relative_change: 0.05, record_every: 0.0, window: 0.4 };
        let traj = evolve_isotropic(&s, &opts).unwrap();
        let m0 = traj.moments[0].mass;
        for w in traj.moments.windows(2) {
            prop_assert!((w[1].mass - m0).abs() <= 1e-10 * m0.max(1.0));
            prop_assert!(w[1].entropy >= w[0].entropy - 1e-10);
        }
        prop_assert!(traj.last().f.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn bose_einstein_samples_are_stationary(beta in 0.3f64..3.0, gap in 0.01f64..1.0) {
        let grid = EnergyGrid::new(24, 10.0).unwrap();
        let s = EnergyState::bose_einstein(grid.clone(), beta, grid.centres()[0] - gap).unwrap();
        let c = isotropic_collision(&s);
        let scale = s.f.iter().fold(0.0f64, |a, x| a.max(*x));
        prop_assert!(c.rate.iter().all(|r| r.abs() <= 1e-11 * scale * scale * scale.max(1.0)));
    }
}

#[test]
fn critical_moments_scale() {
    let betas = [0.25, 0.5, 1.0, 2.0, 4.0];
    let curve = critical_curve(&betas).unwrap();
    for i in 0..betas.len() {
        let r = curve.rho0[i] * betas[i].powf(1.5);
        let e = curve.e0[i] * betas[i].powf(2.5);
        assert!((r - curve.rho0[2]).abs() <= 1e-8 * r);
        assert!((e - curve.e0[2]).abs() <= 1e-8 * e);
    }
}

#[test]
fn closed_set_conserves_energy_up_to_dropped_flux() {
    let grid = EnergyGrid::new(40, 10.0).unwrap();
    let s = gaussian(&grid, 2.0, 3.0);
    let c = isotropic_collision(&s);
    let (mass, energy) = conservation_rates(&grid, &c.rate);
    let scale = c.rate.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    assert!(mass.abs() <= 1e-12 * scale);
    assert!(energy.abs() <= 1e-12 * scale * grid.cutoff());
}
