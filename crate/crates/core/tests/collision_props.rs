use kinetic::collision::*;
use kinetic::lattice::{DispersionField, HoppingModel, MomentumGrid, Site};
use kinetic::state::*;
use proptest::prelude::*;

fn disp(side: usize) -> DispersionField {
    let pot = HoppingModel::axis_potential(2, 1.0, &[0.4, 0.25]);
    HoppingModel::nearest_neighbor(2, 0.6, pot).unwrap().dispersion(&MomentumGrid::new(2, side).unwrap()).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn number_is_conserved_by_every_variant(seed in any::<u64>(), fermion in any::<bool>()) {
        let d = disp(4);
        let stats = if fermion { Statistics::Fermion } else { Statistics::Boson };
        let table = CollisionTable::build(&d, stats, 1e-2).unwrap();
        let f = random_field(d.grid(), stats, &RandomFieldSpec::for_statistics(stats, seed)).unwrap();
        let mut rates = vec![evaluate_bn(&table, &f).unwrap()];
        if !fermion {
            rates.push(evaluate_nls(&table, &f).unwrap());
            rates.push(evaluate_cl(&table, &f).unwrap());
            rates.push(evaluate_exchange(&table, &f).unwrap());
        }
        for r in rates {
            let (n, _) = conservation_residuals(&d, &r);
            prop_assert!(n <= 1e-12 * max_abs(&r).max(1e-300), "number residual {n} vs scale {}", max_abs(&r));
        }
    }

    #[test]
    fn energy_residual_is_linear_in_width(seed in any::<u64>()) {
        let d = disp(4);
        let stats = Statistics::Boson;
        let f = random_field(d.grid(), stats, &RandomFieldSpec::for_statistics(stats, seed)).unwrap();
        let e = |eps: f64| {
            let t = CollisionTable::build(&d, stats, eps).unwrap();
            conservation_residuals(&d, &evaluate_bn(&t, &f).unwrap()).1
        };
        let ratio = e(5e-4) / e(1e-3);
        prop_assert!((0.35..=0.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn product_correlation_reproduces_the_operator(seed in any::<u64>(), fermion in any::<bool>()) {
        let d = disp(4);
        let stats = if fermion { Statistics::Fermion } else { Statistics::Boson };
        let table = CollisionTable::build(&d, stats, 1e-2).unwrap();
        let f = random_field(d.grid(), stats, &RandomFieldSpec::for_statistics(stats, seed)).unwrap();
        let bn = evaluate_bn(&table, &f).unwrap();
        let out = correlation_collision(&table, &ProductCorrelation::new(&f, 3), 0).unwrap();
        let plus = out.plus_component();
        let scale = max_abs(&bn);
        for (a, b) in plus.iter().zip(&bn) {
            prop_assert!((a.re - b).abs() <= 1e-12 * scale && a.im.abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn detailed_balance_defect_is_linear_in_width() {
    let d = disp(4);
    for (stats, mu) in [(Statistics::Boson, d.min_omega() - 0.3), (Statistics::Fermion, d.min_omega() + 1.0)] {
        let w = equilibrium_field(&d, InverseTemperature::Finite(0.8), mu, stats).unwrap();
        let defect = |eps: f64| max_abs(&evaluate_bn(&CollisionTable::build(&d, stats, eps).unwrap(), &w).unwrap());
        let ratio = defect(5e-4) / defect(1e-3);
        assert!((0.35..=0.7).contains(&ratio), "{stats:?}: ratio {ratio}");
    }
}

#[test]
fn constant_potential_freezes_fermions() {
    let grid = MomentumGrid::new(2, 4).unwrap();
    let model = HoppingModel::nearest_neighbor(2, 0.6, vec![Site::new(vec![0, 0], 2.5)]).unwrap();
    let d = model.dispersion(&grid).unwrap();
    let table = CollisionTable::build(&d, Statistics::Fermion, 1e-2).unwrap();
    let f = random_field(&grid, Statistics::Fermion, &RandomFieldSpec::for_statistics(Statistics::Fermion, 9)).unwrap();
    assert_eq!(max_abs(&evaluate_bn(&table, &f).unwrap()), 0.0);
}

#[test]
fn mismatched_statistics_are_rejected() {
    let d = disp(4);
    let table = CollisionTable::build(&d, Statistics::Boson, 1e-2).unwrap();
    let f = random_field(d.grid(), Statistics::Fermion, &RandomFieldSpec::for_statistics(Statistics::Fermion, 1)).unwrap();
    assert!(matches!(evaluate_bn(&table, &f), Err(CollisionError::StatisticsMismatch { .. })));
    assert!(matches!(CollisionTable::build(&d, Statistics::Boson, 0.0), Err(CollisionError::InvalidEpsilon(_))));
}
