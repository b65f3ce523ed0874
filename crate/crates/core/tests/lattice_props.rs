use kinetic::lattice::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn nn(dim: usize, alpha1: f64, side: usize) -> DispersionField {
    let model = HoppingModel::nearest_neighbor(dim, alpha1, HoppingModel::contact_potential(dim, 1.0)).unwrap();
    model.dispersion(&MomentumGrid::new(dim, side).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn omega_even_gradient_odd(alpha1 in -2.0f64..2.0, dim in 1usize..4, half in 1usize..5) {
        let disp = nn(dim, alpha1, 2 * half);
        let g = disp.grid();
        for k in 0..g.len() {
            let m = g.neg(k);
            prop_assert!((disp.omega()[k] - disp.omega()[m]).abs() <= 1e-12 * (1.0 + disp.omega()[k].abs()));
            for (a, b) in disp.gradient(k).iter().zip(disp.gradient(m)) {
                prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn flat_band_propagator_is_a_phase(c in -3.0f64..3.0, t in -20.0f64..20.0) {
        let model = HoppingModel::new(2, vec![Site::new(vec![0, 0], c)], HoppingModel::contact_potential(2, 1.0)).unwrap();
        let disp = model.dispersion(&MomentumGrid::new(2, 6).unwrap()).unwrap();
        let p = free_propagator(&disp, t, &[0, 0]);
        let exact = Complex64::from_polar(1.0, -c * t);
        prop_assert!((p - exact).norm() <= 1e-12);
    }

    #[test]
    fn interference_at_origin_is_one(alpha1 in 0.1f64..2.0, t in 0.0f64..100.0) {
        let disp = nn(3, alpha1, 6);
        let z = interference_integral(&disp, t, 0, -1);
        prop_assert!((z - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn crossing_kernel_reduces_to_propagator(t0 in -5.0f64..5.0, t1 in -5.0f64..5.0, t2 in -5.0f64..5.0, x0 in -3i64..3, x1 in -3i64..3) {
        let disp = nn(2, 0.7, 8);
        let p = free_propagator(&disp, t0 + t1 + t2, &[x0, x1]);
        let c = crossing_kernel(&disp, &[x0, x1], t0, t1, t2, 0, 0);
        prop_assert!((p - c).norm() <= 1e-12);
    }
}

#[test]
fn l3_scan_ignores_a_constant_shift() {
    let times = [5.0, 10.0, 20.0];
    let opts = L3ScanOptions { window: 64, tail_fraction: 1e-6 };
    let pot = HoppingModel::contact_potential(3, 1.0);
    let a = HoppingModel::nearest_neighbor_with_onsite(3, 7.0, 0.5, pot.clone()).unwrap();
    let b = HoppingModel::nearest_neighbor_with_onsite(3, -2.5, 0.5, pot).unwrap();
    let sa = l3_dispersivity_scan(&a, &times, &opts).unwrap();
    let sb = l3_dispersivity_scan(&b, &times, &opts).unwrap();
    for (x, y) in sa.sums.iter().zip(&sb.sums) {
        assert!((x - y).abs() <= 1e-10 * x.abs(), "{x} vs {y}");
    }
}

#[test]
fn grid_rejects_odd_sides_and_mismatched_offsets() {
    assert!(matches!(MomentumGrid::new(2, 5), Err(LatticeError::OddOrTinySide(5))));
    assert!(matches!(MomentumGrid::new(0, 4), Err(LatticeError::ZeroDimension)));
    let bad = HoppingModel::new(2, vec![Site::new(vec![1, 0], 1.0)], vec![]);
    assert!(matches!(bad, Err(LatticeError::AsymmetricHopping(_))));
}
