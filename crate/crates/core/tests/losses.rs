mod common;

use common::oracles::loss_checks;
use depth_halluc::losses::*;
use depth_halluc::Tensor;
use proptest::prelude::*;

const ORACLE_TOL: f64 = 1e-6;

fn grid(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(1, 2, 2, v.to_vec()).unwrap()
}

#[test]
fn scripted_grids_match_brute_force() {
    for c in loss_checks() {
        assert!(c.err() <= ORACLE_TOL, "{}: {} vs {}", c.name, c.got, c.want);
    }
}

#[test]
fn optima_are_zero() {
    let ones = grid(&[1.0; 4]);
    let zeros = grid(&[0.0; 4]);
    let x = grid(&[0.3, -0.2, 0.8, 0.1]);
    assert_eq!(gen_adv_loss(&ones), 0.0);
    assert_eq!(disc_loss(&ones, &zeros).unwrap(), 0.0);
    assert_eq!(pixel_loss(&x, &x).unwrap(), 0.0);
    assert_eq!(cycle_loss(&x, &x).unwrap(), 0.0);
}

#[test]
fn negative_weights_are_rejected() {
    let w = LossWeights {
        lambda_pixel: -1.0,
        lambda_cyc: 5.0,
    };
    let x = grid(&[0.0; 4]);
    assert!(teacher_total(&x, &x, &x, &w).is_err());
    assert!(student_total(&x, &x, &x, &x, &w).is_err());
}

fn four() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 4)
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let h = 1e-4;
    let mut p = x.to_vec();
    p[i] += h;
    let mut m = x.to_vec();
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()).max(1e-6)
}

proptest! {
    #[test]
    fn losses_are_nonnegative(a in four(), b in four()) {
        prop_assert!(gen_adv_loss(&grid(&a)) >= 0.0);
        prop_assert!(disc_loss(&grid(&a), &grid(&b)).unwrap() >= 0.0);
        prop_assert!(pixel_loss(&grid(&a), &grid(&b)).unwrap() >= 0.0);
        prop_assert!(cycle_loss(&grid(&a), &grid(&b)).unwrap() >= 0.0);
    }

    #[test]
    fn patch_means_ignore_cell_order(a in four(), b in four(), rot in 0usize..4) {
        let perm = |v: &[f64]| {
            let mut p = v.to_vec();
            p.rotate_left(rot);
            p.swap(0, 3);
            p
        };
        let base = disc_loss(&grid(&a), &grid(&b)).unwrap();
        let moved = disc_loss(&grid(&perm(&a)), &grid(&perm(&b))).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
        let base = pixel_loss(&grid(&a), &grid(&b)).unwrap();
        let moved = pixel_loss(&grid(&perm(&a)), &grid(&perm(&b))).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn input_gradients_match_finite_differences(a in four(), b in four()) {
        let (_, g) = gen_adv_loss_with_grad(&grid(&a));
        for i in 0..4 {
            let fd = central(|x| gen_adv_loss(&grid(x)), &a, i);
            prop_assert!(close(g.data()[i], fd), "adv {i}: {} vs {fd}", g.data()[i]);
        }
        let (_, gr, gf) = disc_loss_with_grad(&grid(&a), &grid(&b)).unwrap();
        for i in 0..4 {
            let fd = central(|x| disc_loss(&grid(x), &grid(&b)).unwrap(), &a, i);
            prop_assert!(close(gr.data()[i], fd));
            let fd = central(|x| disc_loss(&grid(&a), &grid(x)).unwrap(), &b, i);
            prop_assert!(close(gf.data()[i], fd));
        }
        let (_, gp) = l1_with_grad(&grid(&a), &grid(&b)).unwrap();
        for i in 0..4 {
            // the stencil must not straddle the kink at a == b
            if (a[i] - b[i]).abs() > 1e-3 {
                let fd = central(|x| pixel_loss(&grid(&a), &grid(x)).unwrap(), &b, i);
                prop_assert!(close(gp.data()[i], fd));
            }
        }
    }

    #[test]
    fn totals_are_affine_in_their_weight(a in four(), b in four(), c in four()) {
        let at = |lambda: f64| {
            let w = LossWeights { lambda_pixel: lambda, lambda_cyc: lambda };
            (
                teacher_total(&grid(&a), &grid(&b), &grid(&c), &w).unwrap(),
                student_total(&grid(&a), &grid(&b), &grid(&b), &grid(&c), &w).unwrap(),
            )
        };
        let (t0, s0) = at(0.0);
        let (t1, s1) = at(1.0);
        let (t7, s7) = at(7.5);
        prop_assert!((t7 - (t0 + 7.5 * (t1 - t0))).abs() < 1e-9);
        prop_assert!((s7 - (s0 + 7.5 * (s1 - s0))).abs() < 1e-9);
    }
}
