//! Scripted fixtures paired with values computed independently of the library.

use depth_halluc::losses::*;
use depth_halluc::metrics::*;
use depth_halluc::Tensor;

/// One library value next to its independent expectation.
#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
}

impl Check {
    pub fn err(&self) -> f64 {
        (self.got - self.want).abs()
    }
}

fn grid(v: [f64; 4]) -> Tensor<f64> {
    Tensor::from_vec(1, 2, 2, v.to_vec()).unwrap()
}

/// `1/2 * mean((s - 1)^2)`, one term per cell.
fn brute_adv(s: [f64; 4]) -> f64 {
    let mut acc = 0.0;
    for v in s {
        acc += 0.5 * (v - 1.0) * (v - 1.0);
    }
    acc / 4.0
}

fn brute_disc(real: [f64; 4], fake: [f64; 4]) -> f64 {
    let mut r = 0.0;
    let mut f = 0.0;
    for i in 0..4 {
        r += 0.5 * (real[i] - 1.0) * (real[i] - 1.0);
        f += 0.5 * fake[i] * fake[i];
    }
    r / 4.0 + f / 4.0
}

fn brute_mae(a: [f64; 4], b: [f64; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        acc += if a[i] > b[i] { a[i] - b[i] } else { b[i] - a[i] };
    }
    acc / 4.0
}

/// Each of the eight objectives on scripted 2x2 patch or pixel grids.
pub fn loss_checks() -> Vec<Check> {
    let w = LossWeights::default();
    let s_depth = [0.2, 1.5, -0.3, 0.9];
    let s_rgb = [0.7, 0.1, 1.1, -0.4];
    let real_depth = [0.9, 0.4, 1.2, 0.0];
    let real_rgb = [1.0, 0.8, -0.1, 0.6];
    let fake_rgb_scores = [0.3, 0.0, 0.5, -0.6];
    let gt = [0.1, -0.5, 0.75, 1.0];
    let pred = [0.3, -0.5, 0.25, -1.0];
    let orig = [0.0, 1.0, -1.0, 0.0];
    let rec = [0.0, 0.0, 0.0, 0.0];
    let rec_soft = [0.2, 0.6, -0.7, 0.1];

    let adv = brute_adv(s_depth);
    let pixel = brute_mae(gt, pred);
    let cyc = brute_mae(orig, rec_soft);
    vec![
        Check {
            name: "adversarial loss of G_A2B",
            got: gen_adv_loss(&grid(s_depth)),
            want: adv,
        },
        Check {
            name: "adversarial loss of G_A2B (hand value)",
            got: gen_adv_loss(&grid(s_depth)),
            want: 0.32375,
        },
        Check {
            name: "D_depth loss",
            got: disc_loss(&grid(real_depth), &grid(s_depth)).unwrap(),
            want: brute_disc(real_depth, s_depth),
        },
        Check {
            name: "pixel loss",
            got: pixel_loss(&grid(gt), &grid(pred)).unwrap(),
            want: pixel,
        },
        Check {
            name: "adversarial loss of G_B2A",
            got: gen_adv_loss(&grid(s_rgb)),
            want: brute_adv(s_rgb),
        },
        Check {
            name: "D_RGB loss",
            got: disc_loss(&grid(real_rgb), &grid(fake_rgb_scores)).unwrap(),
            want: brute_disc(real_rgb, fake_rgb_scores),
        },
        Check {
            name: "cycle loss",
            got: cycle_loss(&grid(orig), &grid(rec)).unwrap(),
            want: 0.5,
        },
        Check {
            name: "cycle loss (soft reconstruction)",
            got: cycle_loss(&grid(orig), &grid(rec_soft)).unwrap(),
            want: cyc,
        },
        Check {
            name: "teacher total",
            got: teacher_total(&grid(s_depth), &grid(gt), &grid(pred), &w).unwrap(),
            want: adv + 10.0 * pixel,
        },
        Check {
            name: "student total",
            got: student_total(&grid(s_depth), &grid(s_rgb), &grid(orig), &grid(rec_soft), &w)
                .unwrap(),
            want: adv + brute_adv(s_rgb) + 5.0 * cyc,
        },
    ]
}

/// Pixel metrics on 4-pixel fixtures with values worked out by hand.
pub fn metric_checks() -> Vec<Check> {
    // differences 0.06, 0, -0.1, 0.1; ratios 1.3, 1, 1.2, 1.125
    let gt = [0.2, 0.4, 0.6, 0.8];
    let pred = [0.26, 0.4, 0.5, 0.9];
    // ratios 1, 1.4, 1.8, 5/3
    let flat = [0.5, 0.5, 0.5, 0.5];
    let spread = [0.5, 0.7, 0.9, 0.3];
    vec![
        Check {
            name: "abs_diff",
            got: abs_diff(&gt, &pred).unwrap(),
            want: 0.26 / 4.0,
        },
        Check {
            name: "abs_rel",
            got: abs_rel(&gt, &pred).unwrap(),
            want: (0.3 + 0.0 + 0.1 / 0.6 + 0.125) / 4.0,
        },
        Check {
            name: "l1_norm",
            got: l1_norm(&gt, &pred).unwrap(),
            want: 0.26 / 2.0,
        },
        Check {
            name: "l2_norm",
            got: l2_norm(&gt, &pred).unwrap(),
            want: 0.0236f64.sqrt(),
        },
        Check {
            name: "rmse",
            got: rmse(&gt, &pred).unwrap(),
            want: 0.0059f64.sqrt(),
        },
        Check {
            name: "delta 1.25",
            got: threshold_accuracy(&gt, &pred, 1).unwrap(),
            want: 75.0,
        },
        Check {
            name: "delta 1.25^2",
            got: threshold_accuracy(&gt, &pred, 2).unwrap(),
            want: 100.0,
        },
        Check {
            name: "delta 1.25 (spread)",
            got: threshold_accuracy(&flat, &spread, 1).unwrap(),
            want: 25.0,
        },
        Check {
            name: "delta 1.25^2 (spread)",
            got: threshold_accuracy(&flat, &spread, 2).unwrap(),
            want: 50.0,
        },
        Check {
            name: "delta 1.25^3 (spread)",
            got: threshold_accuracy(&flat, &spread, 3).unwrap(),
            want: 100.0,
        },
        Check {
            name: "identical images",
            got: rmse(&gt, &gt).unwrap() + abs_diff(&gt, &gt).unwrap(),
            want: 0.0,
        },
    ]
}

/// 1-D sets {-1, 1} and {0, 2}: equal variances, means one apart.
pub fn frechet_checks() -> Vec<Check> {
    let a = vec![vec![-1.0], vec![1.0]];
    let b = vec![vec![0.0], vec![2.0]];
    let x: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect())
        .collect();
    vec![
        Check {
            name: "frechet 1-D closed form",
            got: frechet_distance(&a, &b).unwrap(),
            want: 1.0,
        },
        Check {
            name: "frechet of a set with itself",
            got: frechet_distance(&x, &x).unwrap(),
            want: 0.0,
        },
    ]
}
