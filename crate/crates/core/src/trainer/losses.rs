//! Loss terms as pure functions of network outputs. Every reduction is a mean
//! over its own sample set; weights are applied by the caller.

pub type Jacobian = [[f64; 2]; 2];

/// Eigenvalues of `J^T J` below this are raised to it before inversion.
pub const RIGID_EIGEN_FLOOR: f64 = 1e-6;
/// Clamp for the logarithms of the mask cross-entropy.
pub const LOG_CLAMP: f64 = 1e-6;

/// Mean over samples of the squared RGB error.
pub fn recon_loss(recon: &[[f64; 3]], colors: &[[f64; 3]]) -> f64 {
    if recon.is_empty() {
        return 0.0;
    }
    let s: f64 = recon
        .iter()
        .zip(colors)
        .map(|(r, c)| (0..3).map(|k| (r[k] - c[k]).powi(2)).sum::<f64>())
        .sum();
    s / recon.len() as f64
}

/// Gradient of [`recon_loss`] with respect to each reconstructed color.
pub fn recon_grad(recon: &[[f64; 3]], colors: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = recon.len().max(1) as f64;
    recon
        .iter()
        .zip(colors)
        .map(|(r, c)| std::array::from_fn(|k| 2.0 * (r[k] - c[k]) / n))
        .collect()
}

fn gram(j: &Jacobian) -> [f64; 3] {
    // symmetric (a, b; b, c)
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let c = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    [a, b, c]
}

/// Eigen-decomposition of a symmetric 2x2 matrix: eigenvalues ascending and
/// the unit eigenvector of the first.
fn sym_eigen(a: f64, b: f64, c: f64) -> ([f64; 2], [f64; 2]) {
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let l0 = mean - r;
    let l1 = mean + r;
    let v = if b.abs() > 1e-300 {
        let (x, y) = (b, l0 - a);
        let n = (x * x + y * y).sqrt();
        [x / n, y / n]
    } else if a <= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([l0, l1], v)
}

/// `|J^T J|_F + |(J^T J)^-1|_F` for one point, inverse taken with the
/// eigenvalues of `J^T J` floored at [`RIGID_EIGEN_FLOOR`].
pub fn rigidity_point(j: &Jacobian) -> f64 {
    rigidity_point_grad(j).0
}

/// Value of [`rigidity_point`] and its gradient with respect to `J`.
pub fn rigidity_point_grad(j: &Jacobian) -> (f64, Jacobian) {
    let [a, b, c] = gram(j);
    let fro = (a * a + 2.0 * b * b + c * c).sqrt();
    let (lam, v0) = sym_eigen(a, b, c);
    let v1 = [-v0[1], v0[0]];
    let fl = lam.map(|l| l.max(RIGID_EIGEN_FLOOR));
    let inv = (fl[0].powi(-2) + fl[1].powi(-2)).sqrt();
    // dL/dG as a symmetric matrix S = (sa, sb; sb, sc)
    let (mut sa, mut sb, mut sc) = if fro > 0.0 {
        (a / fro, b / fro, c / fro)
    } else {
        (0.0, 0.0, 0.0)
    };
    for (k, v) in [v0, v1].iter().enumerate() {
        if lam[k] > RIGID_EIGEN_FLOOR {
            let d = -fl[k].powi(-3) / inv;
            sa += d * v[0] * v[0];
            sb += d * v[0] * v[1];
            sc += d * v[1] * v[1];
        }
    }
    // G = J^T J  =>  dL/dJ = 2 J S
    let g = [
        [2.0 * (j[0][0] * sa + j[0][1] * sb), 2.0 * (j[0][0] * sb + j[0][1] * sc)],
        [2.0 * (j[1][0] * sa + j[1][1] * sb), 2.0 * (j[1][0] * sb + j[1][1] * sc)],
    ];
    (fro + inv, g)
}

/// Mean of [`rigidity_point`] over a batch (unweighted).
pub fn rigidity_mean(js: &[Jacobian]) -> f64 {
    if js.is_empty() {
        return 0.0;
    }
    js.iter().map(rigidity_point).sum::<f64>() / js.len() as f64
}

/// Mean Euclidean distance between `uv` and the anchor positions.
pub fn pos_mean(uv: &[[f64; 2]], xy: &[[f64; 2]]) -> f64 {
    if uv.is_empty() {
        return 0.0;
    }
    uv.iter()
        .zip(xy)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum::<f64>()
        / uv.len() as f64
}

/// Mean over pairs of `m * |uv_a - uv_b|`.
pub fn corr_mean(m: &[f64], uv_a: &[[f64; 2]], uv_b: &[[f64; 2]]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let s: f64 = (0..m.len())
        .map(|i| m[i] * ((uv_a[i][0] - uv_b[i][0]).powi(2) + (uv_a[i][1] - uv_b[i][1]).powi(2)).sqrt())
        .sum();
    s / m.len() as f64
}

/// `-(mean log M over inside + mean log(1-M) over outside)`, logs clamped.
/// An empty slice contributes nothing.
pub fn bce_pair(inside: &[f64], outside: &[f64]) -> f64 {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|&m| f(m)).sum::<f64>() / v.len() as f64
        }
    };
    -(mean(inside, &|m| m.max(LOG_CLAMP).ln()) + mean(outside, &|m| (1.0 - m).max(LOG_CLAMP).ln()))
}

/// Mean absolute difference between paired mask values.
pub fn propagation_mean(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean over samples of `|L - 1|^2`.
pub fn illum_mean(l: &[[f64; 3]]) -> f64 {
    if l.is_empty() {
        return 0.0;
    }
    l.iter()
        .map(|v| v.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>())
        .sum::<f64>()
        / l.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{LN_2, SQRT_2};

    const I: Jacobian = [[1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn recon_examples() {
        assert_eq!(recon_loss(&[[0.2, 0.3, 0.4]], &[[0.2, 0.3, 0.4]]), 0.0);
        let r = recon_loss(&[[0.6; 3], [0.2; 3]], &[[0.5; 3], [0.1; 3]]);
        assert!((r - 0.03).abs() < 1e-12);
        assert!((recon_loss(&[[0.1, 0.0, 0.0]], &[[0.0; 3]]) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rigidity_examples() {
        assert!((rigidity_point(&I) - 2.0 * SQRT_2).abs() < 1e-12);
        let two = [[2.0, 0.0], [0.0, 2.0]];
        assert!((rigidity_point(&two) - (4.0 * SQRT_2 + SQRT_2 / 4.0)).abs() < 1e-12);
        let zero = rigidity_point(&[[0.0; 2]; 2]);
        assert!((zero - SQRT_2 / RIGID_EIGEN_FLOOR).abs() < 1e-3);
        // rotations are rigid
        let (s, c) = 0.7f64.sin_cos();
        assert!((rigidity_point(&[[c, -s], [s, c]]) - 2.0 * SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn rigidity_gradient_matches_finite_differences() {
        for j in [[[1.3, 0.2], [-0.4, 0.8]], [[0.5, 0.0], [0.0, 2.0]], [[0.9, 0.9], [0.1, 1.2]]] {
            let (_, g) = rigidity_point_grad(&j);
            for r in 0..2 {
                for c in 0..2 {
                    let h = 1e-6;
                    let mut jp = j;
                    let mut jm = j;
                    jp[r][c] += h;
                    jm[r][c] -= h;
                    let fd = (rigidity_point(&jp) - rigidity_point(&jm)) / (2.0 * h);
                    assert!((fd - g[r][c]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[r][c]);
                }
            }
        }
        // identity is the minimum
        let (_, g) = rigidity_point_grad(&I);
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pos_and_corr_examples() {
        assert_eq!(pos_mean(&[[0.1, 0.2]], &[[0.1, 0.2]]), 0.0);
        assert!((pos_mean(&[[0.2, 0.2]], &[[0.1, 0.2]]) - 0.1).abs() < 1e-15);
        assert_eq!(pos_mean(&[], &[]), 0.0);
        assert!((corr_mean(&[1.0], &[[0.2, 0.0]], &[[0.0, 0.0]]) - 0.2).abs() < 1e-15);
        assert_eq!(corr_mean(&[0.0, 0.0], &[[0.5, 0.1], [0.0, 0.9]], &[[0.0; 2], [0.3, 0.3]]), 0.0);
        assert_eq!(corr_mean(&[0.8], &[[0.4, 0.4]], &[[0.4, 0.4]]), 0.0);
    }

    #[test]
    fn mask_examples() {
        assert!(bce_pair(&[1.0, 1.0], &[0.0]).abs() < 1e-5);
        assert!((bce_pair(&[0.5; 4], &[0.5; 7]) - 2.0 * LN_2).abs() < 1e-12);
        assert_eq!(propagation_mean(&[1.0], &[0.0]), 1.0);
        assert_eq!(propagation_mean(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        // clamping keeps the term finite
        assert!((bce_pair(&[0.0], &[]) + LOG_CLAMP.ln()).abs() < 1e-12);
    }

    #[test]
    fn illum_examples() {
        assert_eq!(illum_mean(&[[1.0; 3]]), 0.0);
        assert!((illum_mean(&[[1.1, 1.0, 1.0]; 5]) - 0.01).abs() < 1e-12);
        assert!((illum_mean(&[[LN_2; 3]]) - 3.0 * (1.0 - LN_2).powi(2)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn terms_are_non_negative(
            j in prop::array::uniform4(-3.0f64..3.0),
            m in prop::collection::vec(0.0f64..=1.0, 1..8),
            l in prop::collection::vec(prop::array::uniform3(0.0f64..3.0), 1..8),
        ) {
            prop_assert!(rigidity_point(&[[j[0], j[1]], [j[2], j[3]]]) >= 0.0);
            prop_assert!(bce_pair(&m, &m) >= 0.0);
            prop_assert!(propagation_mean(&m, &m.iter().rev().copied().collect::<Vec<_>>()) >= 0.0);
            prop_assert!(illum_mean(&l) >= 0.0);
        }

        #[test]
        fn rigidity_is_rotation_invariant(j in prop::array::uniform4(-2.0f64..2.0), th in -3.0f64..3.0) {
            let j = [[j[0], j[1]], [j[2], j[3]]];
            let (s, c) = th.sin_cos();
            let rj = [
                [c * j[0][0] - s * j[1][0], c * j[0][1] - s * j[1][1]],
                [s * j[0][0] + c * j[1][0], s * j[0][1] + c * j[1][1]],
            ];
            let a = rigidity_point(&j);
            let b = rigidity_point(&rj);
            prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        }
    }
}
