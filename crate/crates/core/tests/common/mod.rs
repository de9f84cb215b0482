//! Helpers shared by the integration tests: random complex matrices and
//! nalgebra conversions for the independent oracles.
#![allow(dead_code)]

use compsim::linalg::CMat;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type NMat = DMatrix<Complex64>;

pub fn cn(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_cmat(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn(rng))
}

/// `σ²·I + A·Aᴴ` with `A` of `k` random columns.
pub fn random_covariance(n: usize, noise: f64, k: usize, scale: f64, rng: &mut impl Rng) -> CMat {
    let mut r = CMat::scaled_identity(n, noise);
    if k > 0 {
        let a = random_cmat(n, k, rng).scale(scale.sqrt());
        a.accumulate_gram_outer(1.0, &mut r);
    }
    r
}

pub fn to_na(m: &CMat) -> NMat {
    NMat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// `g_kᴴ · (R + Σ_{j≠k} g_j g_jᴴ)⁻¹ · g_k` per column, by explicit inversion.
pub fn sinr_by_inversion(g: &NMat, r: &NMat) -> Vec<f64> {
    (0..g.ncols())
        .map(|k| {
            let mut rk = r.clone();
            for j in (0..g.ncols()).filter(|&j| j != k) {
                let gj = g.column(j);
                rk += gj * gj.adjoint();
            }
            let inv = rk.try_inverse().expect("invertible covariance");
            let gk = g.column(k);
            (gk.adjoint() * inv * gk)[(0, 0)].re
        })
        .collect()
}

pub fn se_of(sinrs: &[f64], cap: f64) -> f64 {
    sinrs.iter().map(|s| (1.0 + s.max(0.0)).log2().min(cap)).sum()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
