#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use wfpc_core::dgp::Panel;
use wfpc_core::rotation::RotationSet;
use wfpc_core::PcFit;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

/// Largest entrywise gap of each of the six rotation identities relating
/// the tilde rotations through the idiosyncratic errors.
pub fn rotation_identity_gaps(p: &Panel, pc: &PcFit, rot: &RotationSet) -> [f64; 6] {
    let t = pc.t() as f64;
    let e = &p.e;
    let f_hat = &pc.f_hat;
    let b_hat = &pc.b_hat;
    let lam_inv = DMatrix::from_diagonal(&pc.lambda_hat.map(|l| 1.0 / l));
    let b0tb0 = p.b0.transpose() * &p.b0;
    let q_inv = inv(&(f_hat.transpose() * &p.f0 / t));
    let bhat_b0_inv = inv(&(b_hat.transpose() * &p.b0));
    let gap = |lhs: DMatrix<f64>, rhs: DMatrix<f64>| (lhs - rhs).amax();
    [
        gap(&rot.h_tilde4 - &rot.h_tilde, p.b0.transpose() * e.transpose() * f_hat * &lam_inv / t),
        gap(&rot.h_tilde2 - &rot.h_tilde4, p.f0.transpose() * e * b_hat * &lam_inv / t),
        gap(&rot.h_tilde3 - &rot.h_tilde1, &q_inv * f_hat.transpose() * e * &p.b0 * &bhat_b0_inv / t),
        gap(&rot.h_tilde3 - &rot.h_tilde4, &q_inv * f_hat.transpose() * e * b_hat * &lam_inv / t),
        gap(inv(&rot.h_tilde1.transpose()) - &rot.h_tilde2, inv(&b0tb0) * p.b0.transpose() * e.transpose() * f_hat / t),
        gap(inv(&rot.h_tilde4.transpose()) - &rot.h_tilde2, &bhat_b0_inv * b_hat.transpose() * e.transpose() * f_hat / t),
    ]
}
