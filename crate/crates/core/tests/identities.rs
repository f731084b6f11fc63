mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use wfpc_core::dgp::{assemble_panel, FactorDesign, LoadingMode, REFERENCE_DESIGNS};
use wfpc_core::rotation::{align_to_reference, data_rotations};
use wfpc_core::pc_fit;

#[test]
fn rotation_identities_hold_on_reference_panels() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for case in 0..40 {
        let n = 2 * rng.random_range(10..60);
        let t = rng.random_range(20..120);
        let design = REFERENCE_DESIGNS[case % 6];
        let mode = if case % 2 == 0 { LoadingMode::NonSparse } else { LoadingMode::Sparse };
        let d = FactorDesign::reference(n, t, design, mode, 0);
        let p = assemble_panel(&d, &mut rng).unwrap();
        let pc = align_to_reference(&pc_fit(&p.x, 2).unwrap(), &p.f0).unwrap();
        let rot = data_rotations(&p.f_star, &p.b_star, &p.f0, &p.b0, &pc).unwrap();
        for (k, g) in common::rotation_identity_gaps(&p, &pc, &rot).iter().enumerate() {
            assert!(*g < 1e-9, "case {case} identity {}: {g:e}", k + 1);
        }
    }
}

#[test]
fn structural_rotations_match_tilde_forms() {
    // F*H_hat4 = F0 H_tilde4, B*Q_hat' = B0 Q_tilde', F*H_hat = F0 H_tilde.
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for _ in 0..20 {
        let d = FactorDesign::reference(60, 50, (0.9, 0.7), LoadingMode::NonSparse, 0);
        let p = assemble_panel(&d, &mut rng).unwrap();
        let pc = pc_fit(&p.x, 2).unwrap();
        let rot = data_rotations(&p.f_star, &p.b_star, &p.f0, &p.b0, &pc).unwrap();
        assert!((&p.f_star * &rot.h_hat4 - &p.f0 * &rot.h_tilde4).amax() < 1e-10);
        assert!((&p.b_star * rot.q_hat.transpose() - &p.b0 * rot.q_tilde.transpose()).amax() < 1e-10);
        assert!((&p.f_star * &rot.h_hat - &p.f0 * &rot.h_tilde).amax() < 1e-10);
    }
}
