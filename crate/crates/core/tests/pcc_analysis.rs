mod common;

use common::{exact_mixture, matrix, rng};
use ndarray::{array, Array1, Array2};
use pccnmf::nmf::{factorize, SolverOptions};
use pccnmf::pcc_analysis::*;
use pccnmf::{derive_pcc, Error, Factorization, Loss};
use proptest::prelude::*;

fn covariance_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

proptest! {
    #[test]
    fn pearson_agrees_with_covariance_formula(
        pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..100)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let r = pearson(Array1::from(x.clone()).view(), Array1::from(y.clone()).view()).unwrap();
        prop_assert!((r - covariance_pearson(&x, &y)).abs() < 1e-10);
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(0.0f64..1.0, 5..40),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| v * v + k as f64 * 0.01).collect();
        let xs: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
        let a = pearson(Array1::from(x).view(), Array1::from(y.clone()).view());
        let b = pearson(Array1::from(xs).view(), Array1::from(y).view());
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn random_hundred_vectors_match_covariance_oracle() {
    use rand::Rng;
    let mut g = rng(3);
    for _ in 0..20 {
        let x: Vec<f64> = (0..100).map(|_| g.random::<f64>()).collect();
        let y: Vec<f64> = (0..100).map(|_| g.random::<f64>()).collect();
        let r = pearson(Array1::from(x.clone()).view(), Array1::from(y.clone()).view()).unwrap();
        assert!((r - covariance_pearson(&x, &y)).abs() < 1e-10);
    }
}

fn hand_case() -> (pccnmf::DataMatrix, Factorization) {
    let p = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.5], [3.0, 0.0, 2.0]];
    let b = array![[0.2, 1.0], [0.5, 0.3], [1.0, 0.1]];
    let w = array![[2.0, 0.3, 1.5], [0.1, 1.8, 0.6]];
    (matrix(p), Factorization::from_parts(b, w, Loss::Frobenius).unwrap())
}

#[test]
fn error_sequences_match_elementwise_oracle() {
    let (data, f) = hand_case();
    let pcc = derive_pcc(&data, &f).unwrap();
    let seq = error_sequences(&pcc);
    let p = data.values();
    let recon = f.reconstruct();
    let total: f64 = p.sum();
    let mut k = 0;
    for pi in 0..3 {
        let p_pi: f64 = p.row(pi).sum() / total;
        for i in 0..3 {
            let col: f64 = p.column(i).sum();
            let rcol: f64 = recon.column(i).sum();
            let w = p[[pi, i]] / col;
            let w_hat = recon[[pi, i]] / rcol;
            let eps = if w == 0.0 { 0.0 } else { (w - w_hat).abs() / w };
            assert!((seq.w[k] - w).abs() < 1e-12);
            assert!((seq.eps[k] - eps).abs() < 1e-12);
            assert!((seq.v[k] - (w - p_pi)).abs() < 1e-12);
            k += 1;
        }
    }
    // p(pi|i) = 0 for the first pixel of the first image
    assert_eq!(seq.w[0], 0.0);
    assert_eq!(seq.eps[0], 0.0);
}

#[test]
fn v_has_zero_image_weighted_mean() {
    let mut g = rng(21);
    let (data, f) = exact_mixture(&mut g, 7, 9, 3, 0.2);
    let pcc = derive_pcc(&data, &f).unwrap();
    let seq = error_sequences(&pcc);
    let m = pcc.images();
    let weighted: f64 = (0..seq.v.len())
        .map(|k| pcc.data.marg_image[k % m] * seq.v[k])
        .sum();
    assert!(weighted.abs() < 1e-10);
    assert!(seq.eps.iter().all(|&e| e >= 0.0));
}

#[test]
fn exact_factorization_has_no_error_and_undefined_correlation() {
    let mut g = rng(22);
    let (data, f) = exact_mixture(&mut g, 6, 5, 2, 0.0);
    let pcc = derive_pcc(&data, &f).unwrap();
    assert!(error_sequences(&pcc).eps.iter().all(|&e| e < 1e-12));
    // rounding can leave eps at the 1e-16 level; force it exactly to zero
    let mut exact = pcc.clone();
    exact.approx_cond = exact.cond_pixel_given_image.clone();
    assert!(matches!(
        anticorrelation_report(&exact),
        Err(Error::UndefinedCorrelation(_))
    ));
    let analysis = analyze(&exact);
    assert!(analysis.anticorrelation.is_none());
    assert!(analysis.anticorrelation_error.is_some());
}

#[test]
fn anticorrelation_report_shapes() {
    let (data, f) = hand_case();
    let pcc = derive_pcc(&data, &f).unwrap();
    let rep = anticorrelation_report(&pcc).unwrap();
    assert_eq!(rep.length, 9);
    let seq = error_sequences(&pcc);
    assert!((rep.r_w - covariance_pearson(seq.eps.as_slice().unwrap(), seq.w.as_slice().unwrap())).abs() < 1e-10);
    // v enters uncentered
    let e: Vec<f64> = seq.eps.iter().copied().collect();
    let me = e.iter().sum::<f64>() / e.len() as f64;
    let (mut ev, mut ee, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in e.iter().zip(seq.v.iter()) {
        ev += (a - me) * b;
        ee += (a - me) * (a - me);
        vv += b * b;
    }
    assert!((rep.r_v - ev / (ee * vv).sqrt()).abs() < 1e-10);
}

#[test]
fn entropies_match_direct_summation() {
    let p = array![
        [1.0, 0.0, 2.0, 0.5],
        [1.0, 3.0, 0.0, 0.5],
        [1.0, 1.0, 2.0, 0.5],
        [1.0, 0.0, 0.0, 0.5]
    ];
    let b = array![[1.0, 0.2], [0.1, 1.0], [0.5, 0.5], [0.3, 0.05]];
    let w = array![[1.0, 0.2, 1.5, 0.9], [0.5, 1.6, 0.2, 0.3]];
    let f = Factorization::from_parts(b, w, Loss::Frobenius).unwrap();
    let data = matrix(p.clone());
    let pcc = derive_pcc(&data, &f).unwrap();
    let rep = image_entropies(&pcc);
    let recon = f.reconstruct();
    let h = |col: Vec<f64>| {
        let s: f64 = col.iter().sum();
        let mut acc = 0.0;
        for x in col {
            if x > 0.0 {
                acc -= x / s * (x / s).ln();
            }
        }
        acc
    };
    let mut violations = 0;
    for i in 0..4 {
        let s = h(p.column(i).to_vec());
        let s_hat = h(recon.column(i).to_vec());
        assert!((rep.s[i] - s).abs() < 1e-12);
        assert!((rep.s_hat[i] - s_hat).abs() < 1e-12);
        if s > s_hat + 1e-12 {
            violations += 1;
        }
    }
    assert_eq!(rep.violations, violations);
    // first image is uniform
    assert!((rep.s[0] - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn rank_one_model_entropy_is_the_same_for_every_image() {
    let mut g = rng(30);
    let (data, _) = exact_mixture(&mut g, 9, 7, 3, 0.0);
    let f = factorize(&data, 1, Loss::Kl, 0, &SolverOptions::default()).unwrap();
    let rep = image_entropies(&derive_pcc(&data, &f).unwrap());
    for s in &rep.s_hat {
        assert!((s - rep.s_hat[0]).abs() < 1e-12);
    }
}

#[test]
fn single_image_replicated_by_single_basis() {
    let img = array![[0.1], [0.7], [0.0], [0.2]];
    let f = Factorization::from_parts(&img * 3.0, array![[1.0 / 3.0]], Loss::Frobenius).unwrap();
    let pcc = derive_pcc(&matrix(img), &f).unwrap();
    let s = sparsity_comparison(&pcc);
    assert!((s.lhs - s.rhs).abs() < 1e-12);
    assert!((s.hoyer_images - s.hoyer_bases).abs() < 1e-12);
}

#[test]
fn sparsity_sums_follow_definitions() {
    let (data, f) = hand_case();
    let pcc = derive_pcc(&data, &f).unwrap();
    let s = sparsity_comparison(&pcc);
    let ent = image_entropies(&pcc);
    let lhs: f64 = (0..3).map(|i| pcc.data.marg_image[i] * ent.s[i]).sum();
    assert!((s.lhs - lhs).abs() < 1e-12);
    let rhs: f64 = (0..2)
        .map(|b| pcc.basis_prior[b] * entropy(pcc.cond_pixel_given_basis.column(b)))
        .sum();
    assert!((s.rhs - rhs).abs() < 1e-12);
    let cols: Array2<f64> = data.values().clone();
    let hy: f64 = (0..3).map(|i| hoyer(cols.column(i))).sum::<f64>() / 3.0;
    assert!((s.hoyer_images - hy).abs() < 1e-12);
}
