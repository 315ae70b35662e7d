mod common;

use common::{exact_mixture, matrix, rng};
use ndarray::{array, Array2};
use pccnmf::dataset::generate_swimmer;
use pccnmf::nmf::frobenius_error;
use pccnmf::rank_scan::*;
use pccnmf::stability::cosine_distance;
use pccnmf::{derive_pcc, Factorization, Loss};

/// Invalid (pixel, image) pairs counted straight from the matrices.
fn brute_force_invalid(p: &Array2<f64>, b: &Array2<f64>) -> usize {
    let (n, m) = p.dim();
    let r = b.ncols();
    let mut invalid = 0;
    for i in 0..m {
        let col: f64 = (0..n).map(|k| p[[k, i]]).sum();
        for pi in 0..n {
            let x = p[[pi, i]] / col;
            if x == 0.0 {
                continue;
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in 0..r {
                let s: f64 = (0..n).map(|k| b[[k, c]]).sum();
                lo = lo.min(b[[pi, c]] / s);
                hi = hi.max(b[[pi, c]] / s);
            }
            if lo > x * (1.0 + 1e-12) || hi < x * (1.0 - 1e-12) {
                invalid += 1;
            }
        }
    }
    invalid
}

#[test]
fn exact_mixtures_satisfy_every_inequality() {
    let mut g = rng(11);
    for case in 0..40 {
        let (n, m, r) = (2 + case % 7, 3 + case % 5, 1 + case % 4);
        let (data, f) = exact_mixture(&mut g, n, m, r, 0.3);
        let pcc = derive_pcc(&data, &f).unwrap();
        assert_eq!(brute_force_invalid(data.values(), &f.basis), 0);
        assert_eq!(predictability_fraction(&pcc), 1.0, "case {case}");
        assert_eq!(dual_predictability_fraction(&pcc), 1.0, "case {case}");
    }
}

#[test]
fn violation_is_detected() {
    // pixel 0 is brighter in image 0 than in any basis image
    let p = array![[0.9, 0.1], [0.1, 0.9]];
    let b = array![[0.5], [0.5]];
    let w = array![[1.0, 1.0]];
    let f = Factorization::from_parts(b.clone(), w, Loss::Frobenius).unwrap();
    let data = matrix(p.clone());
    let pcc = derive_pcc(&data, &f).unwrap();
    let expected = 1.0 - brute_force_invalid(&p, &b) as f64 / 4.0;
    assert_eq!(predictability_fraction(&pcc), expected);
    assert_eq!(expected, 0.0);
}

#[test]
fn mean_internal_distance_matches_pairwise_loop() {
    let b = array![[1.0, 0.0, 0.3], [0.0, 2.0, 0.4], [1.0, 1.0, 0.0]];
    let f = Factorization::from_parts(b.clone(), Array2::ones((3, 2)), Loss::Frobenius).unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for a in 0..3 {
        for c in 0..3 {
            if a != c {
                sum += cosine_distance(b.column(a), b.column(c)).unwrap();
                count += 1;
            }
        }
    }
    assert!((mean_internal_distance(&f).unwrap() - sum / count as f64).abs() < 1e-14);
    let gauged = f.gauge_transform(&[3.0, 0.2, 11.0]).unwrap();
    assert!((mean_internal_distance(&gauged).unwrap() - sum / count as f64).abs() < 1e-12);
}

#[test]
fn mean_internal_distance_needs_two_bases() {
    let f = Factorization::from_parts(array![[1.0], [2.0]], array![[1.0, 1.0]], Loss::Frobenius).unwrap();
    assert!(mean_internal_distance(&f).is_err());
}

#[test]
fn rrssq_and_bic_follow_their_formulas() {
    let p = array![[1.0, 2.0, 0.0], [0.5, 0.0, 1.0]];
    let f = Factorization::from_parts(array![[1.0], [0.5]], array![[1.0, 1.5, 0.5]], Loss::Frobenius).unwrap();
    let data = matrix(p.clone());
    let mut rss = 0.0;
    let recon = f.reconstruct();
    for (x, y) in p.iter().zip(recon.iter()) {
        rss += (x - y) * (x - y);
    }
    let norm: f64 = p.iter().map(|x| x * x).sum();
    assert!((rrssq(&data, &f).unwrap() - (rss / norm).sqrt()).abs() < 1e-14);

    let (n, m, r) = (2.0f64, 3.0f64, 1.0f64);
    let fit = n * m * (rss / (n * m)).ln();
    let expected = [
        fit + r * (n + m) * (n * m / (n + m)).ln(),
        fit + r * (n + m) * 2f64.ln(),
        fit + r * n * m * 2f64.ln() / 2.0,
    ];
    for (v, e) in BicVariant::ALL.iter().zip(expected) {
        assert!((bic_scores(&data, &f, *v).unwrap() - e).abs() < 1e-10);
    }
    assert!((frobenius_error(&data, &f).unwrap() - rss).abs() < 1e-14);
}

#[test]
fn local_minima_are_strict() {
    let curve = vec![(1, 5.0), (2, 3.0), (3, 4.0), (4, 4.0), (5, 2.0), (6, 2.0), (7, 9.0)];
    assert_eq!(local_minima(&curve), vec![2]);
    assert!(local_minima(&[(1, 1.0), (2, 2.0)]).is_empty());
}

#[test]
fn thresholds() {
    assert_eq!(tau_single_pair(169, 256), 1.0 / 43264.0);
    assert_eq!(tau_per_image(256), 1.0 / 256.0);
}

#[test]
fn critical_rank_of_a_small_exact_mixture() {
    let mut g = rng(5);
    let (data, _) = exact_mixture(&mut g, 8, 10, 3, 0.0);
    let mut cfg = ScanConfig::new(1, 5, 0.0, vec![0, 1, 2]);
    cfg.opts.max_iters = 5000;
    cfg.opts.rel_tol = 1e-12;
    let report = estimate_rc(&data, &cfg).unwrap();
    assert_eq!(report.points.len(), 15);
    assert_eq!(report.summary.len(), 5);
    let rc = report.r_c.expect("critical rank found");
    assert!(rc <= 3, "r_c = {rc}");
    assert!(report.best_achieved.is_none());
    // the curve is reported in full, past r_c
    assert_eq!(report.ranks, vec![1, 2, 3, 4, 5]);
}

#[test]
fn unreachable_threshold_reports_best_rank() {
    let mut g = rng(6);
    let (data, _) = exact_mixture(&mut g, 6, 6, 4, 0.0);
    let cfg = ScanConfig::new(1, 1, 0.0, vec![0]);
    let report = estimate_rc(&data, &cfg).unwrap();
    assert_eq!(report.r_c, None);
    let (rank, frac) = report.best_achieved.unwrap();
    assert_eq!(rank, 1);
    assert!(frac > 0.0);
}

#[test]
fn threads_do_not_change_results() {
    let data = generate_swimmer(&Default::default()).unwrap();
    let mut cfg = ScanConfig::new(3, 5, tau_per_image(data.cols()), vec![1, 2]);
    cfg.opts.max_iters = 60;
    let serial = estimate_rc(&data, &cfg).unwrap();
    cfg.threads = 3;
    let parallel = estimate_rc(&data, &cfg).unwrap();
    assert_eq!(serial, parallel);
    let dual = estimate_rc_dual(&data, &cfg).unwrap();
    assert_eq!(dual.direction, Direction::Dual);
    assert_eq!(dual.points, serial.points);
}

#[test]
fn invalid_configurations_are_rejected() {
    let data = matrix(array![[1.0, 0.0], [0.0, 1.0]]);
    assert!(estimate_rc(&data, &ScanConfig::new(0, 1, 0.0, vec![0])).is_err());
    assert!(estimate_rc(&data, &ScanConfig::new(2, 1, 0.0, vec![0])).is_err());
    assert!(estimate_rc(&data, &ScanConfig::new(1, 3, 0.0, vec![0])).is_err());
    assert!(estimate_rc(&data, &ScanConfig::new(1, 2, 0.0, vec![])).is_err());
    assert!(estimate_rc(&data, &ScanConfig::new(1, 2, 1.5, vec![0])).is_err());
}

#[test]
fn report_exports() {
    let mut g = rng(8);
    let (data, _) = exact_mixture(&mut g, 5, 6, 2, 0.0);
    let mut cfg = ScanConfig::new(1, 3, 0.01, vec![4]);
    cfg.opts.max_iters = 50;
    let report = estimate_rc(&data, &cfg).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "R,seed,valid_fraction,dual_valid_fraction,dbar,error,rrssq,bic1,bic2,bic3");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,4,"));
    let json = serde_json::to_string(&report).unwrap();
    let back: RankScanReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.bic_curve(BicVariant::Bic2).len(), 3);
}
