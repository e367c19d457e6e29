//! Property tests for the group law, likelihood invariance, posterior
//! identities, loss invariance and scan optimality.

use pi_oracle::losses::{dir_fdp, dir_fnp, fdp, fnp, selective_sq_loss, SelectionRule, SignLabel};
use pi_oracle::model::{log_likelihood, DataVector, ParamVector, Permutation};
use pi_oracle::oracles::{lagrangian_scan, ScanInput};
use pi_oracle::permutation::{enumerate_exact, posterior_weights};
use pi_oracle::posterior::{NullSet, OrbitSupport, PosteriorModel};
use proptest::prelude::*;

fn perm(n: usize) -> impl Strategy<Value = Permutation> {
    Just((0..n).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_map(|v| Permutation::new(v).unwrap())
}

/// Parameters drawn from a small grid so ties and zeros are common.
fn theta_and_perm(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Permutation, Permutation)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::sample::select(vec![-2.0, -1.0, 0.0, 0.0, 1.5, 3.0]), n),
            prop::collection::vec(-4.0..4.0f64, n),
            perm(n),
            perm(n),
        )
    })
}

fn label(x: u8) -> SignLabel {
    match x % 3 {
        0 => SignLabel::Plus,
        1 => SignLabel::Minus,
        _ => SignLabel::NotAssigned,
    }
}

fn brute_rho_min(input: &ScanInput, lambda: f64) -> f64 {
    let n = input.call_error.len();
    (0u32..1 << n)
        .map(|bits| {
            let r = bits.count_ones() as usize;
            let (mut err, mut miss) = (0.0, 0.0);
            for i in 0..n {
                if bits >> i & 1 == 1 {
                    err += input.call_error[i];
                } else {
                    miss += input.miss[i];
                }
            }
            let a = if r == 0 { 0.0 } else { lambda * err / r as f64 };
            let b = if r == n { 0.0 } else { miss / (n - r) as f64 };
            a + b
        })
        .fold(f64::INFINITY, f64::min)
}

fn rho_of(input: &ScanInput, mask: &[bool], lambda: f64) -> f64 {
    let n = mask.len();
    let r = mask.iter().filter(|&&m| m).count();
    let err: f64 = (0..n).filter(|&i| mask[i]).map(|i| input.call_error[i]).sum();
    let miss: f64 = (0..n).filter(|&i| !mask[i]).map(|i| input.miss[i]).sum();
    (if r == 0 { 0.0 } else { lambda * err / r as f64 }) + if r == n { 0.0 } else { miss / (n - r) as f64 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn group_law((_t, u, g, h) in theta_and_perm(7), k in 0usize..1000) {
        let n = u.len();
        let e = Permutation::identity(n);
        prop_assert_eq!(g.compose(&e).unwrap(), g.clone());
        prop_assert_eq!(e.compose(&g).unwrap(), g.clone());
        prop_assert!(g.compose(&g.inverse()).unwrap().is_identity());
        prop_assert!(g.inverse().compose(&g).unwrap().is_identity());
        // composition acts as successive application
        prop_assert_eq!(g.compose(&h).unwrap().apply(&u).unwrap(), g.apply(&h.apply(&u).unwrap()).unwrap());
        let third = Permutation::new({
            let mut v: Vec<usize> = (0..n).collect();
            v.rotate_left(k % n);
            v
        }).unwrap();
        prop_assert_eq!(
            g.compose(&h).unwrap().compose(&third).unwrap(),
            g.compose(&h.compose(&third).unwrap()).unwrap()
        );
    }

    #[test]
    fn likelihood_is_relabeling_invariant((t, z, g, _h) in theta_and_perm(8)) {
        let theta = ParamVector::new(t, 1.3).unwrap();
        let z = DataVector::new(z).unwrap();
        let a = log_likelihood(&theta, &z).unwrap();
        let b = log_likelihood(&theta.permuted(&g).unwrap(), &z.permuted(&g).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn posterior_normalizes_and_conserves_sum((t, z, _g, _h) in theta_and_perm(6)) {
        let theta = ParamVector::unit(t.clone()).unwrap();
        let e = enumerate_exact(theta.len()).unwrap();
        let wp = posterior_weights(&e, &theta, &DataVector::new(z.clone()).unwrap()).unwrap();
        let total: f64 = wp.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let s = OrbitSupport::exact(&theta, NullSet::Zero).unwrap().summarize(&z);
        for i in 0..t.len() {
            prop_assert!((s.q_null[i] + s.p_pos[i] + s.p_neg[i] - 1.0).abs() < 1e-12);
            prop_assert!(s.post_var[i] >= 0.0);
        }
        // every arrangement has the same coordinate sum
        let lhs: f64 = s.post_mean.iter().sum();
        let rhs: f64 = t.iter().sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
        // each parameter value is somewhere: column sums of P(xi_i = 0) count zeros
        let zeros = t.iter().filter(|&&x| x == 0.0).count() as f64;
        prop_assert!((s.q_null.iter().sum::<f64>() - zeros).abs() < 1e-9);
    }

    #[test]
    fn exact_posterior_is_equivariant((t, z, g, _h) in theta_and_perm(6)) {
        let support = OrbitSupport::exact(&ParamVector::unit(t).unwrap(), NullSet::Zero).unwrap();
        let gz = g.apply(&z).unwrap();
        prop_assert_eq!(support.summarize(&gz), support.summarize(&z).permuted(&g).unwrap());
        prop_assert_eq!(support.log_marginal(&gz), support.log_marginal(&z));
    }

    #[test]
    fn losses_are_relabeling_invariant(
        (t, z, g, _h) in theta_and_perm(8),
        bits in prop::collection::vec(any::<u8>(), 8),
        a in prop::collection::vec(-3.0..3.0f64, 8),
        k in 0usize..4,
    ) {
        let n = t.len();
        let reject: Vec<bool> = bits[..n].iter().map(|b| b & 1 == 1).collect();
        let labels: Vec<SignLabel> = bits[..n].iter().map(|&b| label(b)).collect();
        let a = &a[..n];
        let gt = g.apply(&t).unwrap();
        let gz = g.apply(&z).unwrap();
        let null = NullSet::Zero;
        prop_assert_eq!(fdp(&t, &reject, null), fdp(&gt, &g.apply(&reject).unwrap(), null));
        prop_assert_eq!(fnp(&t, &reject, null), fnp(&gt, &g.apply(&reject).unwrap(), null));
        prop_assert_eq!(dir_fdp(&t, &labels), dir_fdp(&gt, &g.apply(&labels).unwrap()));
        prop_assert_eq!(dir_fnp(&t, &labels), dir_fnp(&gt, &g.apply(&labels).unwrap()));
        for s in [SelectionRule::All, SelectionRule::ArgMax, SelectionRule::TopK(k)] {
            prop_assert_eq!(
                selective_sq_loss(&z, &t, a, &s),
                selective_sq_loss(&gz, &gt, &g.apply(a).unwrap(), &s)
            );
        }
    }

    #[test]
    fn scan_attains_brute_force_minimum(
        raw in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..7),
        lambda in 0.01..50.0f64,
    ) {
        // valid sign inputs: call error min(p+, p-) and miss p+ + p-
        let input = ScanInput {
            call_error: raw.iter().map(|&(u, v)| (u * v).min(u * (1.0 - v))).collect(),
            miss: raw.iter().map(|&(u, _)| u).collect(),
        };
        let mask = lagrangian_scan(&input, lambda);
        prop_assert!((rho_of(&input, &mask, lambda) - brute_rho_min(&input, lambda)).abs() < 1e-12);
        let q: Vec<f64> = raw.iter().map(|&(u, _)| u).collect();
        let testing = ScanInput { call_error: q.clone(), miss: q.iter().map(|x| 1.0 - x).collect() };
        let mask = lagrangian_scan(&testing, lambda);
        prop_assert!((rho_of(&testing, &mask, lambda) - brute_rho_min(&testing, lambda)).abs() < 1e-12);
    }
}
