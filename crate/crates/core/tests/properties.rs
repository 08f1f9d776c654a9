//! Symmetry and partition properties over random inputs.

use lpad_core::datapipe::{split, synth_generate, SplitSpec, SynthConfig};
use lpad_core::diffcore::Tensor;
use lpad_core::priors::{kl_bernoulli, kl_gaussian_closed_form, KlMode};
use lpad_core::rbm::{energy, RbmParams};
use proptest::prelude::*;

fn shuffled(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

fn rbm_case() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<usize>, Vec<usize>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(k, l)| {
        (
            Just(k),
            Just(l),
            prop::collection::vec(-2.0f64..2.0, k * l + k + l),
            prop::collection::vec(0.0f64..1.0, k + l),
            shuffled(k),
            shuffled(l),
        )
    })
}

proptest! {
    #[test]
    fn energy_invariant_under_unit_relabeling((k, l, theta, state, pv, ph) in rbm_case()) {
        let w = &theta[..k * l];
        let (a, b) = (&theta[k * l..k * l + k], &theta[k * l + k..]);
        let (v, h) = (&state[..k], &state[k..]);
        let p = RbmParams::new(Tensor::new(vec![k, l], w.to_vec()).unwrap(), Tensor::vector(a.to_vec()), Tensor::vector(b.to_vec())).unwrap();
        let mut w2 = vec![0.0; k * l];
        for i in 0..k {
            for j in 0..l {
                w2[i * l + j] = w[pv[i] * l + ph[j]];
            }
        }
        let a2: Vec<f64> = pv.iter().map(|&i| a[i]).collect();
        let b2: Vec<f64> = ph.iter().map(|&j| b[j]).collect();
        let v2: Vec<f64> = pv.iter().map(|&i| v[i]).collect();
        let h2: Vec<f64> = ph.iter().map(|&j| h[j]).collect();
        let p2 = RbmParams::new(Tensor::new(vec![k, l], w2).unwrap(), Tensor::vector(a2), Tensor::vector(b2)).unwrap();
        let e1 = energy(v, h, &p).unwrap();
        let e2 = energy(&v2, &h2, &p2).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-12 * (1.0 + e1.abs()));
    }

    #[test]
    fn kl_invariant_under_latent_permutation(
        (la, perm) in (1usize..20).prop_flat_map(|n| (prop::collection::vec(-8.0f64..8.0, n), shuffled(n))),
    ) {
        let permuted: Vec<f64> = perm.iter().map(|&i| la[i]).collect();
        let a = kl_bernoulli(&Tensor::vector(la.clone()), None, KlMode::Analytic).unwrap().value;
        let b = kl_bernoulli(&Tensor::vector(permuted.clone()), None, KlMode::Analytic).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        // the same vectors read as (mu, logvar) pairs
        let half = la.len() / 2;
        if half > 0 {
            let (mu, lv) = (la[..half].to_vec(), la[half..2 * half].iter().map(|v| v / 4.0).collect::<Vec<_>>());
            let order: Vec<usize> = perm.iter().copied().filter(|&i| i < half).collect();
            let mu2: Vec<f64> = order.iter().map(|&i| mu[i]).collect();
            let lv2: Vec<f64> = order.iter().map(|&i| lv[i]).collect();
            let g1 = kl_gaussian_closed_form(&Tensor::vector(mu), &Tensor::vector(lv)).unwrap();
            let g2 = kl_gaussian_closed_form(&Tensor::vector(mu2), &Tensor::vector(lv2)).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-12 * (1.0 + g1.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_is_a_stratified_partition(n in 20usize..200, seed in 0u64..1000, three in any::<bool>()) {
        let ds = synth_generate(&SynthConfig { n_instances: n, channels: 3, window_len: 8, anomaly_fraction: 0.1, seed, ..SynthConfig::default() }).unwrap();
        let fractions = if three { vec![0.6, 0.2, 0.2] } else { vec![0.5, 0.5] };
        let parts = split(&ds, &SplitSpec { fractions: fractions.clone(), seed }).unwrap();
        let mut ids: Vec<String> = parts.iter().flat_map(|p| p.instance_ids.clone()).collect();
        prop_assert_eq!(ids.len(), n);
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        for (p, f) in parts.iter().zip(&fractions) {
            prop_assert!(p.len() >= (f * n as f64 + 1e-9).floor() as usize);
            let share = p.len() as f64 * ds.n_anomalous() as f64 / n as f64;
            prop_assert!((p.n_anomalous() as f64 - share).abs() < 1.0 + 1e-9);
        }
        let again = split(&ds, &SplitSpec { fractions, seed }).unwrap();
        prop_assert_eq!(parts, again);
    }
}
