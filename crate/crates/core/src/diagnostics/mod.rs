//! Task Particle ratios, JS-based layer sensitivity, profile normalization,
//! boundary alignment scans and group heatmaps.

mod boundary;
mod heatmap;
mod metrics;
mod normalize;

pub use boundary::{boundary_score, layer_profile, parse_fractions, scan_boundaries, BoundaryScan, Fraction};
pub use heatmap::{group_heatmap, HeatmapMatrix};
pub use metrics::{
    js_divergence, kl_divergence, sensitivity, task_particle, SensitivityProfile, TaskParticleProfile,
    DEFAULT_EPSILON,
};
pub use normalize::{normalize_profile, NormalizedProfile, Normalization, Z_CLIP};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{softmax, ProbabilityDistribution};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn dist(p: &[f64]) -> ProbabilityDistribution {
        ProbabilityDistribution::dense(p.to_vec()).unwrap()
    }

    #[test]
    fn task_particle_examples() {
        let flat = task_particle(&[0.3; 5], DEFAULT_EPSILON, 0.0).unwrap();
        assert_eq!(flat.ratios, vec![0.0; 4]);
        assert!(flat.interval.is_empty());

        let r = task_particle(&[0.25, 0.5], DEFAULT_EPSILON, 0.0).unwrap();
        assert!((r.ratios[0] - 0.499_999_000_002).abs() < 1e-12);
        assert_eq!(r.interval, vec![2]);

        let r = task_particle(&[0.2, 0.0], DEFAULT_EPSILON, 0.0).unwrap();
        assert!((r.ratios[0] - 200_000.0).abs() < 1e-6);

        assert!(matches!(task_particle(&[], 1e-6, 0.0), Err(crate::Error::InvalidInput(_))));
        assert!(task_particle(&[0.5, 1.5], 1e-6, 0.0).is_err());
        assert!(task_particle(&[0.5], 0.0, 0.0).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let r = task_particle(&[0.1, 0.2, 0.2, 0.9], 1e-6, 0.0).unwrap();
        assert_eq!(r.interval, vec![2, 4]);
        let r = task_particle(&[0.1, 0.2, 0.2, 0.9], 1e-6, 0.6).unwrap();
        assert_eq!(r.interval, vec![4]);
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(sensitivity(&[0.2; 4], 1e-6).unwrap().delta_js, vec![0.0; 3]);
        let s = sensitivity(&[0.1, 0.2], 1e-6).unwrap();
        assert!((s.delta_js[0] - 0.999_990_000_1).abs() < 1e-12);
        let s = sensitivity(&[0.0, 0.05], 1e-6).unwrap();
        assert!((s.delta_js[0] - 50_000.0).abs() < 1e-6);
        assert!(sensitivity(&[], 1e-6).is_err());
        assert!(sensitivity(&[-0.1, 0.2], 1e-6).is_err());
    }

    #[test]
    fn js_examples() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        assert!((js_divergence(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap() - LN_2).abs() < 1e-15);
        let v = js_divergence(&dist(&[0.5, 0.5]), &dist(&[0.9, 0.1])).unwrap();
        assert!((v - 0.101_749_225_079_196_7).abs() < 1e-12);
        assert!(js_divergence(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.9, 0.1]);
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expect).abs() < 1e-15);
        assert_eq!(kl_divergence(&p, &dist(&[1.0, 0.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_profile(&[1.0, 2.0, 3.0], Normalization::MinMax).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        assert!(!n.degenerate);
        let n = normalize_profile(&[5.0; 3], Normalization::MinMax).unwrap();
        assert_eq!(n.values, vec![0.0; 3]);
        assert!(n.degenerate);
        let n = normalize_profile(&[0.2, 0.8, 0.4], Normalization::MinMax).unwrap();
        for (a, b) in n.values.iter().zip([0.0, 1.0, 1.0 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(normalize_profile(&[], Normalization::MinMax).is_err());
        assert!(normalize_profile(&[1.0, f64::NAN], Normalization::MinMax).is_err());
    }

    #[test]
    fn z_score_normalization() {
        let n = normalize_profile(&[1.0, 2.0, 3.0], Normalization::ZScoreClipped).unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((n.values[1] - 0.5).abs() < 1e-15);
        assert!((n.values[2] - (1.0 / sd + 3.0) / 6.0).abs() < 1e-15);
        let n = normalize_profile(&[0.0; 3], Normalization::ZScoreClipped).unwrap();
        assert!(n.degenerate);
        let mut spiky = vec![0.0; 99];
        spiky.push(1e6);
        let n = normalize_profile(&spiky, Normalization::ZScoreClipped).unwrap();
        assert_eq!(n.values[99], 1.0);
        assert_eq!("z-score-clipped".parse::<Normalization>().unwrap(), Normalization::ZScoreClipped);
    }

    #[test]
    fn boundary_score_examples() {
        assert_eq!(boundary_score(&[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 0.0, 0.0], 2).unwrap(), 2.0);
        assert_eq!(boundary_score(&[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 1.0], 2).unwrap(), -2.0);
        let s = boundary_score(&[0.1, 0.2, 0.9, 0.8], &[0.9, 0.7, 0.2, 0.1], 2).unwrap();
        assert!((s - 1.35).abs() < 1e-12);
        for b in [0, 4] {
            assert!(boundary_score(&[0.0; 4], &[0.0; 4], b).is_err());
        }
        assert!(boundary_score(&[0.0; 4], &[0.0; 3], 2).is_err());
    }

    #[test]
    fn split_layers_use_exact_fractions() {
        let layers: Vec<usize> = parse_fractions("1/3,1/2,2/3")
            .unwrap()
            .iter()
            .map(|f| f.split_layer(28))
            .collect();
        assert_eq!(layers, vec![9, 14, 19]);
        assert_eq!("0.66".parse::<Fraction>().unwrap().split_layer(28), 18);
        assert_eq!("0.5".parse::<Fraction>().unwrap(), Fraction::new(1, 2).unwrap());
        // 2.5 rounds up.
        assert_eq!(Fraction::new(1, 2).unwrap().split_layer(5), 3);
        assert_eq!(Fraction::new(1, 100).unwrap().split_layer(8), 1);
        assert_eq!(Fraction::new(99, 100).unwrap().split_layer(8), 7);
        for bad in ["0", "1", "3/2", "1/0", "x", "-0.5", ""] {
            assert!(bad.parse::<Fraction>().is_err(), "{bad}");
        }
        let json = serde_json::to_string(&Fraction::new(2, 3).unwrap()).unwrap();
        assert_eq!(json, "\"2/3\"");
        assert_eq!(serde_json::from_str::<Fraction>(&json).unwrap(), Fraction::new(2, 3).unwrap());
    }

    #[test]
    fn aligned_profiles_score_positive_at_default_fractions() {
        let tp = [0.0, 0.0, 1.0, 1.0];
        let ls = [1.0, 1.0, 0.0, 0.0];
        let scan = scan_boundaries(&tp, &ls, &Fraction::defaults()).unwrap();
        assert_eq!(scan.split_layers, vec![1, 2, 3]);
        for (i, &b) in scan.split_layers.iter().enumerate() {
            assert_eq!(scan.scores[i], boundary_score(&tp, &ls, b).unwrap());
            assert!(scan.scores[i] > 0.0);
        }
    }

    #[test]
    fn layer_profile_pads_first_layer() {
        let p = layer_profile(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(p, vec![0.0, 2.0, 3.0]);
        assert!(layer_profile(&[]).is_err());
        assert!(layer_profile(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn heatmap_examples() {
        let h = group_heatmap(&[vec![0.2, 0.4], vec![0.4, 0.8]], &[1, 1], 1, 2).unwrap();
        assert!((h.values[0][0] - 0.3).abs() < 1e-12 && (h.values[0][1] - 0.6).abs() < 1e-12);
        assert_eq!(h.layers, vec![2, 3]);

        let rows = vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![7.0, 11.0]];
        let h = group_heatmap(&rows, &[1, 2, 3], 3, 2).unwrap();
        assert_eq!(h.values, rows);
        assert_eq!(h.shape(), (3, 2));

        let doubled: Vec<Vec<f64>> = rows.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
        let h2 = group_heatmap(&doubled, &[1, 1, 2, 2, 3, 3], 3, 2).unwrap();
        for (a, b) in h2.values.iter().flatten().zip(rows.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(group_heatmap(&rows, &[1, 1, 1], 2, 2).is_err());
        assert!(group_heatmap(&rows, &[1, 2, 4], 3, 2).is_err());
        assert!(group_heatmap(&[], &[], 1, 2).is_err());
        assert_eq!(h.log1p_values()[0][0], 1.0f64.ln_1p());
    }

    fn random_dist(logits: &[f64], zero_mask: &[bool]) -> ProbabilityDistribution {
        let mut p = softmax(logits).unwrap().probs().to_vec();
        for (v, &z) in p.iter_mut().zip(zero_mask) {
            if z {
                *v = 0.0;
            }
        }
        if p.iter().all(|v| *v == 0.0) {
            p[0] = 1.0;
        }
        let s: f64 = p.iter().sum();
        dist(&p.iter().map(|v| v / s).collect::<Vec<_>>())
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, Vec<bool>)> {
        (2usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(-8.0f64..8.0, n),
                prop::collection::vec(-8.0f64..8.0, n),
                prop::collection::vec(prop::bool::weighted(0.2), n),
                prop::collection::vec(prop::bool::weighted(0.2), n),
            )
        })
    }

    proptest! {
        #[test]
        fn js_is_symmetric_and_bounded((lp, lq, zp, zq) in pair()) {
            let p = random_dist(&lp, &zp);
            let q = random_dist(&lq, &zq);
            let a = js_divergence(&p, &q).unwrap();
            let b = js_divergence(&q, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=LN_2 + 1e-12).contains(&a));
            prop_assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
            if p.probs().iter().zip(q.probs()).any(|(x, y)| (x - y).abs() > 1e-6) {
                prop_assert!(a > 0.0);
            }
        }

        #[test]
        fn ratios_nonnegative(pt in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let tp = task_particle(&pt, 1e-6, 0.0).unwrap();
            prop_assert!(tp.ratios.iter().all(|r| *r >= 0.0));
            prop_assert_eq!(tp.ratios.len(), pt.len() - 1);
            prop_assert!(tp.interval.iter().all(|l| (2..=pt.len()).contains(l)));
            let s = sensitivity(&pt, 1e-6).unwrap();
            prop_assert!(s.delta_js.iter().all(|r| *r >= 0.0));
        }

        #[test]
        fn swapping_profiles_negates_score(
            tp in prop::collection::vec(0.0f64..1.0, 2..16),
            seed in prop::collection::vec(0.0f64..1.0, 16),
            b_raw in 1usize..15,
        ) {
            let ls = &seed[..tp.len()];
            let b = 1 + (b_raw - 1) % (tp.len() - 1);
            let s = boundary_score(&tp, ls, b).unwrap();
            let swapped = boundary_score(ls, &tp, b).unwrap();
            prop_assert_eq!(s, -swapped);
        }

        #[test]
        fn aligned_step_is_the_maximum(n in 2usize..=12, k_raw in 1usize..12) {
            let k = 1 + (k_raw - 1) % (n - 1);
            let tp: Vec<f64> = (0..n).map(|i| if i < k { 0.0 } else { 1.0 }).collect();
            let ls: Vec<f64> = tp.iter().map(|v| 1.0 - v).collect();
            let best = boundary_score(&tp, &ls, k).unwrap();
            for b in 1..n {
                prop_assert!(boundary_score(&tp, &ls, b).unwrap() <= best);
            }
            prop_assert_eq!(best, 2.0);
        }

        #[test]
        fn min_max_lands_in_unit_interval(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let n = normalize_profile(&v, Normalization::MinMax).unwrap();
            prop_assert!(n.values.iter().all(|x| (0.0..=1.0).contains(x)));
            let z = normalize_profile(&v, Normalization::ZScoreClipped).unwrap();
            prop_assert!(z.values.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
