use cfdtm_core::evaluation::{partition_purity_nmi, topic_diversity};
use cfdtm_core::model::topic_word_distribution;
use cfdtm_core::objectives::{negative_loss, positive_loss, top_word_set, unassociated_words, uwe_loss, LossConfig};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// Topic embeddings with every vector bounded away from zero.
fn topics(t: usize, k: usize, d: usize) -> impl Strategy<Value = Array3<f64>> {
    prop::collection::vec(0.2f64..2.0, t * k * d)
        .prop_flat_map(move |mags| {
            prop::collection::vec(prop::bool::ANY, mags.len()).prop_map(move |signs| {
                let v: Vec<f64> = mags.iter().zip(&signs).map(|(m, s)| if *s { *m } else { -m }).collect();
                Array3::from_shape_vec((t, k, d), v).unwrap()
            })
        })
}

fn cfg(tau: f64, gamma: f64) -> LossConfig {
    LossConfig {
        tau,
        gamma,
        lambda_t: vec![1.0],
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn beta_columns_are_distributions(
        (phi, w) in (1usize..5, 1usize..10, 1usize..5).prop_flat_map(|(k, v, d)| (matrix(k, d), matrix(v, d))),
        pi in 0.05f64..10.0,
    ) {
        let beta = topic_word_distribution(phi.view(), w.view(), pi).unwrap();
        for col in beta.beta.columns() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            prop_assert!(col.iter().all(|&b| (0.0..=1.0).contains(&b)));
        }
    }

    #[test]
    fn etc_losses_ignore_vector_scale(
        phi in topics(3, 3, 4),
        scale in prop::collection::vec(0.1f64..10.0, 9),
    ) {
        let c = cfg(0.1, 1.0);
        let mut scaled = phi.clone();
        for (i, mut lane) in scaled.lanes_mut(ndarray::Axis(2)).into_iter().enumerate() {
            lane *= scale[i];
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
        prop_assert!(close(positive_loss(phi.view(), &c).unwrap(), positive_loss(scaled.view(), &c).unwrap()));
        prop_assert!(close(negative_loss(phi.view(), &c).unwrap(), negative_loss(scaled.view(), &c).unwrap()));
        let w = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 4 + j) as f64).sin() + 0.1);
        let uw = vec![vec![0, 2], vec![], vec![1, 3, 4]];
        prop_assert!(close(uwe_loss(phi.view(), w.view(), &uw, &c).unwrap(), uwe_loss(scaled.view(), w.view(), &uw, &c).unwrap()));
    }

    #[test]
    fn negative_loss_scales_with_gamma(phi in topics(2, 3, 3), g in 0.1f64..5.0) {
        let base = negative_loss(phi.view(), &cfg(0.2, 1.0)).unwrap();
        let scaled = negative_loss(phi.view(), &cfg(0.2, g)).unwrap();
        prop_assert!((scaled - g * base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn pulling_a_topic_apart_lowers_negative_loss(mut phi in topics(1, 2, 3)) {
        // Replace topic 1 by a vector at a growing angle from topic 0.
        let a: Vec<f64> = phi.slice(ndarray::s![0, 0, ..]).to_vec();
        let mut last = f64::INFINITY;
        for step in 0..=6 {
            let angle = std::f64::consts::PI * step as f64 / 6.0;
            // Rotating within the first two coordinates keeps the norm and
            // lowers the cosine monotonically.
            let (c, s) = (angle.cos(), angle.sin());
            phi[[0, 1, 0]] = c * a[0] - s * a[1];
            phi[[0, 1, 1]] = s * a[0] + c * a[1];
            phi[[0, 1, 2]] = a[2];
            let loss = negative_loss(phi.view(), &cfg(0.5, 1.0)).unwrap();
            prop_assert!(loss <= last + 1e-12);
            last = loss;
        }
    }

    #[test]
    fn td_ignores_topic_and_word_order(
        lists in prop::collection::vec(prop::collection::vec(0usize..30, 1..8), 1..6),
        slice in prop::collection::btree_set(0usize..30, 0..30),
        rot in 0usize..6,
    ) {
        let slice: Vec<usize> = slice.into_iter().collect();
        let base = topic_diversity(&lists, &slice);
        let mut shuffled: Vec<Vec<usize>> = lists.iter().map(|l| l.iter().rev().copied().collect()).collect();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        prop_assert_eq!(base, topic_diversity(&shuffled, &slice));
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn splitting_clusters_never_lowers_purity(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 2..60),
    ) {
        let clusters: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        // Refine each cluster by the document parity.
        let split: Vec<usize> = clusters.iter().enumerate().map(|(i, c)| 2 * c + i % 2).collect();
        let (p0, n0) = partition_purity_nmi(&clusters, &labels).unwrap();
        let (p1, _) = partition_purity_nmi(&split, &labels).unwrap();
        prop_assert!(p1 >= p0 - 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n0));
    }

    #[test]
    fn unassociated_words_are_top_words_outside_the_slice(
        beta in (1usize..4, 2usize..12).prop_flat_map(|(k, v)| matrix(k, v)),
        slice in prop::collection::btree_set(0usize..12, 0..12),
        n in 1usize..5,
    ) {
        // Raw scores stand in for a normalized distribution; only ranks matter.
        let tw = cfdtm_core::TopicWordDistribution { beta: beta.clone() };
        let slice: Vec<usize> = slice.into_iter().filter(|&w| w < beta.ncols()).collect();
        let top = top_word_set(&tw, n);
        let uw = unassociated_words(&top, &slice);
        prop_assert!(uw.iter().all(|w| top.contains(w) && !slice.contains(w)));
        prop_assert!(top.iter().filter(|w| !slice.contains(w)).all(|w| uw.contains(w)));
        prop_assert!(uw.windows(2).all(|p| p[0] < p[1]));
    }
}
