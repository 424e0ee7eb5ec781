use std::collections::HashSet;

use proptest::prelude::*;
use tist::data::{epoch_batches, partition_ids};
use tist::losses::{lambda_at, RampSchedule};
use tist::pseudolabel::{softmax, st_pseudo_labels, tist_pseudo_labels, ProbabilityMap};
use tist::report::dice_score;
use tist::tensor::Tensor3;
use tist::trainer::TrainConfig;
use tist::{LabelMap, IGNORE_INDEX};
use tist_oracles::{naive_softmax, naive_tist_pixel, set_dice};

fn map_from_logits(raw: &[f64], c: usize, scale: f64) -> (ProbabilityMap<f64>, Vec<Vec<f64>>) {
    let n = raw.len() / c;
    let px: Vec<Vec<f64>> = raw.chunks(c).map(|z| naive_softmax(&z.iter().map(|v| v * scale).collect::<Vec<_>>())).collect();
    (ProbabilityMap::from_pixels(1, n, &px).unwrap(), px)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn two_view_labels_match_oracle_and_sit_inside_single_view(
        c in 2usize..6,
        raw_a in prop::collection::vec(-1.0f64..1.0, 120),
        raw_b in prop::collection::vec(-1.0f64..1.0, 120),
        scale in 0.5f64..8.0,
        tau in 0.5f64..0.99,
    ) {
        let n = 120 / c * c;
        let (a, pa) = map_from_logits(&raw_a[..n], c, scale);
        let (b, pb) = map_from_logits(&raw_b[..n], c, scale);
        let ti = tist_pseudo_labels(&a, &b, tau).unwrap();
        let st = st_pseudo_labels(&b, tau).unwrap();
        prop_assert!(ti.mask.is_subset_of(&st.mask));
        for px in 0..n / c {
            let want = naive_tist_pixel(&pa[px], &pb[px], tau).map_or(IGNORE_INDEX, |k| k as u8);
            prop_assert_eq!(ti.labels.labels().data()[px], want);
        }
        // Swapping the views keeps the mask; labels follow the second view.
        let swapped = tist_pseudo_labels(&b, &a, tau).unwrap();
        prop_assert_eq!(swapped.mask, ti.mask);
    }

    #[test]
    fn softmax_matches_naive(raw in prop::collection::vec(-20.0f64..20.0, 3 * 12)) {
        let logits = Tensor3::from_vec(3, 3, 4, raw.clone()).unwrap();
        let p = softmax(&logits);
        for px in 0..12 {
            let z: Vec<f64> = (0..3).map(|k| raw[k * 12 + px]).collect();
            let want = naive_softmax(&z);
            for k in 0..3 {
                prop_assert!((p.data[k * 12 + px] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dice_is_bounded_symmetric_and_matches_sets(
        pred in prop::collection::vec(0u8..3, 36),
        gt in prop::collection::vec(0u8..3, 36),
        class in 0u8..3,
    ) {
        let (p, g) = (LabelMap::new(6, 6, pred.clone()).unwrap(), LabelMap::new(6, 6, gt.clone()).unwrap());
        let d = dice_score(&p, &g, class);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice_score(&g, &p, class));
        let set = |v: &[u8]| -> HashSet<usize> { v.iter().enumerate().filter(|(_, &x)| x == class).map(|(i, _)| i).collect() };
        prop_assert_eq!(d, set_dice(&set(&pred), &set(&gt)));
        prop_assert_eq!(dice_score(&p, &p, class), 1.0);
    }

    #[test]
    fn ignored_ground_truth_pixels_do_not_count(
        pred in prop::collection::vec(0u8..2, 36),
        gt in prop::collection::vec(0u8..2, 36),
        holes in prop::collection::vec(any::<bool>(), 36),
    ) {
        let masked_gt: Vec<u8> = gt.iter().zip(&holes).map(|(&g, &h)| if h { IGNORE_INDEX } else { g }).collect();
        let keep: Vec<usize> = (0..36).filter(|&i| !holes[i]).collect();
        let d = dice_score(&LabelMap::new(6, 6, pred.clone()).unwrap(), &LabelMap::new(6, 6, masked_gt).unwrap(), 1);
        let set = |v: &[u8]| -> HashSet<usize> { keep.iter().copied().filter(|&i| v[i] == 1).collect() };
        prop_assert_eq!(d, set_dice(&set(&pred), &set(&gt)));
    }

    #[test]
    fn ramp_is_increasing_and_bounded(total in 1usize..300) {
        let s = RampSchedule::new(total).unwrap();
        let mut prev = 0.0;
        for e in 0..=total {
            let l = lambda_at(&s, e).unwrap();
            prop_assert!(l > prev && l <= 1.0);
            prev = l;
        }
        prop_assert_eq!(prev, 1.0);
        prop_assert!(lambda_at(&s, total + 1).is_err());
    }

    #[test]
    fn learning_rate_never_increases(epochs in 1usize..200) {
        let cfg = TrainConfig::default();
        for e in 1..epochs {
            prop_assert!(cfg.lr_at(e) <= cfg.lr_at(e - 1));
        }
    }

    #[test]
    fn folds_partition_ids(n in 4usize..60, k in 1usize..5, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
        let folds = partition_ids(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<String> = folds.concat();
        all.sort();
        prop_assert_eq!(&all, &ids);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn every_sample_is_visited_each_epoch(
        ns in 1usize..40,
        nt in 0usize..40,
        batch in 1usize..8,
        seed in any::<u64>(),
        epoch in 0usize..5,
    ) {
        let steps = epoch_batches(ns, nt, batch, seed, epoch).unwrap();
        prop_assert_eq!(steps.len(), ns.max(nt).div_ceil(batch));
        let src: HashSet<usize> = steps.iter().flat_map(|s| s.source.iter().copied()).collect();
        let tgt: HashSet<usize> = steps.iter().flat_map(|s| s.target.iter().copied()).collect();
        prop_assert_eq!(src.len(), ns);
        prop_assert_eq!(tgt.len(), nt);
        prop_assert!(src.iter().all(|&i| i < ns) && tgt.iter().all(|&i| i < nt));
        prop_assert_eq!(steps.clone(), epoch_batches(ns, nt, batch, seed, epoch).unwrap());
    }
}
