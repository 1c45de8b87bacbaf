use fmtk::eval::{bootstrap_ci, macro_f1, wilcoxon_signed_rank, Tail};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn bootstrap_interval_covers_a_fair_coin() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let covered = (0..100u64)
        .filter(|&trial| {
            let flips: Vec<f64> = (0..200).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
            let ci = bootstrap_ci(&flips, mean, 1000, 0.05, trial).unwrap();
            ci.low <= 0.5 && 0.5 <= ci.high
        })
        .count();
    assert!(covered >= 93, "only {covered}/100 intervals covered 0.5");
}

#[test]
fn wilcoxon_large_sample_is_uniform_under_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rejections = (0..400)
        .filter(|_| {
            let a: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
            wilcoxon_signed_rank(&a, &b, Tail::Two).unwrap().p_value < 0.05
        })
        .count();
    assert!((8..=35).contains(&rejections), "{rejections}/400 rejections at alpha 0.05");
}

proptest! {
    #[test]
    fn wilcoxon_tails_mirror(pairs in proptest::collection::vec((-5i32..=5, -5i32..=5), 6..25)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        if let (Ok(ab), Ok(ba)) = (wilcoxon_signed_rank(&a, &b, Tail::Greater), wilcoxon_signed_rank(&b, &a, Tail::Less)) {
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            let less = wilcoxon_signed_rank(&a, &b, Tail::Less).unwrap();
            let two = wilcoxon_signed_rank(&a, &b, Tail::Two).unwrap();
            prop_assert!((0.0..=1.0).contains(&two.p_value));
            prop_assert!(two.p_value + 1e-12 >= ab.p_value.min(less.p_value));
        }
    }

    #[test]
    fn macro_f1_is_invariant_to_sample_order(labels in proptest::collection::vec((0usize..3, 0usize..3), 1..60), rot in 0usize..60) {
        let truth: Vec<usize> = labels.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = labels.iter().map(|p| p.1).collect();
        let k = rot % truth.len();
        let (mut t2, mut p2) = (truth.clone(), pred.clone());
        t2.rotate_left(k);
        p2.rotate_left(k);
        let f = macro_f1(&truth, &pred, 3).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, macro_f1(&t2, &p2, 3).unwrap());
        prop_assert_eq!(macro_f1(&truth, &truth, 3).unwrap() > 0.0, true);
    }
}
