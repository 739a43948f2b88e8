use conceptblend::experiments::Registry;
use conceptblend::pipeline::BlendMethod;
use conceptblend::study_stats::{
    binomial_tail, format_dataset, pairwise_preference, parse_dataset, rank_summary, GroupBy, RankingRecord,
};
use proptest::prelude::*;

fn permutation() -> impl Strategy<Value = [u8; 4]> {
    Just([1u8, 2, 3, 4]).prop_shuffle()
}

fn records() -> impl Strategy<Value = Vec<RankingRecord>> {
    let pairs: Vec<String> = Registry::bundled().pairs().iter().map(|p| p.id.clone()).collect();
    prop::collection::vec((0usize..22, permutation()), 1..200).prop_map(move |v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (p, ranks))| RankingRecord::new(format!("u{i}"), pairs[p].clone(), ranks).unwrap())
            .collect()
    })
}

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

proptest! {
    #[test]
    fn tail_is_monotone(n in 1u64..400) {
        let mut prev = 1.0;
        for k in 0..=n {
            let p = binomial_tail(k, n).unwrap();
            prop_assert!(p <= prev + 1e-15);
            prev = p;
        }
    }

    #[test]
    fn tails_complement(n in 1u64..=30, k in 0u64..=30) {
        prop_assume!(k <= n);
        // P(X >= k) + P(X >= n-k) = 1 + P(X = k) by symmetry of Bin(n, 1/2)
        let lhs = binomial_tail(k, n).unwrap() + binomial_tail(n - k, n).unwrap();
        let rhs = 1.0 + choose(n, k) / 2f64.powi(n as i32);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn proportions_are_antisymmetric(rs in records()) {
        for a in BlendMethod::BLENDS {
            for b in BlendMethod::BLENDS {
                if a == b { continue; }
                let x = pairwise_preference(&rs, a, b).unwrap();
                let y = pairwise_preference(&rs, b, a).unwrap();
                prop_assert_eq!(x.k + y.k, x.n);
                prop_assert!((x.proportion + y.proportion - 1.0).abs() <= f64::EPSILON);
            }
        }
    }

    #[test]
    fn dataset_text_round_trips(rs in records()) {
        let text = format_dataset(&rs);
        prop_assert_eq!(parse_dataset(&text).unwrap(), rs);
    }

    #[test]
    fn rank_means_sum_to_ten(rs in records()) {
        let registry = Registry::bundled();
        for g in [GroupBy::All, GroupBy::Category, GroupBy::Pair] {
            for s in rank_summary(&rs, g, &registry).unwrap() {
                let sum: f64 = s.methods.iter().map(|m| m.mean).sum();
                prop_assert!((sum - 10.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn switch_favoured_group_has_mode_one() {
    // SWITCH first in 6 of 10 rankings, second in 2
    let ranks = [
        [2, 1, 3, 4], [3, 1, 2, 4], [4, 1, 2, 3], [2, 1, 4, 3], [3, 1, 4, 2],
        [4, 1, 3, 2], [1, 2, 3, 4], [3, 2, 1, 4], [1, 3, 2, 4], [1, 4, 2, 3],
    ];
    let rs: Vec<_> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| RankingRecord::new(format!("u{i}"), "lion-cat", r).unwrap())
        .collect();
    let s = rank_summary(&rs, GroupBy::Pair, &Registry::bundled()).unwrap();
    let sw = s[0].methods.iter().find(|m| m.method == BlendMethod::Switch).unwrap();
    assert_eq!(sw.mode, 1);
    assert!(sw.median <= 2);
    assert_eq!(sw.mean_3sf, 1.7);
}
