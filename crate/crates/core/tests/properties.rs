use mvlr_core::clustering::{
    assign_to_medoids, dissimilarity, dissimilarity_matrix, label_agreement, pam, silhouette, DissimilarityMatrix,
};
use mvlr_core::numerics::{seeded_rng, standard_complex, standard_complex_vector};
use mvlr_core::*;
use proptest::prelude::*;

fn seqs(seed: u64, n: usize, dims: Dims) -> Vec<WhitenedSeq> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| WhitenedSeq {
            dims,
            y_ww: standard_complex_vector(&mut rng, dims.len()),
            noise_var: 1.0,
        })
        .collect()
}

fn matrix(seed: u64, n: usize) -> DissimilarityMatrix {
    dissimilarity_matrix(&seqs(seed, n, Dims::new(1, 2, 2))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dissimilarity_is_a_bounded_symmetric_score(seed in any::<u64>(), w in 1usize..3, t in 1usize..4, r in 1usize..4) {
        let s = seqs(seed, 2, Dims::new(w, t, r));
        let ab = dissimilarity(&s[0], &s[1]).unwrap();
        let ba = dissimilarity(&s[1], &s[0]).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(dissimilarity(&s[0], &s[0]).unwrap() < 1e-12);
        let mut rng = seeded_rng(seed ^ 1);
        let c = standard_complex(&mut rng);
        let scaled = WhitenedSeq { y_ww: &s[0].y_ww * c, ..s[0].clone() };
        prop_assert!((dissimilarity(&scaled, &s[1]).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn pam_is_swap_stable(seed in any::<u64>(), n in 4usize..16, k in 1usize..4) {
        let d = matrix(seed, n);
        let res = pam(&d, k).unwrap();
        let mut m = res.medoids.clone();
        m.sort_unstable();
        m.dedup();
        prop_assert_eq!(m.len(), k);
        let again = assign_to_medoids(&d, &res.medoids);
        prop_assert!((again.total_dissimilarity - res.total_dissimilarity).abs() < 1e-9);
        for slot in 0..k {
            for cand in (0..n).filter(|c| !res.medoids.contains(c)) {
                let mut trial = res.medoids.clone();
                trial[slot] = cand;
                let cost = assign_to_medoids(&d, &trial).total_dissimilarity;
                prop_assert!(cost >= res.total_dissimilarity - 1e-9);
            }
        }
    }

    #[test]
    fn silhouette_stays_in_range(seed in any::<u64>(), n in 6usize..20, k in 2usize..4) {
        let d = matrix(seed, n);
        let res = pam(&d, k).unwrap();
        let s = silhouette(&d, &res.assignment).unwrap();
        prop_assert!(s.coefficients.iter().all(|c| (-1.0..=1.0).contains(c)));
    }

    #[test]
    fn label_agreement_ignores_label_names(labels in prop::collection::vec(0usize..4, 1..40), shift in 1usize..4) {
        let renamed: Vec<usize> = labels.iter().map(|l| (l + shift) % 4).collect();
        prop_assert!((label_agreement(&renamed, &labels).unwrap() - 1.0).abs() < 1e-12);
    }
}
