use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mgtraj::metrics::{ade_min_k, disc_components, manifold_score, precision, recall};
use mgtraj::sampling::{expand_counts, sample_expectation, sample_random};
use mgtraj::sim::Vec2;

const T: usize = 12;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            let mut v = vec![0.0; w.len()];
            v[0] = 1.0;
            v
        } else {
            w.iter().map(|x| x / s).collect()
        }
    })
}

fn traj() -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), T)
        .prop_map(|v| v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect())
}

fn traj_set(max: usize) -> impl Strategy<Value = Vec<Vec<Vec2>>> {
    prop::collection::vec(traj(), 1..max)
}

proptest! {
    #[test]
    fn expectation_counts_sum_to_k(pi in (1usize..9).prop_flat_map(simplex), k in 1usize..1000) {
        let counts = sample_expectation(&pi, k).unwrap();
        prop_assert_eq!(counts.len(), pi.len());
        prop_assert_eq!(counts.iter().sum::<usize>(), k);
        let ids = expand_counts(&counts);
        prop_assert_eq!(ids.len(), k);
        prop_assert!(ids.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn expectation_counts_are_near_k_pi(pi in (1usize..9).prop_flat_map(simplex), k in 1usize..1000) {
        let counts = sample_expectation(&pi, k).unwrap();
        for (&c, &p) in counts.iter().zip(&pi) {
            let n = c as f64;
            // Rounding moves each count by at most 1/2, and the correction
            // shifts the total error of at most n_G/2 onto single generators.
            prop_assert!((n - k as f64 * p).abs() <= 0.5 * pi.len() as f64 + 0.5 + 1e-9);
        }
    }

    #[test]
    fn random_never_picks_zero_mass(pi in (2usize..9).prop_flat_map(simplex), seed in any::<u64>()) {
        let mut pi = pi;
        pi[0] = 0.0;
        let s: f64 = pi.iter().sum();
        prop_assume!(s > 0.0);
        let pi: Vec<f64> = pi.iter().map(|p| p / s).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(sample_random(&pi, 200, &mut rng).iter().all(|&g| g != 0));
    }

    #[test]
    fn precision_recall_match_brute_force(a in traj_set(8), b in traj_set(8), r in 0.5f64..4.0) {
        // Each step may be covered by a different member of the set.
        let inside = |phi: &Vec<Vec2>, set: &[Vec<Vec2>]| {
            (0..T).all(|t| set.iter().any(|s| phi[t].dist(s[t]) <= r * (t + 1) as f64 / T as f64))
        };
        let p = a.iter().filter(|x| inside(x, &b)).count() as f64 / a.len() as f64;
        let rc = b.iter().filter(|x| inside(x, &a)).count() as f64 / b.len() as f64;
        prop_assert_eq!(precision(&a, &b, r).unwrap(), p);
        prop_assert_eq!(recall(&a, &b, r).unwrap(), rc);
    }

    #[test]
    fn duplicates_change_neither_metric(a in traj_set(6), b in traj_set(6), pick in any::<prop::sample::Index>()) {
        let mut dup = a.clone();
        dup.push(a[pick.index(a.len())].clone());
        prop_assert_eq!(recall(&dup, &b, 2.0).unwrap(), recall(&a, &b, 2.0).unwrap());
        let mut truth = b.clone();
        truth.push(b[pick.index(b.len())].clone());
        prop_assert_eq!(precision(&a, &truth, 2.0).unwrap(), precision(&a, &b, 2.0).unwrap());
        // Precision is a fraction of generated samples; duplicating one that
        // is inside (or outside) keeps it on the same side.
        let inside = manifold_score(dup.last().unwrap(), &b, 2.0) == 1;
        let before = precision(&a, &b, 2.0).unwrap();
        let after = precision(&dup, &b, 2.0).unwrap();
        if inside {
            prop_assert!(after >= before - 1e-12);
        } else {
            prop_assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn score_is_monotone_in_r_max(phi in traj(), set in traj_set(5), r in 0.1f64..5.0, extra in 0.0f64..5.0) {
        if manifold_score(&phi, &set, r) == 1 {
            prop_assert_eq!(manifold_score(&phi, &set, r + extra), 1);
        }
    }

    #[test]
    fn disc_components_match_all_pairs(pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..40), r in 0.05f64..2.0) {
        let pts: Vec<Vec2> = pts.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
        let n = pts.len();
        let mut label: Vec<usize> = (0..n).collect();
        // Relabel until stable: the minimum index reachable through close pairs.
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if pts[i].dist(pts[j]) <= 2.0 * r && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let roots = (0..n).filter(|&i| label[i] == i).count();
        prop_assert_eq!(disc_components(&pts, r), roots);
    }

    #[test]
    fn min_ade_never_grows_with_more_samples(set in traj_set(10), y in traj(), cut in 1usize..10) {
        let cut = cut.min(set.len());
        prop_assert!(ade_min_k(&set, &y).unwrap() <= ade_min_k(&set[..cut], &y).unwrap());
    }
}

/// Pearson χ² of 30,000 random draws against π, 3 degrees of freedom.
#[test]
fn random_strategy_frequencies() {
    let pi = [0.1, 0.2, 0.3, 0.4];
    let n = 30_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ids = sample_random(&pi, n, &mut rng);
    let chi2: f64 = pi
        .iter()
        .enumerate()
        .map(|(g, &p)| {
            let obs = ids.iter().filter(|&&i| i == g).count() as f64;
            let exp = p * n as f64;
            (obs - exp).powi(2) / exp
        })
        .sum();
    // 99.9th percentile of χ²(3).
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}
