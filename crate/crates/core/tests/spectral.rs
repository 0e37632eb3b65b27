use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng as _;
use taskclust::seed;
use taskclust::spectral::{adjusted_rand_index, kmeans, spectral_cluster, SpectralConfig};
use taskclust::Execution;

/// Block affinity with symmetric uniform noise of amplitude `noise`, clipped to [0, 1].
fn noisy_blocks(membership: &[usize], noise: f64, seed_value: u64) -> DMatrix<f64> {
    let n = membership.len();
    let mut rng = seed::rng(seed_value);
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let base = if membership[i] == membership[j] {
                0.9
            } else {
                0.1
            };
            let v: f64 = (base + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
    x
}

fn shuffled(n: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed_value);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

#[test]
fn relabeling_tasks_permutes_the_partition() {
    let membership: Vec<usize> = (0..15).map(|i| i % 3).collect();
    for s in 0..10 {
        let x = noisy_blocks(&membership, 0.08, s);
        let perm = shuffled(15, s + 100);
        let px = DMatrix::from_fn(15, 15, |i, j| x[(perm[i], perm[j])]);
        let a = spectral_cluster(&x, 3, s).unwrap().assignment;
        let b = spectral_cluster(&px, 3, s).unwrap().assignment;
        let a_permuted: Vec<usize> = perm.iter().map(|&p| a[p]).collect();
        assert_eq!(adjusted_rand_index(&a_permuted, &b), 1.0, "seed {s}");
    }
}

#[test]
fn scaling_the_affinity_changes_nothing() {
    let membership: Vec<usize> = (0..12).map(|i| i / 4).collect();
    for s in 0..10 {
        let x = noisy_blocks(&membership, 0.08, s);
        let a = spectral_cluster(&x, 3, 7).unwrap();
        for c in [0.01, 3.0, 250.0] {
            assert_eq!(
                spectral_cluster(&(&x * c), 3, 7).unwrap().assignment,
                a.assignment,
                "seed {s}, scale {c}"
            );
        }
    }
}

fn normalized_cut(x: &DMatrix<f64>, side: &[bool]) -> f64 {
    let n = x.nrows();
    let (mut cut, mut vol_a, mut vol_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = x[(i, j)];
            if side[i] {
                vol_a += w;
            } else {
                vol_b += w;
            }
            if side[i] && !side[j] {
                cut += w;
            }
        }
    }
    cut / vol_a + cut / vol_b
}

#[test]
fn two_way_split_is_the_minimum_normalized_cut() {
    for s in 0..20 {
        let mut rng = seed::rng(seed::derive(s, &[0]));
        let left = rng.random_range(2..=6);
        let membership: Vec<usize> = (0..8).map(|i| usize::from(i >= left)).collect();
        let x = noisy_blocks(&membership, 0.05, s);

        // enumerate all bipartitions with item 0 on side A
        let mut best = (f64::INFINITY, Vec::new());
        for bits in 0u32..(1 << 7) {
            let side: Vec<bool> = (0..8).map(|i| i == 0 || bits >> (i - 1) & 1 == 0).collect();
            if side.iter().all(|&b| b) {
                continue;
            }
            let value = normalized_cut(&x, &side);
            if value < best.0 {
                best = (value, side);
            }
        }
        let want: Vec<usize> = best.1.iter().map(|&a| usize::from(!a)).collect();
        let got = spectral_cluster(&x, 2, s).unwrap().assignment;
        assert_eq!(adjusted_rand_index(&got, &want), 1.0, "seed {s}");
    }
}

#[test]
fn kmeans_is_identical_in_both_execution_modes() {
    let mut rng = seed::rng(5);
    let points: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let c = (i % 4) as f64;
            vec![
                c + rng.random_range(-0.6..0.6),
                c * c + rng.random_range(-0.6..0.6),
            ]
        })
        .collect();
    let config = SpectralConfig::default();
    let a = kmeans(&points, 4, 11, &config, Execution::Sequential).unwrap();
    let b = kmeans(&points, 4, 11, &config, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

fn labeling(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #[test]
    fn ari_is_one_on_itself_and_symmetric(a in labeling(12, 4), b in labeling(12, 4)) {
        prop_assert!((adjusted_rand_index(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&a, &b) - adjusted_rand_index(&b, &a)).abs() < 1e-12);
        prop_assert!(adjusted_rand_index(&a, &b) <= 1.0 + 1e-12);
    }

    #[test]
    fn ari_ignores_label_names(a in labeling(12, 4), b in labeling(12, 4), shift in 1usize..4) {
        let renamed: Vec<usize> = a.iter().map(|&l| (l + shift) % 4).collect();
        prop_assert!((adjusted_rand_index(&renamed, &b) - adjusted_rand_index(&a, &b)).abs() < 1e-12);
    }
}
