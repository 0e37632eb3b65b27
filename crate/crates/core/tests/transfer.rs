use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use taskclust::data::{Example, TaskDataset};
use taskclust::families::{generate_family, Concept, FamilySpec};
use taskclust::nn::TrainConfig;
use taskclust::seed;
use taskclust::transfer::{
    build_transfer_matrix, pair_count, sample_task_pairs, train_all, train_single_task,
    transfer_score,
};
use taskclust::Execution;

/// Two Gaussian blobs in the plane centred at `(+-d, 0)`.
fn blobs(count: usize, d: f64, rng: &mut seed::Rng) -> Vec<Example> {
    (0..count)
        .map(|i| {
            let y = i % 2;
            let cx = if y == 0 { -d } else { d };
            let gx: f64 = StandardNormal.sample(rng);
            let gy: f64 = StandardNormal.sample(rng);
            Example::new(vec![cx + 0.5 * gx, 0.5 * gy], y)
        })
        .collect()
}

fn blob_task(seed_value: u64) -> TaskDataset {
    let mut rng = seed::rng(seed_value);
    TaskDataset::new(
        "blobs",
        2,
        blobs(80, 1.5, &mut rng),
        blobs(40, 1.5, &mut rng),
        blobs(40, 1.5, &mut rng),
    )
}

/// Best accuracy of any line `cos(a) x + sin(a) y > b` on a coarse grid.
fn best_linear_accuracy(examples: &[Example]) -> f64 {
    let mut best: f64 = 0.0;
    for a in 0..72 {
        let angle = a as f64 * std::f64::consts::PI / 36.0;
        for b in -40..=40 {
            let b = b as f64 * 0.1;
            let correct = examples
                .iter()
                .filter(|e| usize::from(angle.cos() * e.x[0] + angle.sin() * e.x[1] > b) == e.y)
                .count();
            best = best.max(correct as f64 / examples.len() as f64);
        }
    }
    best
}

#[test]
fn separable_blobs_are_learned() {
    for s in 0..5 {
        let task = blob_task(s);
        let oracle = best_linear_accuracy(task.train());
        assert!(oracle >= 0.95, "oracle {oracle}");
        let model = train_single_task(
            &task,
            &TrainConfig {
                seed: s,
                ..Default::default()
            },
        )
        .unwrap();
        let acc = model.accuracy(task.train());
        assert!(acc >= oracle - 0.05, "seed {s}: {acc} vs oracle {oracle}");
        assert!(model.accuracy(task.test()) >= 0.9);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let task = blob_task(1);
    let config = TrainConfig::default();
    let a = train_single_task(&task, &config).unwrap();
    assert_eq!(a, train_single_task(&task, &config).unwrap());
    let b = train_single_task(&task, &TrainConfig { seed: 99, ..config }).unwrap();
    assert_ne!(a, b);
}

fn spec() -> FamilySpec {
    FamilySpec {
        clusters: 2,
        tasks_per_cluster: 2,
        ..FamilySpec::default()
    }
}

#[test]
fn self_transfer_matches_own_validation_accuracy() {
    let family = generate_family(&spec(), 3).unwrap();
    let config = TrainConfig::default();
    for task in &family.tasks {
        let model = train_single_task(task, &config).unwrap();
        let own = model.accuracy(task.valid());
        let transfer = transfer_score(&model, task, &config).unwrap();
        assert!((own - transfer).abs() <= 0.05, "{own} vs {transfer}");
    }
}

#[test]
fn relabeled_target_transfers_like_the_original() {
    let spec = spec();
    let mut rng = seed::rng(8);
    let concept = Concept::random(&spec, 0, &mut rng);
    let source =
        train_single_task(&concept.task("s", &spec, &mut rng), &TrainConfig::default()).unwrap();
    let target_rng_seed = 21;
    let plain = concept.task("t", &spec, &mut seed::rng(target_rng_seed));
    let swapped = concept
        .relabeled(&[1, 0])
        .task("t", &spec, &mut seed::rng(target_rng_seed));
    let config = TrainConfig::default();
    let a = transfer_score(&source, &plain, &config).unwrap();
    let b = transfer_score(&source, &swapped, &config).unwrap();
    assert!((a - b).abs() <= 0.05, "{a} vs {b}");
}

#[test]
fn single_validation_example_scores_zero_or_one() {
    let task = blob_task(2);
    let model = train_single_task(&task, &TrainConfig::default()).unwrap();
    let one = TaskDataset::new(
        "one",
        2,
        task.train().to_vec(),
        task.valid()[..1].to_vec(),
        vec![],
    );
    let score = transfer_score(&model, &one, &TrainConfig::default()).unwrap();
    assert!(score == 0.0 || score == 1.0);
}

#[test]
fn observed_entries_follow_the_pairs() {
    let family = generate_family(&spec(), 0).unwrap();
    let two = &family.tasks[..2];
    let config = TrainConfig::default();
    let m = build_transfer_matrix(two, &[(0, 1)], &config, Execution::Sequential).unwrap();
    assert_eq!(m.observed_count(), 4);
    let m = build_transfer_matrix(&family.tasks, &[], &config, Execution::Sequential).unwrap();
    assert_eq!(m.observed_count(), family.tasks.len());
    for i in 0..family.tasks.len() {
        assert_eq!(m.get(i, i), Some(1.0));
    }
}

#[test]
fn identical_tasks_score_alike() {
    let task = blob_task(4);
    let tasks = vec![task.clone(), task.clone(), task.clone(), task];
    let pairs: Vec<(usize, usize)> = (0..4)
        .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
        .collect();
    let m = build_transfer_matrix(
        &tasks,
        &pairs,
        &TrainConfig::default(),
        Execution::Sequential,
    )
    .unwrap();
    let scores: Vec<f64> = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .map(|(i, j)| m.get(i, j).unwrap())
        .collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(0.0, f64::max);
    assert!(hi - lo <= 0.1, "{scores:?}");
}

#[test]
fn in_cluster_transfer_beats_cross_cluster() {
    let family = generate_family(&FamilySpec::default(), 5).unwrap();
    let n = family.tasks.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let m = build_transfer_matrix(
        &family.tasks,
        &pairs,
        &TrainConfig::default(),
        Execution::default(),
    )
    .unwrap();
    let (mut within, mut cross) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = m.get(i, j).unwrap();
                if family.membership[i] == family.membership[j] {
                    within.push(v);
                } else {
                    cross.push(v);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&within) > mean(&cross) + 0.1,
        "{} vs {}",
        mean(&within),
        mean(&cross)
    );
}

#[test]
fn single_pair_draws_are_uniform() {
    let n = 10;
    let trials = 10_000;
    let mut counts = vec![0usize; pair_count(n)];
    for s in 0..trials {
        let pairs = sample_task_pairs(n, 1, s).unwrap();
        let (i, j) = pairs[0];
        counts[i * (2 * n - i - 1) / 2 + (j - i - 1)] += 1;
    }
    let p = 1.0 / pair_count(n) as f64;
    let mean = trials as f64 * p;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    // 45 cells at 3 sigma: a false alarm needs a ~0.3% event in some cell;
    // allow one straggler but no gross deviation
    let outside = counts
        .iter()
        .filter(|&&c| (c as f64 - mean).abs() > 3.0 * sd)
        .count();
    assert!(outside <= 1, "{counts:?}");
    assert!(
        counts.iter().all(|&c| (c as f64 - mean).abs() <= 4.5 * sd),
        "{counts:?}"
    );
}

#[test]
fn transfer_leaves_the_source_untouched() {
    let family = generate_family(&spec(), 1).unwrap();
    let model = train_single_task(&family.tasks[0], &TrainConfig::default()).unwrap();
    let before = model.clone();
    transfer_score(&model, &family.tasks[1], &TrainConfig::default()).unwrap();
    assert_eq!(model, before);
}

#[test]
fn input_errors() {
    let task = blob_task(0);
    let model = train_single_task(&task, &TrainConfig::default()).unwrap();
    let mut rng = seed::rng(0);
    let wide = TaskDataset::new(
        "wide",
        2,
        (0..10)
            .map(|i| Example::new(vec![rng.random(); 3], i % 2))
            .collect(),
        (0..4).map(|i| Example::new(vec![0.0; 3], i % 2)).collect(),
        vec![],
    );
    let config = TrainConfig::default();
    assert_eq!(
        transfer_score(&model, &wide, &config).unwrap_err().code(),
        "dim-mismatch"
    );
    let no_valid = TaskDataset::new("nv", 2, task.train().to_vec(), vec![], vec![]);
    assert_eq!(
        transfer_score(&model, &no_valid, &config)
            .unwrap_err()
            .code(),
        "empty-valid"
    );
    let empty = TaskDataset::new("e", 2, vec![], vec![], vec![]);
    assert_eq!(
        train_single_task(&empty, &config).unwrap_err().code(),
        "empty-train"
    );
    assert_eq!(
        sample_task_pairs(4, 7, 0).unwrap_err().code(),
        "budget-too-large"
    );
}

#[test]
fn training_is_identical_in_both_execution_modes() {
    let family = generate_family(&spec(), 6).unwrap();
    let config = TrainConfig::default();
    assert_eq!(
        train_all(&family.tasks, &config, Execution::Sequential).unwrap(),
        train_all(&family.tasks, &config, Execution::Parallel).unwrap()
    );
    let pairs = sample_task_pairs(4, 4, 3).unwrap();
    assert_eq!(
        build_transfer_matrix(&family.tasks, &pairs, &config, Execution::Sequential).unwrap(),
        build_transfer_matrix(&family.tasks, &pairs, &config, Execution::Parallel).unwrap()
    );
}
