//! End-to-end acceptance checks. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line; exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cbcl_core::harness::{
    fit_slope, generate_synthetic, run_budget_sweep, run_experiment, run_timing_bench,
    DatasetSource, ExperimentConfig, Method, RunReport, Shots, SyntheticConfig, TimingConfig,
};
use cbcl_core::memory::reduction_targets;
use cbcl_core::rehearsal::sample_cluster;
use cbcl_core::{
    cluster_class, split_by_class, Budget, Cluster, Covariance, CovarianceMode, FeatureDataset,
    FeatureRecord, LinearClassifier, MemoryStore, ReductionPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------------------------------

fn two_pass_covariance(members: &[&[f32]]) -> (Vec<f64>, Vec<f64>) {
    let n = members.len();
    let d = members[0].len();
    let mut mean = vec![0.0; d];
    for m in members {
        for (a, &x) in mean.iter_mut().zip(*m) {
            *a += x as f64 / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for m in members {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] +=
                        (m[i] as f64 - mean[i]) * (m[j] as f64 - mean[j]) / (n - 1) as f64;
                }
            }
        }
    }
    (mean, cov)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for instance in 0..1000 {
        let n = rng.random_range(1..80);
        let d = rng.random_range(1..9);
        let scale = rng.random_range(0.2..3.0);
        let vectors: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| (scale * normal(&mut rng)) as f32).collect())
            .collect();
        let threshold = match instance % 10 {
            0 => 0.0,
            1 => f64::INFINITY,
            _ => rng.random_range(0.1..4.0) * scale * (d as f64).sqrt(),
        };
        let out = cluster_class(&vectors, threshold, CovarianceMode::Full).unwrap();

        let total: u32 = out.clusters.iter().map(|c| c.count).sum();
        if total as usize != n {
            failures.push(format!(
                "instance {instance}: counts sum to {total}, expected {n}"
            ));
        }
        if threshold == 0.0 && out.clusters.len() != n {
            failures.push(format!(
                "instance {instance}: D=0 gave {} clusters",
                out.clusters.len()
            ));
        }
        if threshold.is_infinite() && out.clusters.len() != 1 {
            failures.push(format!(
                "instance {instance}: D=inf gave {} clusters",
                out.clusters.len()
            ));
        }
        for (k, cluster) in out.clusters.iter().enumerate() {
            let members: Vec<&[f32]> = vectors
                .iter()
                .zip(&out.assignment)
                .filter(|(_, &a)| a == k)
                .map(|(v, _)| v.as_slice())
                .collect();
            if members.len() != cluster.count as usize {
                failures.push(format!("instance {instance}: cluster {k} count mismatch"));
                continue;
            }
            let (mean, cov) = two_pass_covariance(&members);
            let mean_err = mean
                .iter()
                .zip(&cluster.centroid)
                .map(|(m, &c)| (m - c as f64).abs())
                .fold(0.0, f64::max);
            let cov_err = cov
                .iter()
                .enumerate()
                .map(|(idx, &o)| {
                    (o - cluster.covariance.get(d, idx / d, idx % d) as f64).abs()
                        / o.abs().max(1.0)
                })
                .fold(0.0, f64::max);
            worst_mean = worst_mean.max(mean_err);
            worst_cov = worst_cov.max(cov_err);
        }
    }
    let pass = failures.is_empty() && worst_mean <= 1e-4 && worst_cov <= 1e-5;
    let mut detail = format!("1000 instances; max |centroid - mean| = {worst_mean:.2e}, max covariance error = {worst_cov:.2e}");
    if let Some(f) = failures.first() {
        detail += &format!("; {} structural failures, first: {f}", failures.len());
    }
    outcome(pass, detail)
}

// ---------------------------------------------------------------------------------------

fn random_cluster(rng: &mut ChaCha8Rng, diagonal: bool) -> Cluster {
    let d = rng.random_range(1..=16);
    let centroid: Vec<f32> = (0..d).map(|_| (5.0 * normal(rng)) as f32).collect();
    let covariance = if diagonal {
        Covariance::Diagonal((0..d).map(|_| rng.random_range(0.01..4.0) as f32).collect())
    } else {
        // A A^T with A of random rank, so some covariances are singular.
        let r = rng.random_range(1..=d);
        let a: Vec<f64> = (0..d * r).map(|_| normal(rng)).collect();
        let mut s = vec![0.0f32; d * d];
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = (0..r).map(|k| a[i * r + k] * a[j * r + k]).sum::<f64>() as f32;
            }
        }
        Covariance::Full(s)
    };
    Cluster {
        centroid,
        count: rng.random_range(2..500),
        covariance,
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000usize;
    let (mut worst_mean_ratio, mut worst_cov) = (0.0f64, 0.0f64);
    for i in 0..100u64 {
        let cluster = random_cluster(&mut rng, i % 2 == 1);
        let d = cluster.dim();
        let samples = sample_cluster(&cluster, n, 1000 + i).unwrap();
        let refs: Vec<&[f32]> = samples.iter().map(Vec::as_slice).collect();
        let (mean, cov) = two_pass_covariance(&refs);
        let target: Vec<f64> = (0..d * d)
            .map(|idx| cluster.covariance.get(d, idx / d, idx % d) as f64)
            .collect();
        let var_max = (0..d).map(|j| target[j * d + j]).fold(0.0, f64::max);
        let bound = 5.0 * (var_max / n as f64).sqrt();
        let mean_err = mean
            .iter()
            .zip(&cluster.centroid)
            .map(|(m, &c)| (m - c as f64).abs())
            .fold(0.0, f64::max);
        worst_mean_ratio = worst_mean_ratio.max(mean_err / bound);
        let diff: f64 = cov
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = target.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst_cov = worst_cov.max(diff / norm);
    }
    outcome(
        worst_mean_ratio <= 1.0 && worst_cov <= 0.10,
        format!(
            "100 clusters x 10000 samples; worst mean error = {worst_mean_ratio:.3} of 5*sqrt(var_max/n), worst covariance Frobenius error = {:.2}%",
            100.0 * worst_cov
        ),
    )
}

// ---------------------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for instance in 0..50u64 {
        let dim = rng.random_range(1..6);
        let classes = rng.random_range(2..5);
        let use_bias = instance % 3 != 0;
        let mut clf = LinearClassifier::new(dim, classes, use_bias, instance).unwrap();
        for w in clf.weights_mut() {
            *w = normal(&mut rng);
        }
        for b in clf.bias_mut() {
            *b = normal(&mut rng);
        }
        let batch: Vec<FeatureRecord> = (0..rng.random_range(1..8))
            .map(|_| {
                FeatureRecord::new(
                    rng.random_range(0..classes as u32),
                    (0..dim).map(|_| normal(&mut rng) as f32).collect(),
                )
            })
            .collect();
        let refs: Vec<&FeatureRecord> = batch.iter().collect();
        let analytic = clf.loss_and_gradient(&refs).unwrap();

        let h = 1e-5;
        let mut check = |analytic: f64, numeric: f64| {
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        };
        for i in 0..clf.weights().len() {
            let base = clf.weights()[i];
            clf.weights_mut()[i] = base + h;
            let up = clf.loss_and_gradient(&refs).unwrap().loss;
            clf.weights_mut()[i] = base - h;
            let down = clf.loss_and_gradient(&refs).unwrap().loss;
            clf.weights_mut()[i] = base;
            check(analytic.weights[i], (up - down) / (2.0 * h));
        }
        if use_bias {
            for i in 0..classes {
                let base = clf.bias()[i];
                clf.bias_mut()[i] = base + h;
                let up = clf.loss_and_gradient(&refs).unwrap().loss;
                clf.bias_mut()[i] = base - h;
                let down = clf.loss_and_gradient(&refs).unwrap().loss;
                clf.bias_mut()[i] = base;
                check(analytic.bias[i], (up - down) / (2.0 * h));
            }
        }
    }
    outcome(
        worst <= 1e-4,
        format!("50 instances; worst relative gradient error = {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------------------

fn benchmark() -> (FeatureDataset, FeatureDataset) {
    generate_synthetic(&SyntheticConfig::default()).unwrap()
}

fn run(method: Method, shots: Shots, train: &FeatureDataset, test: &FeatureDataset) -> RunReport {
    let cfg = ExperimentConfig {
        method,
        shots,
        classes_per_increment: 2,
        ..Default::default()
    };
    run_experiment(&cfg, &DatasetSource::new(train), test).unwrap()
}

fn final_old_accuracy(r: &RunReport) -> f64 {
    let finals: Vec<f64> = r
        .runs
        .iter()
        .map(|s| s.increments.last().unwrap().old_class_accuracy.unwrap())
        .collect();
    finals.iter().sum::<f64>() / finals.len() as f64
}

fn criterion_4() -> Outcome {
    let (train, test) = benchmark();
    let ft = run(Method::Ft, Shots::All, &train, &test);
    let pr = run(Method::CbclPr, Shots::All, &train, &test);
    let flb = run(Method::Flb, Shots::All, &train, &test);
    let ncm = run(Method::Ncm, Shots::All, &train, &test);

    let ft_old = 100.0 * final_old_accuracy(&ft);
    let (pr_final, flb_final) = (
        100.0 * pr.summary.mean_final_accuracy,
        100.0 * flb.summary.mean_final_accuracy,
    );
    let (pr_avg, ncm_avg) = (
        100.0 * pr.summary.mean_average_incremental_accuracy,
        100.0 * ncm.summary.mean_average_incremental_accuracy,
    );
    let a = ft_old <= 10.0;
    let b = flb_final - pr_final <= 5.0;
    let c = pr_avg - ncm_avg >= 5.0;
    let tick = |ok: bool| if ok { "ok" } else { "FAILED" };
    outcome(
        a && b && c,
        format!(
            "(a) FT final old-class accuracy {ft_old:.1}% <= 10% {}; (b) CBCL-PR final {pr_final:.1}% vs FLB {flb_final:.1}% (gap {:.1} <= 5) {}; (c) CBCL-PR average {pr_avg:.1}% vs NCM {ncm_avg:.1}% (margin {:.1} >= 5) {}",
            tick(a),
            flb_final - pr_final,
            tick(b),
            pr_avg - ncm_avg,
            tick(c)
        ),
    )
}

fn criterion_5() -> Outcome {
    let (train, test) = benchmark();
    let shots = Shots::Few(5);
    let pr = run(Method::CbclPr, shots, &train, &test);
    let cbcl = run(Method::Cbcl, shots, &train, &test);
    let ft = run(Method::Ft, shots, &train, &test);
    let real: usize = pr.records().map(|r| r.real_in_mix).sum();
    let pseudo_ok = pr
        .records()
        .all(|r| r.pseudo_in_mix == 40 * r.classes_seen && r.train_size == r.pseudo_in_mix);
    let [p, c, f] = [&pr, &cbcl, &ft].map(|r| 100.0 * r.summary.mean_average_incremental_accuracy);
    outcome(
        p >= c && p >= f && real == 0 && pseudo_ok,
        format!(
            "5-shot average incremental accuracy: CBCL-PR {p:.1}%, CBCL {c:.1}%, FT {f:.1}%; real vectors in training mixes = {real}; 40 pseudo-exemplars per seen class every increment: {pseudo_ok}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let (train, test) = benchmark();
    let k = 32;
    let mut problems = Vec::new();
    let mut reductions = (0, 0);

    // Absorb class by class under the budget, checking the total and the targets each time.
    let by_class = split_by_class(&train);
    let mut store = MemoryStore::new(CovarianceMode::Full, Budget::Clusters(k));
    for (&class, records) in &by_class {
        let clusters = cluster_class(records, 20.0, CovarianceMode::Full)
            .unwrap()
            .clusters;
        let before: BTreeMap<u32, usize> = store
            .classes()
            .map(|c| (c.class_id, c.clusters.len()))
            .collect();
        let (k_t, k_new) = (store.total_clusters(), clusters.len());
        store.absorb(class, clusters, records.len() as u64).unwrap();
        if store.total_clusters() > k {
            problems.push(format!(
                "class {class}: {} clusters after absorb",
                store.total_clusters()
            ));
        }
        if k_t + k_new > k && k_t > 0 {
            let k_r = k_t + k_new - k;
            if k_r < k_t && k_t - k_r >= before.len() {
                let targets = reduction_targets(&before, k_r).unwrap();
                let keep = 1.0 - k_r as f64 / k_t as f64;
                // Clamping a class to one cluster has to be paid for by trimming the largest
                // classes below their floor, so proportionality is only checked without it.
                let clamped = before.values().any(|&n| n * (k_t - k_r) / k_t == 0);
                if clamped {
                    reductions.1 += 1;
                } else {
                    reductions.0 += 1;
                }
                for (id, &n) in &before {
                    let got = store.class(*id).unwrap().clusters.len();
                    if got != targets[id] {
                        problems.push(format!(
                            "class {id}: {got} clusters, target {}",
                            targets[id]
                        ));
                    }
                    if !clamped
                        && n as f64 >= k_t as f64 / k_r as f64
                        && (got as f64 / n as f64 - keep).abs() > 1.0 / n as f64
                    {
                        problems.push(format!("class {id}: {n} -> {got} outside floor slack"));
                    }
                }
            }
        }
    }

    let cfg = ExperimentConfig {
        method: Method::CbclPr,
        classes_per_increment: 2,
        ..Default::default()
    };
    let sweep = run_budget_sweep(
        &cfg,
        &DatasetSource::new(&train),
        &test,
        &[Budget::Clusters(k)],
    )
    .unwrap();
    let reduce = &sweep[0].reduce;
    let remove = &sweep[0].remove;
    if reduce
        .records()
        .chain(remove.records())
        .any(|r| r.total_clusters > k)
    {
        problems.push("an increment ended over budget".into());
    }
    let (a, b) = (
        100.0 * reduce.summary.mean_average_incremental_accuracy,
        100.0 * remove.summary.mean_average_incremental_accuracy,
    );
    let mut detail = format!(
        "K={k}: budget and targets held on every absorb: {} ({} proportional reductions, {} with clamping); reduce {a:.1}% vs remove {b:.1}% average incremental accuracy over {} seeds",
        problems.is_empty(),
        reductions.0,
        reductions.1,
        reduce.summary.seeds.len()
    );
    if let Some(p) = problems.first() {
        detail += &format!("; first problem: {p}");
    }
    outcome(problems.is_empty() && a >= b, detail)
}

fn criterion_7() -> Outcome {
    let points = run_timing_bench(&TimingConfig::default()).unwrap();
    let xs: Vec<f64> = points.iter().map(|p| p.centroids as f64).collect();
    let voting = fit_slope(
        &xs,
        &points
            .iter()
            .map(|p| p.voting_median_us)
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let linear = fit_slope(
        &xs,
        &points
            .iter()
            .map(|p| p.linear_median_us)
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let table: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "{}: {:.1}/{:.1}us",
                p.centroids, p.voting_median_us, p.linear_median_us
            )
        })
        .collect();
    let ratio = linear.slope.abs() / voting.slope;
    outcome(
        voting.slope > 0.0 && voting.p_value < 0.01 && ratio < 0.05,
        format!(
            "voting slope {:.4} us/centroid (p = {:.1e}); linear slope {:.2e} us/centroid = {:.2}% of voting; medians voting/linear [{}]",
            voting.slope,
            voting.p_value,
            linear.slope,
            100.0 * ratio,
            table.join(", ")
        ),
    )
}

fn jsonl(
    cfg: &ExperimentConfig,
    train: &FeatureDataset,
    test: &FeatureDataset,
    threads: usize,
) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let report = pool.install(|| run_experiment(cfg, &DatasetSource::new(train), test).unwrap());
    let mut out = Vec::new();
    report.write_jsonl(&mut out).unwrap();
    out
}

fn criterion_8() -> Outcome {
    let (train, test) = benchmark();
    let configs = [
        ExperimentConfig {
            method: Method::CbclPr,
            budget: Budget::Clusters(40),
            ..Default::default()
        },
        ExperimentConfig {
            method: Method::CbclPr,
            shots: Shots::Few(5),
            ..Default::default()
        },
        ExperimentConfig {
            method: Method::KmeansPr,
            budget: Budget::Clusters(40),
            reduction: ReductionPolicy::Remove,
            ..Default::default()
        },
        ExperimentConfig {
            method: Method::Flb,
            ..Default::default()
        },
    ];
    let mut same = 0;
    for cfg in &configs {
        let cfg = ExperimentConfig {
            seeds: vec![0, 1, 2],
            classes_per_increment: 4,
            ..cfg.clone()
        };
        let a = jsonl(&cfg, &train, &test, 4);
        let b = jsonl(&cfg, &train, &test, 4);
        let c = jsonl(&cfg, &train, &test, 1);
        if a == b && a == c {
            same += 1;
        }
    }
    outcome(
        same == configs.len(),
        format!(
            "{same}/{} configurations byte-identical across reruns and thread counts (4, 4, 1)",
            configs.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("Agg-Var correctness", criterion_1),
        ("rehearsal moment fidelity", criterion_2),
        ("classifier gradient check", criterion_3),
        ("forgetting benchmark", criterion_4),
        ("few-shot benchmark", criterion_5),
        ("budget and reduction", criterion_6),
        ("prediction timing", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name} ({:.1}s): {}",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
