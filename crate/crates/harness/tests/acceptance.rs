//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! to stderr (not captured by the test runner) and then asserts.

use std::io::Write;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raynn_core::bundle::{optimal_bundling, CostCoefficients, CostModel};
use raynn_core::bvh::{Bvh, Visit};
use raynn_core::geom::Point3;
use raynn_core::partition::PartitionSummary;
use raynn_core::pipeline::{make_query_ray, OptLevel, SearchConfig, SearchMode, WidthPolicy};
use raynn_core::schedule::first_hit_pass;
use raynn_harness::calibrate::{fit_line, time_bvh_build};
use raynn_harness::run::{run_search, RunOptions, RunOutput};
use raynn_harness::synth::{Distribution, Synth};

/// Criteria run one at a time so timings are not skewed by each other.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n}: {verdict}  {}", detail.as_ref());
}

fn checked(cfg: &SearchConfig, points: &[Point3], queries: &[Point3]) -> RunOutput {
    run_search(cfg, points, queries, &RunOptions { check_oracle: true, ..Default::default() }).unwrap()
}

const LEVELS: [OptLevel; 4] = [OptLevel::None, OptLevel::Sched, OptLevel::SchedPart, OptLevel::SchedPartBundle];

#[test]
fn criterion_1_oracle_exactness_without_optimizations() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let radii = [0.05, 0.1, 0.5];
    let ks = [1, 5, 8, 32];
    let mut failures = Vec::new();
    for i in 0..20 {
        let dist = if i % 2 == 0 { Distribution::Uniform } else { Distribution::Clustered };
        let synth = Synth::new(dist, 100 + i as u64);
        let n = rng.random_range(1_000..=10_000);
        let nq = rng.random_range(100..=1_000);
        let (points, queries) = (synth.points(n), synth.queries(nq));
        let (r, k) = (radii[i % 3], ks[i % 4]);
        for mode in [SearchMode::Knn, SearchMode::Range] {
            let cfg = SearchConfig::new(mode, r, k);
            let oracle = checked(&cfg, &points, &queries).report.oracle.unwrap();
            if !oracle.exact_match {
                failures.push(format!("#{i} {mode:?} n={n} r={r} k={k}: {} queries", oracle.mismatched_queries));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 120.0;
    report(1, pass, format!("20 instances x {{knn, range}}, {} mismatches, {secs:.1}s (< 120s)", failures.len()));
    assert!(failures.is_empty(), "{failures:?}");
    assert!(secs < 120.0);
}

#[test]
fn criterion_2_optimization_levels_agree() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut problems = Vec::new();
    let mut instances = 0;
    for (i, dist) in [Distribution::Uniform, Distribution::Clustered].into_iter().enumerate() {
        for (r, k) in [(0.05, 8), (0.1, 32), (0.2, 1)] {
            instances += 1;
            let synth = Synth::new(dist, 200 + i as u64);
            let (points, queries) = (synth.points(20_000), synth.queries(2_000));
            let mut digests = Vec::new();
            for level in LEVELS {
                let knn = checked(&SearchConfig::knn(r, k).with_opt_level(level), &points, &queries);
                digests.push(knn.report.digest);
                let range = checked(&SearchConfig::range(r, k).with_opt_level(level), &points, &queries);
                let oracle = range.report.oracle.unwrap();
                if !oracle.exact_match {
                    problems.push(format!("{dist:?} r={r} k={k} {level:?} range: {} queries", oracle.mismatched_queries));
                }
            }
            if digests.windows(2).any(|w| w[0] != w[1]) {
                problems.push(format!("{dist:?} r={r} k={k}: knn digests differ {digests:?}"));
            }
        }
    }
    report(2, problems.is_empty(), format!("{instances} instances x 4 levels, {} problems", problems.len()));
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn criterion_3_equivolume_recall() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = SearchConfig::knn(0.05, 8).with_policy(WidthPolicy::EquiVolume).with_opt_level(OptLevel::SchedPart);
    let recall = |dist| {
        let synth = Synth::new(dist, 3);
        let out = checked(&cfg, &synth.points(100_000), &synth.queries(10_000));
        out.report.oracle.unwrap().recall
    };
    let uniform = recall(Distribution::Uniform);
    let clustered = recall(Distribution::Clustered);
    let pass = uniform >= 0.99;
    report(3, pass, format!("uniform recall {uniform:.5} (>= 0.99), clustered recall {clustered:.5} (reported)"));
    assert!(pass);
}

#[test]
fn criterion_4_cubic_work_growth() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let synth = Synth::new(Distribution::Uniform, 4);
    let points = synth.points(100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries: Vec<Point3> = (0..2_000)
        .map(|_| Point3::new(rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)))
        .collect();
    let mean_calls = |width: f64| {
        let bvh = Bvh::build(&points, width / 2.0).unwrap();
        let calls: u64 = queries.iter().map(|&q| bvh.traverse(&make_query_ray(q), |_, _| Visit::Continue).visitor_calls).sum();
        calls as f64 / queries.len() as f64
    };
    let widths = [0.02, 0.04, 0.08];
    let calls: Vec<f64> = widths.iter().map(|&w| mean_calls(w)).collect();
    let ratios = [calls[1] / calls[0], calls[2] / calls[1]];
    let pass = ratios.iter().all(|r| (4.0..=16.0).contains(r));
    report(4, pass, format!("mean visitor calls {calls:.1?} at widths {widths:?}, ratios {ratios:.2?} (in [4, 16])"));
    assert!(pass);
}

#[test]
fn criterion_5_bvh_build_linearity() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let sizes = [100_000usize, 300_000, 1_000_000, 3_000_000];
    let points = Synth::new(Distribution::Uniform, 5).points(*sizes.last().unwrap());
    let ms: Vec<f64> = sizes.iter().map(|&n| time_bvh_build(&points[..n], 0.01, 3).unwrap()).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let fit = fit_line(&xs, &ms).unwrap();
    let pass = fit.r_squared >= 0.95;
    report(5, pass, format!("build ms {ms:.1?} at {sizes:?}, R² {:.4} (>= 0.95)", fit.r_squared));
    assert!(pass);
}

/// Every set partition of `0..m`.
fn set_partitions(m: usize) -> Vec<Vec<Vec<usize>>> {
    fn go(i: usize, m: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == m {
            let mut groups = vec![Vec::new(); labels.iter().max().map_or(0, |x| x + 1)];
            for (e, &l) in labels.iter().enumerate() {
                groups[l].push(e);
            }
            out.push(groups);
            return;
        }
        for l in 0..=labels.iter().max().map_or(0, |x| x + 1) {
            labels.push(l);
            go(i + 1, m, labels, out);
            labels.pop();
        }
    }
    let mut out = Vec::new();
    go(0, m, &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_6_bundling_optimality() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let coefficients = CostCoefficients::default();
    let (k, cell) = (8usize, 0.01);
    let (mut misses, mut worst_gap, mut nontrivial, mut merge_violations) = (0, 0.0f64, 0, 0);
    let mut example = None;
    for _ in 0..200 {
        // inverse correlation: megacell steps strictly increase while query
        // counts strictly decrease
        let m = rng.random_range(1..=5usize);
        let mut steps: Vec<u32> = (0..10).collect();
        for i in (1..steps.len()).rev() {
            steps.swap(i, rng.random_range(0..=i));
        }
        let mut steps = steps[..m].to_vec();
        steps.sort_unstable();
        let mut counts: Vec<usize> = Vec::new();
        while counts.len() < m {
            let c = rng.random_range(1..20_000usize);
            if !counts.contains(&c) {
                counts.push(c);
            }
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let parts: Vec<PartitionSummary> = steps
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| {
                let c = (2 * s + 1) as f64 * cell;
                PartitionSummary {
                    num_queries: n,
                    aabb_width: 3f64.sqrt() * c,
                    megacell_width: c,
                    density: k as f64 / c.powi(3),
                    needs_sphere_test: true,
                }
            })
            .collect();
        // build cost between 1% and ~30x the unmerged search cost, so
        // bundling decisions are not foregone
        let total: usize = counts.iter().sum();
        let scale = 10f64.powf(rng.random_range(-2.0..1.5));
        let num_points = (coefficients.k2 * k as f64 * total as f64 * scale) as usize;
        let model = CostModel { mode: SearchMode::Knn, k, num_points, coefficients };

        let plan = optimal_bundling(&parts, &model);
        assert!(plan.assumption_held && plan.evaluations() == m);
        if plan.num_bundles > 1 && plan.num_bundles < m {
            nontrivial += 1;
        }
        for group in plan.groups() {
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a + 1..] {
                    let merged = model.search_cost(&[parts[i], parts[j]]);
                    let apart = model.search_cost(&[parts[i]]) + model.search_cost(&[parts[j]]);
                    if merged < apart * (1.0 - 1e-12) {
                        merge_violations += 1;
                    }
                }
            }
        }
        let cost = |groups: &Vec<Vec<usize>>| {
            groups.iter().map(|g| model.bundle_cost(&g.iter().map(|&i| parts[i]).collect::<Vec<_>>())).sum::<f64>()
        };
        let all = set_partitions(m);
        let best = all.iter().min_by(|a, b| cost(a).total_cmp(&cost(b))).unwrap();
        let best_cost = cost(best);
        if plan.estimated_cost > best_cost * (1.0 + 1e-12) {
            misses += 1;
            let gap = plan.estimated_cost / best_cost - 1.0;
            worst_gap = worst_gap.max(gap);
            example.get_or_insert_with(|| {
                format!("steps {steps:?} counts {counts:?} num_points {num_points}: plan {:?} vs best {best:?}", plan.groups())
            });
        }
    }
    let pass = misses == 0 && merge_violations == 0;
    report(
        6,
        pass,
        format!(
            "200 trials ({nontrivial} with 1 < M_o < M): {misses} plans above the exhaustive minimum (worst +{:.2}%), \
             {merge_violations} merge-inequality violations",
            100.0 * worst_gap
        ),
    );
    if let Some(e) = &example {
        let _ = writeln!(std::io::stderr(), "    first counterexample: {e}");
    }
    assert_eq!(merge_violations, 0);
    assert_eq!(misses, 0, "tail-merge plan is not globally optimal; first counterexample: {example:?}");
}

#[test]
fn criterion_7_first_hit_truncation() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let synth = Synth::new(Distribution::Clustered, 7);
    let points = synth.points(100_000);
    let queries = synth.queries(100_000);
    let bvh = Bvh::build(&points, 0.05).unwrap();
    let pass_direct = {
        let hits = first_hit_pass(&bvh, &queries);
        hits.max_visitor_calls_per_query <= 1 && hits.stats.visitor_calls as usize == hits.num_assigned()
    };
    let cfg = SearchConfig::knn(0.05, 8).with_opt_level(OptLevel::SchedPartBundle);
    let out = run_search(&cfg, &points, &queries, &RunOptions::default()).unwrap();
    let pass_pipeline = out.report.stats.first_search_max_visitor_calls <= 1;
    let pass = pass_direct && pass_pipeline;
    report(
        7,
        pass,
        format!(
            "100000 queries, max visitor calls per query {} in the pipeline, {} total over {} bundles",
            out.report.stats.first_search_max_visitor_calls,
            out.report.stats.first_search.visitor_calls,
            out.report.plan.bundles.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    // all cores, but at least 8 so a small machine still splits work unevenly
    let available = std::thread::available_parallelism().map_or(1, |n| n.get()).max(8);
    let synth = Synth::new(Distribution::Clustered, 8);
    let (points, queries) = (synth.points(50_000), synth.queries(5_000));
    let mut digests = Vec::new();
    for threads in [1, 4, available] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        for mode in [SearchMode::Knn, SearchMode::Range] {
            let cfg = SearchConfig::new(mode, 0.05, 8).with_opt_level(OptLevel::SchedPartBundle);
            let out = pool.install(|| run_search(&cfg, &points, &queries, &RunOptions::default()).unwrap());
            digests.push((threads, mode, out.report.digest));
        }
    }
    let threads_agree = [SearchMode::Knn, SearchMode::Range].iter().all(|m| {
        let d: Vec<&String> = digests.iter().filter(|(_, mode, _)| mode == m).map(|(_, _, d)| d).collect();
        d.windows(2).all(|w| w[0] == w[1])
    });

    let cli = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_raynn"))
            .args(["--synth", "clustered", "--n", "30000", "--nq", "3000", "--seed", "8", "-r", "0.05", "--format", "json"])
            .args(["--threads", threads])
            .output()
            .unwrap();
        assert!(out.status.success());
        let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v.as_object_mut().unwrap().remove("threads");
        v
    };
    let (first, second) = (cli("1"), cli("4"));
    let processes_agree = first == second;
    let pass = threads_agree && processes_agree;
    report(
        8,
        pass,
        format!(
            "digests equal across threads {{1, 4, {available}}}: {threads_agree}; two CLI runs equal except timings: {processes_agree}"
        ),
    );
    assert!(pass);
}
