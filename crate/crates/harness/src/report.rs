//! Report rendering.

use std::fmt::Write as _;

use crate::run::{PhaseTimings, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
    Human,
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report is serializable");
            s.push('\n');
            s
        }
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Human => to_human(report),
    }
}

fn to_csv(report: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phase", "ms", "nodes_visited", "aabb_tests", "leaf_tests", "visitor_calls"]).expect("in-memory write");
    for (phase, ms) in PhaseTimings::PHASES.iter().zip(report.timings.as_array()) {
        let stats = match *phase {
            "first_search" => report.stats.first_search,
            "search" => report.stats.search,
            _ => Default::default(),
        };
        w.serialize((phase, ms, stats.nodes_visited, stats.aabb_tests, stats.leaf_tests, stats.visitor_calls))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn to_human(r: &RunReport) -> String {
    let mut s = String::new();
    let cfg = &r.config;
    let _ = writeln!(
        s,
        "{:?} r={} k={} opt={:?} policy={:?}  points={} queries={} threads={}",
        cfg.mode, cfg.radius, cfg.k, cfg.opt_level, cfg.policy, r.num_points, r.num_queries, r.threads
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14} {:>12} {:>14} {:>14}", "phase", "ms", "aabb_tests", "visitor_calls");
    for (phase, ms) in PhaseTimings::PHASES.iter().zip(r.timings.as_array()) {
        let stats = match *phase {
            "first_search" => Some(r.stats.first_search),
            "search" => Some(r.stats.search),
            _ => None,
        };
        match stats {
            Some(st) => {
                let _ = writeln!(s, "{:<14} {:>12.3} {:>14} {:>14}", phase, ms, st.aabb_tests, st.visitor_calls);
            }
            None => {
                let _ = writeln!(s, "{:<14} {:>12.3} {:>14} {:>14}", phase, ms, "-", "-");
            }
        }
    }
    let _ = writeln!(s, "{:<14} {:>12.3}", "total", r.timings.total_ms());

    if !r.plan.partitions.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>10} {:>12} {:>12} {:>7}", "partition", "queries", "aabb_width", "megacell", "sphere");
        for p in &r.plan.partitions {
            let key = match p.key {
                raynn_core::partition::PartitionKey::Steps(n) => format!("steps {n}"),
                raynn_core::partition::PartitionKey::FullWidth => "full".to_string(),
            };
            let _ = writeln!(
                s,
                "{:<12} {:>10} {:>12.6} {:>12.6} {:>7}",
                key, p.num_queries, p.aabb_width, p.megacell_width, p.needs_sphere_test
            );
        }
        let _ = writeln!(s, "bundles: {}", r.plan.bundles.len());
        if let Some(held) = r.plan.assumption_held {
            let _ = writeln!(s, "width/count inverse correlation held: {held}");
        }
        if r.plan.large_k {
            let _ = writeln!(s, "warning: k >= 128, bundling tends to over-merge");
        }
    }
    if let Some(cal) = &r.calibration {
        let c = cal.coefficients;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "calibrated k1={:.3e} k2={:.3e} k3_skip={:.3e} k3_test={:.3e} (build fit R²={:.4})",
            c.k1, c.k2, c.k3_skip, c.k3_test, cal.build_fit.r_squared
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "digest {}", r.digest);
    if let Some(o) = &r.oracle {
        let _ = writeln!(
            s,
            "oracle: {} ({} mismatched queries, recall {:.6})",
            if o.exact_match { "match" } else { "MISMATCH" },
            o.mismatched_queries,
            o.recall
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::{run_search, RunOptions};
    use crate::synth::{Distribution, Synth};
    use raynn_core::pipeline::{OptLevel, SearchConfig};

    fn report(seed: u64) -> RunReport {
        let synth = Synth::new(Distribution::Clustered, seed);
        let cfg = SearchConfig::knn(0.08, 8).with_opt_level(OptLevel::SchedPartBundle);
        let opts = RunOptions { check_oracle: true, ..Default::default() };
        run_search(&cfg, &synth.points(5_000), &synth.queries(500), &opts).unwrap().report
    }

    fn without_timings(mut v: serde_json::Value) -> serde_json::Value {
        v.as_object_mut().unwrap().remove("timings");
        v
    }

    #[test]
    fn json_round_trips() {
        let text = emit_report(&report(1), ReportFormat::Json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        // field order follows the struct
        assert!(text.starts_with("{\n  \"config\""));
        assert!(text.find("\"timings\"").unwrap() < text.find("\"digest\"").unwrap());
        assert!(v["digest"].as_str().unwrap().len() == 64);
        assert_eq!(v["timings"].as_object().unwrap().len(), 5);
    }

    #[test]
    fn json_is_deterministic_except_timings() {
        let a: serde_json::Value = serde_json::from_str(&emit_report(&report(2), ReportFormat::Json)).unwrap();
        let b: serde_json::Value = serde_json::from_str(&emit_report(&report(2), ReportFormat::Json)).unwrap();
        assert_eq!(without_timings(a), without_timings(b));
    }

    #[test]
    fn csv_has_five_phase_rows() {
        let text = emit_report(&report(3), ReportFormat::Csv);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let phases: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
        assert_eq!(phases, PhaseTimings::PHASES);
    }

    #[test]
    fn human_table_mentions_phases() {
        let text = emit_report(&report(4), ReportFormat::Human);
        for phase in PhaseTimings::PHASES {
            assert!(text.lines().any(|l| l.starts_with(phase)), "{phase}");
        }
        assert!(text.contains("oracle: match"));
    }
}
