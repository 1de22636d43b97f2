//! Scenario matrix runner: every scenario x seed x acceleration scale, once
//! per local planner mode.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::time::Instant;

use navsim_core::planner::local::PlannerMode;
use navsim_core::runtime::{run_scenario, RunOptions, ScenarioResult, Timing};
use navsim_core::scenario::Scenario;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MODES: [PlannerMode; 2] = [PlannerMode::Dwa, PlannerMode::TrajectoryRollout];

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub scenarios: Vec<Scenario>,
    pub seeds: Vec<u64>,
    pub accel: Vec<f64>,
    pub modes: Vec<PlannerMode>,
    pub time_scale: f64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRun {
    pub result: ScenarioResult,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: String,
    pub mode: PlannerMode,
    pub accel_scale: f64,
    pub runs: usize,
    pub successes: usize,
    pub collisions: u64,
    pub mean_path_length: f64,
    pub mean_cycle_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: PlannerMode,
    pub accel_scale: f64,
    pub runs: usize,
    pub successes: usize,
    pub planning_cycles: u64,
    /// Cycle-weighted mean over every run.
    pub mean_cycle_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessComparison {
    pub accel_scale: f64,
    pub identical: bool,
    /// `scenario/seed` keys where the modes disagree.
    pub differing: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<Row>,
    pub modes: Vec<ModeSummary>,
    pub success_sets: Vec<SuccessComparison>,
    pub collisions: u64,
    pub total_sim_time: f64,
    pub wall_time_s: f64,
    pub runs: Vec<BenchRun>,
}

impl BenchReport {
    pub fn summary(&self, mode: PlannerMode, accel_scale: f64) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode && m.accel_scale == accel_scale)
    }
}

pub fn run_bench(plan: &BenchPlan) -> BenchReport {
    let started = Instant::now();
    let mut jobs = Vec::new();
    for (si, _) in plan.scenarios.iter().enumerate() {
        for &accel in &plan.accel {
            for &seed in &plan.seeds {
                for &mode in &plan.modes {
                    jobs.push((si, accel, seed, mode));
                }
            }
        }
    }
    let work = |&(si, accel, seed, mode): &(usize, f64, u64, PlannerMode)| {
        let opts = RunOptions {
            seed,
            mode: Some(mode),
            accel_scale: Some(accel),
            time_scale: plan.time_scale,
            keep_traces: false,
        };
        let out = run_scenario(&plan.scenarios[si], &opts);
        BenchRun {
            result: out.result,
            timing: out.timing,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.jobs).build().expect("thread pool");
    let runs: Vec<BenchRun> = pool.install(|| jobs.par_iter().map(work).collect());
    summarize(runs, started.elapsed().as_secs_f64())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn cycle_mean(runs: &[&BenchRun]) -> (u64, f64) {
    let cycles: u64 = runs.iter().map(|r| r.timing.planning_cycles).sum();
    let total: f64 = runs.iter().map(|r| r.timing.mean_planning_us * r.timing.planning_cycles as f64).sum();
    (cycles, if cycles == 0 { 0.0 } else { total / cycles as f64 })
}

pub fn summarize(runs: Vec<BenchRun>, wall_time_s: f64) -> BenchReport {
    let keys: BTreeSet<(String, u8, u64)> = runs
        .iter()
        .map(|r| (r.result.scenario.clone(), mode_rank(r.result.mode), r.result.accel_scale.to_bits()))
        .collect();
    let mut rows = Vec::new();
    for (scenario, rank, accel_bits) in &keys {
        let group: Vec<&BenchRun> = runs
            .iter()
            .filter(|r| &r.result.scenario == scenario && mode_rank(r.result.mode) == *rank && r.result.accel_scale.to_bits() == *accel_bits)
            .collect();
        rows.push(Row {
            scenario: scenario.clone(),
            mode: MODES[*rank as usize],
            accel_scale: f64::from_bits(*accel_bits),
            runs: group.len(),
            successes: group.iter().filter(|r| r.result.passed()).count(),
            collisions: group.iter().map(|r| r.result.collisions).sum(),
            mean_path_length: mean(group.iter().map(|r| r.result.path_length)),
            mean_cycle_us: cycle_mean(&group).1,
        });
    }

    let accels: BTreeSet<u64> = runs.iter().map(|r| r.result.accel_scale.to_bits()).collect();
    let mut modes = Vec::new();
    let mut success_sets = Vec::new();
    for bits in &accels {
        let at: Vec<&BenchRun> = runs.iter().filter(|r| r.result.accel_scale.to_bits() == *bits).collect();
        let mut sets = Vec::new();
        for mode in MODES {
            let group: Vec<&BenchRun> = at.iter().copied().filter(|r| r.result.mode == mode).collect();
            if group.is_empty() {
                continue;
            }
            let (planning_cycles, mean_cycle_us) = cycle_mean(&group);
            modes.push(ModeSummary {
                mode,
                accel_scale: f64::from_bits(*bits),
                runs: group.len(),
                successes: group.iter().filter(|r| r.result.passed()).count(),
                planning_cycles,
                mean_cycle_us,
            });
            let set: BTreeSet<String> = group
                .iter()
                .filter(|r| r.result.passed())
                .map(|r| format!("{}/{}", r.result.scenario, r.result.seed))
                .collect();
            sets.push(set);
        }
        if let [a, b] = sets.as_slice() {
            let differing: Vec<String> = a.symmetric_difference(b).cloned().collect();
            success_sets.push(SuccessComparison {
                accel_scale: f64::from_bits(*bits),
                identical: differing.is_empty(),
                differing,
            });
        }
    }

    let mut runs = runs;
    runs.sort_by(|a, b| {
        (&a.result.scenario, mode_rank(a.result.mode), a.result.accel_scale.to_bits(), a.result.seed).cmp(&(
            &b.result.scenario,
            mode_rank(b.result.mode),
            b.result.accel_scale.to_bits(),
            b.result.seed,
        ))
    });
    BenchReport {
        rows,
        modes,
        success_sets,
        collisions: runs.iter().map(|r| r.result.collisions).sum(),
        total_sim_time: runs.iter().map(|r| r.result.sim_time).sum(),
        wall_time_s,
        runs,
    }
}

fn mode_rank(m: PlannerMode) -> u8 {
    match m {
        PlannerMode::Dwa => 0,
        PlannerMode::TrajectoryRollout => 1,
    }
}

pub fn render_text(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:<20} {:>6} {:>9} {:>10} {:>12} {:>12}", "scenario", "mode", "accel", "success", "collisions", "path m", "cycle us");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<20} {:<20} {:>6.2} {:>5}/{:<3} {:>10} {:>12.2} {:>12.1}",
            r.scenario,
            r.mode.to_string(),
            r.accel_scale,
            r.successes,
            r.runs,
            r.collisions,
            r.mean_path_length,
            r.mean_cycle_us
        );
    }
    out.push('\n');
    for m in &report.modes {
        let _ = writeln!(
            out,
            "{:<20} accel {:.2}: {}/{} passed, mean cycle {:.1} us over {} cycles",
            m.mode.to_string(),
            m.accel_scale,
            m.successes,
            m.runs,
            m.mean_cycle_us,
            m.planning_cycles
        );
    }
    for s in &report.success_sets {
        if s.identical {
            let _ = writeln!(out, "accel {:.2}: identical success sets", s.accel_scale);
        } else {
            let _ = writeln!(out, "accel {:.2}: success sets differ on {}", s.accel_scale, s.differing.join(", "));
        }
    }
    let _ = writeln!(
        out,
        "{} runs, {:.0} s simulated in {:.1} s wall, {} collisions",
        report.runs.len(),
        report.total_sim_time,
        report.wall_time_s,
        report.collisions
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> Scenario {
        Scenario::from_json(
            r#"{"name":"room","world":{"size":[5.0,4.0]},
               "robot":{"start":{"x":1.0,"y":2.0,"theta":0.0}},
               "goals":[{"x":3.5,"y":2.0,"theta":0.0}],"time_limit":30}"#,
        )
        .unwrap()
    }

    #[test]
    fn matrix_covers_every_combination() {
        let plan = BenchPlan {
            scenarios: vec![room()],
            seeds: vec![0, 1],
            accel: vec![1.0, 0.5],
            modes: MODES.to_vec(),
            time_scale: 0.0,
            jobs: 2,
        };
        let report = run_bench(&plan);
        assert_eq!(report.runs.len(), 8);
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.modes.len(), 4);
        assert_eq!(report.success_sets.len(), 2);
        assert!(report.success_sets.iter().all(|s| s.identical));
        assert_eq!(report.collisions, 0);
        let text = render_text(&report);
        assert!(text.contains("identical success sets"));
        assert!(report.summary(PlannerMode::Dwa, 1.0).unwrap().planning_cycles > 0);
    }

    #[test]
    fn report_order_is_independent_of_completion_order() {
        let plan = BenchPlan {
            scenarios: vec![room()],
            seeds: vec![0, 1],
            accel: vec![1.0],
            modes: MODES.to_vec(),
            time_scale: 0.0,
            jobs: 1,
        };
        let a = run_bench(&plan);
        let mut reversed = a.runs.clone();
        reversed.reverse();
        let b = summarize(reversed, 0.0);
        let key = |r: &BenchReport| r.runs.iter().map(|x| x.result.to_json()).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
        assert_eq!(a.rows, b.rows);
    }
}
