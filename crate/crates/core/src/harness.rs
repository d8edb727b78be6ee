//! Experiment runner: seeds × episodes per (task, disturbance, policy) cell,
//! aggregated the way the result tables are (mean ± std across per-seed means).

use crate::config::{ConfigError, SimConfig};
use crate::executive::{run_episode, EpisodeSpec, EpisodeTrace, ExecError, ExecutivePolicy};
use crate::planner::ScriptedPlanner;
use crate::rng::episode_seed;
use crate::world::{Family, TaskSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const ARM_POLICIES: [&str; 5] = ["saycan", "repeat", "im", "doremi", "im-oracle"];
pub const HUMANOID_POLICIES: [&str; 5] = ["saycan", "im", "doremi", "doremi-ft", "im-oracle"];
pub const GRIDS: [&str; 8] = ["pick-place", "stack", "obstacle", "move-box", "prepare-food", "table1", "table2", "all"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown grid `{0}` (known: {list})", list = GRIDS.join(", "))]
    UnknownGrid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Task cells of a named grid.
pub fn grid(name: &str, cfg: &SimConfig) -> Result<Vec<TaskSpec>, HarnessError> {
    let stack = |n, p| TaskSpec::stack(&["brown", "red", "green"], n, p, cfg);
    let cells = match name {
        "pick-place" => [0.0, 0.2, 0.3].iter().map(|&p| TaskSpec::pick_place(p, cfg)).collect(),
        "stack" => [0.0, 0.1]
            .iter()
            .flat_map(|&p| [0.0, 1.0, 2.0, 3.0].map(|n| stack(n, p)))
            .collect(),
        "obstacle" => [0.0, 0.3, 0.6].iter().map(|&d| TaskSpec::obstacle_avoid(d, cfg)).collect(),
        "move-box" => [0.0, 0.02, 0.04].iter().map(|&p| TaskSpec::move_box(p, cfg)).collect(),
        "prepare-food" => [0.0, 0.02, 0.04].iter().map(|&p| TaskSpec::prepare_food(0.1, p, cfg)).collect(),
        "table1" => [grid("pick-place", cfg)?, grid("stack", cfg)?].concat(),
        "table2" => [grid("obstacle", cfg)?, grid("move-box", cfg)?, grid("prepare-food", cfg)?].concat(),
        "all" => [grid("table1", cfg)?, grid("table2", cfg)?].concat(),
        other => return Err(HarnessError::UnknownGrid(other.to_string())),
    };
    Ok(cells)
}

pub fn default_policies(family: Family) -> &'static [&'static str] {
    if family.is_arm() {
        &ARM_POLICIES
    } else {
        &HUMANOID_POLICIES
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskSpec>,
    /// Policy labels; `None` uses the per-family defaults.
    pub policies: Option<Vec<String>>,
    pub seeds: Vec<u64>,
    pub episodes_per_seed: u32,
    /// Worker threads; `None` lets rayon decide.
    pub workers: Option<usize>,
    pub keep_traces: bool,
    pub sim: SimConfig,
}

impl ExperimentConfig {
    pub fn new(tasks: Vec<TaskSpec>, sim: SimConfig) -> Self {
        Self {
            tasks,
            policies: None,
            seeds: sim.harness.seeds.clone(),
            episodes_per_seed: sim.harness.episodes_per_seed,
            workers: None,
            keep_traces: false,
            sim,
        }
    }

    pub fn named(grid_name: &str, sim: SimConfig) -> Result<Self, HarnessError> {
        Ok(Self::new(grid(grid_name, &sim)?, sim))
    }

    /// (task, policy) pairs in output order.
    pub fn cells(&self) -> Vec<(TaskSpec, String)> {
        let mut out = Vec::new();
        for t in &self.tasks {
            let labels: Vec<String> = match &self.policies {
                Some(p) => p.clone(),
                None => default_policies(t.family).iter().map(|s| s.to_string()).collect(),
            };
            for l in labels {
                out.push((t.clone(), l));
            }
        }
        out
    }
}

/// Seed-mixing key of a task cell. The policy is deliberately left out so
/// every policy meets the same disturbance draws.
pub fn cell_key(task: &TaskSpec) -> String {
    format!("{}|{}", task.family, task.levels())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub episode: u32,
    pub success: bool,
    pub duration_s: f64,
    pub replans: u32,
    pub checks: u32,
    pub error: Option<String>,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsCell {
    pub family: String,
    pub levels: String,
    pub policy: String,
    pub n_episodes: u32,
    pub success_mean: f64,
    pub success_std: f64,
    pub time_mean: Option<f64>,
    pub time_std: Option<f64>,
    pub replan_mean: f64,
    pub check_mean: f64,
    pub errors: u32,
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub cells: Vec<ResultsCell>,
    pub episodes: Vec<Vec<EpisodeResult>>,
    /// Present when `keep_traces` was set; same order as `episodes`.
    pub traces: Vec<Vec<EpisodeTrace>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Aggregates one cell's episodes (grouped by seed in `seeds` order).
pub fn aggregate(
    task: &TaskSpec,
    policy: &str,
    seeds: &[u64],
    episodes: &[EpisodeResult],
    threshold_pct: f64,
) -> ResultsCell {
    let mut rates = Vec::new();
    let mut times = Vec::new();
    for s in seeds {
        let mine: Vec<&EpisodeResult> = episodes.iter().filter(|e| e.seed == *s).collect();
        if mine.is_empty() {
            continue;
        }
        let ok: Vec<f64> = mine.iter().filter(|e| e.success).map(|e| e.duration_s).collect();
        rates.push(100.0 * ok.len() as f64 / mine.len() as f64);
        if !ok.is_empty() {
            times.push(ok.iter().sum::<f64>() / ok.len() as f64);
        }
    }
    let (success_mean, success_std) = mean_std(&rates);
    let (tm, ts) = mean_std(&times);
    let report_time = success_mean >= threshold_pct && !times.is_empty();
    let n = episodes.len().max(1) as f64;
    ResultsCell {
        family: task.family.to_string(),
        levels: task.levels(),
        policy: policy.to_string(),
        n_episodes: episodes.len() as u32,
        success_mean,
        success_std,
        time_mean: report_time.then_some(tm),
        time_std: report_time.then_some(ts),
        replan_mean: episodes.iter().map(|e| f64::from(e.replans)).sum::<f64>() / n,
        check_mean: episodes.iter().map(|e| f64::from(e.checks)).sum::<f64>() / n,
        errors: episodes.iter().filter(|e| e.error.is_some()).count() as u32,
    }
}

struct Job {
    cell: usize,
    seed: u64,
    episode: u32,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults, HarnessError> {
    config.sim.validate()?;
    let cells = config.cells();
    let mut policies = Vec::with_capacity(cells.len());
    for (task, label) in &cells {
        task.validate(&config.sim)?;
        let p = ExecutivePolicy::named(label, task.family, &config.sim)?;
        p.validate()?;
        policies.push(p);
    }
    let jobs: Vec<Job> = (0..cells.len())
        .flat_map(|cell| {
            config.seeds.iter().flat_map(move |&seed| {
                (0..config.episodes_per_seed).map(move |episode| Job { cell, seed, episode })
            })
        })
        .collect();

    let work = || -> Vec<(EpisodeResult, Option<EpisodeTrace>)> {
        jobs.par_iter()
            .map(|job| {
                let task = &cells[job.cell].0;
                let seed = episode_seed(job.seed, &cell_key(task), u64::from(job.episode));
                let spec = EpisodeSpec { task, seed, policy: &policies[job.cell], cfg: &config.sim, injections: &[] };
                match run_episode(&spec, &mut ScriptedPlanner) {
                    Ok(t) => (
                        EpisodeResult {
                            seed: job.seed,
                            episode: job.episode,
                            success: t.success(),
                            duration_s: t.duration_s(),
                            replans: t.replan_count,
                            checks: t.check_count,
                            error: None,
                        },
                        config.keep_traces.then_some(t),
                    ),
                    Err(e) => (
                        EpisodeResult {
                            seed: job.seed,
                            episode: job.episode,
                            success: false,
                            duration_s: 0.0,
                            replans: 0,
                            checks: 0,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                }
            })
            .collect()
    };
    let flat = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };

    let per_cell = config.seeds.len() * config.episodes_per_seed as usize;
    let mut episodes = Vec::with_capacity(cells.len());
    let mut traces = Vec::new();
    let mut it = flat.into_iter();
    for _ in 0..cells.len() {
        let chunk: Vec<_> = it.by_ref().take(per_cell).collect();
        let (eps, trs): (Vec<_>, Vec<_>) = chunk.into_iter().unzip();
        episodes.push(eps);
        if config.keep_traces {
            traces.push(trs.into_iter().flatten().collect());
        }
    }
    let results = cells
        .iter()
        .zip(&episodes)
        .map(|((task, label), eps)| {
            aggregate(task, label, &config.seeds, eps, config.sim.harness.time_threshold_pct)
        })
        .collect();
    Ok(ExperimentResults { cells: results, episodes, traces })
}

pub fn write_csv(cells: &[ResultsCell], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(cells: &[ResultsCell]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cells {
        w.serialize(c)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultsCell>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn fmt_rate(c: &ResultsCell) -> String {
    format!("{:.0} (±{:.0})", c.success_mean, c.success_std)
}

fn fmt_time(c: &ResultsCell) -> String {
    match (c.time_mean, c.time_std) {
        (Some(m), Some(s)) => format!("{m:.1} (±{s:.1})"),
        _ => "-".into(),
    }
}

/// Text table: one row per task cell, success rates then execution times per policy.
pub fn summarize(cells: &[ResultsCell]) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut policies: Vec<String> = Vec::new();
    let mut by: BTreeMap<(String, String, String), &ResultsCell> = BTreeMap::new();
    for c in cells {
        let row = (c.family.clone(), c.levels.clone());
        if !rows.contains(&row) {
            rows.push(row);
        }
        if !policies.contains(&c.policy) {
            policies.push(c.policy.clone());
        }
        by.insert((c.family.clone(), c.levels.clone(), c.policy.clone()), c);
    }
    let mut table = vec![{
        let mut h = vec!["task".to_string(), "levels".to_string()];
        h.extend(policies.iter().map(|p| format!("{p} %")));
        h.extend(policies.iter().map(|p| format!("{p} s")));
        h
    }];
    for (fam, lev) in &rows {
        let mut line = vec![fam.clone(), lev.clone()];
        let get = |p: &String| by.get(&(fam.clone(), lev.clone(), p.clone()));
        line.extend(policies.iter().map(|p| get(p).map(|c| fmt_rate(c)).unwrap_or_default()));
        line.extend(policies.iter().map(|p| get(p).map(|c| fmt_time(c)).unwrap_or_default()));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|i| table.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &table {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_across_seed_means() {
        let cfg = SimConfig::default();
        let task = TaskSpec::pick_place(0.2, &cfg);
        let ep = |seed, success| EpisodeResult {
            seed,
            episode: 0,
            success,
            duration_s: 3.0,
            replans: 0,
            checks: 0,
            error: None,
        };
        // seed 1: 2/2, seed 2: 1/2 -> means 100, 50
        let eps = [ep(1, true), ep(1, true), ep(2, true), ep(2, false)];
        let c = aggregate(&task, "saycan", &[1, 2], &eps, 80.0);
        assert_eq!(c.success_mean, 75.0);
        assert_eq!(c.success_std, 25.0);
        assert_eq!(c.time_mean, None, "75% is below the reporting threshold");
        let c = aggregate(&task, "saycan", &[1, 2], &eps, 70.0);
        assert_eq!(c.time_mean, Some(3.0));
    }

    #[test]
    fn grids_have_the_table_shapes() {
        let cfg = SimConfig::default();
        assert_eq!(grid("pick-place", &cfg).unwrap().len(), 3);
        assert_eq!(grid("stack", &cfg).unwrap().len(), 8);
        assert_eq!(grid("table2", &cfg).unwrap().len(), 9);
        assert_eq!(ExperimentConfig::named("pick-place", cfg.clone()).unwrap().cells().len(), 15);
        assert!(matches!(grid("nope", &cfg), Err(HarnessError::UnknownGrid(_))));
    }
}
