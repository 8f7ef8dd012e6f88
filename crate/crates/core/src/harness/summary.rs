//! Per-condition aggregation of final-round metrics over seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::{CHECKPOINT_FILE, CONFIG_FILE, EVENTS_FILE, METRICS_FILE, METRICS_HEADER};
use crate::metrics::MetricsReport;

/// Final-round metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub condition: String,
    pub scenario: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
    /// Best mean among rows sharing this condition.
    pub best: bool,
    pub second: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub scenario: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub single_run: bool,
    pub metrics: BTreeMap<String, MetricStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
}

impl SweepSummary {
    pub fn row(&self, condition: &str, scenario: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.condition == condition && r.scenario == scenario)
    }

    pub fn mean(&self, condition: &str, scenario: &str, metric: &str) -> Option<f64> {
        self.row(condition, scenario)?.metrics.get(metric).map(|s| s.mean)
    }
}

/// Lower is better for Davies-Bouldin, higher for everything else.
fn higher_is_better(metric: &str) -> bool {
    !metric.starts_with("dbs")
}

/// Mean and sample standard deviation; NaN values are ignored.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups runs by (condition, scenario) and summarizes every metric.
pub fn aggregate(runs: &[RunResult]) -> Result<SweepSummary> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.condition.clone(), r.scenario.clone())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((condition, scenario), members) in groups {
        let mut seeds: Vec<u64> = members.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        let mut metrics = BTreeMap::new();
        for (j, name) in MetricsReport::COLUMNS.iter().enumerate() {
            // Sort so the floating-point sum does not depend on run order.
            let mut vals: Vec<f64> = members.iter().map(|r| r.metrics.values()[j]).collect();
            vals.sort_by(f64::total_cmp);
            let (mean, std) = mean_std(&vals);
            metrics.insert(name.to_string(), MetricStat { mean, std, best: false, second: false });
        }
        rows.push(SummaryRow {
            condition,
            scenario,
            n: members.len(),
            single_run: members.len() == 1,
            seeds,
            metrics,
        });
    }
    rank(&mut rows);
    Ok(SweepSummary { rows })
}

fn rank(rows: &mut [SummaryRow]) {
    let conditions: BTreeSet<String> = rows.iter().map(|r| r.condition.clone()).collect();
    for cond in &conditions {
        for name in MetricsReport::COLUMNS {
            let mut idx: Vec<usize> = (0..rows.len())
                .filter(|&i| &rows[i].condition == cond && !rows[i].metrics[name].mean.is_nan())
                .collect();
            idx.sort_by(|&a, &b| {
                let (x, y) = (rows[a].metrics[name].mean, rows[b].metrics[name].mean);
                if higher_is_better(name) {
                    y.total_cmp(&x)
                } else {
                    x.total_cmp(&y)
                }
            });
            for (pos, &i) in idx.iter().enumerate() {
                let s = rows[i].metrics.get_mut(name).expect("all metrics present");
                s.best = pos == 0;
                s.second = pos == 1;
            }
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("'{s}' is not a number")))
}

/// Reads a metrics CSV and returns its last row.
pub fn read_final_metrics(path: &Path) -> Result<RunResult> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let cols = METRICS_HEADER.iter().map(|c| col(c)).collect::<Result<Vec<usize>>>()?;
    let last = rdr
        .records()
        .last()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            message: "no metric rows".into(),
        })??;
    let get = |i: usize| last.get(cols[i]).unwrap_or("");
    let bad = |e: Error| Error::Parse {
        path: path.to_path_buf(),
        line: last.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let num = |i: usize| parse_f64(get(i)).map_err(bad);
    Ok(RunResult {
        seed: get(0).parse().map_err(|_| bad(Error::InvalidArgument(format!("bad seed '{}'", get(0)))))?,
        condition: get(1).to_string(),
        scenario: get(2).to_string(),
        metrics: MetricsReport {
            round: num(3)? as usize,
            ari_a: num(4)?,
            ari_b: num(5)?,
            kappa: num(6)?,
            dbs_a: num(7)?,
            dbs_b: num(8)?,
            topsim: num(9)?,
        },
    })
}

/// Run directories under `root`: any directory holding a metrics CSV or a
/// resolved config.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(METRICS_FILE).exists() || dir.join(CONFIG_FILE).exists() {
            out.push(dir);
            continue;
        }
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every run below `root`, failing if any artifact is missing.
pub fn collect_runs(root: &Path) -> Result<Vec<RunResult>> {
    let dirs = find_run_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::MissingArtifact(root.join("*").join(METRICS_FILE)));
    }
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        for f in [CONFIG_FILE, METRICS_FILE, CHECKPOINT_FILE, EVENTS_FILE] {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(Error::MissingArtifact(p));
            }
        }
        runs.push(read_final_metrics(&dir.join(METRICS_FILE))?);
    }
    Ok(runs)
}

/// Plain-text table: one row per (condition, scenario), `mean ± std` per
/// metric. Best values are marked `*`, runners-up `+`.
pub fn format_table(summary: &SweepSummary) -> String {
    let mut out = format!("{:<28} {:<20} {:>3}", "condition", "scenario", "n");
    for name in MetricsReport::COLUMNS {
        out.push_str(&format!(" {name:>16}"));
    }
    out.push('\n');
    for row in &summary.rows {
        out.push_str(&format!("{:<28} {:<20} {:>3}", row.condition, row.scenario, row.n));
        for name in MetricsReport::COLUMNS {
            let s = &row.metrics[name];
            let mark = if s.best { '*' } else if s.second { '+' } else { ' ' };
            out.push_str(&format!(" {:>7.3}±{:<6.3}{mark}", s.mean, s.std));
        }
        out.push('\n');
    }
    out
}

/// Writes `summary.json` and `summary.csv` into `dir`.
pub fn write_summary(dir: &Path, summary: &SweepSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    let mut header = vec!["condition".to_string(), "scenario".to_string(), "n".to_string()];
    for name in MetricsReport::COLUMNS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    for row in &summary.rows {
        let mut rec = vec![row.condition.clone(), row.scenario.clone(), row.n.to_string()];
        for name in MetricsReport::COLUMNS {
            rec.push(row.metrics[name].mean.to_string());
            rec.push(row.metrics[name].std.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
