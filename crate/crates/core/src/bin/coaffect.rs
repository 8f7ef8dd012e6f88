use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coaffect::harness::checkpoint::Checkpoint;
use coaffect::harness::plot::{heatmap_svg, pca_svg};
use coaffect::harness::run::{make_dataset, run_dir, run_experiment, CHECKPOINT_FILE};
use coaffect::harness::summary::{collect_runs, format_table, write_summary};
use coaffect::harness::{aggregate, run_sweep, sweep_configs, Condition, RunConfig, DEFAULT_SEEDS};
use coaffect::metrics::{pca_project, recall_heatmap};
use coaffect::mhng::Scenario;
use coaffect::stimuli::{write_feature_csv, Modality};
use coaffect::core_affect::EmotionId;

/// Emotion category co-construction between two agents.
#[derive(Parser)]
#[command(name = "coaffect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as per-agent, per-modality CSV files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Apply a named condition preset.
        #[arg(long)]
        condition: Option<Condition>,
        #[arg(long)]
        scenario: Option<Scenario>,
    },
    /// Run conditions x scenarios x seeds and summarize.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated presets; default is the config's own setup.
        #[arg(long, value_delimiter = ',')]
        conditions: Vec<Condition>,
        /// Comma-separated scenarios; default is all three.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<Scenario>,
        /// Comma-separated seeds or ranges like `0-9`; default 0-9.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Aggregate finished runs below a directory.
    Report {
        /// Directory holding run directories.
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG recall heatmaps and PCA scatters from a checkpoint.
    Plot {
        /// Run directory or checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
            if b < a {
                bail!("empty seed range '{part}'");
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().with_context(|| format!("bad seed '{part}'"))?);
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.join("data"));
    fs::create_dir_all(&out)?;
    let ds = make_dataset(&cfg)?;
    for (name, obs) in [("a", &ds.agent_a), ("b", &ds.agent_b)] {
        for m in [Modality::Vision, Modality::Audio, Modality::Interoception] {
            let path = out.join(format!("agent_{name}_{}.csv", m.name()));
            write_feature_csv(fs::File::create(&path)?, obs, m)?;
        }
    }
    println!("wrote {} observations per agent to {}", ds.len(), out.display());
    Ok(())
}

fn run(common: &Common, condition: Option<Condition>, scenario: Option<Scenario>) -> Result<()> {
    let mut cfg = common.config()?;
    if let Some(c) = condition {
        cfg = cfg.with_condition(c);
    }
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    let dir = common.out.clone().unwrap_or_else(|| run_dir(&cfg.out_dir, &cfg));
    let outcome = run_experiment(&cfg, &dir)?;
    let m = outcome.final_metrics();
    println!(
        "round {}: ari_a {:.3} ari_b {:.3} kappa {:.3} dbs_a {:.3} dbs_b {:.3} topsim {:.3}",
        m.round, m.ari_a, m.ari_b, m.kappa, m.dbs_a, m.dbs_b, m.topsim
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn sweep(common: &Common, conditions: &[Condition], scenarios: &[Scenario], seeds: Option<&str>, workers: usize) -> Result<()> {
    let base = common.config()?;
    let seeds = match seeds {
        Some(s) => parse_seeds(s)?,
        None => DEFAULT_SEEDS.collect(),
    };
    let scenarios = if scenarios.is_empty() { Scenario::ALL.to_vec() } else { scenarios.to_vec() };
    let out = common.out.clone().unwrap_or_else(|| base.out_dir.clone());
    let configs = if conditions.is_empty() {
        let mut v = Vec::new();
        for &s in &scenarios {
            for &seed in &seeds {
                v.push(RunConfig { scenario: s, seed, ..base.clone() });
            }
        }
        v
    } else {
        sweep_configs(&base, conditions, &scenarios, &seeds)
    };
    let results = run_sweep(&configs, workers, Some(&out))?;
    let summary = aggregate(&results)?;
    write_summary(&out, &summary)?;
    print!("{}", format_table(&summary));
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let runs = collect_runs(out)?;
    let summary = aggregate(&runs)?;
    write_summary(out, &summary)?;
    print!("{}", format_table(&summary));
    Ok(())
}

fn plot(checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let file = if checkpoint.is_dir() { checkpoint.join(CHECKPOINT_FILE) } else { checkpoint.to_path_buf() };
    let ck = Checkpoint::load(&file).with_context(|| format!("reading {}", file.display()))?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => file.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    for (name, agent) in ["a", "b"].iter().zip(&ck.agents) {
        let k = agent.pi.len();
        let h = recall_heatmap(&agent.signs, &ck.labels, EmotionId::COUNT, k)?;
        fs::write(dir.join(format!("heatmap_{name}.svg")), heatmap_svg(&h, &format!("Agent {} recall, round {}", name.to_uppercase(), ck.round)))?;
        let p = pca_project(&agent.latents()?, 2)?;
        fs::write(dir.join(format!("pca_{name}.svg")), pca_svg(&p, &ck.labels, &format!("Agent {} latents, round {}", name.to_uppercase(), ck.round)))?;
    }
    println!("wrote heatmap_{{a,b}}.svg and pca_{{a,b}}.svg to {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData { common } => gen_data(common),
        Command::Run { common, condition, scenario } => run(common, *condition, *scenario),
        Command::Sweep { common, conditions, scenarios, seeds, workers } => {
            sweep(common, conditions, scenarios, seeds.as_deref(), *workers)
        }
        Command::Report { out } => report(out),
        Command::Plot { checkpoint, out } => plot(checkpoint, out.as_deref()),
    }
}
