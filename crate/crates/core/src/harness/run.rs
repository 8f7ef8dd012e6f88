//! Single experiment: dataset, agent initialization, the round loop and its
//! on-disk artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core_affect::build_profile;
use crate::error::Result;
use crate::gmm::sample_prior_gmm;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::metrics::{evaluate, AgentView, MetricsReport};
use crate::mhng::{AgentState, GameState};
use crate::mvae::{ModalityData, MvaeParams, Sgd};
use crate::stimuli::{balanced_labels, build_dataset, standardize, Modality, MultimodalObservation, StimulusDataset};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVENTS_FILE: &str = "events.jsonl";

pub const METRICS_HEADER: [&str; 10] = [
    "seed", "condition", "scenario", "round", "ari_a", "ari_b", "kappa", "dbs_a", "dbs_b", "topsim",
];

const MODEL_STREAM: u64 = 0x100;
const CHANNEL_STREAM: u64 = 0x200;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The synthetic dataset for a config, standardized per agent.
pub fn make_dataset(cfg: &RunConfig) -> Result<StimulusDataset> {
    cfg.validate()?;
    let labels = balanced_labels(cfg.stimuli_per_emotion);
    let pa = build_profile(cfg.profile_a);
    let pb = build_profile(cfg.profile_b);
    let mut ds = build_dataset(&labels, &cfg.dataset_spec(), [&pa, &pb], cfg.seed)?;
    standardize(&mut ds.agent_a);
    standardize(&mut ds.agent_b);
    Ok(ds)
}

/// Stacks the selected modalities into `dim x D` matrices.
pub fn modality_data(obs: &[MultimodalObservation], modalities: &[Modality]) -> ModalityData {
    let mats = modalities
        .iter()
        .map(|&m| {
            let dim = obs.first().map_or(0, |o| o.modality(m).len());
            DMatrix::from_fn(dim, obs.len(), |r, c| obs[c].modality(m)[r])
        })
        .collect();
    ModalityData { mats }
}

/// Fresh agent: random weights, a prior draw of the GMM, uniform random signs
/// and latents sampled from the resulting model.
pub fn init_agent(cfg: &RunConfig, data: ModalityData, mut rng: ChaCha8Rng) -> Result<AgentState> {
    let dims: Vec<(Modality, usize)> = cfg
        .modalities()
        .into_iter()
        .zip(&data.mats)
        .map(|(m, x)| (m, x.nrows()))
        .collect();
    let mut mvae = MvaeParams::new(&dims, cfg.hidden_dim, cfg.latent_dim, cfg.init_scale, &mut rng);
    mvae.unit_prior_expert = cfg.unit_prior_expert;
    let gmm = sample_prior_gmm(cfg.k, &cfg.hyper(), &mut rng)?;
    let n = data.len();
    let signs = (0..n).map(|_| rng.random_range(0..cfg.k)).collect();
    let mut agent = AgentState {
        mvae,
        gmm,
        latents: vec![DVector::zeros(cfg.latent_dim); n],
        signs,
        data,
        opt: Sgd::new(cfg.learning_rate, cfg.momentum),
        rng,
    };
    agent.resample_latents(cfg.prior_expert)?;
    Ok(agent)
}

/// Initial game for a config together with the reference labels.
pub fn init_game(cfg: &RunConfig) -> Result<(GameState, Vec<usize>)> {
    let ds = make_dataset(cfg)?;
    let modalities = cfg.modalities();
    let a = init_agent(cfg, modality_data(&ds.agent_a, &modalities), stream(cfg.seed, MODEL_STREAM))?;
    let b = init_agent(cfg, modality_data(&ds.agent_b, &modalities), stream(cfg.seed, MODEL_STREAM + 1))?;
    let game = GameState::new([a, b], 0, stream(cfg.seed, CHANNEL_STREAM))?;
    Ok((game, ds.labels()))
}

pub fn evaluate_game(game: &GameState, labels: &[usize]) -> Result<MetricsReport> {
    let [a, b] = &game.agents;
    evaluate(
        game.round,
        AgentView { latents: &a.latents, signs: &a.signs },
        AgentView { latents: &b.latents, signs: &b.signs },
        labels,
    )
}

/// Final state and one metrics report per round, starting with round 0.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub game: GameState,
    pub labels: Vec<usize>,
    pub trace: Vec<MetricsReport>,
}

impl RunOutcome {
    pub fn final_metrics(&self) -> &MetricsReport {
        self.trace.last().expect("trace holds at least the initial report")
    }
}

/// Runs `cfg.rounds` rounds in memory.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let (mut game, labels) = init_game(cfg)?;
    let learn = cfg.learn_config();
    let mut trace = vec![evaluate_game(&game, &labels)?];
    for _ in 0..cfg.rounds {
        game.run_round(cfg.scenario, &learn)?;
        trace.push(evaluate_game(&game, &labels)?);
    }
    Ok(RunOutcome { game, labels, trace })
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_metrics_csv<W: Write>(w: W, cfg: &RunConfig, trace: &[MetricsReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for m in trace {
        let mut rec = vec![
            cfg.seed.to_string(),
            cfg.condition.clone(),
            cfg.scenario.to_string(),
            m.round.to_string(),
        ];
        rec.extend(m.values().iter().map(|v| fmt_f64(*v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(mut w: W, game: &GameState) -> Result<()> {
    for e in &game.events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Directory of one run under `root`.
pub fn run_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join(&cfg.condition)
        .join(cfg.scenario.name())
        .join(format!("seed-{}", cfg.seed))
}

/// Writes the resolved config, metrics CSV, checkpoint and event log to `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    write_metrics_csv(fs::File::create(dir.join(METRICS_FILE))?, cfg, &outcome.trace)?;
    let ck = Checkpoint::from_game(&outcome.game, &outcome.labels);
    fs::write(dir.join(CHECKPOINT_FILE), ck.to_json()?)?;
    write_events(std::io::BufWriter::new(fs::File::create(dir.join(EVENTS_FILE))?), &outcome.game)?;
    Ok(())
}

/// Simulates `cfg` and writes its artifacts to `dir`.
pub fn run_experiment(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let outcome = simulate(cfg)?;
    write_run(dir, cfg, &outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            stimuli_per_emotion: 1,
            vision_dim: 6,
            audio_dim: 5,
            intero_frames: 4,
            ou_steps: 40,
            hidden_dim: 8,
            latent_dim: 3,
            k: 4,
            rounds: 2,
            epochs: 1,
            batch_size: 16,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_rounds_reports_initialization_only() {
        let cfg = RunConfig { rounds: 0, ..tiny() };
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].round, 0);
        assert_eq!(out.game.round, 0);
    }

    #[test]
    fn trace_has_one_row_per_round() {
        let out = simulate(&tiny()).unwrap();
        assert_eq!(out.trace.len(), 3);
        assert_eq!(out.game.round, 2);
        assert_eq!(out.game.events.len(), 4);
        assert_eq!(out.labels.len(), 8 * 7);
    }

    #[test]
    fn ablation_drops_interoception_net() {
        let cfg = RunConfig { interoception: false, ..tiny() };
        let (game, _) = init_game(&cfg).unwrap();
        assert_eq!(game.agents[0].mvae.modalities(), vec![Modality::Vision, Modality::Audio]);
    }

    #[test]
    fn metrics_csv_layout() {
        let out = simulate(&tiny()).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &tiny(), &out.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER.join(","));
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,original_original,metropolis_hastings,0,"));
    }
}
