//! Multimodal observations for the two agents.
//!
//! Exteroception (vision, audio) is synthetic by default: each agent owns one
//! prototype vector per emotion and modality, and a stimulus is its label's
//! prototype plus isotropic Gaussian noise. Interoception is the agent's own
//! simulated core-affect trajectory. Both agents see the same stimuli in the
//! same order, through different bodies.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core_affect::{self, EmotionId, InteroceptiveProfile, REPLICAS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Audio,
    Interoception,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Audio => "audio",
            Modality::Interoception => "interoception",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Modality::Vision => 0,
            Modality::Audio => 1,
            Modality::Interoception => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub modality: Modality,
    pub dim: usize,
    pub noise_scale: f64,
}

impl ModalitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} dimension must be at least 1",
                self.modality.name()
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{} noise scale must be nonnegative",
                self.modality.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalObservation {
    pub stimulus_id: usize,
    pub replica: usize,
    /// Reference label. Only metrics read it.
    pub label: EmotionId,
    pub o_v: Vec<f64>,
    pub o_a: Vec<f64>,
    pub o_i: Vec<f64>,
}

impl MultimodalObservation {
    pub fn modality(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Vision => &self.o_v,
            Modality::Audio => &self.o_a,
            Modality::Interoception => &self.o_i,
        }
    }

    fn modality_mut(&mut self, m: Modality) -> &mut Vec<f64> {
        match m {
            Modality::Vision => &mut self.o_v,
            Modality::Audio => &mut self.o_a,
            Modality::Interoception => &mut self.o_i,
        }
    }
}

/// Index-aligned observations for agents A and B.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusDataset {
    pub agent_a: Vec<MultimodalObservation>,
    pub agent_b: Vec<MultimodalObservation>,
}

impl StimulusDataset {
    pub fn len(&self) -> usize {
        self.agent_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_a.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.agent_a.iter().map(|o| o.label.index()).collect()
    }

    pub fn agent(&self, which: usize) -> &[MultimodalObservation] {
        if which == 0 {
            &self.agent_a
        } else {
            &self.agent_b
        }
    }

    pub fn check_aligned(&self) -> Result<()> {
        if self.agent_a.len() != self.agent_b.len() {
            return Err(Error::DimensionMismatch {
                context: "agent observation lists",
                expected: self.agent_a.len(),
                got: self.agent_b.len(),
            });
        }
        for (a, b) in self.agent_a.iter().zip(&self.agent_b) {
            if (a.stimulus_id, a.replica, a.label) != (b.stimulus_id, b.replica, b.label) {
                return Err(Error::InvalidArgument(format!(
                    "agents disagree at stimulus {}",
                    a.stimulus_id
                )));
            }
        }
        Ok(())
    }
}

/// Everything `build_dataset` needs besides labels, profiles and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub vision: ModalitySpec,
    pub audio: ModalitySpec,
    /// Frames kept from each OU trajectory; interoception dim is twice this.
    pub intero_frames: usize,
    pub ou_steps: usize,
    pub ou_dt: f64,
    pub separation: f64,
}

impl DatasetSpec {
    pub fn intero_dim(&self) -> usize {
        2 * self.intero_frames
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            vision: ModalitySpec {
                modality: Modality::Vision,
                dim: 40,
                noise_scale: 1.0,
            },
            audio: ModalitySpec {
                modality: Modality::Audio,
                dim: 60,
                noise_scale: 1.0,
            },
            intero_frames: 32,
            ou_steps: core_affect::DEFAULT_STEPS,
            ou_dt: core_affect::DEFAULT_DT,
            separation: 2.0,
        }
    }
}

fn agent_stream(seed: u64, agent_id: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((agent_id as u64 + 1) << 8) | salt);
    rng
}

/// `dim x n_emotions` matrix of class prototypes for one agent and modality.
pub fn make_prototypes(
    spec: &ModalitySpec,
    n_emotions: usize,
    agent_id: usize,
    seed: u64,
    separation: f64,
) -> DMatrix<f64> {
    let mut rng = agent_stream(seed, agent_id, 0x10 | spec.modality.stream());
    DMatrix::from_fn(spec.dim, n_emotions, |_, _| {
        separation * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Stimuli in label-major order: `per_emotion` stimuli for each emotion.
pub fn balanced_labels(per_emotion: usize) -> Vec<EmotionId> {
    EmotionId::ALL
        .into_iter()
        .flat_map(|e| std::iter::repeat_n(e, per_emotion))
        .collect()
}

fn noisy(proto: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    proto
        .iter()
        .map(|p| p + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn agent_observations(
    labels: &[EmotionId],
    spec: &DatasetSpec,
    profile: &InteroceptiveProfile,
    agent_id: usize,
    seed: u64,
) -> Result<Vec<MultimodalObservation>> {
    let vis = make_prototypes(&spec.vision, EmotionId::COUNT, agent_id, seed, spec.separation);
    let aud = make_prototypes(&spec.audio, EmotionId::COUNT, agent_id, seed, spec.separation);
    let mut noise_rng = agent_stream(seed, agent_id, 0x20);
    let mut body_rng = agent_stream(seed, agent_id, 0x30);
    let trajectories =
        core_affect::generate_interoception(labels, profile, spec.ou_steps, spec.ou_dt, &mut body_rng)?;

    let mut out = Vec::with_capacity(labels.len() * REPLICAS);
    for (stim, &label) in labels.iter().enumerate() {
        // Exteroception is drawn once per stimulus and shared by its replicas.
        let o_v = noisy(vis.column(label.index()).as_slice(), spec.vision.noise_scale, &mut noise_rng);
        let o_a = noisy(aud.column(label.index()).as_slice(), spec.audio.noise_scale, &mut noise_rng);
        for replica in 0..REPLICAS {
            let traj = &trajectories[stim * REPLICAS + replica];
            out.push(MultimodalObservation {
                stimulus_id: stim,
                replica,
                label,
                o_v: o_v.clone(),
                o_a: o_a.clone(),
                o_i: traj.downsample(spec.intero_frames).flatten(),
            });
        }
    }
    Ok(out)
}

/// Synthetic two-agent dataset with `labels.len() * 7` aligned observations.
pub fn build_dataset(
    labels: &[EmotionId],
    spec: &DatasetSpec,
    profiles: [&InteroceptiveProfile; 2],
    seed: u64,
) -> Result<StimulusDataset> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("label list is empty".into()));
    }
    spec.vision.validate()?;
    spec.audio.validate()?;
    if spec.intero_frames == 0 || spec.ou_steps == 0 {
        return Err(Error::InvalidArgument(
            "interoception needs at least one frame".into(),
        ));
    }
    let ds = StimulusDataset {
        agent_a: agent_observations(labels, spec, profiles[0], 0, seed)?,
        agent_b: agent_observations(labels, spec, profiles[1], 1, seed)?,
    };
    ds.check_aligned()?;
    Ok(ds)
}

/// Pre-extracted feature rows for one agent and modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub stimulus_id: String,
    pub label: EmotionId,
    pub features: Vec<f64>,
}

/// Reads `stimulus_id,label,f_0..f_{dim-1}` rows. Errors carry the 1-based
/// line number of the offending row.
pub fn load_feature_csv(path: &Path, spec: &ModalitySpec) -> Result<Vec<FeatureRow>> {
    let file = File::open(path)?;
    read_feature_csv(BufReader::new(file), path, spec)
}

pub fn read_feature_csv<R: BufRead>(reader: R, path: &Path, spec: &ModalitySpec) -> Result<Vec<FeatureRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(err(1, "missing header".into())),
    };
    let expected: Vec<String> = ["stimulus_id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..spec.dim).map(|i| format!("f_{i}")))
        .collect();
    let got: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    if got != expected {
        return Err(err(
            1,
            format!("header must be stimulus_id,label,f_0..f_{}", spec.dim - 1),
        ));
    }

    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').map(str::trim).collect();
        if fields.len() != spec.dim + 2 {
            return Err(err(
                lineno,
                format!("expected {} features, found {}", spec.dim, fields.len().saturating_sub(2)),
            ));
        }
        let label: EmotionId = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("unknown label '{}'", fields[1])))?;
        let features = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad feature value '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            stimulus_id: fields[0].to_string(),
            label,
            features,
        });
    }
    Ok(rows)
}

/// Writes one agent's modality in the same layout `load_feature_csv` reads;
/// stimulus ids are `<stimulus>-<replica>`.
pub fn write_feature_csv<W: Write>(w: W, obs: &[MultimodalObservation], m: Modality) -> Result<()> {
    let dim = obs.first().map(|o| o.modality(m).len()).unwrap_or(0);
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<String> = ["stimulus_id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..dim).map(|i| format!("f_{i}")))
        .collect();
    wtr.write_record(&header)?;
    for o in obs {
        let mut rec = vec![format!("{}-{}", o.stimulus_id, o.replica), o.label.name().to_string()];
        rec.extend(o.modality(m).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Exteroceptive rows from files, paired with simulated interoception.
/// Rows of both agents must list the same stimuli in the same order.
pub fn dataset_from_features(
    vision: [&[FeatureRow]; 2],
    audio: [&[FeatureRow]; 2],
    spec: &DatasetSpec,
    profiles: [&InteroceptiveProfile; 2],
    seed: u64,
) -> Result<StimulusDataset> {
    let n = vision[0].len();
    for rows in vision.iter().chain(audio.iter()) {
        if rows.len() != n {
            return Err(Error::DimensionMismatch {
                context: "feature row counts",
                expected: n,
                got: rows.len(),
            });
        }
    }
    let labels: Vec<EmotionId> = vision[0].iter().map(|r| r.label).collect();
    for rows in vision.iter().chain(audio.iter()) {
        for (r, (l, v0)) in rows.iter().zip(labels.iter().zip(vision[0])) {
            if r.label != *l || r.stimulus_id != v0.stimulus_id {
                return Err(Error::InvalidArgument(format!(
                    "feature files disagree at stimulus '{}'",
                    v0.stimulus_id
                )));
            }
        }
    }
    let mut agents = Vec::with_capacity(2);
    for agent in 0..2 {
        let mut body_rng = agent_stream(seed, agent, 0x30);
        let trajs = core_affect::generate_interoception(
            &labels,
            profiles[agent],
            spec.ou_steps,
            spec.ou_dt,
            &mut body_rng,
        )?;
        let mut obs = Vec::with_capacity(n * REPLICAS);
        for (stim, label) in labels.iter().enumerate() {
            for replica in 0..REPLICAS {
                obs.push(MultimodalObservation {
                    stimulus_id: stim,
                    replica,
                    label: *label,
                    o_v: vision[agent][stim].features.clone(),
                    o_a: audio[agent][stim].features.clone(),
                    o_i: trajs[stim * REPLICAS + replica]
                        .downsample(spec.intero_frames)
                        .flatten(),
                });
            }
        }
        agents.push(obs);
    }
    let agent_b = agents.pop().expect("two agents");
    let agent_a = agents.pop().expect("two agents");
    Ok(StimulusDataset { agent_a, agent_b })
}

/// Z-scores every dimension of every modality in place. Constant dimensions
/// are only centered.
pub fn standardize(obs: &mut [MultimodalObservation]) {
    if obs.is_empty() {
        return;
    }
    let n = obs.len() as f64;
    for m in [Modality::Vision, Modality::Audio, Modality::Interoception] {
        let dim = obs[0].modality(m).len();
        for j in 0..dim {
            let mean = obs.iter().map(|o| o.modality(m)[j]).sum::<f64>() / n;
            let var = obs
                .iter()
                .map(|o| (o.modality(m)[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
            for o in obs.iter_mut() {
                let v = &mut o.modality_mut(m)[j];
                *v = (*v - mean) / sd;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_affect::{build_profile, ProfileKind};
    use std::io::Cursor;

    fn spec(dim: usize) -> ModalitySpec {
        ModalitySpec {
            modality: Modality::Vision,
            dim,
            noise_scale: 1.0,
        }
    }

    #[test]
    fn zero_separation_gives_identical_prototypes() {
        let p = make_prototypes(&spec(5), 8, 0, 1, 0.0);
        for c in 1..8 {
            assert_eq!(p.column(c), p.column(0));
        }
    }

    #[test]
    fn prototypes_deterministic_and_agent_specific() {
        let a1 = make_prototypes(&spec(6), 8, 0, 42, 2.0);
        let a2 = make_prototypes(&spec(6), 8, 0, 42, 2.0);
        let b = make_prototypes(&spec(6), 8, 1, 42, 2.0);
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert!((&a1 - &b).abs().max() > 0.1);
    }

    #[test]
    fn default_dataset_size_and_alignment() {
        let orig = build_profile(ProfileKind::Original);
        let labels = balanced_labels(8);
        let ds = build_dataset(&labels, &DatasetSpec::default(), [&orig, &orig], 5).unwrap();
        assert_eq!(ds.len(), 448);
        ds.check_aligned().unwrap();
        let mut counts = [0usize; 8];
        for o in &ds.agent_a {
            counts[o.label.index()] += 1;
            assert_eq!(o.o_v.len(), 40);
            assert_eq!(o.o_a.len(), 60);
            assert_eq!(o.o_i.len(), 64);
        }
        assert!(counts.iter().all(|&c| c == 56));
    }

    #[test]
    fn noiseless_observations_are_prototypes() {
        let mut profile = build_profile(ProfileKind::Original);
        for e in EmotionId::ALL {
            let mut p = profile[e];
            p.sigma_v = 0.0;
            p.sigma_a = 0.0;
            profile.set_params(e, p).unwrap();
        }
        let mut s = DatasetSpec::default();
        s.vision.noise_scale = 0.0;
        s.audio.noise_scale = 0.0;
        let labels = [EmotionId::Angry, EmotionId::Calm];
        let ds = build_dataset(&labels, &s, [&profile, &profile], 3).unwrap();
        let vis = make_prototypes(&s.vision, 8, 1, 3, s.separation);
        for o in &ds.agent_b {
            assert_eq!(o.o_v.as_slice(), vis.column(o.label.index()).as_slice());
        }
        // Deterministic bodies: both agents share the same trajectories.
        for (a, b) in ds.agent_a.iter().zip(&ds.agent_b) {
            assert_eq!(a.o_i, b.o_i);
        }
    }

    #[test]
    fn nearest_prototype_recovers_labels() {
        let orig = build_profile(ProfileKind::Original);
        let s = DatasetSpec::default();
        let ds = build_dataset(&balanced_labels(8), &s, [&orig, &orig], 11).unwrap();
        let protos = make_prototypes(&s.vision, 8, 0, 11, s.separation);
        let correct = ds
            .agent_a
            .iter()
            .filter(|o| {
                let best = (0..8)
                    .min_by(|&i, &j| {
                        let di: f64 = o.o_v.iter().zip(protos.column(i).iter()).map(|(x, p)| (x - p).powi(2)).sum();
                        let dj: f64 = o.o_v.iter().zip(protos.column(j).iter()).map(|(x, p)| (x - p).powi(2)).sum();
                        di.total_cmp(&dj)
                    })
                    .unwrap();
                best == o.label.index()
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 > 0.95);
    }

    #[test]
    fn empty_labels_rejected() {
        let orig = build_profile(ProfileKind::Original);
        assert!(build_dataset(&[], &DatasetSpec::default(), [&orig, &orig], 0).is_err());
    }

    #[test]
    fn csv_header_only_is_empty() {
        let text = "stimulus_id,label,f_0,f_1\n";
        let rows = read_feature_csv(Cursor::new(text), Path::new("x.csv"), &spec(2)).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn csv_single_row_roundtrips() {
        let text = "stimulus_id,label,f_0,f_1\nclip-01,angry,0.5,-1.25\n";
        let rows = read_feature_csv(Cursor::new(text), Path::new("x.csv"), &spec(2)).unwrap();
        assert_eq!(
            rows,
            vec![FeatureRow {
                stimulus_id: "clip-01".into(),
                label: EmotionId::Angry,
                features: vec![0.5, -1.25],
            }]
        );
    }

    #[test]
    fn csv_short_row_names_line() {
        let text = "stimulus_id,label,f_0,f_1\na,calm,1,2\nb,calm,1\n";
        let e = read_feature_csv(Cursor::new(text), Path::new("x.csv"), &spec(2)).unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(e.to_string().contains("x.csv:3"));
    }

    #[test]
    fn csv_unknown_label_and_bad_header() {
        let text = "stimulus_id,label,f_0\na,joy,1\n";
        assert!(matches!(
            read_feature_csv(Cursor::new(text), Path::new("x"), &spec(1)),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "id,label,f_0\n";
        assert!(matches!(
            read_feature_csv(Cursor::new(text), Path::new("x"), &spec(1)),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn export_reloads() {
        let orig = build_profile(ProfileKind::Original);
        let ds = build_dataset(&[EmotionId::Sad], &DatasetSpec::default(), [&orig, &orig], 2).unwrap();
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &ds.agent_a, Modality::Audio).unwrap();
        let rows = read_feature_csv(Cursor::new(buf), Path::new("a"), &DatasetSpec::default().audio).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[3].stimulus_id, "0-3");
        assert_eq!(rows[3].features, ds.agent_a[3].o_a);
    }

    #[test]
    fn standardize_gives_unit_moments() {
        let orig = build_profile(ProfileKind::Original);
        let mut obs = build_dataset(&balanced_labels(2), &DatasetSpec::default(), [&orig, &orig], 4)
            .unwrap()
            .agent_a;
        standardize(&mut obs);
        let n = obs.len() as f64;
        for j in [0, 7, 33] {
            let mean = obs.iter().map(|o| o.o_a[j]).sum::<f64>() / n;
            let var = obs.iter().map(|o| (o.o_a[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
        // The first frame is a fixed start state set: still finite after scaling.
        assert!(obs.iter().all(|o| o.o_i.iter().all(|v| v.is_finite())));
    }
}
