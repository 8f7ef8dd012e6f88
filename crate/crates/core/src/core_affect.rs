//! Valence-arousal core affect simulated as a two-axis Ornstein-Uhlenbeck process.
//!
//! Each emotion category owns an attractor `(mu_v, mu_a)` with per-axis
//! reversion rate and volatility. A labeled stimulus is turned into seven
//! trajectories, one per "preceding" emotion, each starting at that emotion's
//! mean and relaxing toward the target attractor.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of replicas emitted per labeled stimulus (one per other emotion).
pub const REPLICAS: usize = EmotionId::COUNT - 1;

/// Trajectories are clipped to this box on both axes.
pub const AFFECT_CLIP: f64 = 1.5;

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 345;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionId {
    Neutral,
    Calm,
    Happy,
    Sad,
    Angry,
    Fearful,
    Disgust,
    Surprised,
}

impl EmotionId {
    pub const COUNT: usize = 8;

    pub const ALL: [EmotionId; 8] = [
        EmotionId::Neutral,
        EmotionId::Calm,
        EmotionId::Happy,
        EmotionId::Sad,
        EmotionId::Angry,
        EmotionId::Fearful,
        EmotionId::Disgust,
        EmotionId::Surprised,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EmotionId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionId::Neutral => "neutral",
            EmotionId::Calm => "calm",
            EmotionId::Happy => "happy",
            EmotionId::Sad => "sad",
            EmotionId::Angry => "angry",
            EmotionId::Fearful => "fearful",
            EmotionId::Disgust => "disgust",
            EmotionId::Surprised => "surprised",
        }
    }

    /// The seven emotions other than `self`, in ordinal order.
    pub fn others(self) -> impl Iterator<Item = EmotionId> {
        Self::ALL.into_iter().filter(move |e| *e != self)
    }
}

impl fmt::Display for EmotionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Ok(i) = lower.parse::<usize>() {
            return EmotionId::from_index(i)
                .ok_or_else(|| Error::InvalidArgument(format!("emotion index {i} out of range")));
        }
        EmotionId::ALL
            .into_iter()
            .find(|e| e.name() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown emotion '{s}'")))
    }
}

/// Per-axis OU parameters for one emotion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    pub mu_v: f64,
    pub mu_a: f64,
    pub theta_v: f64,
    pub theta_a: f64,
    pub sigma_v: f64,
    pub sigma_a: f64,
}

impl OUParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu_v,
            self.mu_a,
            self.theta_v,
            self.theta_a,
            self.sigma_v,
            self.sigma_a,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("OU parameters"));
        }
        if self.theta_v <= 0.0 || self.theta_a <= 0.0 {
            return Err(Error::InvalidArgument(
                "OU reversion rates must be positive".into(),
            ));
        }
        if self.sigma_v < 0.0 || self.sigma_a < 0.0 {
            return Err(Error::InvalidArgument(
                "OU volatilities must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.mu_v, self.mu_a]
    }

    /// Stationary variance `sigma^2 / (2 theta)` per axis.
    pub fn stationary_variance(&self) -> [f64; 2] {
        [
            self.sigma_v * self.sigma_v / (2.0 * self.theta_v),
            self.sigma_a * self.sigma_a / (2.0 * self.theta_a),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Original,
    HappyInverse,
    LowValenceFocus,
    LowArousalFocus,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] = [
        ProfileKind::Original,
        ProfileKind::HappyInverse,
        ProfileKind::LowValenceFocus,
        ProfileKind::LowArousalFocus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Original => "original",
            ProfileKind::HappyInverse => "happy_inverse",
            ProfileKind::LowValenceFocus => "low_valence_focus",
            ProfileKind::LowArousalFocus => "low_arousal_focus",
        }
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        ProfileKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown profile '{s}'")))
    }
}

/// Attractor table for one body. Indexed by `EmotionId`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteroceptiveProfile {
    pub kind: ProfileKind,
    params: [OUParams; 8],
}

impl InteroceptiveProfile {
    pub fn params(&self, e: EmotionId) -> &OUParams {
        &self.params[e.index()]
    }

    /// Replace one emotion's parameters, e.g. from a config override.
    pub fn set_params(&mut self, e: EmotionId, p: OUParams) -> Result<()> {
        p.validate()?;
        self.params[e.index()] = p;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (EmotionId, &OUParams)> {
        EmotionId::ALL.into_iter().zip(self.params.iter())
    }
}

impl std::ops::Index<EmotionId> for InteroceptiveProfile {
    type Output = OUParams;

    fn index(&self, e: EmotionId) -> &OUParams {
        self.params(e)
    }
}

const fn ou(mu_v: f64, mu_a: f64, sigma_v: f64, sigma_a: f64, theta_v: f64, theta_a: f64) -> OUParams {
    OUParams {
        mu_v,
        mu_a,
        theta_v,
        theta_a,
        sigma_v,
        sigma_a,
    }
}

// Row order follows EmotionId; columns are (mu_v, mu_a, sigma_v, sigma_a, theta_v, theta_a).
const ORIGINAL_TABLE: [OUParams; 8] = [
    ou(0.00, 0.00, 0.090, 0.090, 1.5, 1.5),
    ou(0.80, -0.50, 0.135, 0.180, 2.1, 1.8),
    ou(0.90, 0.50, 0.090, 0.225, 2.7, 2.4),
    ou(-0.70, -0.50, 0.180, 0.135, 2.4, 2.1),
    ou(-0.60, 0.60, 0.225, 0.270, 1.8, 2.7),
    ou(-0.80, 0.70, 0.270, 0.315, 1.5, 3.0),
    ou(-0.90, 0.20, 0.225, 0.225, 2.1, 2.4),
    ou(0.00, 0.80, 0.180, 0.360, 1.2, 1.8),
];

pub fn build_profile(kind: ProfileKind) -> InteroceptiveProfile {
    let mut params = ORIGINAL_TABLE;
    match kind {
        ProfileKind::Original => {}
        ProfileKind::HappyInverse => {
            let happy = &mut params[EmotionId::Happy.index()];
            happy.mu_v = -happy.mu_v;
            happy.mu_a = -happy.mu_a;
        }
        ProfileKind::LowValenceFocus => {
            for p in &mut params {
                p.mu_v *= 0.25;
                p.theta_v *= 0.25;
                p.sigma_v *= 0.25;
            }
        }
        ProfileKind::LowArousalFocus => {
            for p in &mut params {
                p.mu_a *= 0.25;
                p.theta_a *= 0.25;
                p.sigma_a *= 0.25;
            }
        }
    }
    InteroceptiveProfile { kind, params }
}

/// One Euler-Maruyama step of the two-axis OU process.
pub fn euler_maruyama_step(x: [f64; 2], p: &OUParams, dt: f64, noise: [f64; 2]) -> Result<[f64; 2]> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if x.iter().chain(noise.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OU state"));
    }
    let sq = dt.sqrt();
    Ok([
        x[0] + p.theta_v * (p.mu_v - x[0]) * dt + p.sigma_v * sq * noise[0],
        x[1] + p.theta_a * (p.mu_a - x[1]) * dt + p.sigma_a * sq * noise[1],
    ])
}

/// `T x 2` valence/arousal samples at a fixed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectTrajectory {
    pub samples: Vec<[f64; 2]>,
    pub dt: f64,
}

impl AffectTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> [f64; 2] {
        *self.samples.last().expect("trajectory has at least one sample")
    }

    /// Evenly spaced subsample of `frames` samples, always keeping both ends.
    pub fn downsample(&self, frames: usize) -> AffectTrajectory {
        let t = self.samples.len();
        if frames >= t || frames == 0 {
            return self.clone();
        }
        let samples = if frames == 1 {
            vec![self.samples[t - 1]]
        } else {
            (0..frames)
                .map(|i| self.samples[(i * (t - 1) + (frames - 1) / 2) / (frames - 1)])
                .collect()
        };
        let stride = (t - 1) as f64 / (frames.max(2) - 1) as f64;
        AffectTrajectory {
            samples,
            dt: self.dt * stride,
        }
    }

    /// Row-major flattening `[v0, a0, v1, a1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.iter().copied()).collect()
    }
}

/// Simulates `steps` samples (the first being `start`) under `params`.
pub fn simulate<R: Rng + ?Sized>(
    start: [f64; 2],
    params: &OUParams,
    steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<AffectTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one step".into()));
    }
    let mut samples = Vec::with_capacity(steps);
    let mut x = start;
    samples.push(x);
    for _ in 1..steps {
        let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        x = euler_maruyama_step(x, params, dt, noise)?;
        x = x.map(|v| v.clamp(-AFFECT_CLIP, AFFECT_CLIP));
        samples.push(x);
    }
    Ok(AffectTrajectory { samples, dt })
}

/// Seven trajectories per label, replica `j` starting at the Original-profile
/// mean of the `j`-th emotion other than the label and relaxing under the
/// label's parameters from `profile`. Output is label-major, replica-minor.
pub fn generate_interoception<R: Rng + ?Sized>(
    labels: &[EmotionId],
    profile: &InteroceptiveProfile,
    steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<AffectTrajectory>> {
    let original = build_profile(ProfileKind::Original);
    let mut out = Vec::with_capacity(labels.len() * REPLICAS);
    for &label in labels {
        let target = profile.params(label);
        for prior in label.others() {
            out.push(simulate(original[prior].mean(), target, steps, dt, rng)?);
        }
    }
    Ok(out)
}

/// Writes `(stimulus_id, replica, t, valence, arousal)` rows.
pub fn write_trajectories_csv<'a, W: Write>(
    w: W,
    rows: impl IntoIterator<Item = (usize, usize, &'a AffectTrajectory)>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["stimulus_id", "replica", "t", "valence", "arousal"])?;
    for (stim, replica, traj) in rows {
        for (i, s) in traj.samples.iter().enumerate() {
            let t = i as f64 * traj.dt;
            wtr.write_record([
                stim.to_string(),
                replica.to_string(),
                t.to_string(),
                s[0].to_string(),
                s[1].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
