//! Versioned JSON checkpoint of a finished game.
//!
//! Every array is stored as a `Tensor`: a shape header plus row-major values.
//! Matrices have shape `[rows, cols]`, vectors `[len]`. Latents are stored as
//! `[D, latent_dim]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{GmmComponent, GmmParams};
use crate::mhng::GameState;
use crate::mvae::{MlpParams, ModalityNet, MvaeParams};
use crate::stimuli::Modality;

pub const FORMAT: &str = "coaffect-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Tensor {
        Tensor {
            shape: vec![m.nrows(), m.ncols()],
            values: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Tensor {
        Tensor {
            shape: vec![v.len()],
            values: v.as_slice().to_vec(),
        }
    }

    fn check(&self, rank: usize) -> Result<()> {
        if self.shape.len() != rank || self.shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {:?} does not fit {} values as rank {rank}",
                self.shape,
                self.values.len()
            )));
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        self.check(2)?;
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.values))
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        self.check(1)?;
        Ok(DVector::from_row_slice(&self.values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpRecord {
    fn new(p: &MlpParams) -> MlpRecord {
        MlpRecord {
            w1: Tensor::from_matrix(&p.w1),
            b1: Tensor::from_vector(&p.b1),
            w2: Tensor::from_matrix(&p.w2),
            b2: Tensor::from_vector(&p.b2),
        }
    }

    fn restore(&self) -> Result<MlpParams> {
        Ok(MlpParams {
            w1: self.w1.to_matrix()?,
            b1: self.b1.to_vector()?,
            w2: self.w2.to_matrix()?,
            b2: self.b2.to_vector()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub modality: Modality,
    pub encoder: MlpRecord,
    pub decoder: MlpRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub mu: Tensor,
    pub lambda: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub latent_dim: usize,
    pub unit_prior_expert: bool,
    pub nets: Vec<NetRecord>,
    pub pi: Vec<f64>,
    pub components: Vec<ComponentRecord>,
    pub latents: Tensor,
    pub signs: Vec<usize>,
}

impl AgentRecord {
    pub fn mvae(&self) -> Result<MvaeParams> {
        let nets = self
            .nets
            .iter()
            .map(|n| {
                Ok(ModalityNet {
                    modality: n.modality,
                    encoder: n.encoder.restore()?,
                    decoder: n.decoder.restore()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MvaeParams {
            latent_dim: self.latent_dim,
            unit_prior_expert: self.unit_prior_expert,
            nets,
        })
    }

    pub fn gmm(&self) -> Result<GmmParams> {
        let comps = self
            .components
            .iter()
            .map(|c| GmmComponent::new(c.mu.to_vector()?, c.lambda.to_matrix()?))
            .collect::<Result<Vec<_>>>()?;
        GmmParams::new(comps, self.pi.clone())
    }

    /// Latents as one vector per datum.
    pub fn latents(&self) -> Result<Vec<DVector<f64>>> {
        let m = self.latents.to_matrix()?;
        Ok(m.row_iter().map(|r| r.transpose()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub round: usize,
    pub labels: Vec<usize>,
    pub agents: Vec<AgentRecord>,
}

impl Checkpoint {
    pub fn from_game(game: &GameState, labels: &[usize]) -> Checkpoint {
        let agents = game
            .agents
            .iter()
            .map(|a| AgentRecord {
                latent_dim: a.mvae.latent_dim,
                unit_prior_expert: a.mvae.unit_prior_expert,
                nets: a
                    .mvae
                    .nets
                    .iter()
                    .map(|n| NetRecord {
                        modality: n.modality,
                        encoder: MlpRecord::new(&n.encoder),
                        decoder: MlpRecord::new(&n.decoder),
                    })
                    .collect(),
                pi: a.gmm.pi.clone(),
                components: a
                    .gmm
                    .components
                    .iter()
                    .map(|c| ComponentRecord {
                        mu: Tensor::from_vector(c.mu()),
                        lambda: Tensor::from_matrix(c.lambda()),
                    })
                    .collect(),
                latents: Tensor::from_matrix(&a.latent_matrix().transpose()),
                signs: a.signs.clone(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            round: game.round,
            labels: labels.to_vec(),
            agents,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                ck.format, ck.version
            )));
        }
        if ck.agents.len() != 2 {
            return Err(Error::InvalidArgument(format!("checkpoint holds {} agents, expected 2", ck.agents.len())));
        }
        for a in &ck.agents {
            if a.signs.len() != ck.labels.len() || a.latents.shape.first() != Some(&ck.labels.len()) {
                return Err(Error::DimensionMismatch {
                    context: "checkpoint signs/latents vs labels",
                    expected: ck.labels.len(),
                    got: a.signs.len(),
                });
            }
        }
        Ok(ck)
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}
