use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use super::{Interaction, StudentSequence};
use crate::autograd::sigmoid;
use crate::error::{Error, Result};

/// Item-response simulator with a per-exposure learning effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_kcs: usize,
    /// Mean student ability (logit scale).
    pub ability_mean: f64,
    /// Standard deviation of student ability.
    pub ability_spread: f64,
    /// Standard deviation of question difficulty.
    pub difficulty_spread: f64,
    /// Logit gain per earlier attempt that shared a KC with the current question.
    pub learning_rate_per_exposure: f64,
    pub mean_seq_len: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_students: 500,
            n_questions: 100,
            n_kcs: 10,
            ability_mean: 0.0,
            ability_spread: 1.0,
            difficulty_spread: 1.0,
            learning_rate_per_exposure: 0.05,
            mean_seq_len: 30.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_students == 0 || self.n_questions == 0 || self.n_kcs == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        for (name, v) in [("ability_spread", self.ability_spread), ("difficulty_spread", self.difficulty_spread)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number")));
            }
        }
        if !self.ability_mean.is_finite() {
            return Err(Error::Config("ability_mean must be finite".into()));
        }
        if !(self.learning_rate_per_exposure.is_finite() && self.learning_rate_per_exposure >= 0.0) {
            return Err(Error::Config("learning_rate_per_exposure must be >= 0".into()));
        }
        if !(self.mean_seq_len.is_finite() && self.mean_seq_len >= 3.0) {
            return Err(Error::Config("mean_seq_len must be at least 3".into()));
        }
        Ok(())
    }
}

/// Generating parameters, written next to a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per student, in sequence order.
    pub abilities: Vec<f64>,
    /// Per question id.
    pub difficulties: Vec<f64>,
    pub question_kcs: Vec<Vec<u32>>,
    /// Correct-response probability used for every generated interaction.
    #[serde(skip)]
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub sequences: Vec<StudentSequence>,
    pub truth: GroundTruth,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(config.seed);
    let ability = Normal::new(config.ability_mean, config.ability_spread).map_err(|e| Error::Config(e.to_string()))?;
    let difficulty = Normal::new(0.0, config.difficulty_spread).map_err(|e| Error::Config(e.to_string()))?;
    let length = Geometric::new(1.0 / (config.mean_seq_len - 2.0)).map_err(|e| Error::Config(e.to_string()))?;

    let difficulties: Vec<f64> = (0..config.n_questions).map(|_| difficulty.sample(&mut rng)).collect();
    let question_kcs: Vec<Vec<u32>> = (0..config.n_questions)
        .map(|_| {
            let k = if config.n_kcs >= 2 { rng.gen_range(1..=2) } else { 1 };
            let mut kcs: Vec<u32> = sample(&mut rng, config.n_kcs, k).into_iter().map(|c| c as u32).collect();
            kcs.sort_unstable();
            kcs
        })
        .collect();

    let mut sequences = Vec::with_capacity(config.n_students);
    let mut abilities = Vec::with_capacity(config.n_students);
    let mut probabilities = Vec::with_capacity(config.n_students);
    for s in 0..config.n_students {
        let theta = ability.sample(&mut rng);
        let len = 3 + length.sample(&mut rng) as usize;
        let mut t: u64 = rng.gen_range(0..1_000_000_000);
        let mut interactions: Vec<Interaction> = Vec::with_capacity(len);
        let mut probs = Vec::with_capacity(len);
        for _ in 0..len {
            let q = rng.gen_range(0..config.n_questions);
            let kcs = &question_kcs[q];
            let exposures = interactions
                .iter()
                .filter(|prev| prev.kc_ids.iter().any(|c| kcs.contains(c)))
                .count();
            let p = sigmoid(theta - difficulties[q] + config.learning_rate_per_exposure * exposures as f64);
            let response = rng.gen::<f64>() < p;
            t += rng.gen_range(1_000..=120_000);
            interactions.push(Interaction::new(q as u32, kcs.clone(), response, t));
            probs.push(p);
        }
        sequences.push(StudentSequence { student_id: format!("u{s}"), interactions });
        abilities.push(theta);
        probabilities.push(probs);
    }
    Ok(SyntheticDataset { sequences, truth: GroundTruth { abilities, difficulties, question_kcs, probabilities } })
}
