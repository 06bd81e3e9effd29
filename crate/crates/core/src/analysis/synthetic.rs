//! Seeded synthetic score data with known generating parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use super::models::{method_dummies, ScoreRecord};
use super::special::logistic;
use crate::pipeline::Method;

pub fn beta_draw<R: Rng + ?Sized>(rng: &mut R, mu: f64, phi: f64) -> f64 {
    Beta::new(mu * phi, (1.0 - mu) * phi)
        .expect("positive shape parameters")
        .sample(rng)
}

/// `x ~ U(−0.5, 0.5)`, `y ~ Beta(μφ, (1−μ)φ)` with `logit μ = β₀ + β₁x`.
pub fn linear_dataset(seed: u64, n: usize, beta0: f64, beta1: f64, phi: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-0.5..0.5);
        xs.push(x);
        ys.push(beta_draw(&mut rng, logistic(beta0 + beta1 * x), phi));
    }
    (xs, ys)
}

/// Scores for every method on a grid of debates, with mean
/// `logit μ = β₀ + β₁x + β₂x² + γ_m` over uncentered order `x = k/n`.
#[derive(Debug, Clone)]
pub struct OrderScenario {
    pub debates: usize,
    pub interventions: usize,
    pub intercept: f64,
    pub linear: f64,
    pub quadratic: f64,
    /// Shifts for hierarchical, grouped, prompted.
    pub method_shift: [f64; 3],
    pub phi: f64,
}

impl OrderScenario {
    pub fn flat() -> Self {
        Self {
            debates: 20,
            interventions: 30,
            intercept: -1.0,
            linear: 0.0,
            quadratic: 0.0,
            method_shift: [0.0; 3],
            phi: 10.0,
        }
    }

    /// Higher fidelity at both ends of the debate.
    pub fn u_shaped() -> Self {
        Self {
            linear: -3.0,
            quadratic: 3.0,
            ..Self::flat()
        }
    }

    pub fn records(&self, seed: u64, model: &str) -> Vec<ScoreRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.interventions;
        let mut out = Vec::with_capacity(self.debates * n * 4);
        for d in 0..self.debates {
            for method in Method::ALL {
                let dm = method_dummies(method);
                let shift: f64 = dm.iter().zip(&self.method_shift).map(|(a, b)| a * b).sum();
                for k in 1..=n {
                    let x = k as f64 / n as f64;
                    let mu = logistic(self.intercept + self.linear * x + self.quadratic * x * x + shift);
                    let y = beta_draw(&mut rng, mu, self.phi);
                    out.push(record(format!("d{d:03}"), method, model, k, n, format!("P{}", k % 3), y));
                }
            }
        }
        out
    }
}

/// Party groups with their row counts and logit shifts; order enters centered.
#[derive(Debug, Clone)]
pub struct PartyScenario {
    pub parties: Vec<(String, usize, f64)>,
    pub intercept: f64,
    pub linear: f64,
    pub quadratic: f64,
    pub interventions: usize,
    pub phi: f64,
}

impl PartyScenario {
    /// Three equally sized parties; `shift` applies to the second one.
    pub fn three_parties(rows_per_party: usize, shift: f64) -> Self {
        Self {
            parties: vec![
                ("A".into(), rows_per_party + 1, 0.0),
                ("B".into(), rows_per_party, shift),
                ("C".into(), rows_per_party, 0.0),
            ],
            intercept: -1.0,
            linear: -0.5,
            quadratic: 1.0,
            interventions: 30,
            phi: 10.0,
        }
    }

    pub fn records(&self, seed: u64, model: &str, method: Method) -> Vec<ScoreRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.interventions;
        let mut out = Vec::new();
        for (party, count, shift) in &self.parties {
            for i in 0..*count {
                let k = rng.random_range(1..=n);
                let x = k as f64 / n as f64 - 0.5;
                let mu = logistic(self.intercept + self.linear * x + self.quadratic * x * x + shift);
                let y = beta_draw(&mut rng, mu, self.phi);
                out.push(record(format!("d{:03}", i / n), method, model, k, n, party.clone(), y));
            }
        }
        out
    }
}

fn record(
    debate_id: String,
    method: Method,
    model: &str,
    k: usize,
    n: usize,
    party_group: String,
    f1: f64,
) -> ScoreRecord {
    ScoreRecord {
        debate_id,
        method,
        model: model.to_string(),
        order_k: k as u32,
        n: n as u32,
        relative_order: k as f64 / n as f64,
        speaker_id: format!("{party_group}-{k}"),
        party_group,
        precision: f1,
        recall: f1,
        f1,
        compression: 0.0,
        decompression: 0.0,
        found: true,
    }
}
