//! Records drawn from the crossed random-intercept model itself.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EvaluationRecord;

/// Parameters of a simulated corpus with known fixed and random effects.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDesign {
    pub datasets: usize,
    pub instances_per_dataset: usize,
    pub models: usize,
    /// Explainer names with their planted effects.
    pub effects: Vec<(String, f64)>,
    pub intercept: f64,
    pub sd_instance: f64,
    pub sd_model: f64,
    pub sd_dataset: f64,
    pub sd_resid: f64,
    pub seed: u64,
}

impl Default for PlantedDesign {
    /// 2 datasets x 250 instances x 2 models x 3 explainers = 3,000 records.
    fn default() -> Self {
        Self {
            datasets: 2,
            instances_per_dataset: 250,
            models: 2,
            effects: vec![("random".into(), 0.0), ("gradient".into(), 0.01), ("attention".into(), 0.03)],
            intercept: 0.05,
            sd_instance: 0.05,
            sd_model: 0.02,
            sd_dataset: 0.03,
            sd_resid: 0.02,
            seed: 2024,
        }
    }
}

/// Simulates the `f_syn` column; every instance is scored by every model and explainer.
pub fn simulate_planted(design: &PlantedDesign) -> Vec<EvaluationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let mut draw = |sd: f64| if sd > 0.0 { Normal::new(0.0, sd).expect("finite sd").sample(&mut rng) } else { 0.0 };
    let dataset_effects: Vec<f64> = (0..design.datasets).map(|_| draw(design.sd_dataset)).collect();
    let model_effects: Vec<f64> = (0..design.models).map(|_| draw(design.sd_model)).collect();
    let mut records = Vec::with_capacity(
        design.datasets * design.instances_per_dataset * design.models * design.effects.len(),
    );
    for (d, w) in dataset_effects.iter().enumerate() {
        for i in 0..design.instances_per_dataset {
            let u = draw(design.sd_instance);
            for (m, v) in model_effects.iter().enumerate() {
                for (explainer, beta) in &design.effects {
                    let mut r = EvaluationRecord::empty(
                        &format!("dataset{d}"),
                        &format!("model{m}"),
                        &format!("inst{i:04}"),
                        explainer,
                    );
                    r.f_syn = design.intercept + beta + u + v + w + draw(design.sd_resid);
                    records.push(r);
                }
            }
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_design_has_three_thousand_records() {
        let records = simulate_planted(&PlantedDesign::default());
        assert_eq!(records.len(), 3000);
        assert_eq!(records, simulate_planted(&PlantedDesign::default()));
    }

    #[test]
    fn zero_variances_leave_exact_effects() {
        let design = PlantedDesign {
            instances_per_dataset: 3,
            sd_instance: 0.0,
            sd_model: 0.0,
            sd_dataset: 0.0,
            sd_resid: 0.0,
            ..PlantedDesign::default()
        };
        for r in simulate_planted(&design) {
            let beta = design.effects.iter().find(|(e, _)| *e == r.explainer).unwrap().1;
            assert_eq!(r.f_syn, 0.05 + beta);
        }
    }
}
