//! Trains every fusion variant on the same synthetic data and compares them.

use std::fmt::Write as _;

use crate::data::{labels, subset, synth_samples};
use crate::error::Result;
use crate::metrics::{stratified_split, EvalReport};
use crate::model::{ModelConfig, Variant};
use crate::motion::MotionConfig;
use crate::synth::{generate, SynthConfig};
use crate::train::{evaluate_model, init_model, train, TrainConfig};

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub motion: MotionConfig,
    pub synth: SynthConfig,
    /// Each seed draws its own dataset, split, initialization and batch order.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            model: ModelConfig::bench(),
            train: TrainConfig::default(),
            motion: MotionConfig::default(),
            synth: SynthConfig::default(),
            seeds: vec![0, 1, 2],
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub reports: Vec<EvalReport>,
}

impl AblationRow {
    pub fn accuracies(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.overall_accuracy).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracies())
    }

    pub fn mean_macro_f1(&self) -> f64 {
        mean(&self.reports.iter().map(|r| r.macro_f1).collect::<Vec<_>>())
    }

    /// Mean per-class recall over seeds, skipping seeds without support.
    pub fn mean_recall(&self, class: usize) -> Option<f64> {
        let v: Vec<f64> = self.reports.iter().filter_map(|r| r.per_class[class].recall).collect();
        (!v.is_empty()).then(|| mean(&v))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Progress events: `(variant, seed, epoch, mean loss)` after every epoch.
pub fn run_ablation(config: &AblationConfig, mut progress: impl FnMut(Variant, u64, usize, f64)) -> Result<Vec<AblationRow>> {
    let mut rows: Vec<AblationRow> = config
        .variants
        .iter()
        .map(|&variant| AblationRow {
            variant,
            reports: Vec::new(),
        })
        .collect();
    for &seed in &config.seeds {
        let synth = SynthConfig {
            seed,
            ..config.synth.clone()
        };
        let data = generate(&synth)?;
        let samples = synth_samples(&data, &config.motion)?;
        let split = stratified_split(&labels(&samples), config.model.n_classes, config.train.split_fraction, seed)?;
        let (train_set, test_set) = (subset(&samples, &split.train), subset(&samples, &split.test));
        let train_config = TrainConfig {
            seed,
            ..config.train.clone()
        };
        for row in &mut rows {
            let mut net = init_model::<f32>(config.model.with_variant(row.variant), seed)?;
            train(&mut net, &train_set, &train_config, |epoch, loss| {
                progress(row.variant, seed, epoch, loss)
            })?;
            row.reports.push(evaluate_model(&net, &test_set)?);
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,mean_accuracy,mean_macro_f1,joy,angry,disgust,fear,sadness,surprise,per_seed_accuracy\n");
    for row in rows {
        let recalls: Vec<String> = (0..6)
            .map(|c| row.mean_recall(c).map(|r| format!("{r:.4}")).unwrap_or_default())
            .collect();
        let seeds: Vec<String> = row.accuracies().iter().map(|a| format!("{a:.4}")).collect();
        let _ = writeln!(
            s,
            "{},{:.4},{:.4},{},{}",
            row.variant,
            row.mean_accuracy(),
            row.mean_macro_f1(),
            recalls.join(","),
            seeds.join(" ")
        );
    }
    s
}

pub fn to_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<20} {:>8} {:>8} {:>6} {:>6} {:>7} {:>6} {:>7} {:>8}\n",
        "model", "accuracy", "f1", "joy", "angry", "disgust", "fear", "sadness", "surprise"
    );
    for row in rows {
        let r = |c| row.mean_recall(c).map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<20} {:>8.3} {:>8.3} {:>6} {:>6} {:>7} {:>6} {:>7} {:>8}",
            row.variant.name(),
            row.mean_accuracy(),
            row.mean_macro_f1(),
            r(0),
            r(1),
            r(2),
            r(3),
            r(4),
            r(5)
        );
    }
    s
}
