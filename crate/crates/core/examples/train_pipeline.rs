//! Trains one fixed pipeline on the sine benchmark and scores held-out data.
//!
//! ```text
//! cargo run --release --example train_pipeline
//! ```

use tsrep::augment::AugmentKind;
use tsrep::bandit::PipelineConfig;
use tsrep::bo::{HpValue, HyperparamVector};
use tsrep::data::{self, SplitConfig, Task};
use tsrep::metrics;
use tsrep::nets::{Attention, CellKind, SimKind};
use tsrep::train::{self, TrainConfig};

fn main() -> tsrep::Result<()> {
    let dataset = data::make_synthetic_sine(300, 100, 64, (0.1, 0.2), 3)?;
    let split = data::split(
        &dataset,
        &SplitConfig {
            task: Task::Anomaly,
            ratios: (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0),
            ..SplitConfig::default()
        },
    )?;

    let pipeline = PipelineConfig::from_parts(AugmentKind::Scaling, CellKind::Gru, Attention::None, CellKind::Gru, SimKind::Both);
    let hp = HyperparamVector::default()
        .with("n_aug", HpValue::Int(20))
        .with("h_amp", HpValue::Real(1.2))
        .with("h_enc", HpValue::Int(8))
        .with("h_dec", HpValue::Int(8))
        .with("components", HpValue::Int(2))
        .with("est_layers", HpValue::Int(1))
        .with("est_nodes", HpValue::Int(16))
        .with("clas_layers", HpValue::Int(1))
        .with("clas_nodes", HpValue::Int(16));
    let tc = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };

    let model = train::train_model(&pipeline, &hp, &split, &tc)?;
    print!("{}", model.log_jsonl());

    let report = metrics::evaluate(&model, &split.test, Task::Anomaly, "test")?;
    println!("test {} {:.4}", report.metric, report.value);

    let scores = train::score_dataset(&model, &split.test)?;
    let mean = |label: i64| {
        let v: Vec<f64> = scores
            .iter()
            .zip(&split.test.series)
            .filter(|(_, s)| s.label == Some(label))
            .map(|(e, _)| *e)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("mean energy: normal {:.3}, anomalous {:.3}", mean(0), mean(1));
    Ok(())
}
