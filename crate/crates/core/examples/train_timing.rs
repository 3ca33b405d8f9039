//! Times one training epoch of the default architectures at a given sample size.
//!
//! `cargo run --release -p choice-lab --example train_timing -- 100000 [steps] [S1|S2|S3]`

use std::time::Instant;

use choice_lab::metrics::{evaluate, MetricConfig};
use choice_lab::{sample_dataset, train_erm, DgpSpec, MlpArch, Rng, Scenario, TrainConfig};

fn main() -> choice_lab::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let steps: Option<usize> = std::env::args().nth(2).and_then(|s| s.parse().ok());
    let scenario: Scenario = std::env::args().nth(3).as_deref().unwrap_or("S1").parse()?;
    let spec = DgpSpec::new(scenario, 20, scenario.default_weight_scale(20), 1)?;
    let train = sample_dataset(&spec, n, &mut Rng::new(2))?;
    let eval = sample_dataset(&spec, 100_000, &mut Rng::new(3))?;
    for arch in [MlpArch::bnl(20)?, MlpArch::dnn(20, 5, 100)?] {
        let config = TrainConfig {
            max_epochs: if steps.is_some() { 10_000 } else { 1 },
            max_steps: steps,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let out = train_erm(&arch, &train, None, &config)?;
        let secs = t.elapsed().as_secs_f64();
        let m = evaluate(&out.params, &train, &eval, &MetricConfig::default())?;
        println!(
            "hidden={:?} steps={} {:.2}s ({:.0} samples/s) interp={:.5} pred={:.4}",
            arch.hidden_widths,
            out.history.steps,
            secs,
            (out.history.steps * config.batch_size) as f64 / secs,
            m.interpretation_loss.map_or(f64::NAN, |e| e.value),
            m.prediction_loss.value
        );
    }
    Ok(())
}
