//! Recover lambda and mu from a manufactured elastic field with a local PINN.
//!
//! Run with `cargo run --release --example elastic_identification -- [epochs]`.

use nlpinn::autodiff::Activation;
use nlpinn::constitutive::MaterialParams;
use nlpinn::dataio::{generate_elastic_manufactured, ElasticKind};
use nlpinn::mesh::build_grid;
use nlpinn::residuals::{
    AdPddoMode, ArchitectureKind, LossContext, LossWeights, Model, ModelSpec, NetLayout, Scales,
};
use nlpinn::trainer::{parameter_report, train, write_report, RunMode, TrainConfig};

fn main() -> nlpinn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args()
        .nth(1)
        .map_or(2000, |s| s.parse().expect("epochs"));

    let truth = MaterialParams::benchmark();
    let cloud = build_grid(21, 21, 1.0, 1.0)?;
    let ds =
        generate_elastic_manufactured(ElasticKind::HarmonicQuadratic { k: 1e-3 }, &truth, &cloud)?;
    let scales = Scales::from_dataset(&ds, &cloud);
    let ctx = LossContext::new(&ds, scales, LossWeights::default(), None)?;

    let spec = ModelSpec {
        arch: ArchitectureKind::Local,
        ad_mode: AdPddoMode::PerSlot,
        layout: NetLayout::PerField,
        hidden: vec![20, 20],
        activation: Activation::Tanh,
        seed: 1,
    };
    let mut model = Model::new(spec, false, ctx.equilibrium, scales, &cloud, None)?;

    // start from half the true constants
    let mut material = truth;
    material.lambda *= 0.5;
    material.mu *= 0.5;
    material.trainable = [true, true, false, false];

    let cfg = TrainConfig {
        epochs,
        mode: RunMode::Identify,
        architecture: ArchitectureKind::Local,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let history = train(&mut model, &ctx, &ds, &mut material, &cfg)?;
    println!(
        "trained {} epochs in {:.1?}",
        history.records.len(),
        t0.elapsed()
    );
    println!(
        "loss {:.3e} -> {:.3e}",
        history.initial_loss().unwrap(),
        history.final_loss().unwrap()
    );
    write_report(
        &parameter_report(&material, Some(&truth)),
        std::io::stdout(),
    )?;
    Ok(())
}
