//! Identify yield stress and hardening modulus from a manufactured shear
//! front, comparing the local PINN with a nonlocal architecture.
//!
//! `cargo run --release --example plastic_identification -- [epochs] [local|ad_pddo|pddo]...`

use nlpinn::autodiff::Activation;
use nlpinn::constitutive::MaterialParams;
use nlpinn::dataio::{generate_plastic_manufactured, PlasticProfile};
use nlpinn::mesh::{build_families, build_grid};
use nlpinn::pddo::build_operator_set;
use nlpinn::residuals::{
    AdPddoMode, ArchitectureKind, LossContext, LossWeights, Model, ModelSpec, NetLayout, Scales,
};
use nlpinn::trainer::{parameter_report, train, write_report, RunMode, TrainConfig};

fn main() -> nlpinn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(2000, |s| s.parse().expect("epochs"));
    let mut archs: Vec<ArchitectureKind> = args
        .map(|a| match a.as_str() {
            "local" => ArchitectureKind::Local,
            "ad_pddo" => ArchitectureKind::AdPddo,
            "pddo" => ArchitectureKind::Pddo,
            other => panic!("unknown architecture {other}"),
        })
        .collect();
    if archs.is_empty() {
        archs = vec![ArchitectureKind::Local, ArchitectureKind::AdPddo];
    }

    let truth = MaterialParams::benchmark();
    let cloud = build_grid(21, 21, 1.0, 1.0)?;
    let (ds, summary) = generate_plastic_manufactured(&PlasticProfile::default(), &truth, &cloud)?;
    println!("plastic points: {} of {}", summary.plastic_points, ds.len());
    let families = build_families(&cloud, 3, 3.5)?;
    let ops = build_operator_set(&cloud, &families)?;
    let scales = Scales::from_dataset(&ds, &cloud);
    let ctx = LossContext::new(&ds, scales, LossWeights::default(), None)?;

    for arch in archs {
        let spec = ModelSpec {
            arch,
            ad_mode: AdPddoMode::PerSlot,
            layout: NetLayout::PerField,
            hidden: vec![20, 20],
            activation: Activation::Tanh,
            seed: 1,
        };
        let mut model = Model::new(spec, true, ctx.equilibrium, scales, &cloud, Some(&ops))?;
        let mut material = truth;
        material.lambda *= 0.5;
        material.mu *= 0.5;
        material.sigma_y0 *= 0.5;
        material.hp *= 0.5;
        material.trainable = [true, true, true, true];
        let cfg = TrainConfig {
            epochs,
            mode: RunMode::Identify,
            architecture: arch,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let history = train(&mut model, &ctx, &ds, &mut material, &cfg)?;
        println!(
            "== {arch}: {} epochs in {:.1?}",
            history.records.len(),
            t0.elapsed()
        );
        let norm = history.normalized();
        println!("normalized final loss {:.4e}", norm.last().unwrap());
        write_report(
            &parameter_report(&material, Some(&truth)),
            std::io::stdout(),
        )?;
    }
    Ok(())
}
