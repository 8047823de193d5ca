//! Normalized loss curves of the three architectures on the sharp plastic
//! front, written as one CSV with a column per architecture.
//!
//! `cargo run --release --example loss_convergence -- [epochs] [out.csv]`

use std::io::Write;

use nlpinn::autodiff::Activation;
use nlpinn::constitutive::MaterialParams;
use nlpinn::dataio::{generate_plastic_manufactured, PlasticProfile};
use nlpinn::mesh::{build_families, build_grid};
use nlpinn::pddo::build_operator_set;
use nlpinn::residuals::{
    AdPddoMode, ArchitectureKind, LossContext, LossWeights, Model, ModelSpec, NetLayout, Scales,
};
use nlpinn::trainer::{train, RunMode, TrainConfig};

fn main() -> nlpinn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(2000, |s| s.parse().expect("epochs"));
    let out = args.next().unwrap_or_else(|| "loss_curves.csv".into());

    let truth = MaterialParams::benchmark();
    let cloud = build_grid(21, 21, 1.0, 1.0)?;
    let (ds, _) = generate_plastic_manufactured(&PlasticProfile::default(), &truth, &cloud)?;
    let ops = build_operator_set(&cloud, &build_families(&cloud, 3, 3.5)?)?;
    let scales = Scales::from_dataset(&ds, &cloud);
    let ctx = LossContext::new(&ds, scales, LossWeights::default(), None)?;

    let mut curves = Vec::new();
    for arch in ArchitectureKind::ALL {
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
        for p in nlpinn::constitutive::MaterialParam::ALL {
            material.set(p, 0.5 * truth.get(p));
        }
        material.trainable = [true; 4];
        let cfg = TrainConfig {
            epochs,
            mode: RunMode::Identify,
            architecture: arch,
            log_every: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &ctx, &ds, &mut material, &cfg)?;
        let norm = history.normalized();
        println!("{arch:<8} L/L0 = {:.4e}", norm.last().unwrap());
        curves.push(norm);
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(w, "epoch,local,ad_pddo,pddo")?;
    for e in 0..epochs {
        let row: Vec<String> = curves
            .iter()
            .map(|c| c.get(e).map_or(String::new(), |v| format!("{v:e}")))
            .collect();
        writeln!(w, "{e},{}", row.join(","))?;
    }
    println!("curves written to {out}");
    Ok(())
}
