//! Drive the full pipeline from a TOML document, the same way the `nlpinn`
//! binary does: generate data, identify, evaluate and export fields.
//!
//! `cargo run --release --example config_pipeline -- [out_dir]`

use nlpinn::cli::{execute, Command};
use nlpinn::config::resolve_config;

const CONFIG: &str = r#"
[grid]
nx = 15
ny = 15

[material]
trainable = ["lambda", "mu"]

[network]
hidden = [16, 16]

[train]
epochs = 200
architecture = "ad_pddo"
log_every = 50

[data]
source = "elastic"
elastic = { kind = "constant_strain", a = 1e-3, b = 2e-4, c = -3e-4, d = 5e-4 }
"#;

fn main() -> nlpinn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "pipeline".into());
    std::fs::create_dir_all(&out)?;
    let path = std::path::Path::new(&out).join("run.toml");
    std::fs::write(&path, CONFIG)?;

    let overrides = vec!["outputs.dir=\".\"".to_string()];
    let cfg = resolve_config(Some(&path), &overrides)?;
    for cmd in [
        Command::GenData,
        Command::Identify,
        Command::Evaluate,
        Command::ExportFields,
    ] {
        println!("== {}", cmd.name());
        execute(cmd, &cfg)?;
    }
    Ok(())
}
