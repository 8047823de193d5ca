//! Subcommands behind the `nlpinn` binary.
//!
//! Every command reads a [`RunConfig`], writes into `outputs.dir` and maps
//! its outcome to an exit code: 0 success, 1 bad input, 2 numerical failure.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};

use crate::config::{resolve_config, DataSource, RunConfig};
use crate::constitutive::MaterialParams;
use crate::dataio::{save_fields, save_heatmap, Channel, FieldDataset};
use crate::error::{Error, Result};
use crate::mesh::{build_families, PointCloud};
use crate::pddo::{
    apply_operator, build_operator_set, orthogonality_residual, write_operator_table, DerivativeTag,
};
use crate::residuals::{channel_values, ArchitectureKind, LossContext, Model};
use crate::trainer::{
    load_checkpoint, parameter_report, save_checkpoint, train, write_report, RunMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Largest relative error tolerated by `check-pddo`.
pub const PDDO_CHECK_TOL: f64 = 1e-8;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    CheckPddo,
    Train,
    Identify,
    Evaluate,
    ExportFields,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::CheckPddo => "check-pddo",
            Command::Train => "train",
            Command::Identify => "identify",
            Command::Evaluate => "evaluate",
            Command::ExportFields => "export-fields",
        }
    }
}

pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.is_numerical() => EXIT_NUMERICAL,
        Err(_) => EXIT_INVALID,
    }
}

/// Resolves the config, runs `cmd` on a pool of `threads` workers and
/// returns the exit code.
pub fn run(cmd: Command, config: Option<&Path>, overrides: &[String]) -> i32 {
    let result = resolve_config(config, overrides).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| execute(cmd, &cfg))
    });
    if let Err(e) = &result {
        error!("{}: {e}", cmd.name());
    }
    exit_code(&result)
}

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.outputs.dir)?;
    fs::write(cfg.outputs.dir.join("resolved_config.toml"), cfg.to_toml())?;
    match cmd {
        Command::GenData => gen_data(cfg),
        Command::CheckPddo => check_pddo(cfg),
        Command::Train => fit(cfg, RunMode::Solve),
        Command::Identify => fit(cfg, RunMode::Identify),
        Command::Evaluate => evaluate(cfg),
        Command::ExportFields => export_fields(cfg),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.outputs.dir.join(name)
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    if cfg.data.source == DataSource::File {
        return Err(Error::Config(
            "gen-data needs data.source = elastic or plastic".into(),
        ));
    }
    let (ds, _) = cfg.dataset()?;
    let path = out_path(cfg, "fields.csv");
    save_fields(&ds, &path)?;
    println!("wrote {} points to {}", ds.len(), path.display());
    Ok(())
}

fn quadratic(p: [f64; 2], tag: DerivativeTag) -> f64 {
    let [x, y] = p;
    match (tag.p1(), tag.p2()) {
        (0, 0) => 1.0 + 2.0 * x - 3.0 * y + 4.0 * x * x - 5.0 * y * y + 6.0 * x * y,
        (1, 0) => 2.0 + 8.0 * x + 6.0 * y,
        (0, 1) => -3.0 - 10.0 * y + 6.0 * x,
        (2, 0) => 8.0,
        (0, 2) => -10.0,
        _ => 6.0,
    }
}

/// Relative error of every operator on a quadratic field, in tag order,
/// and the worst orthogonality residual.
pub fn pddo_exactness(
    cloud: &PointCloud,
    halfwidth: usize,
    delta_factor: f64,
) -> Result<(Vec<(DerivativeTag, f64)>, f64)> {
    let fams = build_families(cloud, halfwidth, delta_factor)?;
    let ops = build_operator_set(cloud, &fams)?;
    let f: Vec<f64> = cloud
        .points()
        .iter()
        .map(|&p| quadratic(p, DerivativeTag::VALUE))
        .collect();
    let mut errors = Vec::new();
    for tag in DerivativeTag::ALL {
        let approx = apply_operator(&ops, &f, tag)?;
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for (k, &p) in cloud.points().iter().enumerate() {
            let exact = quadratic(p, tag);
            worst = worst.max((approx[k] - exact).abs());
            scale = scale.max(exact.abs());
        }
        errors.push((tag, worst / scale.max(1.0)));
    }
    let ortho = fams
        .iter()
        .enumerate()
        .map(|(k, fam)| orthogonality_residual(fam, ops.entry(k)))
        .fold(0.0, f64::max);
    Ok((errors, ortho))
}

fn check_pddo(cfg: &RunConfig) -> Result<()> {
    let cloud = cfg.cloud()?;
    let (errors, ortho) =
        pddo_exactness(&cloud, cfg.pddo.stencil_halfwidth, cfg.pddo.delta_factor)?;
    let ops = cfg.operators(&cloud)?;
    let mut table = BufWriter::new(fs::File::create(out_path(cfg, "operators.txt"))?);
    write_operator_table(&ops, &mut table)?;
    table.flush()?;

    let mut report = String::new();
    report.push_str("# tag relative_error\n");
    for (tag, e) in &errors {
        report.push_str(&format!("{tag} {e:e}\n"));
    }
    report.push_str(&format!("orthogonality {ortho:e}\n"));
    fs::write(out_path(cfg, "pddo_check.txt"), &report)?;
    print!("{report}");
    if let Some((tag, e)) = errors.iter().find(|(_, e)| *e > PDDO_CHECK_TOL) {
        return Err(Error::OperatorInexact {
            tag: tag.to_string(),
            error: *e,
        });
    }
    Ok(())
}

/// Everything a run needs besides the networks.
struct Setup {
    ds: FieldDataset,
    cloud: PointCloud,
    ctx: LossContext,
    truth: Option<MaterialParams>,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let (ds, cloud) = cfg.dataset()?;
    let scales = cfg.scales(&ds, &cloud);
    let ctx = LossContext::new(&ds, scales, cfg.weights()?, cfg.loss.equilibrium_terms)?;
    let truth = match cfg.data.source {
        DataSource::File => ds.generator,
        _ => Some(cfg.material.params()?),
    };
    Ok(Setup {
        ds,
        cloud,
        ctx,
        truth,
    })
}

fn build_model(cfg: &RunConfig, s: &Setup, arch: ArchitectureKind) -> Result<Model> {
    let ops = if arch.is_nonlocal() {
        Some(cfg.operators(&s.cloud)?)
    } else {
        None
    };
    Model::new(
        cfg.model_spec(arch),
        s.ds.plastic_mode,
        s.ctx.equilibrium,
        s.ctx.scales,
        &s.cloud,
        ops.as_ref(),
    )
}

fn fit(cfg: &RunConfig, mode: RunMode) -> Result<()> {
    let s = setup(cfg)?;
    let mut model = build_model(cfg, &s, cfg.train.architecture)?;
    let mut material = match mode {
        RunMode::Solve => {
            let mut m = cfg.material.params()?;
            m.trainable = [false; 4];
            m
        }
        RunMode::Identify => cfg.material.initial_params()?,
    };
    let mut tc = cfg.train.clone();
    tc.mode = mode;
    let history = train(&mut model, &s.ctx, &s.ds, &mut material, &tc);
    let history = match history {
        Ok(h) => h,
        Err(e) => {
            // keep the rolled-back state for inspection
            save_checkpoint(&out_path(cfg, CHECKPOINT_FILE), &model, &material)?;
            return Err(e);
        }
    };
    history.save_csv(&out_path(cfg, "history.csv"))?;
    save_checkpoint(&out_path(cfg, CHECKPOINT_FILE), &model, &material)?;
    let rows = parameter_report(&material, s.truth.as_ref());
    let mut report = Vec::new();
    write_report(&rows, &mut report)?;
    fs::write(out_path(cfg, "parameters.txt"), &report)?;
    if let (Some(first), Some(last)) = (history.initial_loss(), history.final_loss()) {
        println!(
            "{} epochs, loss {first:.4e} -> {last:.4e}{}",
            history.records.len(),
            if history.stopped_early {
                " (stopped early)"
            } else {
                ""
            }
        );
    }
    if mode == RunMode::Identify {
        print!("{}", String::from_utf8_lossy(&report));
    }
    Ok(())
}

fn restore(cfg: &RunConfig, s: &Setup) -> Result<(Model, MaterialParams)> {
    let path = out_path(cfg, CHECKPOINT_FILE);
    let arch = checkpoint_architecture(&path)?;
    let (nets, material) = load_checkpoint(&path)?;
    let mut model = build_model(cfg, s, arch)?;
    model.set_networks(nets)?;
    Ok((model, material))
}

fn checkpoint_architecture(path: &Path) -> Result<ArchitectureKind> {
    let text = fs::read(path)?;
    let head = String::from_utf8_lossy(&text[..text.len().min(4096)]).into_owned();
    let name = head
        .lines()
        .take_while(|l| *l != "END")
        .find_map(|l| l.strip_prefix("architecture "))
        .ok_or_else(|| Error::Config(format!("{}: no architecture line", path.display())))?;
    ArchitectureKind::ALL
        .into_iter()
        .find(|a| a.name() == name.trim())
        .ok_or_else(|| Error::Config(format!("unknown architecture `{name}`")))
}

/// Predicted channels at every point.
fn predict(model: &Model, material: &MaterialParams) -> Result<Vec<[f64; 10]>> {
    (0..model.point_count())
        .map(|i| channel_values(&model.fields, &model.field_values(i)?, material))
        .collect()
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let s = setup(cfg)?;
    let (model, material) = restore(cfg, &s)?;
    let all: Vec<usize> = (0..s.ds.len()).collect();
    let loss = model.loss(&s.ctx, &s.ds, &all, &material)?;
    let pred = predict(&model, &material)?;

    let mut out = String::new();
    out.push_str(&format!("architecture {}\n{loss}\n", model.arch()));
    out.push_str("# channel rms_error rms_data relative\n");
    for c in Channel::ALL {
        let (mut se, mut sd, mut n) = (0.0, 0.0, 0usize);
        for (i, p) in pred.iter().enumerate() {
            if let Some(d) = s.ds.value(c, i) {
                se += (p[c.index()] - d).powi(2);
                sd += d * d;
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let (re, rd) = ((se / n as f64).sqrt(), (sd / n as f64).sqrt());
        let rel = if rd > 0.0 {
            format!("{:e}", re / rd)
        } else {
            "-".into()
        };
        out.push_str(&format!("{c} {re:e} {rd:e} {rel}\n"));
    }
    let mut report = Vec::new();
    write_report(&parameter_report(&material, s.truth.as_ref()), &mut report)?;
    out.push_str(&String::from_utf8_lossy(&report));
    fs::write(out_path(cfg, "evaluation.txt"), &out)?;
    print!("{out}");
    Ok(())
}

fn export_fields(cfg: &RunConfig) -> Result<()> {
    let s = setup(cfg)?;
    let (model, material) = restore(cfg, &s)?;
    let pred = predict(&model, &material)?;
    let mut ds = FieldDataset::new(s.ds.points().to_vec());
    ds.plastic_mode = s.ds.plastic_mode;
    ds.equilibrium_terms = s.ds.equilibrium_terms;
    ds.provenance = format!("prediction {}", model.arch());
    let dir = out_path(cfg, "fields");
    fs::create_dir_all(&dir)?;
    let (nx, ny) = s.cloud.dims();
    for c in Channel::ALL {
        let col: Vec<f64> = pred.iter().map(|p| p[c.index()]).collect();
        save_heatmap(&col, nx, ny, &dir.join(format!("{c}.pgm")))?;
        ds.set_column(c, col.into_iter().map(Some).collect())?;
    }
    save_fields(&ds, &out_path(cfg, "predicted.csv"))?;
    info!(
        "exported {} channels on {nx}x{ny} points to {}",
        Channel::ALL.len(),
        dir.display()
    );
    Ok(())
}
