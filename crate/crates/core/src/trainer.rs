//! Adam training loop for solving (material constant) and identification
//! (material trainable).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{sigmoid, softplus, softplus_inverse};
use crate::autodiff::{read_checkpoint, write_checkpoint, NetworkParams};
use crate::constitutive::{MaterialParam, MaterialParams};
use crate::dataio::FieldDataset;
use crate::error::{Error, Result};
use crate::residuals::{ArchitectureKind, LossContext, Model, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Solve,
    Identify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub shuffle: bool,
    pub seed: u64,
    /// Epochs without improvement before stopping; 0 disables.
    pub patience: usize,
    pub mode: RunMode,
    pub architecture: ArchitectureKind,
    /// Learning-rate multiplier for the material parameters.
    pub param_lr_scale: f64,
    /// Epochs between progress lines; 0 silences them.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 64,
            lr_start: 5e-4,
            lr_end: 1e-6,
            shuffle: true,
            seed: 0,
            patience: 0,
            mode: RunMode::Identify,
            architecture: ArchitectureKind::Local,
            param_lr_scale: 10.0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::invalid(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.param_lr_scale > 0.0 && self.param_lr_scale.is_finite()) {
            return Err(Error::invalid("train.param_lr_scale must be positive"));
        }
        Ok(())
    }
}

/// Geometric interpolation from `lr_start` at epoch 0 to `lr_end` at the
/// last epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 || epoch == 0 {
        return cfg.lr_start;
    }
    if epoch + 1 >= cfg.epochs {
        return cfg.lr_end;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(
                "Adam state, parameters and gradients differ in length",
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::PoisonedGradient("adam"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unknown {
    Mu,
    Bulk,
    SigmaY0,
    Hp,
}

/// Trainable material constants as `reference * softplus(theta)`.
///
/// Lambda is carried through the bulk modulus `lambda + 2 mu / 3` so that
/// both it and mu stay admissible.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    base: MaterialParams,
    unknowns: Vec<Unknown>,
    refs: Vec<f64>,
    pub theta: Vec<f64>,
}

impl MaterialModel {
    /// Trainable constants start from their current values in `initial`.
    pub fn new(initial: &MaterialParams) -> Result<Self> {
        initial.validate()?;
        let mut unknowns = Vec::new();
        if initial.is_trainable(MaterialParam::Mu) {
            unknowns.push(Unknown::Mu);
        }
        if initial.is_trainable(MaterialParam::Lambda) {
            unknowns.push(Unknown::Bulk);
        }
        if initial.is_trainable(MaterialParam::SigmaY0) {
            unknowns.push(Unknown::SigmaY0);
        }
        if initial.is_trainable(MaterialParam::Hp) {
            unknowns.push(Unknown::Hp);
        }
        let start = |u: Unknown| match u {
            Unknown::Mu => initial.mu,
            Unknown::Bulk => initial.bulk_modulus(),
            Unknown::SigmaY0 => initial.sigma_y0,
            Unknown::Hp => initial.hp,
        };
        let mut refs = Vec::new();
        let mut theta = Vec::new();
        for &u in &unknowns {
            let v = start(u);
            if !(v > 0.0) {
                return Err(Error::invalid(format!(
                    "initial guess for {u:?} must be positive, got {v}"
                )));
            }
            refs.push(10.0 * v);
            theta.push(softplus_inverse(0.1));
        }
        Ok(Self {
            base: *initial,
            unknowns,
            refs,
            theta,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.unknowns.is_empty()
    }

    fn value(&self, u: Unknown) -> Option<f64> {
        let k = self.unknowns.iter().position(|&x| x == u)?;
        Some(self.refs[k] * softplus(self.theta[k]))
    }

    pub fn current(&self) -> MaterialParams {
        let mut m = self.base;
        if let Some(mu) = self.value(Unknown::Mu) {
            m.mu = mu;
        }
        if let Some(k) = self.value(Unknown::Bulk) {
            m.lambda = k - 2.0 * m.mu / 3.0;
        }
        if let Some(s) = self.value(Unknown::SigmaY0) {
            m.sigma_y0 = s;
        }
        if let Some(h) = self.value(Unknown::Hp) {
            m.hp = h;
        }
        m
    }

    /// Fails once an unknown underflows to zero or overflows.
    pub fn check(&self) -> Result<()> {
        let m = self.current();
        for (name, v, ok) in [
            ("mu", m.mu, m.mu > 0.0),
            ("bulk modulus", m.bulk_modulus(), m.bulk_modulus() > 0.0),
            ("sigma_y0", m.sigma_y0, m.sigma_y0 > 0.0),
            ("hp", m.hp, m.hp >= 0.0),
        ] {
            if !(ok && v.is_finite()) {
                return Err(Error::MaterialCollapse { name, value: v });
            }
        }
        Ok(())
    }

    /// Gradient with respect to `theta` from the gradient with respect to
    /// (lambda, mu, sigma_y0, hp).
    pub fn chain(&self, g: &[f64; 4]) -> Vec<f64> {
        let has_bulk = self.unknowns.contains(&Unknown::Bulk);
        self.unknowns
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let dv = self.refs[k] * sigmoid(self.theta[k]);
                let gv = match u {
                    Unknown::Mu => {
                        g[MaterialParam::Mu.index()]
                            - if has_bulk {
                                2.0 / 3.0 * g[MaterialParam::Lambda.index()]
                            } else {
                                0.0
                            }
                    }
                    Unknown::Bulk => g[MaterialParam::Lambda.index()],
                    Unknown::SigmaY0 => g[MaterialParam::SigmaY0.index()],
                    Unknown::Hp => g[MaterialParam::Hp.index()],
                };
                gv * dv
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub terms: Vec<f64>,
    pub total: f64,
    pub material: MaterialParams,
    pub skipped_flow: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub terms: Vec<Term>,
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }

    /// Epoch totals divided by the first one.
    pub fn normalized(&self) -> Vec<f64> {
        let l0 = self.initial_loss().unwrap_or(1.0);
        self.records.iter().map(|r| r.total / l0).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let names: Vec<&str> = self.terms.iter().map(|t| t.name()).collect();
        writeln!(
            out,
            "epoch,lr,{},total,lambda,mu,sigma_y0,hp",
            names.join(",")
        )?;
        for r in &self.records {
            write!(out, "{},{:e}", r.epoch, r.lr)?;
            for v in &r.terms {
                write!(out, ",{v:e}")?;
            }
            let m = &r.material;
            writeln!(
                out,
                ",{:e},{:e},{:e},{:e},{:e}",
                r.total, m.lambda, m.mu, m.sigma_y0, m.hp
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Trains `model` on `ds`. In identify mode the trainable constants of
/// `material` are updated in place; in solve mode it is left untouched.
///
/// On a non-finite loss or gradient the networks and material are rolled
/// back to the end of the last completed epoch and the error is returned.
pub fn train(
    model: &mut Model,
    ctx: &LossContext,
    ds: &FieldDataset,
    material: &mut MaterialParams,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if model.arch() != cfg.architecture {
        return Err(Error::invalid(format!(
            "model is {} but the config asks for {}",
            model.arch(),
            cfg.architecture
        )));
    }
    if ds.is_empty() {
        return Err(Error::invalid("dataset has no points"));
    }
    if !ds.has_data() {
        return Err(Error::invalid(
            "dataset has no observed values in any channel",
        ));
    }
    let mut mat_model = match cfg.mode {
        RunMode::Solve => None,
        RunMode::Identify => {
            let mm = MaterialModel::new(material)?;
            if mm.is_empty() {
                info!("identify mode with no trainable material constants");
            }
            Some(mm)
        }
    };
    let mut adam_nets: Vec<Adam> = model.nets.iter().map(|n| Adam::new(n.len())).collect();
    let mut adam_mat = Adam::new(mat_model.as_ref().map_or(0, |m| m.theta.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();

    let mut history = TrainHistory {
        terms: ctx.terms().to_vec(),
        records: Vec::new(),
        stopped_early: false,
    };
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut good_nets: Vec<NetworkParams> = model.nets.clone();
    let mut good_mat = mat_model.clone();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut term_sums = vec![0.0; ctx.terms().len()];
        let mut total_sum = 0.0;
        let mut skipped = 0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let current = mat_model.as_ref().map_or(*material, |m| m.current());
            let step =
                model
                    .loss_and_gradient(ctx, ds, batch, &current)
                    .and_then(|(br, grads, mg)| {
                        if !br.total.is_finite() {
                            return Err(Error::NonFiniteLoss { epoch, batch: b });
                        }
                        Ok((br, grads, mg))
                    });
            let (br, grads, mg) = match step {
                Ok(s) => s,
                Err(e) => {
                    model.nets = good_nets;
                    if let Some(mm) = &good_mat {
                        *material = mm.current();
                    }
                    return Err(e);
                }
            };
            let mut stepped: Result<()> = model
                .nets
                .iter_mut()
                .zip(&grads)
                .zip(adam_nets.iter_mut())
                .try_for_each(|((net, g), adam)| adam.step(net.values_mut(), g, lr));
            if let (Ok(()), Some(mm)) = (&stepped, mat_model.as_mut()) {
                let g = mm.chain(&mg);
                stepped = adam_mat
                    .step(&mut mm.theta, &g, lr * cfg.param_lr_scale)
                    .and_then(|_| mm.check());
            }
            if let Err(e) = stepped {
                model.nets = good_nets;
                if let Some(good) = &good_mat {
                    *material = good.current();
                }
                return Err(e);
            }
            for (s, (_, v)) in term_sums.iter_mut().zip(&br.terms) {
                *s += v;
            }
            total_sum += br.total;
            skipped += br.skipped_flow;
            batches += 1;
        }
        let n = batches as f64;
        let current = mat_model.as_ref().map_or(*material, |m| m.current());
        let record = EpochRecord {
            epoch,
            lr,
            terms: term_sums.iter().map(|s| s / n).collect(),
            total: total_sum / n,
            material: current,
            skipped_flow: skipped,
        };
        if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs) {
            info!(
                "epoch {epoch:>6} lr {lr:.3e} loss {:.6e} lambda {:.4e} mu {:.4e} sigma_y0 {:.4e} hp {:.4e}",
                record.total, current.lambda, current.mu, current.sigma_y0, current.hp
            );
        }
        debug!("epoch {epoch}: {:?}", record.terms);
        let total = record.total;
        history.records.push(record);
        good_nets = model.nets.clone();
        good_mat = mat_model.clone();

        if total < best {
            best = total;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                info!("no improvement for {stale} epochs, stopping at epoch {epoch}");
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some(mm) = &mat_model {
        *material = mm.current();
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: &'static str,
    pub value: f64,
    pub units: &'static str,
    pub generating: Option<f64>,
}

impl ReportRow {
    pub fn relative_error(&self) -> Option<f64> {
        self.generating
            .filter(|g| *g != 0.0)
            .map(|g| (self.value - g).abs() / g.abs())
    }
}

/// Identified constants against the generating values when known.
pub fn parameter_report(
    material: &MaterialParams,
    generating: Option<&MaterialParams>,
) -> Vec<ReportRow> {
    MaterialParam::ALL
        .iter()
        .map(|&p| ReportRow {
            name: p.name(),
            value: material.get(p),
            units: "Pa",
            generating: generating.map(|g| g.get(p)),
        })
        .collect()
}

pub fn write_report<W: Write>(rows: &[ReportRow], mut out: W) -> Result<()> {
    writeln!(out, "# name value units generating relative_error")?;
    for r in rows {
        let g = r.generating.map_or("-".to_string(), |g| format!("{g:e}"));
        let e = r
            .relative_error()
            .map_or("-".to_string(), |e| format!("{e:e}"));
        writeln!(out, "{} {:e} {} {g} {e}", r.name, r.value, r.units)?;
    }
    Ok(())
}

/// Saves the networks with the architecture and material in the header.
pub fn save_checkpoint(path: &Path, model: &Model, material: &MaterialParams) -> Result<()> {
    let extra = vec![
        format!("architecture {}", model.arch()),
        format!(
            "material lambda={:e} mu={:e} sigma_y0={:e} hp={:e}",
            material.lambda, material.mu, material.sigma_y0, material.hp
        ),
    ];
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &model.nets, &extra)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<NetworkParams>, MaterialParams)> {
    let (nets, extra) = read_checkpoint(BufReader::new(File::open(path)?))?;
    let line = extra
        .iter()
        .find_map(|l| l.strip_prefix("material "))
        .ok_or_else(|| Error::Config("checkpoint has no material line".into()))?;
    let mut v = [f64::NAN; 4];
    for field in line.split_whitespace() {
        let (k, val) = field
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad material field `{field}`")))?;
        let p = MaterialParam::ALL
            .into_iter()
            .find(|p| p.name() == k)
            .ok_or_else(|| Error::Config(format!("unknown material key `{k}`")))?;
        v[p.index()] = val
            .parse()
            .map_err(|_| Error::Config(format!("bad material value `{val}`")))?;
    }
    let m = MaterialParams::new(v[0], v[1], v[2], v[3]);
    m.validate()?;
    Ok((nets, m))
}
