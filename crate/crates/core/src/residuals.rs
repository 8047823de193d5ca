//! Residual terms and losses for the local, AD-PDDO and PDDO architectures.
//!
//! Every term is the mean square of a dimensionless residual over the batch
//! points in its index set: data misfits use the observed points of their
//! channel, physics terms use all points. The total is the weighted sum.
//!
//! A [`Model`] owns the networks and turns them into field values and first
//! derivatives at each point. Those become leaves of a [`Tape`]; after the
//! reverse sweep their adjoints are pushed back through the reconstruction
//! and the networks.

use std::collections::BTreeMap;
use std::fmt;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    accumulate_gradient, forward_with_tangents, init_params, Activation, EvalRecord, NetworkParams,
    NetworkSpec, Tape, Var,
};
use crate::constitutive::{
    deformation_plastic_state, stress_response, MaterialParam, MaterialParams, FLOW_GUARD,
};
use crate::dataio::{Channel, ElasticKind, FieldDataset, PlasticProfile};
use crate::error::{Error, Result};
use crate::mesh::PointCloud;
use crate::pddo::{DerivativeTag, OperatorEntry, PdOperatorSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    Local,
    AdPddo,
    Pddo,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [Self::Local, Self::AdPddo, Self::Pddo];

    pub fn name(self) -> &'static str {
        match self {
            Self::Local => "local",
            Self::AdPddo => "ad_pddo",
            Self::Pddo => "pddo",
        }
    }

    pub fn is_nonlocal(self) -> bool {
        self != Self::Local
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How AD-PDDO differentiates the nonlocal value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdPddoMode {
    /// Derivative of every slot output under a translation of the whole
    /// family, weighted by `G00` of its slot.
    #[default]
    PerSlot,
    /// Derivative of the center output with respect to the center input
    /// only, times the sum of `G00`.
    CenterOnly,
}

/// Network layout: one network per field, or one network with all fields as
/// outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetLayout {
    #[default]
    PerField,
    SharedTrunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Ux,
    Uy,
    Sxx,
    Syy,
    Sxy,
    Szz,
    EpXx,
    EpYy,
    EpXy,
    EbarP,
}

pub const FIELD_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleKind {
    Displacement,
    Stress,
    Strain,
}

impl Field {
    pub const ELASTIC: [Field; 5] = [Field::Ux, Field::Uy, Field::Sxx, Field::Syy, Field::Sxy];
    pub const PLASTIC: [Field; FIELD_COUNT] = [
        Field::Ux,
        Field::Uy,
        Field::Sxx,
        Field::Syy,
        Field::Sxy,
        Field::Szz,
        Field::EpXx,
        Field::EpYy,
        Field::EpXy,
        Field::EbarP,
    ];

    pub fn for_mode(plastic: bool) -> &'static [Field] {
        if plastic {
            &Self::PLASTIC
        } else {
            &Self::ELASTIC
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Ux => "ux",
            Field::Uy => "uy",
            Field::Sxx => "sxx",
            Field::Syy => "syy",
            Field::Sxy => "sxy",
            Field::Szz => "szz",
            Field::EpXx => "ep_xx",
            Field::EpYy => "ep_yy",
            Field::EpXy => "ep_xy",
            Field::EbarP => "ebar_p",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn scale_kind(self) -> ScaleKind {
        match self {
            Field::Ux | Field::Uy => ScaleKind::Displacement,
            Field::Sxx | Field::Syy | Field::Sxy | Field::Szz => ScaleKind::Stress,
            _ => ScaleKind::Strain,
        }
    }

    fn needs_derivatives(self, equilibrium: bool) -> bool {
        match self {
            Field::Ux | Field::Uy => true,
            Field::Sxx | Field::Syy | Field::Sxy => equilibrium,
            _ => false,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Characteristic magnitudes that make residuals dimensionless and set the
/// network output scale of each field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub displacement: f64,
    pub stress: f64,
    pub strain: f64,
    pub length: f64,
}

impl Scales {
    /// Largest observed magnitude per group, 1 where a group has no data.
    pub fn from_dataset(ds: &FieldDataset, cloud: &PointCloud) -> Self {
        let max_of = |chs: &[Channel]| {
            let m = chs
                .iter()
                .flat_map(|&c| ds.column(c).iter().flatten())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let (_, [w, h]) = cloud.bounds();
        Self {
            displacement: max_of(&[Channel::Ux, Channel::Uy]),
            stress: max_of(&[Channel::Sxx, Channel::Syy, Channel::Szz, Channel::Sxy]),
            strain: max_of(&[Channel::Exx, Channel::Eyy, Channel::Exy]),
            length: w.max(h),
        }
    }

    pub fn of(&self, kind: ScaleKind) -> f64 {
        match kind {
            ScaleKind::Displacement => self.displacement,
            ScaleKind::Stress => self.stress,
            ScaleKind::Strain => self.strain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.displacement, self.stress, self.strain, self.length];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!("scales must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    DataUx,
    DataUy,
    DataSxx,
    DataSyy,
    DataSxy,
    DataSzz,
    DataExx,
    DataEyy,
    DataExy,
    DataEzz,
    EqX,
    EqY,
    Pressure,
    DevXx,
    DevYy,
    DevZz,
    DevXy,
    EbarP,
    FlowXx,
    FlowYy,
    FlowZz,
    FlowXy,
}

pub const TERM_COUNT: usize = 22;

impl Term {
    pub const ALL: [Term; TERM_COUNT] = [
        Term::DataUx,
        Term::DataUy,
        Term::DataSxx,
        Term::DataSyy,
        Term::DataSxy,
        Term::DataSzz,
        Term::DataExx,
        Term::DataEyy,
        Term::DataExy,
        Term::DataEzz,
        Term::EqX,
        Term::EqY,
        Term::Pressure,
        Term::DevXx,
        Term::DevYy,
        Term::DevZz,
        Term::DevXy,
        Term::EbarP,
        Term::FlowXx,
        Term::FlowYy,
        Term::FlowZz,
        Term::FlowXy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::DataUx => "data_ux",
            Term::DataUy => "data_uy",
            Term::DataSxx => "data_sxx",
            Term::DataSyy => "data_syy",
            Term::DataSxy => "data_sxy",
            Term::DataSzz => "data_szz",
            Term::DataExx => "data_exx",
            Term::DataEyy => "data_eyy",
            Term::DataExy => "data_exy",
            Term::DataEzz => "data_ezz",
            Term::EqX => "eq_x",
            Term::EqY => "eq_y",
            Term::Pressure => "pressure",
            Term::DevXx => "dev_xx",
            Term::DevYy => "dev_yy",
            Term::DevZz => "dev_zz",
            Term::DevXy => "dev_xy",
            Term::EbarP => "ebar_p",
            Term::FlowXx => "flow_xx",
            Term::FlowYy => "flow_yy",
            Term::FlowZz => "flow_zz",
            Term::FlowXy => "flow_xy",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn channel(self) -> Option<Channel> {
        Some(match self {
            Term::DataUx => Channel::Ux,
            Term::DataUy => Channel::Uy,
            Term::DataSxx => Channel::Sxx,
            Term::DataSyy => Channel::Syy,
            Term::DataSxy => Channel::Sxy,
            Term::DataSzz => Channel::Szz,
            Term::DataExx => Channel::Exx,
            Term::DataEyy => Channel::Eyy,
            Term::DataExy => Channel::Exy,
            Term::DataEzz => Channel::Ezz,
            _ => return None,
        })
    }

    /// Terms of the loss in a given mode, in log order.
    pub fn active(plastic: bool, equilibrium: bool) -> Vec<Term> {
        Term::ALL
            .into_iter()
            .filter(|t| match t {
                Term::DataSzz | Term::DataEzz | Term::DevZz => plastic,
                Term::EbarP | Term::FlowXx | Term::FlowYy | Term::FlowZz | Term::FlowXy => plastic,
                Term::EqX | Term::EqY => equilibrium,
                _ => true,
            })
            .collect()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss term `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights([f64; TERM_COUNT]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([1.0; TERM_COUNT])
    }
}

impl LossWeights {
    pub fn get(&self, t: Term) -> f64 {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: Term, w: f64) -> Result<()> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid(format!(
                "weight of {t} must be finite and >= 0, got {w}"
            )));
        }
        self.0[t.index()] = w;
        Ok(())
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let mut w = Self::default();
        for (k, &v) in map {
            w.set(k.parse()?, v)?;
        }
        Ok(w)
    }
}

/// Term values of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<(Term, f64)>,
    pub weights: Vec<f64>,
    pub total: f64,
    /// Points whose flow-rule residuals were skipped because the effective
    /// stress was below the guard.
    pub skipped_flow: usize,
}

impl LossBreakdown {
    pub fn get(&self, t: Term) -> Option<f64> {
        self.terms.iter().find(|(k, _)| *k == t).map(|(_, v)| *v)
    }

    pub fn weighted_sum(&self) -> f64 {
        self.terms
            .iter()
            .zip(&self.weights)
            .map(|((_, v), w)| v * w)
            .sum()
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ((t, v), w) in self.terms.iter().zip(&self.weights) {
            writeln!(f, "{:<10} {v:.6e} (weight {w})", t.name())?;
        }
        write!(f, "{:<10} {:.6e}", "total", self.total)?;
        if self.skipped_flow > 0 {
            write!(f, "\nskipped flow-rule points: {}", self.skipped_flow)?;
        }
        Ok(())
    }
}

/// Field value and first derivatives in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldValue {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Material constants as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct MaterialVars<'t> {
    pub lambda: Var<'t>,
    pub mu: Var<'t>,
    pub sigma_y0: Var<'t>,
    pub hp: Var<'t>,
}

impl<'t> MaterialVars<'t> {
    pub fn leaves(tape: &'t Tape, m: &MaterialParams) -> Self {
        Self {
            lambda: tape.var(m.lambda),
            mu: tape.var(m.mu),
            sigma_y0: tape.var(m.sigma_y0),
            hp: tape.var(m.hp),
        }
    }

    pub fn get(&self, p: MaterialParam) -> Var<'t> {
        match p {
            MaterialParam::Lambda => self.lambda,
            MaterialParam::Mu => self.mu,
            MaterialParam::SigmaY0 => self.sigma_y0,
            MaterialParam::Hp => self.hp,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct FieldLeaves<'t> {
    value: Var<'t>,
    dx: Var<'t>,
    dy: Var<'t>,
}

/// Dataset-derived pieces shared by every loss evaluation.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub fields: Vec<Field>,
    pub plastic: bool,
    pub equilibrium: bool,
    pub scales: Scales,
    pub weights: LossWeights,
    terms: Vec<Term>,
    slot_of: [Option<usize>; FIELD_COUNT],
    observed: Vec<Vec<bool>>,
}

impl LossContext {
    /// `equilibrium` overrides the dataset flag when given.
    pub fn new(
        ds: &FieldDataset,
        scales: Scales,
        weights: LossWeights,
        equilibrium: Option<bool>,
    ) -> Result<Self> {
        scales.validate()?;
        let plastic = ds.plastic_mode;
        let equilibrium = equilibrium.unwrap_or(ds.equilibrium_terms);
        let fields = Field::for_mode(plastic).to_vec();
        let mut slot_of = [None; FIELD_COUNT];
        for (k, f) in fields.iter().enumerate() {
            slot_of[f.index()] = Some(k);
        }
        let observed = Channel::ALL
            .iter()
            .map(|&c| {
                let mut m = vec![false; ds.len()];
                for &i in ds.observed(c) {
                    m[i] = true;
                }
                m
            })
            .collect();
        let terms = Term::active(plastic, equilibrium);
        for t in &terms {
            if let Some(c) = t.channel() {
                if ds.observed(c).is_empty() {
                    info!("no observations for channel {c}, term {t} stays 0");
                }
            }
        }
        Ok(Self {
            fields,
            plastic,
            equilibrium,
            scales,
            weights,
            terms,
            slot_of,
            observed,
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn field_slot(&self, f: Field) -> usize {
        self.slot_of[f.index()].expect("field active in this mode")
    }
}

struct TermSums<'t> {
    sums: Vec<Option<Var<'t>>>,
    counts: Vec<usize>,
}

impl<'t> TermSums<'t> {
    fn new() -> Self {
        Self {
            sums: vec![None; TERM_COUNT],
            counts: vec![0; TERM_COUNT],
        }
    }

    fn add(&mut self, t: Term, r: Var<'t>) {
        let sq = r.square();
        let k = t.index();
        self.sums[k] = Some(match self.sums[k] {
            None => sq,
            Some(s) => s + sq,
        });
        self.counts[k] += 1;
    }
}

/// Residuals of one point added to `sums`. Returns true when the flow-rule
/// terms were skipped.
fn point_residuals<'t>(
    tape: &'t Tape,
    ctx: &LossContext,
    ds: &FieldDataset,
    point: usize,
    f: &[FieldLeaves<'t>],
    m: &MaterialVars<'t>,
    sums: &mut TermSums<'t>,
) -> bool {
    let sc = &ctx.scales;
    let get = |fl: Field| f[ctx.field_slot(fl)];
    let (ux, uy) = (get(Field::Ux), get(Field::Uy));
    let (sxx, syy, sxy) = (get(Field::Sxx), get(Field::Syy), get(Field::Sxy));

    let exx = ux.dx;
    let eyy = uy.dy;
    let exy = (ux.dy + uy.dx) * 0.5;
    let tr = exx + eyy;
    let third = tr * (1.0 / 3.0);
    let (dxx, dyy, dzz) = (exx - third, eyy - third, -third);

    let szz = if ctx.plastic {
        get(Field::Szz).value
    } else {
        let nu = m.lambda / ((m.lambda + m.mu) * 2.0);
        nu * (sxx.value + syy.value)
    };
    let p = -(sxx.value + syy.value + szz) * (1.0 / 3.0);
    let (s_xx, s_yy, s_zz) = (sxx.value + p, syy.value + p, szz + p);
    let s_xy = sxy.value;

    let observed = |c: Channel| ctx.observed[c.index()][point];
    let data = |c: Channel| ds.value(c, point).expect("observed point carries a value");
    let inv_u = 1.0 / sc.displacement;
    let inv_s = 1.0 / sc.stress;
    let inv_e = 1.0 / sc.strain;
    let mut data_term = |t: Term, pred: Var<'t>, inv: f64| {
        let c = t.channel().unwrap();
        if observed(c) {
            sums.add(t, (pred - data(c)) * inv);
        }
    };
    data_term(Term::DataUx, ux.value, inv_u);
    data_term(Term::DataUy, uy.value, inv_u);
    data_term(Term::DataSxx, sxx.value, inv_s);
    data_term(Term::DataSyy, syy.value, inv_s);
    data_term(Term::DataSxy, sxy.value, inv_s);
    data_term(Term::DataExx, exx, inv_e);
    data_term(Term::DataEyy, eyy, inv_e);
    data_term(Term::DataExy, exy, inv_e);
    if ctx.plastic {
        data_term(Term::DataSzz, szz, inv_s);
        // predicted eps_zz is identically zero
        data_term(Term::DataEzz, tape.constant(0.0), inv_e);
    }

    if ctx.equilibrium {
        let k = sc.length / sc.stress;
        sums.add(Term::EqX, (sxx.dx + sxy.dy) * k);
        sums.add(Term::EqY, (sxy.dx + syy.dy) * k);
    }

    let bulk = m.lambda + m.mu * (2.0 / 3.0);
    sums.add(Term::Pressure, (-(bulk * tr) - p) * inv_s);

    let two_mu = m.mu * 2.0;
    if !ctx.plastic {
        sums.add(Term::DevXx, (two_mu * dxx - s_xx) * inv_s);
        sums.add(Term::DevYy, (two_mu * dyy - s_yy) * inv_s);
        sums.add(Term::DevXy, (two_mu * exy - s_xy) * inv_s);
        return false;
    }

    let ep_xx = get(Field::EpXx).value;
    let ep_yy = get(Field::EpYy).value;
    let ep_xy = get(Field::EpXy).value;
    let ep_zz = -(ep_xx + ep_yy);
    let ebar_p = get(Field::EbarP).value;
    sums.add(Term::DevXx, (s_xx - two_mu * (dxx - ep_xx)) * inv_s);
    sums.add(Term::DevYy, (s_yy - two_mu * (dyy - ep_yy)) * inv_s);
    sums.add(Term::DevZz, (s_zz - two_mu * (dzz - ep_zz)) * inv_s);
    sums.add(Term::DevXy, (s_xy - two_mu * (exy - ep_xy)) * inv_s);

    let ee = dxx.square() + dyy.square() + dzz.square() + exy.square() * 2.0;
    let ebar = (ee * (2.0 / 3.0)).sqrt();
    let three_mu = m.mu * 3.0;
    let target = ((three_mu * ebar - m.sigma_y0) / (three_mu + m.hp)).relu();
    sums.add(Term::EbarP, (ebar_p - target) * inv_e);

    let ss = s_xx.square() + s_yy.square() + s_zz.square() + s_xy.square() * 2.0;
    let sigma_e = (ss * 1.5).sqrt();
    if sigma_e.value() < FLOW_GUARD * m.sigma_y0.value() {
        return true;
    }
    let k = ebar_p * 1.5 / sigma_e;
    sums.add(Term::FlowXx, (ep_xx - k * s_xx) * inv_e);
    sums.add(Term::FlowYy, (ep_yy - k * s_yy) * inv_e);
    sums.add(Term::FlowZz, (ep_zz - k * s_zz) * inv_e);
    sums.add(Term::FlowXy, (ep_xy - k * s_xy) * inv_e);
    false
}

/// Builds the loss of a batch on `tape`. `values[b][k]` is field
/// `ctx.fields[k]` at `batch[b]`.
fn build_loss<'t>(
    tape: &'t Tape,
    ctx: &LossContext,
    ds: &FieldDataset,
    batch: &[usize],
    values: &[Vec<FieldValue>],
    m: &MaterialVars<'t>,
) -> (Vec<Vec<FieldLeaves<'t>>>, Var<'t>, LossBreakdown) {
    let mut sums = TermSums::new();
    let mut skipped = 0;
    let mut leaves = Vec::with_capacity(batch.len());
    for (&i, vals) in batch.iter().zip(values) {
        let f: Vec<FieldLeaves<'t>> = vals
            .iter()
            .map(|v| FieldLeaves {
                value: tape.var(v.value),
                dx: tape.var(v.dx),
                dy: tape.var(v.dy),
            })
            .collect();
        if point_residuals(tape, ctx, ds, i, &f, m, &mut sums) {
            skipped += 1;
        }
        leaves.push(f);
    }
    let mut total: Option<Var<'t>> = None;
    let mut terms = Vec::with_capacity(ctx.terms.len());
    let mut weights = Vec::with_capacity(ctx.terms.len());
    for &t in &ctx.terms {
        let k = t.index();
        let w = ctx.weights.get(t);
        let mean = sums.sums[k].map(|s| s / sums.counts[k] as f64);
        terms.push((t, mean.map_or(0.0, |v| v.value())));
        weights.push(w);
        if let Some(v) = mean {
            let wv = v * w;
            total = Some(match total {
                None => wv,
                Some(acc) => acc + wv,
            });
        }
    }
    let total = total.unwrap_or_else(|| tape.constant(0.0));
    let breakdown = LossBreakdown {
        terms,
        weights,
        total: total.value(),
        skipped_flow: skipped,
    };
    (leaves, total, breakdown)
}

/// Loss for externally supplied field values, e.g. exact fields.
pub fn loss_from_fields(
    ctx: &LossContext,
    ds: &FieldDataset,
    batch: &[usize],
    values: &[Vec<FieldValue>],
    material: &MaterialParams,
) -> Result<LossBreakdown> {
    if values.len() != batch.len() || values.iter().any(|v| v.len() != ctx.fields.len()) {
        return Err(Error::invalid(
            "field values do not match batch and field list",
        ));
    }
    let tape = Tape::new();
    let m = MaterialVars::leaves(&tape, material);
    let (_, _, b) = build_loss(&tape, ctx, ds, batch, values, &m);
    Ok(b)
}

/// Predicted data channels at a point, in [`Channel::ALL`] order.
/// `values` follows `fields`.
pub fn channel_values(
    fields: &[Field],
    values: &[FieldValue],
    material: &MaterialParams,
) -> Result<[f64; 10]> {
    if fields.len() != values.len() {
        return Err(Error::invalid("field values do not match the field list"));
    }
    let get = |f: Field| fields.iter().position(|&g| g == f).map(|k| values[k]);
    let need =
        |f: Field| get(f).ok_or_else(|| Error::invalid(format!("field {} missing", f.name())));
    let (ux, uy) = (need(Field::Ux)?, need(Field::Uy)?);
    let (sxx, syy, sxy) = (need(Field::Sxx)?, need(Field::Syy)?, need(Field::Sxy)?);
    let szz = match get(Field::Szz) {
        Some(v) => v.value,
        None => material.poisson_ratio() * (sxx.value + syy.value),
    };
    Ok([
        ux.value,
        uy.value,
        ux.dx,
        uy.dy,
        0.0,
        0.5 * (ux.dy + uy.dx),
        sxx.value,
        syy.value,
        szz,
        sxy.value,
    ])
}

/// Exact elastic fields of a manufactured displacement, in
/// [`Field::ELASTIC`] order.
pub fn manufactured_elastic_fields(
    kind: &ElasticKind,
    params: &MaterialParams,
    point: [f64; 2],
) -> Vec<FieldValue> {
    let u = kind.displacement(point);
    let g = kind.displacement_gradient(point);
    let s = kind.stress(point, params);
    let (sx, sy) = kind.stress_gradient(point, params);
    vec![
        FieldValue {
            value: u[0],
            dx: g[0][0],
            dy: g[0][1],
        },
        FieldValue {
            value: u[1],
            dx: g[1][0],
            dy: g[1][1],
        },
        FieldValue {
            value: s.xx,
            dx: sx.xx,
            dy: sy.xx,
        },
        FieldValue {
            value: s.yy,
            dx: sx.yy,
            dy: sy.yy,
        },
        FieldValue {
            value: s.xy,
            dx: sx.xy,
            dy: sy.xy,
        },
    ]
}

/// Exact plastic fields of the shear-front profile, in [`Field::PLASTIC`]
/// order. Stress derivatives are not provided.
pub fn manufactured_plastic_fields(
    profile: &PlasticProfile,
    params: &MaterialParams,
    point: [f64; 2],
) -> Vec<FieldValue> {
    let u = profile.displacement(point);
    let g = profile.displacement_gradient(point);
    let strain = profile.strain(point);
    let st = deformation_plastic_state(&strain, params);
    let s = stress_response(&strain, &st, params).sigma;
    let v = |value| FieldValue {
        value,
        dx: 0.0,
        dy: 0.0,
    };
    vec![
        FieldValue {
            value: u[0],
            dx: g[0][0],
            dy: g[0][1],
        },
        FieldValue {
            value: u[1],
            dx: g[1][0],
            dy: g[1][1],
        },
        v(s.xx),
        v(s.yy),
        v(s.xy),
        v(s.zz),
        v(st.ep.xx),
        v(st.ep.yy),
        v(st.ep.xy),
        v(st.ebar_p),
    ]
}

/// Dot product of slot outputs with `G00`.
pub fn nonlocal_value(outputs: &[f64], g00: &[f64]) -> Result<f64> {
    dot_checked(outputs, g00)
}

/// Dot product of slot outputs with the `G` weights of `tag`.
pub fn pddo_derivative(outputs: &[f64], entry: &OperatorEntry, tag: DerivativeTag) -> Result<f64> {
    dot_checked(outputs, &entry.slot_weights(tag))
}

fn dot_checked(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "{} slot values against {} weights",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Maps physical coordinates to network inputs in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputMap {
    pub origin: [f64; 2],
    pub size: [f64; 2],
}

impl InputMap {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        let (origin, size) = cloud.bounds();
        Self { origin, size }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            2.0 * (p[0] - self.origin[0]) / self.size[0] - 1.0,
            2.0 * (p[1] - self.origin[1]) / self.size[1] - 1.0,
        ]
    }

    /// `d input / d x` and `d input / d y`.
    pub fn slope(&self) -> [f64; 2] {
        [2.0 / self.size[0], 2.0 / self.size[1]]
    }
}

/// Network input and reconstruction weights of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStencil {
    pub input: Vec<f64>,
    /// Input tangents for d/dx and d/dy.
    pub dir_x: Vec<f64>,
    pub dir_y: Vec<f64>,
    /// `G00`, `G10`, `G01` over the stencil slots (empty for local).
    pub g00: Vec<f64>,
    pub g10: Vec<f64>,
    pub g01: Vec<f64>,
}

impl PointStencil {
    pub fn local(map: &InputMap, p: [f64; 2]) -> Self {
        let [a, b] = map.slope();
        Self {
            input: map.apply(p).to_vec(),
            dir_x: vec![a, 0.0],
            dir_y: vec![0.0, b],
            g00: Vec::new(),
            g10: Vec::new(),
            g01: Vec::new(),
        }
    }

    /// Concatenated slot coordinates; padded slots get input 0 and weight 0.
    pub fn nonlocal(
        map: &InputMap,
        cloud: &PointCloud,
        entry: &OperatorEntry,
        mode: AdPddoMode,
    ) -> Self {
        let slots = entry.slots.len();
        let [a, b] = map.slope();
        let mut input = vec![0.0; 2 * slots];
        let mut dir_x = vec![0.0; 2 * slots];
        let mut dir_y = vec![0.0; 2 * slots];
        for (s, m) in entry.slots.iter().enumerate() {
            if let Some(m) = *m {
                let q = map.apply(cloud.point(entry.members[m]));
                input[2 * s] = q[0];
                input[2 * s + 1] = q[1];
                if mode == AdPddoMode::PerSlot || s == 0 {
                    dir_x[2 * s] = a;
                    dir_y[2 * s + 1] = b;
                }
            }
        }
        Self {
            input,
            dir_x,
            dir_y,
            g00: entry.slot_weights(DerivativeTag::VALUE),
            g10: entry.slot_weights(DerivativeTag::DX),
            g01: entry.slot_weights(DerivativeTag::DY),
        }
    }
}

/// First derivative of the AD-PDDO reconstruction of the network output
/// block starting at `offset`.
pub fn ad_pddo_derivative(
    net: &NetworkParams,
    offset: usize,
    stencil: &PointStencil,
    tag: DerivativeTag,
    mode: AdPddoMode,
) -> Result<f64> {
    if tag.order() != 1 {
        return Err(Error::UnsupportedOrder {
            p1: tag.p1(),
            p2: tag.p2(),
        });
    }
    let dir = if tag == DerivativeTag::DX {
        &stencil.dir_x
    } else {
        &stencil.dir_y
    };
    let rec = forward_with_tangents(net, &stencil.input, std::slice::from_ref(dir))?;
    let n = stencil.g00.len();
    if offset + n > rec.tangents[0].len() {
        return Err(Error::invalid("output block exceeds network outputs"));
    }
    let t = &rec.tangents[0][offset..offset + n];
    Ok(match mode {
        AdPddoMode::PerSlot => dot_checked(t, &stencil.g00)?,
        AdPddoMode::CenterOnly => t[0] * stencil.g00.iter().sum::<f64>(),
    })
}

/// Hyperparameters of the networks of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: ArchitectureKind,
    pub ad_mode: AdPddoMode,
    pub layout: NetLayout,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

/// Networks plus everything needed to turn them into fields.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub fields: Vec<Field>,
    pub nets: Vec<NetworkParams>,
    pub scales: Scales,
    equilibrium: bool,
    // per field: network, first output, output scale
    route: Vec<(usize, usize, f64)>,
    block: usize,
    stencils: Vec<PointStencil>,
}

/// Points per parallel work item; fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 8;

struct PointEval {
    records: Vec<EvalRecord>,
    values: Vec<FieldValue>,
}

impl Model {
    pub fn new(
        spec: ModelSpec,
        plastic: bool,
        equilibrium: bool,
        scales: Scales,
        cloud: &PointCloud,
        ops: Option<&PdOperatorSet>,
    ) -> Result<Self> {
        scales.validate()?;
        let map = InputMap::from_cloud(cloud);
        let stencils: Vec<PointStencil> = match spec.arch {
            ArchitectureKind::Local => cloud
                .points()
                .iter()
                .map(|&p| PointStencil::local(&map, p))
                .collect(),
            _ => {
                let ops = ops
                    .ok_or_else(|| Error::invalid("nonlocal architectures need an operator set"))?;
                if ops.len() != cloud.len() {
                    return Err(Error::invalid(format!(
                        "operator set has {} entries for {} points",
                        ops.len(),
                        cloud.len()
                    )));
                }
                (0..cloud.len())
                    .map(|i| PointStencil::nonlocal(&map, cloud, ops.entry(i), spec.ad_mode))
                    .collect()
            }
        };
        let block = if spec.arch.is_nonlocal() {
            stencils.first().map_or(1, |s| s.g00.len())
        } else {
            1
        };
        let n_in = stencils.first().map_or(2, |s| s.input.len());
        let fields = Field::for_mode(plastic).to_vec();
        let mut nets = Vec::new();
        let mut route = Vec::new();
        let widths = |outputs: usize| {
            let mut w = vec![n_in];
            w.extend(&spec.hidden);
            w.push(outputs);
            w
        };
        match spec.layout {
            NetLayout::PerField => {
                for (k, f) in fields.iter().enumerate() {
                    let ns =
                        NetworkSpec::new(widths(block), spec.activation, spec.seed + k as u64)?;
                    nets.push(init_params(&ns)?);
                    route.push((k, 0, scales.of(f.scale_kind())));
                }
            }
            NetLayout::SharedTrunk => {
                let ns =
                    NetworkSpec::new(widths(block * fields.len()), spec.activation, spec.seed)?;
                nets.push(init_params(&ns)?);
                for (k, f) in fields.iter().enumerate() {
                    route.push((0, k * block, scales.of(f.scale_kind())));
                }
            }
        }
        Ok(Self {
            spec,
            fields,
            nets,
            scales,
            equilibrium,
            route,
            block,
            stencils,
        })
    }

    pub fn arch(&self) -> ArchitectureKind {
        self.spec.arch
    }

    pub fn stencil(&self, point: usize) -> &PointStencil {
        &self.stencils[point]
    }

    pub fn point_count(&self) -> usize {
        self.stencils.len()
    }

    /// Replaces the network parameters, checking shapes.
    pub fn set_networks(&mut self, nets: Vec<NetworkParams>) -> Result<()> {
        if nets.len() != self.nets.len()
            || nets
                .iter()
                .zip(&self.nets)
                .any(|(a, b)| a.spec().widths != b.spec().widths)
        {
            return Err(Error::invalid("network shapes do not match the model"));
        }
        self.nets = nets;
        Ok(())
    }

    fn needs_tangents(&self) -> bool {
        self.spec.arch != ArchitectureKind::Pddo
    }

    fn eval_point(&self, point: usize) -> Result<PointEval> {
        let st = &self.stencils[point];
        let dirs = if self.needs_tangents() {
            vec![st.dir_x.clone(), st.dir_y.clone()]
        } else {
            Vec::new()
        };
        let records = self
            .nets
            .iter()
            .map(|n| forward_with_tangents(n, &st.input, &dirs))
            .collect::<Result<Vec<_>>>()?;
        let values = self
            .route
            .iter()
            .zip(&self.fields)
            .map(|(&(net, off, scale), f)| {
                let rec = &records[net];
                let out = &rec.outputs[off..off + self.block];
                let deriv = f.needs_derivatives(self.equilibrium);
                match self.spec.arch {
                    ArchitectureKind::Local => FieldValue {
                        value: scale * out[0],
                        dx: if deriv {
                            scale * rec.tangents[0][off]
                        } else {
                            0.0
                        },
                        dy: if deriv {
                            scale * rec.tangents[1][off]
                        } else {
                            0.0
                        },
                    },
                    ArchitectureKind::Pddo => FieldValue {
                        value: scale * dot(out, &st.g00),
                        dx: if deriv {
                            scale * dot(out, &st.g10)
                        } else {
                            0.0
                        },
                        dy: if deriv {
                            scale * dot(out, &st.g01)
                        } else {
                            0.0
                        },
                    },
                    ArchitectureKind::AdPddo => {
                        let tx = &rec.tangents[0][off..off + self.block];
                        let ty = &rec.tangents[1][off..off + self.block];
                        let (dx, dy) = match self.spec.ad_mode {
                            AdPddoMode::PerSlot => (dot(tx, &st.g00), dot(ty, &st.g00)),
                            AdPddoMode::CenterOnly => {
                                let s: f64 = st.g00.iter().sum();
                                (tx[0] * s, ty[0] * s)
                            }
                        };
                        FieldValue {
                            value: scale * dot(out, &st.g00),
                            dx: if deriv { scale * dx } else { 0.0 },
                            dy: if deriv { scale * dy } else { 0.0 },
                        }
                    }
                }
            })
            .collect();
        Ok(PointEval { records, values })
    }

    /// Field values at a point, in `self.fields` order.
    pub fn field_values(&self, point: usize) -> Result<Vec<FieldValue>> {
        Ok(self.eval_point(point)?.values)
    }

    /// Adds the parameter gradient of one point given the adjoints of its
    /// field values.
    fn backward_point(
        &self,
        point: usize,
        eval: &PointEval,
        adj: &[FieldValue],
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        let st = &self.stencils[point];
        let nd = if self.needs_tangents() { 2 } else { 0 };
        let mut out_adj: Vec<Vec<f64>> = self
            .nets
            .iter()
            .map(|n| vec![0.0; n.spec().outputs()])
            .collect();
        let mut tan_adj: Vec<Vec<Vec<f64>>> = self
            .nets
            .iter()
            .map(|n| vec![vec![0.0; n.spec().outputs()]; nd])
            .collect();
        for (&(net, off, scale), a) in self.route.iter().zip(adj) {
            let o = &mut out_adj[net][off..off + self.block];
            match self.spec.arch {
                ArchitectureKind::Local => {
                    o[0] += scale * a.value;
                    tan_adj[net][0][off] += scale * a.dx;
                    tan_adj[net][1][off] += scale * a.dy;
                }
                ArchitectureKind::Pddo => {
                    for j in 0..self.block {
                        o[j] += scale * (a.value * st.g00[j] + a.dx * st.g10[j] + a.dy * st.g01[j]);
                    }
                }
                ArchitectureKind::AdPddo => {
                    for j in 0..self.block {
                        o[j] += scale * a.value * st.g00[j];
                    }
                    match self.spec.ad_mode {
                        AdPddoMode::PerSlot => {
                            for j in 0..self.block {
                                tan_adj[net][0][off + j] += scale * a.dx * st.g00[j];
                                tan_adj[net][1][off + j] += scale * a.dy * st.g00[j];
                            }
                        }
                        AdPddoMode::CenterOnly => {
                            let s: f64 = st.g00.iter().sum();
                            tan_adj[net][0][off] += scale * a.dx * s;
                            tan_adj[net][1][off] += scale * a.dy * s;
                        }
                    }
                }
            }
        }
        for (k, net) in self.nets.iter().enumerate() {
            accumulate_gradient(
                net,
                &eval.records[k],
                &out_adj[k],
                &tan_adj[k],
                &mut grads[k],
            )?;
        }
        Ok(())
    }

    fn eval_batch(&self, batch: &[usize]) -> Result<Vec<PointEval>> {
        batch
            .par_iter()
            .with_min_len(CHUNK)
            .map(|&i| self.eval_point(i))
            .collect()
    }

    /// Loss of a batch.
    pub fn loss(
        &self,
        ctx: &LossContext,
        ds: &FieldDataset,
        batch: &[usize],
        material: &MaterialParams,
    ) -> Result<LossBreakdown> {
        self.check_ctx(ctx, ds)?;
        let evals = self.eval_batch(batch)?;
        let values: Vec<Vec<FieldValue>> = evals.into_iter().map(|e| e.values).collect();
        loss_from_fields(ctx, ds, batch, &values, material)
    }

    fn check_ctx(&self, ctx: &LossContext, ds: &FieldDataset) -> Result<()> {
        if ctx.fields != self.fields {
            return Err(Error::invalid(
                "loss context and model disagree on the field list",
            ));
        }
        if ds.len() != self.stencils.len() {
            return Err(Error::invalid(format!(
                "dataset has {} points, model {}",
                ds.len(),
                self.stencils.len()
            )));
        }
        if ctx.equilibrium && !self.equilibrium {
            return Err(Error::invalid("model built without stress derivatives"));
        }
        Ok(())
    }

    /// Loss of a batch with gradients for every network parameter and for
    /// the four material constants (in [`MaterialParam::ALL`] order).
    pub fn loss_and_gradient(
        &self,
        ctx: &LossContext,
        ds: &FieldDataset,
        batch: &[usize],
        material: &MaterialParams,
    ) -> Result<(LossBreakdown, Vec<Vec<f64>>, [f64; 4])> {
        self.check_ctx(ctx, ds)?;
        let evals = self.eval_batch(batch)?;
        let values: Vec<Vec<FieldValue>> = evals.iter().map(|e| e.values.clone()).collect();
        let tape = Tape::with_capacity(batch.len() * 200);
        let m = MaterialVars::leaves(&tape, material);
        let (leaves, total, breakdown) = build_loss(&tape, ctx, ds, batch, &values, &m);
        let g = tape.gradient(total)?;
        let mat_grad = MaterialParam::ALL.map(|p| g.wrt(m.get(p)));
        let adjoints: Vec<Vec<FieldValue>> = leaves
            .iter()
            .map(|f| {
                f.iter()
                    .map(|l| FieldValue {
                        value: g.wrt(l.value),
                        dx: g.wrt(l.dx),
                        dy: g.wrt(l.dy),
                    })
                    .collect()
            })
            .collect();
        drop(g);

        let zero = || -> Vec<Vec<f64>> { self.nets.iter().map(|n| vec![0.0; n.len()]).collect() };
        let idx: Vec<usize> = (0..batch.len()).collect();
        let partial: Vec<Vec<Vec<f64>>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = zero();
                for &b in chunk {
                    self.backward_point(batch[b], &evals[b], &adjoints[b], &mut grads)?;
                }
                Ok(grads)
            })
            .collect::<Result<_>>()?;
        let mut grads = zero();
        for p in partial {
            for (g, q) in grads.iter_mut().zip(p) {
                for (a, b) in g.iter_mut().zip(q) {
                    *a += b;
                }
            }
        }
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::PoisonedGradient("network"));
        }
        Ok((breakdown, grads, mat_grad))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
