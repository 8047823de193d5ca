//! Field datasets: manufactured generators, the delimited text format,
//! data subsets and PGM heatmaps.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constitutive::{
    deformation_plastic_state, split_deviatoric, strain_from_gradients, stress_response,
    MaterialParams, PlasticState, Tensor2D,
};
use crate::error::{Error, Result};
use crate::mesh::PointCloud;

pub const FIELDS_MAGIC: &str = "nlpinn-fields v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Ux,
    Uy,
    Exx,
    Eyy,
    Ezz,
    Exy,
    Sxx,
    Syy,
    Szz,
    Sxy,
}

pub const CHANNEL_COUNT: usize = 10;

impl Channel {
    pub const ALL: [Channel; CHANNEL_COUNT] = [
        Channel::Ux,
        Channel::Uy,
        Channel::Exx,
        Channel::Eyy,
        Channel::Ezz,
        Channel::Exy,
        Channel::Sxx,
        Channel::Syy,
        Channel::Szz,
        Channel::Sxy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ux => "ux",
            Channel::Uy => "uy",
            Channel::Exx => "exx",
            Channel::Eyy => "eyy",
            Channel::Ezz => "ezz",
            Channel::Exy => "exy",
            Channel::Sxx => "sxx",
            Channel::Syy => "syy",
            Channel::Szz => "szz",
            Channel::Sxy => "sxy",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn units(self) -> &'static str {
        match self {
            Channel::Ux | Channel::Uy => "m",
            Channel::Exx | Channel::Eyy | Channel::Ezz | Channel::Exy => "-",
            _ => "Pa",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown channel `{s}`")))
    }
}

/// Sampling points with optional observations per channel.
///
/// The residual set is always every point; `observed(c)` lists the points
/// whose value of channel `c` enters the data misfit.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    points: Vec<[f64; 2]>,
    columns: [Vec<Option<f64>>; CHANNEL_COUNT],
    observed: [Vec<usize>; CHANNEL_COUNT],
    pub equilibrium_terms: bool,
    pub plastic_mode: bool,
    pub provenance: String,
    /// Material that generated the data, when known.
    pub generator: Option<MaterialParams>,
}

impl FieldDataset {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let n = points.len();
        Self {
            points,
            columns: std::array::from_fn(|_| vec![None; n]),
            observed: std::array::from_fn(|_| Vec::new()),
            equilibrium_terms: true,
            plastic_mode: false,
            provenance: String::new(),
            generator: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn value(&self, channel: Channel, point: usize) -> Option<f64> {
        self.columns[channel.index()][point]
    }

    pub fn column(&self, channel: Channel) -> &[Option<f64>] {
        &self.columns[channel.index()]
    }

    /// Replaces a whole channel; every present value becomes observed.
    pub fn set_column(&mut self, channel: Channel, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "channel {channel} has {} values for {} points",
                values.len(),
                self.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "channel {channel} has non-finite values"
            )));
        }
        self.observed[channel.index()] = present(&values);
        self.columns[channel.index()] = values;
        Ok(())
    }

    pub fn observed(&self, channel: Channel) -> &[usize] {
        &self.observed[channel.index()]
    }

    /// Restricts the data set of a channel. Indices must carry values.
    pub fn set_observed(&mut self, channel: Channel, mut indices: Vec<usize>) -> Result<()> {
        indices.sort_unstable();
        indices.dedup();
        let col = &self.columns[channel.index()];
        if let Some(&bad) = indices
            .iter()
            .find(|&&i| i >= col.len() || col[i].is_none())
        {
            return Err(Error::invalid(format!(
                "channel {channel}: point {bad} has no value to observe"
            )));
        }
        self.observed[channel.index()] = indices;
        Ok(())
    }

    pub fn has_data(&self) -> bool {
        self.observed.iter().any(|o| !o.is_empty())
    }

    pub fn cloud(&self) -> Result<PointCloud> {
        PointCloud::from_grid_points(&self.points)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.columns[Channel::Ezz.index()]
            .iter()
            .position(|v| v.is_some_and(|v| v != 0.0))
        {
            return Err(Error::invalid(format!(
                "plane strain requires ezz = 0, point {i} has {}",
                self.columns[Channel::Ezz.index()][i].unwrap()
            )));
        }
        Ok(())
    }
}

fn present(values: &[Option<f64>]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect()
}

fn fill_from_states(
    ds: &mut FieldDataset,
    disp: &[[f64; 2]],
    strains: &[Tensor2D],
    stresses: &[Tensor2D],
) -> Result<()> {
    let col = |f: &dyn Fn(usize) -> f64| (0..ds.len()).map(|i| Some(f(i))).collect::<Vec<_>>();
    let ux = col(&|i| disp[i][0]);
    let uy = col(&|i| disp[i][1]);
    let exx = col(&|i| strains[i].xx);
    let eyy = col(&|i| strains[i].yy);
    let ezz = col(&|i| strains[i].zz);
    let exy = col(&|i| strains[i].xy);
    let sxx = col(&|i| stresses[i].xx);
    let syy = col(&|i| stresses[i].yy);
    let szz = col(&|i| stresses[i].zz);
    let sxy = col(&|i| stresses[i].xy);
    for (c, v) in Channel::ALL
        .into_iter()
        .zip([ux, uy, exx, eyy, ezz, exy, sxx, syy, szz, sxy])
    {
        ds.set_column(c, v)?;
    }
    Ok(())
}

/// Elastic manufactured displacement fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElasticKind {
    /// `u = (a x + b y, c x + d y)`.
    ConstantStrain { a: f64, b: f64, c: f64, d: f64 },
    /// `u = (k (x^2 - y^2), -2 k x y)`: divergence free and harmonic.
    HarmonicQuadratic { k: f64 },
}

impl ElasticKind {
    pub fn displacement(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        match *self {
            ElasticKind::ConstantStrain { a, b, c, d } => [a * x + b * y, c * x + d * y],
            ElasticKind::HarmonicQuadratic { k } => [k * (x * x - y * y), -2.0 * k * x * y],
        }
    }

    /// `[[ux_x, ux_y], [uy_x, uy_y]]`.
    pub fn displacement_gradient(&self, [x, y]: [f64; 2]) -> [[f64; 2]; 2] {
        match *self {
            ElasticKind::ConstantStrain { a, b, c, d } => [[a, b], [c, d]],
            ElasticKind::HarmonicQuadratic { k } => {
                [[2.0 * k * x, -2.0 * k * y], [-2.0 * k * y, -2.0 * k * x]]
            }
        }
    }

    pub fn strain(&self, point: [f64; 2]) -> Tensor2D {
        let g = self.displacement_gradient(point);
        strain_from_gradients(g[0][0], g[0][1], g[1][0], g[1][1])
    }

    /// `(d strain / dx, d strain / dy)`.
    pub fn strain_gradient(&self, _point: [f64; 2]) -> (Tensor2D, Tensor2D) {
        match *self {
            ElasticKind::ConstantStrain { .. } => (Tensor2D::ZERO, Tensor2D::ZERO),
            ElasticKind::HarmonicQuadratic { k } => (
                Tensor2D::new(2.0 * k, -2.0 * k, 0.0, 0.0),
                Tensor2D::new(0.0, 0.0, 0.0, -2.0 * k),
            ),
        }
    }

    pub fn stress(&self, point: [f64; 2], params: &MaterialParams) -> Tensor2D {
        elastic_stress(&self.strain(point), params)
    }

    /// `(d sigma / dx, d sigma / dy)`; stress is linear in strain.
    pub fn stress_gradient(
        &self,
        point: [f64; 2],
        params: &MaterialParams,
    ) -> (Tensor2D, Tensor2D) {
        let (gx, gy) = self.strain_gradient(point);
        (elastic_stress(&gx, params), elastic_stress(&gy, params))
    }

    fn label(&self) -> String {
        match *self {
            ElasticKind::ConstantStrain { a, b, c, d } => {
                format!("constant_strain a={a:e} b={b:e} c={c:e} d={d:e}")
            }
            ElasticKind::HarmonicQuadratic { k } => format!("harmonic_quadratic k={k:e}"),
        }
    }
}

/// Plane-strain Hooke's law, `sigma = lambda tr(eps) I + 2 mu eps`.
pub fn elastic_stress(strain: &Tensor2D, params: &MaterialParams) -> Tensor2D {
    stress_response(strain, &PlasticState::elastic(), params).sigma
}

pub fn generate_elastic_manufactured(
    kind: ElasticKind,
    params: &MaterialParams,
    cloud: &PointCloud,
) -> Result<FieldDataset> {
    params.validate()?;
    let points = cloud.points().to_vec();
    let disp: Vec<_> = points.iter().map(|&p| kind.displacement(p)).collect();
    let strains: Vec<_> = points.iter().map(|&p| kind.strain(p)).collect();
    let stresses: Vec<_> = strains.iter().map(|e| elastic_stress(e, params)).collect();
    let mut ds = FieldDataset::new(points);
    fill_from_states(&mut ds, &disp, &strains, &stresses)?;
    ds.equilibrium_terms = true;
    ds.plastic_mode = false;
    ds.provenance = format!("manufactured {}", kind.label());
    ds.generator = Some(*params);
    Ok(ds)
}

/// Shear band with a wavy front:
/// `u_x = gamma0 w F((y - y0(x)) / w)`, `F(t) = (t + ln cosh t) / 2`,
/// `y0(x) = front_y + wave cos(pi x)`, `u_y = -compression y`.
///
/// The shear strain rises from 0 below the front to `gamma0` above it over
/// a width `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlasticProfile {
    pub gamma0: f64,
    pub compression: f64,
    pub front_y: f64,
    pub width: f64,
    pub wave: f64,
}

impl Default for PlasticProfile {
    fn default() -> Self {
        Self {
            gamma0: 6e-3,
            compression: 5e-4,
            front_y: 0.75,
            width: 0.05,
            wave: 0.05,
        }
    }
}

fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl PlasticProfile {
    fn front(&self, x: f64) -> (f64, f64) {
        let pi = std::f64::consts::PI;
        (
            self.front_y + self.wave * (pi * x).cos(),
            -self.wave * pi * (pi * x).sin(),
        )
    }

    pub fn displacement(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let (y0, _) = self.front(x);
        let t = (y - y0) / self.width;
        [
            self.gamma0 * self.width * 0.5 * (t + ln_cosh(t)),
            -self.compression * y,
        ]
    }

    pub fn displacement_gradient(&self, [x, y]: [f64; 2]) -> [[f64; 2]; 2] {
        let (y0, dy0) = self.front(x);
        let t = (y - y0) / self.width;
        let fp = 0.5 * (1.0 + t.tanh());
        [
            [-self.gamma0 * fp * dy0, self.gamma0 * fp],
            [0.0, -self.compression],
        ]
    }

    pub fn strain(&self, point: [f64; 2]) -> Tensor2D {
        let g = self.displacement_gradient(point);
        strain_from_gradients(g[0][0], g[0][1], g[1][0], g[1][1])
    }

    fn validate(&self) -> Result<()> {
        let ok = [
            self.gamma0,
            self.compression,
            self.front_y,
            self.width,
            self.wave,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad plastic profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlasticSummary {
    pub plastic_points: usize,
    pub fraction: f64,
    /// Equivalent plastic strain per point.
    pub ebar_p: Vec<f64>,
}

pub fn generate_plastic_manufactured(
    profile: &PlasticProfile,
    params: &MaterialParams,
    cloud: &PointCloud,
) -> Result<(FieldDataset, PlasticSummary)> {
    params.validate()?;
    profile.validate()?;
    let points = cloud.points().to_vec();
    let disp: Vec<_> = points.iter().map(|&p| profile.displacement(p)).collect();
    let strains: Vec<_> = points.iter().map(|&p| profile.strain(p)).collect();
    let states: Vec<_> = strains
        .iter()
        .map(|e| deformation_plastic_state(e, params))
        .collect();
    let stresses: Vec<_> = strains
        .iter()
        .zip(&states)
        .map(|(e, st)| stress_response(e, st, params).sigma)
        .collect();
    let ebar_p: Vec<f64> = states.iter().map(|s| s.ebar_p).collect();
    let plastic_points = ebar_p.iter().filter(|&&v| v > 0.0).count();
    let fraction = if points.is_empty() {
        0.0
    } else {
        plastic_points as f64 / points.len() as f64
    };
    if plastic_points == 0 {
        warn!("plastic profile stays below yield everywhere, the dataset is purely elastic");
    } else {
        info!(
            "plastic points: {plastic_points} ({:.1}%)",
            100.0 * fraction
        );
    }
    let mut ds = FieldDataset::new(points);
    fill_from_states(&mut ds, &disp, &strains, &stresses)?;
    ds.equilibrium_terms = false;
    ds.plastic_mode = true;
    ds.provenance = format!(
        "manufactured shear_front gamma0={:e} compression={:e} front_y={:e} width={:e} wave={:e}",
        profile.gamma0, profile.compression, profile.front_y, profile.width, profile.wave
    );
    ds.generator = Some(*params);
    Ok((
        ds,
        PlasticSummary {
            plastic_points,
            fraction,
            ebar_p,
        },
    ))
}

/// Deviatoric strain and equivalent strain of a dataset point, from its
/// strain channels.
pub fn deviatoric_strain(ds: &FieldDataset, point: usize) -> Option<(Tensor2D, f64)> {
    let e = Tensor2D::new(
        ds.value(Channel::Exx, point)?,
        ds.value(Channel::Eyy, point)?,
        ds.value(Channel::Ezz, point).unwrap_or(0.0),
        ds.value(Channel::Exy, point)?,
    );
    Some(split_deviatoric(&e))
}

fn onoff(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub fn write_fields<W: Write>(ds: &FieldDataset, mut out: W) -> Result<()> {
    writeln!(out, "# {FIELDS_MAGIC}")?;
    writeln!(out, "# equilibrium_terms={}", onoff(ds.equilibrium_terms))?;
    writeln!(out, "# plastic_mode={}", onoff(ds.plastic_mode))?;
    writeln!(out, "# provenance={}", ds.provenance.replace('\n', " "))?;
    if let Some(m) = &ds.generator {
        writeln!(
            out,
            "# generator lambda={:e} mu={:e} sigma_y0={:e} hp={:e}",
            m.lambda, m.mu, m.sigma_y0, m.hp
        )?;
    }
    for c in Channel::ALL {
        let all = present(ds.column(c));
        let obs = ds.observed(c);
        if obs != all.as_slice() {
            let idx: Vec<String> = obs.iter().map(|i| i.to_string()).collect();
            writeln!(out, "# subset {c} {}", idx.join(","))?;
        }
    }
    let names: Vec<&str> = Channel::ALL.iter().map(|c| c.name()).collect();
    writeln!(out, "x,y,{}", names.join(","))?;
    for (i, p) in ds.points.iter().enumerate() {
        write!(out, "{:e},{:e}", p[0], p[1])?;
        for c in Channel::ALL {
            match ds.value(c, i) {
                Some(v) => write!(out, ",{v:e}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_fields(ds: &FieldDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fields(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_fields(path: &Path) -> Result<FieldDataset> {
    read_fields(BufReader::new(File::open(path)?), path)
}

fn parse_flag(v: &str) -> Option<bool> {
    match v {
        "on" => Some(true),
        "off" => Some(false),
        _ => None,
    }
}

/// Parses the field format; `origin` only labels errors.
pub fn read_fields<R: BufRead>(input: R, origin: &Path) -> Result<FieldDataset> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let expected: Vec<String> = ["x", "y"]
        .into_iter()
        .map(String::from)
        .chain(Channel::ALL.iter().map(|c| c.name().to_string()))
        .collect();

    let mut magic = false;
    let mut header = false;
    let mut equilibrium_terms = true;
    let mut plastic_mode = false;
    let mut provenance = String::new();
    let mut generator = None;
    let mut subsets: Vec<(usize, Channel, Vec<usize>)> = Vec::new();
    let mut points = Vec::new();
    let mut rows: Vec<[Option<f64>; CHANNEL_COUNT]> = Vec::new();

    for (k, line) in input.lines().enumerate() {
        let n = k + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !header {
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                if meta == FIELDS_MAGIC {
                    magic = true;
                } else if let Some(v) = meta.strip_prefix("equilibrium_terms=") {
                    equilibrium_terms =
                        parse_flag(v).ok_or_else(|| err(n, format!("bad flag `{v}`")))?;
                } else if let Some(v) = meta.strip_prefix("plastic_mode=") {
                    plastic_mode =
                        parse_flag(v).ok_or_else(|| err(n, format!("bad flag `{v}`")))?;
                } else if let Some(v) = meta.strip_prefix("provenance=") {
                    provenance = v.to_string();
                } else if let Some(v) = meta.strip_prefix("generator ") {
                    generator = Some(parse_generator(v).map_err(|m| err(n, m))?);
                } else if let Some(v) = meta.strip_prefix("subset ") {
                    let (name, list) = v.split_once(' ').unwrap_or((v, ""));
                    let c: Channel = name.parse().map_err(|e: Error| err(n, e.to_string()))?;
                    let idx = list
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| err(n, format!("bad subset index: {e}")))?;
                    subsets.push((n, c, idx));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != expected {
                return Err(err(
                    n,
                    format!("expected header `{}`, found `{line}`", expected.join(",")),
                ));
            }
            if !magic {
                return Err(err(
                    n,
                    format!("missing `# {FIELDS_MAGIC}` line before the header"),
                ));
            }
            header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != expected.len() {
            return Err(err(
                n,
                format!("expected {} columns, found {}", expected.len(), cols.len()),
            ));
        }
        let num = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| err(n, format!("column {name}: `{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(n, format!("column {name}: non-finite value")));
            }
            Ok(v)
        };
        points.push([num(cols[0], "x")?, num(cols[1], "y")?]);
        let mut row = [None; CHANNEL_COUNT];
        for (c, s) in Channel::ALL.iter().zip(&cols[2..]) {
            if !s.is_empty() {
                row[c.index()] = Some(num(s, c.name())?);
            }
        }
        rows.push(row);
    }
    if !header {
        return Err(err(0, "missing header row".to_string()));
    }
    let mut ds = FieldDataset::new(points);
    for c in Channel::ALL {
        ds.set_column(c, rows.iter().map(|r| r[c.index()]).collect())?;
    }
    for (n, c, idx) in subsets {
        ds.set_observed(c, idx).map_err(|e| err(n, e.to_string()))?;
    }
    ds.equilibrium_terms = equilibrium_terms;
    ds.plastic_mode = plastic_mode;
    ds.provenance = provenance;
    ds.generator = generator;
    Ok(ds)
}

fn parse_generator(s: &str) -> std::result::Result<MaterialParams, String> {
    let mut vals = [None; 4];
    for field in s.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| format!("bad generator field `{field}`"))?;
        let v: f64 = v
            .parse()
            .map_err(|_| format!("bad generator value `{v}`"))?;
        let slot = match k {
            "lambda" => 0,
            "mu" => 1,
            "sigma_y0" => 2,
            "hp" => 3,
            _ => return Err(format!("unknown generator key `{k}`")),
        };
        vals[slot] = Some(v);
    }
    match vals {
        [Some(l), Some(m), Some(s), Some(h)] => Ok(MaterialParams::new(l, m, s, h)),
        _ => Err("generator line needs lambda, mu, sigma_y0 and hp".to_string()),
    }
}

/// Draws `count` observed points per listed channel, uniformly without
/// replacement from the points carrying a value. A count of zero disables
/// the channel's data term.
pub fn sample_index_sets(
    ds: &mut FieldDataset,
    counts: &[(Channel, usize)],
    seed: u64,
) -> Result<()> {
    for &(c, count) in counts {
        let avail = present(ds.column(c));
        if count > avail.len() {
            return Err(Error::invalid(format!(
                "channel {c}: asked for {count} points, only {} carry values",
                avail.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((c.index() as u64 + 1) << 32));
        let picked: Vec<usize> = rand::seq::index::sample(&mut rng, avail.len(), count)
            .into_iter()
            .map(|k| avail[k])
            .collect();
        ds.set_observed(c, picked)?;
    }
    Ok(())
}

/// Gray levels of a min-max normalized field; `None` when the field is
/// constant.
pub fn heatmap_levels(values: &[f64]) -> Option<Vec<u8>> {
    let (lo, hi) = min_max(values);
    if !(hi > lo) {
        return None;
    }
    Some(
        values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    )
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Plain PGM of a grid field, `values[j * nx + i]`, top row is the largest y.
pub fn write_heatmap<W: Write>(values: &[f64], nx: usize, ny: usize, mut out: W) -> Result<()> {
    if values.len() != nx * ny || values.is_empty() {
        return Err(Error::invalid(format!(
            "heatmap needs {nx}x{ny} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("heatmap values must be finite"));
    }
    let (lo, hi) = min_max(values);
    writeln!(out, "P2")?;
    let levels = match heatmap_levels(values) {
        Some(l) => {
            writeln!(out, "# min={lo:e} max={hi:e}")?;
            l
        }
        None => {
            writeln!(out, "# constant field value={lo:e}")?;
            vec![128; values.len()]
        }
    };
    writeln!(out, "{nx} {ny}")?;
    writeln!(out, "255")?;
    for j in (0..ny).rev() {
        let row: Vec<String> = levels[j * nx..(j + 1) * nx]
            .iter()
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn save_heatmap(values: &[f64], nx: usize, ny: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_heatmap(values, nx, ny, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Header of a plain PGM: width, height, maxval and the comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmHeader {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub comments: Vec<String>,
}

pub fn read_pgm<R: BufRead>(input: R) -> Result<(PgmHeader, Vec<u32>)> {
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    for line in input.lines() {
        let line = line?;
        if let Some(c) = line.trim_start().strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        tokens.extend(line.split_whitespace().map(String::from));
    }
    let bad = |m: &str| Error::invalid(format!("pgm: {m}"));
    let mut it = tokens.into_iter();
    if it.next().as_deref() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num = |what: &str| -> Result<u32> {
        it.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let width = num("width")? as usize;
    let height = num("height")? as usize;
    let maxval = num("maxval")?;
    let mut pixels = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        pixels.push(num("pixel")?);
    }
    Ok((
        PgmHeader {
            width,
            height,
            maxval,
            comments,
        },
        pixels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use approx::assert_relative_eq;

    fn bench() -> MaterialParams {
        MaterialParams::benchmark()
    }

    #[test]
    fn constant_strain_stress() {
        let cloud = build_grid(5, 5, 1.0, 1.0).unwrap();
        let kind = ElasticKind::ConstantStrain {
            a: 1e-3,
            b: 0.0,
            c: 0.0,
            d: 0.0,
        };
        let ds = generate_elastic_manufactured(kind, &bench(), &cloud).unwrap();
        let m = bench();
        for i in 0..ds.len() {
            assert_relative_eq!(
                ds.value(Channel::Sxx, i).unwrap(),
                (m.lambda + 2.0 * m.mu) * 1e-3,
                max_relative = 1e-14
            );
            assert_eq!(ds.value(Channel::Ezz, i), Some(0.0));
        }
        assert!(ds.equilibrium_terms && !ds.plastic_mode);
        assert_eq!(ds.observed(Channel::Ux).len(), 25);
    }

    #[test]
    fn harmonic_quadratic_is_traceless_and_balanced() {
        let cloud = build_grid(7, 7, 1.0, 1.0).unwrap();
        let kind = ElasticKind::HarmonicQuadratic { k: 1e-3 };
        let m = bench();
        let ds = generate_elastic_manufactured(kind, &m, &cloud).unwrap();
        for (i, &p) in ds.points().iter().enumerate() {
            let tr = ds.value(Channel::Exx, i).unwrap() + ds.value(Channel::Eyy, i).unwrap();
            assert!(tr.abs() <= 1e-18);
            let s = [Channel::Sxx, Channel::Syy, Channel::Szz].map(|c| ds.value(c, i).unwrap());
            assert!((s[0] + s[1] + s[2]).abs() <= 1e-6);
            let (gx, gy) = kind.stress_gradient(p, &m);
            assert!((gx.xx + gy.xy).abs() <= 1e-12 * m.mu);
            assert!((gx.xy + gy.yy).abs() <= 1e-12 * m.mu);
        }
    }

    #[test]
    fn strain_gradient_matches_finite_differences() {
        let kind = ElasticKind::HarmonicQuadratic { k: 2e-3 };
        let p = [0.3, 0.7];
        let h = 1e-6;
        let (gx, gy) = kind.strain_gradient(p);
        let fdx = (kind.strain([p[0] + h, p[1]]) - kind.strain([p[0] - h, p[1]])).components();
        let fdy = (kind.strain([p[0], p[1] + h]) - kind.strain([p[0], p[1] - h])).components();
        for k in 0..4 {
            assert!((gx.components()[k] - fdx[k] / (2.0 * h)).abs() < 1e-9);
            assert!((gy.components()[k] - fdy[k] / (2.0 * h)).abs() < 1e-9);
        }
    }

    #[test]
    fn plastic_profile_gradient() {
        let prof = PlasticProfile::default();
        let h = 1e-7;
        for p in [[0.2, 0.74], [0.9, 0.1], [0.5, 0.8]] {
            let g = prof.displacement_gradient(p);
            for (axis, col) in [(0usize, 0usize), (1, 1)] {
                let mut a = p;
                let mut b = p;
                a[axis] += h;
                b[axis] -= h;
                let (ua, ub) = (prof.displacement(a), prof.displacement(b));
                for comp in 0..2 {
                    let fd = (ua[comp] - ub[comp]) / (2.0 * h);
                    assert!((g[comp][col] - fd).abs() < 1e-7, "{p:?} {comp} {col}");
                }
            }
        }
    }

    #[test]
    fn default_plastic_dataset() {
        let cloud = build_grid(21, 21, 1.0, 1.0).unwrap();
        let (ds, summary) =
            generate_plastic_manufactured(&PlasticProfile::default(), &bench(), &cloud).unwrap();
        assert!(
            summary.fraction > 0.0 && summary.fraction < 0.5,
            "{}",
            summary.fraction
        );
        assert!(!ds.equilibrium_terms && ds.plastic_mode);
        let max_ep = summary.ebar_p.iter().cloned().fold(0.0, f64::max);
        assert!(max_ep > 1e-3);
        let again =
            generate_plastic_manufactured(&PlasticProfile::default(), &bench(), &cloud).unwrap();
        assert_eq!(ds, again.0);
    }

    #[test]
    fn weak_profile_is_elastic() {
        let cloud = build_grid(9, 9, 1.0, 1.0).unwrap();
        let prof = PlasticProfile {
            gamma0: 1e-4,
            compression: 1e-5,
            ..PlasticProfile::default()
        };
        let (ds, summary) = generate_plastic_manufactured(&prof, &bench(), &cloud).unwrap();
        assert_eq!(summary.plastic_points, 0);
        for (i, &p) in ds.points().iter().enumerate() {
            let s = elastic_stress(&prof.strain(p), &bench());
            assert_eq!(ds.value(Channel::Szz, i), Some(s.zz));
            assert_eq!(ds.value(Channel::Sxy, i), Some(s.xy));
        }
    }

    #[test]
    fn round_trip_with_subsets() {
        let cloud = build_grid(4, 3, 1.0, 0.5).unwrap();
        let mut ds = generate_elastic_manufactured(
            ElasticKind::HarmonicQuadratic {
                k: 1.234567890123e-3,
            },
            &bench(),
            &cloud,
        )
        .unwrap();
        let mut col: Vec<Option<f64>> = ds.column(Channel::Sxy).to_vec();
        col[2] = None;
        ds.set_column(Channel::Sxy, col).unwrap();
        sample_index_sets(&mut ds, &[(Channel::Ux, 5)], 9).unwrap();
        let mut buf = Vec::new();
        write_fields(&ds, &mut buf).unwrap();
        let back = read_fields(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn header_only_file_is_empty() {
        let text = "# nlpinn-fields v1\nx,y,ux,uy,exx,eyy,ezz,exy,sxx,syy,szz,sxy\n";
        let ds = read_fields(text.as_bytes(), Path::new("mem")).unwrap();
        assert!(ds.is_empty());
        assert!(!ds.has_data());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let mut text =
            String::from("# nlpinn-fields v1\nx,y,ux,uy,exx,eyy,ezz,exy,sxx,syy,szz,sxy\n");
        for i in 0..14 {
            text.push_str(&format!("{i},0,1,,,,,,,,,\n"));
        }
        text.push_str("0,0,1,2\n");
        match read_fields(text.as_bytes(), Path::new("f.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 17),
            other => panic!("{other:?}"),
        }
        let nan =
            "# nlpinn-fields v1\nx,y,ux,uy,exx,eyy,ezz,exy,sxx,syy,szz,sxy\n0,0,NaN,,,,,,,,,\n";
        assert!(matches!(
            read_fields(nan.as_bytes(), Path::new("f")),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(read_fields("1,2\n".as_bytes(), Path::new("f")).is_err());
        assert!(read_fields("".as_bytes(), Path::new("f")).is_err());
    }

    #[test]
    fn sampling_contract() {
        let cloud = build_grid(6, 6, 1.0, 1.0).unwrap();
        let base = generate_elastic_manufactured(
            ElasticKind::HarmonicQuadratic { k: 1e-3 },
            &bench(),
            &cloud,
        )
        .unwrap();
        let mut a = base.clone();
        sample_index_sets(
            &mut a,
            &[(Channel::Ux, 36), (Channel::Sxx, 0), (Channel::Uy, 10)],
            3,
        )
        .unwrap();
        assert_eq!(
            a.observed(Channel::Ux),
            (0..36).collect::<Vec<_>>().as_slice()
        );
        assert!(a.observed(Channel::Sxx).is_empty());
        assert_eq!(a.observed(Channel::Uy).len(), 10);
        let mut b = base.clone();
        sample_index_sets(
            &mut b,
            &[(Channel::Ux, 36), (Channel::Sxx, 0), (Channel::Uy, 10)],
            3,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(sample_index_sets(&mut b, &[(Channel::Ux, 37)], 3).is_err());
    }

    #[test]
    fn heatmap_levels_and_header() {
        assert_eq!(
            heatmap_levels(&[0.0, 1.0, 2.0, 3.0]).unwrap(),
            vec![0, 85, 170, 255]
        );
        let mut buf = Vec::new();
        write_heatmap(&[0.0, 1.0, 2.0, 3.0], 2, 2, &mut buf).unwrap();
        let (h, px) = read_pgm(&buf[..]).unwrap();
        assert_eq!((h.width, h.height, h.maxval), (2, 2, 255));
        assert_eq!(px, vec![170, 255, 0, 85]);
        assert!(h.comments[0].contains("min=0e0"));

        let mut buf = Vec::new();
        write_heatmap(&[4.0; 6], 3, 2, &mut buf).unwrap();
        let (h, px) = read_pgm(&buf[..]).unwrap();
        assert!(px.iter().all(|&v| v == 128));
        assert!(h.comments[0].starts_with("constant field"));
        assert!(write_heatmap(&[1.0; 5], 3, 2, Vec::new()).is_err());
    }
}
