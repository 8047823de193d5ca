//! Run configuration: a TOML document with `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::constitutive::{MaterialParam, MaterialParams};
use crate::dataio::{
    generate_elastic_manufactured, generate_plastic_manufactured, load_fields, sample_index_sets,
    Channel, ElasticKind, FieldDataset, PlasticProfile,
};
use crate::error::{Error, Result};
use crate::mesh::{build_families, build_grid_with_layout, GridLayout, PointCloud};
use crate::pddo::{build_operator_set, PdOperatorSet};
use crate::residuals::{AdPddoMode, ArchitectureKind, LossWeights, ModelSpec, NetLayout, Scales};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub grid: GridSection,
    pub pddo: PddoSection,
    pub material: MaterialSection,
    pub network: NetworkSection,
    pub loss: LossSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub layout: GridLayout,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 21,
            ny: 21,
            width: 1.0,
            height: 1.0,
            layout: GridLayout::Nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PddoSection {
    pub stencil_halfwidth: usize,
    pub delta_factor: f64,
}

impl Default for PddoSection {
    fn default() -> Self {
        Self {
            stencil_halfwidth: 3,
            delta_factor: 3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StressUnits {
    #[serde(rename = "Pa")]
    Pa,
    #[serde(rename = "GPa")]
    GPa,
}

impl StressUnits {
    pub fn factor(self) -> f64 {
        match self {
            StressUnits::Pa => 1.0,
            StressUnits::GPa => 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialGuess {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub sigma_y0: Option<f64>,
    pub hp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSection {
    pub units: StressUnits,
    pub lambda: f64,
    pub mu: f64,
    pub sigma_y0: f64,
    pub hp: f64,
    /// Constants updated in identify mode.
    pub trainable: Vec<MaterialParam>,
    /// Starting values of trainable constants; missing ones default to
    /// `initial_factor` times the configured value.
    pub initial: InitialGuess,
    pub initial_factor: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        let b = MaterialParams::benchmark();
        Self {
            units: StressUnits::GPa,
            lambda: b.lambda / 1e9,
            mu: b.mu / 1e9,
            sigma_y0: b.sigma_y0 / 1e9,
            hp: b.hp / 1e9,
            trainable: vec![MaterialParam::Lambda, MaterialParam::Mu],
            initial: InitialGuess::default(),
            initial_factor: 0.5,
        }
    }
}

impl MaterialSection {
    /// Configured constants in Pa, with the trainable flags set.
    pub fn params(&self) -> Result<MaterialParams> {
        let f = self.units.factor();
        let mut m =
            MaterialParams::new(self.lambda * f, self.mu * f, self.sigma_y0 * f, self.hp * f);
        for &p in &self.trainable {
            m.trainable[p.index()] = true;
        }
        m.validate()?;
        Ok(m)
    }

    /// Starting point of identification.
    pub fn initial_params(&self) -> Result<MaterialParams> {
        let truth = self.params()?;
        let f = self.units.factor();
        let mut m = truth;
        for p in MaterialParam::ALL {
            if !truth.is_trainable(p) {
                continue;
            }
            let given = match p {
                MaterialParam::Lambda => self.initial.lambda,
                MaterialParam::Mu => self.initial.mu,
                MaterialParam::SigmaY0 => self.initial.sigma_y0,
                MaterialParam::Hp => self.initial.hp,
            };
            m.set(
                p,
                given.map_or(self.initial_factor * truth.get(p), |v| v * f),
            );
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleOverrides {
    pub displacement: Option<f64>,
    pub stress: Option<f64>,
    pub strain: Option<f64>,
    pub length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub layout: NetLayout,
    /// Output scales; unset ones come from the largest data magnitudes.
    pub scales: ScaleOverrides,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20],
            activation: Activation::Tanh,
            seed: 1,
            layout: NetLayout::PerField,
            scales: ScaleOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub weights: BTreeMap<String, f64>,
    /// Overrides the dataset flag when set.
    pub equilibrium_terms: Option<bool>,
    pub ad_pddo_mode: AdPddoMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Elastic,
    Plastic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub elastic: ElasticKind,
    pub plastic: PlasticProfile,
    pub path: Option<PathBuf>,
    /// Observed points per channel; unlisted channels keep every point.
    pub samples: BTreeMap<Channel, usize>,
    pub sample_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Elastic,
            elastic: ElasticKind::HarmonicQuadratic { k: 1e-3 },
            plastic: PlasticProfile::default(),
            path: None,
            samples: BTreeMap::new(),
            sample_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn insert_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut t = table;
    for part in &parts[..parts.len() - 1] {
        let entry = t
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the document, applies `key=value` overrides in order and fills
/// defaults. Relative paths are resolved against the config file's
/// directory.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let t: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (t, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    let mut seen: BTreeMap<String, toml::Value> = BTreeMap::new();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let k = k.trim().to_string();
        let v = parse_value(v.trim());
        if let Some(prev) = seen.get(&k) {
            if *prev != v {
                return Err(Error::Config(format!("conflicting overrides for `{k}`")));
            }
        }
        insert_path(&mut table, &k, v.clone())?;
        seen.insert(k, v);
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| Error::Config(format!("`{}`: {}", e.path(), e.inner())))?;
    let cwd = std::env::current_dir()?;
    let resolve = |p: &Path| {
        let joined = if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        };
        if joined.is_absolute() {
            joined
        } else {
            cwd.join(joined)
        }
    };
    if let Some(p) = &cfg.data.path {
        cfg.data.path = Some(resolve(p));
    }
    cfg.outputs.dir = resolve(&cfg.outputs.dir);
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.material.params()?;
        self.material.initial_params()?;
        if self.network.hidden.is_empty() {
            return Err(Error::Config(
                "network.hidden needs at least one layer".into(),
            ));
        }
        LossWeights::from_map(&self.loss.weights)?;
        if self.data.source == DataSource::File && self.data.path.is_none() {
            return Err(Error::Config(
                "data.source = \"file\" needs data.path".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn cloud(&self) -> Result<PointCloud> {
        let g = &self.grid;
        build_grid_with_layout(g.nx, g.ny, g.width, g.height, g.layout)
    }

    /// Operators on the dataset's points.
    pub fn operators(&self, cloud: &PointCloud) -> Result<PdOperatorSet> {
        let fams = build_families(cloud, self.pddo.stencil_halfwidth, self.pddo.delta_factor)?;
        build_operator_set(cloud, &fams)
    }

    /// Generates or loads the dataset and applies the sampling counts.
    /// Returns the dataset and its point cloud.
    pub fn dataset(&self) -> Result<(FieldDataset, PointCloud)> {
        let material = self.material.params()?;
        let (mut ds, cloud) = match self.data.source {
            DataSource::Elastic => {
                let cloud = self.cloud()?;
                (
                    generate_elastic_manufactured(self.data.elastic, &material, &cloud)?,
                    cloud,
                )
            }
            DataSource::Plastic => {
                let cloud = self.cloud()?;
                (
                    generate_plastic_manufactured(&self.data.plastic, &material, &cloud)?.0,
                    cloud,
                )
            }
            DataSource::File => {
                let path = self.data.path.as_ref().expect("validated");
                let ds = load_fields(path)?;
                let cloud = ds.cloud()?;
                (ds, cloud)
            }
        };
        let counts: Vec<(Channel, usize)> =
            self.data.samples.iter().map(|(&c, &n)| (c, n)).collect();
        sample_index_sets(&mut ds, &counts, self.data.sample_seed)?;
        ds.validate()?;
        Ok((ds, cloud))
    }

    pub fn scales(&self, ds: &FieldDataset, cloud: &PointCloud) -> Scales {
        let auto = Scales::from_dataset(ds, cloud);
        let o = &self.network.scales;
        Scales {
            displacement: o.displacement.unwrap_or(auto.displacement),
            stress: o.stress.unwrap_or(auto.stress),
            strain: o.strain.unwrap_or(auto.strain),
            length: o.length.unwrap_or(auto.length),
        }
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::from_map(&self.loss.weights)
    }

    pub fn model_spec(&self, arch: ArchitectureKind) -> ModelSpec {
        ModelSpec {
            arch,
            ad_mode: self.loss.ad_pddo_mode,
            layout: self.network.layout,
            hidden: self.network.hidden.clone(),
            activation: self.network.activation,
            seed: self.network.seed,
        }
    }
}
