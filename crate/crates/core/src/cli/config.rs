//! The TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_ordinal, load_csv, read_bins, BinSidecar, CsvSchema, Dataset, Split, SyntheticOrdinalSpec};
use crate::error::{Error, Result};
use crate::ground_distance::{GroundMatrix, Provenance};
use crate::net::{DistanceSource, Head, LossKind, NetConfig, TrainConfig};

use super::io::read_labeled_matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds weight initialization and minibatch order.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSource,
    /// Defaults to learned for XEMD1/XEMD2 and normalized ordinal otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundSource>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Spearman, Metric::Sdd]
}

/// Optional evaluation metrics; AEM and AEO are always reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Spearman,
    Sdd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub weight_init_scale: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            hidden: vec![32],
            weight_init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSection),
    Csv(CsvSection),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub center_spacing: f64,
    pub noise_sigma: f64,
    pub neighbor_flip_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            num_classes: 8,
            feature_dim: 16,
            samples_per_class: 200,
            center_spacing: 2.0,
            noise_sigma: 1.0,
            neighbor_flip_prob: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticSection {
    pub fn spec(&self) -> SyntheticOrdinalSpec {
        SyntheticOrdinalSpec {
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            samples_per_class: self.samples_per_class,
            center_spacing: self.center_spacing,
            noise_sigma: self.noise_sigma,
            neighbor_flip_prob: self.neighbor_flip_prob,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub num_classes: usize,
    #[serde(default = "yes")]
    pub has_header: bool,
    /// Bin sidecar with the score of each class, used for Spearman ρ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundSource {
    Ordinal {
        #[serde(default = "yes")]
        normalize: bool,
    },
    Learned,
    /// Labeled matrix CSV as written by `gd-matrix`.
    External { path: PathBuf },
}

/// Train and (optional) test sets plus bin centers, if any.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub bins: Option<BinSidecar>,
}

impl LoadedData {
    pub fn split(&self, split: Split) -> Result<&Dataset> {
        match split {
            Split::Train => Ok(&self.train),
            Split::Test => self
                .test
                .as_ref()
                .ok_or_else(|| Error::Config("the data source has no test split".into())),
            Split::Validation => Err(Error::Config("the data source has no validation split".into())),
        }
    }
}

impl RunConfig {
    /// A config with every default and the given data source.
    pub fn with_data(data: DataSource) -> Self {
        RunConfig {
            seed: 0,
            output_dir: default_output_dir(),
            metrics: default_metrics(),
            net: NetSection::default(),
            train: TrainConfig::default(),
            data,
            ground: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut doc: toml::Table = text.parse().map_err(|e| cfg_err(&e))?;
        // ω/μ follow the loss kind's preset unless set explicitly
        if let Some(toml::Value::Table(train)) = doc.get_mut("train") {
            if train.contains_key("shuffle_seed") {
                return Err(Error::Config("train.shuffle_seed is not settable here; the top-level seed drives minibatch order".into()));
            }
            let kind: LossKind = match train.get("loss_kind") {
                Some(v) => v.clone().try_into().map_err(|e| cfg_err(&e))?,
                None => LossKind::Xe,
            };
            let toml::Value::Table(mut hybrid) = toml::Value::try_from(kind.default_hybrid()).map_err(|e| cfg_err(&e))?
            else {
                unreachable!("HybridParams serializes to a table")
            };
            match train.get("hybrid") {
                Some(toml::Value::Table(user)) => hybrid.extend(user.clone()),
                Some(_) => return Err(Error::Config("[train.hybrid] must be a table".into())),
                None => {}
            }
            train.insert("hybrid".into(), toml::Value::Table(hybrid));
        }
        doc.try_into().map_err(|e| cfg_err(&e))
    }

    /// Parses and validates; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.toml_table()?).map_err(|e| Error::Config(e.to_string()))
    }

    /// Serialized form without `train.shuffle_seed`, which `seed` replaces.
    fn toml_table(&self) -> Result<toml::Table> {
        let mut doc = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(toml::Value::Table(train)) = doc.get_mut("train") {
            train.remove("shuffle_seed");
        }
        Ok(doc)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(c) = &mut self.data {
            fix(&mut c.train);
            c.test.iter_mut().for_each(fix);
            c.bins.iter_mut().for_each(fix);
        }
        if let Some(GroundSource::External { path }) = &mut self.ground {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Config(format!("[train] {e}")))?;
        if self.net.hidden.contains(&0) {
            return Err(Error::Config("[net] hidden layer sizes must be positive".into()));
        }
        if !(self.net.weight_init_scale >= 0.0 && self.net.weight_init_scale.is_finite()) {
            return Err(Error::Config("[net] weight_init_scale must be finite and >= 0".into()));
        }
        let must_exist = |p: &Path| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("referenced path {} does not exist", p.display())))
            }
        };
        match &self.data {
            DataSource::Synthetic(s) => s.spec().validate().map_err(|e| Error::Config(format!("[data] {e}")))?,
            DataSource::Csv(c) => {
                must_exist(&c.train)?;
                if let Some(t) = &c.test {
                    must_exist(t)?;
                }
                if let Some(b) = &c.bins {
                    must_exist(b)?;
                }
                if c.num_classes < 2 {
                    return Err(Error::Config("[data] num_classes must be >= 2".into()));
                }
            }
        }
        match &self.ground {
            Some(GroundSource::External { path }) => must_exist(path)?,
            Some(GroundSource::Learned) if self.train.loss_kind == LossKind::Aemd => {
                return Err(Error::Config(
                    "AEMD needs a predefined ground matrix; use ordinal or external".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match &self.data {
            DataSource::Synthetic(s) => s.num_classes,
            DataSource::Csv(c) => c.num_classes,
        }
    }

    pub fn load_data(&self) -> Result<LoadedData> {
        match &self.data {
            DataSource::Synthetic(s) => {
                let (train, test) = generate_ordinal(&s.spec())?;
                // the class index is the latent score of synthetic data
                let c = s.num_classes;
                let bins = BinSidecar {
                    bin_edges: (0..=c).map(|i| i as f64 - 0.5).collect(),
                    bin_centers: (0..c).map(|i| i as f64).collect(),
                };
                Ok(LoadedData {
                    train,
                    test: Some(test),
                    bins: Some(bins),
                })
            }
            DataSource::Csv(c) => {
                let schema = CsvSchema {
                    num_classes: c.num_classes,
                    has_header: c.has_header,
                };
                let train = load_csv(&c.train, schema, Split::Train)?;
                let test = c.test.as_ref().map(|p| load_csv(p, schema, Split::Test)).transpose()?;
                let bins = c.bins.as_ref().map(|p| read_bins(p)).transpose()?;
                if let Some(b) = &bins {
                    if b.bin_centers.len() != c.num_classes {
                        return Err(Error::Config(format!(
                            "bin sidecar has {} centers for {} classes",
                            b.bin_centers.len(),
                            c.num_classes
                        )));
                    }
                }
                Ok(LoadedData { train, test, bins })
            }
        }
    }

    pub fn net_config(&self, input_dim: usize) -> NetConfig {
        let (head, out) = match self.train.loss_kind {
            LossKind::Reg => (Head::Linear, 1),
            _ => (Head::Softmax, self.num_classes()),
        };
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend(&self.net.hidden);
        layer_sizes.push(out);
        NetConfig {
            layer_sizes,
            head,
            seed: self.seed,
            weight_init_scale: self.net.weight_init_scale,
        }
    }

    /// The training config with the run seed applied to minibatch order.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            shuffle_seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn distance_source(&self) -> Result<DistanceSource> {
        let source = match &self.ground {
            Some(g) => g.clone(),
            None if self.train.loss_kind.is_hybrid() => GroundSource::Learned,
            None => GroundSource::Ordinal { normalize: true },
        };
        Ok(match source {
            GroundSource::Ordinal { normalize } => DistanceSource::Ordinal { normalize },
            GroundSource::Learned => DistanceSource::Learned,
            GroundSource::External { path } => {
                let (_, m) = read_labeled_matrix(&path)?;
                DistanceSource::External(GroundMatrix::new(m, Provenance::External)?)
            }
        })
    }
}

/// Every field at its default, with a synthetic data section.
pub fn config_template() -> Result<String> {
    let cfg = RunConfig::with_data(DataSource::Synthetic(SyntheticSection::default()));
    let mut doc = cfg.toml_table()?;
    // left out so that changing loss_kind also picks its ω/μ preset
    if let Some(toml::Value::Table(train)) = doc.get_mut("train") {
        train.remove("hybrid");
    }
    let body = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    Ok(format!(
        "# Run configuration. Every field has a default except [data].\n\
         # loss_kind: XE | REG | EMD | XEMD1 | XEMD2 | AEMD\n\
         # lambda_mode: {{ mode = \"auto_ratio\", target = 3.5 }} or {{ mode = \"fixed\", lambda = 0.1 }}\n\
         # [data] may instead be: source = \"csv\", train = \"train.csv\", test = \"test.csv\",\n\
         #   num_classes = 8, has_header = true, bins = \"bins.json\"\n\
         # [train.hybrid] (optional) overrides omega, mu, log_epsilon; defaults follow loss_kind:\n\
         #   XEMD2 uses omega = 2, mu = -0.25, everything else omega = 1, mu = -0.5\n\
         # [ground] (optional): kind = \"ordinal\" (normalize = true) | \"learned\" | \"external\" (path = \"d.csv\")\n\
         \n{body}"
    ))
}
