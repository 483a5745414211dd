//! Plain-text `key=value` pipeline configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use spinereport_core::hog::HogConfig;
use spinereport_core::labeling::DEFAULT_MIN_AREA;
use spinereport_core::nets::{DiscriminatorConfig, GeneratorConfig};
use spinereport_core::optim::OptimizerConfig;
use spinereport_core::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub corpus_size: usize,
    pub height: usize,
    pub width: usize,
    pub abnormality_rate: f64,
    pub train_fraction: f64,
    pub folds: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub final_lr_fraction: f64,
    pub hog: HogConfig,
    pub min_area: usize,
    pub template_version: String,
    /// Empty selects the built-in template for `template_version`.
    pub template_path: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PipelineConfig {
            corpus_size: 200,
            height: 128,
            width: 128,
            abnormality_rate: 0.5,
            train_fraction: 0.8,
            folds: 5,
            seed: 1,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            lambda: t.lambda,
            batch_size: t.batch_size,
            epochs: t.epochs,
            generator_lr: t.generator_optimizer.learning_rate,
            discriminator_lr: t.discriminator_optimizer.learning_rate,
            final_lr_fraction: t.final_lr_fraction,
            hog: HogConfig::default(),
            min_area: DEFAULT_MIN_AREA,
            template_version: "v1".into(),
            template_path: String::new(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("{key}: cannot parse {v:?}"))
}

fn list<T: FromStr + Copy + Default, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        bail!("{key}: expected {N} comma-separated values, got {}", parts.len());
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = num(key, p)?;
    }
    Ok(out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "corpus_size" => self.corpus_size = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "width" => self.width = num(key, v)?,
            "abnormality_rate" => self.abnormality_rate = num(key, v)?,
            "train_fraction" => self.train_fraction = num(key, v)?,
            "folds" => self.folds = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "channels" => self.generator.channels = list(key, v)?,
            "dilations" => self.generator.dilations = list(key, v)?,
            "use_sgr" => self.generator.use_sgr = num(key, v)?,
            "sgr_hidden" => self.generator.sgr_hidden = num(key, v)?,
            "instance_norm" => self.generator.instance_norm = num(key, v)?,
            "disc_channels" => self.discriminator.channels = list(key, v)?,
            "disc_kernel" => self.discriminator.kernel = num(key, v)?,
            "disc_hidden" => self.discriminator.hidden = num(key, v)?,
            "disc_dropout" => self.discriminator.dropout = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "generator_lr" => self.generator_lr = num(key, v)?,
            "discriminator_lr" => self.discriminator_lr = num(key, v)?,
            "final_lr_fraction" => self.final_lr_fraction = num(key, v)?,
            "hog_patch" => self.hog.patch = num(key, v)?,
            "hog_cell" => self.hog.cell = num(key, v)?,
            "hog_bins" => self.hog.bins = num(key, v)?,
            "hog_block" => self.hog.block = num(key, v)?,
            "min_area" => self.min_area = num(key, v)?,
            "template_version" => self.template_version = v.to_string(),
            "template_path" => self.template_path = v.to_string(),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Defaults overridden by each `key=value` line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key=value", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("config line {}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus_size == 0 {
            bail!("corpus_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.abnormality_rate) {
            bail!("abnormality_rate {} outside [0,1]", self.abnormality_rate);
        }
        if self.min_area == 0 {
            bail!("min_area must be at least 1");
        }
        self.hog.validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            generator_optimizer: OptimizerConfig::rmsprop().with_learning_rate(self.generator_lr),
            discriminator_optimizer: OptimizerConfig::adam().with_learning_rate(self.discriminator_lr),
            final_lr_fraction: self.final_lr_fraction,
            seed: spinereport_core::init::derive_seed(self.seed, "train"),
        }
    }

    /// Every key with its resolved value, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let d = &self.discriminator;
        let pairs: Vec<(&str, String)> = vec![
            ("corpus_size", self.corpus_size.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("abnormality_rate", self.abnormality_rate.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("folds", self.folds.to_string()),
            ("seed", self.seed.to_string()),
            ("channels", join(&g.channels)),
            ("dilations", join(&g.dilations)),
            ("use_sgr", g.use_sgr.to_string()),
            ("sgr_hidden", g.sgr_hidden.to_string()),
            ("instance_norm", g.instance_norm.to_string()),
            ("disc_channels", join(&d.channels)),
            ("disc_kernel", d.kernel.to_string()),
            ("disc_hidden", d.hidden.to_string()),
            ("disc_dropout", d.dropout.to_string()),
            ("lambda", self.lambda.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("generator_lr", self.generator_lr.to_string()),
            ("discriminator_lr", self.discriminator_lr.to_string()),
            ("final_lr_fraction", self.final_lr_fraction.to_string()),
            ("hog_patch", self.hog.patch.to_string()),
            ("hog_cell", self.hog.cell.to_string()),
            ("hog_bins", self.hog.bins.to_string()),
            ("hog_block", self.hog.block.to_string()),
            ("min_area", self.min_area.to_string()),
            ("template_version", self.template_version.clone()),
            ("template_path", self.template_path.clone()),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}
