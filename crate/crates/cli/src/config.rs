//! Run configuration: one TOML document, every field defaulted.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use repspace_core::encoding::{
    default_alphas, DEFAULT_DELAYS, DEFAULT_FOLDS, DEFAULT_HOLDOUT, DEFAULT_TR_SECONDS,
};
use repspace_core::geometry::Sign;
use repspace_core::seed::sha256_hex;
use repspace_core::tournament::DEFAULT_DIAG_VALUE;
use repspace_core::transfer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const ENV_OUTPUT_DIR: &str = "REPSPACE_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "REPSPACE_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads for job pools; 0 means one per available core.
    pub workers: usize,
    /// Corpus manifest listing stories and bundles. Ignored when
    /// `[synthetic]` is present.
    pub corpus: Option<PathBuf>,
    /// Overrides the manifest's universal representation.
    pub universal: Option<String>,
    /// Extra bundles on top of those the manifest lists.
    pub bundles: Vec<PathBuf>,
    pub responses: Vec<SubjectInput>,
    pub synthetic: Option<SyntheticConfig>,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub tournament: TournamentConfig,
    pub geometry: GeometryConfig,
    pub encoding: EncodingConfig,
    pub discriminate: DiscriminateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("repspace-run"),
            seed: 0,
            workers: 0,
            corpus: None,
            universal: None,
            bundles: Vec::new(),
            responses: Vec::new(),
            synthetic: None,
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            tournament: TournamentConfig::default(),
            geometry: GeometryConfig::default(),
            encoding: EncodingConfig::default(),
            discriminate: DiscriminateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectInput {
    pub subject: String,
    pub path: PathBuf,
}

/// Nested-family representations plus synthetic subjects, generated by the
/// `synth` stage in place of real inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub latent_dim: usize,
    pub story_lengths: Vec<usize>,
    /// Indices into `story_lengths` of the held-out stories.
    pub test_stories: Vec<usize>,
    pub seconds_per_word: f64,
    pub universal: String,
    pub reps: Vec<SyntheticRep>,
    pub subjects: usize,
    /// Representations whose features drive the synthetic channels.
    pub drivers: Vec<String>,
    pub channels_per_driver: usize,
    pub signal_to_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut reps: Vec<SyntheticRep> = (1..=5)
            .map(|k| SyntheticRep {
                id: format!("k{k}"),
                visible: k,
                offset: 0,
                dim: 8,
                noise_sd: 0.0,
                model_group: None,
                layer_index: None,
            })
            .collect();
        reps.push(SyntheticRep {
            id: "u".into(),
            visible: 6,
            offset: 0,
            dim: 8,
            noise_sd: 0.0,
            model_group: None,
            layer_index: None,
        });
        Self {
            latent_dim: 6,
            story_lengths: vec![1000; 5],
            test_stories: vec![4],
            seconds_per_word: 0.5,
            universal: "u".into(),
            reps,
            subjects: 5,
            drivers: vec!["k1".into(), "k5".into()],
            channels_per_driver: 20,
            signal_to_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRep {
    pub id: String,
    pub visible: usize,
    #[serde(default)]
    pub offset: usize,
    pub dim: usize,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Extra attempts per failed decoder job before the grid gives up.
    pub retries: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TournamentConfig {
    pub diag_value: f64,
    /// Rescale off-target entries to sum to `1 - diag_value` after the
    /// diagonal overwrite.
    pub renormalize: bool,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        Self {
            diag_value: DEFAULT_DIAG_VALUE,
            renormalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsPolicy {
    /// `1 / (representations in the same model group)`.
    Group,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSign {
    Negative,
    Positive,
}

impl From<AnchorSign> for Sign {
    fn from(s: AnchorSign) -> Self {
        match s {
            AnchorSign::Negative => Sign::Negative,
            AnchorSign::Positive => Sign::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub k: usize,
    pub weights: WeightsPolicy,
    /// Representation placed on the `anchor_sign` side of dimension 1;
    /// defaults to the universal representation.
    pub anchor: Option<String>,
    pub anchor_sign: AnchorSign,
    pub scree_factors: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            k: 2,
            weights: WeightsPolicy::Group,
            anchor: None,
            anchor_sign: AnchorSign::Negative,
            scree_factors: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub alphas: Vec<f64>,
    pub folds: usize,
    pub holdout: f64,
    pub delays: Vec<usize>,
    pub tr_seconds: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            folds: DEFAULT_FOLDS,
            holdout: DEFAULT_HOLDOUT,
            delays: DEFAULT_DELAYS.to_vec(),
            tr_seconds: DEFAULT_TR_SECONDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminateConfig {
    /// Subjects in which a pair must score above 0 to count as a match.
    pub threshold: usize,
}

impl Default for DiscriminateConfig {
    fn default() -> Self {
        Self { threshold: 3 }
    }
}

/// Command-line overrides, applied after environment overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a config file, resolve relative paths against its directory and
    /// apply environment then command-line overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let mut cfg: RunConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                cfg.resolve_paths(base);
                cfg
            }
            None => RunConfig::default(),
        };
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !dir.is_empty() {
                cfg.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            if !w.is_empty() {
                cfg.workers = w
                    .parse()
                    .with_context(|| format!("{ENV_WORKERS}={w:?} is not a worker count"))?;
            }
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(d) = &overrides.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        if let Some(c) = &mut self.corpus {
            join(c);
        }
        self.bundles.iter_mut().for_each(join);
        self.responses.iter_mut().for_each(|s| join(&mut s.path));
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.synthetic.is_none() && self.corpus.is_none() {
            bail!("config needs either a corpus manifest or a [synthetic] section");
        }
        if let Some(s) = &self.synthetic {
            if s.reps.len() < 2 {
                bail!("[synthetic] needs at least two representations");
            }
            if !s.reps.iter().any(|r| r.id == s.universal) {
                bail!(
                    "[synthetic] universal {:?} is not among the representations",
                    s.universal
                );
            }
            for d in &s.drivers {
                if !s.reps.iter().any(|r| &r.id == d) {
                    bail!("[synthetic] driver {d:?} is not among the representations");
                }
            }
            if !(s.signal_to_noise > 0.0) {
                bail!("[synthetic] signal_to_noise must be positive");
            }
        }
        if !(self.tournament.diag_value.is_finite()) {
            bail!("tournament.diag_value must be finite");
        }
        let g = &self.geometry;
        if g.k == 0 || g.k > repspace_core::geometry::MAX_DIMS {
            bail!(
                "geometry.k must be in 1..={}",
                repspace_core::geometry::MAX_DIMS
            );
        }
        let e = &self.encoding;
        if e.alphas.is_empty() || e.alphas.iter().any(|a| !(*a >= 0.0)) {
            bail!("encoding.alphas must be a nonempty list of penalties >= 0");
        }
        if e.folds == 0 || !(e.holdout > 0.0 && e.holdout < 1.0) {
            bail!("encoding needs folds >= 1 and 0 < holdout < 1");
        }
        if e.delays.is_empty() || !(e.tr_seconds > 0.0) {
            bail!("encoding needs at least one delay and tr_seconds > 0");
        }
        if self.discriminate.threshold == 0 {
            bail!("discriminate.threshold must be at least 1");
        }
        Ok(())
    }

    /// Hash of everything that can change results. Output location and
    /// worker count are excluded: they never change what gets computed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 0;
        sha256_hex(toml::to_string(&c).expect("config serialises").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }
    }

    pub fn universal_id(&self) -> Option<&str> {
        match &self.synthetic {
            Some(s) => Some(&s.universal),
            None => self.universal.as_deref(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut cfg = RunConfig {
            synthetic: Some(SyntheticConfig::default()),
            ..Default::default()
        };
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
        cfg.geometry.k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_location_and_workers() {
        let a = RunConfig {
            synthetic: Some(SyntheticConfig::default()),
            ..Default::default()
        };
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        b.workers = 8;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nlatent = 3").is_err());
    }
}
