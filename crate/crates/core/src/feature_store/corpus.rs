use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_bundle, FeatureBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// One story of the corpus. Its tokens occupy a contiguous index range that
/// follows the previous story's range.
#[derive(Debug, Clone, PartialEq)]
pub struct Story {
    pub id: String,
    pub role: Role,
    pub token_count: usize,
    pub tokens: Option<Vec<String>>,
    /// Onset time of each token in seconds on the shared recording timeline.
    pub word_times: Option<Vec<f64>>,
}

impl Story {
    pub fn new(id: impl Into<String>, role: Role, token_count: usize) -> Self {
        Self {
            id: id.into(),
            role,
            token_count,
            tokens: None,
            word_times: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorpus {
    stories: Vec<Story>,
}

impl TokenCorpus {
    pub fn new(stories: Vec<Story>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &stories {
            super::validate_id(&s.id)?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate story id {}", s.id)));
            }
            if s.token_count == 0 {
                return Err(Error::Validation(format!("story {} has no tokens", s.id)));
            }
            if let Some(t) = &s.tokens {
                if t.len() != s.token_count {
                    return Err(Error::Validation(format!(
                        "story {}: {} tokens listed, token_count {}",
                        s.id,
                        t.len(),
                        s.token_count
                    )));
                }
            }
            if let Some(w) = &s.word_times {
                if w.len() != s.token_count {
                    return Err(Error::Validation(format!(
                        "story {}: {} word times for {} tokens",
                        s.id,
                        w.len(),
                        s.token_count
                    )));
                }
                if w.iter().any(|t| !t.is_finite()) || w.windows(2).any(|p| p[1] < p[0]) {
                    return Err(Error::Validation(format!(
                        "story {}: word times must be finite and nondecreasing",
                        s.id
                    )));
                }
            }
        }
        if stories.is_empty() {
            return Err(Error::Validation("corpus has no stories".into()));
        }
        Ok(Self { stories })
    }

    pub fn stories(&self) -> &[Story] {
        &self.stories
    }

    pub fn total_tokens(&self) -> usize {
        self.stories.iter().map(|s| s.token_count).sum()
    }

    /// Token index range of each story, in story order.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.stories
            .iter()
            .map(|s| {
                let r = start..start + s.token_count;
                start = r.end;
                r
            })
            .collect()
    }

    /// Concatenated word times, if every story carries them and the timeline
    /// is nondecreasing across story boundaries.
    pub fn word_times(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.total_tokens());
        for s in &self.stories {
            out.extend_from_slice(s.word_times.as_ref()?);
        }
        if out.windows(2).any(|p| p[1] < p[0]) {
            return None;
        }
        Some(out)
    }
}

/// Representations aligned over one corpus. Bundle order is the canonical
/// representation order used by every downstream matrix.
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    pub corpus: TokenCorpus,
    pub bundles: Vec<FeatureBundle>,
    pub universal_id: String,
}

impl AlignedDataset {
    pub fn ids(&self) -> Vec<String> {
        self.bundles.iter().map(|b| b.spec.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.bundles.iter().position(|b| b.spec.id == id)
    }

    pub fn bundle(&self, id: &str) -> Result<&FeatureBundle> {
        self.index_of(id)
            .map(|i| &self.bundles[i])
            .ok_or_else(|| Error::InvalidArgument(format!("unknown representation {id:?}")))
    }

    pub fn universal(&self) -> &FeatureBundle {
        self.bundle(&self.universal_id)
            .expect("universal id validated at alignment")
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}

pub fn align(
    corpus: TokenCorpus,
    bundles: Vec<FeatureBundle>,
    universal_id: &str,
) -> Result<AlignedDataset> {
    let total = corpus.total_tokens();
    let mut ids = HashSet::new();
    let mut slots = HashSet::new();
    for b in &bundles {
        if !ids.insert(b.spec.id.clone()) {
            return Err(Error::Alignment(format!(
                "duplicate bundle id {}",
                b.spec.id
            )));
        }
        if !slots.insert((b.spec.model_group.clone(), b.spec.layer_index)) {
            return Err(Error::Alignment(format!(
                "{}: (model_group {}, layer {:?}) already used",
                b.spec.id, b.spec.model_group, b.spec.layer_index
            )));
        }
        if b.token_count != total {
            return Err(Error::Alignment(format!(
                "bundle {} has {} tokens but the corpus has {}",
                b.spec.id, b.token_count, total
            )));
        }
    }
    if !ids.contains(universal_id) {
        return Err(Error::Alignment(format!(
            "universal representation {universal_id:?} is not among the bundles"
        )));
    }
    Ok(AlignedDataset {
        corpus,
        bundles,
        universal_id: universal_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition token rows by story role.
pub fn split(corpus: &TokenCorpus) -> Result<Split> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (story, range) in corpus.stories().iter().zip(corpus.ranges()) {
        match story.role {
            Role::Train => train.extend(range),
            Role::Test => test.extend(range),
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("corpus has no train story".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("corpus has no test story".into()));
    }
    Ok(Split { train, test })
}

/// Story entry of a corpus manifest. Either `tokens` or `token_count` must be
/// given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryEntry {
    pub id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

/// TOML document listing corpus stories, their roles, and bundle paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub universal: String,
    pub stories: Vec<StoryEntry>,
    #[serde(default)]
    pub bundles: Vec<BundleEntry>,
}

impl CorpusManifest {
    pub fn corpus(&self) -> Result<TokenCorpus> {
        let stories = self
            .stories
            .iter()
            .map(|e| {
                let token_count = match (&e.tokens, e.token_count) {
                    (Some(t), Some(n)) if t.len() != n => {
                        return Err(Error::Manifest(format!(
                            "story {}: token_count {n} but {} tokens listed",
                            e.id,
                            t.len()
                        )))
                    }
                    (Some(t), _) => t.len(),
                    (None, Some(n)) => n,
                    (None, None) => {
                        return Err(Error::Manifest(format!(
                            "story {}: needs tokens or token_count",
                            e.id
                        )))
                    }
                };
                Ok(Story {
                    id: e.id.clone(),
                    role: e.role,
                    token_count,
                    tokens: e.tokens.clone(),
                    word_times: e.word_times.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TokenCorpus::new(stories)
    }

    pub fn from_corpus(corpus: &TokenCorpus, universal: &str, bundles: Vec<BundleEntry>) -> Self {
        Self {
            universal: universal.to_string(),
            stories: corpus
                .stories()
                .iter()
                .map(|s| StoryEntry {
                    id: s.id.clone(),
                    role: s.role,
                    token_count: Some(s.token_count),
                    tokens: s.tokens.clone(),
                    word_times: s.word_times.clone(),
                })
                .collect(),
            bundles,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }
}

pub fn load_corpus_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

/// Read a manifest, load every bundle it lists, and align them.
pub fn load_dataset(manifest_path: &Path) -> Result<AlignedDataset> {
    let manifest = load_corpus_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let corpus = manifest.corpus()?;
    let mut bundles = Vec::with_capacity(manifest.bundles.len());
    for entry in &manifest.bundles {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let b = read_bundle(&path)?;
        if b.spec.id != entry.id {
            return Err(Error::Manifest(format!(
                "{} holds bundle {:?}, manifest expects {:?}",
                path.display(),
                b.spec.id,
                entry.id
            )));
        }
        bundles.push(b);
    }
    align(corpus, bundles, &manifest.universal)
}
