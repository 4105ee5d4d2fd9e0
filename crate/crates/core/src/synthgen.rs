//! Synthetic data with known transfer structure.
//!
//! A nested family shares one standard-normal latent sequence; each member sees
//! the first `k` latent coordinates through a fixed orthonormal-column mixing
//! matrix plus optional isotropic noise. Because every parameter is known, the
//! best achievable linear transfer error between two members can be computed
//! directly, which is what the trained pipeline is checked against.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoding::{delay_expand, downsample, tr_count, tr_split, ResponseDataset};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureBundle, RepresentationSpec, Role, Story, TokenCorpus};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct NestedRep {
    pub id: String,
    /// Number of latent coordinates this member sees, starting at `offset`.
    pub visible: usize,
    pub offset: usize,
    pub dim: usize,
    pub noise_sd: f64,
    /// Members with the same key (and shape) share a mixing matrix. Defaults
    /// to the id.
    pub mixing_key: Option<String>,
    pub model_group: Option<String>,
    pub layer_index: Option<u32>,
}

impl NestedRep {
    pub fn new(id: impl Into<String>, visible: usize, dim: usize, noise_sd: f64) -> Self {
        Self {
            id: id.into(),
            visible,
            offset: 0,
            dim,
            noise_sd,
            mixing_key: None,
            model_group: None,
            layer_index: None,
        }
    }

    /// See latents `offset..offset + visible` instead of the leading ones.
    pub fn at_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    pub fn sharing_mixing(mut self, key: impl Into<String>) -> Self {
        self.mixing_key = Some(key.into());
        self
    }

    pub fn in_group(mut self, group: impl Into<String>, layer: Option<u32>) -> Self {
        self.model_group = Some(group.into());
        self.layer_index = layer;
        self
    }

    fn key(&self) -> &str {
        self.mixing_key.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedFamilySpec {
    pub seed: u64,
    pub latent_dim: usize,
    pub token_count: usize,
    pub reps: Vec<NestedRep>,
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // filled row by row so the stream order does not depend on storage order
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

impl NestedFamilySpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.token_count == 0 {
            return Err(Error::InvalidArgument(
                "latent_dim and token_count must be positive".into(),
            ));
        }
        let mut ids = std::collections::HashSet::new();
        for r in &self.reps {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate rep id {}", r.id)));
            }
            if r.visible == 0 || r.offset + r.visible > self.latent_dim {
                return Err(Error::InvalidArgument(format!(
                    "{}: latents {}..{} outside 0..{}",
                    r.id,
                    r.offset,
                    r.offset + r.visible,
                    self.latent_dim
                )));
            }
            if r.dim < r.visible {
                return Err(Error::InvalidArgument(format!(
                    "{}: output dim {} below visible latent count {}",
                    r.id, r.dim, r.visible
                )));
            }
            if !(r.noise_sd >= 0.0) || !r.noise_sd.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{}: noise_sd must be >= 0",
                    r.id
                )));
            }
        }
        for a in &self.reps {
            for b in &self.reps {
                if a.key() == b.key()
                    && (a.dim, a.visible, a.offset) != (b.dim, b.visible, b.offset)
                {
                    return Err(Error::InvalidArgument(format!(
                        "{} and {} share a mixing matrix but differ in shape",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.reps
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rep id {id:?}")))
    }

    /// Orthonormal-column `dim x visible` mixing matrix of member `i`.
    pub fn mixing(&self, i: usize) -> DMatrix<f64> {
        let r = &self.reps[i];
        let g = gaussian_matrix(r.dim, r.visible, derive_seed(self.seed, &["mix", r.key()]));
        let qr = g.qr();
        let mut q = qr.q();
        let rr = qr.r();
        // fix the sign ambiguity so the matrix is a function of the seed only
        for c in 0..r.visible {
            if rr[(c, c)] < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
        q
    }

    /// Shared latent rows, `token_count x latent_dim`.
    pub fn latents(&self) -> DMatrix<f64> {
        gaussian_matrix(
            self.token_count,
            self.latent_dim,
            derive_seed(self.seed, &["latent"]),
        )
    }
}

pub fn gen_nested_reps(spec: &NestedFamilySpec) -> Result<Vec<FeatureBundle>> {
    spec.validate()?;
    let z = spec.latents();
    spec.reps
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = spec.mixing(i);
            let mut x = z.columns(r.offset, r.visible) * a.transpose();
            if r.noise_sd > 0.0 {
                let e = gaussian_matrix(
                    spec.token_count,
                    r.dim,
                    derive_seed(spec.seed, &["noise", &r.id]),
                );
                x += e * r.noise_sd;
            }
            let group = r.model_group.clone().unwrap_or_else(|| r.id.clone());
            FeatureBundle::from_matrix(
                RepresentationSpec::new(&r.id, r.dim).with_group(group, r.layer_index),
                &x,
            )
        })
        .collect()
}

fn pinv_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = max * m.nrows() as f64 * 1e-12;
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&v| if v > tol { 1.0 / v } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Population mean-squared error (averaged over target dims) of the best
/// affine prediction of member `target` from member `source`, computed from
/// the generating parameters.
pub fn oracle_transfer_mse(spec: &NestedFamilySpec, source: &str, target: &str) -> Result<f64> {
    spec.validate()?;
    let i = spec.index_of(source)?;
    let j = spec.index_of(target)?;
    if i == j {
        return Ok(0.0);
    }
    let (ri, rj) = (&spec.reps[i], &spec.reps[j]);
    let (ai, aj) = (spec.mixing(i), spec.mixing(j));
    // E[z_j z_i^T]: 1 where both members see the same latent coordinate
    let overlap = DMatrix::from_fn(rj.visible, ri.visible, |a, b| {
        if rj.offset + a == ri.offset + b {
            1.0
        } else {
            0.0
        }
    });
    let cov_ii = &ai * ai.transpose() + DMatrix::identity(ri.dim, ri.dim) * ri.noise_sd.powi(2);
    let cov_jj = &aj * aj.transpose() + DMatrix::identity(rj.dim, rj.dim) * rj.noise_sd.powi(2);
    let cov_ji = &aj * overlap * ai.transpose();
    let explained = &cov_ji * pinv_symmetric(&cov_ii) * cov_ji.transpose();
    let residual = (cov_jj - explained).trace() / rj.dim as f64;
    Ok(residual.max(0.0))
}

/// Corpus of consecutive stories with one word every `seconds_per_word`.
/// Stories listed in `test` get the test role.
pub fn regular_corpus(
    lengths: &[usize],
    test: &[usize],
    seconds_per_word: f64,
) -> Result<TokenCorpus> {
    if !(seconds_per_word > 0.0) {
        return Err(Error::InvalidArgument(
            "seconds_per_word must be positive".into(),
        ));
    }
    let mut onset = 0usize;
    let stories = lengths
        .iter()
        .enumerate()
        .map(|(s, &n)| {
            let role = if test.contains(&s) {
                Role::Test
            } else {
                Role::Train
            };
            let mut story = Story::new(format!("story{s:02}"), role, n);
            story.word_times = Some(
                (onset..onset + n)
                    .map(|w| w as f64 * seconds_per_word)
                    .collect(),
            );
            onset += n;
            story
        })
        .collect();
    TokenCorpus::new(stories)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Sd(f64),
    /// Per-channel noise variance equal to signal variance divided by this.
    SignalToNoise(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticResponseSpec {
    pub seed: u64,
    pub source_rep: String,
    /// `(dim * delays) x channels`, rows ordered delay block then feature.
    pub weights: DMatrix<f64>,
    pub noise: NoiseLevel,
    pub tr_seconds: f64,
    pub delays: Vec<usize>,
    /// TRs of silence assumed before the first stimulus TR; no delay may reach
    /// further back than this.
    pub padding_trs: usize,
}

impl SyntheticResponseSpec {
    /// Gaussian true weights for `dim` features over the given delays.
    pub fn random(
        seed: u64,
        source_rep: &str,
        dim: usize,
        delays: &[usize],
        channels: usize,
        noise: NoiseLevel,
    ) -> Self {
        let weights = gaussian_matrix(
            dim * delays.len(),
            channels,
            derive_seed(seed, &["true-weights", source_rep]),
        );
        Self {
            seed,
            source_rep: source_rep.to_string(),
            weights,
            noise,
            tr_seconds: crate::encoding::DEFAULT_TR_SECONDS,
            delays: delays.to_vec(),
            padding_trs: delays.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticResponses {
    pub dataset: ResponseDataset,
    /// Noise-free part of the responses.
    pub signal: DMatrix<f64>,
    pub true_weights: DMatrix<f64>,
}

pub fn gen_synthetic_responses(
    spec: &SyntheticResponseSpec,
    source: &FeatureBundle,
    corpus: &TokenCorpus,
) -> Result<SyntheticResponses> {
    if source.id() != spec.source_rep {
        return Err(Error::InvalidArgument(format!(
            "spec names source {} but bundle is {}",
            spec.source_rep,
            source.id()
        )));
    }
    if spec.weights.ncols() == 0 || !(spec.tr_seconds > 0.0) || spec.delays.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one channel, TR > 0 and at least one delay".into(),
        ));
    }
    if let Some(&d) = spec.delays.iter().max() {
        if d > spec.padding_trs {
            return Err(Error::InvalidArgument(format!(
                "delay of {d} TRs reaches before the {} TRs of padding",
                spec.padding_trs
            )));
        }
    }
    if source.token_count != corpus.total_tokens() {
        return Err(Error::Alignment(format!(
            "{} has {} rows, corpus has {} tokens",
            source.id(),
            source.token_count,
            corpus.total_tokens()
        )));
    }
    let expected_rows = source.dim() * spec.delays.len();
    if spec.weights.nrows() != expected_rows {
        return Err(Error::Dimension(format!(
            "true weights have {} rows, delayed design has {expected_rows}",
            spec.weights.nrows()
        )));
    }
    let times = corpus
        .word_times()
        .ok_or_else(|| Error::InvalidArgument("corpus has no word timeline".into()))?;
    let trs = tr_count(&times, spec.tr_seconds);
    let x = downsample(source, &times, spec.tr_seconds, trs)?;
    let design = delay_expand(&x, &spec.delays)?;
    let signal = &design.x * &spec.weights;
    let v = signal.ncols();
    let sds: Vec<f64> = match spec.noise {
        NoiseLevel::Sd(sd) => vec![sd; v],
        NoiseLevel::SignalToNoise(ratio) => {
            if !(ratio > 0.0) {
                return Err(Error::InvalidArgument(
                    "signal-to-noise ratio must be positive".into(),
                ));
            }
            (0..v)
                .map(|c| {
                    let col: Vec<f64> = signal.column(c).iter().copied().collect();
                    (crate::stats::variance(&col) / ratio).sqrt()
                })
                .collect()
        }
    };
    if sds.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("noise sd must be >= 0".into()));
    }
    let noise = gaussian_matrix(
        trs,
        v,
        derive_seed(spec.seed, &["response-noise", &spec.source_rep]),
    );
    let mut responses = signal.clone();
    for c in 0..v {
        responses.column_mut(c).axpy(sds[c], &noise.column(c), 1.0);
    }
    let dataset = ResponseDataset::new(
        responses,
        spec.tr_seconds,
        tr_split(corpus, spec.tr_seconds, trs)?,
    )?;
    Ok(SyntheticResponses {
        dataset,
        signal,
        true_weights: spec.weights.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    fn family(noise: f64) -> NestedFamilySpec {
        NestedFamilySpec {
            seed: 11,
            latent_dim: 4,
            token_count: 400,
            reps: vec![
                NestedRep::new("small", 2, 5, noise),
                NestedRep::new("large", 4, 6, noise),
            ],
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_nested_reps(&family(0.1)).unwrap();
        let b = gen_nested_reps(&family(0.1)).unwrap();
        assert_eq!(a, b);
        let mut other = family(0.1);
        other.seed = 12;
        assert_ne!(gen_nested_reps(&other).unwrap()[0].raw(), a[0].raw());
    }

    #[test]
    fn mixing_is_orthonormal() {
        let f = family(0.0);
        for i in 0..2 {
            let a = f.mixing(i);
            let gram = a.transpose() * &a;
            assert!((gram - DMatrix::identity(a.ncols(), a.ncols())).norm() < 1e-12);
        }
    }

    #[test]
    fn too_many_visible_latents_is_rejected() {
        let mut f = family(0.0);
        f.reps[0].visible = 5;
        assert!(gen_nested_reps(&f).is_err());
    }

    #[test]
    fn oracle_nested_structure() {
        let f = family(0.0);
        assert_eq!(oracle_transfer_mse(&f, "small", "small").unwrap(), 0.0);
        assert!(oracle_transfer_mse(&f, "large", "small").unwrap() < 1e-12);
        // two unseen unit-variance latents spread over 6 output dims
        let up = oracle_transfer_mse(&f, "small", "large").unwrap();
        assert!((up - 2.0 / 6.0).abs() < 1e-12, "{up}");
        assert!(oracle_transfer_mse(&f, "nope", "large").is_err());
    }

    // brute force: regress one member on another over many samples
    fn sample_transfer_mse(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let design = DMatrix::from_fn(x.nrows(), x.ncols() + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                x[(r, c - 1)]
            }
        });
        let coef = (design.transpose() * &design)
            .cholesky()
            .unwrap()
            .solve(&(design.transpose() * y));
        let resid = y - &design * coef;
        resid.norm_squared() / (y.nrows() * y.ncols()) as f64
    }

    #[test]
    fn oracle_matches_sample_least_squares() {
        let mut f = family(0.2);
        f.token_count = 200_000;
        let reps = gen_nested_reps(&f).unwrap();
        let sample = sample_transfer_mse(&reps[0].matrix(), &reps[1].matrix());
        let oracle = oracle_transfer_mse(&f, "small", "large").unwrap();
        assert!(
            (sample - oracle).abs() / oracle < 0.02,
            "{sample} vs {oracle}"
        );
    }

    #[test]
    fn windowed_oracle_matches_sample_least_squares() {
        let f = NestedFamilySpec {
            seed: 4,
            latent_dim: 5,
            token_count: 200_000,
            reps: vec![
                NestedRep::new("left", 3, 4, 0.1),
                NestedRep::new("right", 3, 4, 0.1).at_offset(2),
            ],
        };
        let reps = gen_nested_reps(&f).unwrap();
        for (a, b) in [(0, 1), (1, 0)] {
            let sample = sample_transfer_mse(&reps[a].matrix(), &reps[b].matrix());
            let oracle = oracle_transfer_mse(&f, reps[a].id(), reps[b].id()).unwrap();
            assert!(
                (sample - oracle).abs() / oracle < 0.02,
                "{sample} vs {oracle}"
            );
        }
        // one shared latent: the two unseen unit-variance latents spread over 4
        // output dims (0.5) plus the target's own noise (0.01) are lost
        let oracle = oracle_transfer_mse(&f, "left", "right").unwrap();
        assert!((oracle - 0.51).abs() < 0.01, "{oracle}");
        let mut bad = f.clone();
        bad.reps[1].offset = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shared_mixing_gives_invertible_images() {
        let f = NestedFamilySpec {
            seed: 1,
            latent_dim: 3,
            token_count: 50,
            reps: vec![
                NestedRep::new("a", 3, 3, 0.0).sharing_mixing("m"),
                NestedRep::new("b", 3, 3, 0.0).sharing_mixing("m"),
            ],
        };
        assert_eq!(f.mixing(0), f.mixing(1));
        assert!(oracle_transfer_mse(&f, "a", "b").unwrap() < 1e-12);
    }

    #[test]
    fn noiseless_identity_responses_equal_features() {
        let corpus = regular_corpus(&[40, 20], &[1], 0.5).unwrap();
        let f = NestedFamilySpec {
            seed: 2,
            latent_dim: 2,
            token_count: 60,
            reps: vec![NestedRep::new("src", 2, 2, 0.0)],
        };
        let src = gen_nested_reps(&f).unwrap().remove(0);
        let spec = SyntheticResponseSpec {
            seed: 3,
            source_rep: "src".into(),
            weights: DMatrix::identity(2, 2),
            noise: NoiseLevel::Sd(0.0),
            tr_seconds: 2.0,
            delays: vec![1],
            padding_trs: 1,
        };
        let out = gen_synthetic_responses(&spec, &src, &corpus).unwrap();
        let times = corpus.word_times().unwrap();
        let trs = tr_count(&times, 2.0);
        let x = downsample(&src, &times, 2.0, trs).unwrap();
        let shifted = delay_expand(&x, &[1]).unwrap().x;
        assert_eq!(out.dataset.responses, shifted);
        assert_eq!(out.dataset.trs(), 15);
        assert_eq!(out.dataset.test, (10..15).collect::<Vec<_>>());
    }

    #[test]
    fn delay_beyond_padding_is_rejected() {
        let corpus = regular_corpus(&[10], &[], 0.5).unwrap();
        let f = NestedFamilySpec {
            seed: 2,
            latent_dim: 1,
            token_count: 10,
            reps: vec![NestedRep::new("src", 1, 1, 0.0)],
        };
        let src = gen_nested_reps(&f).unwrap().remove(0);
        let mut spec = SyntheticResponseSpec::random(1, "src", 1, &[1, 2], 1, NoiseLevel::Sd(0.0));
        spec.padding_trs = 1;
        assert!(gen_synthetic_responses(&spec, &src, &corpus).is_err());
    }

    #[test]
    fn equal_signal_and_noise_attenuates_correlation() {
        // correlation of signal with signal + equal-variance noise is 1/sqrt(2)
        let corpus = regular_corpus(&[400, 400], &[1], 0.5).unwrap();
        let mut total = 0.0;
        let seeds = 100;
        for seed in 0..seeds {
            let f = NestedFamilySpec {
                seed,
                latent_dim: 3,
                token_count: 800,
                reps: vec![NestedRep::new("src", 3, 3, 0.0)],
            };
            let src = gen_nested_reps(&f).unwrap().remove(0);
            let spec = SyntheticResponseSpec::random(
                seed,
                "src",
                3,
                &[1, 2],
                4,
                NoiseLevel::SignalToNoise(1.0),
            );
            let out = gen_synthetic_responses(&spec, &src, &corpus).unwrap();
            for c in 0..4 {
                let s: Vec<f64> = out.signal.column(c).iter().copied().collect();
                let r: Vec<f64> = out.dataset.responses.column(c).iter().copied().collect();
                total += pearson(&s, &r).unwrap();
            }
        }
        let mean = total / (seeds as f64 * 4.0);
        assert!((mean - 0.5f64.sqrt()).abs() < 0.01, "{mean}");
    }
}
