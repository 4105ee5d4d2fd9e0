//! Channelwise encoding models.
//!
//! Word-rate features are averaged into TR bins, expanded with causal FIR
//! delays, z-scored with training statistics, and regressed onto each
//! response channel with ridge. The ridge penalty is picked per channel by
//! Monte Carlo cross-validation on held-out correlation, and the final model
//! is scored by Pearson correlation on the test TRs.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::{
    row_major, validate_id, Container, FeatureBundle, Header, Payload, Role, Split, TokenCorpus,
};
use crate::seed::derive_seed;
use crate::stats::pearson;

pub const DEFAULT_TR_SECONDS: f64 = 2.0;
pub const DEFAULT_DELAYS: [usize; 4] = [1, 2, 3, 4];
pub const DEFAULT_FOLDS: usize = 50;
pub const DEFAULT_HOLDOUT: f64 = 0.2;

/// Ten penalties log-spaced from 1 to 1e5.
pub fn default_alphas() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(5.0 * i as f64 / 9.0)).collect()
}

/// TR-rate responses (time x channels) with their train/test TR partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDataset {
    pub responses: DMatrix<f64>,
    pub tr_seconds: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub channel_ids: Vec<String>,
    pub channel_labels: Option<Vec<String>>,
}

impl ResponseDataset {
    pub fn new(responses: DMatrix<f64>, tr_seconds: f64, split: Split) -> Result<Self> {
        let channel_ids = (0..responses.ncols()).map(|v| format!("v{v}")).collect();
        let ds = Self {
            responses,
            tr_seconds,
            train: split.train,
            test: split.test,
            channel_ids,
            channel_labels: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn channels(&self) -> usize {
        self.responses.ncols()
    }

    pub fn trs(&self) -> usize {
        self.responses.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.trs();
        if !(self.tr_seconds > 0.0) {
            return Err(Error::Validation("tr_seconds must be positive".into()));
        }
        if self.channels() == 0 {
            return Err(Error::Validation("response dataset has no channels".into()));
        }
        if self.channel_ids.len() != self.channels() {
            return Err(Error::Validation(
                "one channel id per column required".into(),
            ));
        }
        if let Some(l) = &self.channel_labels {
            if l.len() != self.channels() {
                return Err(Error::Validation(
                    "one channel label per column required".into(),
                ));
            }
        }
        let mut seen = vec![false; m];
        for &i in self.train.iter().chain(&self.test) {
            if i >= m {
                return Err(Error::Validation(format!("TR index {i} out of range {m}")));
            }
            if seen[i] {
                return Err(Error::Validation(format!(
                    "TR {i} is in both train and test"
                )));
            }
            seen[i] = true;
        }
        if self.responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite response value".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        for id in &self.channel_ids {
            validate_id(id)?;
        }
        let mut h = Header::new();
        h.set("kind", "responses");
        h.set("rows", self.trs());
        h.set("cols", self.channels());
        h.set("tr_seconds", self.tr_seconds);
        h.set("layout", "time-major");
        h.set("train_trs", encode_ranges(&self.train));
        h.set("test_trs", encode_ranges(&self.test));
        h.set("channel_ids", self.channel_ids.join(","));
        if let Some(labels) = &self.channel_labels {
            for l in labels {
                validate_id(l)?;
            }
            h.set("channel_labels", labels.join(","));
        }
        let payload = row_major(&self.responses)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        Container::new(h, Payload::F32(payload)).write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let h = &c.header;
        if h.require("kind")? != "responses" {
            return Err(Error::Header(format!(
                "{}: not a response file",
                path.display()
            )));
        }
        if h.require("layout")? != "time-major" {
            return Err(Error::Header("responses must be time-major".into()));
        }
        let rows: usize = h.parse("rows")?;
        let cols: usize = h.parse("cols")?;
        if rows * cols != c.payload.len() {
            return Err(Error::SizeMismatch(format!(
                "{}: {rows}x{cols} but {} values",
                path.display(),
                c.payload.len()
            )));
        }
        let split_list = |s: &str| s.split(',').map(str::to_string).collect::<Vec<_>>();
        let ds = Self {
            responses: DMatrix::from_row_slice(rows, cols, &c.payload.to_f64()),
            tr_seconds: h.parse("tr_seconds")?,
            train: decode_ranges(h.require("train_trs")?)?,
            test: decode_ranges(h.require("test_trs")?)?,
            channel_ids: split_list(h.require("channel_ids")?),
            channel_labels: h.get("channel_labels").map(split_list),
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Compact `a..b` range list for sorted-ish index sets.
fn encode_ranges(idx: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let start = idx[i];
        let mut end = start + 1;
        while i + 1 < idx.len() && idx[i + 1] == end {
            end += 1;
            i += 1;
        }
        parts.push(format!("{start}..{end}"));
        i += 1;
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

fn decode_ranges(s: &str) -> Result<Vec<usize>> {
    if s == "none" {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let (a, b) = part
            .split_once("..")
            .ok_or_else(|| Error::Header(format!("bad range {part:?}")))?;
        let a: usize = a
            .parse()
            .map_err(|_| Error::Header(format!("bad range {part:?}")))?;
        let b: usize = b
            .parse()
            .map_err(|_| Error::Header(format!("bad range {part:?}")))?;
        out.extend(a..b);
    }
    Ok(out)
}

/// Number of TRs needed to cover every word onset.
pub fn tr_count(word_times: &[f64], tr_seconds: f64) -> usize {
    word_times
        .last()
        .map_or(1, |&t| (t.max(0.0) / tr_seconds).floor() as usize + 1)
}

/// Assign each TR the role of the story whose first word precedes the TR's
/// start (the first story for leading TRs).
pub fn tr_split(corpus: &TokenCorpus, tr_seconds: f64, trs: usize) -> Result<Split> {
    let times = corpus
        .word_times()
        .ok_or_else(|| Error::InvalidArgument("corpus has no word timeline".into()))?;
    let starts: Vec<(f64, Role)> = corpus
        .stories()
        .iter()
        .zip(corpus.ranges())
        .map(|(s, r)| (times[r.start], s.role))
        .collect();
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for m in 0..trs {
        let t = m as f64 * tr_seconds;
        let role = starts
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .unwrap_or(&starts[0])
            .1;
        match role {
            Role::Train => split.train.push(m),
            Role::Test => split.test.push(m),
        }
    }
    Ok(split)
}

/// Average word-rate feature rows into TR bins `[m*TR, (m+1)*TR)`. Empty bins
/// repeat the previous TR (zeros before the first filled bin).
pub fn downsample(
    bundle: &FeatureBundle,
    word_times: &[f64],
    tr_seconds: f64,
    trs: usize,
) -> Result<DMatrix<f64>> {
    if word_times.len() != bundle.token_count {
        return Err(Error::Dimension(format!(
            "{} word times for {} tokens of {}",
            word_times.len(),
            bundle.token_count,
            bundle.id()
        )));
    }
    if word_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "word times must be nondecreasing".into(),
        ));
    }
    if !(tr_seconds > 0.0) || trs == 0 {
        return Err(Error::InvalidArgument(
            "need tr_seconds > 0 and at least one TR".into(),
        ));
    }
    let d = bundle.dim();
    let mut sums = DMatrix::zeros(trs, d);
    let mut counts = vec![0usize; trs];
    for (j, &t) in word_times.iter().enumerate() {
        if t < 0.0 {
            continue;
        }
        let m = (t / tr_seconds).floor() as usize;
        if m >= trs {
            continue;
        }
        counts[m] += 1;
        for (c, &v) in bundle.row(j).iter().enumerate() {
            sums[(m, c)] += v as f64;
        }
    }
    for m in 0..trs {
        if counts[m] > 0 {
            let n = counts[m] as f64;
            for c in 0..d {
                sums[(m, c)] /= n;
            }
        } else if m > 0 {
            for c in 0..d {
                sums[(m, c)] = sums[(m - 1, c)];
            }
        }
    }
    Ok(sums)
}

/// FIR design matrix: one column block per delay (in delay order), each block
/// holding the features shifted down by that many TRs.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedDesign {
    pub x: DMatrix<f64>,
    pub delays: Vec<usize>,
}

pub fn delay_expand(x_tr: &DMatrix<f64>, delays: &[usize]) -> Result<DelayedDesign> {
    if delays.is_empty() {
        return Err(Error::InvalidArgument("at least one delay required".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for &d in delays {
        if d == 0 || !seen.insert(d) {
            return Err(Error::InvalidArgument(format!(
                "delays must be positive and distinct, got {delays:?}"
            )));
        }
    }
    let (m, d) = x_tr.shape();
    let mut x = DMatrix::zeros(m, d * delays.len());
    for (b, &delay) in delays.iter().enumerate() {
        for row in delay..m {
            for c in 0..d {
                x[(row, b * d + c)] = x_tr[(row - delay, c)];
            }
        }
    }
    Ok(DelayedDesign {
        x,
        delays: delays.to_vec(),
    })
}

/// Column means and standard deviations from training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.row_mean().transpose();
        let mut sd = DVector::zeros(x.ncols());
        for c in 0..x.ncols() {
            let v = x
                .column(c)
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>()
                / n;
            // constant columns are centred to zero and left unscaled
            sd[c] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for c in 0..x.ncols() {
            for r in 0..x.nrows() {
                out[(r, c)] = (x[(r, c)] - self.mean[c]) / self.sd[c];
            }
        }
        out
    }
}

/// Thin SVD of a design, reused across penalties and channels.
pub struct RidgeSvd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
    rank: usize,
    cols: usize,
}

impl RidgeSvd {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("empty design".into()));
        }
        let svd = x.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let s = svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let tol = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
        let rank = s.iter().filter(|&&v| v > tol).count();
        Ok(Self {
            u,
            s,
            v: v_t.transpose(),
            rank,
            cols: x.ncols(),
        })
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < self.cols
    }

    /// `argmin ||X w - y||^2 + alpha ||w||^2` for every column of `y`.
    /// With `alpha = 0` this is the minimum-norm least-squares solution.
    pub fn solve(&self, y: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
        let uty = self.u.transpose() * y;
        let smax = self.s.iter().cloned().fold(0.0, f64::max);
        let tol = smax * (self.u.nrows().max(self.cols) as f64) * f64::EPSILON;
        let mut scaled = uty;
        for (i, &s) in self.s.iter().enumerate() {
            let f = if alpha == 0.0 {
                if s > tol {
                    1.0 / s
                } else {
                    0.0
                }
            } else {
                s / (s * s + alpha)
            };
            scaled.row_mut(i).scale_mut(f);
        }
        &self.v * scaled
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: DVector<f64>,
    /// Set when `alpha = 0` met a rank-deficient design; `weights` is then the
    /// minimum-norm solution.
    pub rank_deficient: bool,
}

pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<RidgeFit> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, target has {}",
            x.nrows(),
            y.len()
        )));
    }
    let svd = RidgeSvd::new(x)?;
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let w = svd.solve(&y, alpha);
    Ok(RidgeFit {
        weights: w.column(0).into_owned(),
        rank_deficient: alpha == 0.0 && svd.rank_deficient(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            holdout: DEFAULT_HOLDOUT,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSelection {
    /// Chosen penalty per channel.
    pub alphas: Vec<f64>,
    /// Mean held-out correlation, penalties x channels.
    pub scores: DMatrix<f64>,
    /// (fold, channel) pairs whose held-out target was constant; they score 0.
    pub degenerate: usize,
}

fn columns_mean(y: &DMatrix<f64>) -> DVector<f64> {
    y.row_mean().transpose()
}

fn subtract_row(y: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = y.clone();
    for c in 0..y.ncols() {
        out.column_mut(c).add_scalar_mut(-mean[c]);
    }
    out
}

/// Pick a ridge penalty per channel by Monte Carlo cross-validation: each fold
/// holds out a seeded random `holdout` fraction of rows, and each channel keeps
/// the penalty with the highest mean held-out correlation (earliest on ties).
pub fn mc_cv_alpha(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alphas: &[f64],
    opts: CvOptions,
) -> Result<CvSelection> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    if alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidArgument("penalties must be >= 0".into()));
    }
    if !(opts.holdout > 0.0 && opts.holdout < 1.0) || opts.folds == 0 {
        return Err(Error::InvalidArgument(
            "need folds >= 1 and 0 < holdout < 1".into(),
        ));
    }
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} design rows vs {} targets",
            n,
            y.nrows()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 rows for CV".into()));
    }
    let hold = ((opts.holdout * n as f64).round() as usize).clamp(1, n - 2);
    let v = y.ncols();

    let per_fold: Vec<(DMatrix<f64>, usize)> = (0..opts.folds)
        .into_par_iter()
        .map(|fold| -> Result<(DMatrix<f64>, usize)> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &["cv-fold", &fold.to_string()]));
            let mut is_val = vec![false; n];
            for i in sample(&mut rng, n, hold) {
                is_val[i] = true;
            }
            let fit_rows: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
            let val_rows: Vec<usize> = (0..n).filter(|&i| is_val[i]).collect();
            let xf = x.select_rows(&fit_rows);
            let yf = y.select_rows(&fit_rows);
            let x_mean = columns_mean(&xf);
            let y_mean = columns_mean(&yf);
            let svd = RidgeSvd::new(&subtract_row(&xf, &x_mean))?;
            let yc = subtract_row(&yf, &y_mean);
            let xv = subtract_row(&x.select_rows(&val_rows), &x_mean);
            let yv = y.select_rows(&val_rows);

            let mut scores = DMatrix::zeros(alphas.len(), v);
            let mut degenerate = 0;
            let targets: Vec<Vec<f64>> = (0..v)
                .map(|c| yv.column(c).iter().copied().collect())
                .collect();
            for c in 0..v {
                if pearson(&targets[c], &targets[c]).is_none() {
                    degenerate += 1;
                }
            }
            for (a, &alpha) in alphas.iter().enumerate() {
                let pred = &xv * svd.solve(&yc, alpha);
                for c in 0..v {
                    let p: Vec<f64> = pred.column(c).iter().copied().collect();
                    scores[(a, c)] = pearson(&p, &targets[c]).unwrap_or(0.0);
                }
            }
            Ok((scores, degenerate))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = DMatrix::zeros(alphas.len(), v);
    let mut degenerate = 0;
    for (s, d) in &per_fold {
        total += s;
        degenerate += d;
    }
    total /= opts.folds as f64;
    let chosen = (0..v)
        .map(|c| {
            let mut best = 0;
            for a in 1..alphas.len() {
                if total[(a, c)] > total[(best, c)] {
                    best = a;
                }
            }
            alphas[best]
        })
        .collect();
    Ok(CvSelection {
        alphas: chosen,
        scores: total,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Performance {
    pub rho: Vec<f64>,
    /// Channels whose prediction or target had zero variance (rho set to 0).
    pub undefined: Vec<bool>,
}

/// Per-channel Pearson correlation between `x_test * weights (+ intercept)`
/// and the observed responses.
pub fn encoding_performance(
    weights: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    y_test: &DMatrix<f64>,
) -> Result<Performance> {
    if x_test.ncols() != weights.nrows() || y_test.ncols() != weights.ncols() {
        return Err(Error::Dimension(format!(
            "weights {}x{}, design {}x{}, targets {}x{}",
            weights.nrows(),
            weights.ncols(),
            x_test.nrows(),
            x_test.ncols(),
            y_test.nrows(),
            y_test.ncols()
        )));
    }
    if x_test.nrows() != y_test.nrows() {
        return Err(Error::Dimension(
            "test design and targets differ in rows".into(),
        ));
    }
    let pred = x_test * weights;
    let mut rho = Vec::with_capacity(weights.ncols());
    let mut undefined = Vec::with_capacity(weights.ncols());
    for c in 0..weights.ncols() {
        let p: Vec<f64> = pred.column(c).iter().copied().collect();
        let t: Vec<f64> = y_test.column(c).iter().copied().collect();
        match pearson(&p, &t) {
            Some(r) => {
                rho.push(r);
                undefined.push(false);
            }
            None => {
                rho.push(0.0);
                undefined.push(true);
            }
        }
    }
    Ok(Performance { rho, undefined })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingOptions {
    pub delays: Vec<usize>,
    pub alphas: Vec<f64>,
    pub cv: CvOptions,
}

impl Default for EncodingOptions {
    fn default() -> Self {
        Self {
            delays: DEFAULT_DELAYS.to_vec(),
            alphas: default_alphas(),
            cv: CvOptions::default(),
        }
    }
}

/// A fitted encoding model for one representation against one response set.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingResult {
    pub rep_id: String,
    pub delays: Vec<usize>,
    pub alphas: Vec<f64>,
    /// Weights over the z-scored delayed design, features x channels.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub standardizer: Standardizer,
    pub rho: Vec<f64>,
    pub undefined: Vec<bool>,
}

/// Delay-expand TR-rate features, select penalties on the training TRs, refit,
/// and score on the test TRs.
pub fn fit_encoding_model(
    rep_id: &str,
    features_tr: &DMatrix<f64>,
    responses: &ResponseDataset,
    opts: &EncodingOptions,
) -> Result<EncodingResult> {
    if features_tr.nrows() != responses.trs() {
        return Err(Error::Dimension(format!(
            "{rep_id}: {} feature TRs vs {} response TRs",
            features_tr.nrows(),
            responses.trs()
        )));
    }
    if responses.train.is_empty() || responses.test.is_empty() {
        return Err(Error::InvalidArgument(
            "need both train and test TRs".into(),
        ));
    }
    let design = delay_expand(features_tr, &opts.delays)?;
    let x_train_raw = design.x.select_rows(&responses.train);
    let standardizer = Standardizer::fit(&x_train_raw);
    let x_train = standardizer.apply(&x_train_raw);
    let x_test = standardizer.apply(&design.x.select_rows(&responses.test));
    let y_train = responses.responses.select_rows(&responses.train);
    let y_test = responses.responses.select_rows(&responses.test);

    let selection = mc_cv_alpha(&x_train, &y_train, &opts.alphas, opts.cv)?;

    let intercept = columns_mean(&y_train);
    let yc = subtract_row(&y_train, &intercept);
    let svd = RidgeSvd::new(&x_train)?;
    let mut weights = DMatrix::zeros(x_train.ncols(), y_train.ncols());
    for &alpha in &opts.alphas {
        let cols: Vec<usize> = (0..yc.ncols())
            .filter(|&c| selection.alphas[c] == alpha)
            .collect();
        if cols.is_empty() {
            continue;
        }
        let w = svd.solve(&yc.select_columns(&cols), alpha);
        for (k, &c) in cols.iter().enumerate() {
            weights.set_column(c, &w.column(k));
        }
    }
    let perf = encoding_performance(&weights, &x_test, &y_test)?;
    Ok(EncodingResult {
        rep_id: rep_id.to_string(),
        delays: opts.delays.clone(),
        alphas: selection.alphas,
        weights,
        intercept,
        standardizer,
        rho: perf.rho,
        undefined: perf.undefined,
    })
}

impl EncodingResult {
    pub fn write(&self, path: &Path) -> Result<()> {
        let (p, v) = self.weights.shape();
        let mut h = Header::new();
        h.set("kind", "encoding-result");
        h.set("rep_id", &self.rep_id);
        h.set(
            "delays",
            self.delays
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        h.set("features", p);
        h.set("channels", v);
        h.set(
            "layout",
            "alphas,rho,undefined,intercept,weights(row-major),mean,sd",
        );
        let mut payload = Vec::with_capacity(4 * v + p * v + 2 * p);
        payload.extend(&self.alphas);
        payload.extend(&self.rho);
        payload.extend(self.undefined.iter().map(|&u| if u { 1.0 } else { 0.0 }));
        payload.extend(self.intercept.iter());
        payload.extend(row_major(&self.weights));
        payload.extend(self.standardizer.mean.iter());
        payload.extend(self.standardizer.sd.iter());
        Container::new(h, Payload::F64(payload)).write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let h = &c.header;
        if h.require("kind")? != "encoding-result" {
            return Err(Error::Header(format!(
                "{}: not an encoding result",
                path.display()
            )));
        }
        let p: usize = h.parse("features")?;
        let v: usize = h.parse("channels")?;
        let data = c.payload.to_f64();
        if data.len() != 4 * v + p * v + 2 * p {
            return Err(Error::SizeMismatch(format!(
                "{}: payload length",
                path.display()
            )));
        }
        let delays = h
            .require("delays")?
            .split(',')
            .map(|d| {
                d.parse()
                    .map_err(|_| Error::Header(format!("bad delay {d:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let mut at = 0;
        let mut take = |k: usize| {
            let s = &data[at..at + k];
            at += k;
            s.to_vec()
        };
        let alphas = take(v);
        let rho = take(v);
        let undefined = take(v).into_iter().map(|u| u != 0.0).collect();
        let intercept = DVector::from_vec(take(v));
        let weights = DMatrix::from_row_slice(p, v, &take(p * v));
        let mean = DVector::from_vec(take(p));
        let sd = DVector::from_vec(take(p));
        Ok(Self {
            rep_id: h.require("rep_id")?.to_string(),
            delays,
            alphas,
            weights,
            intercept,
            standardizer: Standardizer { mean, sd },
            rho,
            undefined,
        })
    }
}
