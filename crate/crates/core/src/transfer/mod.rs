//! Bottleneck encoders from the universal representation, and decoders from
//! each encoder's latent space to every target representation.
//!
//! An encoder for target `t` is a two-layer linear network `U -> latent -> t`
//! trained on negative correlation; its second half is then discarded. The
//! decoders are single affine layers trained on squared error, one for each
//! (source latent, target) pair including the self pair.

mod loss;
mod net;
pub mod search;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use loss::{mse_loss, neg_corr_loss, Loss};
pub use net::TrainReport;

use crate::error::{Error, Result};
use crate::feature_store::{
    row_major, split, validate_id, AlignedDataset, Container, FeatureBundle, Header, Payload,
    TokenCorpus,
};
use crate::seed::{derive_seed, sha256_hex};
use net::{add_bias, LinearNet, SgdOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Encoder,
    Decoder,
}

impl MapKind {
    fn as_str(self) -> &'static str {
        match self {
            MapKind::Encoder => "encoder",
            MapKind::Decoder => "decoder",
        }
    }
}

/// What happens to a trained encoder before its latent space is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderFinish {
    /// Keep the first layer exactly as trained.
    Raw,
    /// Reduce the latent space to the directions the trained composition
    /// actually uses, whitened over the training rows.
    Compact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub max_batches: usize,
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub encoder_finish: EncoderFinish,
    /// Relative singular-value cutoff used by [`EncoderFinish::Compact`].
    pub compaction_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 20,
            batch_size: 1024,
            lr_encoder: 1e-4,
            lr_decoder: 2e-5,
            max_batches: 1000,
            patience: 1,
            seed: 0,
            validation_fraction: 0.1,
            encoder_finish: EncoderFinish::Compact,
            compaction_tol: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim as f64),
            ("batch_size", self.batch_size as f64),
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
            ("max_batches", self.max_batches as f64),
            ("patience", self.patience as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "validation_fraction must be in (0, 1)".into(),
            ));
        }
        if !(self.compaction_tol > 0.0 && self.compaction_tol < 1.0) {
            return Err(Error::InvalidArgument(
                "compaction_tol must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        sha256_hex(text.as_bytes())
    }
}

/// Affine map `x -> x W + b` with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub kind: MapKind,
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub source: String,
    pub target: String,
    pub config_hash: String,
}

impl LinearMap {
    pub fn d_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.d_out() {
            return Err(Error::Dimension(format!(
                "bias of length {} for {} outputs",
                self.bias.len(),
                self.d_out()
            )));
        }
        if self
            .weights
            .iter()
            .chain(self.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation(format!(
                "{} {}->{} has non-finite entries",
                self.kind.as_str(),
                self.source,
                self.target
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d_in() {
            return Err(Error::Dimension(format!(
                "{} {}->{} expects {} inputs, got {}",
                self.kind.as_str(),
                self.source,
                self.target,
                self.d_in(),
                x.ncols()
            )));
        }
        Ok(add_bias(x * &self.weights, &self.bias))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        validate_id(&self.source)?;
        validate_id(&self.target)?;
        let mut h = Header::new();
        h.set("kind", "linear-map");
        h.set("map_kind", self.kind.as_str());
        h.set("d_in", self.d_in());
        h.set("d_out", self.d_out());
        h.set("source", &self.source);
        h.set("target", &self.target);
        h.set("config_hash", &self.config_hash);
        h.set("layout", "weights row-major, then bias");
        let mut payload = row_major(&self.weights);
        payload.extend(self.bias.iter());
        Container::new(h, Payload::F64(payload)).write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let h = &c.header;
        if h.require("kind")? != "linear-map" {
            return Err(Error::Header(format!(
                "{}: not a linear map",
                path.display()
            )));
        }
        let kind = match h.require("map_kind")? {
            "encoder" => MapKind::Encoder,
            "decoder" => MapKind::Decoder,
            other => return Err(Error::Header(format!("unknown map kind {other:?}"))),
        };
        let d_in: usize = h.parse("d_in")?;
        let d_out: usize = h.parse("d_out")?;
        let data = c.payload.to_f64();
        if data.len() != d_in * d_out + d_out {
            return Err(Error::SizeMismatch(format!(
                "{}: {} values for a {d_in}x{d_out} map",
                path.display(),
                data.len()
            )));
        }
        let map = Self {
            kind,
            weights: DMatrix::from_row_slice(d_in, d_out, &data[..d_in * d_out]),
            bias: DVector::from_column_slice(&data[d_in * d_out..]),
            source: h.require("source")?.to_string(),
            target: h.require("target")?.to_string(),
            config_hash: h.require("config_hash")?.to_string(),
        };
        map.validate()?;
        Ok(map)
    }
}

/// Universal-representation rows pushed through one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub rep_id: String,
    pub values: DMatrix<f64>,
}

pub fn encode(encoder: &LinearMap, universal: &FeatureBundle) -> Result<LatentDataset> {
    if encoder.kind != MapKind::Encoder {
        return Err(Error::InvalidArgument(format!(
            "{}->{} is not an encoder",
            encoder.source, encoder.target
        )));
    }
    Ok(LatentDataset {
        rep_id: encoder.target.clone(),
        values: encoder.apply(&universal.matrix())?,
    })
}

/// Per-row squared error averaged over target dims.
pub fn decoder_sample_mse(
    decoder: &LinearMap,
    latent_rows: &DMatrix<f64>,
    target_rows: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let pred = decoder.apply(latent_rows)?;
    if pred.shape() != target_rows.shape() {
        return Err(Error::Dimension(format!(
            "decoder output {:?} vs target rows {:?}",
            pred.shape(),
            target_rows.shape()
        )));
    }
    let d = pred.ncols() as f64;
    Ok((0..pred.nrows())
        .map(|r| (pred.row(r) - target_rows.row(r)).norm_squared() / d)
        .collect())
}

/// Training rows divided into rows used for gradient steps and rows used for
/// early stopping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitSplit {
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
}

/// Hold out the last `fraction` of the training rows for validation. When a
/// story boundary gives a held-out share between half and twice the requested
/// one, the split snaps to the nearest such boundary.
pub fn fit_split(corpus: &TokenCorpus, fraction: f64) -> Result<FitSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "validation fraction must be in (0, 1)".into(),
        ));
    }
    let train = split(corpus)?.train;
    let n = train.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("only {n} training rows")));
    }
    let wanted = ((fraction * n as f64).ceil() as usize).clamp(2, n - 2);
    let mut best = wanted;
    let mut best_gap = usize::MAX;
    let mut tail = 0;
    for (story, range) in corpus.stories().iter().zip(corpus.ranges()).rev() {
        if story.role != crate::feature_store::Role::Train {
            continue;
        }
        tail += range.len();
        if tail * 2 >= wanted && tail <= wanted * 2 && tail <= n - 2 && tail >= 2 {
            let gap = tail.abs_diff(wanted);
            if gap < best_gap {
                best_gap = gap;
                best = tail;
            }
        }
    }
    Ok(FitSplit {
        fit: train[..n - best].to_vec(),
        val: train[n - best..].to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct EncoderFit {
    pub encoder: LinearMap,
    /// Second half of the bottleneck network, kept only for diagnostics.
    pub throwaway_decoder: LinearMap,
    pub report: TrainReport,
    /// Latent directions in use after finishing.
    pub rank: usize,
}

fn symmetric_power(cov: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let tol = max * 1e-10;
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&v| if v > tol { v.powf(power) } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&scaled) * eig.eigenvectors.transpose()
}

/// Replace a trained bottleneck `U W1 W2` by a whitened basis of the
/// directions of U its composition uses. Directions whose singular value
/// (in the whitened input metric) falls below `tol * max` are dropped, so
/// latent coordinates carry no leftover random-initialisation signal.
fn compact(
    net: &LinearNet,
    u_train: &DMatrix<f64>,
    latent_dim: usize,
    tol: f64,
) -> Result<(
    DMatrix<f64>,
    DVector<f64>,
    DMatrix<f64>,
    DVector<f64>,
    usize,
)> {
    let (l1, l2) = (&net.layers[0], &net.layers[1]);
    let comp = &l1.w * &l2.w;
    let comp_bias = l2.w.transpose() * &l1.b + &l2.b;
    let n = u_train.nrows() as f64;
    let mu = u_train.row_mean().transpose();
    let mut centred = u_train.clone();
    for c in 0..centred.ncols() {
        centred.column_mut(c).add_scalar_mut(-mu[c]);
    }
    let cov = centred.transpose() * &centred / n;
    let half = symmetric_power(&cov, 0.5);
    let inv_half = symmetric_power(&cov, -0.5);
    let svd = (&half * &comp).svd(true, true);
    let (p, q) = (svd.u.unwrap(), svd.v_t.unwrap().transpose());
    let s = svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(Error::Numerical(
            "trained encoder composition is zero".into(),
        ));
    }
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > tol * smax).collect();
    let r = keep.len().min(latent_dim);
    let d_u = u_train.ncols();
    let d_t = comp.ncols();
    let mut w_e = DMatrix::zeros(d_u, latent_dim);
    let mut w_d = DMatrix::zeros(latent_dim, d_t);
    for (slot, &i) in keep.iter().take(r).enumerate() {
        w_e.set_column(slot, &(&inv_half * p.column(i)));
        w_d.set_row(slot, &(q.column(i).transpose() * s[i]));
    }
    let b_e = -(w_e.transpose() * &mu);
    let b_d = comp.transpose() * &mu + comp_bias;
    Ok((w_e, b_e, w_d, b_d, r))
}

/// Train the bottleneck network mapping the universal representation to
/// `target_id` and keep its first half as the encoder.
pub fn train_encoder(
    dataset: &AlignedDataset,
    target_id: &str,
    cfg: &TrainConfig,
) -> Result<EncoderFit> {
    cfg.validate()?;
    let target = dataset.bundle(target_id)?;
    let universal = dataset.universal();
    let fs = fit_split(&dataset.corpus, cfg.validation_fraction)?;
    let u_fit = universal.rows_matrix(&fs.fit);
    let u_val = universal.rows_matrix(&fs.val);
    let t_fit = target.rows_matrix(&fs.fit);
    let t_val = target.rows_matrix(&fs.val);
    let seed = derive_seed(cfg.seed, &["encoder", target_id]);
    let mut net = LinearNet::init(&[universal.dim(), cfg.latent_dim, target.dim()], seed);
    let report = net::train(
        &mut net,
        (&u_fit, &t_fit),
        (&u_val, &t_val),
        Loss::NegCorr,
        SgdOptions {
            lr: cfg.lr_encoder,
            batch_size: cfg.batch_size,
            max_batches: cfg.max_batches,
            patience: cfg.patience,
            seed,
        },
        &format!("encoder for {target_id}"),
    )?;
    let (w_e, b_e, w_d, b_d, rank) = match cfg.encoder_finish {
        EncoderFinish::Raw => {
            let (l1, l2) = (&net.layers[0], &net.layers[1]);
            (
                l1.w.clone(),
                l1.b.clone(),
                l2.w.clone(),
                l2.b.clone(),
                cfg.latent_dim,
            )
        }
        EncoderFinish::Compact => {
            let mut all = fs.fit.clone();
            all.extend(&fs.val);
            compact(
                &net,
                &universal.rows_matrix(&all),
                cfg.latent_dim,
                cfg.compaction_tol,
            )?
        }
    };
    let hash = cfg.hash();
    let encoder = LinearMap {
        kind: MapKind::Encoder,
        weights: w_e,
        bias: b_e,
        source: dataset.universal_id.clone(),
        target: target_id.to_string(),
        config_hash: hash.clone(),
    };
    let throwaway_decoder = LinearMap {
        kind: MapKind::Decoder,
        weights: w_d,
        bias: b_d,
        source: target_id.to_string(),
        target: target_id.to_string(),
        config_hash: hash,
    };
    encoder.validate()?;
    throwaway_decoder.validate()?;
    Ok(EncoderFit {
        encoder,
        throwaway_decoder,
        report,
        rank,
    })
}

#[derive(Debug, Clone)]
pub struct DecoderFit {
    pub decoder: LinearMap,
    pub report: TrainReport,
}

/// Train the affine decoder from one latent space to one target
/// representation with squared error.
pub fn train_decoder(
    latent: &LatentDataset,
    target: &FeatureBundle,
    rows: &FitSplit,
    cfg: &TrainConfig,
) -> Result<DecoderFit> {
    cfg.validate()?;
    if latent.values.nrows() != target.token_count {
        return Err(Error::Alignment(format!(
            "latent {} has {} rows, target {} has {}",
            latent.rep_id,
            latent.values.nrows(),
            target.id(),
            target.token_count
        )));
    }
    let seed = derive_seed(cfg.seed, &["decoder", &latent.rep_id, target.id()]);
    let l_fit = latent.values.select_rows(&rows.fit);
    let l_val = latent.values.select_rows(&rows.val);
    let t_fit = target.rows_matrix(&rows.fit);
    let t_val = target.rows_matrix(&rows.val);
    let mut net = LinearNet::init(&[latent.values.ncols(), target.dim()], seed);
    let report = net::train(
        &mut net,
        (&l_fit, &t_fit),
        (&l_val, &t_val),
        Loss::Mse,
        SgdOptions {
            lr: cfg.lr_decoder,
            batch_size: cfg.batch_size,
            max_batches: cfg.max_batches,
            patience: cfg.patience,
            seed,
        },
        &format!("decoder {}->{}", latent.rep_id, target.id()),
    )?;
    let layer = net.layers.remove(0);
    let decoder = LinearMap {
        kind: MapKind::Decoder,
        weights: layer.w,
        bias: layer.b,
        source: latent.rep_id.clone(),
        target: target.id().to_string(),
        config_hash: cfg.hash(),
    };
    decoder.validate()?;
    Ok(DecoderFit { decoder, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{align, RepresentationSpec};
    use crate::synthgen::{gen_nested_reps, regular_corpus, NestedFamilySpec, NestedRep};

    fn map(weights: DMatrix<f64>, bias: Vec<f64>, kind: MapKind) -> LinearMap {
        LinearMap {
            kind,
            weights,
            bias: DVector::from_vec(bias),
            source: "u".into(),
            target: "t".into(),
            config_hash: "h".into(),
        }
    }

    #[test]
    fn null_and_identity_encoders() {
        let u = FeatureBundle::from_matrix(
            RepresentationSpec::new("u", 3),
            &DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64),
        )
        .unwrap();
        let zero = map(DMatrix::zeros(3, 20), vec![0.0; 20], MapKind::Encoder);
        let l = encode(&zero, &u).unwrap();
        assert_eq!(l.values.shape(), (5, 20));
        assert!(l.values.iter().all(|v| *v == 0.0));
        let ident = map(DMatrix::identity(3, 3), vec![0.0; 3], MapKind::Encoder);
        assert_eq!(encode(&ident, &u).unwrap().values, u.matrix());
        let dec = map(DMatrix::identity(3, 3), vec![0.0; 3], MapKind::Decoder);
        assert!(encode(&dec, &u).is_err());
        let wrong = map(DMatrix::zeros(4, 20), vec![0.0; 20], MapKind::Encoder);
        assert!(matches!(encode(&wrong, &u), Err(Error::Dimension(_))));
    }

    #[test]
    fn sample_mse_examples() {
        let dec = map(DMatrix::identity(2, 2), vec![0.0, 0.0], MapKind::Decoder);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        assert_eq!(decoder_sample_mse(&dec, &x, &x).unwrap(), vec![0.0; 3]);
        let off = x.map(|v| v + 1.0);
        assert_eq!(decoder_sample_mse(&dec, &x, &off).unwrap(), vec![1.0; 3]);

        let w = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 0.8, 2.0, 0.1, -0.5]);
        let b = vec![0.1, 0.2, -0.3];
        let dec = map(w.clone(), b.clone(), MapKind::Decoder);
        let target =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5, 2.0, -2.0, 1.0]);
        let got = decoder_sample_mse(&dec, &x, &target).unwrap();
        for r in 0..3 {
            let mut acc = 0.0;
            for c in 0..3 {
                let mut p = b[c];
                for k in 0..2 {
                    p += x[(r, k)] * w[(k, c)];
                }
                acc += (p - target[(r, c)]).powi(2);
            }
            assert!((got[r] - acc / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fbn");
        let m = map(
            DMatrix::from_fn(3, 2, |r, c| r as f64 - c as f64 * 0.5),
            vec![0.25, -1.0],
            MapKind::Decoder,
        );
        m.write(&p).unwrap();
        assert_eq!(LinearMap::read(&p).unwrap(), m);
    }

    #[test]
    fn validation_split_snaps_to_story_boundary() {
        let c = regular_corpus(&[500, 400, 100, 300], &[3], 0.5).unwrap();
        let s = fit_split(&c, 0.1).unwrap();
        assert_eq!(s.val, (900..1000).collect::<Vec<_>>());
        let c = regular_corpus(&[1000], &[], 0.5).unwrap();
        let mut stories = c.stories().to_vec();
        stories.push(crate::feature_store::Story::new(
            "t",
            crate::feature_store::Role::Test,
            10,
        ));
        let c = TokenCorpus::new(stories).unwrap();
        let s = fit_split(&c, 0.1).unwrap();
        assert_eq!((s.fit.len(), s.val.len()), (900, 100));
    }

    fn family_dataset(visible: &[usize], tokens: usize) -> (AlignedDataset, NestedFamilySpec) {
        let k = *visible.iter().max().unwrap();
        let spec = NestedFamilySpec {
            seed: 4,
            latent_dim: k,
            token_count: tokens,
            reps: visible
                .iter()
                .enumerate()
                .map(|(i, &v)| NestedRep::new(format!("r{i}"), v, v + 2, 0.0))
                .collect(),
        };
        let bundles = gen_nested_reps(&spec).unwrap();
        let universal = spec.reps[visible.iter().position(|&v| v == k).unwrap()]
            .id
            .clone();
        let story = tokens / 5;
        let corpus = regular_corpus(&[story; 5], &[4], 0.5).unwrap();
        (align(corpus, bundles, &universal).unwrap(), spec)
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            latent_dim: 10,
            batch_size: 256,
            lr_encoder: 0.5,
            lr_decoder: 0.5,
            max_batches: 600,
            patience: 50,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn copy_of_universal_is_learned() {
        let (ds, _) = family_dataset(&[3, 3], 2000);
        let cfg = quick_config();
        let fit = train_encoder(&ds, "r1", &cfg).unwrap();
        let split = split(&ds.corpus).unwrap();
        let u = ds.universal().rows_matrix(&split.test);
        let t = ds.bundle("r1").unwrap().rows_matrix(&split.test);
        let pred = fit
            .throwaway_decoder
            .apply(&fit.encoder.apply(&u).unwrap())
            .unwrap();
        for c in 0..t.ncols() {
            let p: Vec<f64> = pred.column(c).iter().copied().collect();
            let q: Vec<f64> = t.column(c).iter().copied().collect();
            assert!(crate::stats::pearson(&p, &q).unwrap() >= 0.99);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, _) = family_dataset(&[2, 4], 1000);
        let cfg = TrainConfig {
            max_batches: 50,
            ..quick_config()
        };
        let a = train_encoder(&ds, "r0", &cfg).unwrap();
        let b = train_encoder(&ds, "r0", &cfg).unwrap();
        assert_eq!(a.encoder, b.encoder);
        let rows = fit_split(&ds.corpus, cfg.validation_fraction).unwrap();
        let lat = encode(&a.encoder, ds.universal()).unwrap();
        let t = ds.bundle("r1").unwrap();
        assert_eq!(
            train_decoder(&lat, t, &rows, &cfg).unwrap().decoder,
            train_decoder(&lat, t, &rows, &cfg).unwrap().decoder
        );
    }

    #[test]
    fn decoder_approaches_closed_form_least_squares() {
        let (ds, _) = family_dataset(&[2, 4], 2000);
        let cfg = quick_config();
        let enc = train_encoder(&ds, "r1", &cfg).unwrap();
        let lat = encode(&enc.encoder, ds.universal()).unwrap();
        let rows = fit_split(&ds.corpus, cfg.validation_fraction).unwrap();
        let target = ds.bundle("r0").unwrap();
        let dec = train_decoder(&lat, target, &rows, &cfg).unwrap().decoder;
        let test = split(&ds.corpus).unwrap().test;
        let mse = decoder_sample_mse(
            &dec,
            &lat.values.select_rows(&test),
            &target.rows_matrix(&test),
        )
        .unwrap();
        let trained = crate::stats::mean(&mse);
        assert!(trained <= 1e-3, "held-out MSE {trained}");
    }

    #[test]
    fn zero_target_gives_vanishing_decoder() {
        let (ds, spec) = family_dataset(&[2, 2], 1000);
        let lat = LatentDataset {
            rep_id: "x".into(),
            values: spec.latents(),
        };
        let zero =
            FeatureBundle::from_matrix(RepresentationSpec::new("z", 3), &DMatrix::zeros(1000, 3))
                .unwrap();
        let rows = fit_split(&ds.corpus, 0.1).unwrap();
        let cfg = TrainConfig {
            max_batches: 2000,
            patience: 2000,
            ..quick_config()
        };
        let dec = train_decoder(&lat, &zero, &rows, &cfg).unwrap().decoder;
        assert!(dec
            .weights
            .iter()
            .chain(dec.bias.iter())
            .all(|v| v.abs() < 1e-6));
        let mse = decoder_sample_mse(&dec, &lat.values, &zero.matrix()).unwrap();
        assert!(mse.iter().all(|v| *v < 1e-12));
    }

    #[test]
    fn small_encoder_discards_unseen_latents() {
        // probe the unseen latent coordinates from the k=2 encoder's latents
        let (ds, spec) = family_dataset(&[2, 4], 2000);
        let fit = train_encoder(&ds, "r0", &quick_config()).unwrap();
        assert_eq!(fit.rank, 2);
        let lat = encode(&fit.encoder, ds.universal()).unwrap().values;
        let z = spec.latents();
        let s = split(&ds.corpus).unwrap();
        let probe_r2 = |x: &DMatrix<f64>| {
            let xtr = x.select_rows(&s.train);
            let xte = x.select_rows(&s.test);
            let ridge = crate::encoding::RidgeSvd::new(&xtr).unwrap();
            let y = z.columns(2, 2).into_owned();
            let w = ridge.solve(&y.select_rows(&s.train), 1e-6);
            let resid = &y.select_rows(&s.test) - xte * w;
            1.0 - resid.norm_squared() / y.select_rows(&s.test).norm_squared()
        };
        let seen = probe_r2(&lat);
        let mut shuffled = lat.clone();
        let n = shuffled.nrows();
        for r in 0..n {
            shuffled.swap_rows(r, (r * 7919 + 13) % n);
        }
        let chance = probe_r2(&shuffled);
        assert!(
            seen < chance + 0.01,
            "probe R^2 {seen} vs shuffled {chance}"
        );
    }
}
