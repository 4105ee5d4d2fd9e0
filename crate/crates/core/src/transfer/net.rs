//! Stacked affine layers trained with plain mini-batch SGD.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::Loss;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub(crate) fn add_bias(mut m: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for c in 0..m.ncols() {
        m.column_mut(c).add_scalar_mut(b[c]);
    }
    m
}

/// Purely linear network: no activations between layers.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearNet {
    pub layers: Vec<Layer>,
}

impl LinearNet {
    /// Weights uniform in `±1/sqrt(d_in)`, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                let mut w = DMatrix::zeros(p[0], p[1]);
                for r in 0..p[0] {
                    for c in 0..p[1] {
                        w[(r, c)] = rng.random_range(-bound..=bound);
                    }
                }
                Layer {
                    w,
                    b: DVector::zeros(p[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.layers
            .iter()
            .fold(x.clone(), |h, l| add_bias(h * &l.w, &l.b))
    }

    fn step(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss, lr: f64) -> Result<f64> {
        let mut acts = vec![x.clone()];
        for l in &self.layers {
            let next = add_bias(acts.last().unwrap() * &l.w, &l.b);
            acts.push(next);
        }
        let (value, mut g) = loss.value_and_grad(acts.last().unwrap(), y)?;
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            let dw = acts[i].transpose() * &g;
            let db = g.row_sum().transpose();
            if i > 0 {
                g = &g * l.w.transpose();
            }
            l.w -= dw * lr;
            l.b.axpy(-lr, &db, 1.0);
        }
        Ok(value)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SgdOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub patience: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub batches: usize,
    /// Batch after which the kept weights were taken (0 = initial weights).
    pub best_batch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub validation_history: Vec<f64>,
}

/// Shuffled-epoch SGD with validation after every batch. Training stops after
/// `patience` evaluations without strict improvement or at `max_batches`; the
/// best weights seen are restored.
pub(crate) fn train(
    net: &mut LinearNet,
    fit: (&DMatrix<f64>, &DMatrix<f64>),
    val: (&DMatrix<f64>, &DMatrix<f64>),
    loss: Loss,
    opts: SgdOptions,
    label: &str,
) -> Result<TrainReport> {
    let (x, y) = fit;
    let n = x.nrows();
    let batch = opts.batch_size.min(n);
    if batch < 2 && loss == Loss::NegCorr {
        return Err(Error::InvalidArgument(format!(
            "{label}: too few rows to train"
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument(format!("{label}: no training rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;

    let mut best = loss.value(&net.predict(val.0), val.1)?;
    if !best.is_finite() {
        return Err(Error::Divergence(format!(
            "{label}: non-finite initial validation loss"
        )));
    }
    let mut best_net = net.clone();
    let mut report = TrainReport {
        batches: 0,
        best_batch: 0,
        best_validation_loss: best,
        stopped_early: false,
        validation_history: vec![best],
    };
    let mut stale = 0;
    for b in 1..=opts.max_batches {
        if pos + batch > n {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let idx = &order[pos..pos + batch];
        pos += batch;
        let train_loss = net.step(&x.select_rows(idx), &y.select_rows(idx), loss, opts.lr)?;
        if !train_loss.is_finite() || !net.is_finite() {
            return Err(Error::Divergence(format!(
                "{label}: loss became {train_loss} at batch {b} (lr {})",
                opts.lr
            )));
        }
        let v = loss.value(&net.predict(val.0), val.1)?;
        if !v.is_finite() {
            return Err(Error::Divergence(format!(
                "{label}: validation loss became {v} at batch {b} (lr {})",
                opts.lr
            )));
        }
        report.batches = b;
        report.validation_history.push(v);
        if v < best {
            best = v;
            best_net = net.clone();
            report.best_batch = b;
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    *net = best_net;
    report.best_validation_loss = best;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = LinearNet::init(&[9, 4, 3], 5);
        assert_eq!(a, LinearNet::init(&[9, 4, 3], 5));
        assert_ne!(a, LinearNet::init(&[9, 4, 3], 6));
        assert!(a.layers[0].w.iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(a.layers[1].w.iter().all(|v| v.abs() <= 0.5));
        assert!(a.layers.iter().all(|l| l.b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let x = DMatrix::from_fn(6, 3, |r, c| {
            ((r * 7 + c * 3) % 5) as f64 - 2.0 + 0.1 * c as f64
        });
        let y = DMatrix::from_fn(6, 2, |r, c| ((r * 2 + c) % 3) as f64 + 0.3 * r as f64);
        for loss in [Loss::Mse, Loss::NegCorr] {
            let net = LinearNet::init(&[3, 4, 2], 1);
            let lr = 1e-7;
            let mut stepped = net.clone();
            stepped.step(&x, &y, loss, lr).unwrap();
            for l in 0..2 {
                for i in 0..net.layers[l].w.len() {
                    let analytic = (net.layers[l].w[i] - stepped.layers[l].w[i]) / lr;
                    let h = 1e-6;
                    let mut up = net.clone();
                    up.layers[l].w[i] += h;
                    let mut dn = net.clone();
                    dn.layers[l].w[i] -= h;
                    let fd = (loss.value(&up.predict(&x), &y).unwrap()
                        - loss.value(&dn.predict(&x), &y).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - analytic).abs() < 1e-5,
                        "{loss:?} layer {l} entry {i}: {fd} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn diverging_rate_is_reported() {
        let x = DMatrix::from_fn(50, 2, |r, c| (r as f64 * 0.37 + c as f64).sin() * 10.0);
        let y = DMatrix::from_fn(50, 1, |r, _| r as f64);
        let mut net = LinearNet::init(&[2, 1], 0);
        let opts = SgdOptions {
            lr: 10.0,
            batch_size: 10,
            max_batches: 200,
            patience: 1000,
            seed: 0,
        };
        let err = train(&mut net, (&x, &y), (&x, &y), Loss::Mse, opts, "test").unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }
}
