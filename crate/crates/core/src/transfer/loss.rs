//! Training objectives and their gradients with respect to the prediction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Negative mean column-wise Pearson correlation.
    NegCorr,
    /// Squared error averaged over rows and columns.
    Mse,
}

impl Loss {
    pub fn value(self, pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64> {
        match self {
            Loss::NegCorr => neg_corr_loss(pred, target),
            Loss::Mse => mse_loss(pred, target),
        }
    }

    pub(crate) fn value_and_grad(
        self,
        pred: &DMatrix<f64>,
        target: &DMatrix<f64>,
    ) -> Result<(f64, DMatrix<f64>)> {
        match self {
            Loss::NegCorr => neg_corr_grad(pred, target),
            Loss::Mse => mse_grad(pred, target),
        }
    }
}

fn check_shapes(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Centre a column; `None` when it has (numerically) zero variance.
fn centred(col: nalgebra::DVectorView<f64>) -> Option<(Vec<f64>, f64)> {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let raw = col.norm();
    if !(norm > 1e-12 * raw) {
        return None;
    }
    Some((c, norm))
}

pub fn neg_corr_loss(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64> {
    Ok(neg_corr_grad(pred, target)?.0)
}

pub(crate) fn neg_corr_grad(
    pred: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_shapes(pred, target)?;
    if pred.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "correlation loss needs a batch of at least 2 rows".into(),
        ));
    }
    let (b, d) = pred.shape();
    let mut grad = DMatrix::zeros(b, d);
    let mut total = 0.0;
    for c in 0..d {
        let (Some((p, pn)), Some((t, tn))) = (centred(pred.column(c)), centred(target.column(c)))
        else {
            continue;
        };
        let dot: f64 = p.iter().zip(&t).map(|(x, y)| x * y).sum();
        let corr = dot / (pn * tn);
        total += corr;
        // d corr / d pred, already orthogonal to the constant vector
        for r in 0..b {
            grad[(r, c)] = -(t[r] / (pn * tn) - corr * p[r] / (pn * pn)) / d as f64;
        }
    }
    Ok((-total / d as f64, grad))
}

pub fn mse_loss(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64> {
    check_shapes(pred, target)?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok((pred - target).norm_squared() / pred.len() as f64)
}

fn mse_grad(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let value = mse_loss(pred, target)?;
    let grad = (pred - target) * (2.0 / pred.len() as f64);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 2.0, -1.0, 0.5, 0.7, -1.5, 2.0])
    }

    #[test]
    fn neg_corr_examples() {
        let t = sample();
        assert!((neg_corr_loss(&t, &t).unwrap() + 1.0).abs() < 1e-12);
        assert!((neg_corr_loss(&(-&t), &t).unwrap() - 1.0).abs() < 1e-12);
        let affine = t.map(|v| 2.0 * v + 7.0);
        assert!((neg_corr_loss(&affine, &t).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_columns_contribute_zero() {
        let t = sample();
        let mut p = t.clone();
        p.column_mut(1).fill(0.1);
        // column 0 correlates perfectly, column 1 is constant
        assert!((neg_corr_loss(&p, &t).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_row_batch_is_rejected() {
        let one = DMatrix::from_element(1, 3, 1.0);
        assert!(neg_corr_loss(&one, &one).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = sample();
        let p = DMatrix::from_row_slice(4, 2, &[0.2, 1.0, -0.3, 0.1, 1.1, -0.4, 0.0, 0.9]);
        for loss in [Loss::NegCorr, Loss::Mse] {
            let (_, g) = loss.value_and_grad(&p, &t).unwrap();
            for i in 0..p.len() {
                let h = 1e-6;
                let mut up = p.clone();
                up[i] += h;
                let mut dn = p.clone();
                dn[i] -= h;
                let fd = (loss.value(&up, &t).unwrap() - loss.value(&dn, &t).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() < 1e-7,
                    "{loss:?} entry {i}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn neg_corr_invariant_to_positive_affine(
            vals in proptest::collection::vec(-5.0f64..5.0, 12),
            tvals in proptest::collection::vec(-5.0f64..5.0, 12),
            scale in 0.1f64..10.0,
            shift in -10.0f64..10.0,
        ) {
            let p = DMatrix::from_row_slice(6, 2, &vals);
            let t = DMatrix::from_row_slice(6, 2, &tvals);
            let base = neg_corr_loss(&p, &t).unwrap();
            let moved = neg_corr_loss(&p.map(|v| scale * v + shift), &t).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
            let moved_t = neg_corr_loss(&p, &t.map(|v| scale * v - shift)).unwrap();
            prop_assert!((base - moved_t).abs() < 1e-9);
        }
    }
}
