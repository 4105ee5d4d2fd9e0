//! Pairwise decoder tournaments and the representation embedding matrix.
//!
//! For each target, every pair of decoders into it is compared row by row on
//! the held-out set; the win odds form a reciprocal matrix whose Perron vector
//! ranks the sources. Stacking those vectors gives the embedding matrix R
//! (rows = target, columns = source).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feature_store::LabeledMatrix;

pub const DEFAULT_DIAG_VALUE: f64 = 0.1;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Win odds `wins / losses` counted in half-rows (a tie is half a win for
/// each side), kept as an exact fraction so `ratio(i, j) * ratio(j, i) = 1`
/// holds without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WinRatio {
    pub wins: u64,
    pub losses: u64,
}

impl WinRatio {
    pub fn value(self) -> f64 {
        self.wins as f64 / self.losses as f64
    }

    pub fn reciprocal(self) -> Self {
        Self {
            wins: self.losses,
            losses: self.wins,
        }
    }

    /// Win share `p` of the rows.
    pub fn share(self) -> f64 {
        self.wins as f64 / (self.wins + self.losses) as f64
    }
}

/// Compare two decoders' per-row errors. The win share is clamped to
/// `[1/(2N), 1 - 1/(2N)]` so the odds stay finite.
pub fn fight(mse_i: &[f64], mse_j: &[f64]) -> Result<WinRatio> {
    if mse_i.is_empty() {
        return Err(Error::InvalidArgument(
            "fight needs at least one row".into(),
        ));
    }
    if mse_i.len() != mse_j.len() {
        return Err(Error::Dimension(format!(
            "per-row errors of length {} and {}",
            mse_i.len(),
            mse_j.len()
        )));
    }
    let mut half = 0u64;
    for (a, b) in mse_i.iter().zip(mse_j) {
        if a.is_nan() || b.is_nan() {
            return Err(Error::InvalidArgument("NaN in per-row errors".into()));
        }
        if a < b {
            half += 2;
        } else if a == b {
            half += 1;
        }
    }
    let total = 2 * mse_i.len() as u64;
    let wins = half.clamp(1, total - 1);
    Ok(WinRatio {
        wins,
        losses: total - wins,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentMatrix {
    pub target: String,
    /// `w[(i, j)]` = odds that decoder i beats decoder j.
    pub w: DMatrix<f64>,
    pub test_count: usize,
}

pub fn build_tournament(target: &str, mses: &[Vec<f64>]) -> Result<TournamentMatrix> {
    let n = mses.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "tournament for {target} needs at least two decoders"
        )));
    }
    let rows = mses[0].len();
    if let Some(bad) = mses.iter().find(|m| m.len() != rows) {
        return Err(Error::Dimension(format!(
            "tournament for {target}: per-row errors of length {rows} and {}",
            bad.len()
        )));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = fight(&mses[i], &mses[j])?;
            w[(i, j)] = r.value();
            w[(j, i)] = r.reciprocal().value();
        }
    }
    Ok(TournamentMatrix {
        target: target.to_string(),
        w,
        test_count: rows,
    })
}

impl TournamentMatrix {
    pub fn to_labeled(&self, ids: &[String]) -> LabeledMatrix {
        LabeledMatrix::new("tournament", ids.to_vec(), ids.to_vec(), self.w.clone())
            .with_extra("target", &self.target)
            .with_extra("test_count", self.test_count)
    }

    pub fn from_labeled(m: &LabeledMatrix) -> Result<Self> {
        if m.kind != "tournament" {
            return Err(Error::Header(format!(
                "expected a tournament matrix, got {}",
                m.kind
            )));
        }
        let target = m
            .extra("target")
            .ok_or_else(|| Error::Header("tournament without target".into()))?;
        let test_count = m
            .extra("test_count")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Header("tournament without test_count".into()))?;
        Ok(Self {
            target: target.to_string(),
            w: m.matrix.clone(),
            test_count,
        })
    }
}

/// Perron vector of a tournament matrix, normalised to sum to 1.
///
/// Power iteration runs on `W + cI` with `c` the mean row sum: the shift
/// leaves eigenvectors unchanged but breaks the periodicity that a plain
/// iteration hits on reciprocal matrices (for n = 2 the eigenvalues are ±λ).
pub fn ahp_weights(w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        return Err(Error::Dimension(format!(
            "tournament matrix is {}x{}",
            n,
            w.ncols()
        )));
    }
    for i in 0..n {
        if w[(i, i)] != 0.0 {
            return Err(Error::InvalidArgument(
                "tournament diagonal must be zero".into(),
            ));
        }
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "tournament entries must be finite and nonnegative".into(),
        ));
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let shift = w.sum() / n as f64;
    let mut m = w.clone();
    for i in 0..n {
        m[(i, i)] += shift;
    }
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let mut y = &m * &x;
        let s = y.sum();
        if !(s > 0.0) {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        y /= s;
        let next_change = (&y - &x).lp_norm(1);
        // Past the stopping tolerance keep going while steps still shrink,
        // so the result sits at the rounding floor rather than at the tolerance.
        if change <= POWER_TOL && next_change >= change {
            return Ok(x);
        }
        change = next_change;
        x = y;
        if change == 0.0 {
            return Ok(x);
        }
    }
    if change <= POWER_TOL {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITER,
        change,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    /// Row t holds target t's source weights.
    pub r: DMatrix<f64>,
    pub diag_value: f64,
}

/// Stack per-target weight vectors (canonical order) and overwrite each
/// target's own entry with `diag_value`. With `renormalize`, the off-target
/// entries are then rescaled so each row sums to 1.
pub fn assemble_embedding(
    ids: &[String],
    weights: &[DVector<f64>],
    diag_value: f64,
    renormalize: bool,
) -> Result<EmbeddingMatrix> {
    let n = ids.len();
    if weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} weight vectors for {n} representations",
            weights.len()
        )));
    }
    if !diag_value.is_finite() {
        return Err(Error::InvalidArgument("diag_value must be finite".into()));
    }
    let mut r = DMatrix::zeros(n, n);
    for (t, w) in weights.iter().enumerate() {
        if w.len() != n {
            return Err(Error::Dimension(format!(
                "weights for {} have length {}, expected {n}",
                ids[t],
                w.len()
            )));
        }
        r.set_row(t, &w.transpose());
        if renormalize {
            let off: f64 = (0..n).filter(|&s| s != t).map(|s| w[s]).sum();
            if off > 0.0 {
                for s in 0..n {
                    r[(t, s)] *= (1.0 - diag_value) / off;
                }
            }
        }
        r[(t, t)] = diag_value;
    }
    Ok(EmbeddingMatrix {
        ids: ids.to_vec(),
        r,
        diag_value,
    })
}

impl EmbeddingMatrix {
    pub fn to_labeled(&self) -> LabeledMatrix {
        LabeledMatrix::new(
            "embedding",
            self.ids.clone(),
            self.ids.clone(),
            self.r.clone(),
        )
        .with_extra("diag_value", self.diag_value)
        .with_extra("orientation", "rows=target,cols=source")
    }

    pub fn from_labeled(m: &LabeledMatrix) -> Result<Self> {
        if m.kind != "embedding" || m.row_ids != m.col_ids {
            return Err(Error::Header("expected a square embedding matrix".into()));
        }
        let diag_value = m
            .extra("diag_value")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Header("embedding without diag_value".into()))?;
        Ok(Self {
            ids: m.row_ids.clone(),
            r: m.matrix.clone(),
            diag_value,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows_with_wins(n: usize, wins: usize) -> (Vec<f64>, Vec<f64>) {
        let a: Vec<f64> = (0..n).map(|r| if r < wins { 0.0 } else { 1.0 }).collect();
        (a, vec![0.5; n])
    }

    #[test]
    fn three_to_one_odds() {
        let (a, b) = rows_with_wins(100, 75);
        let r = fight(&a, &b).unwrap();
        assert_eq!(r.value(), 3.0);
        assert_eq!(fight(&b, &a).unwrap(), r.reciprocal());
    }

    #[test]
    fn ties_give_even_odds() {
        let a = vec![0.3; 10];
        assert_eq!(fight(&a, &a).unwrap().value(), 1.0);
    }

    #[test]
    fn clean_sweep_is_clamped() {
        let (a, b) = rows_with_wins(100, 100);
        let r = fight(&a, &b).unwrap();
        assert_eq!(r.share(), 199.0 / 200.0);
        assert_eq!(r.value(), 199.0);
        assert!(fight(&[], &[]).is_err());
        assert!(fight(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn worked_two_decoder_tournament() {
        let (a, b) = rows_with_wins(100, 75);
        let t = build_tournament("t", &[a, b]).unwrap();
        assert_eq!(
            t.w,
            DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 1.0 / 3.0, 0.0])
        );
        let w = ahp_weights(&t.w).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_decoders_tie_everywhere() {
        let m = vec![vec![0.1, 0.2, 0.3]; 4];
        let t = build_tournament("t", &m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(t.w[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
        let w = ahp_weights(&t.w).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn strict_dominance_saturates() {
        let rows = 20;
        let a = vec![0.1; rows];
        let b = vec![0.2; rows];
        let c = vec![0.3; rows];
        let t = build_tournament("t", &[a, b, c]).unwrap();
        let max = (2.0 * rows as f64 - 1.0) / 1.0;
        assert_eq!((t.w[(0, 1)], t.w[(0, 2)], t.w[(1, 2)]), (max, max, max));
        let w = ahp_weights(&t.w).unwrap();
        assert!(w[0] > w[1] && w[1] > w[2]);
    }

    #[test]
    fn rejects_bad_tournaments() {
        assert!(build_tournament("t", &[vec![1.0]]).is_err());
        assert!(build_tournament("t", &[vec![1.0], vec![1.0, 2.0]]).is_err());
        let mut w = DMatrix::from_element(2, 2, 1.0);
        assert!(ahp_weights(&w).is_err());
        w[(0, 0)] = 0.0;
        w[(1, 1)] = 0.0;
        w[(0, 1)] = f64::NAN;
        assert!(ahp_weights(&w).is_err());
    }

    #[test]
    fn embedding_substitutes_diagonal() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let ws = vec![
            DVector::from_vec(vec![0.75, 0.25]),
            DVector::from_vec(vec![0.4, 0.6]),
        ];
        let e = assemble_embedding(&ids, &ws, 0.1, false).unwrap();
        assert_eq!(e.r, DMatrix::from_row_slice(2, 2, &[0.1, 0.25, 0.4, 0.1]));
        let norm = assemble_embedding(&ids, &ws, 0.1, true).unwrap();
        assert!((norm.r.row(0).sum() - 1.0).abs() < 1e-12);
        assert!(assemble_embedding(&ids, &ws[..1], 0.1, false).is_err());
    }

    #[test]
    fn permutation_commutes_with_assembly() {
        // source wins depend on fixed per-row error patterns
        let n = 4;
        let rows = 30;
        let err = |s: usize, t: usize, r: usize| (((s * 31 + t * 17 + r * 7) % 23) as f64) / 23.0;
        let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let embed = |order: &[usize]| {
            let ws: Vec<DVector<f64>> = order
                .iter()
                .map(|&t| {
                    let mses: Vec<Vec<f64>> = order
                        .iter()
                        .map(|&s| (0..rows).map(|r| err(s, t, r)).collect())
                        .collect();
                    ahp_weights(&build_tournament(&ids[t], &mses).unwrap().w).unwrap()
                })
                .collect();
            let names: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
            assemble_embedding(&names, &ws, 0.1, false).unwrap().r
        };
        let base = embed(&[0, 1, 2, 3]);
        let perm = [2, 0, 3, 1];
        let moved = embed(&perm);
        for i in 0..n {
            for j in 0..n {
                assert!((moved[(i, j)] - base[(perm[i], perm[j])]).abs() < 1e-12);
            }
        }
    }

    fn mse_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..6, 1usize..40).prop_flat_map(|(n, rows)| {
            proptest::collection::vec(proptest::collection::vec(0u8..6, rows), n).prop_map(|v| {
                v.into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn fights_are_reciprocal(a in proptest::collection::vec(0u8..4, 1..50), seed in 0u64..1000) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = a.iter().enumerate().map(|(i, _)| ((i as u64 * 7 + seed) % 4) as f64).collect();
            let ij = fight(&a, &b).unwrap();
            let ji = fight(&b, &a).unwrap();
            prop_assert_eq!(ij.wins * ji.wins, ij.losses * ji.losses);
        }

        #[test]
        fn weights_positive_and_normalised(mses in mse_sets(), scale in 0.01f64..100.0) {
            let t = build_tournament("t", &mses).unwrap();
            let w = ahp_weights(&t.w).unwrap();
            prop_assert!(w.iter().all(|v| *v > 0.0));
            prop_assert!((w.sum() - 1.0).abs() < 1e-12);
            let scaled = ahp_weights(&(&t.w * scale)).unwrap();
            prop_assert!((&scaled - &w).amax() < 1e-8);
            let order = |v: &DVector<f64>| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
                idx
            };
            // ties in the vector may swap; compare values along the orders
            let (oa, ob) = (order(&w), order(&scaled));
            for (x, y) in oa.iter().zip(&ob) {
                prop_assert!((w[*x] - w[*y]).abs() < 1e-8);
            }
        }
    }
}
