//! Low-dimensional views of the embedding matrix: weighted metric MDS of its
//! rows and a principal-factor scree.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_DIMS: usize = 10;
pub const SMACOF_TOL: f64 = 1e-9;
pub const SMACOF_MAX_ITER: usize = 1000;

/// Euclidean distances between the rows of `r`.
pub fn row_distances(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let n = r.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (r.row(i) - r.row(j)).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCoords {
    pub ids: Vec<String>,
    /// `n x k`, rotated to weighted principal axes (dimension 1 first).
    pub coords: DMatrix<f64>,
    /// Weighted raw stress `sum_{i<j} w_i w_j (d_ij - |x_i - x_j|)^2`.
    pub stress: f64,
    /// Share of the weighted distance variance carried by each dimension.
    pub dim_variances: Vec<f64>,
    pub iterations: usize,
    pub stress_history: Vec<f64>,
}

fn check_distances(d: &DMatrix<f64>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Dimension(format!(
            "distance matrix is {}x{}",
            n,
            d.ncols()
        )));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "distance matrix has non-finite entries".into(),
        ));
    }
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(Error::InvalidArgument(
                "distance matrix diagonal must be zero".into(),
            ));
        }
        for j in 0..i {
            if d[(i, j)] < 0.0 || (d[(i, j)] - d[(j, i)]).abs() > 1e-12 * (1.0 + d[(i, j)].abs()) {
                return Err(Error::InvalidArgument(
                    "distance matrix must be symmetric and nonnegative".into(),
                ));
            }
        }
    }
    Ok(())
}

fn pair_weights(w: &[f64]) -> DMatrix<f64> {
    let n = w.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[i] * w[j] })
}

fn stress(d: &DMatrix<f64>, pw: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let e = (x.row(i) - x.row(j)).norm();
            s += pw[(i, j)] * (d[(i, j)] - e).powi(2);
        }
    }
    s
}

/// Classical scaling with per-point masses `p` (summing to 1): weighted
/// double centring, then the top eigenvectors of `P^1/2 B P^1/2`.
fn weighted_classical(d: &DMatrix<f64>, p: &[f64], k: usize) -> DMatrix<f64> {
    let n = d.nrows();
    let d2 = d.map(|v| v * v);
    let pv = DVector::from_column_slice(p);
    // J = I - 1 p^T
    let mut j: DMatrix<f64> = DMatrix::identity(n, n);
    for r in 0..n {
        for c in 0..n {
            j[(r, c)] -= p[c];
        }
    }
    let b: DMatrix<f64> = (&j * d2 * j.transpose()) * -0.5;
    let sq = pv.map(f64::sqrt);
    let s = DMatrix::from_fn(n, n, |r, c| sq[r] * b[(r, c)] * sq[c]);
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut x = DMatrix::zeros(n, k);
    for (dim, &idx) in order.iter().take(k).enumerate() {
        let lam = eig.eigenvalues[idx].max(0.0).sqrt();
        for r in 0..n {
            x[(r, dim)] = eig.eigenvectors[(r, idx)] * lam / sq[r];
        }
    }
    x
}

/// Weighted metric MDS by majorisation (SMACOF) from a weighted classical
/// start. Pair weights are `w_i w_j`, so a representation split into two
/// identical copies with half the weight each embeds the same way.
pub fn weighted_mds(
    ids: &[String],
    d: &DMatrix<f64>,
    weights: &[f64],
    k: usize,
) -> Result<EmbeddingCoords> {
    check_distances(d)?;
    let n = d.nrows();
    if ids.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} ids and {} weights for {n} points",
            ids.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "MDS weights must be positive".into(),
        ));
    }
    if k == 0 || k > MAX_DIMS || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            MAX_DIMS.min(n)
        )));
    }
    let total: f64 = weights.iter().sum();
    let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let pw = pair_weights(&p);

    // V+ = (V + 11^T/n)^-1 - 11^T/n
    let mut v = -pw.clone();
    for i in 0..n {
        v[(i, i)] = pw.row(i).sum();
    }
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let v_plus = (&v + &ones)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("weighted MDS normal matrix is singular".into()))?
        - &ones;

    let mut x = weighted_classical(d, &p, k);
    let mut s = stress(d, &pw, &x);
    let scale: f64 = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| pw[(i, j)] * d[(i, j)] * d[(i, j)])
        .sum();
    let mut history = vec![s];
    let mut iterations = 0;
    while iterations < SMACOF_MAX_ITER && s > 1e-30 * scale.max(1e-300) {
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let e = (x.row(i) - x.row(j)).norm();
                if e > 0.0 {
                    b[(i, j)] = -pw[(i, j)] * d[(i, j)] / e;
                }
            }
            b[(i, i)] = -b.row(i).sum();
        }
        let next = &v_plus * b * &x;
        let ns = stress(d, &pw, &next);
        iterations += 1;
        if ns > s * (1.0 + 1e-10) + 1e-14 * scale {
            return Err(Error::Numerical(format!(
                "stress increased from {s:e} to {ns:e} at iteration {iterations}"
            )));
        }
        if ns >= s {
            // a fixed point up to rounding; keep the previous configuration
            // so the recorded history never rises
            break;
        }
        history.push(ns);
        x = next;
        let rel = if s > 0.0 { (s - ns) / s } else { 0.0 };
        s = ns;
        if rel < SMACOF_TOL {
            break;
        }
    }

    // weighted centring and rotation onto principal axes
    let mean = x.transpose() * DVector::from_column_slice(&p);
    for c in 0..k {
        x.column_mut(c).add_scalar_mut(-mean[c]);
    }
    let cov: DMatrix<f64> = DMatrix::from_fn(k, k, |a, b| {
        (0..n).map(|i| p[i] * x[(i, a)] * x[(i, b)]).sum()
    });
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rot = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let coords = x * rot;
    let denom = 0.5
        * (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| p[i] * p[j] * d[(i, j)] * d[(i, j)])
            .sum::<f64>();
    let dim_variances = order
        .iter()
        .map(|&o| {
            if denom > 0.0 {
                (eig.eigenvalues[o].max(0.0) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(EmbeddingCoords {
        ids: ids.to_vec(),
        coords,
        stress: s,
        dim_variances,
        iterations,
        stress_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Positive,
}

/// Flip dimensions so the anchor's coordinates have the requested sign.
/// Returns the warnings for dimensions where the anchor sits exactly at 0.
pub fn orient(
    coords: &EmbeddingCoords,
    anchor: &str,
    sign: Sign,
) -> Result<(EmbeddingCoords, Vec<String>)> {
    let a = coords
        .ids
        .iter()
        .position(|id| id == anchor)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("anchor {anchor:?} not among the embedded ids"))
        })?;
    let mut out = coords.clone();
    let mut warnings = Vec::new();
    for c in 0..out.coords.ncols() {
        let v = out.coords[(a, c)];
        if v == 0.0 {
            let msg = format!(
                "anchor {anchor} is at 0 on dimension {}; left unflipped",
                c + 1
            );
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let flip = match sign {
            Sign::Negative => v > 0.0,
            Sign::Positive => v < 0.0,
        };
        if flip {
            out.coords.column_mut(c).neg_mut();
        }
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scree {
    /// Descending variance fractions of the leading principal factors.
    pub fractions: Vec<f64>,
    /// Set when the centred rows have zero total variance.
    pub degenerate: bool,
}

/// Variance fractions of the first `k_max` principal factors of the
/// column-centred rows of `r`.
pub fn scree(r: &DMatrix<f64>, k_max: usize) -> Result<Scree> {
    let n = r.nrows();
    if k_max > n {
        return Err(Error::InvalidArgument(format!(
            "k_max {k_max} exceeds {n} rows"
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let mut c = r.clone();
    let means = r.row_mean();
    for j in 0..c.ncols() {
        c.column_mut(j).add_scalar_mut(-means[j]);
    }
    let cov = c.transpose() * &c / n.max(1) as f64;
    let mut eig: Vec<f64> = cov
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    let scale = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(total > 1e-24 * scale * scale * r.len() as f64) {
        return Ok(Scree {
            fractions: vec![0.0; k_max],
            degenerate: true,
        });
    }
    let mut fractions: Vec<f64> = eig.iter().take(k_max).map(|v| v / total).collect();
    fractions.resize(k_max, 0.0);
    Ok(Scree {
        fractions,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn randn(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn distance_examples() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let d = row_distances(&r).unwrap();
        assert!((d[(0, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d[(0, 2)], 0.0);
        let r = randn(5, 5, 1);
        let d = row_distances(&r).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for c in 0..5 {
                    acc += (r[(i, c)] - r[(j, c)]).powi(2);
                }
                assert!((d[(i, j)] - acc.sqrt()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn collinear_points_in_one_dimension() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
        let e = weighted_mds(&ids(3), &d, &[1.0; 3], 1).unwrap();
        let x: Vec<f64> = e.coords.column(0).iter().copied().collect();
        let s = x[0].signum();
        for (got, want) in x.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got * -s - want).abs() < 1e-9, "{x:?}");
        }
        assert!(e.stress < 1e-18);
    }

    #[test]
    fn exact_euclidean_embeds_with_zero_stress() {
        let pts = randn(5, 4, 2);
        let d = row_distances(&pts).unwrap();
        let e = weighted_mds(&ids(5), &d, &[1.0, 2.0, 1.0, 0.5, 1.0], 4).unwrap();
        assert!(e.stress < 1e-8);
        assert!((e.dim_variances.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stress_never_increases() {
        let d = row_distances(&randn(12, 6, 3)).unwrap();
        let e = weighted_mds(&ids(12), &d, &[1.0; 12], 2).unwrap();
        assert!(e
            .stress_history
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
        assert!(e.iterations >= 1);
    }

    #[test]
    fn duplicated_point_with_half_weights_is_invariant() {
        let base = randn(7, 5, 4);
        let d = row_distances(&base).unwrap();
        let single = weighted_mds(&ids(7), &d, &[1.0; 7], 2).unwrap();
        let mut dup = DMatrix::zeros(8, 5);
        for r in 0..7 {
            dup.set_row(r, &base.row(r));
        }
        dup.set_row(7, &base.row(3));
        let mut w = vec![1.0; 8];
        w[3] = 0.5;
        w[7] = 0.5;
        let double = weighted_mds(&ids(8), &row_distances(&dup).unwrap(), &w, 2).unwrap();
        let emb = |c: &DMatrix<f64>, i: usize, j: usize| (c.row(i) - c.row(j)).norm();
        for i in 0..7 {
            for j in 0..7 {
                if i == 3 || j == 3 {
                    continue;
                }
                let delta = (emb(&single.coords, i, j) - emb(&double.coords, i, j)).abs();
                assert!(delta < 1e-6, "{i},{j}: {delta}");
            }
        }
    }

    #[test]
    fn orientation_examples() {
        let d = row_distances(&randn(4, 3, 5)).unwrap();
        let e = weighted_mds(&ids(4), &d, &[1.0; 4], 2).unwrap();
        let (neg, w) = orient(&e, "p1", Sign::Negative).unwrap();
        assert!(w.is_empty());
        assert!(neg.coords[(1, 0)] < 0.0 && neg.coords[(1, 1)] < 0.0);
        let (again, _) = orient(&neg, "p1", Sign::Negative).unwrap();
        assert_eq!(again, neg);
        let (pos, _) = orient(&neg, "p1", Sign::Positive).unwrap();
        assert_eq!(pos.coords.column(0), -neg.coords.column(0));
        assert!(orient(&e, "missing", Sign::Negative).is_err());

        let mut zero = e.clone();
        zero.coords[(2, 0)] = 0.0;
        let (kept, warn) = orient(&zero, "p2", Sign::Negative).unwrap();
        assert_eq!(warn.len(), 1);
        assert_eq!(kept.coords.column(0), zero.coords.column(0));
    }

    #[test]
    fn scree_examples() {
        let same = DMatrix::from_fn(4, 4, |_, c| c as f64 * 0.1);
        let s = scree(&same, 3).unwrap();
        assert!(s.degenerate && s.fractions == vec![0.0; 3]);

        let u = randn(6, 1, 6);
        let v = randn(1, 5, 7);
        let rank1 = &u * &v;
        let s = scree(&rank1, 3).unwrap();
        assert!((s.fractions[0] - 1.0).abs() < 1e-12 && s.fractions[1] < 1e-12);

        let planted = randn(10, 2, 8) * randn(2, 10, 9) + randn(10, 10, 10) * 0.01;
        let s = scree(&planted, 4).unwrap();
        assert!(s.fractions[0] + s.fractions[1] >= 0.9);
        assert!(scree(&planted, 11).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let mut d = DMatrix::zeros(3, 3);
        d[(0, 1)] = f64::NAN;
        assert!(weighted_mds(&ids(3), &d, &[1.0; 3], 2).is_err());
        let d = DMatrix::zeros(3, 3);
        assert!(weighted_mds(&ids(3), &d, &[1.0, 0.0, 1.0], 2).is_err());
        assert!(weighted_mds(&ids(3), &d, &[1.0; 3], 0).is_err());
    }

    proptest! {
        #[test]
        fn permutation_moves_points_rigidly(seed in 0u64..200, shift in 1usize..6) {
            let n = 6;
            let d = row_distances(&randn(n, 4, seed)).unwrap();
            let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64 * 0.5).collect();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let dp = DMatrix::from_fn(n, n, |i, j| d[(perm[i], perm[j])]);
            let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let a = weighted_mds(&ids(n), &d, &w, 2).unwrap();
            let b = weighted_mds(&ids(n), &dp, &wp, 2).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let ea = (a.coords.row(perm[i]) - a.coords.row(perm[j])).norm();
                    let eb = (b.coords.row(i) - b.coords.row(j)).norm();
                    prop_assert!((ea - eb).abs() < 1e-8, "{} vs {}", ea, eb);
                }
            }
        }

        #[test]
        fn scree_fractions_are_ordered(seed in 0u64..500, k in 1usize..6) {
            let r = randn(6, 6, seed);
            let s = scree(&r, k).unwrap();
            prop_assert!(s.fractions.iter().all(|f| *f >= 0.0));
            prop_assert!(s.fractions.windows(2).all(|p| p[0] >= p[1]));
            prop_assert!(s.fractions.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }
}
