//! Linking the representation embedding to encoding performance: z-scored
//! performance profiles, projection onto MDS dimension 1, leave-two-out pair
//! discriminability, majority-match rates and performance similarity.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::EmbeddingCoords;
use crate::stats::{pearson, zscore};

/// Performance of every representation on every channel for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceProfile {
    pub subject: String,
    pub ids: Vec<String>,
    pub channel_ids: Vec<String>,
    /// `n x V` test correlations.
    pub rho: DMatrix<f64>,
    /// `rho` z-scored per channel across representations.
    pub z: DMatrix<f64>,
    /// Channels whose rho was identical for all representations (z left at 0).
    pub constant: Vec<bool>,
}

pub fn perf_profile(
    subject: &str,
    ids: &[String],
    channel_ids: &[String],
    rho: &DMatrix<f64>,
) -> Result<PerformanceProfile> {
    let (n, v) = rho.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "a profile needs at least two representations".into(),
        ));
    }
    if ids.len() != n || channel_ids.len() != v {
        return Err(Error::Dimension(format!(
            "{} ids / {} channels for a {n}x{v} rho matrix",
            ids.len(),
            channel_ids.len()
        )));
    }
    if rho.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("rho has non-finite entries".into()));
    }
    let mut z = DMatrix::zeros(n, v);
    let mut constant = vec![false; v];
    for c in 0..v {
        let col: Vec<f64> = rho.column(c).iter().copied().collect();
        match zscore(&col) {
            Some(zc) => z.set_column(c, &DVector::from_vec(zc)),
            None => constant[c] = true,
        }
    }
    Ok(PerformanceProfile {
        subject: subject.to_string(),
        ids: ids.to_vec(),
        channel_ids: channel_ids.to_vec(),
        rho: rho.clone(),
        z,
        constant,
    })
}

impl PerformanceProfile {
    /// Keep only channels whose mask entry is true.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.channel_ids.len() {
            return Err(Error::Dimension(format!(
                "mask of length {} for {} channels",
                mask.len(),
                self.channel_ids.len()
            )));
        }
        let keep: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
        Ok(Self {
            subject: self.subject.clone(),
            ids: self.ids.clone(),
            channel_ids: keep.iter().map(|&c| self.channel_ids[c].clone()).collect(),
            rho: self.rho.select_columns(&keep),
            z: self.z.select_columns(&keep),
            constant: keep.iter().map(|&c| self.constant[c]).collect(),
        })
    }
}

/// Dot product of each channel's z-scored profile with the dimension-1
/// coordinates.
pub fn project_dim1(profile: &PerformanceProfile, coords: &EmbeddingCoords) -> Result<Vec<f64>> {
    if profile.ids != coords.ids {
        return Err(Error::Alignment(
            "profile and coordinates list representations in different orders".into(),
        ));
    }
    let dim1 = coords.coords.column(0);
    Ok((0..profile.z.ncols())
        .map(|c| profile.z.column(c).dot(&dim1))
        .collect())
}

/// Row `k` of R, then column `k`, each with positions `i` and `j` removed.
/// Length `2n - 4`.
pub fn pair_embedding(r: &DMatrix<f64>, k: usize, i: usize, j: usize) -> Result<Vec<f64>> {
    let n = r.nrows();
    if i == j {
        return Err(Error::InvalidArgument(
            "held-out pair needs two distinct indices".into(),
        ));
    }
    if r.ncols() != n || i >= n || j >= n || k >= n {
        return Err(Error::Dimension(format!(
            "indices ({k}; {i},{j}) for a {n}x{} matrix",
            r.ncols()
        )));
    }
    let keep = (0..n).filter(|&s| s != i && s != j);
    let mut out: Vec<f64> = keep.clone().map(|s| r[(k, s)]).collect();
    out.extend(keep.map(|s| r[(s, k)]));
    Ok(out)
}

/// Minimum-norm least-squares map (with intercept) from pair embeddings to
/// performance vectors, trained on every representation outside the pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLearner {
    pub pair: (usize, usize),
    pub coef: DMatrix<f64>,
    pub intercept: DVector<f64>,
    x_mean: DVector<f64>,
}

impl PairLearner {
    pub fn predict(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.coef.nrows() {
            return Err(Error::Dimension(format!(
                "embedding of length {}, learner expects {}",
                embedding.len(),
                self.coef.nrows()
            )));
        }
        let x = DVector::from_column_slice(embedding) - &self.x_mean;
        Ok((self.coef.transpose() * x + &self.intercept)
            .iter()
            .copied()
            .collect())
    }
}

fn pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = x.clone().svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = smax * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    let inv = DMatrix::from_diagonal(&s.map(|v| if v > tol { 1.0 / v } else { 0.0 }));
    v_t.transpose() * inv * u.transpose()
}

pub fn fit_pair_learner(
    r: &DMatrix<f64>,
    rho: &DMatrix<f64>,
    i: usize,
    j: usize,
) -> Result<PairLearner> {
    let n = r.nrows();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "pair learners need at least 4 representations, got {n}"
        )));
    }
    if rho.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} rho rows for {n} representations",
            rho.nrows()
        )));
    }
    let train: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
    let rows = train
        .iter()
        .map(|&k| pair_embedding(r, k, i, j))
        .collect::<Result<Vec<_>>>()?;
    let p = 2 * n - 4;
    let x = DMatrix::from_fn(train.len(), p, |a, b| rows[a][b]);
    let y = rho.select_rows(&train);
    let x_mean = x.row_mean().transpose();
    let y_mean = y.row_mean().transpose();
    let mut xc = x.clone();
    for c in 0..p {
        xc.column_mut(c).add_scalar_mut(-x_mean[c]);
    }
    let mut yc = y.clone();
    for c in 0..yc.ncols() {
        yc.column_mut(c).add_scalar_mut(-y_mean[c]);
    }
    let coef = pinv(&xc) * yc;
    Ok(PairLearner {
        pair: (i, j),
        coef,
        intercept: y_mean,
        x_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrimination {
    pub value: f64,
    /// At least one of the four correlations was undefined and counted as 0.
    pub undefined: bool,
}

/// `[corr(h(r_i), rho_i) + corr(h(r_j), rho_j)] - [corr(h(r_i), rho_j) + corr(h(r_j), rho_i)]`
/// with correlations across channels.
pub fn discriminability(
    learner: &PairLearner,
    r_i: &[f64],
    r_j: &[f64],
    rho_i: &[f64],
    rho_j: &[f64],
) -> Result<Discrimination> {
    let hi = learner.predict(r_i)?;
    let hj = learner.predict(r_j)?;
    if rho_i.len() != hi.len() || rho_j.len() != hi.len() {
        return Err(Error::Dimension(
            "performance vectors differ in channel count".into(),
        ));
    }
    let mut undefined = false;
    let mut corr = |a: &[f64], b: &[f64]| {
        pearson(a, b).unwrap_or_else(|| {
            undefined = true;
            0.0
        })
    };
    let value = corr(&hi, rho_i) + corr(&hj, rho_j) - corr(&hi, rho_j) - corr(&hj, rho_i);
    Ok(Discrimination { value, undefined })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminabilityMatrix {
    pub subject: String,
    pub ids: Vec<String>,
    pub m: DMatrix<f64>,
    /// Pairs where some correlation was undefined.
    pub undefined_pairs: Vec<(usize, usize)>,
}

/// Leave-two-out discriminability for every unordered pair, computed once per
/// pair and mirrored so the matrix is exactly symmetric.
pub fn discriminability_matrix(
    subject: &str,
    ids: &[String],
    r: &DMatrix<f64>,
    rho: &DMatrix<f64>,
) -> Result<DiscriminabilityMatrix> {
    let n = r.nrows();
    if ids.len() != n || r.ncols() != n || rho.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} ids, {}x{} embedding, {} rho rows",
            ids.len(),
            n,
            r.ncols(),
            rho.nrows()
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let row = |k: usize| -> Vec<f64> { rho.row(k).iter().copied().collect() };
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| {
            let learner = fit_pair_learner(r, rho, i, j)?;
            discriminability(
                &learner,
                &pair_embedding(r, i, i, j)?,
                &pair_embedding(r, j, i, j)?,
                &row(i),
                &row(j),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::zeros(n, n);
    let mut undefined_pairs = Vec::new();
    for (&(i, j), d) in pairs.iter().zip(&scores) {
        m[(i, j)] = d.value;
        m[(j, i)] = d.value;
        if d.undefined {
            undefined_pairs.push((i, j));
        }
    }
    Ok(DiscriminabilityMatrix {
        subject: subject.to_string(),
        ids: ids.to_vec(),
        m,
        undefined_pairs,
    })
}

/// For each representation, the percentage of partners with a positive score
/// in at least `threshold` subjects.
pub fn majority_match(ms: &[DMatrix<f64>], threshold: usize) -> Result<Vec<f64>> {
    let first = ms
        .first()
        .ok_or_else(|| Error::InvalidArgument("no subject matrices".into()))?;
    let n = first.nrows();
    if ms.iter().any(|m| m.shape() != (n, n)) {
        return Err(Error::Dimension("subject matrices differ in size".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two representations".into(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let hits = (0..n)
                .filter(|&j| j != i && ms.iter().filter(|m| m[(i, j)] > 0.0).count() >= threshold)
                .count();
            100.0 * hits as f64 / (n - 1) as f64
        })
        .collect())
}

/// Pearson correlation between every pair of rho rows. Rows with zero
/// variance get 0 off the diagonal and are listed.
pub fn perf_similarity(rho: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = rho.nrows();
    if rho.ncols() < 2 {
        return Err(Error::InvalidArgument(
            "similarity needs at least two channels".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|k| rho.row(k).iter().copied().collect())
        .collect();
    let constant: Vec<usize> = (0..n)
        .filter(|&k| pearson(&rows[k], &rows[k]).is_none())
        .collect();
    let mut s = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = pearson(&rows[i], &rows[j]).unwrap_or(0.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok((s, constant))
}

/// Mean of `values` within each label, labels in first-seen order.
pub fn group_mean(values: &[f64], labels: &[String]) -> Result<Vec<(String, f64)>> {
    if values.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} labels",
            values.len(),
            labels.len()
        )));
    }
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for (v, l) in values.iter().zip(labels) {
        match out.iter_mut().find(|(name, _, _)| name == l) {
            Some(slot) => {
                slot.1 += v;
                slot.2 += 1;
            }
            None => out.push((l.clone(), *v, 1)),
        }
    }
    Ok(out.into_iter().map(|(l, s, c)| (l, s / c as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn names(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn profile_zscores_columns() {
        let rho = DMatrix::from_row_slice(3, 2, &[1.0, 0.4, 2.0, 0.4, 3.0, 0.4]);
        let p = perf_profile("s", &names(3, "r"), &names(2, "v"), &rho).unwrap();
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (k, w) in want.iter().enumerate() {
            assert!((p.z[(k, 0)] - w).abs() < 1e-12);
        }
        assert_eq!(p.constant, vec![false, true]);
        assert!(p.z.column(1).iter().all(|v| *v == 0.0));

        let rho = randn(4, 6, 1);
        let p = perf_profile("s", &names(4, "r"), &names(6, "v"), &rho).unwrap();
        for c in 0..6 {
            let m = rho.column(c).sum() / 4.0;
            let sd = (rho.column(c).iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
            for k in 0..4 {
                assert!((p.z[(k, c)] - (rho[(k, c)] - m) / sd).abs() < 1e-12);
            }
        }
        assert!(perf_profile("s", &names(1, "r"), &names(6, "v"), &randn(1, 6, 2)).is_err());
    }

    fn coords_from(dim1: &[f64]) -> EmbeddingCoords {
        EmbeddingCoords {
            ids: names(dim1.len(), "r"),
            coords: DMatrix::from_column_slice(dim1.len(), 1, dim1),
            stress: 0.0,
            dim_variances: vec![1.0],
            iterations: 0,
            stress_history: vec![],
        }
    }

    #[test]
    fn projection_examples() {
        let dim1 = [-1.5, -0.5, 0.5, 1.5];
        let coords = coords_from(&dim1);
        let rho = DMatrix::from_row_slice(
            4,
            3,
            &[0.1, 0.3, 0.5, 0.2, 0.1, 0.4, 0.3, 0.1, 0.3, 0.4, 0.3, 0.2],
        );
        let p = perf_profile("s", &names(4, "r"), &names(3, "v"), &rho).unwrap();
        let proj = project_dim1(&p, &coords).unwrap();
        // column 0 is proportional to dim1, column 1 orthogonal, column 2 reversed
        let max = 2.0 * (dim1.iter().map(|x| x * x).sum::<f64>() / 4.0).sqrt() * 2.0;
        assert!((proj[0] - max).abs() < 1e-12);
        assert!(proj[1].abs() < 1e-12);
        assert!((proj[2] + max).abs() < 1e-12);
        let mut other = coords.clone();
        other.ids.swap(0, 1);
        assert!(project_dim1(&p, &other).is_err());
    }

    #[test]
    fn pair_embedding_lengths_and_order() {
        let r = DMatrix::from_fn(4, 4, |a, b| (10 * a + b) as f64);
        let e = pair_embedding(&r, 2, 0, 1).unwrap();
        assert_eq!(e, vec![22.0, 23.0, 22.0, 32.0]);
        assert_eq!(e, pair_embedding(&r, 2, 0, 1).unwrap());
        assert_eq!(
            pair_embedding(&r, 0, 0, 1).unwrap(),
            vec![2.0, 3.0, 20.0, 30.0]
        );
        let big = DMatrix::zeros(100, 100);
        assert_eq!(pair_embedding(&big, 5, 1, 2).unwrap().len(), 196);
        assert!(pair_embedding(&r, 2, 1, 1).is_err());
    }

    #[test]
    fn learner_cases() {
        let n = 8;
        let r = randn(n, n, 3);
        // rho realizable from the pair embeddings of training reps
        let g = randn(2 * n - 4, 5, 4);
        let (i, j) = (1, 4);
        let rho = DMatrix::from_fn(n, 5, |k, c| {
            let e = pair_embedding(&r, k, i, j).unwrap();
            (0..e.len()).map(|f| e[f] * g[(f, c)]).sum::<f64>() + 0.3
        });
        let l = fit_pair_learner(&r, &rho, i, j).unwrap();
        for k in (0..n).filter(|&k| k != i && k != j) {
            let pred = l.predict(&pair_embedding(&r, k, i, j).unwrap()).unwrap();
            for c in 0..5 {
                assert!((pred[c] - rho[(k, c)]).abs() < 1e-8);
            }
        }
        let flat = DMatrix::from_element(n, 1, 0.42);
        let l = fit_pair_learner(&r, &flat, 0, 1).unwrap();
        let any = vec![3.0; 2 * n - 4];
        assert!((l.predict(&any).unwrap()[0] - 0.42).abs() < 1e-12);
        assert!(fit_pair_learner(&randn(3, 3, 5), &randn(3, 2, 6), 0, 1).is_err());
    }

    #[test]
    fn learner_generalises_on_planted_map() {
        let n = 20;
        let v = 50;
        let r = randn(n, n, 7);
        let g = randn(2 * n, v, 8);
        let noise = randn(n, v, 9) * 0.01;
        let full = |k: usize| -> Vec<f64> {
            let mut e: Vec<f64> = r.row(k).iter().copied().collect();
            e.extend(r.column(k).iter().copied());
            e
        };
        let rho = DMatrix::from_fn(n, v, |k, c| {
            let e = full(k);
            (0..2 * n).map(|f| e[f] * g[(f, c)]).sum::<f64>() / (2.0 * n as f64).sqrt()
                + noise[(k, c)]
        });
        let m = discriminability_matrix("s", &names(n, "r"), &r, &rho)
            .unwrap()
            .m;
        let positive = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| m[(i, j)] > 0.0)
            .count();
        assert!(
            positive as f64 >= 0.95 * (n * (n - 1) / 2) as f64,
            "{positive}"
        );
    }

    #[test]
    fn discriminability_examples() {
        let n = 6;
        let r = randn(n, n, 10);
        // a learner that maps r_i and r_j onto orthogonal targets
        let rho_i = vec![1.0, -1.0, 1.0, -1.0];
        let rho_j = vec![1.0, 1.0, -1.0, -1.0];
        let ei = pair_embedding(&r, 0, 0, 1).unwrap();
        let ej = pair_embedding(&r, 1, 0, 1).unwrap();
        let x = DMatrix::from_fn(2, ei.len(), |a, b| if a == 0 { ei[b] } else { ej[b] });
        let y = DMatrix::from_fn(2, 4, |a, b| if a == 0 { rho_i[b] } else { rho_j[b] });
        let learner = PairLearner {
            pair: (0, 1),
            coef: pinv(&x) * y,
            intercept: DVector::zeros(4),
            x_mean: DVector::zeros(ei.len()),
        };
        let d = discriminability(&learner, &ei, &ej, &rho_i, &rho_j).unwrap();
        assert!((d.value - 2.0).abs() < 1e-9 && !d.undefined);
        let same = discriminability(&learner, &ei, &ej, &rho_i, &rho_i).unwrap();
        assert!(same.value.abs() < 1e-12);
        let swapped = discriminability(&learner, &ej, &ei, &rho_j, &rho_i).unwrap();
        assert_eq!(swapped.value, d.value);
        let flat = discriminability(&learner, &ei, &ej, &[0.5; 4], &rho_j).unwrap();
        assert!(flat.undefined);
    }

    #[test]
    fn matrix_is_symmetric() {
        let n = 7;
        let r = randn(n, n, 11);
        let rho = randn(n, 30, 12);
        let m = discriminability_matrix("s", &names(n, "r"), &r, &rho)
            .unwrap()
            .m;
        assert_eq!(m, m.transpose());
        assert!((0..n).all(|i| m[(i, i)] == 0.0));
    }

    #[test]
    fn majority_examples() {
        let all = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(
            majority_match(&vec![all.clone(); 5], 3).unwrap(),
            vec![100.0; 4]
        );
        let half = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -1.0, 1.0, 0.0, 1.0, -1.0, 1.0, 0.0]);
        assert_eq!(majority_match(&[half], 1).unwrap()[0], 50.0);
        // planted pattern: pair (0,1) positive in 3 subjects, (0,2) in 2, (1,2) in 5
        let subject = |s: usize| {
            let mut m = DMatrix::zeros(3, 3);
            let set = |m: &mut DMatrix<f64>, a: usize, b: usize, v: f64| {
                m[(a, b)] = v;
                m[(b, a)] = v;
            };
            set(&mut m, 0, 1, if s < 3 { 0.2 } else { -0.1 });
            set(&mut m, 0, 2, if s < 2 { 0.2 } else { -0.1 });
            set(&mut m, 1, 2, 0.3);
            m
        };
        let ms: Vec<_> = (0..5).map(subject).collect();
        assert_eq!(majority_match(&ms, 3).unwrap(), vec![50.0, 100.0, 50.0]);
        assert!(majority_match(&[all, DMatrix::zeros(3, 3)], 1).is_err());
    }

    #[test]
    fn similarity_examples() {
        let rho = randn(3, 50, 13);
        let (s, flagged) = perf_similarity(&rho).unwrap();
        assert!(flagged.is_empty());
        for i in 0..3 {
            for j in 0..3 {
                let a: Vec<f64> = rho.row(i).iter().copied().collect();
                let b: Vec<f64> = rho.row(j).iter().copied().collect();
                assert!((s[(i, j)] - pearson(&a, &b).unwrap()).abs() < 1e-12);
            }
        }
        let mut twin = DMatrix::zeros(2, 4);
        twin.set_row(0, &nalgebra::RowDVector::from_vec(vec![1.0, 2.0, 0.0, 5.0]));
        twin.set_row(1, &(-twin.row(0)));
        assert!((perf_similarity(&twin).unwrap().0[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_means() {
        let labels: Vec<String> = ["a", "b", "a"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            group_mean(&[1.0, 5.0, 3.0], &labels).unwrap(),
            vec![("a".into(), 2.0), ("b".into(), 5.0)]
        );
    }

    proptest! {
        #[test]
        fn discriminability_ignores_common_affine(seed in 0u64..200, scale in 0.1f64..10.0, shift in -3.0f64..3.0) {
            let n = 6;
            let r = randn(n, n, seed);
            let rho = randn(n, 12, seed + 1000);
            let l = fit_pair_learner(&r, &rho, 0, 3).unwrap();
            let ei = pair_embedding(&r, 0, 0, 3).unwrap();
            let ej = pair_embedding(&r, 3, 0, 3).unwrap();
            let ri: Vec<f64> = rho.row(0).iter().copied().collect();
            let rj: Vec<f64> = rho.row(3).iter().copied().collect();
            let base = discriminability(&l, &ei, &ej, &ri, &rj).unwrap().value;
            let ti: Vec<f64> = ri.iter().map(|v| scale * v + shift).collect();
            let tj: Vec<f64> = rj.iter().map(|v| scale * v + shift).collect();
            let moved = discriminability(&l, &ei, &ej, &ti, &tj).unwrap().value;
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn projection_ignores_channel_offsets(seed in 0u64..200, offset in -2.0f64..2.0) {
            let rho = randn(5, 8, seed);
            let coords = coords_from(&[-2.0, -1.0, 0.0, 1.0, 2.5]);
            let p = perf_profile("s", &names(5, "r"), &names(8, "v"), &rho).unwrap();
            let shifted = perf_profile("s", &names(5, "r"), &names(8, "v"), &rho.map(|v| v + offset)).unwrap();
            let a = project_dim1(&p, &coords).unwrap();
            let b = project_dim1(&shifted, &coords).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn majority_in_range_and_monotone(seed in 0u64..200) {
            let ms: Vec<DMatrix<f64>> = (0..5).map(|s| {
                let m = randn(6, 6, seed * 10 + s);
                (&m + m.transpose()) * 0.5
            }).collect();
            let mut prev = vec![101.0; 6];
            for t in 1..=5 {
                let pct = majority_match(&ms, t).unwrap();
                for (p, q) in pct.iter().zip(&prev) {
                    prop_assert!((0.0..=100.0).contains(p) && p <= q);
                }
                prev = pct;
            }
        }
    }
}
