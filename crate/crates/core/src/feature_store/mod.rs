//! Feature bundles, corpora and alignment.
//!
//! A bundle is one representation's token-aligned feature matrix. Storage is
//! 32-bit; everything downstream works in `f64`.

mod container;
mod corpus;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

pub use container::{write_atomic, Container, Dtype, Header, Payload};
pub use corpus::{
    align, load_corpus_manifest, load_dataset, split, AlignedDataset, BundleEntry, CorpusManifest,
    Role, Split, Story, StoryEntry, TokenCorpus,
};

use crate::error::{Error, Result};

/// Identity and metadata of one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSpec {
    pub id: String,
    pub dim: usize,
    pub model_group: String,
    pub layer_index: Option<u32>,
    pub mds_weight: f64,
}

impl RepresentationSpec {
    /// A stand-alone representation: its own model group, weight 1.
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        let id = id.into();
        Self {
            model_group: id.clone(),
            id,
            dim,
            layer_index: None,
            mds_weight: 1.0,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>, layer: Option<u32>) -> Self {
        self.model_group = group.into();
        self.layer_index = layer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.id)?;
        validate_id(&self.model_group)?;
        if self.dim == 0 {
            return Err(Error::Validation(format!("{}: dim must be >= 1", self.id)));
        }
        if !(self.mds_weight > 0.0 && self.mds_weight.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: mds_weight must be positive, got {}",
                self.id, self.mds_weight
            )));
        }
        Ok(())
    }
}

/// Ids travel through headers and CSV tables, so keep them to one plain token.
pub fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', ':', '\n', '\r', '"']) || id.trim() != id {
        return Err(Error::Validation(format!("invalid identifier {id:?}")));
    }
    Ok(())
}

/// Set every spec's weight to `1 / (representations in its model group)`, so
/// each model carries equal total weight.
pub fn assign_group_weights(specs: &mut [RepresentationSpec]) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in specs.iter() {
        *counts.entry(s.model_group.clone()).or_default() += 1;
    }
    for s in specs.iter_mut() {
        s.mds_weight = 1.0 / counts[&s.model_group] as f64;
    }
}

/// One representation's `T x dim` feature matrix, row-major, plus its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub spec: RepresentationSpec,
    pub token_count: usize,
    values: Vec<f32>,
}

impl FeatureBundle {
    pub fn new(spec: RepresentationSpec, token_count: usize, values: Vec<f32>) -> Result<Self> {
        let b = Self {
            spec,
            token_count,
            values,
        };
        b.validate()?;
        Ok(b)
    }

    /// Build from a working-precision matrix (narrowed to f32 for storage).
    pub fn from_matrix(spec: RepresentationSpec, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != spec.dim {
            return Err(Error::Dimension(format!(
                "{}: matrix has {} columns, spec dim is {}",
                spec.id,
                m.ncols(),
                spec.dim
            )));
        }
        let mut values = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                values.push(m[(r, c)] as f32);
            }
        }
        Self::new(spec, m.nrows(), values)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.token_count == 0 {
            return Err(Error::Validation(format!(
                "{}: token_count must be >= 1",
                self.spec.id
            )));
        }
        if self.values.len() != self.token_count * self.spec.dim {
            return Err(Error::SizeMismatch(format!(
                "{}: {} values for {} x {}",
                self.spec.id,
                self.values.len(),
                self.token_count,
                self.spec.dim
            )));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: non-finite value at row {}, column {}",
                self.spec.id,
                pos / self.spec.dim,
                pos % self.spec.dim
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn raw(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.spec.dim..(r + 1) * self.spec.dim]
    }

    /// Whole matrix widened to f64.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.token_count,
            self.spec.dim,
            self.values.iter().map(|&v| v as f64),
        )
    }

    /// Selected rows widened to f64, in the given order.
    pub fn rows_matrix(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            rows.len(),
            self.spec.dim,
            rows.iter()
                .flat_map(|&r| self.row(r).iter().map(|&v| v as f64)),
        )
    }

    fn to_container(&self) -> Container {
        let s = &self.spec;
        let mut h = Header::new();
        h.set("kind", "feature-bundle");
        h.set("id", &s.id);
        h.set("dim", s.dim);
        h.set("token_count", self.token_count);
        h.set("model_group", &s.model_group);
        h.set(
            "layer_index",
            s.layer_index
                .map_or_else(|| "none".to_string(), |l| l.to_string()),
        );
        h.set("mds_weight", s.mds_weight);
        h.set("layout", "row-major");
        Container::new(h, Payload::F32(self.values.clone()))
    }

    fn from_container(c: Container, origin: &str) -> Result<Self> {
        let h = &c.header;
        if h.get("kind").is_some_and(|k| k != "feature-bundle") {
            return Err(Error::Header(format!("{origin}: not a feature bundle")));
        }
        if h.require("layout")? != "row-major" {
            return Err(Error::Header(format!("{origin}: layout must be row-major")));
        }
        let dim: usize = h.parse("dim")?;
        let token_count: usize = h.parse("token_count")?;
        let layer_index = match h.require("layer_index")? {
            "none" => None,
            v => Some(
                v.parse()
                    .map_err(|_| Error::Header(format!("bad layer_index {v:?}")))?,
            ),
        };
        let spec = RepresentationSpec {
            id: h.require("id")?.to_string(),
            dim,
            model_group: h.require("model_group")?.to_string(),
            layer_index,
            mds_weight: h.parse("mds_weight")?,
        };
        spec.validate()?;
        if dim.checked_mul(token_count) != Some(c.payload.len()) {
            return Err(Error::SizeMismatch(format!(
                "{origin}: dim {dim} x token_count {token_count} != payload length {}",
                c.payload.len()
            )));
        }
        let values = match c.payload {
            Payload::F32(v) => v,
            Payload::F64(_) => {
                return Err(Error::Header(format!("{origin}: bundles must be f32le")))
            }
        };
        Self::new(spec, token_count, values)
    }
}

pub fn write_bundle(bundle: &FeatureBundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    bundle.to_container().write(path)
}

pub fn read_bundle(path: &Path) -> Result<FeatureBundle> {
    let c = Container::read(path)?;
    FeatureBundle::from_container(c, &path.display().to_string())
}

pub fn bundle_to_bytes(bundle: &FeatureBundle) -> Result<Vec<u8>> {
    bundle.validate()?;
    bundle.to_container().to_bytes()
}

pub fn bundle_from_bytes(bytes: &[u8]) -> Result<FeatureBundle> {
    FeatureBundle::from_container(Container::from_bytes(bytes, "memory")?, "memory")
}

/// A real matrix with labelled rows and columns (tournament matrices, R, M,
/// similarity matrices), stored as an f64 container.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub kind: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub matrix: DMatrix<f64>,
    pub extra: Vec<(String, String)>,
}

impl LabeledMatrix {
    pub fn new(
        kind: &str,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        matrix: DMatrix<f64>,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            row_ids,
            col_ids,
            matrix,
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if self.row_ids.len() != self.matrix.nrows() || self.col_ids.len() != self.matrix.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for a {}x{} matrix",
                self.kind,
                self.matrix.nrows(),
                self.matrix.ncols()
            )));
        }
        for id in self.row_ids.iter().chain(&self.col_ids) {
            validate_id(id)?;
        }
        let mut h = Header::new();
        h.set("kind", &self.kind);
        h.set("rows", self.matrix.nrows());
        h.set("cols", self.matrix.ncols());
        h.set("row_ids", self.row_ids.join(","));
        h.set("col_ids", self.col_ids.join(","));
        h.set("layout", "row-major");
        for (k, v) in &self.extra {
            h.set(k, v);
        }
        let payload = row_major(&self.matrix);
        Container::new(h, Payload::F64(payload)).write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let h = &c.header;
        let rows: usize = h.parse("rows")?;
        let cols: usize = h.parse("cols")?;
        if rows * cols != c.payload.len() {
            return Err(Error::SizeMismatch(format!(
                "{}: {rows}x{cols} but payload has {} values",
                path.display(),
                c.payload.len()
            )));
        }
        let split_ids = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(',').map(str::to_string).collect()
            }
        };
        let row_ids = split_ids(h.require("row_ids")?);
        let col_ids = split_ids(h.require("col_ids")?);
        if row_ids.len() != rows || col_ids.len() != cols {
            return Err(Error::Header(format!(
                "{}: label count mismatch",
                path.display()
            )));
        }
        let reserved = [
            "kind",
            "rows",
            "cols",
            "row_ids",
            "col_ids",
            "layout",
            "dtype",
            "payload_bytes",
        ];
        let extra = h
            .entries()
            .iter()
            .filter(|(k, _)| !reserved.contains(&k.as_str()))
            .cloned()
            .collect();
        Ok(Self {
            kind: h.require("kind")?.to_string(),
            row_ids,
            col_ids,
            matrix: DMatrix::from_row_slice(rows, cols, &c.payload.to_f64()),
            extra,
        })
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureBundle {
        FeatureBundle::new(
            RepresentationSpec::new("toy", 3),
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap()
    }

    #[test]
    fn write_then_read_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.fbn");
        let b = small();
        write_bundle(&b, &path).unwrap();
        let back = read_bundle(&path).unwrap();
        assert_eq!(back, b);
        assert_eq!(
            back.matrix(),
            DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.])
        );
    }

    #[test]
    fn glove_sized_bundle_is_accepted() {
        let spec = RepresentationSpec::new("glove", 300);
        let b = FeatureBundle::new(spec, 4, vec![0.5; 1200]).unwrap();
        let back = bundle_from_bytes(&bundle_to_bytes(&b).unwrap()).unwrap();
        assert_eq!(back.dim(), 300);
        assert_eq!(back.id(), "glove");
    }

    #[test]
    fn non_finite_entry_is_rejected() {
        let err = FeatureBundle::new(
            RepresentationSpec::new("bad", 2),
            2,
            vec![1.0, f32::NAN, 0.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    /// Same-length in-place patch of header text.
    fn patch(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
        assert_eq!(from.len(), to.len());
        let pos = bytes
            .windows(from.len())
            .position(|w| w == from.as_bytes())
            .unwrap();
        let mut out = bytes.to_vec();
        out[pos..pos + to.len()].copy_from_slice(to.as_bytes());
        out
    }

    #[test]
    fn header_with_zero_dim_is_rejected() {
        let bytes = bundle_to_bytes(&small()).unwrap();
        let err = bundle_from_bytes(&patch(&bytes, "\ndim: 3", "\ndim: 0")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = bundle_to_bytes(&small()).unwrap();
        let err = bundle_from_bytes(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch(_)));
    }

    #[test]
    fn payload_shape_disagreement_is_rejected() {
        let bytes = bundle_to_bytes(&small()).unwrap();
        assert!(matches!(
            bundle_from_bytes(&patch(&bytes, "token_count: 2", "token_count: 3")),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn group_weights_split_evenly() {
        let mut specs = vec![
            RepresentationSpec::new("glove", 4),
            RepresentationSpec::new("gpt-l0", 4).with_group("gpt", Some(0)),
            RepresentationSpec::new("gpt-l1", 4).with_group("gpt", Some(1)),
            RepresentationSpec::new("gpt-l2", 4).with_group("gpt", Some(2)),
        ];
        assign_group_weights(&mut specs);
        assert_eq!(specs[0].mds_weight, 1.0);
        assert!((specs[1].mds_weight - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn labeled_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fbn");
        let m = LabeledMatrix::new(
            "tournament",
            vec!["a".into(), "b".into()],
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 1.0 / 3.0, 0.0]),
        )
        .with_extra("target", "c");
        m.write(&path).unwrap();
        let back = LabeledMatrix::read(&path).unwrap();
        assert_eq!(back, m);
    }
}
