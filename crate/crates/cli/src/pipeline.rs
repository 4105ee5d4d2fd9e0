//! Stage orchestration. Each stage reads the files of the stages it depends
//! on, writes its own files atomically, and records a content-hashed entry in
//! the run manifest. A stage whose inputs are unchanged and whose outputs
//! still verify is skipped.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use repspace_core::brainmap::{
    discriminability_matrix, group_mean, majority_match, perf_profile, perf_similarity,
    project_dim1,
};
use repspace_core::encoding::{
    downsample, fit_encoding_model, tr_count, CvOptions, EncodingOptions, EncodingResult,
    ResponseDataset,
};
use repspace_core::feature_store::{
    align, assign_group_weights, load_corpus_manifest, read_bundle, split, write_atomic,
    write_bundle, AlignedDataset, BundleEntry, CorpusManifest, LabeledMatrix,
};
use repspace_core::geometry::{orient, row_distances, scree, weighted_mds, EmbeddingCoords};
use repspace_core::seed::derive_seed;
use repspace_core::synthgen::{
    gen_nested_reps, gen_synthetic_responses, regular_corpus, NestedFamilySpec, NestedRep,
    NoiseLevel, SyntheticResponseSpec,
};
use repspace_core::tables::{write_matrix_csv, write_records_csv};
use repspace_core::tournament::{
    ahp_weights, assemble_embedding, build_tournament, EmbeddingMatrix, TournamentMatrix,
};
use repspace_core::transfer::{
    decoder_sample_mse, encode, fit_split, train_decoder, train_encoder, LatentDataset, LinearMap,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SubjectInput, WeightsPolicy};
use crate::manifest::{combine, file_hash, outputs_hash, RunManifest, StageRecord};
use crate::report;

/// Set to `N` to make the decoder grid exit abruptly after `N` jobs have been
/// persisted in this process (for resume testing).
pub const ENV_CRASH_AFTER_JOBS: &str = "REPSPACE_CRASH_AFTER_JOBS";
pub const CRASH_EXIT_CODE: i32 = 86;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    TrainEncoders,
    TrainDecoders,
    Tournament,
    Embed,
    Mds,
    Scree,
    Encode,
    Project,
    Discriminate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::TrainEncoders,
        Stage::TrainDecoders,
        Stage::Tournament,
        Stage::Embed,
        Stage::Mds,
        Stage::Scree,
        Stage::Encode,
        Stage::Project,
        Stage::Discriminate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::TrainEncoders => "train-encoders",
            Stage::TrainDecoders => "train-decoders",
            Stage::Tournament => "tournament",
            Stage::Embed => "embed",
            Stage::Mds => "mds",
            Stage::Scree => "scree",
            Stage::Encode => "encode",
            Stage::Project => "project",
            Stage::Discriminate => "discriminate",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// Subject list written by `synth` and `ingest`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubjectList {
    subjects: Vec<SubjectInput>,
}

pub struct Pipeline {
    cfg: RunConfig,
    dir: PathBuf,
    manifest: RunManifest,
    pool: rayon::ThreadPool,
    force: bool,
}

fn rel(p: &str) -> String {
    p.to_string()
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn decoder_file(src: &str, tgt: &str) -> String {
    format!("decoders/{src}__{tgt}.fbn")
}

impl Pipeline {
    /// Open (or create) the run directory. A manifest written under a
    /// different configuration is refused unless `force` is set.
    pub fn open(cfg: RunConfig, force: bool) -> Result<Self> {
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = RunManifest::load(&dir)?;
        if let Some(old) = &manifest.config_hash {
            if *old != cfg.hash() && !force {
                bail!(
                    "the run directory {} was produced under a different configuration \
                     (config hash {} vs {}); rerun with --force to recompute",
                    dir.display(),
                    &old[..12],
                    &cfg.hash()[..12]
                );
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.worker_count())
            .build()
            .context("building worker pool")?;
        Ok(Self {
            cfg,
            dir,
            manifest,
            pool,
            force,
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn has_responses(&self) -> bool {
        match &self.cfg.synthetic {
            Some(s) => s.subjects > 0 && !s.drivers.is_empty() && s.channels_per_driver > 0,
            None => !self.cfg.responses.is_empty(),
        }
    }

    pub fn deps(&self, stage: Stage) -> Vec<Stage> {
        use Stage::*;
        match stage {
            Synth => vec![],
            Ingest => {
                if self.cfg.synthetic.is_some() {
                    vec![Synth]
                } else {
                    vec![]
                }
            }
            TrainEncoders => vec![Ingest],
            TrainDecoders => vec![TrainEncoders],
            Tournament => vec![TrainDecoders],
            Embed => vec![Tournament],
            Mds | Scree => vec![Embed],
            Encode => vec![Ingest],
            Project => vec![Mds, Encode],
            Discriminate => vec![Embed, Encode],
            Report => {
                if self.has_responses() {
                    vec![Embed, Mds, Scree, Discriminate]
                } else {
                    vec![Embed, Mds, Scree]
                }
            }
        }
    }

    /// Stages `all` runs, in order.
    pub fn plan(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| match s {
                Stage::Synth => self.cfg.synthetic.is_some(),
                Stage::Encode | Stage::Project | Stage::Discriminate => self.has_responses(),
                _ => true,
            })
            .collect()
    }

    fn section_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.cfg;
        let v = match stage {
            Stage::Synth => serde_json::json!([
                c.seed,
                c.synthetic,
                c.encoding.tr_seconds,
                c.encoding.delays
            ]),
            Stage::Ingest => {
                let mut files = Vec::new();
                if c.synthetic.is_none() {
                    let mut paths: Vec<PathBuf> = c.corpus.iter().cloned().collect();
                    if let Some(m) = &c.corpus {
                        let manifest = load_corpus_manifest(m)?;
                        let base = m.parent().unwrap_or(Path::new("."));
                        paths.extend(manifest.bundles.iter().map(|b| resolve(base, &b.path)));
                    }
                    paths.extend(c.bundles.iter().cloned());
                    paths.extend(c.responses.iter().map(|s| s.path.clone()));
                    for p in paths {
                        files.push((p.display().to_string(), file_hash(&p)?));
                    }
                }
                serde_json::json!([
                    c.universal,
                    c.responses,
                    files,
                    c.synthetic.as_ref().map(|s| &s.universal)
                ])
            }
            Stage::TrainEncoders | Stage::TrainDecoders => serde_json::json!([c.seed, c.train]),
            Stage::Tournament => serde_json::json!([]),
            Stage::Embed => serde_json::json!([c.tournament]),
            Stage::Mds | Stage::Scree => serde_json::json!([c.geometry]),
            Stage::Encode => serde_json::json!([c.seed, c.encoding]),
            Stage::Project => serde_json::json!([]),
            Stage::Discriminate => serde_json::json!([c.discriminate]),
            Stage::Report => serde_json::json!([]),
        };
        Ok(repspace_core::seed::sha256_hex(v.to_string().as_bytes()))
    }

    fn inputs_hash(&self, stage: Stage) -> Result<String> {
        let section = self.section_hash(stage)?;
        let mut parts: Vec<(String, String)> = vec![
            ("stage".into(), stage.name().into()),
            ("config".into(), section),
        ];
        for dep in self.deps(stage) {
            let rec = self
                .manifest
                .stages
                .get(dep.name())
                .ok_or_else(|| anyhow!("stage {} has no record", dep.name()))?;
            parts.push((dep.name().into(), rec.outputs_hash.clone()));
        }
        let refs: Vec<(&str, &str)> = parts
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        Ok(combine(&refs))
    }

    /// Completed, outputs intact, and computed from the current inputs.
    pub fn is_fresh(&self, stage: Stage) -> Result<bool> {
        let Some(rec) = self.manifest.verified(&self.dir, stage.name()) else {
            return Ok(false);
        };
        for dep in self.deps(stage) {
            if !self.is_fresh(dep)? {
                return Ok(false);
            }
        }
        Ok(rec.inputs_hash == self.inputs_hash(stage)?)
    }

    pub fn run(&mut self, stage: Stage) -> Result<Outcome> {
        let missing: Vec<&str> = self
            .deps(stage)
            .into_iter()
            .filter(|d| !self.is_fresh(*d).unwrap_or(false))
            .map(|d| d.name())
            .collect();
        if !missing.is_empty() {
            bail!(
                "stage {} needs completed stage(s): {}; run `repspace {}` first",
                stage.name(),
                missing.join(", "),
                missing[0]
            );
        }
        if !self.force && self.is_fresh(stage)? {
            log::info!("{}: up to date", stage.name());
            return Ok(Outcome::UpToDate);
        }
        let inputs_hash = self.inputs_hash(stage)?;
        let start = Instant::now();
        log::info!("{}: running", stage.name());
        let mut outputs = self
            .execute(stage)
            .with_context(|| format!("stage {} failed", stage.name()))?;
        outputs.sort();
        outputs.dedup();
        let record = StageRecord {
            inputs_hash,
            outputs_hash: outputs_hash(&self.dir, &outputs)?,
            outputs,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.manifest
            .stages
            .insert(stage.name().to_string(), record);
        self.manifest.config_hash = Some(self.cfg.hash());
        self.manifest.save(&self.dir)?;
        log::info!(
            "{}: done in {:.2} s",
            stage.name(),
            start.elapsed().as_secs_f64()
        );
        Ok(Outcome::Ran)
    }

    pub fn run_all(&mut self) -> Result<()> {
        for stage in self.plan() {
            self.run(stage)?;
        }
        Ok(())
    }

    fn execute(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::TrainEncoders => self.pool.install(|| self.train_encoders()),
            Stage::TrainDecoders => self.pool.install(|| self.train_decoders()),
            Stage::Tournament => self.pool.install(|| self.tournament()),
            Stage::Embed => self.embed(),
            Stage::Mds => self.mds(),
            Stage::Scree => self.scree(),
            Stage::Encode => self.pool.install(|| self.encode()),
            Stage::Project => self.project(),
            Stage::Discriminate => self.pool.install(|| self.discriminate()),
            Stage::Report => self.report(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    // ---- inputs -------------------------------------------------------

    fn synth(&self) -> Result<Vec<String>> {
        let s = self
            .cfg
            .synthetic
            .as_ref()
            .ok_or_else(|| anyhow!("no [synthetic] section in the configuration"))?;
        let corpus = regular_corpus(&s.story_lengths, &s.test_stories, s.seconds_per_word)?;
        let family = NestedFamilySpec {
            seed: derive_seed(self.cfg.seed, &["family"]),
            latent_dim: s.latent_dim,
            token_count: corpus.total_tokens(),
            reps: s
                .reps
                .iter()
                .map(|r| {
                    let mut rep =
                        NestedRep::new(&r.id, r.visible, r.dim, r.noise_sd).at_offset(r.offset);
                    if let Some(g) = &r.model_group {
                        rep = rep.in_group(g, r.layer_index);
                    }
                    rep
                })
                .collect(),
        };
        let bundles = gen_nested_reps(&family)?;
        let mut outputs = Vec::new();
        let mut entries = Vec::new();
        for b in &bundles {
            let file = format!("synth/bundles/{}.fbn", b.id());
            write_bundle(b, &self.path(&file))?;
            entries.push(BundleEntry {
                id: b.id().to_string(),
                path: PathBuf::from(format!("bundles/{}.fbn", b.id())),
            });
            outputs.push(file);
        }
        let manifest = CorpusManifest::from_corpus(&corpus, &s.universal, entries);
        write_atomic(
            &self.path("synth/corpus.toml"),
            manifest.to_toml()?.as_bytes(),
        )?;
        outputs.push(rel("synth/corpus.toml"));

        let mut subjects = Vec::new();
        for subj in 0..s.subjects {
            let name = format!("subject{:02}", subj + 1);
            let mut parts: Vec<ResponseDataset> = Vec::new();
            for d in &s.drivers {
                let bundle = bundles
                    .iter()
                    .find(|b| b.id() == d)
                    .expect("driver validated");
                let spec = SyntheticResponseSpec {
                    tr_seconds: self.cfg.encoding.tr_seconds,
                    ..SyntheticResponseSpec::random(
                        derive_seed(self.cfg.seed, &["responses", &name, d]),
                        d,
                        bundle.dim(),
                        &self.cfg.encoding.delays,
                        s.channels_per_driver,
                        NoiseLevel::SignalToNoise(s.signal_to_noise),
                    )
                };
                parts.push(gen_synthetic_responses(&spec, bundle, &corpus)?.dataset);
            }
            let first = &parts[0];
            let total: usize = parts.iter().map(|p| p.channels()).sum();
            let mut responses = DMatrix::zeros(first.trs(), total);
            let mut ids = Vec::new();
            let mut labels = Vec::new();
            let mut col = 0;
            for (p, d) in parts.iter().zip(&s.drivers) {
                for c in 0..p.channels() {
                    responses.set_column(col, &p.responses.column(c));
                    ids.push(format!("{d}-{c:03}"));
                    labels.push(d.clone());
                    col += 1;
                }
            }
            let mut ds = ResponseDataset::new(
                responses,
                first.tr_seconds,
                repspace_core::feature_store::Split {
                    train: first.train.clone(),
                    test: first.test.clone(),
                },
            )?;
            ds.channel_ids = ids;
            ds.channel_labels = Some(labels);
            let file = format!("synth/responses/{name}.fbn");
            ds.write(&self.path(&file))?;
            outputs.push(file);
            subjects.push(SubjectInput {
                subject: name.clone(),
                path: PathBuf::from(format!("responses/{name}.fbn")),
            });
        }
        let list = toml::to_string(&SubjectList { subjects })?;
        write_atomic(&self.path("synth/subjects.toml"), list.as_bytes())?;
        outputs.push(rel("synth/subjects.toml"));
        Ok(outputs)
    }

    fn ingest(&self) -> Result<Vec<String>> {
        let (manifest_path, extra, subjects) = match &self.cfg.synthetic {
            Some(_) => {
                let list: SubjectList =
                    toml::from_str(&std::fs::read_to_string(self.path("synth/subjects.toml"))?)?;
                let subjects = list
                    .subjects
                    .into_iter()
                    .map(|s| SubjectInput {
                        subject: s.subject,
                        path: self.path("synth").join(s.path),
                    })
                    .collect();
                (self.path("synth/corpus.toml"), Vec::new(), subjects)
            }
            None => (
                self.cfg.corpus.clone().expect("validated"),
                self.cfg.bundles.clone(),
                self.cfg.responses.clone(),
            ),
        };
        let manifest = load_corpus_manifest(&manifest_path)?;
        let base = manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .to_path_buf();
        let mut entries: Vec<BundleEntry> = manifest
            .bundles
            .iter()
            .map(|b| {
                Ok(BundleEntry {
                    id: b.id.clone(),
                    path: self.portable(&resolve(&base, &b.path))?,
                })
            })
            .collect::<Result<_>>()?;
        for p in &extra {
            let b = read_bundle(p)?;
            entries.push(BundleEntry {
                id: b.id().to_string(),
                path: self.portable(p)?,
            });
        }
        let corpus = manifest.corpus()?;
        let universal = self
            .cfg
            .universal
            .clone()
            .unwrap_or_else(|| manifest.universal.clone());
        let bundles = entries
            .iter()
            .map(|e| {
                // `ingest/` may not exist yet, so undo the `..` lexically
                let path = match e.path.strip_prefix("..") {
                    Ok(inside) => self.dir.join(inside),
                    Err(_) => e.path.clone(),
                };
                let b = read_bundle(&path)?;
                if b.id() != e.id {
                    bail!(
                        "{} holds bundle {:?}, manifest says {:?}",
                        e.path.display(),
                        b.id(),
                        e.id
                    );
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = align(corpus.clone(), bundles, &universal)?;
        split(&ds.corpus)?;

        let mut subjects_out = Vec::new();
        for s in &subjects {
            let r =
                ResponseDataset::read(&s.path).with_context(|| format!("subject {}", s.subject))?;
            if let Some(times) = corpus.word_times() {
                let trs = tr_count(&times, r.tr_seconds);
                if trs != r.trs() {
                    bail!(
                        "subject {}: {} response TRs but the corpus timeline spans {trs}",
                        s.subject,
                        r.trs()
                    );
                }
            } else {
                bail!("responses need word times for every story in the corpus");
            }
            subjects_out.push(SubjectInput {
                subject: s.subject.clone(),
                path: self.portable(&s.path)?,
            });
        }

        let out_manifest = CorpusManifest::from_corpus(&corpus, &universal, entries);
        write_atomic(
            &self.path("ingest/corpus.toml"),
            out_manifest.to_toml()?.as_bytes(),
        )?;
        let list = toml::to_string(&SubjectList {
            subjects: subjects_out,
        })?;
        write_atomic(&self.path("ingest/subjects.toml"), list.as_bytes())?;
        let weights = self.weights(&ds);
        let rows: Vec<Vec<String>> = ds
            .bundles
            .iter()
            .zip(&weights)
            .map(|(b, w)| {
                vec![
                    b.id().to_string(),
                    b.dim().to_string(),
                    b.spec.model_group.clone(),
                    b.spec
                        .layer_index
                        .map(|l| l.to_string())
                        .unwrap_or_default(),
                    fmt(*w),
                ]
            })
            .collect();
        write_records_csv(
            &self.path("ingest/representations.csv"),
            &["id", "dim", "model_group", "layer_index", "mds_weight"],
            &rows,
        )?;
        Ok(vec![
            rel("ingest/corpus.toml"),
            rel("ingest/subjects.toml"),
            rel("ingest/representations.csv"),
        ])
    }

    /// Files inside the run directory are recorded relative to `ingest/` so
    /// that identical runs in different directories write identical files.
    fn portable(&self, p: &Path) -> Result<PathBuf> {
        let p = absolute(p)?;
        Ok(match p.strip_prefix(absolute(&self.dir)?) {
            Ok(inside) => Path::new("..").join(inside),
            Err(_) => p,
        })
    }

    fn dataset(&self) -> Result<AlignedDataset> {
        Ok(repspace_core::feature_store::load_dataset(
            &self.path("ingest/corpus.toml"),
        )?)
    }

    fn subjects(&self) -> Result<Vec<SubjectInput>> {
        let list: SubjectList =
            toml::from_str(&std::fs::read_to_string(self.path("ingest/subjects.toml"))?)?;
        let base = self.path("ingest");
        Ok(list
            .subjects
            .into_iter()
            .map(|s| SubjectInput {
                path: resolve(&base, &s.path),
                ..s
            })
            .collect())
    }

    fn weights(&self, ds: &AlignedDataset) -> Vec<f64> {
        match self.cfg.geometry.weights {
            WeightsPolicy::Equal => vec![1.0; ds.len()],
            WeightsPolicy::Group => {
                let mut specs: Vec<_> = ds.bundles.iter().map(|b| b.spec.clone()).collect();
                assign_group_weights(&mut specs);
                specs.iter().map(|s| s.mds_weight).collect()
            }
        }
    }

    // ---- transfer -----------------------------------------------------

    fn train_encoders(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let ids = ds.ids();
        let rows = ids
            .par_iter()
            .map(|id| -> Result<Vec<String>> {
                let fit = train_encoder(&ds, id, &self.cfg.train)?;
                fit.encoder
                    .write(&self.path(&format!("encoders/{id}.fbn")))?;
                Ok(vec![
                    id.clone(),
                    fit.rank.to_string(),
                    fit.report.batches.to_string(),
                    fit.report.best_batch.to_string(),
                    fmt(fit.report.best_validation_loss),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        write_records_csv(
            &self.path("encoders/summary.csv"),
            &[
                "id",
                "rank",
                "batches",
                "best_batch",
                "best_validation_loss",
            ],
            &rows,
        )?;
        let mut out: Vec<String> = ids.iter().map(|id| format!("encoders/{id}.fbn")).collect();
        out.push(rel("encoders/summary.csv"));
        Ok(out)
    }

    fn latents(&self, ds: &AlignedDataset) -> Result<Vec<LatentDataset>> {
        ds.ids()
            .par_iter()
            .map(|id| {
                let enc = LinearMap::read(&self.path(&format!("encoders/{id}.fbn")))?;
                Ok(encode(&enc, ds.universal())?)
            })
            .collect()
    }

    /// A persisted decoder counts as done when it parses and was trained for
    /// this job under the current training configuration.
    fn decoder_done(&self, src: &str, tgt: &str) -> bool {
        match LinearMap::read(&self.path(&decoder_file(src, tgt))) {
            Ok(m) => m.source == src && m.target == tgt && m.config_hash == self.cfg.train.hash(),
            Err(_) => false,
        }
    }

    fn train_decoders(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let ids = ds.ids();
        let latents = self.latents(&ds)?;
        let rows = fit_split(&ds.corpus, self.cfg.train.validation_fraction)?;
        let jobs: Vec<(usize, usize)> = (0..ids.len())
            .flat_map(|s| (0..ids.len()).map(move |t| (s, t)))
            .collect();
        let pending: Vec<(usize, usize)> = jobs
            .iter()
            .copied()
            .filter(|&(s, t)| !self.decoder_done(&ids[s], &ids[t]))
            .collect();
        log::info!(
            "decoder grid: {} jobs, {} already persisted, {} workers",
            jobs.len(),
            jobs.len() - pending.len(),
            rayon::current_num_threads()
        );
        let crash_after: Option<usize> = std::env::var(crate::pipeline::ENV_CRASH_AFTER_JOBS)
            .ok()
            .and_then(|v| v.parse().ok());
        let done = AtomicUsize::new(0);
        let attempts = self.cfg.grid.retries + 1;
        let failures = pending
            .par_iter()
            .map(|&(s, t)| {
                let (src, tgt) = (&ids[s], &ids[t]);
                let target = ds.bundle(tgt)?;
                let mut last = None;
                for attempt in 1..=attempts {
                    let res = train_decoder(&latents[s], target, &rows, &self.cfg.train)
                        .and_then(|fit| fit.decoder.write(&self.path(&decoder_file(src, tgt))));
                    match res {
                        Ok(()) => {
                            last = None;
                            break;
                        }
                        Err(e) => {
                            log::warn!(
                                "decoder {src}->{tgt} attempt {attempt}/{attempts} failed: {e}"
                            );
                            last = Some(e.to_string());
                        }
                    }
                }
                if let Some(e) = last {
                    return Ok(Some(format!("{src}->{tgt}: {e}")));
                }
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                if crash_after == Some(n) {
                    log::error!("crash injection after {n} decoder jobs");
                    std::process::exit(CRASH_EXIT_CODE);
                }
                Ok(None)
            })
            .collect::<Result<Vec<Option<String>>>>()?;
        let failures: Vec<String> = failures.into_iter().flatten().collect();
        if !failures.is_empty() {
            bail!(
                "{} decoder job(s) failed after {attempts} attempt(s): {}",
                failures.len(),
                failures.join("; ")
            );
        }
        Ok(jobs
            .iter()
            .map(|&(s, t)| decoder_file(&ids[s], &ids[t]))
            .collect())
    }

    fn tournament(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let ids = ds.ids();
        let latents = self.latents(&ds)?;
        let test = split(&ds.corpus)?.test;
        let test_latents: Vec<DMatrix<f64>> = latents
            .iter()
            .map(|l| l.values.select_rows(&test))
            .collect();
        let per_target = ids
            .par_iter()
            .map(|tgt| -> Result<Vec<f64>> {
                let truth = ds.bundle(tgt)?.rows_matrix(&test);
                let mut mses = Vec::with_capacity(ids.len());
                for (s, src) in ids.iter().enumerate() {
                    let dec = LinearMap::read(&self.path(&decoder_file(src, tgt)))?;
                    mses.push(decoder_sample_mse(&dec, &test_latents[s], &truth)?);
                }
                let w = build_tournament(tgt, &mses)?;
                w.to_labeled(&ids)
                    .write(&self.path(&format!("tournament/{tgt}.fbn")))?;
                Ok(mses
                    .iter()
                    .map(|m| m.iter().sum::<f64>() / m.len() as f64)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = DMatrix::from_fn(ids.len(), ids.len(), |t, s| per_target[t][s]);
        write_matrix_csv(
            &self.path("tournament/test_mse.csv"),
            "target",
            &ids,
            &ids,
            &mean,
        )?;
        let mut out: Vec<String> = ids.iter().map(|t| format!("tournament/{t}.fbn")).collect();
        out.push(rel("tournament/test_mse.csv"));
        Ok(out)
    }

    fn embed(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let ids = ds.ids();
        let weights = ids
            .iter()
            .map(|t| {
                let m = LabeledMatrix::read(&self.path(&format!("tournament/{t}.fbn")))?;
                let w = TournamentMatrix::from_labeled(&m)?;
                Ok(ahp_weights(&w.w)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let raw = DMatrix::from_fn(ids.len(), ids.len(), |t, s| weights[t][s]);
        write_matrix_csv(
            &self.path("embed/ahp_weights.csv"),
            "target",
            &ids,
            &ids,
            &raw,
        )?;
        let e = assemble_embedding(
            &ids,
            &weights,
            self.cfg.tournament.diag_value,
            self.cfg.tournament.renormalize,
        )?;
        e.to_labeled().write(&self.path("embed/R.fbn"))?;
        write_matrix_csv(&self.path("embed/R.csv"), "target", &ids, &ids, &e.r)?;
        Ok(vec![
            rel("embed/ahp_weights.csv"),
            rel("embed/R.fbn"),
            rel("embed/R.csv"),
        ])
    }

    fn embedding(&self) -> Result<EmbeddingMatrix> {
        Ok(EmbeddingMatrix::from_labeled(&LabeledMatrix::read(
            &self.path("embed/R.fbn"),
        )?)?)
    }

    // ---- geometry -----------------------------------------------------

    fn mds(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let e = self.embedding()?;
        let g = &self.cfg.geometry;
        let k = g.k.min(e.ids.len().saturating_sub(1)).max(1);
        let weights = self.weights(&ds);
        let coords = weighted_mds(&e.ids, &row_distances(&e.r)?, &weights, k)?;
        let anchor = g.anchor.clone().unwrap_or_else(|| ds.universal_id.clone());
        let (coords, _warnings) = orient(&coords, &anchor, g.anchor_sign.into())?;
        let dims: Vec<String> = (1..=k).map(|d| format!("dim{d}")).collect();
        LabeledMatrix::new(
            "mds-coords",
            coords.ids.clone(),
            dims.clone(),
            coords.coords.clone(),
        )
        .with_extra("stress", coords.stress)
        .with_extra("iterations", coords.iterations)
        .write(&self.path("mds/coords.fbn"))?;
        let mut header: Vec<&str> = vec!["id"];
        header.extend(dims.iter().map(String::as_str));
        header.extend(["model_group", "layer_index", "mds_weight"]);
        let rows: Vec<Vec<String>> = ds
            .bundles
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut r = vec![b.id().to_string()];
                r.extend((0..k).map(|d| fmt(coords.coords[(i, d)])));
                r.push(b.spec.model_group.clone());
                r.push(
                    b.spec
                        .layer_index
                        .map(|l| l.to_string())
                        .unwrap_or_default(),
                );
                r.push(fmt(weights[i]));
                r
            })
            .collect();
        write_records_csv(&self.path("mds/coords.csv"), &header, &rows)?;
        let stress: Vec<Vec<String>> = coords
            .stress_history
            .iter()
            .enumerate()
            .map(|(i, s)| vec![i.to_string(), fmt(*s)])
            .collect();
        write_records_csv(
            &self.path("mds/stress.csv"),
            &["iteration", "stress"],
            &stress,
        )?;
        let dv: Vec<Vec<String>> = coords
            .dim_variances
            .iter()
            .enumerate()
            .map(|(i, v)| vec![format!("dim{}", i + 1), fmt(*v)])
            .collect();
        write_records_csv(
            &self.path("mds/dimensions.csv"),
            &["dimension", "variance_fraction"],
            &dv,
        )?;
        Ok(vec![
            rel("mds/coords.fbn"),
            rel("mds/coords.csv"),
            rel("mds/stress.csv"),
            rel("mds/dimensions.csv"),
        ])
    }

    fn coords(&self) -> Result<EmbeddingCoords> {
        let m = LabeledMatrix::read(&self.path("mds/coords.fbn"))?;
        Ok(EmbeddingCoords {
            ids: m.row_ids.clone(),
            coords: m.matrix.clone(),
            stress: m
                .extra("stress")
                .and_then(|s| s.parse().ok())
                .unwrap_or(f64::NAN),
            dim_variances: Vec::new(),
            iterations: m
                .extra("iterations")
                .and_then(|s| s.parse().ok())
                .unwrap_or(0),
            stress_history: Vec::new(),
        })
    }

    fn scree(&self) -> Result<Vec<String>> {
        let e = self.embedding()?;
        let k = self.cfg.geometry.scree_factors.min(e.ids.len());
        let s = scree(&e.r, k)?;
        if s.degenerate {
            log::warn!("embedding rows have zero variance; scree fractions are all 0");
        }
        let rows: Vec<Vec<String>> = s
            .fractions
            .iter()
            .enumerate()
            .map(|(i, f)| vec![(i + 1).to_string(), fmt(*f)])
            .collect();
        write_records_csv(
            &self.path("scree/scree.csv"),
            &["factor", "variance_fraction"],
            &rows,
        )?;
        Ok(vec![rel("scree/scree.csv")])
    }

    // ---- encoding models ----------------------------------------------

    fn encode(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let ids = ds.ids();
        let times = ds
            .corpus
            .word_times()
            .ok_or_else(|| anyhow!("encoding models need word times for every story"))?;
        let subjects = self.subjects()?;
        let e = &self.cfg.encoding;
        let mut outputs = Vec::new();
        for s in &subjects {
            let responses = ResponseDataset::read(&s.path)?;
            let opts = EncodingOptions {
                delays: e.delays.clone(),
                alphas: e.alphas.clone(),
                cv: CvOptions {
                    folds: e.folds,
                    holdout: e.holdout,
                    seed: derive_seed(self.cfg.seed, &["cv", &s.subject]),
                },
            };
            let results = ids
                .par_iter()
                .map(|id| -> Result<EncodingResult> {
                    let x = downsample(
                        ds.bundle(id)?,
                        &times,
                        responses.tr_seconds,
                        responses.trs(),
                    )?;
                    let r = fit_encoding_model(id, &x, &responses, &opts)?;
                    r.write(&self.path(&format!("encode/{}/{id}.fbn", s.subject)))?;
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            let rho = DMatrix::from_fn(ids.len(), responses.channels(), |k, c| results[k].rho[c]);
            let alpha =
                DMatrix::from_fn(ids.len(), responses.channels(), |k, c| results[k].alphas[c]);
            let rho_file = format!("encode/{}_rho.csv", s.subject);
            let alpha_file = format!("encode/{}_alpha.csv", s.subject);
            write_matrix_csv(
                &self.path(&rho_file),
                "representation",
                &ids,
                &responses.channel_ids,
                &rho,
            )?;
            write_matrix_csv(
                &self.path(&alpha_file),
                "representation",
                &ids,
                &responses.channel_ids,
                &alpha,
            )?;
            let undefined: usize = results
                .iter()
                .map(|r| r.undefined.iter().filter(|u| **u).count())
                .sum();
            if undefined > 0 {
                log::warn!(
                    "subject {}: {undefined} undefined test correlations scored as 0",
                    s.subject
                );
            }
            outputs.extend(
                ids.iter()
                    .map(|id| format!("encode/{}/{id}.fbn", s.subject)),
            );
            outputs.push(rho_file);
            outputs.push(alpha_file);
        }
        Ok(outputs)
    }

    /// `n x V` test correlations of one subject, plus channel ids and labels.
    fn rho(
        &self,
        subject: &SubjectInput,
        ids: &[String],
    ) -> Result<(DMatrix<f64>, ResponseDataset)> {
        let responses = ResponseDataset::read(&subject.path)?;
        let results = ids
            .iter()
            .map(|id| {
                EncodingResult::read(&self.path(&format!("encode/{}/{id}.fbn", subject.subject)))
            })
            .collect::<repspace_core::Result<Vec<_>>>()?;
        let rho = DMatrix::from_fn(ids.len(), responses.channels(), |k, c| results[k].rho[c]);
        Ok((rho, responses))
    }

    fn project(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let ids = ds.ids();
        let coords = self.coords()?;
        let mut outputs = Vec::new();
        for s in self.subjects()? {
            let (rho, responses) = self.rho(&s, &ids)?;
            let profile = perf_profile(&s.subject, &ids, &responses.channel_ids, &rho)?;
            let proj = project_dim1(&profile, &coords)?;
            let labels = responses
                .channel_labels
                .clone()
                .unwrap_or_else(|| vec![String::new(); responses.channels()]);
            let rows: Vec<Vec<String>> = (0..proj.len())
                .map(|c| {
                    vec![
                        responses.channel_ids[c].clone(),
                        labels[c].clone(),
                        fmt(proj[c]),
                        profile.constant[c].to_string(),
                    ]
                })
                .collect();
            let file = format!("project/{}.csv", s.subject);
            write_records_csv(
                &self.path(&file),
                &["channel", "label", "projection", "constant"],
                &rows,
            )?;
            outputs.push(file);
            if responses.channel_labels.is_some() {
                let by = group_mean(&proj, &labels)?;
                let rows: Vec<Vec<String>> = by.into_iter().map(|(l, v)| vec![l, fmt(v)]).collect();
                let file = format!("project/{}_by_label.csv", s.subject);
                write_records_csv(&self.path(&file), &["label", "mean_projection"], &rows)?;
                outputs.push(file);
            }
        }
        Ok(outputs)
    }

    fn discriminate(&self) -> Result<Vec<String>> {
        let e = self.embedding()?;
        let ids = e.ids.clone();
        let n = ids.len();
        let subjects = self.subjects()?;
        let mut outputs = Vec::new();
        let mut ms = Vec::new();
        let mut sim_sum = DMatrix::zeros(n, n);
        for s in &subjects {
            let (rho, _) = self.rho(s, &ids)?;
            let m = discriminability_matrix(&s.subject, &ids, &e.r, &rho)?;
            if !m.undefined_pairs.is_empty() {
                log::warn!(
                    "subject {}: {} pair(s) had undefined correlations scored as 0",
                    s.subject,
                    m.undefined_pairs.len()
                );
            }
            let file = format!("discriminate/M_{}.csv", s.subject);
            write_matrix_csv(&self.path(&file), "representation", &ids, &ids, &m.m)?;
            outputs.push(file);
            let (sim, constant) = perf_similarity(&rho)?;
            if !constant.is_empty() {
                log::warn!(
                    "subject {}: {} constant performance row(s)",
                    s.subject,
                    constant.len()
                );
            }
            let file = format!("discriminate/similarity_{}.csv", s.subject);
            write_matrix_csv(&self.path(&file), "representation", &ids, &ids, &sim)?;
            outputs.push(file);
            sim_sum += sim;
            ms.push(m.m);
        }
        let count = subjects.len().max(1) as f64;
        let m_mean = ms.iter().fold(DMatrix::zeros(n, n), |a, m| a + m) / count;
        write_matrix_csv(
            &self.path("discriminate/M_mean.csv"),
            "representation",
            &ids,
            &ids,
            &m_mean,
        )?;
        write_matrix_csv(
            &self.path("discriminate/similarity_mean.csv"),
            "representation",
            &ids,
            &ids,
            &(sim_sum / count),
        )?;
        let threshold = self.cfg.discriminate.threshold;
        if threshold > subjects.len() {
            log::warn!(
                "match threshold {threshold} exceeds the {} subject(s); every percentage will be 0",
                subjects.len()
            );
        }
        let pct = majority_match(&ms, threshold)?;
        let rows: Vec<Vec<String>> = ids
            .iter()
            .zip(&pct)
            .map(|(id, p)| vec![id.clone(), fmt(*p)])
            .collect();
        write_records_csv(
            &self.path("discriminate/majority.csv"),
            &["id", "match_percent"],
            &rows,
        )?;
        outputs.extend([
            rel("discriminate/M_mean.csv"),
            rel("discriminate/similarity_mean.csv"),
            rel("discriminate/majority.csv"),
        ]);
        Ok(outputs)
    }

    // ---- report -------------------------------------------------------

    fn report(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let e = self.embedding()?;
        let coords = self.coords()?;
        let groups: Vec<String> = ds
            .bundles
            .iter()
            .map(|b| b.spec.model_group.clone())
            .collect();
        let layers: Vec<Option<u32>> = ds.bundles.iter().map(|b| b.spec.layer_index).collect();
        let mut outputs = Vec::new();
        let mut emit = |name: &str, svg: String| -> Result<()> {
            let file = format!("report/{name}");
            write_atomic(&self.path(&file), svg.as_bytes())?;
            outputs.push(file);
            Ok(())
        };
        emit(
            "R_heatmap.svg",
            report::heatmap(
                "Representation embedding matrix R",
                &e.ids,
                &e.ids,
                &e.r,
                "source (encoder)",
                "target (decoder)",
            ),
        )?;
        emit(
            "mds_scatter.svg",
            report::scatter("MDS of R", &coords, &groups, &layers),
        )?;
        let fractions = read_column(&self.path("scree/scree.csv"), 1)?;
        let factor_labels: Vec<String> = (1..=fractions.len()).map(|f| f.to_string()).collect();
        emit(
            "scree.svg",
            report::bars(
                "Variance explained by factor",
                &factor_labels,
                &fractions,
                "variance fraction",
                Some(1.0),
            ),
        )?;
        let mut tables = vec![
            ("embed/R.csv", "R.csv"),
            ("mds/coords.csv", "mds_coords.csv"),
            ("scree/scree.csv", "scree.csv"),
        ];
        if self.has_responses() {
            let (_, _, m_mean) =
                repspace_core::tables::read_matrix_csv(&self.path("discriminate/M_mean.csv"))?;
            emit(
                "M_heatmap.svg",
                report::heatmap(
                    "Mean discriminability M",
                    &e.ids,
                    &e.ids,
                    &m_mean,
                    "representation",
                    "representation",
                ),
            )?;
            let pct = read_column(&self.path("discriminate/majority.csv"), 1)?;
            emit(
                "majority.svg",
                report::bars(
                    &format!(
                        "Pairs matched in at least {} subject(s)",
                        self.cfg.discriminate.threshold
                    ),
                    &e.ids,
                    &pct,
                    "matched pairs (%)",
                    Some(100.0),
                ),
            )?;
            let (_, _, sim) = repspace_core::tables::read_matrix_csv(
                &self.path("discriminate/similarity_mean.csv"),
            )?;
            emit(
                "similarity_heatmap.svg",
                report::heatmap(
                    "Mean performance similarity",
                    &e.ids,
                    &e.ids,
                    &sim,
                    "representation",
                    "representation",
                ),
            )?;
            tables.extend([
                ("discriminate/M_mean.csv", "M_mean.csv"),
                ("discriminate/majority.csv", "majority.csv"),
                ("discriminate/similarity_mean.csv", "similarity_mean.csv"),
            ]);
        }
        for (from, to) in tables {
            let bytes =
                std::fs::read(self.path(from)).with_context(|| format!("reading {from}"))?;
            let file = format!("report/tables/{to}");
            write_atomic(&self.path(&file), &bytes)?;
            outputs.push(file);
        }
        Ok(outputs)
    }

    /// Every stage output currently recorded, for listing and comparison.
    pub fn recorded_outputs(&self) -> BTreeSet<String> {
        self.manifest
            .stages
            .values()
            .flat_map(|r| r.outputs.iter().cloned())
            .collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

/// Numeric column `col` of a headed CSV.
fn read_column(path: &Path, col: usize) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(col)
                .ok_or_else(|| anyhow!("{}: short line {l:?}", path.display()))?
                .parse::<f64>()
                .with_context(|| format!("{}: bad number in {l:?}", path.display()))
        })
        .collect()
}
