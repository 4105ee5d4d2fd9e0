//! Coordinate-descent hyperparameter search over latent size, learning rate
//! and batch size.

use crate::error::{Error, Result};
use crate::feature_store::AlignedDataset;
use crate::stats::mean;

use super::{decoder_sample_mse, encode, fit_split, train_decoder, train_encoder, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub latent_dims: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            latent_dims: vec![10, 20, 50],
            learning_rates: vec![1e-6, 2e-5, 1e-4, 2e-4],
            batch_sizes: vec![256, 512, 1024],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchStep {
    pub phase: Phase,
    pub config: TrainConfig,
    pub score: f64,
}

fn set(cfg: &TrainConfig, phase: Phase, coord: usize, grid: &SearchGrid, i: usize) -> TrainConfig {
    let mut c = cfg.clone();
    match coord {
        0 => c.latent_dim = grid.latent_dims[i],
        1 => match phase {
            Phase::Encoder => c.lr_encoder = grid.learning_rates[i],
            Phase::Decoder => c.lr_decoder = grid.learning_rates[i],
        },
        _ => c.batch_size = grid.batch_sizes[i],
    }
    c
}

/// Minimise `objective` one coordinate at a time, sweeping each coordinate's
/// grid with the others held fixed, until a full pass changes nothing or
/// `max_rounds` passes have run. Ties keep the current value.
pub fn coordinate_descent(
    start: &TrainConfig,
    grid: &SearchGrid,
    phase: Phase,
    max_rounds: usize,
    mut objective: impl FnMut(&TrainConfig) -> Result<f64>,
) -> Result<(TrainConfig, Vec<SearchStep>)> {
    if grid.latent_dims.is_empty() || grid.learning_rates.is_empty() || grid.batch_sizes.is_empty()
    {
        return Err(Error::InvalidArgument(
            "search grid has an empty axis".into(),
        ));
    }
    let mut trace: Vec<SearchStep> = Vec::new();
    let mut score_of = |cfg: &TrainConfig, trace: &mut Vec<SearchStep>| -> Result<f64> {
        if let Some(s) = trace.iter().find(|s| &s.config == cfg) {
            return Ok(s.score);
        }
        let score = objective(cfg)?;
        trace.push(SearchStep {
            phase,
            config: cfg.clone(),
            score,
        });
        Ok(score)
    };
    let mut current = start.clone();
    let mut current_score = score_of(&current, &mut trace)?;
    // the decoder phase has no latent size to choose: the encoders fix it
    let coords: &[usize] = match phase {
        Phase::Encoder => &[0, 1, 2],
        Phase::Decoder => &[1, 2],
    };
    for _ in 0..max_rounds {
        let mut changed = false;
        for &coord in coords {
            let len = match coord {
                0 => grid.latent_dims.len(),
                1 => grid.learning_rates.len(),
                _ => grid.batch_sizes.len(),
            };
            for i in 0..len {
                let candidate = set(&current, phase, coord, grid, i);
                // divergent settings simply lose
                let score = match score_of(&candidate, &mut trace) {
                    Ok(s) if s.is_finite() => s,
                    Ok(_) | Err(Error::Divergence(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                if score < current_score {
                    current = candidate;
                    current_score = score;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok((current, trace))
}

/// Tune encoder settings on mean encoder validation loss, then decoder
/// settings on mean held-out self-decoder MSE over the validation rows.
pub fn tune(
    dataset: &AlignedDataset,
    start: &TrainConfig,
    grid: &SearchGrid,
    max_rounds: usize,
) -> Result<(TrainConfig, Vec<SearchStep>)> {
    let ids = dataset.ids();
    let (enc_cfg, mut trace) =
        coordinate_descent(start, grid, Phase::Encoder, max_rounds, |cfg| {
            let losses = ids
                .iter()
                .map(|id| train_encoder(dataset, id, cfg).map(|f| f.report.best_validation_loss))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean(&losses))
        })?;
    let rows = fit_split(&dataset.corpus, enc_cfg.validation_fraction)?;
    let latents = ids
        .iter()
        .map(|id| {
            let fit = train_encoder(dataset, id, &enc_cfg)?;
            encode(&fit.encoder, dataset.universal())
        })
        .collect::<Result<Vec<_>>>()?;
    let (cfg, dec_trace) = coordinate_descent(&enc_cfg, grid, Phase::Decoder, max_rounds, |cfg| {
        let mut errs = Vec::new();
        for (id, lat) in ids.iter().zip(&latents) {
            let target = dataset.bundle(id)?;
            let dec = train_decoder(lat, target, &rows, cfg)?.decoder;
            let mse = decoder_sample_mse(
                &dec,
                &lat.values.select_rows(&rows.val),
                &target.rows_matrix(&rows.val),
            )?;
            errs.push(mean(&mse));
        }
        Ok(mean(&errs))
    })?;
    trace.extend(dec_trace);
    Ok((cfg, trace))
}
