//! Thread-pool versions of the evaluation entry points. Episodes draw their
//! own streams from (seed, episode index), and results are collected in
//! episode order, so reports do not depend on the worker count.

use coopens_core::data::Dataset;
use coopens_core::episodic::{class_rows, EvalConfig, EvalReport, Evaluator, FeatureBank};
use coopens_core::models::{features_of, EnsembleParams};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Run `f` on a pool of `threads` workers (`None` lets rayon decide).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Failed(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// [`FeatureBank::extract`] with members processed concurrently.
pub fn extract_bank(ensemble: &EnsembleParams, dataset: &Dataset, classes: &[usize]) -> Result<FeatureBank> {
    let (indices, row_classes) = class_rows(dataset, classes)?;
    let features = ensemble
        .members()
        .par_iter()
        .map(|m| features_of(m, dataset, &indices))
        .collect::<coopens_core::Result<Vec<_>>>()?;
    Ok(FeatureBank::new(features, &row_classes)?)
}

pub fn run_evaluator(evaluator: &Evaluator, fingerprint: u64) -> Result<EvalReport> {
    let accs = (0..evaluator.config.n_episodes)
        .into_par_iter()
        .map(|e| evaluator.episode_accuracy(e))
        .collect::<coopens_core::Result<Vec<_>>>()?;
    Ok(evaluator.report(accs, fingerprint))
}

/// Parallel counterpart of `coopens_core::episodic::evaluate`.
pub fn evaluate(
    ensemble: &EnsembleParams,
    dataset: &Dataset,
    classes: &[usize],
    config: &EvalConfig,
    threads: Option<usize>,
) -> Result<EvalReport> {
    with_threads(threads, || {
        let bank = extract_bank(ensemble, dataset, classes)?;
        run_evaluator(&Evaluator::new(bank, config.clone())?, ensemble.content_hash())
    })?
}
