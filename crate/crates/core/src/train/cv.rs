use super::{train_fold, FoldResult, PreparedSample, TrainConfig, TrainError};
use crate::blocks::MdbNetConfig;
use crate::data::kfold_split;
use crate::losses::CombinedLossConfig;
use crate::metrics::{aggregate_folds, EvalReport, FoldSummary, MeanStd};

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub summary: FoldSummary,
}

impl CvResult {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.folds.iter().map(|f| f.report.clone()).collect()
    }
}

/// K-fold cross-validation. Folds are trained on up to `threads` worker
/// threads; each fold is seeded on its own, so the result does not depend on
/// the thread count.
pub fn run_cross_validation(
    samples: &[PreparedSample],
    k: usize,
    model_cfg: &MdbNetConfig,
    loss_cfg: &CombinedLossConfig,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<CvResult, TrainError> {
    let splits = kfold_split(samples.len(), k, cfg.seed)?;
    let run = |fold: usize| -> Result<FoldResult, TrainError> {
        let (train, val) = &splits[fold];
        let train: Vec<&PreparedSample> = train.iter().map(|&i| &samples[i]).collect();
        let val: Vec<&PreparedSample> = val.iter().map(|&i| &samples[i]).collect();
        train_fold(model_cfg, loss_cfg, cfg, &train, &val, fold)
    };
    let mut results: Vec<Option<Result<FoldResult, TrainError>>> = (0..k).map(|_| None).collect();
    let threads = threads.clamp(1, k);
    if threads == 1 {
        for (fold, slot) in results.iter_mut().enumerate() {
            *slot = Some(run(fold));
        }
    } else {
        std::thread::scope(|scope| {
            for (w, chunk) in results.chunks_mut(k.div_ceil(threads)).enumerate() {
                let run = &run;
                let first = w * k.div_ceil(threads);
                scope.spawn(move || {
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run(first + j));
                    }
                });
            }
        });
    }
    let folds = results
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report.clone()).collect();
    let summary = aggregate_folds(&reports)?;
    Ok(CvResult { folds, summary })
}

/// Mean over folds of each fold's mean IoU across `classes` (1-based class
/// ids); classes undefined in a fold are skipped for that fold.
pub fn rare_class_miou(reports: &[EvalReport], classes: &[u8]) -> Option<MeanStd> {
    let per_fold: Vec<f64> = reports
        .iter()
        .filter_map(|r| {
            let v: Vec<f64> = classes
                .iter()
                .filter_map(|&c| r.per_class_iou[c as usize - 1])
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    MeanStd::of(&per_fold)
}
