//! Mini-batch epoch loops shared by the baselines and the population search.

use serde::{Deserialize, Serialize};

use crate::datasets::{one_hot, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{backward, evaluate, Gradient, ModelSpec, Mode, ParamSet};
use crate::numerics::{Matrix, Rng};
use crate::optimizers::{adam_step, sgd_step, AdamConfig, AdamState};

/// Features plus one-hot targets, ready for gradient computation.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub features: Matrix,
    pub targets: Matrix,
}

impl TrainSet {
    pub fn from_dataset(ds: &LabeledDataset) -> Result<Self> {
        Ok(TrainSet {
            features: ds.features.clone(),
            targets: one_hot(&ds.labels, ds.num_classes)?,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A model specification with the parameters currently being trained.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

/// Result of one pass over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Eval-mode mean loss over the whole training set after the pass.
    pub mean: f64,
    /// Sum of the mini-batch losses seen during the pass.
    pub batch_sum: f64,
}

impl EpochLoss {
    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.batch_sum.is_finite()
    }
}

/// One shuffled pass of mini-batch updates. `step` applies the update.
pub fn run_epoch<F>(
    spec: &ModelSpec,
    params: &mut ParamSet,
    data: &TrainSet,
    batch_size: usize,
    rng: &mut Rng,
    mut step: F,
) -> Result<EpochLoss>
where
    F: FnMut(&mut ParamSet, &Gradient) -> Result<()>,
{
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let mut batch_sum = 0.0;
    for batch in order.chunks(batch_size) {
        let xb = data.features.gather_rows(batch);
        let yb = data.targets.gather_rows(batch);
        let (loss, grad) = backward(spec, params, &xb, &yb, Mode::Train, rng)?;
        batch_sum += loss;
        if !loss.is_finite() {
            break;
        }
        step(params, &grad)?;
    }
    let mean = if params.is_finite() {
        evaluate(spec, params, &data.features, &data.targets)?.0
    } else {
        f64::NAN
    };
    Ok(EpochLoss { mean, batch_sum })
}

pub fn sgd_epoch(
    spec: &ModelSpec,
    params: &mut ParamSet,
    data: &TrainSet,
    lr: f64,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EpochLoss> {
    run_epoch(spec, params, data, batch_size, rng, |p, g| sgd_step(p, g, lr))
}

pub fn adam_epoch(
    spec: &ModelSpec,
    params: &mut ParamSet,
    data: &TrainSet,
    cfg: &AdamConfig,
    state: &mut AdamState,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EpochLoss> {
    run_epoch(spec, params, data, batch_size, rng, |p, g| {
        adam_step(p, g, cfg, state)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_binary;
    use crate::models::init_params;

    #[test]
    fn sgd_epochs_reduce_loss_on_separable_data() {
        let ds = synth_binary(200, 2, 4.0, &mut Rng::new(1)).unwrap();
        let data = TrainSet::from_dataset(&ds).unwrap();
        let spec = ModelSpec::logreg(2, 2);
        let mut params = init_params(&spec, &mut Rng::new(2)).unwrap();
        let mut rng = Rng::new(3);
        let first = sgd_epoch(&spec, &mut params, &data, 0.1, 16, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..5 {
            last = sgd_epoch(&spec, &mut params, &data, 0.1, 16, &mut rng).unwrap();
        }
        assert!(last.mean < first.mean);
        assert!(first.batch_sum > 0.0);
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let ds = synth_binary(4, 1, 1.0, &mut Rng::new(1)).unwrap();
        let data = TrainSet::from_dataset(&ds).unwrap();
        let spec = ModelSpec::logreg(1, 2);
        let mut params = init_params(&spec, &mut Rng::new(2)).unwrap();
        assert!(sgd_epoch(&spec, &mut params, &data, 0.1, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn divergence_reports_non_finite_loss() {
        let ds = synth_binary(64, 2, 2.0, &mut Rng::new(1)).unwrap();
        let data = TrainSet::from_dataset(&ds).unwrap();
        let spec = ModelSpec::mlp(2, [8, 8], 2);
        let mut params = init_params(&spec, &mut Rng::new(2)).unwrap();
        let out = sgd_epoch(&spec, &mut params, &data, 1e300, 8, &mut Rng::new(0)).unwrap();
        assert!(!out.is_finite());
    }
}
