//! Training loops: mask learning over frozen weights with optional periodic
//! re-randomization, and ordinary weight training as a baseline.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{normalize_and_augment, Augment, DataError, Dataset, NormStats};
use crate::masked::{ArchSpec, MaskedNetwork, NetError};
use crate::ops::{count_correct, NormMode};
use crate::optim::{OptError, OptState, Schedule};
use crate::randomize::{RandomizeConfig, RandomizeError, RandomizeMode, Randomizer};
use crate::rng::{stream_rng, Stream, StreamState};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Randomize(#[from] RandomizeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Net(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Ordinary training of all weights, no pruning.
    Sgd,
    /// Mask learning only.
    EdgePopup,
    /// Mask learning with periodic re-randomization of pruned weights.
    Iterand,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::EdgePopup => "edge-popup",
            Method::Iterand => "iterand",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Train / validation / test data and the train-split normalization stats.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
    pub stats: NormStats,
}

impl Datasets {
    pub fn new(train: Dataset, val: Option<Dataset>, test: Dataset) -> Self {
        let stats = NormStats::compute(&train);
        Self {
            train,
            val,
            test,
            stats,
        }
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub method: Method,
    pub arch: ArchSpec,
    pub epochs: usize,
    pub batch: usize,
    pub eta0: f64,
    pub lambda: f64,
    pub mu: f64,
    pub schedule: Schedule,
    /// Used by [`Method::Iterand`] only; `k_per = None` means one epoch.
    pub randomize: RandomizeMode,
    pub r: f64,
    pub k_per: Option<usize>,
    pub augment: Augment,
    pub seed: u64,
}

impl TrainParams {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Setup("epochs must be at least 1".into()));
        }
        if self.batch < 2 {
            return Err(TrainError::Setup("batch must be at least 2".into()));
        }
        for (name, v) in [("eta0", self.eta0), ("lambda", self.lambda), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Setup(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Randomization actually applied for this method, with `k_per` resolved
    /// against the number of steps per epoch.
    pub fn randomize_config(&self, steps_per_epoch: usize) -> RandomizeConfig {
        let mode = match self.method {
            Method::Iterand => self.randomize,
            Method::EdgePopup | Method::Sgd => RandomizeMode::Off,
        };
        RandomizeConfig {
            mode,
            r: self.r,
            k_per: self.k_per.unwrap_or(steps_per_epoch).max(1),
            dist: self.arch.dist_param,
        }
    }
}

/// Mini-batches per epoch: a trailing batch of fewer than two samples is
/// dropped because train-mode batch norm needs two.
pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    let full = n / batch;
    if n % batch >= 2 {
        full + 1
    } else {
        full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Running accuracy over the epoch's training batches.
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub test_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedResult {
    pub net: MaskedNetwork<f32>,
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub randomizations: usize,
    pub k_per: usize,
    /// Generator positions at the end of the run, keyed by stream.
    pub streams: Vec<(Stream, StreamState)>,
}

impl TrainedResult {
    pub fn final_test_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_acc)
    }

    /// Masks of every prunable layer.
    pub fn masks(&self) -> Vec<Vec<f32>> {
        self.net.params().map(|p| p.mask.data().to_vec()).collect()
    }
}

/// Accuracy of `net` (eval mode) on the whole dataset.
pub fn evaluate(net: &mut MaskedNetwork<f32>, data: &Dataset, stats: &NormStats, batch: usize) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut unused = stream_rng(0, Stream::Augment);
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = normalize_and_augment(data, chunk, stats, Augment::None, &mut unused);
        let logits = net.effective_forward(&x, NormMode::Eval)?;
        correct += count_correct(&logits, &y);
    }
    Ok(correct as f64 / data.len() as f64)
}

const EVAL_BATCH: usize = 1000;

/// Runs one configuration end to end.
///
/// For the mask-learning methods each step recomputes the masks, takes one
/// momentum step on the scores with the straight-through gradient, and
/// recomputes the masks again; weights change only through re-randomization
/// after step `k` when `(k + 1) % k_per == 0`. For [`Method::Sgd`] the network
/// is dense and the weights themselves are trained with weight decay.
pub fn run_training(
    params: &TrainParams,
    data: &Datasets,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainedResult, TrainError> {
    params.validate()?;
    let mut arch = params.arch.clone();
    if params.method == Method::Sgd {
        arch.sparsity = 0.0;
    }
    if arch.input != data.train.image_shape() || arch.classes != data.train.classes {
        return Err(TrainError::Setup(format!(
            "network expects {:?} images with {} classes, data has {:?} with {}",
            arch.input,
            arch.classes,
            data.train.image_shape(),
            data.train.classes
        )));
    }
    let n = data.train.len();
    let per_epoch = steps_per_epoch(n, params.batch);
    if per_epoch == 0 {
        return Err(TrainError::Setup(format!("{n} training samples give no batch of at least 2")));
    }
    let total = per_epoch * params.epochs;
    let rz_config = params.randomize_config(per_epoch);
    let mut randomizer = Randomizer::new(rz_config, params.seed)?;
    let mut net = arch.build::<f32>(params.seed)?;
    let mut opt = OptState::<f32>::new(
        params.eta0,
        params.lambda,
        params.mu,
        params.schedule,
        total,
        net.params().map(|p| p.len()),
    );
    let mut shuffle_rng = stream_rng(params.seed, Stream::DataShuffle);
    let mut augment_rng = stream_rng(params.seed, Stream::Augment);
    let mut scratch = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(params.epochs);
    let mut k = 0;
    let mut lr = params.eta0;

    for epoch in 0..params.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut correct, mut seen, mut loss_sum) = (0usize, 0usize, 0.0f64);
        for b in 0..per_epoch {
            let batch = &order[b * params.batch..((b + 1) * params.batch).min(n)];
            let (x, y) = normalize_and_augment(&data.train, batch, &data.stats, params.augment, &mut augment_rng);
            if params.method == Method::Sgd {
                let (loss, logits, grads) = net.loss_and_weight_grads(&x, &y, NormMode::Train)?;
                lr = opt.update(net.params_mut().map(|p| &mut p.theta), &grads)?;
                correct += count_correct(&logits, &y);
                loss_sum += loss as f64 * y.len() as f64;
            } else {
                net.refresh_masks(&mut scratch)?;
                let (loss, logits, grads) = net.score_gradient(&x, &y, NormMode::Train)?;
                lr = opt.update(net.params_mut().map(|p| &mut p.scores), &grads)?;
                net.refresh_masks(&mut scratch)?;
                randomizer.after_step(&mut net, k)?;
                correct += count_correct(&logits, &y);
                loss_sum += loss as f64 * y.len() as f64;
            }
            seen += y.len();
            k += 1;
        }
        let val_acc = match &data.val {
            Some(v) => Some(evaluate(&mut net, v, &data.stats, EVAL_BATCH)?),
            None => None,
        };
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_acc: correct as f64 / seen as f64,
            train_loss: loss_sum / seen as f64,
            val_acc,
            test_acc: evaluate(&mut net, &data.test, &data.stats, EVAL_BATCH)?,
            lr,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }

    let [rz_value, rz_coin] = randomizer.stream_states();
    Ok(TrainedResult {
        net,
        epochs: history,
        steps: k,
        randomizations: randomizer.invocations(),
        k_per: rz_config.k_per,
        streams: vec![
            (Stream::DataShuffle, StreamState::capture(params.seed, &shuffle_rng)),
            (Stream::Augment, StreamState::capture(params.seed, &augment_rng)),
            (Stream::Randomize, rz_value),
            (Stream::BernoulliR, rz_coin),
        ],
    })
}

/// Dense weight training of the same architecture with the same schedule.
pub fn run_sgd_baseline(
    params: &TrainParams,
    data: &Datasets,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainedResult, TrainError> {
    let params = TrainParams {
        method: Method::Sgd,
        ..params.clone()
    };
    run_training(&params, data, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::distributions::DistKind;
    use crate::masked::{keep_count, Arch};
    use crate::tensor::Tensor;

    /// Two well-separated classes on 4x4 single-channel images.
    fn toy_data(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = stream_rng(seed, Stream::Split);
        let mut data = Vec::with_capacity(n * 16);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            for px in 0..16 {
                let bright = (px < 8) == (label == 0);
                let base = if bright { 0.8 } else { 0.2 };
                data.push(base + rng.random_range(-0.1f32..0.1));
            }
            labels.push(label);
        }
        Dataset::new(Tensor::new(vec![n, 1, 4, 4], data).unwrap(), labels, 2, Split::Train).unwrap()
    }

    fn toy_sets() -> Datasets {
        let mut test = toy_data(64, 2);
        test.split = Split::Test;
        Datasets::new(toy_data(200, 1), Some(toy_data(40, 3)), test)
    }

    fn params(method: Method) -> TrainParams {
        TrainParams {
            method,
            arch: ArchSpec::new(Arch::Mlp, 0.125, [1, 4, 4], 2, DistKind::SignedKaimingConstant, 0.5),
            epochs: 3,
            batch: 16,
            eta0: 0.1,
            lambda: 1e-4,
            mu: 0.9,
            schedule: Schedule::Cosine,
            randomize: RandomizeMode::Partial,
            r: 0.1,
            k_per: Some(5),
            augment: Augment::None,
            seed: 7,
        }
    }

    fn run(p: &TrainParams) -> TrainedResult {
        run_training(p, &toy_sets(), |_| {}).unwrap()
    }

    #[test]
    fn step_count_drops_singleton_tail() {
        assert_eq!(steps_per_epoch(256, 128), 2);
        assert_eq!(steps_per_epoch(257, 128), 2);
        assert_eq!(steps_per_epoch(258, 128), 3);
        assert_eq!(steps_per_epoch(1, 128), 0);
    }

    #[test]
    fn learns_toy_problem() {
        for m in [Method::Sgd, Method::EdgePopup, Method::Iterand] {
            let res = run(&params(m));
            assert!(res.final_test_acc() >= 0.9, "{m}: {:?}", res.epochs);
            assert_eq!(res.epochs.len(), 3);
        }
    }

    #[test]
    fn randomization_count_is_floor_of_steps_over_period() {
        let res = run(&params(Method::Iterand));
        assert_eq!(res.steps, 3 * 13);
        assert_eq!(res.randomizations, 39 / 5);
        assert_eq!(run(&params(Method::EdgePopup)).randomizations, 0);
    }

    #[test]
    fn zero_rate_matches_edge_popup() {
        let mut p = params(Method::Iterand);
        p.r = 0.0;
        let a = run(&p);
        let b = run(&params(Method::EdgePopup));
        assert_eq!(a.masks(), b.masks());
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn long_period_matches_edge_popup() {
        let mut p = params(Method::Iterand);
        p.k_per = Some(1000);
        let a = run(&p);
        let b = run(&params(Method::EdgePopup));
        assert_eq!(a.net, b.net);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run(&params(Method::Iterand));
        let b = run(&params(Method::Iterand));
        assert_eq!(a.net, b.net);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn mask_learning_never_touches_kept_weights_and_edge_popup_keeps_theta() {
        let p = params(Method::EdgePopup);
        let res = run(&p);
        let init = p.arch.build::<f32>(p.seed).unwrap();
        for (a, b) in init.params().zip(res.net.params()) {
            assert_eq!(a.theta, b.theta);
            assert_eq!(b.kept(), keep_count(0.5, b.len()));
        }
    }

    #[test]
    fn iterand_changes_only_pruned_weights_at_randomization() {
        let p = params(Method::Iterand);
        let res = run(&p);
        let init = p.arch.build::<f32>(p.seed).unwrap();
        let changed: usize = init
            .params()
            .zip(res.net.params())
            .map(|(a, b)| a.theta.data().iter().zip(b.theta.data()).filter(|(x, y)| x != y).count())
            .sum();
        assert!(changed > 0);
    }

    #[test]
    fn zero_learning_rate_sgd_equals_untrained() {
        let mut p = params(Method::Sgd);
        p.eta0 = 0.0;
        p.lambda = 0.0;
        let data = toy_sets();
        let res = run_sgd_baseline(&p, &data, |_| {}).unwrap();
        let mut dense = p.arch.clone();
        dense.sparsity = 0.0;
        let mut init = dense.build::<f32>(p.seed).unwrap();
        let acc = evaluate(&mut init, &data.test, &data.stats, 1000).unwrap();
        assert_eq!(res.final_test_acc(), acc);
    }

    #[test]
    fn zero_learning_rate_keeps_scores_and_masks() {
        let mut p = params(Method::EdgePopup);
        p.eta0 = 0.0;
        let res = run(&p);
        let init = p.arch.build::<f32>(p.seed).unwrap();
        for (a, b) in init.params().zip(res.net.params()) {
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn rejects_mismatched_data() {
        let mut p = params(Method::EdgePopup);
        p.arch.input = [1, 28, 28];
        assert!(matches!(run_training(&p, &toy_sets(), |_| {}), Err(TrainError::Setup(_))));
    }

    #[test]
    fn reports_every_epoch() {
        let mut seen = Vec::new();
        run_training(&params(Method::EdgePopup), &toy_sets(), |m| seen.push(m.epoch)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }
}
