//! Stochastic-approximation training loop over mini-batched epochs.
//!
//! The update is plain SA: `theta <- theta - lambda * G` with `G` the
//! batch-averaged estimate from the configured estimator. Training with
//! the likelihood-ratio estimator runs noisy forward passes and averages
//! `replicates` independent estimates per sample; training with backprop
//! runs the classic noise-free network (one trace per sample, smooth
//! activation and loss required). Evaluation is always noise-free unless
//! explicitly asked for votes over noisy passes.
//!
//! Every random choice derives from `TrainConfig::seed`:
//!
//! - weight init: `derive_seed(seed, INIT, 0)`
//! - epoch shuffle: `derive_seed(seed, SHUFFLE, epoch)`
//! - iteration step seed: `derive_seed(seed, STEP, iteration)`, fanned
//!   out per sample (`SAMPLE`, index in batch) and per replicate
//!   (`REPLICATE`, replicate index)
//!
//! so a run is a pure function of `(seed, config, dataset)`, and any
//! slice of the schedule can be recomputed in isolation. Batch and
//! replicate reductions follow the fixed chunked scheme from
//! [`estimators`](crate::estimators), which is what lets a parallel
//! driver reproduce serial results bit for bit.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;
use rand::seq::SliceRandom;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::estimators::{
    bp_gradient, combine_glr_chunks, glr_chunk_sum, replicate_chunks, GradientEstimate,
    GradientKahan,
};
use crate::losses::{argmax, Loss};
use crate::math::KahanSum;
use crate::network::{forward, forward_deterministic, NetworkSpec, ParameterSet};
use crate::rng::{derive_seed, domains, stream, Stream};

/// Which gradient estimator drives the SA updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Likelihood-ratio estimator on the noisy network.
    Glr,
    /// Classic backprop on the noise-free network.
    Bp,
}

/// Hyperparameters of one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    pub loss: Loss,
    /// Constant SA step size. Zero is allowed (a deliberate no-op run).
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Replicates per sample for the likelihood-ratio estimator;
    /// ignored by backprop, whose per-sample estimate is deterministic.
    pub replicates: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicate count must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be at least 1".into()));
        }
        if self.estimator == EstimatorKind::Bp
            && !(spec.activation().is_smooth() && self.loss.is_smooth())
        {
            return Err(Error::Config(
                "backprop training requires the sigmoid activation and cross-entropy loss"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One mini-batch gradient computation, fully described.
///
/// The decomposition into [`GradientTask`]s and the combine step are
/// public so a parallel driver can run the tasks concurrently and still
/// reproduce [`batch_gradient`] exactly.
pub struct GradientRequest<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParameterSet,
    pub batch: &'a [&'a Sample],
    pub estimator: EstimatorKind,
    pub loss: Loss,
    pub replicates: usize,
    pub step_seed: u64,
}

/// One independently computable piece of a batch gradient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GradientTask {
    /// A replicate chunk of one sample's likelihood-ratio average.
    GlrChunk { sample: usize, replicates: Range<usize> },
    /// One sample's backprop estimate.
    BpSample { sample: usize },
}

/// The task list for a request, in combine order.
pub fn gradient_tasks(request: &GradientRequest<'_>) -> Vec<GradientTask> {
    match request.estimator {
        EstimatorKind::Glr => (0..request.batch.len())
            .flat_map(|sample| {
                replicate_chunks(request.replicates)
                    .map(move |replicates| GradientTask::GlrChunk { sample, replicates })
            })
            .collect(),
        EstimatorKind::Bp => (0..request.batch.len())
            .map(|sample| GradientTask::BpSample { sample })
            .collect(),
    }
}

/// Runs one task; the result is a partial sum (GLR) or a full per-sample
/// estimate (BP), paired with the matching loss sum.
pub fn run_gradient_task(
    request: &GradientRequest<'_>,
    task: &GradientTask,
) -> Result<(GradientEstimate, f64)> {
    match task {
        GradientTask::GlrChunk {
            sample,
            replicates,
        } => {
            let s = request.batch[*sample];
            let sample_seed =
                derive_seed(request.step_seed, domains::SAMPLE, *sample as u64);
            glr_chunk_sum(
                request.spec,
                request.params,
                s.input(),
                s.observation(),
                request.loss,
                sample_seed,
                replicates.clone(),
            )
        }
        GradientTask::BpSample { sample } => {
            let s = request.batch[*sample];
            let trace = forward_deterministic(request.spec, request.params, s.input())?;
            let loss_value = request.loss.value(trace.output(), s.observation())?;
            let loss_grad = request.loss.gradient(trace.output(), s.observation())?;
            let estimate = bp_gradient(&trace, request.spec, request.params, &loss_grad)?;
            Ok((estimate, loss_value))
        }
    }
}

/// Combines task results (in task order) into the batch-mean gradient
/// and the mean per-sample loss.
pub fn combine_gradient_tasks(
    request: &GradientRequest<'_>,
    results: Vec<(GradientEstimate, f64)>,
) -> (GradientEstimate, f64) {
    let batch_len = request.batch.len();
    let mut batch_sum = GradientKahan::zeros(request.spec);
    let mut loss_sum = KahanSum::new();
    match request.estimator {
        EstimatorKind::Glr => {
            let chunks_per_sample = replicate_chunks(request.replicates).count();
            let mut iter = results.into_iter();
            for _ in 0..batch_len {
                let sample_chunks: Vec<_> = (&mut iter).take(chunks_per_sample).collect();
                let (sample_mean, sample_loss) =
                    combine_glr_chunks(request.spec, sample_chunks, request.replicates);
                batch_sum.add(&sample_mean);
                loss_sum.add(sample_loss);
            }
        }
        EstimatorKind::Bp => {
            for (estimate, loss_value) in results {
                batch_sum.add(&estimate);
                loss_sum.add(loss_value);
            }
        }
    }
    let mut mean = batch_sum.into_sum();
    mean.scale(1.0 / batch_len as f64);
    (mean, loss_sum.value() / batch_len as f64)
}

/// Batch-mean gradient and mean loss, computed serially.
pub fn batch_gradient(request: &GradientRequest<'_>) -> Result<(GradientEstimate, f64)> {
    let results = gradient_tasks(request)
        .iter()
        .map(|task| run_gradient_task(request, task))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_gradient_tasks(request, results))
}

/// One SA update: returns `params - lambda * G(batch)`, leaving the
/// input untouched.
pub fn sa_step(
    spec: &NetworkSpec,
    params: &ParameterSet,
    batch: &[&Sample],
    config: &TrainConfig,
    rng: &mut Stream,
) -> Result<ParameterSet> {
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    use rand_chacha::rand_core::RngCore;
    let step_seed = rng.next_u64();
    let request = GradientRequest {
        spec,
        params,
        batch,
        estimator: config.estimator,
        loss: config.loss,
        replicates: config.replicates,
        step_seed,
    };
    let (gradient, _) = batch_gradient(&request)?;
    let mut updated = params.clone();
    updated.axpy_layers(-config.learning_rate, gradient.layers());
    Ok(updated)
}

/// One completed iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub train_loss: f64,
}

/// Per-epoch summary with validation metrics. `wall_time_s` is left at
/// zero by the core loop; drivers that own a clock fill it in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

/// Complete training history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Drives SA iterations over shuffled mini-batched epochs.
pub struct Trainer<'a> {
    spec: &'a NetworkSpec,
    dataset: &'a Dataset,
    config: TrainConfig,
    params: ParameterSet,
    log: TrainingLog,
    iteration: u64,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Trainer<'a> {
    /// Fresh trainer with seeded uniform weight initialization.
    pub fn new(dataset: &'a Dataset, spec: &'a NetworkSpec, config: TrainConfig) -> Result<Self> {
        let mut init_rng = stream(derive_seed(config.seed, domains::INIT, 0));
        let params = ParameterSet::init_uniform(spec, &mut init_rng);
        Self::with_params(dataset, spec, config, params)
    }

    /// Trainer continuing from explicit parameters.
    pub fn with_params(
        dataset: &'a Dataset,
        spec: &'a NetworkSpec,
        config: TrainConfig,
        params: ParameterSet,
    ) -> Result<Self> {
        config.validate(spec)?;
        if dataset.train().is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if !params.congruent_with(spec) {
            return Err(Error::Shape(
                "initial parameters are not congruent with the spec".into(),
            ));
        }
        Ok(Self {
            spec,
            dataset,
            config,
            params,
            log: TrainingLog::default(),
            iteration: 0,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn iterations_per_epoch(&self) -> usize {
        let n = self.dataset.train().len();
        n.div_ceil(self.config.batch_size)
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn current_epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn reshuffle(&mut self) {
        let n = self.dataset.train().len();
        self.order = (0..n).collect();
        let mut rng = stream(derive_seed(
            self.config.seed,
            domains::SHUFFLE,
            self.epoch as u64,
        ));
        self.order.shuffle(&mut rng);
    }

    /// One SA iteration using the serial gradient path.
    pub fn step(&mut self) -> Result<IterationRecord> {
        self.step_with(batch_gradient)
    }

    /// One SA iteration with a caller-supplied gradient routine (e.g. a
    /// parallel driver). The routine must be numerically equivalent to
    /// [`batch_gradient`] for reproducibility guarantees to hold.
    pub fn step_with<F>(&mut self, gradient: F) -> Result<IterationRecord>
    where
        F: FnOnce(&GradientRequest<'_>) -> Result<(GradientEstimate, f64)>,
    {
        if self.cursor == 0 {
            self.reshuffle();
        }
        let n = self.dataset.train().len();
        let end = (self.cursor + self.config.batch_size).min(n);
        let batch: Vec<&Sample> = self.order[self.cursor..end]
            .iter()
            .map(|&i| &self.dataset.train()[i])
            .collect();
        let step_seed = derive_seed(self.config.seed, domains::STEP, self.iteration);
        let request = GradientRequest {
            spec: self.spec,
            params: &self.params,
            batch: &batch,
            estimator: self.config.estimator,
            loss: self.config.loss,
            replicates: self.config.replicates,
            step_seed,
        };
        let (gradient, mean_loss) = gradient(&request)?;
        self.params
            .axpy_layers(-self.config.learning_rate, gradient.layers());

        self.iteration += 1;
        let record = IterationRecord {
            iteration: self.iteration,
            epoch: self.epoch,
            train_loss: mean_loss,
        };
        self.log.iterations.push(record);

        self.cursor = end;
        if self.cursor >= n {
            self.cursor = 0;
            self.epoch += 1;
        }
        Ok(record)
    }

    /// Runs iterations until the current epoch completes, then records
    /// validation metrics. Returns the epoch record for the driver to
    /// stamp a wall time onto.
    pub fn run_epoch(&mut self) -> Result<&mut EpochRecord> {
        self.run_epoch_with(|_trainer| batch_gradient)
    }

    /// As [`run_epoch`](Self::run_epoch) with a caller-supplied gradient
    /// routine factory.
    pub fn run_epoch_with<F, G>(&mut self, mut gradient: F) -> Result<&mut EpochRecord>
    where
        F: FnMut(&Self) -> G,
        G: FnOnce(&GradientRequest<'_>) -> Result<(GradientEstimate, f64)>,
    {
        let target = self.epoch;
        let mut losses = KahanSum::new();
        let mut count = 0u64;
        while self.epoch == target {
            let g = gradient(self);
            let record = self.step_with(g)?;
            losses.add(record.train_loss);
            count += 1;
        }
        let val_loss = mean_loss(self.spec, &self.params, self.dataset.test(), self.config.loss)?;
        let val_accuracy = evaluate(self.spec, &self.params, self.dataset.test())?;
        self.log.epochs.push(EpochRecord {
            epoch: target,
            train_loss: losses.value() / count as f64,
            val_loss,
            val_accuracy,
            wall_time_s: 0.0,
        });
        Ok(self.log.epochs.last_mut().unwrap())
    }

    pub fn into_parts(self) -> (ParameterSet, TrainingLog) {
        (self.params, self.log)
    }
}

/// Full training run: `config.epochs` epochs of shuffled mini-batches.
pub fn train(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: TrainConfig,
) -> Result<(ParameterSet, TrainingLog)> {
    let mut trainer = Trainer::new(dataset, spec, config)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.into_parts())
}

/// Fraction of samples whose noise-free argmax prediction matches the
/// label.
pub fn evaluate(spec: &NetworkSpec, params: &ParameterSet, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut correct = 0usize;
    for s in samples {
        let trace = forward_deterministic(spec, params, s.input())?;
        if argmax(trace.output()) == s.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Accuracy under noisy evaluation: each sample is predicted by majority
/// vote over `votes` independent noisy forward passes (ties break to the
/// lowest class index).
pub fn evaluate_noisy(
    spec: &NetworkSpec,
    params: &ParameterSet,
    samples: &[Sample],
    votes: usize,
    rng: &mut Stream,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if votes == 0 {
        return Err(Error::Config("vote count must be at least 1".into()));
    }
    use rand_chacha::rand_core::RngCore;
    let base = rng.next_u64();
    let mut correct = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let mut tallies = alloc::vec![0.0f64; spec.output_width()];
        for v in 0..votes {
            let vote_seed = derive_seed(base, domains::EVAL, (i * votes + v) as u64);
            let mut vote_rng = stream(vote_seed);
            let trace = forward(spec, params, s.input(), &mut vote_rng)?;
            tallies[argmax(trace.output())] += 1.0;
        }
        if argmax(&tallies) == s.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean loss over samples, on noise-free forward passes.
pub fn mean_loss(
    spec: &NetworkSpec,
    params: &ParameterSet,
    samples: &[Sample],
    loss: Loss,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut sum = KahanSum::new();
    for s in samples {
        let trace = forward_deterministic(spec, params, s.input())?;
        sum.add(loss.value(trace.output(), s.observation())?);
    }
    Ok(sum.value() / samples.len() as f64)
}
