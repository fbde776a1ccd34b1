use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_crop_flip, shuffled_batches, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::optim::{cosine_lr, Sgd};
use crate::nn::train::{train, weight_step, TrainConfig};
use crate::quant::QuantCandidate;
use crate::search::relaxed::{alpha_step_with, expected_size_value, update_lambda};
use crate::search::ArchLogits;

/// Hyperparameters of the alternating search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Candidate bitwidths; 1 is binary, 32 is float, anything else affine.
    pub candidates: Vec<u32>,
    /// Loss tolerance. `None` means the float model's validation loss.
    pub theta: Option<f64>,
    pub lambda_max: f64,
    pub lr_weights: f64,
    pub momentum: f64,
    pub lr_alpha: f64,
    /// Weight steps per outer iteration.
    pub weight_steps: usize,
    /// Outer iterations that update weights only, before logits start moving.
    pub warmup_iterations: usize,
    pub max_iterations: usize,
    pub converge_prob: f64,
    pub converge_patience: usize,
    pub batch_size: usize,
    pub valid_batch_size: usize,
    pub augment: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            candidates: vec![1, 8],
            theta: None,
            lambda_max: 1e3,
            lr_weights: 0.01,
            momentum: 0.9,
            lr_alpha: 3e-3,
            weight_steps: 5,
            warmup_iterations: 0,
            max_iterations: 200,
            converge_prob: 0.95,
            converge_patience: 5,
            batch_size: 64,
            valid_batch_size: 256,
            augment: false,
        }
    }
}

impl SearchConfig {
    pub fn candidate_list(&self) -> Result<Vec<QuantCandidate>> {
        if self.candidates.is_empty() {
            return Err(Error::Config("search.candidates is empty".into()));
        }
        self.candidates.iter().map(|&b| QuantCandidate::from_bits(b)).collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("search.{what}")));
        if !(self.lambda_max > 0.0) {
            return bad("lambda_max must be positive");
        }
        if self.lr_alpha < 0.0 || self.lr_weights < 0.0 {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 || self.valid_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.converge_prob) {
            return bad("converge_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One outer iteration of the trajectory log.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchRecord {
    pub iteration: usize,
    /// Mean training loss over the iteration's weight steps.
    pub train_loss: f64,
    /// Validation loss seen by the logit step (NaN during warm-up).
    pub valid_loss: f64,
    pub lambda: f64,
    /// Expected payload after the iteration.
    pub expected_size_bits: f64,
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub theta: f64,
    pub lambda: f64,
    pub lambda_max: f64,
    pub iterations: usize,
    pub weight_steps: usize,
    /// Number of times λ switched value between consecutive logit steps.
    pub lambda_flips: usize,
    pub converged: bool,
    pub trajectory: Vec<SearchRecord>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Relaxed network with searched weights.
    pub network: Network,
    pub arch: ArchLogits,
    pub candidates: Vec<QuantCandidate>,
    pub state: SearchState,
}

/// A search that stopped early; the trajectory up to the failure is kept.
#[derive(Debug, thiserror::Error)]
#[error("search aborted after {} iterations: {cause}", state.iterations)]
pub struct SearchAbort {
    #[source]
    pub cause: Error,
    pub state: SearchState,
}

struct BatchCycle {
    n: usize,
    batch_size: usize,
    queue: Vec<Vec<usize>>,
}

impl BatchCycle {
    fn new(n: usize, batch_size: usize) -> Self {
        Self { n, batch_size, queue: Vec::new() }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = shuffled_batches(self.n, self.batch_size, rng);
            self.queue.reverse();
        }
        self.queue.pop().expect("non-empty dataset")
    }
}

/// Alternates `weight_steps` SGD steps on the weights with one λ update and
/// one logit step, until every layer's top probability has exceeded
/// `converge_prob` for `converge_patience` consecutive iterations or the
/// iteration cap is reached.
///
/// `net` may be a float network (it is relaxed over the configured
/// candidates) or an already relaxed one.
pub fn search(net: &Network, train_set: &Dataset, valid_set: &Dataset, cfg: &SearchConfig, theta: f64, seed: u64) -> std::result::Result<SearchOutcome, SearchAbort> {
    let mut state = SearchState {
        theta,
        lambda: 0.0,
        lambda_max: cfg.lambda_max,
        iterations: 0,
        weight_steps: 0,
        lambda_flips: 0,
        converged: false,
        trajectory: Vec::new(),
    };
    let mut outcome = None;
    let result = run(net, train_set, valid_set, cfg, seed, &mut state, &mut outcome);
    match (result, outcome) {
        (Ok(()), Some((network, arch, candidates))) => Ok(SearchOutcome {
            network,
            arch,
            candidates,
            state,
        }),
        (Err(cause), _) => Err(SearchAbort { cause, state }),
        (Ok(()), None) => unreachable!("search finished without a result"),
    }
}

fn run(
    net: &Network,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &SearchConfig,
    seed: u64,
    state: &mut SearchState,
    outcome: &mut Option<(Network, ArchLogits, Vec<QuantCandidate>)>,
) -> Result<()> {
    cfg.validate()?;
    train_set.expect_split(Split::Train)?;
    valid_set.expect_split(Split::Valid)?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::InvalidArgument {
            op: "search",
            reason: "train and valid sets must be non-empty".into(),
        });
    }
    let candidates = cfg.candidate_list()?;
    let mut net = if net.is_relaxed() { net.clone() } else { net.relax(&candidates)? };
    let mut arch = ArchLogits::zeros(net.layers.len(), candidates.len());
    let specs = net.specs();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sgd = Sgd::new(cfg.momentum);
    let mut train_batches = BatchCycle::new(train_set.len(), cfg.batch_size);
    let mut valid_batches = BatchCycle::new(valid_set.len(), cfg.valid_batch_size);
    let total_steps = cfg.max_iterations * cfg.weight_steps;
    let mut confident_streak = 0;
    let mut previous_lambda: Option<f64> = None;

    for iteration in 0..cfg.max_iterations {
        let mut loss_sum = 0.0;
        for _ in 0..cfg.weight_steps {
            let idx = train_batches.next(&mut rng);
            let (mut images, labels) = train_set.gather(&idx);
            if cfg.augment {
                images = augment_crop_flip(&images, 4, &mut rng);
            }
            let lr = cosine_lr(cfg.lr_weights, state.weight_steps, total_steps);
            loss_sum += weight_step(&mut net, Some(&arch), images, &labels, &mut sgd, lr)?;
            state.weight_steps += 1;
        }
        let train_loss = loss_sum / cfg.weight_steps.max(1) as f64;

        let valid_loss = if iteration < cfg.warmup_iterations {
            f64::NAN
        } else {
            let idx = valid_batches.next(&mut rng);
            let (images, labels) = valid_set.gather(&idx);
            let step = alpha_step_with(&net, &mut arch, images, &labels, state.theta, cfg.lr_alpha, &candidates, |loss| {
                update_lambda(loss, state.theta, cfg.lambda_max)
            })?;
            if previous_lambda.is_some_and(|p| p != step.lambda) {
                state.lambda_flips += 1;
            }
            previous_lambda = Some(step.lambda);
            state.lambda = step.lambda;
            step.valid_loss
        };

        let probabilities = arch.all_probabilities();
        let expected = expected_size_value(&arch, &specs, &candidates)?;
        log::debug!(
            "iter {iteration}: train {train_loss:.4} valid {valid_loss:.4} lambda {} size {expected:.0}",
            state.lambda
        );
        state.trajectory.push(SearchRecord {
            iteration,
            train_loss,
            valid_loss,
            lambda: state.lambda,
            expected_size_bits: expected,
            probabilities,
        });
        state.iterations = iteration + 1;

        let confident = (0..arch.layers()).all(|i| arch.top_probability(i) > cfg.converge_prob);
        confident_streak = if confident && iteration >= cfg.warmup_iterations { confident_streak + 1 } else { 0 };
        if confident_streak >= cfg.converge_patience.max(1) {
            state.converged = true;
            break;
        }
    }
    log::info!(
        "{}: search stopped after {} iterations (converged: {}, lambda flips: {})",
        net.name,
        state.iterations,
        state.converged,
        state.lambda_flips
    );
    *outcome = Some((net, arch, candidates));
    Ok(())
}

/// Retrains a discretized network (no relaxed layers left) on the training split.
pub fn fine_tune(net: &mut Network, train_set: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    if net.is_relaxed() {
        return Err(Error::InvalidArgument {
            op: "fine_tune",
            reason: "discretize the network before fine-tuning".into(),
        });
    }
    train_set.expect_split(Split::Train)?;
    train(net, train_set, cfg, seed)
}
