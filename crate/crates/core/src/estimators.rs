//! Gradient estimators: likelihood-ratio (loss value only), backprop
//! (chain rule), and a finite-difference Monte-Carlo oracle.
//!
//! The likelihood-ratio estimator is the reason this crate exists. For a
//! Gaussian noise `r ~ Normal(0, sigma^2)` the score is `-r / sigma^2`,
//! and the estimate for the weight feeding neuron `a` from slot `b` of
//! level `l` is
//!
//! ```text
//! G[l][a][b] = loss * x[l][b] * r[l][a] / sigma^2
//! ```
//!
//! Nothing on the right-hand side is a derivative: the estimator consumes
//! the realized loss value, the signals, and the noise draws recorded in a
//! [`ForwardTrace`](crate::network::ForwardTrace), so it runs unchanged
//! for threshold and absolute-value activations and for the 0-1 loss.
//!
//! Replicate averaging uses a fixed chunked reduction: replicates are
//! summed plainly inside fixed-size chunks, and chunk partials are
//! combined in chunk order with Kahan compensation. A parallel driver
//! that computes chunk partials concurrently and combines them the same
//! way reproduces the serial result bit for bit.

use alloc::format;
use alloc::vec::Vec;
use rand_chacha::rand_core::RngCore;

use crate::error::{Error, Result};
use crate::losses::{Loss, Observation};
use crate::math::{KahanSum, RunningMoments};
use crate::matrix::Matrix;
use crate::network::{forward, forward_with_noise, ForwardTrace, NetworkSpec, NoiseSpec, ParameterSet};
use crate::rng::{derive_seed, domains, stream, Stream};

/// Number of replicates summed plainly before a compensated combine.
pub const REPLICATE_CHUNK: usize = 256;

/// Addresses a single weight: transition index, receiving neuron row,
/// sending slot column (0 = bias).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIndex {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

/// Per-parameter gradient values, shape-congruent with a
/// [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    layers: Vec<Matrix>,
}

impl GradientEstimate {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = (0..spec.transitions())
            .map(|t| {
                let (r, c) = spec.layer_shape(t);
                Matrix::zeros(r, c)
            })
            .collect();
        Self { layers }
    }

    fn zeros_like_trace(trace: &ForwardTrace) -> Self {
        let layers = (0..trace.transitions())
            .map(|t| Matrix::zeros(trace.noise(t).len(), trace.layer_input(t).len()))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, t: usize) -> &Matrix {
        &self.layers[t]
    }

    pub fn layer_mut(&mut self, t: usize) -> &mut Matrix {
        &mut self.layers[t]
    }

    pub fn congruent_with(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.transitions()
            && self
                .layers
                .iter()
                .enumerate()
                .all(|(t, layer)| layer.shape() == spec.layer_shape(t))
    }

    pub fn entry(&self, index: ParamIndex) -> f64 {
        self.layers[index.layer][(index.row, index.col)]
    }

    pub fn scale(&mut self, a: f64) {
        for layer in &mut self.layers {
            layer.scale(a);
        }
    }

    pub fn axpy(&mut self, a: f64, other: &GradientEstimate) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (x, y) in self.layers.iter_mut().zip(other.layers.iter()) {
            x.axpy(a, y);
        }
    }

    /// All entries in layer order, row-major.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|m| m.iter().copied())
    }

    /// Indexes of every entry, in the same order as [`values`](Self::values).
    pub fn indices(&self) -> impl Iterator<Item = ParamIndex> + '_ {
        self.layers.iter().enumerate().flat_map(|(t, m)| {
            let cols = m.cols();
            (0..m.rows() * m.cols()).map(move |i| ParamIndex {
                layer: t,
                row: i / cols,
                col: i % cols,
            })
        })
    }
}

/// Accumulates `loss * x_b * r_a / sigma^2` for every weight into `acc`.
///
/// The fused form keeps replicate loops allocation-free.
pub fn glr_accumulate(
    trace: &ForwardTrace,
    loss_value: f64,
    variance_sigma2: f64,
    acc: &mut GradientEstimate,
) {
    for t in 0..trace.transitions() {
        let x = trace.layer_input(t);
        let r = trace.noise(t);
        let layer = acc.layer_mut(t);
        for (a, &ra) in r.iter().enumerate() {
            let w = loss_value * ra / variance_sigma2;
            if w == 0.0 {
                continue;
            }
            for (dst, &xb) in layer.row_mut(a).iter_mut().zip(x.iter()) {
                *dst += w * xb;
            }
        }
    }
}

/// Likelihood-ratio gradient estimate from one forward trace.
///
/// `loss_value` must be the loss evaluated on this trace's outputs. The
/// inputs carry no derivative information of any kind, which is the whole
/// point: the same call serves every activation and both losses.
pub fn glr_gradient(
    trace: &ForwardTrace,
    loss_value: f64,
    noise: &NoiseSpec,
) -> GradientEstimate {
    let mut estimate = GradientEstimate::zeros_like_trace(trace);
    glr_accumulate(trace, loss_value, noise.variance(), &mut estimate);
    estimate
}

/// Kahan-compensated accumulator over gradient estimates.
#[derive(Clone, Debug)]
pub struct GradientKahan {
    sum: GradientEstimate,
    compensation: GradientEstimate,
}

impl GradientKahan {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            sum: GradientEstimate::zeros(spec),
            compensation: GradientEstimate::zeros(spec),
        }
    }

    pub fn add(&mut self, term: &GradientEstimate) {
        for (t, layer) in term.layers().iter().enumerate() {
            let sum = self.sum.layers[t].as_mut_slice();
            let comp = self.compensation.layers[t].as_mut_slice();
            for (i, &v) in layer.as_slice().iter().enumerate() {
                let y = v - comp[i];
                let t_new = sum[i] + y;
                comp[i] = (t_new - sum[i]) - y;
                sum[i] = t_new;
            }
        }
    }

    pub fn into_sum(self) -> GradientEstimate {
        self.sum
    }
}

/// Splits `count` replicates into the fixed chunk ranges of the reduction.
pub fn replicate_chunks(count: usize) -> impl Iterator<Item = core::ops::Range<usize>> {
    (0..count)
        .step_by(REPLICATE_CHUNK)
        .map(move |start| start..(start + REPLICATE_CHUNK).min(count))
}

/// Sums likelihood-ratio estimates (and losses) over one replicate range.
///
/// Replicate `i` draws its noise from a stream seeded by
/// `derive_seed(base_seed, domains::REPLICATE, i)`, so the result depends
/// only on the range and the seed, never on scheduling.
pub fn glr_chunk_sum(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    observation: &Observation,
    loss: Loss,
    base_seed: u64,
    replicates: core::ops::Range<usize>,
) -> Result<(GradientEstimate, f64)> {
    let mut partial = GradientEstimate::zeros(spec);
    let mut loss_sum = 0.0;
    let sigma2 = spec.noise().variance();
    for i in replicates {
        let mut rng = stream(derive_seed(base_seed, domains::REPLICATE, i as u64));
        let trace = forward(spec, params, input, &mut rng)?;
        let loss_value = loss.value(trace.output(), observation)?;
        glr_accumulate(&trace, loss_value, sigma2, &mut partial);
        loss_sum += loss_value;
    }
    Ok((partial, loss_sum))
}

/// Combines chunk partials in chunk order and divides by `count`.
pub fn combine_glr_chunks(
    spec: &NetworkSpec,
    partials: impl IntoIterator<Item = (GradientEstimate, f64)>,
    count: usize,
) -> (GradientEstimate, f64) {
    let mut grad = GradientKahan::zeros(spec);
    let mut losses = KahanSum::new();
    for (partial, loss_sum) in partials {
        grad.add(&partial);
        losses.add(loss_sum);
    }
    let mut mean = grad.into_sum();
    mean.scale(1.0 / count as f64);
    (mean, losses.value() / count as f64)
}

/// Mean of `k` independent likelihood-ratio estimates on one sample,
/// together with the mean replicate loss.
///
/// Each replicate runs a fresh noisy forward pass on the same input;
/// replicate seeds derive deterministically from one value drawn off
/// `rng`.
pub fn glr_gradient_averaged_with_loss(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    observation: &Observation,
    loss: Loss,
    k: usize,
    rng: &mut Stream,
) -> Result<(GradientEstimate, f64)> {
    if k == 0 {
        return Err(Error::Config("replicate count must be at least 1".into()));
    }
    let base_seed = rng.next_u64();
    let partials = replicate_chunks(k)
        .map(|range| glr_chunk_sum(spec, params, input, observation, loss, base_seed, range))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_glr_chunks(spec, partials, k))
}

/// Mean of `k` independent likelihood-ratio estimates on one sample.
pub fn glr_gradient_averaged(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    observation: &Observation,
    loss: Loss,
    k: usize,
    rng: &mut Stream,
) -> Result<GradientEstimate> {
    glr_gradient_averaged_with_loss(spec, params, input, observation, loss, k, rng)
        .map(|(estimate, _)| estimate)
}

/// Error signals `d[t][i] = dLoss/dv[t][i]` for every transition, by the
/// backward recursion. Requires a smooth activation.
pub(crate) fn bp_deltas(
    trace: &ForwardTrace,
    spec: &NetworkSpec,
    params: &ParameterSet,
    loss_grad: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let transitions = trace.transitions();
    if loss_grad.len() != spec.output_width() {
        return Err(Error::Shape(format!(
            "loss gradient has {} components, expected {}",
            loss_grad.len(),
            spec.output_width()
        )));
    }
    let activation = spec.activation();
    let mut deltas: Vec<Vec<f64>> = alloc::vec![Vec::new(); transitions];

    let last = transitions - 1;
    deltas[last] = trace
        .pre_activations(last)
        .iter()
        .zip(loss_grad)
        .map(|(&v, &e)| activation.derivative(v).map(|d| e * d))
        .collect::<Result<_>>()?;

    for t in (0..last).rev() {
        let next_weights = params.layer(t + 1);
        let next_delta = &deltas[t + 1];
        let v = trace.pre_activations(t);
        let mut d = Vec::with_capacity(v.len());
        for (i, &vi) in v.iter().enumerate() {
            let mut upstream = 0.0;
            for (j, dj) in next_delta.iter().enumerate() {
                // Column i + 1: column 0 of every matrix is the bias.
                upstream += next_weights[(j, i + 1)] * dj;
            }
            d.push(activation.derivative(vi)? * upstream);
        }
        deltas[t] = d;
    }
    Ok(deltas)
}

/// Backprop gradient estimate `B[t][a][b] = delta[t][a] * x[t][b]`.
///
/// `loss_grad` is the loss gradient with respect to the trace's outputs.
/// Fails for threshold and absolute-value activations — the chain rule
/// has nothing to propagate through them.
pub fn bp_gradient(
    trace: &ForwardTrace,
    spec: &NetworkSpec,
    params: &ParameterSet,
    loss_grad: &[f64],
) -> Result<GradientEstimate> {
    let deltas = bp_deltas(trace, spec, params, loss_grad)?;
    let mut estimate = GradientEstimate::zeros_like_trace(trace);
    for t in 0..trace.transitions() {
        let x = trace.layer_input(t);
        let layer = estimate.layer_mut(t);
        for (a, &da) in deltas[t].iter().enumerate() {
            for (dst, &xb) in layer.row_mut(a).iter_mut().zip(x.iter()) {
                *dst = da * xb;
            }
        }
    }
    Ok(estimate)
}

/// A finite-difference estimate with its Monte-Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Brute-force central-difference estimate of `d E[loss] / d theta` for
/// one weight, using common random numbers.
///
/// Each of the `m` replicates draws one noise tensor and evaluates the
/// network at `theta + h` and `theta - h` under that identical noise; the
/// paired differences `(L+ - L-) / 2h` are averaged. Sharing the noise
/// across the pair is what keeps the variance manageable at small `h`.
/// This oracle is deliberately independent of both other estimators: it
/// touches neither score weights nor the chain rule.
pub fn fd_expected_gradient(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    observation: &Observation,
    loss: Loss,
    entry: ParamIndex,
    h: f64,
    m: usize,
    rng: &mut Stream,
) -> Result<FdEstimate> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    if m == 0 {
        return Err(Error::Config("replicate count must be at least 1".into()));
    }
    if entry.layer >= spec.transitions() {
        return Err(Error::Shape(format!("no transition {}", entry.layer)));
    }
    let (rows, cols) = spec.layer_shape(entry.layer);
    if entry.row >= rows || entry.col >= cols {
        return Err(Error::Shape(format!(
            "entry ({}, {}) outside layer {} shape {}x{}",
            entry.row, entry.col, entry.layer, rows, cols
        )));
    }

    let mut plus = params.clone();
    plus.layer_mut(entry.layer)[(entry.row, entry.col)] += h;
    let mut minus = params.clone();
    minus.layer_mut(entry.layer)[(entry.row, entry.col)] -= h;

    let base_seed = rng.next_u64();
    let mut moments = RunningMoments::new();
    for i in 0..m {
        let mut noise_rng = stream(derive_seed(base_seed, domains::ORACLE, i as u64));
        let noise = crate::network::draw_noise(spec, &mut noise_rng);
        let trace_plus = forward_with_noise(spec, &plus, input, &noise)?;
        let trace_minus = forward_with_noise(spec, &minus, input, &noise)?;
        let loss_plus = loss.value(trace_plus.output(), observation)?;
        let loss_minus = loss.value(trace_minus.output(), observation)?;
        moments.push((loss_plus - loss_minus) / (2.0 * h));
    }
    Ok(FdEstimate {
        value: moments.mean(),
        std_error: moments.std_error(),
    })
}

/// Streaming per-entry mean and standard error over gradient estimates.
#[derive(Clone, Debug)]
pub struct GradientMoments {
    count: u64,
    mean: GradientEstimate,
    m2: GradientEstimate,
}

impl GradientMoments {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            count: 0,
            mean: GradientEstimate::zeros(spec),
            m2: GradientEstimate::zeros(spec),
        }
    }

    pub fn push(&mut self, estimate: &GradientEstimate) {
        self.count += 1;
        let n = self.count as f64;
        for (t, layer) in estimate.layers().iter().enumerate() {
            let mean = self.mean.layers[t].as_mut_slice();
            let m2 = self.m2.layers[t].as_mut_slice();
            for (i, &v) in layer.as_slice().iter().enumerate() {
                let delta = v - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (v - mean[i]);
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &GradientEstimate {
        &self.mean
    }

    pub fn mean_entry(&self, index: ParamIndex) -> f64 {
        self.mean.entry(index)
    }

    /// Standard error of the mean for one entry.
    pub fn std_error_entry(&self, index: ParamIndex) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = self.m2.entry(index) / (self.count - 1) as f64;
        crate::math::sqrt(var / self.count as f64)
    }
}

/// Two-sample z-score `(a - b) / sqrt(se_a^2 + se_b^2)`.
///
/// Equal means with zero combined error score 0; unequal means with zero
/// combined error score infinity.
pub fn z_score(mean_a: f64, se_a: f64, mean_b: f64, se_b: f64) -> f64 {
    let denom = crate::math::sqrt(se_a * se_a + se_b * se_b);
    let diff = mean_a - mean_b;
    if denom == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses;
    use crate::network::{forward_deterministic, ActivationSpec};
    use crate::rng::stream;
    use alloc::vec;

    fn spec(widths: &[usize], activation: ActivationSpec, sigma2: f64) -> NetworkSpec {
        NetworkSpec::new(widths.to_vec(), activation, NoiseSpec::new(sigma2).unwrap()).unwrap()
    }

    fn sigmoid(widths: &[usize]) -> NetworkSpec {
        spec(widths, ActivationSpec::sigmoid(1.0).unwrap(), 4.0)
    }

    #[test]
    fn glr_entry_is_loss_times_signal_times_score() {
        // Single transition 1 -> 1, input signal x, forced noise r = 2.
        let net = sigmoid(&[1, 1]);
        let params = ParameterSet::from_layers(vec![
            Matrix::from_rows(&[&[0.0, 1.0]]).unwrap()
        ])
        .unwrap();
        let trace =
            forward_with_noise(&net, &params, &[1.0, 0.25], &[vec![2.0]]).unwrap();
        let estimate = glr_gradient(&trace, 1.0, net.noise());
        // Bias column: L * 1 * r / sigma^2 = 1 * 1 * 2 / 4.
        assert_eq!(estimate.layer(0)[(0, 0)], 0.5);
        // Signal column: L * 0.25 * 2 / 4.
        assert_eq!(estimate.layer(0)[(0, 1)], 0.125);
    }

    #[test]
    fn zero_loss_gives_zero_estimate() {
        let net = sigmoid(&[2, 3, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(1));
        let trace = forward(&net, &params, &[1.0, 0.3, -0.6], &mut stream(2)).unwrap();
        let estimate = glr_gradient(&trace, 0.0, net.noise());
        assert!(estimate.values().all(|v| v == 0.0));
    }

    #[test]
    fn averaged_estimate_with_one_replicate_matches_single_draw() {
        let net = sigmoid(&[2, 2, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(5));
        let input = [1.0, 0.4, -0.2];
        let obs = Observation::from_label(1, 2).unwrap();

        let mut rng = stream(11);
        let averaged = glr_gradient_averaged(
            &net,
            &params,
            &input,
            &obs,
            Loss::CrossEntropy,
            1,
            &mut rng,
        )
        .unwrap();

        // Reproduce the one replicate by hand from the derived seed.
        let mut rng2 = stream(11);
        let base = rng2.next_u64();
        let mut rep = stream(derive_seed(base, domains::REPLICATE, 0));
        let trace = forward(&net, &params, &input, &mut rep).unwrap();
        let loss = Loss::CrossEntropy.value(trace.output(), &obs).unwrap();
        let single = glr_gradient(&trace, loss, net.noise());
        assert_eq!(averaged, single);
    }

    #[test]
    fn averaged_estimate_variance_shrinks_like_one_over_k() {
        let net = sigmoid(&[2, 2, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(3));
        let input = [1.0, 0.7, -0.3];
        let obs = Observation::from_label(0, 2).unwrap();
        let index = ParamIndex {
            layer: 0,
            row: 1,
            col: 1,
        };

        let repetitions = 1000;
        let ks = [1usize, 10, 100];
        let mut log_points = Vec::new();
        for (slot, &k) in ks.iter().enumerate() {
            let mut moments = RunningMoments::new();
            for rep in 0..repetitions {
                let seed = derive_seed(99, domains::GRADCHECK, (slot * repetitions + rep) as u64);
                let mut rng = stream(seed);
                let estimate = glr_gradient_averaged(
                    &net,
                    &params,
                    &input,
                    &obs,
                    Loss::CrossEntropy,
                    k,
                    &mut rng,
                )
                .unwrap();
                moments.push(estimate.entry(index));
            }
            log_points.push((libm::log(k as f64), libm::log(moments.variance())));
        }

        // Least-squares slope over the three (log k, log var) points.
        let n = log_points.len() as f64;
        let mean_x: f64 = log_points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y: f64 = log_points.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = log_points
            .iter()
            .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
            .sum();
        let var_x: f64 = log_points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
        let slope = cov / var_x;
        assert!(
            (slope + 1.0).abs() < 0.2,
            "variance should scale like 1/k, log-log slope {slope}"
        );
    }

    #[test]
    fn chunked_reduction_is_insensitive_to_partial_grouping() {
        let net = sigmoid(&[2, 3, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(8));
        let input = [1.0, -0.5, 0.9];
        let obs = Observation::from_label(1, 2).unwrap();
        let k = 700; // spans three chunks

        let mut rng = stream(21);
        let (serial, serial_loss) = glr_gradient_averaged_with_loss(
            &net,
            &params,
            &input,
            &obs,
            Loss::CrossEntropy,
            k,
            &mut rng,
        )
        .unwrap();

        // Same decomposition computed out of order, combined in order.
        let mut rng2 = stream(21);
        let base = rng2.next_u64();
        let mut chunks: Vec<(usize, (GradientEstimate, f64))> = replicate_chunks(k)
            .enumerate()
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .map(|(i, range)| {
                (
                    i,
                    glr_chunk_sum(&net, &params, &input, &obs, Loss::CrossEntropy, base, range)
                        .unwrap(),
                )
            })
            .collect();
        chunks.sort_by_key(|(i, _)| *i);
        let (combined, combined_loss) =
            combine_glr_chunks(&net, chunks.into_iter().map(|(_, p)| p), k);

        assert_eq!(serial, combined);
        assert_eq!(serial_loss, combined_loss);
    }

    #[test]
    fn bp_single_layer_matches_hand_chain_rule() {
        // 2 -> 1 transition, theta = (0, 1, 1), input (1, 0.5, 0.5),
        // no noise: v = 1.0. With error signal e, the only delta is
        // e * phi'(v) and B = delta * x.
        let net = sigmoid(&[2, 1]);
        let params = ParameterSet::from_layers(vec![
            Matrix::from_rows(&[&[0.0, 1.0, 1.0]]).unwrap()
        ])
        .unwrap();
        let input = [1.0, 0.5, 0.5];
        let trace = forward_deterministic(&net, &params, &input).unwrap();
        assert_eq!(trace.pre_activations(0)[0], 1.0);

        let e = 0.7;
        let estimate = bp_gradient(&trace, &net, &params, &[e]).unwrap();

        let y = 1.0 / (1.0 + libm::exp(-1.0));
        let phi_prime = y * (1.0 - y);
        let delta = e * phi_prime;
        for (b, &xb) in input.iter().enumerate() {
            assert!(
                (estimate.layer(0)[(0, b)] - delta * xb).abs() < 1e-15,
                "column {b}"
            );
        }
    }

    #[test]
    fn bp_zero_loss_gradient_gives_zero_estimate() {
        let net = sigmoid(&[3, 4, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(14));
        let trace =
            forward_deterministic(&net, &params, &[1.0, 0.2, -0.7, 0.4]).unwrap();
        let estimate = bp_gradient(&trace, &net, &params, &[0.0, 0.0]).unwrap();
        assert!(estimate.values().all(|v| v == 0.0));
    }

    #[test]
    fn bp_refuses_discontinuous_activations() {
        let net = spec(&[2, 2, 2], ActivationSpec::threshold(), 4.0);
        let params = ParameterSet::init_uniform(&net, &mut stream(0));
        let trace = forward_deterministic(&net, &params, &[1.0, 0.5, 0.5]).unwrap();
        let err = bp_gradient(&trace, &net, &params, &[0.1, -0.1]).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));

        let net = spec(&[2, 2, 2], ActivationSpec::abs_value(), 4.0);
        let params = ParameterSet::init_uniform(&net, &mut stream(0));
        let trace = forward_deterministic(&net, &params, &[1.0, 0.5, 0.5]).unwrap();
        assert!(bp_gradient(&trace, &net, &params, &[0.1, -0.1]).is_err());
    }

    #[test]
    fn bp_matches_finite_differences_on_deterministic_net() {
        let net = sigmoid(&[3, 4, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(30));
        let input = [1.0, 0.8, -0.3, 0.5];
        let obs = Observation::from_label(1, 2).unwrap();

        let trace = forward_deterministic(&net, &params, &input).unwrap();
        let loss_grad = losses::cross_entropy_grad(trace.output(), &obs).unwrap();
        let bp = bp_gradient(&trace, &net, &params, &loss_grad).unwrap();

        let h = 1e-5;
        let eval = |p: &ParameterSet| {
            let t = forward_deterministic(&net, p, &input).unwrap();
            losses::cross_entropy(t.output(), &obs).unwrap()
        };
        for index in bp.indices().collect::<Vec<_>>() {
            let mut plus = params.clone();
            plus.layer_mut(index.layer)[(index.row, index.col)] += h;
            let mut minus = params.clone();
            minus.layer_mut(index.layer)[(index.row, index.col)] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let analytic = bp.entry(index);
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                ((fd - analytic) / denom).abs() < 1e-5,
                "{index:?}: fd {fd} vs bp {analytic}"
            );
        }
    }

    #[test]
    fn fd_oracle_is_zero_for_constant_loss() {
        // 0-1 loss with such a dominant correct output that no noise draw
        // at this variance flips the prediction in practice; the paired
        // differences then cancel exactly.
        let net = spec(&[1, 2], ActivationSpec::sigmoid(1.0).unwrap(), 0.0001);
        let params = ParameterSet::from_layers(vec![
            Matrix::from_rows(&[&[50.0, 0.0], &[-50.0, 0.0]]).unwrap(),
        ])
        .unwrap();
        let obs = Observation::from_label(0, 2).unwrap();
        let fd = fd_expected_gradient(
            &net,
            &params,
            &[1.0, 0.5],
            &obs,
            Loss::ZeroOne,
            ParamIndex {
                layer: 0,
                row: 0,
                col: 1,
            },
            0.05,
            2000,
            &mut stream(2),
        )
        .unwrap();
        assert_eq!(fd.value, 0.0);
        assert_eq!(fd.std_error, 0.0);
    }

    #[test]
    fn fd_oracle_matches_analytic_derivative_on_smooth_deterministic_net() {
        // Tiny noise variance makes the net effectively deterministic;
        // the central difference then reproduces the chain-rule value to
        // O(h^2).
        let net = spec(&[2, 2], ActivationSpec::sigmoid(1.0).unwrap(), 1e-12);
        let params = ParameterSet::from_layers(vec![
            Matrix::from_rows(&[&[0.1, 0.4, -0.3], &[-0.2, 0.25, 0.6]]).unwrap(),
        ])
        .unwrap();
        let input = [1.0, 0.9, -0.4];
        let obs = Observation::from_label(0, 2).unwrap();
        let index = ParamIndex {
            layer: 0,
            row: 0,
            col: 1,
        };

        let trace = forward_deterministic(&net, &params, &input).unwrap();
        let loss_grad = losses::cross_entropy_grad(trace.output(), &obs).unwrap();
        let analytic = bp_gradient(&trace, &net, &params, &loss_grad)
            .unwrap()
            .entry(index);

        let fd = fd_expected_gradient(
            &net,
            &params,
            &input,
            &obs,
            Loss::CrossEntropy,
            index,
            1e-5,
            100,
            &mut stream(7),
        )
        .unwrap();
        assert!(
            (fd.value - analytic).abs() < 1e-8,
            "fd {} vs analytic {analytic}",
            fd.value
        );
    }

    #[test]
    fn fd_oracle_finds_nonzero_derivative_through_step_activation_and_zero_one_loss() {
        // Each sample path is a step function of theta, but the expected
        // loss is smooth thanks to the neuronal noise; the oracle must
        // resolve a clearly nonzero derivative somewhere.
        let net = spec(&[2, 2, 2], ActivationSpec::threshold(), 4.0);
        let params = ParameterSet::init_uniform(&net, &mut stream(13));
        let input = [1.0, 0.8, -0.5];
        let obs = Observation::from_label(0, 2).unwrap();

        let mut best_ratio = 0.0_f64;
        for index in GradientEstimate::zeros(&net).indices().collect::<Vec<_>>() {
            let fd = fd_expected_gradient(
                &net,
                &params,
                &input,
                &obs,
                Loss::ZeroOne,
                index,
                0.05,
                40_000,
                &mut stream(17),
            )
            .unwrap();
            assert!(fd.value.is_finite());
            if fd.std_error > 0.0 {
                best_ratio = best_ratio.max(fd.value.abs() / fd.std_error);
            }
        }
        assert!(
            best_ratio > 5.0,
            "no parameter showed a clearly nonzero expected-loss derivative (best ratio {best_ratio})"
        );
    }

    #[test]
    fn estimator_shapes_are_congruent_with_parameters() {
        for widths in [&[2usize, 3, 2][..], &[4, 5, 3, 2][..], &[1, 1][..]] {
            let net = sigmoid(widths);
            let params = ParameterSet::init_uniform(&net, &mut stream(1));
            let input: Vec<f64> = core::iter::once(1.0)
                .chain((0..widths[0]).map(|i| 0.1 * i as f64))
                .collect();
            let obs = Observation::from_label(0, *widths.last().unwrap()).unwrap();

            let trace = forward(&net, &params, &input, &mut stream(2)).unwrap();
            let loss = Loss::CrossEntropy.value(trace.output(), &obs).unwrap();
            let glr = glr_gradient(&trace, loss, net.noise());
            assert!(glr.congruent_with(&net));

            let loss_grad = losses::cross_entropy_grad(trace.output(), &obs).unwrap();
            let bp = bp_gradient(&trace, &net, &params, &loss_grad).unwrap();
            assert!(bp.congruent_with(&net));
        }
    }

    #[test]
    fn z_score_handles_degenerate_errors() {
        assert_eq!(z_score(1.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0, 2.0, 0.0), f64::INFINITY);
        assert!((z_score(1.0, 0.3, 0.4, 0.4) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn negated_estimate_is_caught_by_the_z_score_detector() {
        // Detector sanity: corrupt a correct estimator by flipping one
        // entry's sign and confirm the z-score flags it.
        let net = sigmoid(&[2, 2]);
        let params = ParameterSet::init_uniform(&net, &mut stream(19));
        let input = [1.0, 0.6, -0.8];
        let obs = Observation::from_label(1, 2).unwrap();
        let index = ParamIndex {
            layer: 0,
            row: 0,
            col: 1,
        };

        let mut moments = GradientMoments::zeros(&net);
        let base = 909;
        let mut scratch = GradientEstimate::zeros(&net);
        for i in 0..200_000u64 {
            let mut rng = stream(derive_seed(base, domains::REPLICATE, i));
            let trace = forward(&net, &params, &input, &mut rng).unwrap();
            let loss = Loss::CrossEntropy.value(trace.output(), &obs).unwrap();
            scratch.scale(0.0);
            glr_accumulate(&trace, loss, net.noise().variance(), &mut scratch);
            moments.push(&scratch);
        }

        let fd = fd_expected_gradient(
            &net,
            &params,
            &input,
            &obs,
            Loss::CrossEntropy,
            index,
            0.05,
            50_000,
            &mut stream(23),
        )
        .unwrap();

        let honest = z_score(
            moments.mean_entry(index),
            moments.std_error_entry(index),
            fd.value,
            fd.std_error,
        );
        let corrupted = z_score(
            -moments.mean_entry(index),
            moments.std_error_entry(index),
            fd.value,
            fd.std_error,
        );
        assert!(honest.abs() <= 4.0, "honest estimator z = {honest}");
        assert!(corrupted.abs() > 3.0, "corrupted estimator z = {corrupted}");
    }
}
