//! Noisy feed-forward network: specification, parameters, forward passes.
//!
//! A network with signal widths `[m_1, ..., m_tau]` carries one weight
//! matrix per layer transition, of shape `m_{t+1} x (m_t + 1)`: column 0 is
//! the bias weight, paired with a constant-1 slot prepended to every
//! layer's signal vector. Each non-input neuron adds a zero-mean Gaussian
//! noise draw to its pre-activation signal:
//!
//! ```text
//! v_i = sum_j theta[i][j] * x[j] + r_i,    x'_i = phi(v_i)
//! ```
//!
//! [`forward`] records everything a gradient estimator could need — signal
//! vectors, pre-activations, and the exact noise draws — in a
//! [`ForwardTrace`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::{standard_normal, Stream};

/// Which nonlinearity the network's neurons apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    /// Logistic `1 / (1 + exp(-s v))` with slope `s`.
    SigmoidS,
    /// Step function: 1 for positive signals, 0 otherwise.
    Threshold,
    /// Absolute value `|v|`.
    AbsValue,
}

/// Activation function, with the slope parameter for the sigmoid family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationSpec {
    kind: ActivationKind,
    slope_s: f64,
}

impl ActivationSpec {
    /// Logistic activation with slope `s > 0`.
    pub fn sigmoid(slope_s: f64) -> Result<Self> {
        if !(slope_s > 0.0) || !slope_s.is_finite() {
            return Err(Error::Config(format!(
                "sigmoid slope must be positive and finite, got {slope_s}"
            )));
        }
        Ok(Self {
            kind: ActivationKind::SigmoidS,
            slope_s,
        })
    }

    /// Step activation. The tie `v = 0` maps to 0: the event has
    /// probability zero under Gaussian noise, and a fixed choice keeps
    /// forward passes deterministic.
    pub fn threshold() -> Self {
        Self {
            kind: ActivationKind::Threshold,
            slope_s: 1.0,
        }
    }

    /// Absolute-value activation.
    pub fn abs_value() -> Self {
        Self {
            kind: ActivationKind::AbsValue,
            slope_s: 1.0,
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn slope(&self) -> f64 {
        self.slope_s
    }

    /// Applies the activation to a signal value.
    #[inline]
    pub fn activate(&self, v: f64) -> f64 {
        match self.kind {
            ActivationKind::SigmoidS => 1.0 / (1.0 + math::exp(-self.slope_s * v)),
            ActivationKind::Threshold => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::AbsValue => math::abs(v),
        }
    }

    /// Derivative of the activation at `v`. Only the sigmoid is smooth;
    /// anything else is exactly what the chain rule cannot handle.
    #[inline]
    pub fn derivative(&self, v: f64) -> Result<f64> {
        match self.kind {
            ActivationKind::SigmoidS => {
                let y = self.activate(v);
                Ok(self.slope_s * y * (1.0 - y))
            }
            ActivationKind::Threshold => Err(Error::Unsupported(
                "threshold activation has no usable derivative".into(),
            )),
            ActivationKind::AbsValue => Err(Error::Unsupported(
                "absolute-value activation has no usable derivative".into(),
            )),
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.kind == ActivationKind::SigmoidS
    }
}

/// Per-neuron Gaussian noise: zero mean, common variance sigma^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    variance: f64,
}

impl NoiseSpec {
    pub fn new(variance_sigma2: f64) -> Result<Self> {
        if !(variance_sigma2 > 0.0) || !variance_sigma2.is_finite() {
            return Err(Error::Config(format!(
                "noise variance must be positive and finite, got {variance_sigma2}"
            )));
        }
        Ok(Self {
            variance: variance_sigma2,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        math::sqrt(self.variance)
    }
}

/// Architecture: signal widths per level (bias slots excluded), the
/// activation, and the neuronal noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    widths: Vec<usize>,
    activation: ActivationSpec,
    noise: NoiseSpec,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, activation: ActivationSpec, noise: NoiseSpec) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least input and output levels, got {} widths",
                widths.len()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        Ok(Self {
            widths,
            activation,
            noise,
        })
    }

    /// Signal widths per level, excluding the constant bias slots.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> &ActivationSpec {
        &self.activation
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of layer transitions (weight matrices).
    pub fn transitions(&self) -> usize {
        self.widths.len() - 1
    }

    /// Shape of the weight matrix for transition `t`: one row per
    /// receiving neuron, one column per sending slot including bias.
    pub fn layer_shape(&self, t: usize) -> (usize, usize) {
        (self.widths[t + 1], self.widths[t] + 1)
    }

    pub fn param_count(&self) -> usize {
        (0..self.transitions())
            .map(|t| {
                let (r, c) = self.layer_shape(t);
                r * c
            })
            .sum()
    }
}

/// All synaptic weights of a network: one matrix per layer transition,
/// bias weights in column 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    layers: Vec<Matrix>,
}

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = (0..spec.transitions())
            .map(|t| {
                let (r, c) = spec.layer_shape(t);
                Matrix::zeros(r, c)
            })
            .collect();
        Self { layers }
    }

    /// Seeded i.i.d. Uniform(-0.5, 0.5) initialization, entry by entry in
    /// layer order, row-major.
    pub fn init_uniform(spec: &NetworkSpec, rng: &mut Stream) -> Self {
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            for w in layer.as_mut_slice() {
                *w = rng.gen_range(-0.5..0.5);
            }
        }
        params
    }

    /// Wraps explicit matrices, checking finiteness. Congruence with a
    /// spec is checked separately via [`ParameterSet::congruent_with`].
    pub fn from_layers(layers: Vec<Matrix>) -> Result<Self> {
        for (t, layer) in layers.iter().enumerate() {
            if !layer.is_finite() {
                return Err(Error::Config(format!(
                    "layer {t} contains non-finite weights"
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn congruent_with(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.transitions()
            && self
                .layers
                .iter()
                .enumerate()
                .all(|(t, layer)| layer.shape() == spec.layer_shape(t))
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

    /// All weights in layer order, each layer row-major. The flat layout
    /// used by the checkpoint format.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|m| m.iter().copied())
    }

    /// Rebuilds a parameter set from the flat layout for `spec`.
    pub fn from_values(spec: &NetworkSpec, values: &[f64]) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "expected {} weights, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        let mut params = Self::zeros(spec);
        let mut offset = 0;
        for layer in &mut params.layers {
            let n = layer.rows() * layer.cols();
            layer.as_mut_slice().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        if params.layers.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("non-finite weight in flat values".into()));
        }
        Ok(params)
    }

    /// `self += a * grad`, layer by layer. Shapes must be congruent.
    pub(crate) fn axpy_layers(&mut self, a: f64, grad_layers: &[Matrix]) {
        debug_assert_eq!(self.layers.len(), grad_layers.len());
        for (layer, g) in self.layers.iter_mut().zip(grad_layers) {
            layer.axpy(a, g);
        }
    }
}

/// Everything one forward pass touched, enough to replay it exactly.
///
/// `inputs[t]` is the signal vector consumed by transition `t`, with the
/// constant 1 in slot 0. `pre_activations[t]` and `noise[t]` hold `v` and
/// `r` for the neurons of level `t + 1`. `output` is the final level's
/// activations, bias-free.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn transitions(&self) -> usize {
        self.inputs.len()
    }

    /// Signal vector entering transition `t`, bias slot included.
    pub fn layer_input(&self, t: usize) -> &[f64] {
        &self.inputs[t]
    }

    /// Pre-activation signals of the neurons fed by transition `t`.
    pub fn pre_activations(&self, t: usize) -> &[f64] {
        &self.pre_activations[t]
    }

    /// Noise draws added at the neurons fed by transition `t`.
    pub fn noise(&self, t: usize) -> &[f64] {
        &self.noise[t]
    }

    /// Final network outputs.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn check_forward_args(spec: &NetworkSpec, params: &ParameterSet, input: &[f64]) -> Result<()> {
    if !params.congruent_with(spec) {
        return Err(Error::Shape(
            "parameter set is not congruent with the network spec".into(),
        ));
    }
    if input.len() != spec.input_width() + 1 {
        return Err(Error::Shape(format!(
            "input has {} entries, expected {} (signals plus bias slot)",
            input.len(),
            spec.input_width() + 1
        )));
    }
    if input[0] != 1.0 {
        return Err(Error::Shape("input bias slot must hold exactly 1".into()));
    }
    Ok(())
}

/// Draws one noise tensor for `spec`: independent `Normal(0, sigma^2)`
/// per non-input neuron, level by level.
pub fn draw_noise(spec: &NetworkSpec, rng: &mut Stream) -> Vec<Vec<f64>> {
    let sd = spec.noise().std_dev();
    (0..spec.transitions())
        .map(|t| {
            (0..spec.widths()[t + 1])
                .map(|_| sd * standard_normal(rng))
                .collect()
        })
        .collect()
}

/// Forward pass with explicitly supplied noise draws.
///
/// This is the building block behind [`forward`] (fresh draws) and
/// [`forward_deterministic`] (all zeros), and is what common-random-number
/// oracles use to evaluate two parameter points under identical noise.
pub fn forward_with_noise(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    noise: &[Vec<f64>],
) -> Result<ForwardTrace> {
    check_forward_args(spec, params, input)?;
    if noise.len() != spec.transitions()
        || noise
            .iter()
            .enumerate()
            .any(|(t, r)| r.len() != spec.widths()[t + 1])
    {
        return Err(Error::Shape("noise tensor does not match the spec".into()));
    }

    let transitions = spec.transitions();
    let mut inputs = Vec::with_capacity(transitions);
    let mut pre_activations = Vec::with_capacity(transitions);
    let mut noise_out = Vec::with_capacity(transitions);

    let mut x = input.to_vec();
    let mut output = Vec::new();
    for t in 0..transitions {
        let weights = params.layer(t);
        let width_out = spec.widths()[t + 1];
        let mut v = Vec::with_capacity(width_out);
        for i in 0..width_out {
            let mut acc = 0.0;
            for (w, xj) in weights.row(i).iter().zip(x.iter()) {
                acc += w * xj;
            }
            v.push(acc + noise[t][i]);
        }

        let activation = spec.activation();
        if t + 1 == transitions {
            output = v.iter().map(|&vi| activation.activate(vi)).collect();
            inputs.push(core::mem::take(&mut x));
        } else {
            let mut next = Vec::with_capacity(width_out + 1);
            next.push(1.0);
            next.extend(v.iter().map(|&vi| activation.activate(vi)));
            inputs.push(core::mem::replace(&mut x, next));
        }
        pre_activations.push(v);
        noise_out.push(noise[t].clone());
    }

    Ok(ForwardTrace {
        inputs,
        pre_activations,
        noise: noise_out,
        output,
    })
}

/// Noisy forward pass: draws independent Gaussian noise at every
/// non-input neuron from `rng`, then evaluates the network.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    rng: &mut Stream,
) -> Result<ForwardTrace> {
    let noise = draw_noise(spec, rng);
    forward_with_noise(spec, params, input, &noise)
}

/// Noise-free forward pass, used for prediction and evaluation.
pub fn forward_deterministic(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
) -> Result<ForwardTrace> {
    let zeros: Vec<Vec<f64>> = (0..spec.transitions())
        .map(|t| vec![0.0; spec.widths()[t + 1]])
        .collect();
    forward_with_noise(spec, params, input, &zeros)
}
