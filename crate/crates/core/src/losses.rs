//! Losses between network outputs and one-hot observations.
//!
//! Cross-entropy is the smooth choice; the 0-1 loss is deliberately
//! discontinuous (0 for a correct argmax prediction, 1 otherwise) and is
//! the case that rules out chain-rule gradients entirely.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// A one-hot class observation: exactly one component is 1.
///
/// Stored as the hot index plus the number of classes, which makes the
/// invariant structural.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    classes: usize,
    hot: usize,
}

impl Observation {
    /// Observation with `1` at `hot` out of `classes` components.
    pub fn from_label(hot: usize, classes: usize) -> Result<Self> {
        if hot >= classes {
            return Err(Error::Config(format!(
                "label {hot} out of range for {classes} classes"
            )));
        }
        Ok(Self { classes, hot })
    }

    /// Validates an explicit one-hot vector.
    pub fn from_one_hot(one_hot: &[f64]) -> Result<Self> {
        let mut hot = None;
        for (i, &v) in one_hot.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::Config("one-hot vector has multiple ones".into()));
                }
                hot = Some(i);
            } else if v != 0.0 {
                return Err(Error::Config(format!(
                    "one-hot vector has non-binary component {v} at index {i}"
                )));
            }
        }
        match hot {
            Some(hot) => Ok(Self {
                classes: one_hot.len(),
                hot,
            }),
            None => Err(Error::Config("one-hot vector has no one".into())),
        }
    }

    pub fn hot_index(&self) -> usize {
        self.hot
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.classes];
        v[self.hot] = 1.0;
        v
    }
}

/// Index of the largest component; ties break to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction for overflow safety.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| math::exp(v - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

fn check_classes(x: &[f64], observation: &Observation) -> Result<()> {
    if x.len() != observation.classes() {
        return Err(Error::Shape(format!(
            "output has {} components but observation has {} classes",
            x.len(),
            observation.classes()
        )));
    }
    Ok(())
}

/// Cross-entropy `-log softmax(x)[hot]`, computed in log-sum-exp form.
pub fn cross_entropy(x: &[f64], observation: &Observation) -> Result<f64> {
    check_classes(x, observation)?;
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = x.iter().map(|&v| math::exp(v - m)).sum();
    Ok(m + math::ln(total) - x[observation.hot_index()])
}

/// Gradient of cross-entropy with respect to the outputs: `softmax(x) - o`.
pub fn cross_entropy_grad(x: &[f64], observation: &Observation) -> Result<Vec<f64>> {
    check_classes(x, observation)?;
    let mut g = softmax(x);
    g[observation.hot_index()] -= 1.0;
    Ok(g)
}

/// 0-1 loss: 0 when the argmax prediction matches the hot index, 1
/// otherwise. Softmax preserves argmax, so the raw outputs decide.
pub fn zero_one_loss(x: &[f64], observation: &Observation) -> Result<f64> {
    check_classes(x, observation)?;
    Ok(if argmax(x) == observation.hot_index() {
        0.0
    } else {
        1.0
    })
}

/// Loss selector used by training configurations and estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    CrossEntropy,
    ZeroOne,
}

impl Loss {
    pub fn value(&self, x: &[f64], observation: &Observation) -> Result<f64> {
        match self {
            Loss::CrossEntropy => cross_entropy(x, observation),
            Loss::ZeroOne => zero_one_loss(x, observation),
        }
    }

    /// Gradient with respect to the outputs; only cross-entropy has one.
    pub fn gradient(&self, x: &[f64], observation: &Observation) -> Result<Vec<f64>> {
        match self {
            Loss::CrossEntropy => cross_entropy_grad(x, observation),
            Loss::ZeroOne => Err(Error::Unsupported(
                "the 0-1 loss has no usable gradient".into(),
            )),
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Loss::CrossEntropy)
    }
}
