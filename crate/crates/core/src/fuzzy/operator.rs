//! Shallow feed-forward networks emulating fuzzy relational operators.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{ParamStore, TensorId};

/// Keeps every output strictly inside (0, 1) even when the logit saturates.
pub const OUTPUT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Le,
    Ge,
    Be,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Le, OpKind::Ge, OpKind::Be];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Le => "le",
            OpKind::Ge => "ge",
            OpKind::Be => "be",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One operator module: `2*dim -> hidden... -> 1`, tanh hidden units, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorModule {
    pub kind: OpKind,
    /// `(weight, bias)` per layer; the last layer has a single output unit.
    pub layers: Vec<(TensorId, TensorId)>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct OpCache {
    pub inputs: Array2<f64>,
    /// Post-tanh hidden activations (before dropout).
    hidden: Vec<Array2<f64>>,
    /// Inverted-dropout masks per hidden layer (already scaled by `1/(1-p)`).
    masks: Vec<Option<Array2<f64>>>,
    sigma: Array1<f64>,
    pub output: Array1<f64>,
}

impl OperatorModule {
    pub fn init<R: Rng>(
        kind: OpKind,
        dim: usize,
        hidden: &[usize],
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = 2 * dim;
        let widths: Vec<usize> = hidden.iter().copied().chain(std::iter::once(1)).collect();
        for (l, &width) in widths.iter().enumerate() {
            let std = (1.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w = Array2::from_shape_fn((fan_in, width), |_| normal.sample(rng));
            let b = Array2::zeros((1, width));
            let name = format!("op.{}.layer{l}", kind.as_str());
            layers.push((
                params.add(format!("{name}.weight"), w),
                params.add(format!("{name}.bias"), b),
            ));
            fan_in = width;
        }
        Self { kind, layers }
    }

    pub fn input_width(&self, params: &ParamStore) -> usize {
        params.get(self.layers[0].0).nrows()
    }

    /// Evaluates the module on each row of `inputs` (rows are `[a | b]`).
    pub fn forward<R: Rng>(
        &self,
        params: &ParamStore,
        inputs: Array2<f64>,
        dropout: Option<(f64, &mut R)>,
    ) -> OpCache {
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut masks = Vec::with_capacity(self.layers.len() - 1);
        let (rate, mut rng) = match dropout {
            Some((p, rng)) if p > 0.0 => (p, Some(rng)),
            _ => (0.0, None),
        };
        let mut current = inputs.clone();
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let mut z = current.dot(params.get(w));
            z += params.get(b);
            if l == last {
                let logits = z.column(0).to_owned();
                let sigma = logits.mapv(|v| 1.0 / (1.0 + (-v).exp()));
                let output = sigma.mapv(|s| OUTPUT_MARGIN + (1.0 - 2.0 * OUTPUT_MARGIN) * s);
                return OpCache {
                    inputs,
                    hidden,
                    masks,
                    sigma,
                    output,
                };
            }
            z.mapv_inplace(f64::tanh);
            let mask = rng.as_mut().map(|rng| {
                let keep = 1.0 / (1.0 - rate);
                Array2::from_shape_fn(z.raw_dim(), |_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
            });
            current = match &mask {
                Some(m) => &z * m,
                None => z.clone(),
            };
            hidden.push(z);
            masks.push(mask);
        }
        unreachable!("operator modules have an output layer")
    }

    /// Accumulates parameter gradients for `d_output` and returns the gradient
    /// with respect to the inputs.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &OpCache,
        d_output: &[f64],
        grads: &mut ParamStore,
    ) -> Array2<f64> {
        let n = d_output.len();
        let dz: Array1<f64> = cache
            .sigma
            .iter()
            .zip(d_output)
            .map(|(s, g)| g * (1.0 - 2.0 * OUTPUT_MARGIN) * s * (1.0 - s))
            .collect();
        let mut delta = dz.into_shape_with_order((n, 1)).expect("column vector");
        for l in (0..self.layers.len()).rev() {
            let (w, b) = self.layers[l];
            let layer_input = if l == 0 {
                cache.inputs.clone()
            } else {
                match &cache.masks[l - 1] {
                    Some(m) => &cache.hidden[l - 1] * m,
                    None => cache.hidden[l - 1].clone(),
                }
            };
            *grads.get_mut(w) += &layer_input.t().dot(&delta);
            *grads.get_mut(b) += &delta.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut d_in = delta.dot(&params.get(w).t());
            if l == 0 {
                return d_in;
            }
            if let Some(m) = &cache.masks[l - 1] {
                d_in *= m;
            }
            let h = &cache.hidden[l - 1];
            d_in.zip_mut_with(h, |g, &a| *g *= 1.0 - a * a);
            delta = d_in;
        }
        unreachable!("loop returns at the input layer")
    }

    /// Unbatched evaluation of a single `(a, b)` pair without dropout.
    pub fn eval_pair(&self, params: &ParamStore, a: &[f64], b: &[f64]) -> f64 {
        let mut x = Array2::zeros((1, a.len() + b.len()));
        for (i, v) in a.iter().chain(b).enumerate() {
            x[[0, i]] = *v;
        }
        self.forward::<rand_chacha::ChaCha8Rng>(params, x, None).output[0]
    }
}
