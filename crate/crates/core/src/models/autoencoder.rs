//! Dense denoising autoencoder over the flattened `[values, mask]` window.
//!
//! Encoder widths `h1 .. hk`, a bottleneck, then the mirrored decoder. Hidden
//! layers use `tanh`; the output layer is linear.

use super::linalg::matmul;
use super::ParamBlock;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    /// Layer sizes from input to output.
    widths: Vec<usize>,
    /// Offsets of `(weights, bias)` per layer in the flat parameter vector.
    offsets: Vec<(usize, usize)>,
    count: usize,
}

pub(crate) struct Cache {
    activations: Vec<Vec<f64>>,
}

impl Autoencoder {
    pub fn new(len: usize, dims: usize, hidden: &[usize], bottleneck: usize) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || bottleneck == 0 {
            return Err(Error::Argument(
                "autoencoder needs at least one hidden width and all widths >= 1".into(),
            ));
        }
        let io = len * dims;
        let mut widths = vec![2 * io];
        widths.extend_from_slice(hidden);
        widths.push(bottleneck);
        widths.extend(hidden.iter().rev());
        widths.push(io);

        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut at = 0;
        for pair in widths.windows(2) {
            let w = at;
            at += pair[0] * pair[1];
            offsets.push((w, at));
            at += pair[1];
        }
        Ok(Self {
            widths,
            offsets,
            count: at,
        })
    }

    pub fn param_count(&self) -> usize {
        self.count
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        for (l, &(w, b)) in self.offsets.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            blocks.push(ParamBlock::new(w, fan_in * fan_out, fan_in));
            blocks.push(ParamBlock::new(b, fan_out, fan_in));
        }
        blocks
    }

    pub(crate) fn forward(&self, params: &[f64], observed: &[f64], mask: &[f64]) -> Cache {
        let mut input = Vec::with_capacity(observed.len() * 2);
        input.extend_from_slice(observed);
        input.extend_from_slice(mask);
        let last = self.offsets.len() - 1;
        let mut activations = vec![input];
        for (l, &(w, b)) in self.offsets.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let prev = &activations[l];
            let mut z = matmul(prev, &params[w..w + fan_in * fan_out], 1, fan_in, fan_out);
            for (v, bias) in z.iter_mut().zip(&params[b..b + fan_out]) {
                *v += bias;
                if l != last {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        Cache { activations }
    }

    pub(crate) fn output(cache: &Cache) -> &[f64] {
        cache.activations.last().expect("at least one layer")
    }

    pub(crate) fn backward(&self, params: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        let last = self.offsets.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..self.offsets.len()).rev() {
            let (w, b) = self.offsets[l];
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            if l != last {
                for (d, a) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let prev = &cache.activations[l];
            for (i, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &mut grad[w + i * fan_out..w + (i + 1) * fan_out];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += a * d;
                }
            }
            for (g, d) in grad[b..b + fan_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let weights = &params[w..w + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|i| {
                        weights[i * fan_out..(i + 1) * fan_out]
                            .iter()
                            .zip(&delta)
                            .map(|(wv, d)| wv * d)
                            .sum()
                    })
                    .collect();
            }
        }
    }
}
