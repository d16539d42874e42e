use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Uniform in `[-a, a]` with `a = 1 / sqrt(fan_in)`.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-a..=a)).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `y = W x + b`, weight stored `[out, in]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[n_out, n_in]), bias: Tensor::zeros(&[n_out]) }
    }

    pub fn random(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        Self { weight: Tensor::uniform(&[n_out, n_in], n_in, rng), bias: Tensor::uniform(&[n_out], n_in, rng) }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.n_in();
        debug_assert_eq!(x.len(), n_in);
        self.weight
            .data
            .chunks_exact(n_in)
            .zip(&self.bias.data)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns d/dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let n_in = self.n_in();
        let mut dx = vec![0.0; n_in];
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias.data[o] += d;
            let row = &self.weight.data[o * n_in..(o + 1) * n_in];
            let grow = &mut grad.weight.data[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] += d * x[i];
                dx[i] += d * row[i];
            }
        }
        dx
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through `max(0, x)`; the derivative at 0 is taken as 0.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(&p, &d)| if p > 0.0 { d } else { 0.0 }).collect()
}

/// Periodic 1-D convolution along the vertex axis.
///
/// `input` is `n x c_in` row-major, `kernel` is `[c_out, c_in, width]`, and
/// tap `k` of output row `i` reads input row `(i + k - width/2) mod n`.
pub fn circular_conv(input: &[f64], n: usize, c_in: usize, kernel: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    let (c_out, kc_in, width) = kernel_dims(kernel)?;
    if kc_in != c_in || input.len() != n * c_in || bias.len() != c_out {
        return Err(ModelError::ShapeMismatch(format!(
            "conv input {n}x{c_in} (len {}), kernel {:?}, bias {}",
            input.len(),
            kernel.shape,
            bias.len()
        )));
    }
    if n < width {
        return Err(ModelError::KernelTooWide { n, width });
    }
    let half = width / 2;
    let mut out = vec![0.0; n * c_out];
    for i in 0..n {
        for o in 0..c_out {
            let krow = &kernel.data[o * c_in * width..(o + 1) * c_in * width];
            let mut acc = bias[o];
            for k in 0..width {
                let j = (i + n + k - half) % n;
                let x = &input[j * c_in..(j + 1) * c_in];
                for c in 0..c_in {
                    acc += krow[c * width + k] * x[c];
                }
            }
            out[i * c_out + o] = acc;
        }
    }
    Ok(out)
}

/// Returns d/d(input); accumulates kernel and bias gradients.
pub fn circular_conv_backward(
    input: &[f64],
    n: usize,
    c_in: usize,
    kernel: &Tensor,
    dout: &[f64],
    dkernel: &mut Tensor,
    dbias: &mut [f64],
) -> Vec<f64> {
    let (c_out, _, width) = kernel_dims(kernel).expect("checked in forward");
    let half = width / 2;
    let mut din = vec![0.0; n * c_in];
    for i in 0..n {
        for o in 0..c_out {
            let d = dout[i * c_out + o];
            if d == 0.0 {
                continue;
            }
            dbias[o] += d;
            let base = o * c_in * width;
            for k in 0..width {
                let j = (i + n + k - half) % n;
                for c in 0..c_in {
                    dkernel.data[base + c * width + k] += d * input[j * c_in + c];
                    din[j * c_in + c] += d * kernel.data[base + c * width + k];
                }
            }
        }
    }
    din
}

fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize)> {
    match kernel.shape[..] {
        [o, i, w] if w % 2 == 1 && kernel.data.len() == o * i * w => Ok((o, i, w)),
        _ => Err(ModelError::ShapeMismatch(format!("kernel shape {:?} must be [out, in, odd width]", kernel.shape))),
    }
}
