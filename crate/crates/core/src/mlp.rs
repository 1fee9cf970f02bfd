//! Fully connected tanh network over a flat parameter slice.
//!
//! Layout per layer: weights (row-major, `out x in`) then biases. Hidden
//! layers use tanh, the output layer is linear.

use crate::linalg::{orthonormalize, DenseMatrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct MlpLayout {
    sizes: Vec<usize>,
}

/// Activations recorded by [`MlpLayout::forward_trace`] for backprop.
pub(crate) struct Trace {
    /// `inputs[l]` is the input to layer `l` (post-tanh for `l > 0`).
    inputs: Vec<Vec<f64>>,
}

impl MlpLayout {
    /// `sizes = [input, hidden..., output]`
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "bad layer sizes {sizes:?}");
        Self { sizes }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            h = self.layer_forward(params, l, &h);
            if l + 1 < self.num_layers() {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }

    pub fn forward_trace(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Trace) {
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            let mut z = self.layer_forward(params, l, &h);
            inputs.push(h);
            if l + 1 < self.num_layers() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
        }
        (h, Trace { inputs })
    }

    fn layer_forward(&self, params: &[f64], l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        debug_assert_eq!(x.len(), n_in);
        let off = self.offset(l);
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        (0..n_out)
            .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    /// Accumulates `scale · d(output · d_out)/d(params)` into `grad`.
    pub fn backward(&self, params: &[f64], trace: &Trace, d_out: &[f64], scale: f64, grad: &mut [f64]) {
        let mut delta: Vec<f64> = d_out.iter().map(|g| g * scale).collect();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let input = &trace.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, x) in gw.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &params[off..off + n_in * n_out];
                // input[l] = tanh(z), so dz = dh * (1 - h^2)
                delta = (0..n_in)
                    .map(|i| {
                        let dh: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                        dh * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
    }

    /// Orthogonal init (gain 1) for hidden layers, `output_gain` for the
    /// last layer, zero biases.
    pub fn init(&self, rng: &mut SeededRng, output_gain: f64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == self.num_layers() { output_gain } else { 1.0 };
            if gain == 0.0 {
                continue;
            }
            let w = orthogonal(rng, n_out, n_in);
            let off = self.offset(l);
            for o in 0..n_out {
                for i in 0..n_in {
                    params[off + o * n_in + i] = gain * w[(o, i)];
                }
            }
        }
        params
    }
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is fewer).
fn orthogonal(rng: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = crate::linalg::gaussian_matrix(rng, tall, short).expect("non-empty layer");
    let q = orthonormalize(&g, 1e-12).expect("valid tolerance").q;
    // A square Gaussian matrix is full rank with probability one; fall back
    // to the raw draw in the measure-zero case.
    let q = if q.cols() == short { q } else { g };
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count() {
        assert_eq!(MlpLayout::new(vec![4, 8, 8, 2]).num_params(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let layout = MlpLayout::new(vec![3, 5, 4, 2]);
        let mut rng = SeededRng::new(3, 0);
        let mut params = layout.init(&mut rng, 1.0);
        params.iter_mut().enumerate().for_each(|(i, p)| *p += 0.01 * (i as f64).sin());
        let x = [0.3, -0.7, 1.1];
        let d_out = [0.4, -1.3];
        let (_, trace) = layout.forward_trace(&params, &x);
        let mut grad = vec![0.0; params.len()];
        layout.backward(&params, &trace, &d_out, 1.0, &mut grad);

        let objective = |p: &[f64]| {
            let y = layout.forward(p, &x);
            y[0] * d_out[0] + y[1] * d_out[1]
        };
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn init_hidden_rows_are_orthonormal() {
        let layout = MlpLayout::new(vec![4, 8, 2]);
        let params = layout.init(&mut SeededRng::new(1, 1), 0.01);
        // first layer: 8 x 4, columns orthonormal
        let w = DenseMatrix::from_vec(8, 4, params[..32].to_vec()).unwrap();
        let gram = w.tr_matmul(&w);
        assert!(gram.sub(&DenseMatrix::identity(4)).max_abs() < 1e-12);
        let out = &params[32 + 8..32 + 8 + 16];
        assert!(out.iter().all(|v| v.abs() <= 0.01 + 1e-15));
    }
}
