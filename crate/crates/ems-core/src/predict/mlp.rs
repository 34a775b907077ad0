//! One-step velocity network: a three-layer perceptron (input window →
//! ten tanh nodes → linear output) rolled out recursively for multi-step
//! prediction.

use rand::Rng;

/// Fully-connected net with a single tanh hidden layer and scalar output.
/// Parameters are stored flat: `w1 (hidden×input) | b1 | w2 (hidden) | b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input_len: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn param_count(input_len: usize, hidden: usize) -> usize {
        hidden * input_len + hidden + hidden + 1
    }

    pub fn new(input_len: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let n = Self::param_count(input_len, hidden);
        let scale = (6.0 / (input_len + hidden) as f64).sqrt();
        let params = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Self { input_len, hidden, params }
    }

    pub fn from_params(input_len: usize, hidden: usize, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), Self::param_count(input_len, hidden));
        Self { input_len, hidden, params }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (ni, nh) = (self.input_len, self.hidden);
        let w1 = &self.params[0..nh * ni];
        let b1 = &self.params[nh * ni..nh * ni + nh];
        let w2 = &self.params[nh * ni + nh..nh * ni + 2 * nh];
        let b2 = self.params[nh * ni + 2 * nh];
        (w1, b1, w2, b2)
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_len);
        let (w1, b1, w2, b2) = self.split();
        let mut out = b2;
        for h in 0..self.hidden {
            let mut z = b1[h];
            for (i, &xi) in x.iter().enumerate() {
                z += w1[h * self.input_len + i] * xi;
            }
            out += w2[h] * z.tanh();
        }
        out
    }

    /// Mean-squared error and its parameter gradient over a batch of
    /// (window, target) pairs.
    pub fn loss_grad(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let (ni, nh) = (self.input_len, self.hidden);
        let (w1, b1, w2, b2) = self.split();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n = inputs.len() as f64;
        let mut hidden_act = vec![0.0; nh];
        for (x, &y) in inputs.iter().zip(targets) {
            let mut out = b2;
            for h in 0..nh {
                let mut z = b1[h];
                for (i, &xi) in x.iter().enumerate() {
                    z += w1[h * ni + i] * xi;
                }
                hidden_act[h] = z.tanh();
                out += w2[h] * hidden_act[h];
            }
            let err = out - y;
            loss += err * err;
            let dout = 2.0 * err / n;
            // output layer
            for h in 0..nh {
                grad[nh * ni + nh + h] += dout * hidden_act[h];
            }
            grad[nh * ni + 2 * nh] += dout;
            // hidden layer
            for h in 0..nh {
                let dz = dout * w2[h] * (1.0 - hidden_act[h] * hidden_act[h]);
                for (i, &xi) in x.iter().enumerate() {
                    grad[h * ni + i] += dz * xi;
                }
                grad[nh * ni + h] += dz;
            }
        }
        (loss / n, grad)
    }
}
