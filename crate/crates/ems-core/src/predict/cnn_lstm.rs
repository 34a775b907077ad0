//! Sequence-to-horizon velocity network: a 1-D convolution over the fused
//! (history, planned) input, a recurrent layer with input, forget and output
//! gating, and a dense head mapping the final hidden state to the prediction
//! horizon. Forward and backward passes are written out by hand and verified
//! against central finite differences.

use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Input layout: `x[t * channels + c]`, length `seq_len · channels`.
/// Parameter layout, flat:
/// `conv_w | conv_b | wx(i,f,g,o) | wh(i,f,g,o) | b(i,f,g,o) | dense_w | dense_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnLstm {
    pub seq_len: usize,
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

struct Offsets {
    conv_w: usize,
    conv_b: usize,
    wx: usize,
    wh: usize,
    b: usize,
    dense_w: usize,
    dense_b: usize,
    total: usize,
}

impl CnnLstm {
    fn offsets(seq_len: usize, channels: usize, filters: usize, kernel: usize, hidden: usize, outputs: usize) -> Offsets {
        let _ = seq_len;
        let conv_w = 0;
        let conv_b = conv_w + filters * kernel * channels;
        let wx = conv_b + filters;
        let wh = wx + 4 * hidden * filters;
        let b = wh + 4 * hidden * hidden;
        let dense_w = b + 4 * hidden;
        let dense_b = dense_w + outputs * hidden;
        let total = dense_b + outputs;
        Offsets { conv_w, conv_b, wx, wh, b, dense_w, dense_b, total }
    }

    pub fn param_count(&self) -> usize {
        Self::offsets(self.seq_len, self.channels, self.filters, self.kernel, self.hidden, self.outputs).total
    }

    /// Convolution output length (valid padding).
    pub fn conv_len(&self) -> usize {
        self.seq_len - self.kernel + 1
    }

    pub fn new(
        seq_len: usize,
        channels: usize,
        filters: usize,
        kernel: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(seq_len >= kernel, "sequence shorter than kernel");
        let off = Self::offsets(seq_len, channels, filters, kernel, hidden, outputs);
        let mut params = vec![0.0; off.total];
        let mut init = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, rng: &mut dyn rand::RngCore| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for i in range {
                params[i] = rng.gen_range(-s..s);
            }
        };
        init(off.conv_w..off.conv_b, kernel * channels, filters, rng);
        init(off.wx..off.wh, filters, hidden, rng);
        init(off.wh..off.b, hidden, hidden, rng);
        init(off.dense_w..off.dense_b, hidden, outputs, rng);
        let mut net = Self { seq_len, channels, filters, kernel, hidden, outputs, params };
        // forget-gate bias starts open so early training does not wash out
        // the cell state
        let off = Self::offsets(seq_len, channels, filters, kernel, hidden, outputs);
        for h in 0..hidden {
            net.params[off.b + hidden + h] = 1.0;
        }
        net
    }

    pub fn from_params(
        seq_len: usize,
        channels: usize,
        filters: usize,
        kernel: usize,
        hidden: usize,
        outputs: usize,
        params: Vec<f64>,
    ) -> Self {
        let net = Self { seq_len, channels, filters, kernel, hidden, outputs, params };
        assert_eq!(net.params.len(), net.param_count());
        net
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).outputs
    }

    fn forward_cached(&self, x: &[f64]) -> Cache {
        debug_assert_eq!(x.len(), self.seq_len * self.channels);
        let off = Self::offsets(self.seq_len, self.channels, self.filters, self.kernel, self.hidden, self.outputs);
        let p = &self.params;
        let (tc, f_n, k_n, c_n, h_n) = (self.conv_len(), self.filters, self.kernel, self.channels, self.hidden);

        // convolution + rectifier
        let mut pre = vec![0.0; tc * f_n];
        let mut act = vec![0.0; tc * f_n];
        for t in 0..tc {
            for f in 0..f_n {
                let mut z = p[off.conv_b + f];
                for k in 0..k_n {
                    for c in 0..c_n {
                        z += p[off.conv_w + (f * k_n + k) * c_n + c] * x[(t + k) * c_n + c];
                    }
                }
                pre[t * f_n + f] = z;
                act[t * f_n + f] = z.max(0.0);
            }
        }

        // recurrent layer
        let mut gates = vec![0.0; tc * 4 * h_n]; // σ/tanh-activated, gate-major per step
        let mut cells = vec![0.0; tc * h_n];
        let mut tanh_c = vec![0.0; tc * h_n];
        let mut hiddens = vec![0.0; tc * h_n];
        let mut h_prev = vec![0.0; h_n];
        let mut c_prev = vec![0.0; h_n];
        for t in 0..tc {
            for g in 0..4 {
                for h in 0..h_n {
                    let mut u = p[off.b + g * h_n + h];
                    for f in 0..f_n {
                        u += p[off.wx + (g * h_n + h) * f_n + f] * act[t * f_n + f];
                    }
                    for j in 0..h_n {
                        u += p[off.wh + (g * h_n + h) * h_n + j] * h_prev[j];
                    }
                    gates[t * 4 * h_n + g * h_n + h] = if g == 2 { u.tanh() } else { sigmoid(u) };
                }
            }
            for h in 0..h_n {
                let gi = gates[t * 4 * h_n + h];
                let gf = gates[t * 4 * h_n + h_n + h];
                let gg = gates[t * 4 * h_n + 2 * h_n + h];
                let go = gates[t * 4 * h_n + 3 * h_n + h];
                let c = gf * c_prev[h] + gi * gg;
                cells[t * h_n + h] = c;
                tanh_c[t * h_n + h] = c.tanh();
                hiddens[t * h_n + h] = go * tanh_c[t * h_n + h];
            }
            h_prev.copy_from_slice(&hiddens[t * h_n..(t + 1) * h_n]);
            c_prev.copy_from_slice(&cells[t * h_n..(t + 1) * h_n]);
        }

        // dense head off the final hidden state
        let last = &hiddens[(tc - 1) * h_n..tc * h_n];
        let mut outputs = vec![0.0; self.outputs];
        for j in 0..self.outputs {
            let mut y = p[off.dense_b + j];
            for h in 0..h_n {
                y += p[off.dense_w + j * h_n + h] * last[h];
            }
            outputs[j] = y;
        }

        Cache { x: x.to_vec(), pre, act, gates, cells, tanh_c, hiddens, outputs }
    }

    /// Batch mean-squared error (averaged over samples and outputs) and its
    /// parameter gradient.
    pub fn loss_grad(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let cache = self.forward_cached(x);
            let scale = 1.0 / (xs.len() * self.outputs) as f64;
            let mut dy = vec![0.0; self.outputs];
            for j in 0..self.outputs {
                let err = cache.outputs[j] - y[j];
                loss += err * err * scale;
                dy[j] = 2.0 * err * scale;
            }
            self.backward(&cache, &dy, &mut grad);
        }
        (loss, grad)
    }

    fn backward(&self, cache: &Cache, dy: &[f64], grad: &mut [f64]) {
        let off = Self::offsets(self.seq_len, self.channels, self.filters, self.kernel, self.hidden, self.outputs);
        let p = &self.params;
        let (tc, f_n, k_n, c_n, h_n) = (self.conv_len(), self.filters, self.kernel, self.channels, self.hidden);

        let last = &cache.hiddens[(tc - 1) * h_n..tc * h_n];
        let mut dh = vec![0.0; h_n];
        for j in 0..self.outputs {
            grad[off.dense_b + j] += dy[j];
            for h in 0..h_n {
                grad[off.dense_w + j * h_n + h] += dy[j] * last[h];
                dh[h] += p[off.dense_w + j * h_n + h] * dy[j];
            }
        }

        let mut dact = vec![0.0; tc * f_n];
        let mut dc_next = vec![0.0; h_n];
        let mut dgate = vec![0.0; 4 * h_n];
        for t in (0..tc).rev() {
            let g_i = &cache.gates[t * 4 * h_n..t * 4 * h_n + h_n];
            let g_f = &cache.gates[t * 4 * h_n + h_n..t * 4 * h_n + 2 * h_n];
            let g_g = &cache.gates[t * 4 * h_n + 2 * h_n..t * 4 * h_n + 3 * h_n];
            let g_o = &cache.gates[t * 4 * h_n + 3 * h_n..t * 4 * h_n + 4 * h_n];
            for h in 0..h_n {
                let th = cache.tanh_c[t * h_n + h];
                let dc = dc_next[h] + dh[h] * g_o[h] * (1.0 - th * th);
                let c_prev = if t > 0 { cache.cells[(t - 1) * h_n + h] } else { 0.0 };
                dgate[h] = dc * g_g[h] * g_i[h] * (1.0 - g_i[h]);
                dgate[h_n + h] = dc * c_prev * g_f[h] * (1.0 - g_f[h]);
                dgate[2 * h_n + h] = dc * g_i[h] * (1.0 - g_g[h] * g_g[h]);
                dgate[3 * h_n + h] = dh[h] * th * g_o[h] * (1.0 - g_o[h]);
                dc_next[h] = dc * g_f[h];
            }
            let h_prev_slice = if t > 0 {
                Some(&cache.hiddens[(t - 1) * h_n..t * h_n])
            } else {
                None
            };
            let mut dh_prev = vec![0.0; h_n];
            for g in 0..4 {
                for h in 0..h_n {
                    let d = dgate[g * h_n + h];
                    grad[off.b + g * h_n + h] += d;
                    for f in 0..f_n {
                        grad[off.wx + (g * h_n + h) * f_n + f] += d * cache.act[t * f_n + f];
                        dact[t * f_n + f] += p[off.wx + (g * h_n + h) * f_n + f] * d;
                    }
                    if let Some(hp) = h_prev_slice {
                        for j in 0..h_n {
                            grad[off.wh + (g * h_n + h) * h_n + j] += d * hp[j];
                            dh_prev[j] += p[off.wh + (g * h_n + h) * h_n + j] * d;
                        }
                    }
                }
            }
            dh = dh_prev;
        }

        // convolution backward through the rectifier
        for t in 0..tc {
            for f in 0..f_n {
                if cache.pre[t * f_n + f] <= 0.0 {
                    continue;
                }
                let dz = dact[t * f_n + f];
                grad[off.conv_b + f] += dz;
                for k in 0..k_n {
                    for c in 0..c_n {
                        grad[off.conv_w + (f * k_n + k) * c_n + c] += dz * cache.x[(t + k) * c_n + c];
                    }
                }
            }
        }
    }
}

struct Cache {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_c: Vec<f64>,
    hiddens: Vec<f64>,
    outputs: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric_grad(net: &CnnLstm, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<f64> {
        let h = 1e-5;
        let mut g = vec![0.0; net.params.len()];
        for i in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            g[i] = (plus.loss_grad(xs, ys).0 - minus.loss_grad(xs, ys).0) / (2.0 * h);
        }
        g
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = CnnLstm::new(6, 2, 3, 3, 4, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (_, analytic) = net.loss_grad(&xs, &ys);
        let numeric = numeric_grad(&net, &xs, &ys);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                ((a - n) / denom).abs() < 1e-4,
                "param {i}: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = CnnLstm::new(8, 2, 4, 3, 5, 3, &mut rng);
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(net.forward(&x), net.forward(&x));
    }

    #[test]
    fn seeded_construction_is_reproducible() {
        let a = CnnLstm::new(8, 2, 4, 3, 5, 3, &mut ChaCha8Rng::seed_from_u64(42));
        let b = CnnLstm::new(8, 2, 4, 3, 5, 3, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a.params, b.params);
    }
}
