//! Minimal dense-attention building blocks on `DMatrix<f64>`: linear layers,
//! layer normalization, masked multi-head attention and pre-norm transformer
//! blocks. Weights initialize uniformly in `±1/sqrt(fan_in)` from a seeded
//! stream; biases start at zero; output projections optionally start at zero
//! so every block is the identity on its input.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    /// `out_dim x in_dim`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn init(rng: &mut impl Rng, out_dim: usize, in_dim: usize) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weight = DMatrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-scale..scale));
        Self {
            weight,
            bias: DVector::zeros(out_dim),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: DMatrix::zeros(out_dim, in_dim),
            bias: DVector::zeros(out_dim),
        }
    }

    /// Row-wise application: `x` is `n x in_dim`, result `n x out_dim`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.weight.transpose();
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: DVector::from_element(dim, 1.0),
            beta: DVector::zeros(dim),
            eps: 1e-5,
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let d = x.ncols() as f64;
        let mut out = x.clone();
        for mut row in out.row_iter_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let denom = (var + self.eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) / denom * self.gamma[j] + self.beta[j];
            }
        }
        out
    }
}

/// Multi-head attention with an optional key validity mask. Rows attend only
/// to keys whose mask bit is true; a row with no valid key contributes zero.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub fn init(rng: &mut impl Rng, d_model: usize, n_heads: usize, zero_output: bool) -> Self {
        assert!(d_model.is_multiple_of(n_heads), "d_model must split across heads");
        let wq = Linear::init(rng, d_model, d_model);
        let wk = Linear::init(rng, d_model, d_model);
        let wv = Linear::init(rng, d_model, d_model);
        let wo = if zero_output {
            // Burn the same amount of randomness either way so toggling the
            // zero-projection flag does not shift later initializations.
            let _ = Linear::init(rng, d_model, d_model);
            Linear::zeros(d_model, d_model)
        } else {
            Linear::init(rng, d_model, d_model)
        };
        Self {
            wq,
            wk,
            wv,
            wo,
            n_heads,
        }
    }

    /// `queries`: n x d, `keys_values`: m x d, `key_mask`: length m
    /// (`None` = all valid). Returns the attended output (n x d) and the
    /// per-head attention weights (each n x m; masked columns are zero).
    pub fn forward(
        &self,
        queries: &DMatrix<f64>,
        keys_values: &DMatrix<f64>,
        key_mask: Option<&[bool]>,
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = queries.nrows();
        let m = keys_values.nrows();
        let d_model = queries.ncols();
        let d_head = d_model / self.n_heads;
        let scale = 1.0 / (d_head as f64).sqrt();

        let q = self.wq.apply(queries);
        let k = self.wk.apply(keys_values);
        let v = self.wv.apply(keys_values);

        let valid: Vec<bool> = match key_mask {
            Some(mask) => mask.to_vec(),
            None => vec![true; m],
        };

        let mut attended = DMatrix::<f64>::zeros(n, d_model);
        let mut weights_per_head = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = h * d_head..(h + 1) * d_head;
            let qh = q.columns(cols.start, d_head);
            let kh = k.columns(cols.start, d_head);
            let vh = v.columns(cols.start, d_head);

            let mut weights = DMatrix::<f64>::zeros(n, m);
            for i in 0..n {
                let mut max_logit = f64::NEG_INFINITY;
                let mut logits = vec![0.0; m];
                for (j, l) in logits.iter_mut().enumerate() {
                    if !valid[j] {
                        continue;
                    }
                    *l = qh.row(i).dot(&kh.row(j)) * scale;
                    if *l > max_logit {
                        max_logit = *l;
                    }
                }
                if max_logit == f64::NEG_INFINITY {
                    continue; // no valid key: row attends to nothing
                }
                let mut sum = 0.0;
                for j in 0..m {
                    if valid[j] {
                        let w = (logits[j] - max_logit).exp();
                        weights[(i, j)] = w;
                        sum += w;
                    }
                }
                for j in 0..m {
                    weights[(i, j)] /= sum;
                }
            }
            let ctx = &weights * vh;
            attended.columns_mut(cols.start, d_head).copy_from(&ctx);
            weights_per_head.push(weights);
        }
        (self.wo.apply(&attended), weights_per_head)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn init(rng: &mut impl Rng, d_model: usize, hidden: usize, zero_output: bool) -> Self {
        let fc1 = Linear::init(rng, hidden, d_model);
        let fc2 = if zero_output {
            let _ = Linear::init(rng, d_model, hidden);
            Linear::zeros(d_model, hidden)
        } else {
            Linear::init(rng, d_model, hidden)
        };
        Self { fc1, fc2 }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = self.fc1.apply(x);
        h.apply(|v| *v = v.max(0.0));
        self.fc2.apply(&h)
    }
}

/// Pre-norm transformer block: `x += SelfAttn(LN(x))`, `x += FFN(LN(x))`.
/// With zero output projections both residual branches vanish and the block
/// is the identity.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl Block {
    pub fn init(rng: &mut impl Rng, d_model: usize, n_heads: usize, zero_output: bool) -> Self {
        Self {
            ln1: LayerNorm::new(d_model),
            attn: Attention::init(rng, d_model, n_heads, zero_output),
            ln2: LayerNorm::new(d_model),
            ffn: FeedForward::init(rng, d_model, 4 * d_model, zero_output),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>, mask: Option<&[bool]>) -> DMatrix<f64> {
        let normed = self.ln1.apply(x);
        let (attended, _) = self.attn.forward(&normed, &normed, mask);
        let x = x + attended;
        let normed = self.ln2.apply(&x);
        &x + self.ffn.apply(&normed)
    }
}
