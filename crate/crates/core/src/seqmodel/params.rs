use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::tensor::Matrix;
use super::ModelError;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    /// Projection of the sinusoidal relative-position table.
    pub w_r: Matrix,
    /// Global content bias, one `1 × d` row split across heads.
    pub bias_u: Matrix,
    /// Global position bias, laid out like `bias_u`.
    pub bias_w: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_1: Matrix,
    pub b_1: Matrix,
    pub w_2: Matrix,
    pub b_2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `d × V`; absent when tied to the embedding.
    pub output: Option<Matrix>,
}

impl LayerParams {
    fn zeros(c: &ModelConfig) -> Self {
        let (d, f) = (c.model_dim, c.ffn_dim);
        LayerParams {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            w_o: Matrix::zeros(d, d),
            w_r: Matrix::zeros(d, d),
            bias_u: Matrix::zeros(1, d),
            bias_w: Matrix::zeros(1, d),
            ln1_gain: Matrix::zeros(1, d),
            ln1_bias: Matrix::zeros(1, d),
            w_1: Matrix::zeros(d, f),
            b_1: Matrix::zeros(1, f),
            w_2: Matrix::zeros(f, d),
            b_2: Matrix::zeros(1, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_bias: Matrix::zeros(1, d),
        }
    }

    fn named(&self) -> [(&'static str, &Matrix); 15] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("w_r", &self.w_r),
            ("bias_u", &self.bias_u),
            ("bias_w", &self.bias_w),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w_1", &self.w_1),
            ("b_1", &self.b_1),
            ("w_2", &self.w_2),
            ("b_2", &self.b_2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Matrix); 15] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("w_r", &mut self.w_r),
            ("bias_u", &mut self.bias_u),
            ("bias_w", &mut self.bias_w),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("w_1", &mut self.w_1),
            ("b_1", &mut self.b_1),
            ("w_2", &mut self.w_2),
            ("b_2", &mut self.b_2),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }
}

impl ModelParams {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, v) = (config.model_dim, config.vocab_size);
        Ok(ModelParams {
            config,
            embedding: Matrix::zeros(v, d),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(&config)).collect(),
            output: (!config.tie_embeddings).then(|| Matrix::zeros(d, v)),
        })
    }

    /// Gaussian initialization (std 0.02) from `config.seed`; layer-norm
    /// gains start at 1 and every bias at 0.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, m) in p.tensors_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.starts_with("ln") && leaf.ends_with("gain") {
                m.data.iter_mut().for_each(|x| *x = 1.0);
            } else if leaf.starts_with('b') || leaf.ends_with("bias") {
                // biases, including the two position biases, start at zero
            } else {
                m.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named().into_iter().map(|(n, m)| (format!("layers.{i}.{n}"), m)));
        }
        if let Some(o) = &self.output {
            out.push(("output".to_string(), o));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.named_mut().into_iter().map(|(n, m)| (format!("layers.{i}.{n}"), m)));
        }
        if let Some(o) = &mut self.output {
            out.push(("output".to_string(), o));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, m)| m.data.iter()).map(|x| x * x).sum()
    }

    /// Check every tensor against the shapes implied by the config.
    pub fn validate(&self) -> Result<(), ModelError> {
        let reference = Self::zeros(self.config)?;
        let ours = self.tensors();
        let theirs = reference.tensors();
        if ours.len() != theirs.len() {
            return Err(ModelError::InvalidArgument("tensor count does not match config".into()));
        }
        for ((name, m), (_, r)) in ours.iter().zip(&theirs) {
            if m.shape() != r.shape() || m.data.len() != m.rows * m.cols {
                return Err(ModelError::InvalidArgument(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    m.shape(),
                    r.shape()
                )));
            }
        }
        if !self.is_finite() {
            return Err(ModelError::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }
}
