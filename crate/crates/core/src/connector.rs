//! Forward arithmetic of the vision-language connector.
//!
//! Patch features from two encoder layers are concatenated, then each
//! `pool x pool` window of patches is reduced to one vector by multi-head
//! attention whose single query is the window mean. [`stack_pool`] is the
//! concatenation baseline.
//!
//! Projections are bias-free. Accumulation runs sequentially over keys and
//! then heads, so a given input always produces the same bits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("layer patch counts differ: {0} vs {1}")]
    PatchCountMismatch(usize, usize),
    #[error("feature dimension mismatch at patch {index}: expected {expected}, got {got}")]
    DimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("window has {got} features, expected {expected}")]
    WindowSize { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid pooling weights: {0}")]
    Weights(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ConnectorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchFeature(pub Vec<f64>);

impl PatchFeature {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PatchFeature {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ConnectorError::Weights(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let mut acc = 0.0;
                for (w, xi) in self.row(r).iter().zip(x) {
                    acc += w * xi;
                }
                acc
            })
            .collect()
    }
}

/// Query/key/value projections map `d_in -> d_model`; the output projection
/// maps `d_model -> d_out`. `heads` must divide `d_model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingWeights {
    pub heads: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

const BINARY_MAGIC: &[u8; 4] = b"PWT1";

impl PoolingWeights {
    pub fn new(heads: usize, wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix) -> Result<Self> {
        let w = Self { heads, wq, wk, wv, wo };
        w.validate()?;
        Ok(w)
    }

    pub fn d_in(&self) -> usize {
        self.wq.cols
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows
    }

    pub fn d_out(&self) -> usize {
        self.wo.rows
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConnectorError::Weights(m));
        if self.heads == 0 {
            return bad("head count must be positive".into());
        }
        let (d_model, d_in) = (self.wq.rows, self.wq.cols);
        if d_model == 0 || d_in == 0 {
            return bad("projection dimensions must be positive".into());
        }
        if d_model % self.heads != 0 {
            return bad(format!("{} heads do not divide d_model {d_model}", self.heads));
        }
        for (name, m) in [("wk", &self.wk), ("wv", &self.wv)] {
            if (m.rows, m.cols) != (d_model, d_in) {
                return bad(format!(
                    "{name} is {}x{}, expected {d_model}x{d_in}",
                    m.rows, m.cols
                ));
            }
        }
        if self.wo.cols != d_model || self.wo.rows == 0 {
            return bad(format!(
                "wo is {}x{}, expected d_out x {d_model}",
                self.wo.rows, self.wo.cols
            ));
        }
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            if m.data.len() != m.rows * m.cols {
                return bad("matrix data length does not match its shape".into());
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(ConnectorError::NonFinite("pooling weights"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat little-endian layout: magic `PWT1`, then `heads, d_in, d_model,
    /// d_out` as u32, then `wq, wk, wv, wo` as row-major f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        for dim in [self.heads, self.d_in(), self.d_model(), self.d_out()] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            for v in &m.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(ConnectorError::Weights("bad magic in weight file".into()));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut buf = [0u8; 4];
            input.read_exact(&mut buf)?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let [heads, d_in, d_model, d_out] = dims;
        let mut read_matrix = |rows: usize, cols: usize| -> Result<Matrix> {
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            Matrix::new(rows, cols, data)
        };
        let wq = read_matrix(d_model, d_in)?;
        let wk = read_matrix(d_model, d_in)?;
        let wv = read_matrix(d_model, d_in)?;
        let wo = read_matrix(d_out, d_model)?;
        Self::new(heads, wq, wk, wv, wo)
    }
}

fn check_uniform(features: &[PatchFeature], what: &'static str) -> Result<usize> {
    let dim = features.first().map_or(0, PatchFeature::dim);
    for (index, f) in features.iter().enumerate() {
        if f.dim() != dim {
            return Err(ConnectorError::DimMismatch {
                index,
                expected: dim,
                got: f.dim(),
            });
        }
        if f.0.iter().any(|v| !v.is_finite()) {
            return Err(ConnectorError::NonFinite(what));
        }
    }
    Ok(dim)
}

/// Per-patch concatenation `[a_i ; b_i]`.
pub fn concat_layers(layer_a: &[PatchFeature], layer_b: &[PatchFeature]) -> Result<Vec<PatchFeature>> {
    if layer_a.len() != layer_b.len() {
        return Err(ConnectorError::PatchCountMismatch(layer_a.len(), layer_b.len()));
    }
    check_uniform(layer_a, "layer a")?;
    check_uniform(layer_b, "layer b")?;
    Ok(layer_a
        .iter()
        .zip(layer_b)
        .map(|(a, b)| {
            let mut v = Vec::with_capacity(a.dim() + b.dim());
            v.extend_from_slice(&a.0);
            v.extend_from_slice(&b.0);
            PatchFeature(v)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput {
    pub pooled: Vec<f64>,
    /// Softmax weights over the window, one row per head.
    pub attention: Vec<Vec<f64>>,
}

/// Mean-query multi-head attention over one window.
pub fn attention_pool(window: &[PatchFeature], weights: &PoolingWeights) -> Result<Vec<f64>> {
    attention_pool_detailed(window, weights).map(|o| o.pooled)
}

pub fn attention_pool_detailed(window: &[PatchFeature], weights: &PoolingWeights) -> Result<PoolOutput> {
    if window.is_empty() {
        return Err(ConnectorError::WindowSize { expected: 4, got: 0 });
    }
    let dim = check_uniform(window, "pooling window")?;
    if dim != weights.d_in() {
        return Err(ConnectorError::DimMismatch {
            index: 0,
            expected: weights.d_in(),
            got: dim,
        });
    }

    let n = window.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in window {
        for (m, x) in mean.iter_mut().zip(&f.0) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let query = weights.wq.apply(&mean);
    let keys: Vec<Vec<f64>> = window.iter().map(|f| weights.wk.apply(&f.0)).collect();
    let values: Vec<Vec<f64>> = window.iter().map(|f| weights.wv.apply(&f.0)).collect();

    let head_dim = weights.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut context = vec![0.0; weights.d_model()];
    let mut attention = Vec::with_capacity(weights.heads);
    for h in 0..weights.heads {
        let span = h * head_dim..(h + 1) * head_dim;
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| {
                let mut dot = 0.0;
                for (q, kk) in query[span.clone()].iter().zip(&k[span.clone()]) {
                    dot += q * kk;
                }
                dot * scale
            })
            .collect();
        let probs = softmax(&scores);
        for (p, v) in probs.iter().zip(&values) {
            for (c, vv) in context[span.clone()].iter_mut().zip(&v[span.clone()]) {
                *c += p * vv;
            }
        }
        attention.push(probs);
    }

    let pooled = weights.wo.apply(&context);
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(ConnectorError::NonFinite("pooled output"));
    }
    Ok(PoolOutput { pooled, attention })
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Concatenates the window's features in row-major window order.
pub fn stack_pool(window: &[PatchFeature], pool_window: usize) -> Result<Vec<f64>> {
    let expected = pool_window * pool_window;
    if window.len() != expected {
        return Err(ConnectorError::WindowSize {
            expected,
            got: window.len(),
        });
    }
    check_uniform(window, "pooling window")?;
    Ok(window.iter().flat_map(|f| f.0.iter().copied()).collect())
}

/// Groups a row-major `rows x cols` patch grid into `pool x pool` windows,
/// returned in row-major window order.
pub fn pool_windows(
    features: &[PatchFeature],
    rows: usize,
    cols: usize,
    pool: usize,
) -> Result<Vec<Vec<PatchFeature>>> {
    if features.len() != rows * cols {
        return Err(ConnectorError::PatchCountMismatch(features.len(), rows * cols));
    }
    if pool == 0 || rows % pool != 0 || cols % pool != 0 {
        return Err(ConnectorError::WindowSize {
            expected: pool * pool,
            got: 0,
        });
    }
    let mut windows = Vec::with_capacity((rows / pool) * (cols / pool));
    for wr in (0..rows).step_by(pool) {
        for wc in (0..cols).step_by(pool) {
            let mut w = Vec::with_capacity(pool * pool);
            for r in wr..wr + pool {
                for c in wc..wc + pool {
                    w.push(features[r * cols + c].clone());
                }
            }
            windows.push(w);
        }
    }
    Ok(windows)
}
