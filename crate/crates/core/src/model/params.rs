//! Learnable parameters, their initialization, flattening for the
//! optimizer, and checkpoint serialization.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "icdq-model-v1";

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    #[default]
    GlorotUniform,
}

/// Training hyperparameters. Everything is explicit so a config echo
/// suffices to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    /// Positive-class weight for the BCE loss; `None` means the negative
    /// to positive count ratio of the training set.
    pub pos_weight: Option<f64>,
    pub seed: u64,
    pub tau: f64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 50,
            hidden_dim: 64,
            gnn_layers: 3,
            learning_rate: 1e-3,
            epochs: 100,
            l2_lambda: 1e-4,
            pos_weight: None,
            seed: 42,
            tau: 0.5,
            init: InitScheme::GlorotUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = self.embedding_dim > 0
            && self.hidden_dim > 0
            && self.gnn_layers > 0
            && self.learning_rate > 0.0
            && self.l2_lambda >= 0.0
            && self.pos_weight.map(|w| w > 0.0).unwrap_or(true);
        if !positive {
            return Err(ModelError::BadConfig("dimensions, rates and weights must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(ModelError::BadConfig("tau must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One message-passing layer: a self transform and a neighbor-sum transform.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

/// All learnable weights plus the decision threshold.
///
/// Orientation: node features are rows, weights apply on the right, so a
/// layer computes `X W1 + A X W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GnnLayer>,
    /// Query dense layer, `embedding_dim x hidden_dim`.
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    /// Classifier over `[node_repr; query_repr]`.
    pub wc: Array1<f64>,
    pub bc: f64,
    pub tau: f64,
}

impl ModelParams {
    /// Seeded Glorot-uniform initialization; biases start at zero.
    pub fn init(cfg: &TrainConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let InitScheme::GlorotUniform = cfg.init;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embedding_dim;
        let h = cfg.hidden_dim;

        let mut glorot = |rows: usize, cols: usize, fan_out: usize| {
            let a = (6.0 / (rows + fan_out) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
        };

        let mut layers = Vec::with_capacity(cfg.gnn_layers);
        let mut width = d;
        for _ in 0..cfg.gnn_layers {
            layers.push(GnnLayer { w1: glorot(width, h, h), w2: glorot(width, h, h) });
            width = h;
        }
        let wq = glorot(d, h, h);
        let wc_width = h + h;
        let a = (6.0 / (wc_width + 1) as f64).sqrt();
        let wc = Array1::from_iter((0..wc_width).map(|_| rng.random_range(-a..a)));

        Ok(Self {
            layers,
            wq,
            bq: Array1::zeros(h),
            wc,
            bc: 0.0,
            tau: cfg.tau,
        })
    }

    /// Input feature width expected by the first layer.
    pub fn input_dim(&self) -> usize {
        self.layers[0].w1.nrows()
    }

    /// Node representation width after the final layer.
    pub fn node_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w1.ncols()
    }

    /// Query representation width.
    pub fn query_dim(&self) -> usize {
        self.wq.ncols()
    }

    /// All learnable scalars in a fixed order: per layer W1 then W2
    /// (row-major), then Wq, bq, Wc, bc. `tau` is not learnable and is
    /// excluded.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.w1.iter());
            out.extend(layer.w2.iter());
        }
        out.extend(self.wq.iter());
        out.extend(self.bq.iter());
        out.extend(self.wc.iter());
        out.push(self.bc);
        out
    }

    /// Write flattened values back, inverse of [`Self::flatten`].
    pub fn assign_flat(&mut self, data: &[f64]) {
        assert_eq!(data.len(), self.param_count(), "flat vector length mismatch");
        let mut it = data.iter().copied();
        for layer in &mut self.layers {
            for v in layer.w1.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in layer.w2.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        for v in self.wq.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.bq.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.wc.iter_mut() {
            *v = it.next().unwrap();
        }
        self.bc = it.next().unwrap();
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w1.len() + l.w2.len()).sum::<usize>()
            + self.wq.len()
            + self.bq.len()
            + self.wc.len()
            + 1
    }

    /// Flat-order mask of entries subject to L2 regularization: weight
    /// matrices yes, biases no.
    pub fn l2_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            mask.extend(std::iter::repeat_n(true, layer.w1.len() + layer.w2.len()));
        }
        mask.extend(std::iter::repeat_n(true, self.wq.len()));
        mask.extend(std::iter::repeat_n(false, self.bq.len()));
        mask.extend(std::iter::repeat_n(true, self.wc.len()));
        mask.push(false);
        mask
    }

    /// Squared L2 norm of the weight matrices (biases excluded).
    pub fn weight_squared_norm(&self) -> f64 {
        let mut sum = 0.0;
        for layer in &self.layers {
            sum += layer.w1.iter().map(|v| v * v).sum::<f64>();
            sum += layer.w2.iter().map(|v| v * v).sum::<f64>();
        }
        sum += self.wq.iter().map(|v| v * v).sum::<f64>();
        sum += self.wc.iter().map(|v| v * v).sum::<f64>();
        sum
    }

    /// Named parameter tensors, for per-tensor diagnostics.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.layers.len() {
            names.push(format!("layer{i}.w1"));
            names.push(format!("layer{i}.w2"));
        }
        names.extend(["wq".into(), "bq".into(), "wc".into(), "bc".into()]);
        names
    }

    /// Flat-order index ranges matching [`Self::tensor_names`].
    pub fn tensor_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges = Vec::new();
        let mut at = 0usize;
        let mut push = |len: usize, at: &mut usize| {
            ranges.push(*at..*at + len);
            *at += len;
        };
        for layer in &self.layers {
            push(layer.w1.len(), &mut at);
            push(layer.w2.len(), &mut at);
        }
        push(self.wq.len(), &mut at);
        push(self.bq.len(), &mut at);
        push(self.wc.len(), &mut at);
        push(1, &mut at);
        ranges
    }

    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<(), ModelError> {
        let file = File::create(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let checkpoint = Checkpoint::from_params(self, config);
        serde_json::to_writer_pretty(BufWriter::new(file), &checkpoint)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, TrainConfig), ModelError> {
        let file = File::open(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        checkpoint.into_params()
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    /// Row-major values.
    data: Vec<f64>,
}

impl MatrixData {
    fn from_array(a: &Array2<f64>) -> Self {
        Self { rows: a.nrows(), cols: a.ncols(), data: a.iter().copied().collect() }
    }

    fn into_array(self) -> Result<Array2<f64>, ModelError> {
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))
    }
}

/// On-disk model format: dimensions, matrices row-major, config echo.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    embedding_dim: usize,
    hidden_dim: usize,
    gnn_layers: usize,
    tau: f64,
    w1: Vec<MatrixData>,
    w2: Vec<MatrixData>,
    wq: MatrixData,
    bq: Vec<f64>,
    wc: Vec<f64>,
    bc: f64,
    config: TrainConfig,
}

impl Checkpoint {
    fn from_params(params: &ModelParams, config: &TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            embedding_dim: params.input_dim(),
            hidden_dim: params.node_dim(),
            gnn_layers: params.layers.len(),
            tau: params.tau,
            w1: params.layers.iter().map(|l| MatrixData::from_array(&l.w1)).collect(),
            w2: params.layers.iter().map(|l| MatrixData::from_array(&l.w2)).collect(),
            wq: MatrixData::from_array(&params.wq),
            bq: params.bq.to_vec(),
            wc: params.wc.to_vec(),
            bc: params.bc,
            config: config.clone(),
        }
    }

    fn into_params(self) -> Result<(ModelParams, TrainConfig), ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::BadCheckpoint(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        if self.w1.len() != self.gnn_layers || self.w2.len() != self.w1.len() {
            return Err(ModelError::BadCheckpoint("layer count mismatch".into()));
        }
        let layers = self
            .w1
            .into_iter()
            .zip(self.w2)
            .map(|(w1, w2)| Ok(GnnLayer { w1: w1.into_array()?, w2: w2.into_array()? }))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let params = ModelParams {
            layers,
            wq: self.wq.into_array()?,
            bq: Array1::from(self.bq),
            wc: Array1::from(self.wc),
            bc: self.bc,
            tau: self.tau,
        };
        Ok((params, self.config))
    }
}
