//! Linear-plus-normalize encoders trained with the symmetric InfoNCE loss on
//! synthetic clustered pairs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{info_nce_grad, ContrastiveError, Temperature};

/// Shape of the synthetic pair generator. Each cluster owns a latent center;
/// a pair mixes one noisy latent into video and text features through two
/// fixed random maps, each with its own additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clusters: 4,
            per_cluster: 8,
            latent_dim: 4,
            input_dim: 16,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Row `i` of `video` and `text` form a pair from cluster `cluster[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedData {
    pub video: DMatrix<f64>,
    pub text: DMatrix<f64>,
    pub cluster: Vec<usize>,
}

impl PairedData {
    pub fn len(&self) -> usize {
        self.cluster.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster.is_empty()
    }

    /// Row indices grouped so that batch `r` holds the `r`-th pair of every
    /// cluster that has one. No batch repeats a cluster.
    pub fn cluster_batches(&self) -> Vec<Vec<usize>> {
        let mut seen: Vec<usize> = Vec::new();
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for (i, &c) in self.cluster.iter().enumerate() {
            if seen.len() <= c {
                seen.resize(c + 1, 0);
            }
            let r = seen[c];
            seen[c] += 1;
            if batches.len() <= r {
                batches.push(Vec::new());
            }
            batches[r].push(i);
        }
        batches
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// A training set of `clusters * per_cluster` pairs and a held-out set with
/// one fresh pair per cluster.
pub fn synthetic_split(cfg: &SyntheticConfig) -> Result<(PairedData, PairedData), ContrastiveError> {
    if cfg.clusters == 0 || cfg.per_cluster == 0 || cfg.latent_dim == 0 || cfg.input_dim == 0 {
        return Err(ContrastiveError::InvalidConfig(
            "synthetic sizes must be positive".into(),
        ));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(ContrastiveError::InvalidConfig(format!("noise {}", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = normal_matrix(&mut rng, cfg.clusters, cfg.latent_dim, 1.0);
    let mix_v = normal_matrix(&mut rng, cfg.latent_dim, cfg.input_dim, 1.0);
    let mix_t = normal_matrix(&mut rng, cfg.latent_dim, cfg.input_dim, 1.0);

    let mut draw = |per_cluster: usize| {
        let cluster: Vec<usize> = (0..cfg.clusters)
            .flat_map(|k| std::iter::repeat_n(k, per_cluster))
            .collect();
        let n = cluster.len();
        let latent = DMatrix::from_fn(n, cfg.latent_dim, |i, j| {
            centers[(cluster[i], j)] + cfg.noise * rng.sample::<f64, _>(StandardNormal)
        });
        let video = &latent * &mix_v + normal_matrix(&mut rng, n, cfg.input_dim, cfg.noise);
        let text = &latent * &mix_t + normal_matrix(&mut rng, n, cfg.input_dim, cfg.noise);
        PairedData { video, text, cluster }
    };
    let train = draw(cfg.per_cluster);
    let held_out = draw(1);
    Ok((train, held_out))
}

/// Two `input_dim x embed_dim` projections whose outputs are normalized,
/// plus the learnable temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoders {
    pub video: DMatrix<f64>,
    pub text: DMatrix<f64>,
    pub temperature: Temperature,
}

struct Encoded {
    z: DMatrix<f64>,
    norms: Vec<f64>,
}

fn encode(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Encoded {
    let mut z = x * w;
    let norms: Vec<f64> = z.row_iter().map(|r| r.norm()).collect();
    for (mut row, &n) in z.row_iter_mut().zip(&norms) {
        row /= n;
    }
    Encoded { z, norms }
}

/// Pulls `dz` back through `z = u / |u|`: `du = (dz - z (z . dz)) / |u|`.
fn normalize_backward(enc: &Encoded, dz: &DMatrix<f64>) -> DMatrix<f64> {
    let mut du = dz.clone();
    for (i, mut row) in du.row_iter_mut().enumerate() {
        let z = enc.z.row(i);
        let proj = z.dot(&dz.row(i));
        row -= z * proj;
        row /= enc.norms[i];
    }
    du
}

impl ToyEncoders {
    /// Gaussian init with variance `1 / input_dim`.
    pub fn random(input_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        ToyEncoders {
            video: normal_matrix(&mut rng, input_dim, embed_dim, scale),
            text: normal_matrix(&mut rng, input_dim, embed_dim, scale),
            temperature: Temperature::default(),
        }
    }

    pub fn encode_video(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        encode(x, &self.video).z
    }

    pub fn encode_text(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        encode(x, &self.text).z
    }

    fn check(&self, data: &PairedData) -> Result<(), ContrastiveError> {
        if data.is_empty() {
            return Err(ContrastiveError::EmptyBatch);
        }
        if data.video.ncols() != self.video.nrows() || data.text.ncols() != self.text.nrows() {
            return Err(ContrastiveError::DimensionMismatch(format!(
                "features {}/{} vs projections {}/{}",
                data.video.ncols(),
                data.text.ncols(),
                self.video.nrows(),
                self.text.nrows()
            )));
        }
        if self.video.ncols() != self.text.ncols() {
            return Err(ContrastiveError::DimensionMismatch("projection widths differ".into()));
        }
        Ok(())
    }

    /// Mean loss over [`PairedData::cluster_batches`], with gradients for
    /// both projections and `log_tau`.
    pub fn loss_and_grad(&self, data: &PairedData) -> Result<ToyGrad, ContrastiveError> {
        self.check(data)?;
        let batches = data.cluster_batches();
        let mut out = ToyGrad {
            loss: 0.0,
            d_video: DMatrix::zeros(self.video.nrows(), self.video.ncols()),
            d_text: DMatrix::zeros(self.text.nrows(), self.text.ncols()),
            d_log_tau: 0.0,
        };
        let scale = 1.0 / batches.len() as f64;
        for rows in &batches {
            let xv = data.video.select_rows(rows);
            let xt = data.text.select_rows(rows);
            let ev = encode(&xv, &self.video);
            let et = encode(&xt, &self.text);
            let g = info_nce_grad(&ev.z, &et.z, self.temperature)?;
            out.loss += scale * g.loss;
            out.d_video += scale * (xv.transpose() * normalize_backward(&ev, &g.d_zv));
            out.d_text += scale * (xt.transpose() * normalize_backward(&et, &g.d_zt));
            out.d_log_tau += scale * g.d_log_tau;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGrad {
    pub loss: f64,
    pub d_video: DMatrix<f64>,
    pub d_text: DMatrix<f64>,
    pub d_log_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub learn_temperature: bool,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            steps: 500,
            lr: 0.2,
            learn_temperature: true,
        }
    }
}

/// One loss-trace record, taken before the update of `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub encoders: ToyEncoders,
    pub trace: Vec<TracePoint>,
}

impl ToyRun {
    /// True when no trace entry in the last `window` exceeds its predecessor.
    pub fn trailing_non_increasing(&self, window: usize) -> bool {
        let start = self.trace.len().saturating_sub(window + 1);
        self.trace[start..].windows(2).all(|w| w[1].loss <= w[0].loss)
    }
}

/// Gradient descent on the full objective of
/// [`ToyEncoders::loss_and_grad`], updating both projections and,
/// optionally, `log_tau`.
pub fn train_toy(
    data: &PairedData,
    mut encoders: ToyEncoders,
    cfg: &ToyTrainConfig,
) -> Result<ToyRun, ContrastiveError> {
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(ContrastiveError::InvalidConfig(format!("learning rate {}", cfg.lr)));
    }
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let g = match encoders.loss_and_grad(data) {
            Ok(g) if g.loss.is_finite() => g,
            Ok(_) | Err(ContrastiveError::NonFinite(_)) => return Err(ContrastiveError::Divergence { step }),
            Err(e) => return Err(e),
        };
        trace.push(TracePoint {
            step,
            loss: g.loss,
            tau: encoders.temperature.tau(),
        });
        if cfg.lr == 0.0 {
            continue;
        }
        encoders.video -= cfg.lr * g.d_video;
        encoders.text -= cfg.lr * g.d_text;
        if cfg.learn_temperature {
            let log_tau = encoders.temperature.log_tau() - cfg.lr * g.d_log_tau;
            encoders.temperature =
                Temperature::from_log_tau(log_tau).map_err(|_| ContrastiveError::Divergence { step })?;
        }
    }
    Ok(ToyRun { encoders, trace })
}

/// Fraction of rows whose highest-scoring column is the diagonal, ties going
/// to the lowest column index.
pub fn recall_at_1(sim: &DMatrix<f64>) -> f64 {
    let n = sim.nrows();
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n)
        .filter(|&i| {
            let row = sim.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == i
        })
        .count();
    hits as f64 / n as f64
}
