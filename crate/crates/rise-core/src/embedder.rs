//! Shared text–label embedding space.
//!
//! Sentence and label-name feature vectors pass through one projection
//! head (identity or affine `W·f + b`). Training minimizes a
//! confusion-weighted contrastive loss over (sentence, gold-label)
//! pairs: the gold similarity is pulled up while each wrong label is
//! pushed down in proportion to how often the classifier confuses it
//! with the gold class:
//!
//! ```text
//! L = -log( exp(s_g/τ) / (exp(s_g/τ) + Σ_{y'≠g} w_{y'} · exp(s_{y'}/τ)) )
//! ```
//!
//! where `s_y` is the cosine similarity between the projected sentence
//! and the projected name of label `y`. With all weights equal to 1 and
//! `τ = 1` this is the standard InfoNCE objective over the label set.

use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confusion::{negative_weights, ConfusionProfile};
use crate::dataset::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::util::{dot, norm};

/// Projection head shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    /// `f ↦ f`; the raw upstream features are the embedding space.
    Identity,
    /// `f ↦ W·f + b` with learned `W` and `b`.
    Linear,
}

/// Parameters of the projection head mapping D-dimensional features to
/// K-dimensional embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    pub mode: EmbedderMode,
    /// Output dimension K (equals `d` in identity mode).
    pub k: usize,
    /// Input dimension D.
    pub d: usize,
    /// Row-major K×D weight matrix; empty in identity mode.
    #[serde(default)]
    pub w: Vec<f64>,
    /// K-vector bias; empty in identity mode.
    #[serde(default)]
    pub b: Vec<f64>,
}

impl EmbedderParams {
    /// The identity head on D-dimensional features.
    pub fn identity(d: usize) -> Self {
        EmbedderParams {
            mode: EmbedderMode::Identity,
            k: d,
            d,
            w: Vec::new(),
            b: Vec::new(),
        }
    }

    /// An affine head from explicit weights (row-major K×D) and bias.
    pub fn linear(w: Vec<f64>, b: Vec<f64>, k: usize, d: usize) -> Result<Self> {
        if w.len() != k * d || b.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "linear head wants {}x{} weights and {} biases, got {} and {}",
                k,
                d,
                k,
                w.len(),
                b.len()
            )));
        }
        Ok(EmbedderParams {
            mode: EmbedderMode::Linear,
            k,
            d,
            w,
            b,
        })
    }

    /// Seeded initialization: `W ~ U[-1/sqrt(D), 1/sqrt(D)]`, `b = 0`.
    pub fn init_uniform(d: usize, k: usize, seed: u64) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::BadConfig(format!(
                "embedder dimensions must be positive, got d={d}, k={k}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let w = (0..k * d)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::linear(w, vec![0.0; k], k, d)
    }
}

/// Project one feature vector through the head.
pub fn embed(params: &EmbedderParams, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != params.d {
        return Err(Error::DimensionMismatch(format!(
            "feature vector has {} entries, head expects D={}",
            f.len(),
            params.d
        )));
    }
    match params.mode {
        EmbedderMode::Identity => Ok(f.to_vec()),
        EmbedderMode::Linear => Ok((0..params.k)
            .map(|r| dot(&params.w[r * params.d..(r + 1) * params.d], f) + params.b[r])
            .collect()),
    }
}

/// Cosine similarity of two nonzero vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of {}-dim and {}-dim vectors",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Cosine similarities between one input embedding and every label
/// embedding, in label order. Entries lie in `[-1, 1]` up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector(Vec<f64>);

impl SimilarityVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimilarityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Project the input and every label-name feature row, then take
/// pairwise cosines.
pub fn similarity_vector(
    params: &EmbedderParams,
    f_x: &[f64],
    label_feats: &[Vec<f64>],
) -> Result<SimilarityVector> {
    let e_x = embed(params, f_x)?;
    let mut s = Vec::with_capacity(label_feats.len());
    for row in label_feats {
        let e_y = embed(params, row)?;
        s.push(cosine(&e_x, &e_y)?);
    }
    Ok(SimilarityVector(s))
}

fn check_weights(weights: &[(usize, f64)], num_labels: usize, gold: usize) -> Result<()> {
    if weights.len() != num_labels - 1 {
        return Err(Error::LengthMismatch(format!(
            "{} negative weights for {} labels",
            weights.len(),
            num_labels
        )));
    }
    let mut seen = vec![false; num_labels];
    for &(y, w) in weights {
        if y >= num_labels || y == gold {
            return Err(Error::BadLabel(format!(
                "negative weight keyed by invalid label {y} (gold {gold})"
            )));
        }
        if seen[y] {
            return Err(Error::BadLabel(format!(
                "duplicate negative weight for {y}"
            )));
        }
        if w < 0.0 {
            return Err(Error::BadConfig(format!(
                "negative weight {w} for label {y}"
            )));
        }
        seen[y] = true;
    }
    Ok(())
}

/// Loss and gradient coefficients from a similarity vector.
///
/// Returns `(loss, c)` where `c[y] = ∂loss/∂s_y`. The exponentials are
/// shifted by the largest active term so small temperatures stay finite,
/// and the all-zero-weight case yields exactly 0.
fn cw_terms(s: &[f64], gold: usize, weights: &[(usize, f64)], tau: f64) -> (f64, Vec<f64>) {
    // t_y = (s_y - s_gold) / tau for negatives; shift by the max positive
    // exponent among weighted terms.
    let shift = weights
        .iter()
        .filter(|&&(_, w)| w > 0.0)
        .map(|&(y, _)| (s[y] - s[gold]) / tau)
        .fold(0.0_f64, f64::max);
    // z = e^{-shift} + Σ w e^{t - shift}
    let mut z = (-shift).exp();
    let mut terms = vec![0.0; s.len()];
    for &(y, w) in weights {
        let t = w * ((s[y] - s[gold]) / tau - shift).exp();
        terms[y] = t;
        z += t;
    }
    let loss = if shift == 0.0 {
        // z - 1 is exactly Σ w e^t here, so log1p keeps loss = 0 exact
        // when every weight is zero.
        (z - 1.0).ln_1p()
    } else {
        shift + z.ln()
    };
    let mut c = vec![0.0; s.len()];
    let mut q_sum = 0.0;
    for &(y, _) in weights {
        let q = terms[y] / z;
        c[y] = q / tau;
        q_sum += q;
    }
    c[gold] = -q_sum / tau;
    (loss, c)
}

/// Confusion-weighted contrastive loss of one (input, gold) pair given
/// precomputed embeddings.
///
/// `weights` must carry exactly one entry per label other than `gold`.
/// Always non-negative; zero exactly when every weight is zero.
pub fn cw_loss(
    e_x: &[f64],
    label_embs: &[Vec<f64>],
    gold: usize,
    weights: &[(usize, f64)],
    tau: f64,
) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::BadConfig(format!("tau must be positive, got {tau}")));
    }
    if gold >= label_embs.len() {
        return Err(Error::BadLabel(format!(
            "gold index {gold} out of range for {} labels",
            label_embs.len()
        )));
    }
    check_weights(weights, label_embs.len(), gold)?;
    let mut s = Vec::with_capacity(label_embs.len());
    for e_y in label_embs {
        s.push(cosine(e_x, e_y)?);
    }
    Ok(cw_terms(&s, gold, weights, tau).0)
}

/// Loss value plus its gradient with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CwGrad {
    pub loss: f64,
    /// Row-major K×D gradient for `w`.
    pub grad_w: Vec<f64>,
    /// K-vector gradient for `b`.
    pub grad_b: Vec<f64>,
}

/// Analytic gradient of [`cw_loss`] through the cosine similarities and
/// the shared affine head (both the input and every label embedding pass
/// through the same `W`, `b`).
pub fn cw_loss_grad(
    params: &EmbedderParams,
    f_x: &[f64],
    label_feats: &[Vec<f64>],
    gold: usize,
    weights: &[(usize, f64)],
    tau: f64,
) -> Result<CwGrad> {
    if params.mode != EmbedderMode::Linear {
        return Err(Error::BadConfig(
            "gradient requires a linear head; identity mode has no parameters".into(),
        ));
    }
    if tau <= 0.0 {
        return Err(Error::BadConfig(format!("tau must be positive, got {tau}")));
    }
    let c_labels = label_feats.len();
    if gold >= c_labels {
        return Err(Error::BadLabel(format!(
            "gold index {gold} out of range for {c_labels} labels"
        )));
    }
    check_weights(weights, c_labels, gold)?;

    let e_x = embed(params, f_x)?;
    let label_embs: Vec<Vec<f64>> = label_feats
        .iter()
        .map(|row| embed(params, row))
        .collect::<Result<_>>()?;

    let n_x = norm(&e_x);
    if n_x == 0.0 {
        return Err(Error::ZeroVector);
    }
    let n_y: Vec<f64> = label_embs.iter().map(|e| norm(e)).collect();
    if n_y.contains(&0.0) {
        return Err(Error::ZeroVector);
    }
    let s: Vec<f64> = label_embs
        .iter()
        .zip(&n_y)
        .map(|(e_y, &ny)| dot(&e_x, e_y) / (n_x * ny))
        .collect();
    let (loss, coeff) = cw_terms(&s, gold, weights, tau);

    let (k, d) = (params.k, params.d);
    // d cos(u, v)/du = (v/|v| - cos * u/|u|) / |u|
    let mut d_ex = vec![0.0; k];
    let mut d_ey = vec![vec![0.0; k]; c_labels];
    for y in 0..c_labels {
        let cy = coeff[y];
        if cy == 0.0 {
            continue;
        }
        for r in 0..k {
            let ux = e_x[r] / n_x;
            let uy = label_embs[y][r] / n_y[y];
            d_ex[r] += cy * (uy - s[y] * ux) / n_x;
            d_ey[y][r] = cy * (ux - s[y] * uy) / n_y[y];
        }
    }

    // Chain through e = W f + b: dW += d_e ⊗ f, db += d_e.
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    for r in 0..k {
        for j in 0..d {
            grad_w[r * d + j] += d_ex[r] * f_x[j];
        }
        grad_b[r] += d_ex[r];
    }
    for y in 0..c_labels {
        for r in 0..k {
            let g = d_ey[y][r];
            if g == 0.0 {
                continue;
            }
            for j in 0..d {
                grad_w[r * d + j] += g * label_feats[y][j];
            }
            grad_b[r] += g;
        }
    }

    Ok(CwGrad {
        loss,
        grad_w,
        grad_b,
    })
}

/// Which negative-weighting scheme training uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Weights from the dev-set confusion profile.
    Confusion,
    /// All negatives weighted 1 (the ablation without ambiguity
    /// modeling).
    Uniform,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confusion" => Ok(Weighting::Confusion),
            "uniform" => Ok(Weighting::Uniform),
            other => Err(Error::BadConfig(format!(
                "weighting must be confusion|uniform, got {other:?}"
            ))),
        }
    }
}

/// Hyperparameters for [`train_embedder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weighting: Weighting,
    /// Similarity temperature; 1 leaves the cosines unscaled.
    pub tau: f64,
    /// Added to every confusion-derived negative weight so perfect dev
    /// rows keep a gradient.
    pub neg_smoothing: f64,
    /// Embedding dimension K; `None` keeps K = D.
    pub embed_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            weighting: Weighting::Confusion,
            tau: 1.0,
            neg_smoothing: 0.01,
            embed_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be at least 1".into()));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::BadConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.neg_smoothing < 0.0 {
            return Err(Error::BadConfig(format!(
                "neg_smoothing must be non-negative, got {}",
                self.neg_smoothing
            )));
        }
        if self.embed_dim == Some(0) {
            return Err(Error::BadConfig("embed_dim must be positive".into()));
        }
        Ok(())
    }
}

/// A trained head together with its per-epoch mean loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEmbedder {
    #[serde(flatten)]
    pub params: EmbedderParams,
    pub loss_trace: Vec<f64>,
}

impl TrainedEmbedder {
    /// An untrained identity head (the no-contrastive-learning ablation).
    pub fn identity(d: usize) -> Self {
        TrainedEmbedder {
            params: EmbedderParams::identity(d),
            loss_trace: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Train the affine head by minibatch gradient descent on the mean
/// contrastive loss over (train-split sentence, gold label) pairs.
///
/// Label embeddings are recomputed through the current head at every
/// step, so sentences and labels always share parameters. Deterministic
/// given the seed: fixed shuffle, fixed iteration order, sequential
/// reduction.
pub fn train_embedder(
    bundle: &DatasetBundle,
    profile: &ConfusionProfile,
    cfg: &TrainConfig,
) -> Result<TrainedEmbedder> {
    cfg.validate()?;
    let label_feats = bundle
        .label_features
        .as_ref()
        .ok_or(Error::MissingFeatures("bundle has no label_features"))?;
    let train: Vec<_> = bundle.split_examples(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let d = bundle
        .feature_dim()
        .ok_or(Error::MissingFeatures("bundle declares no feature dim"))?;
    let features: Vec<&[f64]> = train
        .iter()
        .map(|ex| {
            ex.features
                .as_deref()
                .ok_or(Error::MissingFeatures("a train example has no features"))
        })
        .collect::<Result<_>>()?;
    let c = bundle.num_classes();
    if profile.num_classes() != c {
        return Err(Error::DimensionMismatch(format!(
            "{}-class profile for a {c}-class bundle",
            profile.num_classes()
        )));
    }

    // Per-class negative weights are fixed for the whole run.
    let class_weights: Vec<Vec<(usize, f64)>> = (0..c)
        .map(|gold| match cfg.weighting {
            Weighting::Confusion => negative_weights(profile, gold, cfg.neg_smoothing),
            Weighting::Uniform => Ok((0..c).filter(|&y| y != gold).map(|y| (y, 1.0)).collect()),
        })
        .collect::<Result<_>>()?;

    let k = cfg.embed_dim.unwrap_or(d);
    let mut params = EmbedderParams::init_uniform(d, k, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Hand-rolled Fisher-Yates: the shuffle depends only on the
        // seeded stream.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; params.w.len()];
            let mut gb = vec![0.0; params.b.len()];
            let mut batch_loss = 0.0;
            for &idx in batch {
                let ex = train[idx];
                let grad = cw_loss_grad(
                    &params,
                    features[idx],
                    label_feats,
                    ex.gold,
                    &class_weights[ex.gold],
                    cfg.tau,
                )?;
                batch_loss += grad.loss;
                for (acc, g) in gw.iter_mut().zip(&grad.grad_w) {
                    *acc += g;
                }
                for (acc, g) in gb.iter_mut().zip(&grad.grad_b) {
                    *acc += g;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}, batch starting at shuffled index {}",
                    batch[0]
                )));
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (p, g) in params.w.iter_mut().zip(&gw) {
                *p -= scale * g;
            }
            for (p, g) in params.b.iter_mut().zip(&gb) {
                *p -= scale * g;
            }
            epoch_loss += batch_loss;
        }
        loss_trace.push(epoch_loss / n as f64);
    }

    Ok(TrainedEmbedder { params, loss_trace })
}
