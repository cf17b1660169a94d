//! Seeded synthetic bundles with controllable label confusability.
//!
//! Class centroids live on the unit sphere; designated confusable pairs
//! are pulled within a small distance of each other so the baseline
//! classifier exhibits exactly the ambiguity the pipeline is meant to
//! resolve. Label-name features are the true centroids (optionally
//! perturbed), giving the embedder a signal the noisy per-example
//! features lack.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{BundleMeta, DatasetBundle, ExampleRecord, LabelSet, Split};
use crate::error::{Error, Result};
use crate::util::argmax;

/// Generation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of classes C (at least 2).
    pub num_classes: usize,
    /// Feature dimension D.
    pub dim: usize,
    /// Examples per class in each of train/dev/test.
    pub n_per_class: usize,
    /// Shrink factor applied to the gap between a confusable pair's
    /// centroids: 0 collapses them onto one point, 1 leaves them apart.
    pub overlap: f64,
    /// Per-coordinate Gaussian noise around the class centroid.
    pub noise: f64,
    /// Class pairs whose centroid gap is shrunk by `overlap`.
    pub confusable_pairs: Vec<(usize, usize)>,
    pub seed: u64,
    /// Radius of the sphere the centroids are sampled on.
    pub centroid_scale: f64,
    /// Per-coordinate noise added to the label-name features; 0 keeps
    /// them the exact centroids.
    pub label_feature_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 6,
            dim: 16,
            n_per_class: 200,
            overlap: 0.1,
            noise: 0.5,
            confusable_pairs: vec![(0, 1), (2, 3)],
            seed: 7,
            centroid_scale: 10.0,
            label_feature_noise: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::BadConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.dim == 0 || self.n_per_class == 0 {
            return Err(Error::BadConfig(
                "dim and n_per_class must be positive".into(),
            ));
        }
        if self.overlap < 0.0 {
            return Err(Error::BadConfig(format!(
                "overlap must be non-negative, got {}",
                self.overlap
            )));
        }
        if self.noise <= 0.0 {
            return Err(Error::BadConfig(format!(
                "noise must be positive, got {}",
                self.noise
            )));
        }
        if self.centroid_scale <= 0.0 {
            return Err(Error::BadConfig(format!(
                "centroid_scale must be positive, got {}",
                self.centroid_scale
            )));
        }
        if self.label_feature_noise < 0.0 {
            return Err(Error::BadConfig(
                "label_feature_noise must be non-negative".into(),
            ));
        }
        let mut used = vec![false; self.num_classes];
        for &(a, b) in &self.confusable_pairs {
            if a >= self.num_classes || b >= self.num_classes {
                return Err(Error::BadConfig(format!(
                    "confusable pair ({a}, {b}) out of range for C={}",
                    self.num_classes
                )));
            }
            if a == b {
                return Err(Error::BadConfig(format!(
                    "confusable pair ({a}, {b}) repeats a class"
                )));
            }
            if used[a] || used[b] {
                return Err(Error::BadConfig(format!(
                    "class {} appears in more than one confusable pair",
                    if used[a] { a } else { b }
                )));
            }
            used[a] = true;
            used[b] = true;
        }
        Ok(())
    }
}

fn snorm(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| snorm(rng)).collect();
        let n = crate::util::norm(&v);
        if n > 1e-9 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Generate a full bundle: features, gold labels, splits, label-name
/// features, and baseline logits for every example. Deterministic given
/// the seed.
pub fn generate(cfg: &SynthConfig) -> Result<DatasetBundle> {
    generate_with(cfg, &BaselineOptions::default())
}

/// [`generate`] with explicit baseline-classifier hyperparameters.
pub fn generate_with(cfg: &SynthConfig, baseline: &BaselineOptions) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.num_classes;
    let d = cfg.dim;

    let mut centroids: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            sample_unit_vector(&mut rng, d)
                .into_iter()
                .map(|x| cfg.centroid_scale * x)
                .collect()
        })
        .collect();
    for &(a, b) in &cfg.confusable_pairs {
        // Shrink the gap: b moves to a + overlap * (b - a).
        let anchor = centroids[a].clone();
        for (cb, ca) in centroids[b].iter_mut().zip(anchor) {
            *cb = ca + cfg.overlap * (*cb - ca);
        }
    }

    let labels = LabelSet::new((0..c).map(|i| format!("class-{i}")).collect())?;
    let mut examples = Vec::with_capacity(3 * c * cfg.n_per_class);
    for split in [Split::Train, Split::Dev, Split::Test] {
        for (class, centroid) in centroids.iter().enumerate() {
            for i in 0..cfg.n_per_class {
                let features: Vec<f64> = centroid
                    .iter()
                    .map(|&m| m + cfg.noise * snorm(&mut rng))
                    .collect();
                examples.push(ExampleRecord {
                    id: format!("{split}-c{class}-{i:04}"),
                    split,
                    gold: class,
                    logits: Vec::new(), // filled below
                    features: Some(features),
                });
            }
        }
    }

    let label_features: Vec<Vec<f64>> = centroids
        .iter()
        .map(|centroid| {
            centroid
                .iter()
                .map(|&m| m + cfg.label_feature_noise * snorm(&mut rng))
                .collect()
        })
        .collect();

    let train_features: Vec<Vec<f64>> = examples
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.features.clone().unwrap())
        .collect();
    let train_gold: Vec<usize> = examples
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.gold)
        .collect();
    let model = fit_baseline(&train_features, &train_gold, c, baseline)?;

    for ex in &mut examples {
        let raw = model.logits(ex.features.as_ref().unwrap());
        // Anchor each row to a positive range; the shift changes neither
        // the argmax nor the variance.
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        ex.logits = raw.iter().map(|z| z - min + 1.0).collect();
    }

    let mut meta = serde_json::Map::new();
    meta.insert("generator".into(), "rise synth".into());
    meta.insert("seed".into(), cfg.seed.into());
    meta.insert("overlap".into(), cfg.overlap.into());
    meta.insert("noise".into(), cfg.noise.into());
    meta.insert(
        "confusable_pairs".into(),
        serde_json::to_value(&cfg.confusable_pairs)?,
    );

    DatasetBundle::new(
        labels,
        examples,
        Some(label_features),
        BundleMeta { dim: Some(d), meta },
    )
}

/// Hyperparameters for the baseline classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    pub learning_rate: f64,
    pub steps: usize,
    pub l2: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            learning_rate: 0.5,
            steps: 300,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic model: one score row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    w: Vec<f64>, // row-major C×D
    b: Vec<f64>,
    num_classes: usize,
    dim: usize,
}

impl LogisticModel {
    /// Raw scores `W·x + b`, one per class.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| crate::util::dot(&self.w[c * self.dim..(c + 1) * self.dim], x) + self.b[c])
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

/// Fit a multinomial logistic classifier by full-batch gradient descent
/// on the softmax cross-entropy. Zero-initialized, so the fit is fully
/// deterministic.
pub fn fit_baseline(
    features: &[Vec<f64>],
    gold: &[usize],
    num_classes: usize,
    opts: &BaselineOptions,
) -> Result<LogisticModel> {
    if features.is_empty() {
        return Err(Error::EmptyInput("training features"));
    }
    if features.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} feature rows vs {} gold labels",
            features.len(),
            gold.len()
        )));
    }
    let dim = features[0].len();
    for row in features {
        if row.len() != dim {
            return Err(Error::DimensionMismatch(
                "training features have uneven widths".into(),
            ));
        }
    }
    for &g in gold {
        if g >= num_classes {
            return Err(Error::BadLabel(format!(
                "gold index {g} out of range for C={num_classes}"
            )));
        }
    }

    let n = features.len();
    let mut model = LogisticModel {
        w: vec![0.0; num_classes * dim],
        b: vec![0.0; num_classes],
        num_classes,
        dim,
    };

    for step in 0..opts.steps {
        let mut grad_w = vec![0.0; num_classes * dim];
        let mut grad_b = vec![0.0; num_classes];
        let mut loss = 0.0;
        for (x, &g) in features.iter().zip(gold) {
            let z = model.logits(x);
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss += sum.ln() + zmax - z[g];
            for c in 0..num_classes {
                let p = exps[c] / sum;
                let delta = p - if c == g { 1.0 } else { 0.0 };
                for (gw, xv) in grad_w[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *gw += delta * xv;
                }
                grad_b[c] += delta;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("baseline fit, step {step}")));
        }
        let scale = opts.learning_rate / n as f64;
        for (w, g) in model.w.iter_mut().zip(&grad_w) {
            *w -= scale * g + opts.learning_rate * opts.l2 * *w;
        }
        for (b, g) in model.b.iter_mut().zip(&grad_b) {
            *b -= scale * g;
        }
    }
    Ok(model)
}
