//! Material classification from recovered parameter maps.

use rand::Rng;
use rayon::prelude::*;

use crate::domain::ParamMaps;
use crate::error::{Result, TsfError};
use crate::rng::{stream, streams};

/// Label given to samples with no measurable temperature rise.
pub const METAL_LABEL: &str = "metal/conductor";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// `w*w` diffusivities then `w*w` absorption factors, row-major.
    pub values: Vec<f64>,
    pub label: Option<usize>,
}

/// Samples `k` and `eps'` in a `w x w` window centered on `(cx, cy)`.
pub fn extract_features(params: &ParamMaps, cx: usize, cy: usize, w: usize) -> Result<FeatureVector> {
    if w % 2 == 0 {
        return Err(TsfError::invalid(format!("window side must be odd, got {w}")));
    }
    let h = w / 2;
    let (nx, ny) = (params.k.nx, params.k.ny);
    if cx < h || cy < h || cx + h >= nx || cy + h >= ny {
        return Err(TsfError::invalid(format!(
            "{w}x{w} window at ({cx}, {cy}) leaves the {nx}x{ny} maps"
        )));
    }
    let mut values = Vec::with_capacity(2 * w * w);
    for map in [&params.k, &params.eps_prime] {
        for y in cy - h..=cy + h {
            for x in cx - h..=cx + h {
                values.push(map.get(x, y));
            }
        }
    }
    Ok(FeatureVector { values, label: None })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialDataset {
    pub samples: Vec<FeatureVector>,
    pub label_names: Vec<String>,
    /// Per sample: true when its stack showed no measurable rise.
    pub metal: Vec<bool>,
}

impl MaterialDataset {
    pub fn new(label_names: Vec<String>) -> Self {
        MaterialDataset {
            samples: Vec::new(),
            label_names,
            metal: Vec::new(),
        }
    }

    /// Index of `name`, appending it if new.
    pub fn label_index(&mut self, name: &str) -> usize {
        match self.label_names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.label_names.push(name.to_string());
                self.label_names.len() - 1
            }
        }
    }

    pub fn push(&mut self, mut fv: FeatureVector, label: usize, metal: bool) {
        fv.label = Some(label);
        self.samples.push(fv);
        self.metal.push(metal);
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.metal.len() != self.samples.len() {
            return Err(TsfError::invalid("metal flags and samples differ in count"));
        }
        let dim = self.samples.first().map_or(0, |s| s.values.len());
        for (i, s) in self.samples.iter().enumerate() {
            if s.values.len() != dim {
                return Err(TsfError::invalid(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.values.len()
                )));
            }
            match s.label {
                Some(l) if l < self.n_classes() => {}
                Some(l) => return Err(TsfError::invalid(format!("sample {i} has unknown label index {l}"))),
                None => return Err(TsfError::invalid(format!("sample {i} is unlabeled"))),
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(TsfError::invalid(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(())
    }

    fn label_of(&self, i: usize) -> usize {
        self.samples[i].label.expect("validated")
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f64]]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub norm: Standardizer,
    /// Class means in standardized units; `None` for classes without samples.
    pub centroids: Vec<Option<Vec<f64>>>,
    /// Class means in raw feature units.
    pub raw_centroids: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn with_seed(seed: u64) -> Self {
        MlpConfig {
            hidden: 90,
            epochs: 500,
            lr: 0.1,
            seed,
        }
    }
}

/// One tanh hidden layer and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub norm: Standardizer,
    /// `hidden x inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `classes x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_classes: usize,
    /// Mean cross-entropy after each epoch.
    pub loss_history: Vec<f64>,
}

impl MlpModel {
    fn hidden_of(&self, x: &[f64], h: &mut [f64]) {
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * self.n_inputs..(j + 1) * self.n_inputs];
            *hj = (self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh();
        }
    }

    fn probs_of(&self, h: &[f64], p: &mut [f64]) {
        for (c, pc) in p.iter_mut().enumerate() {
            let row = &self.w2[c * self.n_hidden..(c + 1) * self.n_hidden];
            *pc = self.b2[c] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
        softmax(p);
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Centroid(CentroidModel),
    Mlp(MlpModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierKind {
    Centroid,
    Mlp(MlpConfig),
}

impl ClassifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::Centroid => "centroid",
            ClassifierKind::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Centroid: distance to each class (`INFINITY` for empty classes).
    /// MLP: softmax probability of each class.
    pub scores: Vec<f64>,
}

fn rows_of<'a>(data: &'a MaterialDataset, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| data.samples[i].values.as_slice()).collect()
}

fn fit_centroids(data: &MaterialDataset, idx: &[usize]) -> CentroidModel {
    let rows = rows_of(data, idx);
    let norm = Standardizer::fit(&rows);
    let d = rows[0].len();
    let k = data.n_classes();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for &i in idx {
        let l = data.label_of(i);
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(&data.samples[i].values) {
            *s += v;
        }
    }
    let raw_centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let centroids = raw_centroids.iter().map(|c| c.as_ref().map(|c| norm.apply(c))).collect();
    CentroidModel {
        norm,
        centroids,
        raw_centroids,
    }
}

/// Nearest-centroid model on standardized features.
pub fn train_centroid(data: &MaterialDataset) -> Result<CentroidModel> {
    data.validate()?;
    if data.is_empty() {
        return Err(TsfError::invalid("cannot train on an empty dataset"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let model = fit_centroids(data, &idx);
    if let Some(c) = model.centroids.iter().position(Option::is_none) {
        return Err(TsfError::invalid(format!("class '{}' has no samples", data.label_names[c])));
    }
    Ok(model)
}

fn fit_mlp(data: &MaterialDataset, idx: &[usize], cfg: &MlpConfig) -> Result<MlpModel> {
    if cfg.hidden == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(TsfError::invalid("MLP needs hidden >= 1, epochs >= 1 and lr > 0"));
    }
    let rows = rows_of(data, idx);
    let norm = Standardizer::fit(&rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| norm.apply(r)).collect();
    let ys: Vec<usize> = idx.iter().map(|&i| data.label_of(i)).collect();
    let (d, nh, nc) = (xs[0].len(), cfg.hidden, data.n_classes());

    let mut rng = stream(cfg.seed, streams::MLP_INIT);
    let a1 = (6.0 / (d + nh) as f64).sqrt();
    let a2 = (6.0 / (nh + nc) as f64).sqrt();
    let mut m = MlpModel {
        norm,
        w1: (0..nh * d).map(|_| rng.random_range(-a1..a1)).collect(),
        b1: vec![0.0; nh],
        w2: (0..nc * nh).map(|_| rng.random_range(-a2..a2)).collect(),
        b2: vec![0.0; nc],
        n_inputs: d,
        n_hidden: nh,
        n_classes: nc,
        loss_history: Vec::with_capacity(cfg.epochs),
    };

    let n = xs.len() as f64;
    let mut h = vec![0.0; nh];
    let mut p = vec![0.0; nc];
    let mut dh = vec![0.0; nh];
    for epoch in 0..cfg.epochs {
        let mut gw1 = vec![0.0; nh * d];
        let mut gb1 = vec![0.0; nh];
        let mut gw2 = vec![0.0; nc * nh];
        let mut gb2 = vec![0.0; nc];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            m.hidden_of(x, &mut h);
            m.probs_of(&h, &mut p);
            loss -= p[y].ln() / n;
            p[y] -= 1.0;
            dh.fill(0.0);
            for c in 0..nc {
                let g = p[c] / n;
                gb2[c] += g;
                for j in 0..nh {
                    gw2[c * nh + j] += g * h[j];
                    dh[j] += g * m.w2[c * nh + j];
                }
            }
            for j in 0..nh {
                let g = dh[j] * (1.0 - h[j] * h[j]);
                gb1[j] += g;
                for (gw, v) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gw += g * v;
                }
            }
        }
        if !loss.is_finite() {
            return Err(TsfError::Training(format!("cross-entropy became non-finite at epoch {epoch}")));
        }
        m.loss_history.push(loss);
        for (w, g) in m.w1.iter_mut().zip(&gw1) {
            *w -= cfg.lr * g;
        }
        for (w, g) in m.b1.iter_mut().zip(&gb1) {
            *w -= cfg.lr * g;
        }
        for (w, g) in m.w2.iter_mut().zip(&gw2) {
            *w -= cfg.lr * g;
        }
        for (w, g) in m.b2.iter_mut().zip(&gb2) {
            *w -= cfg.lr * g;
        }
    }
    Ok(m)
}

/// Trains the perceptron by full-batch gradient descent on cross-entropy.
pub fn train_mlp(data: &MaterialDataset, cfg: &MlpConfig) -> Result<MlpModel> {
    data.validate()?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut seen = vec![false; data.n_classes()];
    for &i in &idx {
        seen[data.label_of(i)] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(TsfError::invalid("MLP training needs samples from at least 2 classes"));
    }
    fit_mlp(data, &idx, cfg)
}

pub fn train(data: &MaterialDataset, kind: &ClassifierKind) -> Result<Classifier> {
    Ok(match kind {
        ClassifierKind::Centroid => Classifier::Centroid(train_centroid(data)?),
        ClassifierKind::Mlp(cfg) => Classifier::Mlp(train_mlp(data, cfg)?),
    })
}

/// First index of the best score; `better(a, b)` is true when `a` beats `b`.
fn arg_best(scores: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if better(s, scores[best]) {
            best = i;
        }
    }
    best
}

pub fn predict(model: &Classifier, fv: &FeatureVector) -> Result<Prediction> {
    match model {
        Classifier::Centroid(m) => {
            if fv.values.len() != m.norm.mean.len() {
                return Err(TsfError::invalid(format!(
                    "feature vector has {} values, model expects {}",
                    fv.values.len(),
                    m.norm.mean.len()
                )));
            }
            let x = m.norm.apply(&fv.values);
            let scores: Vec<f64> = m
                .centroids
                .iter()
                .map(|c| match c {
                    Some(c) => c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                    None => f64::INFINITY,
                })
                .collect();
            Ok(Prediction {
                label: arg_best(&scores, |a, b| a < b),
                scores,
            })
        }
        Classifier::Mlp(m) => {
            if fv.values.len() != m.n_inputs {
                return Err(TsfError::invalid(format!(
                    "feature vector has {} values, model expects {}",
                    fv.values.len(),
                    m.n_inputs
                )));
            }
            let x = m.norm.apply(&fv.values);
            let mut h = vec![0.0; m.n_hidden];
            let mut p = vec![0.0; m.n_classes];
            m.hidden_of(&x, &mut h);
            m.probs_of(&h, &mut p);
            Ok(Prediction {
                label: arg_best(&p, |a, b| a > b),
                scores: p,
            })
        }
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub label_names: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(label_names: Vec<String>) -> Self {
        let n = label_names.len();
        ConfusionMatrix {
            label_names,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn trace(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Builds a matrix from `(true, predicted)` label pairs, e.g. predictions
    /// made by an external tool. Unknown names are added in order of appearance.
    pub fn from_label_pairs<S: AsRef<str>>(mut label_names: Vec<String>, pairs: &[(S, S)]) -> Self {
        for (t, p) in pairs {
            for name in [t.as_ref(), p.as_ref()] {
                if !label_names.iter().any(|n| n == name) {
                    label_names.push(name.to_string());
                }
            }
        }
        let index = |name: &str| label_names.iter().position(|n| n == name).expect("inserted above");
        let mut m = ConfusionMatrix::new(label_names.clone());
        for (t, p) in pairs {
            m.record(index(t.as_ref()), index(p.as_ref()));
        }
        m
    }
}

/// Matrix labels for `data`: its own names plus the metal label when some
/// sample is flagged and the name is not already present.
fn matrix_labels(data: &MaterialDataset) -> (Vec<String>, Option<usize>) {
    let mut names = data.label_names.clone();
    let metal = match names.iter().position(|n| n == METAL_LABEL) {
        Some(i) => Some(i),
        None if data.metal.iter().any(|&m| m) => {
            names.push(METAL_LABEL.to_string());
            Some(names.len() - 1)
        }
        None => None,
    };
    (names, metal)
}

/// Leave-one-out cross-validation. Metal-flagged samples are never used for
/// training and are always predicted as [`METAL_LABEL`].
pub fn loo_cv(data: &MaterialDataset, kind: &ClassifierKind) -> Result<ConfusionMatrix> {
    data.validate()?;
    if data.len() < 2 {
        return Err(TsfError::invalid("leave-one-out needs at least 2 samples"));
    }
    let (names, metal_col) = matrix_labels(data);
    let usable: Vec<usize> = (0..data.len()).filter(|&i| !data.metal[i]).collect();
    let predictions: Vec<usize> = (0..data.len())
        .into_par_iter()
        .map(|held| -> Result<usize> {
            if data.metal[held] {
                return Ok(metal_col.expect("metal column exists when a sample is flagged"));
            }
            let train: Vec<usize> = usable.iter().copied().filter(|&i| i != held).collect();
            if train.is_empty() {
                return Err(TsfError::invalid("no non-metal samples left to train on"));
            }
            let model = match kind {
                ClassifierKind::Centroid => Classifier::Centroid(fit_centroids(data, &train)),
                ClassifierKind::Mlp(cfg) => Classifier::Mlp(fit_mlp(data, &train, cfg)?),
            };
            Ok(predict(&model, &data.samples[held])?.label)
        })
        .collect::<Result<_>>()?;
    let mut m = ConfusionMatrix::new(names);
    for (i, p) in predictions.into_iter().enumerate() {
        m.record(data.label_of(i), p);
    }
    Ok(m)
}

/// Label name for one sample, routing metals around the classifier.
pub fn classify_sample(model: &Classifier, names: &[String], fv: &FeatureVector, metal: bool) -> Result<String> {
    if metal {
        return Ok(METAL_LABEL.to_string());
    }
    let p = predict(model, fv)?;
    Ok(names[p.label].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Map2;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector {
            values: v.to_vec(),
            label: None,
        }
    }

    fn dataset(points: &[(&[f64], usize)], n_classes: usize) -> MaterialDataset {
        let mut d = MaterialDataset::new((0..n_classes).map(|i| format!("c{i}")).collect());
        for (p, l) in points {
            d.push(fv(p), *l, false);
        }
        d
    }

    /// `n_classes` Gaussian clusters on a line, centers `spacing` apart, unit spread.
    fn clusters(n_classes: usize, per_class: usize, dim: usize, spacing: f64, seed: u64) -> MaterialDataset {
        let mut rng = stream(seed, streams::FIXTURES);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut d = MaterialDataset::new((0..n_classes).map(|i| format!("m{i}")).collect());
        for c in 0..n_classes {
            for _ in 0..per_class {
                let v: Vec<f64> = (0..dim)
                    .map(|j| spacing * c as f64 * if j % 2 == 0 { 1.0 } else { 0.5 } + normal.sample(&mut rng))
                    .collect();
                d.push(fv(&v), c, false);
            }
        }
        d
    }

    #[test]
    fn feature_window_layout() {
        let k = Map2::from_fn(5, 5, |x, y| (10 * y + x) as f64);
        let e = Map2::from_fn(5, 5, |x, y| -((10 * y + x) as f64));
        let p = ParamMaps::new(k, Map2::filled(5, 5, 0.0)).unwrap();
        let f = extract_features(&p, 2, 2, 1).unwrap();
        assert_eq!(f.values, vec![22.0, 0.0]);

        let p = ParamMaps {
            k: p.k.clone(),
            eps_prime: e,
        };
        let f = extract_features(&p, 2, 2, 3).unwrap();
        assert_eq!(f.values.len(), 18);
        assert_eq!(&f.values[..3], &[11.0, 12.0, 13.0]);
        assert_eq!(f.values[9], -11.0);
        assert_eq!(extract_features(&p, 2, 2, 5).unwrap().values.len(), 50);
    }

    #[test]
    fn feature_window_errors() {
        let p = ParamMaps::uniform(5, 5, 1e-7, 1.0).unwrap();
        assert!(extract_features(&p, 1, 2, 5).is_err());
        assert!(extract_features(&p, 4, 4, 3).is_err());
        assert!(extract_features(&p, 2, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn constant_maps_repeat(a in 1e-9f64..1e-5, b in 0.0f64..10.0, h in 0usize..3) {
            let w = 2 * h + 1;
            let p = ParamMaps::uniform(7, 7, a, b).unwrap();
            let f = extract_features(&p, 3, 3, w).unwrap();
            prop_assert_eq!(f.values.len(), 2 * w * w);
            prop_assert!(f.values[..w * w].iter().all(|&v| v == a));
            prop_assert!(f.values[w * w..].iter().all(|&v| v == b));
        }

        #[test]
        fn centroid_prediction_survives_affine_rescaling(
            scale in prop::collection::vec(0.01f64..100.0, 2),
            shift in prop::collection::vec(-50.0f64..50.0, 2),
            q in prop::collection::vec(-5.0f64..15.0, 2),
        ) {
            let base = clusters(3, 4, 2, 5.0, 3);
            let mut moved = base.clone();
            for s in &mut moved.samples {
                for (j, v) in s.values.iter_mut().enumerate() {
                    *v = *v * scale[j] + shift[j];
                }
            }
            let a = Classifier::Centroid(train_centroid(&base).unwrap());
            let b = Classifier::Centroid(train_centroid(&moved).unwrap());
            let qm: Vec<f64> = q.iter().enumerate().map(|(j, v)| v * scale[j] + shift[j]).collect();
            let pa = predict(&a, &fv(&q)).unwrap();
            let pb = predict(&b, &fv(&qm)).unwrap();
            // Distances agree to rounding; only exact ties could flip.
            for (x, y) in pa.scores.iter().zip(&pb.scores) {
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
            }
            let sorted = {
                let mut s = pa.scores.clone();
                s.sort_by(f64::total_cmp);
                s
            };
            if sorted[1] - sorted[0] > 1e-6 {
                prop_assert_eq!(pa.label, pb.label);
            }
        }
    }

    #[test]
    fn centroid_basics() {
        let d = dataset(&[(&[0.0, 0.0], 0), (&[2.0, 2.0], 0), (&[10.0, 4.0], 1)], 2);
        let m = train_centroid(&d).unwrap();
        assert_eq!(m.raw_centroids[0].as_deref(), Some(&[1.0, 1.0][..]));
        assert_eq!(m.raw_centroids[1].as_deref(), Some(&[10.0, 4.0][..]));

        let d = dataset(&[(&[1.0, 5.0], 0), (&[3.0, -1.0], 1)], 2);
        let c = Classifier::Centroid(train_centroid(&d).unwrap());
        assert_eq!(predict(&c, &fv(&[1.0, 5.0])).unwrap().label, 0);
        assert_eq!(predict(&c, &fv(&[3.0, -1.0])).unwrap().label, 1);
        // Midpoint is equidistant: lower index wins.
        assert_eq!(predict(&c, &fv(&[2.0, 2.0])).unwrap().label, 0);
        assert!(predict(&c, &fv(&[1.0])).is_err());
    }

    #[test]
    fn centroid_rejects_empty_class() {
        let d = dataset(&[(&[0.0], 0), (&[1.0], 0)], 2);
        assert!(matches!(train_centroid(&d), Err(TsfError::InvalidArgument(_))));
    }

    #[test]
    fn mlp_separates_two_blobs() {
        let d = clusters(2, 10, 2, 6.0, 11);
        let m = Classifier::Mlp(train_mlp(&d, &MlpConfig::with_seed(5)).unwrap());
        for s in &d.samples {
            assert_eq!(predict(&m, s).unwrap().label, s.label.unwrap());
        }
        let Classifier::Mlp(mm) = &m else { unreachable!() };
        assert!(mm.loss_history.last().unwrap() < &mm.loss_history[0]);
    }

    #[test]
    fn mlp_is_deterministic_and_needs_two_classes() {
        let d = clusters(3, 5, 4, 5.0, 2);
        let a = train_mlp(&d, &MlpConfig::with_seed(9)).unwrap();
        let b = train_mlp(&d, &MlpConfig::with_seed(9)).unwrap();
        assert_eq!(a, b);
        let c = train_mlp(&d, &MlpConfig::with_seed(10)).unwrap();
        assert_ne!(a.w1, c.w1);

        let one = dataset(&[(&[0.0], 0), (&[1.0], 0)], 2);
        assert!(matches!(train_mlp(&one, &MlpConfig::with_seed(1)), Err(TsfError::InvalidArgument(_))));
    }

    #[test]
    fn mlp_divergence_is_a_training_error() {
        let d = clusters(2, 5, 2, 5.0, 4);
        let cfg = MlpConfig {
            lr: 1e300,
            ..MlpConfig::with_seed(1)
        };
        assert!(matches!(train_mlp(&d, &cfg), Err(TsfError::Training(_))));
    }

    #[test]
    fn loo_on_separated_clusters() {
        let d = clusters(8, 6, 2, 10.0, 1);
        for kind in [ClassifierKind::Centroid, ClassifierKind::Mlp(MlpConfig::with_seed(3))] {
            let m = loo_cv(&d, &kind).unwrap();
            assert_eq!(m.total(), 48);
            assert_eq!(m.accuracy(), m.trace() as f64 / m.total() as f64);
            assert!(m.accuracy() >= 0.95, "{} accuracy {}", kind.name(), m.accuracy());
            for (c, row) in m.counts.iter().enumerate() {
                assert_eq!(row.iter().sum::<usize>(), 6, "row {c}");
            }
        }
    }

    #[test]
    fn loo_on_contradictory_pair_scores_zero() {
        let d = dataset(&[(&[1.0, 1.0], 0), (&[1.0, 1.0], 1)], 2);
        let m = loo_cv(&d, &ClassifierKind::Centroid).unwrap();
        assert_eq!(m.accuracy(), 0.0);
        assert_eq!(m.counts, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn metal_samples_bypass_the_classifier() {
        let mut d = clusters(2, 4, 2, 8.0, 6);
        let steel = d.label_index("steel");
        d.push(fv(&[0.0, 0.0]), steel, true);
        let m = loo_cv(&d, &ClassifierKind::Centroid).unwrap();
        assert_eq!(m.label_names.last().unwrap(), METAL_LABEL);
        assert_eq!(m.counts[steel][m.label_names.len() - 1], 1);

        let model = train(&clusters(2, 4, 2, 8.0, 6), &ClassifierKind::Centroid).unwrap();
        let names = vec!["m0".to_string(), "m1".to_string()];
        assert_eq!(classify_sample(&model, &names, &fv(&[0.0, 0.0]), true).unwrap(), METAL_LABEL);
        assert_eq!(classify_sample(&model, &names, &fv(&[0.0, 0.0]), false).unwrap(), "m0");
    }

    #[test]
    fn matrix_from_external_predictions() {
        let pairs = [("oak", "oak"), ("oak", "pine"), ("felt", "felt"), ("pine", "pine")];
        let m = ConfusionMatrix::from_label_pairs(vec![], &pairs);
        assert_eq!(m.label_names, vec!["oak", "pine", "felt"]);
        assert_eq!(m.trace(), 3);
        assert_eq!(m.accuracy(), 0.75);
    }
}
