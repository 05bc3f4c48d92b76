//! Linear per-pixel classifier over frozen features, and the session trainer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Featurizer;
use super::render::{LabeledImage, SessionData};
use crate::error::{Error, Result};
use crate::gas::{self, GradientBuffer, DEFAULT_EPSILON};
use crate::pas::{self, FeatureMap, FilterConfig, PrototypeBank};
use crate::seed::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelClassifierModel {
    featurizer: Featurizer,
    #[serde(with = "crate::rows")]
    weights: Array2<f64>,
    bias: Vec<f64>,
    frozen_featurizer: bool,
}

impl PixelClassifierModel {
    /// Zero-initialized classifier with `classes` outputs (background included).
    pub fn new(featurizer: Featurizer, classes: usize, frozen_featurizer: bool) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let d = featurizer.dim();
        Ok(Self {
            featurizer,
            weights: Array2::zeros((classes, d)),
            bias: vec![0.0; classes],
            frozen_featurizer,
        })
    }

    pub fn from_parts(
        featurizer: Featurizer,
        weights: Array2<f64>,
        bias: Vec<f64>,
        frozen_featurizer: bool,
    ) -> Result<Self> {
        if weights.ncols() != featurizer.dim() || weights.nrows() != bias.len() {
            return Err(crate::error::shape(
                format!("{} x {} weights", bias.len(), featurizer.dim()),
                format!("{:?}", weights.dim()),
            ));
        }
        Ok(Self {
            featurizer,
            weights,
            bias,
            frozen_featurizer,
        })
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn frozen_featurizer(&self) -> bool {
        self.frozen_featurizer
    }

    /// Adds zero rows for newly introduced classes.
    pub fn grow_classes(&mut self, classes: usize) {
        let (c, d) = self.weights.dim();
        if classes <= c {
            return;
        }
        let mut w = Array2::zeros((classes, d));
        w.slice_mut(s![..c, ..]).assign(&self.weights);
        self.weights = w;
        self.bias.resize(classes, 0.0);
    }

    pub fn features(&self, img: &LabeledImage) -> Array2<f64> {
        self.featurizer.transform(img)
    }

    pub fn logits(&self, features: ArrayView2<f64>) -> Array2<f64> {
        logits_with(features, &self.weights, &self.bias)
    }

    /// Per-pixel arg-max class grid.
    pub fn predict(&self, img: &LabeledImage) -> Array2<usize> {
        let z = self.logits(self.features(img).view());
        let labels: Vec<usize> = z
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (i, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        Array2::from_shape_vec((img.height(), img.width()), labels).expect("one label per pixel")
    }
}

pub(crate) fn logits_with(x: ArrayView2<f64>, w: &Array2<f64>, b: &[f64]) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    z += &ndarray::ArrayView1::from(b);
    z
}

/// `logsumexp(z) - z[c]`; non-finite whenever the logits are.
fn nll(z: &[f64], c: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    if z.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    lse - z[c]
}

fn softmax_in_place(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        pas::softmax_row(row.as_slice_mut().expect("standard layout"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Labeled images per step.
    pub batch_size: usize,
    pub lambda_cons: f64,
    pub lambda_proto: f64,
    pub gas: bool,
    /// Consistency on jointly validated unlabeled pixels.
    pub pas: bool,
    /// Prototype replay of prior-session classes.
    pub replay: bool,
    pub use_unlabeled: bool,
    pub ema_alpha: f64,
    pub filter: FilterConfig,
    pub gas_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 10.0,
            epochs: 20,
            batch_size: 5,
            lambda_cons: 1.0,
            lambda_proto: 0.1,
            gas: false,
            pas: false,
            replay: false,
            use_unlabeled: true,
            ema_alpha: 0.9,
            filter: FilterConfig::default(),
            gas_epsilon: DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lambda_cons >= 0.0 && self.lambda_cons.is_finite()) {
            return bad(format!("lambda_cons must be >= 0, got {}", self.lambda_cons));
        }
        if !(self.lambda_proto >= 0.0 && self.lambda_proto.is_finite()) {
            return bad(format!("lambda_proto must be >= 0, got {}", self.lambda_proto));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return bad(format!("ema_alpha must lie in [0, 1), got {}", self.ema_alpha));
        }
        if !(self.gas_epsilon > 0.0 && self.gas_epsilon.is_finite()) {
            return bad(format!("gas_epsilon must be positive, got {}", self.gas_epsilon));
        }
        self.filter.validate()
    }

    /// Plain cross-entropy fine-tuning with every mechanism off.
    pub fn vanilla(&self) -> Self {
        Self {
            gas: false,
            pas: false,
            replay: false,
            use_unlabeled: false,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    pub consistency: f64,
    pub replay: f64,
    pub total: f64,
    pub accepted_pct: Option<f64>,
    pub measured_f: Option<f64>,
    pub measured_rho: Option<f64>,
    /// Mean GAS noise scale over the epoch's perturbed steps.
    pub gas_scale_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub session: usize,
    pub epochs: Vec<EpochLog>,
    /// Total objective at every step, in order.
    pub step_losses: Vec<f64>,
    pub featurizer_hash_before: String,
    pub featurizer_hash_after: String,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub model: PixelClassifierModel,
    pub log: TrainingLog,
    /// Prior bank merged with this session's prototypes.
    pub bank: PrototypeBank,
}

/// Labeled image order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &format!("bench/train/epoch{epoch}")));
    order.shuffle(&mut rng);
    order
}

fn unlabeled_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(child_seed(seed, &format!("bench/train/unlabeled{epoch}")));
    order.shuffle(&mut rng);
    order
}

struct Cached {
    x: Array2<f64>,
    y: Vec<usize>,
    h: usize,
    w: usize,
}

fn cache(model: &PixelClassifierModel, images: &[LabeledImage]) -> Vec<Cached> {
    images
        .iter()
        .map(|img| Cached {
            x: model.features(img),
            y: img.labels.iter().map(|&l| l as usize).collect(),
            h: img.height(),
            w: img.width(),
        })
        .collect()
}

fn stack(parts: &[&Cached]) -> (Array2<f64>, Vec<usize>) {
    let views: Vec<_> = parts.iter().map(|c| c.x.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("equal feature widths");
    let y = parts.iter().flat_map(|c| c.y.iter().copied()).collect();
    (x, y)
}

fn session_prototypes(cached: &[Cached]) -> Result<PrototypeBank> {
    let samples = cached
        .iter()
        .map(|c| {
            let fm = FeatureMap::from_pixel_rows(c.x.view(), c.h, c.w)?;
            let labels = Array2::from_shape_vec((c.h, c.w), c.y.clone()).expect("h * w labels");
            Ok((fm, labels))
        })
        .collect::<Result<Vec<_>>>()?;
    pas::compute_prototypes(&samples)
}

/// Mean CE over rows and its logit gradient `(p - onehot) / n`.
fn cross_entropy(z: &Array2<f64>, y: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = z.nrows();
    let mut p = z.clone();
    softmax_in_place(&mut p);
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        if c >= p.ncols() {
            return Err(Error::Config(format!(
                "label {c} outside the classifier's {} outputs",
                p.ncols()
            )));
        }
        loss += nll(z.row(i).as_slice().expect("standard layout"), c);
        p[[i, c]] -= 1.0;
    }
    p /= n as f64;
    Ok((loss / n as f64, p))
}

/// Consistency over jointly accepted rows: loss and student-logit gradient.
fn consistency(
    zs: &Array2<f64>,
    zt: &Array2<f64>,
    x: &Array2<f64>,
    bank: &PrototypeBank,
    filter: &FilterConfig,
) -> Result<(f64, Array2<f64>, usize)> {
    let ds = pas::decide_rows(zs.view(), x.view(), bank, filter)?;
    let dt = pas::decide_rows(zt.view(), x.view(), bank, filter)?;
    let mut ps = zs.clone();
    softmax_in_place(&mut ps);
    let mut pt = zt.clone();
    softmax_in_place(&mut pt);
    let joint: Vec<bool> = ds.iter().zip(&dt).map(|(a, b)| a.accepted && b.accepted).collect();
    let v = joint.iter().filter(|&&j| j).count();
    let mut grad = Array2::zeros(zs.dim());
    if v == 0 {
        return Ok((0.0, grad, 0));
    }
    let mut loss = 0.0;
    for (i, _) in joint.iter().enumerate().filter(|(_, &j)| j) {
        let s_row = ps.row(i);
        let t_row = pt.row(i);
        let g: Vec<f64> = s_row
            .iter()
            .zip(t_row.iter())
            .map(|(a, b)| {
                loss += (a - b) * (a - b);
                2.0 * (a - b) / v as f64
            })
            .collect();
        let inner: f64 = g.iter().zip(s_row.iter()).map(|(a, b)| a * b).sum();
        for (k, gk) in g.iter().enumerate() {
            grad[[i, k]] = s_row[k] * (gk - inner);
        }
    }
    Ok((loss / v as f64, grad, v))
}

/// Replay CE of `softmax(W P_c + b)` over bank classes, with gradients.
fn replay(
    bank: &PrototypeBank,
    w: &Array2<f64>,
    b: &[f64],
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let n = bank.len();
    let mut dw = Array2::zeros(w.dim());
    let mut db = Array1::zeros(b.len());
    let mut loss = 0.0;
    for (class, proto) in bank.iter() {
        let p = Array1::from(proto.vector.clone());
        let mut z = w.dot(&p);
        z += &ndarray::ArrayView1::from(b);
        let mut zv = z.to_vec();
        loss += nll(&zv, class);
        pas::softmax_row(&mut zv);
        zv[class] -= 1.0;
        for (k, g) in zv.iter().enumerate() {
            let g = g / n as f64;
            dw.row_mut(k).scaled_add(g, &p);
            db[k] += g;
        }
    }
    Ok((loss / n as f64, dw, db))
}

/// Coverage and precision of the joint filter over all unlabeled pixels.
fn measure_filter(
    student: &PixelClassifierModel,
    teacher: &PixelClassifierModel,
    unlabeled: &[Cached],
    bank: &PrototypeBank,
    filter: &FilterConfig,
) -> Result<(f64, f64)> {
    let (mut total, mut accepted, mut correct) = (0usize, 0usize, 0usize);
    for c in unlabeled {
        let zs = student.logits(c.x.view());
        let zt = teacher.logits(c.x.view());
        let ds = pas::decide_rows(zs.view(), c.x.view(), bank, filter)?;
        let dt = pas::decide_rows(zt.view(), c.x.view(), bank, filter)?;
        for ((a, b), &truth) in ds.iter().zip(&dt).zip(&c.y) {
            total += 1;
            if a.accepted && b.accepted {
                accepted += 1;
                correct += usize::from(b.class == truth);
            }
        }
    }
    let f = accepted as f64 / total as f64;
    let rho = if accepted == 0 { 1.0 } else { correct as f64 / accepted as f64 };
    Ok((f, rho))
}

/// Trains one session. The model is grown to `classes` outputs first.
pub fn train_session(
    model: &PixelClassifierModel,
    data: &SessionData,
    prior_bank: &PrototypeBank,
    classes: usize,
    config: &TrainConfig,
) -> Result<SessionOutcome> {
    config.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::Config(format!("session {} has no labeled images", data.index)));
    }
    let mut student = model.clone();
    let hash_before = student.featurizer.hash();
    if !student.featurizer.is_fitted() {
        student.featurizer.fit(&data.labeled)?;
    } else if !student.frozen_featurizer {
        student.featurizer.refit(&data.labeled)?;
    }
    student.grow_classes(classes);
    let labeled = cache(&student, &data.labeled);
    let unlabeled = if config.use_unlabeled {
        cache(&student, &data.unlabeled)
    } else {
        Vec::new()
    };
    let current = session_prototypes(&labeled)?;
    let mut bank = prior_bank.clone();
    bank.merge(&current);

    let use_pas = config.pas && !unlabeled.is_empty();
    let use_replay = config.replay && !prior_bank.is_empty();
    let mut teacher = student.clone();
    let (c, d) = student.weights.dim();
    let mut buffer = GradientBuffer::with_epsilon(c, d, config.gas_epsilon)?;

    let n = labeled.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let u_batch = if unlabeled.is_empty() {
        0
    } else {
        unlabeled.len().div_ceil(steps_per_epoch)
    };

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, n);
        let u_order = unlabeled_order(config.seed, epoch, unlabeled.len());
        let (mut s_ce, mut s_cons, mut s_rep, mut s_tot) = (0.0, 0.0, 0.0, 0.0);
        let (mut scale_sum, mut scale_steps) = (0.0, 0usize);
        for (k, chunk) in order.chunks(config.batch_size).enumerate() {
            let w_eff = if config.gas && buffer.step_count() > 0 {
                let scales = gas::noise_scales(&buffer)?;
                scale_sum += scales.scales().mean().unwrap_or(0.0);
                scale_steps += 1;
                let seed = child_seed(config.seed, &format!("bench/train/gas/{global_step}"));
                gas::perturb(&student.weights, &scales, seed)?
            } else {
                student.weights.clone()
            };

            let parts: Vec<&Cached> = chunk.iter().map(|&i| &labeled[i]).collect();
            let (x, y) = stack(&parts);
            let z = logits_with(x.view(), &w_eff, &student.bias);
            let (ce, dz) = cross_entropy(&z, &y)?;
            let mut dw = dz.t().dot(&x);
            let mut db = dz.sum_axis(Axis(0));
            let mut total = ce;

            if use_pas {
                let lo = (k * u_batch).min(unlabeled.len());
                let hi = ((k + 1) * u_batch).min(unlabeled.len());
                if lo < hi {
                    let parts: Vec<&Cached> = u_order[lo..hi].iter().map(|&i| &unlabeled[i]).collect();
                    let (xu, _) = stack(&parts);
                    let zs = logits_with(xu.view(), &w_eff, &student.bias);
                    let zt = teacher.logits(xu.view());
                    let (lc, gz, _) = consistency(&zs, &zt, &xu, &bank, &config.filter)?;
                    dw.scaled_add(config.lambda_cons, &gz.t().dot(&xu));
                    db.scaled_add(config.lambda_cons, &gz.sum_axis(Axis(0)));
                    total += config.lambda_cons * lc;
                    s_cons += lc;
                }
            }
            if use_replay {
                let (lr, rw, rb) = replay(prior_bank, &w_eff, &student.bias)?;
                dw.scaled_add(config.lambda_proto, &rw);
                db.scaled_add(config.lambda_proto, &rb);
                total += config.lambda_proto * lr;
                s_rep += lr;
            }
            if !total.is_finite() {
                return Err(Error::Divergence {
                    step: global_step,
                    loss: total,
                });
            }
            if config.gas {
                buffer.accumulate(&dw)?;
            }
            student.weights.scaled_add(-config.lr, &dw);
            for (b, g) in student.bias.iter_mut().zip(db.iter()) {
                *b -= config.lr * g;
            }
            if use_pas {
                ema_into(&mut teacher, &student, config.ema_alpha);
            }
            s_ce += ce;
            s_tot += total;
            step_losses.push(total);
            global_step += 1;
        }
        let m = steps_per_epoch as f64;
        let measured = if !unlabeled.is_empty() && !prior_bank.is_empty() {
            Some(measure_filter(&student, &teacher, &unlabeled, &bank, &config.filter)?)
        } else {
            None
        };
        epochs.push(EpochLog {
            epoch,
            ce: s_ce / m,
            consistency: s_cons / m,
            replay: s_rep / m,
            total: s_tot / m,
            accepted_pct: measured.map(|(f, _)| 100.0 * f),
            measured_f: measured.map(|(f, _)| f),
            measured_rho: measured.map(|(_, r)| r),
            gas_scale_mean: (scale_steps > 0).then(|| scale_sum / scale_steps as f64),
        });
    }

    // Features are frozen within the session, so these equal the start-of-session prototypes.
    let mut out_bank = prior_bank.clone();
    out_bank.merge(&session_prototypes(&labeled)?);
    let hash_after = student.featurizer.hash();
    Ok(SessionOutcome {
        model: student,
        log: TrainingLog {
            session: data.index,
            epochs,
            step_losses,
            featurizer_hash_before: hash_before,
            featurizer_hash_after: hash_after,
        },
        bank: out_bank,
    })
}

fn ema_into(teacher: &mut PixelClassifierModel, student: &PixelClassifierModel, alpha: f64) {
    teacher
        .weights
        .zip_mut_with(&student.weights, |t, s| *t = alpha * *t + (1.0 - alpha) * s);
    for (t, s) in teacher.bias.iter_mut().zip(&student.bias) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::protocol::ContinualProtocol;
    use crate::bench::render::generate_protocol_data;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};

    fn tiny() -> (PixelClassifierModel, SessionData) {
        let f = Featurizer::new(7, 1).unwrap();
        let m = PixelClassifierModel::new(f, 3, true).unwrap();
        let p = ContinualProtocol::joint_shift_3(5, 6).unwrap();
        let mut data = generate_protocol_data(&p, (16, 16), 2).unwrap();
        let mut s0 = data.remove(0);
        s0.labeled.truncate(10);
        (m, s0)
    }

    #[test]
    fn zero_epochs_leave_classifier_unchanged() {
        let (m, s0) = tiny();
        let mut fitted = m.clone();
        fitted.featurizer.fit(&s0.labeled).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_session(&fitted, &s0, &PrototypeBank::default(), 4, &cfg).unwrap();
        assert_eq!(out.model.weights().slice(s![..3, ..]), fitted.weights());
        assert!(out.model.weights().slice(s![3.., ..]).iter().all(|&v| v == 0.0));
        assert!(out.log.step_losses.is_empty());
        assert_eq!(out.log.featurizer_hash_before, out.log.featurizer_hash_after);
    }

    #[test]
    fn hand_gradient_step() {
        // 1 image of 2x2 pixels, D = 2, C = 2, checked against a hand softmax-CE step.
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -1.0]];
        let y = vec![0usize, 1, 1, 0];
        let w = array![[0.2, -0.1], [0.0, 0.3]];
        let b = [0.1, -0.1];
        let lr = 0.5;
        let z = logits_with(x.view(), &w, &b);
        let (_, dz) = cross_entropy(&z, &y).unwrap();
        let dw = dz.t().dot(&x);
        let mut expect = w.clone();
        for i in 0..4 {
            let z0 = w[[0, 0]] * x[[i, 0]] + w[[0, 1]] * x[[i, 1]] + b[0];
            let z1 = w[[1, 0]] * x[[i, 0]] + w[[1, 1]] * x[[i, 1]] + b[1];
            let p1 = 1.0 / (1.0 + (z0 - z1).exp());
            let p = [1.0 - p1, p1];
            for k in 0..2 {
                let g = (p[k] - if y[i] == k { 1.0 } else { 0.0 }) / 4.0;
                for j in 0..2 {
                    expect[[k, j]] -= lr * g * x[[i, j]];
                }
            }
        }
        let mut got = w.clone();
        got.scaled_add(-lr, &dw);
        for (a, e) in got.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn consistency_gradient_matches_finite_difference() {
        let x = array![[1.0, 0.5], [0.2, -0.3], [0.9, 0.1]];
        let mut bank = PrototypeBank::default();
        let protos = vec![(
            FeatureMap::new(Array3::from_shape_vec((2, 1, 3), vec![1.0, 0.2, 0.9, 0.5, -0.3, 0.1]).unwrap())
                .unwrap(),
            array![[0usize, 1, 0]],
        )];
        bank.merge(&pas::compute_prototypes(&protos).unwrap());
        let filter = FilterConfig::new(0.0, -1.0).unwrap();
        let zs = array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2]];
        let zt = array![[0.1, 0.0], [0.3, 0.1], [0.0, 0.0]];
        let (_, g, v) = consistency(&zs, &zt, &x, &bank, &filter).unwrap();
        assert_eq!(v, 3);
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..2 {
                let mut up = zs.clone();
                up[[i, k]] += h;
                let mut dn = zs.clone();
                dn[[i, k]] -= h;
                let lu = consistency(&up, &zt, &x, &bank, &filter).unwrap().0;
                let ld = consistency(&dn, &zt, &x, &bank, &filter).unwrap().0;
                assert_abs_diff_eq!(g[[i, k]], (lu - ld) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn replay_matches_library_loss_without_bias() {
        let mut bank = PrototypeBank::default();
        let fm = FeatureMap::new(Array3::from_shape_vec((2, 1, 2), vec![3.0, 0.0, 4.0, 1.0]).unwrap()).unwrap();
        bank.merge(&pas::compute_prototypes(&[(fm, array![[0usize, 1]])]).unwrap());
        let w = array![[0.5, -0.2], [0.1, 0.7]];
        let (l, dw, _) = replay(&bank, &w, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, pas::prototype_replay_loss(&bank, &w).unwrap(), epsilon = 1e-14);
        let h = 1e-6;
        for k in 0..2 {
            for j in 0..2 {
                let mut up = w.clone();
                up[[k, j]] += h;
                let mut dn = w.clone();
                dn[[k, j]] -= h;
                let fd = (replay(&bank, &up, &[0.0, 0.0]).unwrap().0
                    - replay(&bank, &dn, &[0.0, 0.0]).unwrap().0)
                    / (2.0 * h);
                assert_abs_diff_eq!(dw[[k, j]], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (m, s0) = tiny();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_session(&m, &s0, &PrototypeBank::default(), 4, &cfg).unwrap();
        let b = train_session(&m, &s0, &PrototypeBank::default(), 4, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        let first = a.log.epochs.first().unwrap().ce;
        let last = a.log.epochs.last().unwrap().ce;
        assert!(last < first, "{first} -> {last}");
        assert_eq!(a.bank.class_ids().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn divergence_reports_step() {
        let (m, s0) = tiny();
        let cfg = TrainConfig {
            epochs: 3,
            lr: f64::MAX,
            ..TrainConfig::default()
        };
        match train_session(&m, &s0, &PrototypeBank::default(), 4, &cfg) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
