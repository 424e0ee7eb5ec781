//! Training objectives.
//!
//! The supervised term is `ce_weight * CE - log_dice_weight * ln(softDice)`,
//! the pseudo-supervised term is a masked cross-entropy, and the two are
//! combined as `sup + lambda * ps` with `lambda` ramped up over the epochs.
//!
//! Every loss returns its value together with the gradient with respect to the
//! network logits (the softmax Jacobian is folded in), so the trainer can feed
//! it straight into the backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{LabelMap, IGNORE_INDEX};
use crate::pseudolabel::{ProbabilityMap, PseudoLabelMap};
use crate::real::Real;
use crate::tensor::Tensor3;

/// Floor applied inside `ln` so a saturated softmax cannot produce infinities.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ce_weight: f64,
    pub log_dice_weight: f64,
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce_weight: 1.0,
            log_dice_weight: 1.0,
            dice_smooth: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.ce_weight >= 0.0 && self.log_dice_weight >= 0.0,
            InvalidConfig,
            "loss weights must be non-negative: {self:?}"
        );
        ensure!(
            self.ce_weight + self.log_dice_weight > 0.0,
            InvalidConfig,
            "at least one supervised loss weight must be positive"
        );
        ensure!(self.dice_smooth > 0.0, InvalidConfig, "dice_smooth must be positive");
        Ok(())
    }
}

/// Ramp-up of the pseudo-supervised weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub total_epochs: usize,
    /// Use `exp(-5 (1 - t)^2)` instead of the linear exponent.
    #[serde(default)]
    pub squared: bool,
}

impl RampSchedule {
    pub fn new(total_epochs: usize) -> Result<Self> {
        ensure!(total_epochs >= 1, InvalidConfig, "ramp needs at least one epoch");
        Ok(Self {
            total_epochs,
            squared: false,
        })
    }
}

/// `exp(-5 (1 - epoch / total_epochs))`, or the squared-exponent variant.
pub fn lambda_at(schedule: &RampSchedule, epoch: usize) -> Result<f64> {
    ensure!(schedule.total_epochs >= 1, InvalidConfig, "ramp needs at least one epoch");
    ensure!(
        epoch <= schedule.total_epochs,
        InvalidInput,
        "epoch {epoch} is past the ramp end {}",
        schedule.total_epochs
    );
    let gap = 1.0 - epoch as f64 / schedule.total_epochs as f64;
    let exponent = if schedule.squared { gap * gap } else { gap };
    Ok((-5.0 * exponent).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossStatus {
    Ok,
    /// No pixel contributed; the value is defined as 0.
    NoPixels,
}

/// Scalar loss plus its gradient with respect to each image's logits.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: f64,
    pub grad_logits: Vec<Tensor3<T>>,
    pub counted_pixels: usize,
    pub status: LossStatus,
}

impl<T: Real> LossOutput<T> {
    fn zero(probs: &[ProbabilityMap<T>]) -> Self {
        Self {
            value: 0.0,
            grad_logits: probs
                .iter()
                .map(|p| Tensor3::zeros(p.classes(), p.height(), p.width()))
                .collect(),
            counted_pixels: 0,
            status: LossStatus::NoPixels,
        }
    }

    /// `self * a + other * b`, value and gradients alike.
    pub fn combine(mut self, a: f64, other: &LossOutput<T>, b: f64) -> Self {
        let (ta, tb) = (T::from_f64(a), T::from_f64(b));
        for (g, h) in self.grad_logits.iter_mut().zip(&other.grad_logits) {
            for (x, &y) in g.data.iter_mut().zip(&h.data) {
                *x = *x * ta + y * tb;
            }
        }
        self.value = self.value * a + other.value * b;
        self.counted_pixels = self.counted_pixels.max(other.counted_pixels);
        if other.status == LossStatus::Ok {
            self.status = LossStatus::Ok;
        }
        self
    }
}

fn check_batch<T: Real>(probs: &[ProbabilityMap<T>], labels: &[&LabelMap]) -> Result<()> {
    ensure!(
        probs.len() == labels.len(),
        InvalidInput,
        "batch has {} predictions but {} label maps",
        probs.len(),
        labels.len()
    );
    for (i, (p, l)) in probs.iter().zip(labels).enumerate() {
        ensure!(
            p.height() == l.height() && p.width() == l.width(),
            InvalidInput,
            "batch item {i}: prediction {}x{} vs labels {}x{}",
            p.height(),
            p.width(),
            l.height(),
            l.width()
        );
        for &v in l.data() {
            ensure!(
                v == IGNORE_INDEX || (v as usize) < p.classes(),
                InvalidInput,
                "batch item {i}: label {v} out of range for {} classes",
                p.classes()
            );
        }
    }
    Ok(())
}

/// Mean cross-entropy over non-ignored pixels of the batch.
pub fn cross_entropy<T: Real>(probs: &[ProbabilityMap<T>], labels: &[&LabelMap]) -> Result<LossOutput<T>> {
    check_batch(probs, labels)?;
    let count: usize = labels
        .iter()
        .map(|l| l.data().iter().filter(|&&v| v != IGNORE_INDEX).count())
        .sum();
    let mut out = LossOutput::zero(probs);
    if count == 0 {
        return Ok(out);
    }
    let inv = 1.0 / count as f64;
    let tinv = T::from_f64(inv);
    let mut total = 0.0;
    for ((p, l), g) in probs.iter().zip(labels).zip(out.grad_logits.iter_mut()) {
        let n = p.pixels();
        for (px, &y) in l.data().iter().enumerate() {
            if y == IGNORE_INDEX {
                continue;
            }
            let y = y as usize;
            total -= p.prob(y, px).to_f64().max(LOG_FLOOR).ln();
            for c in 0..p.classes() {
                let target = if c == y { T::one() } else { T::zero() };
                g.data[c * n + px] = (p.prob(c, px) - target) * tinv;
            }
        }
    }
    out.value = total * inv;
    out.counted_pixels = count;
    out.status = LossStatus::Ok;
    Ok(out)
}

/// Smoothed soft Dice of every class, pooled over the non-ignored pixels of
/// the batch: `(2 sum(p g) + s) / (sum p + sum g + s)`.
pub fn soft_dice_per_class<T: Real>(
    probs: &[ProbabilityMap<T>],
    labels: &[&LabelMap],
    smooth: f64,
) -> Result<Vec<f64>> {
    check_batch(probs, labels)?;
    let classes = probs.first().map_or(0, |p| p.classes());
    let stats = dice_stats(probs, labels, classes);
    Ok(stats
        .iter()
        .map(|s| (2.0 * s.inter + smooth) / (s.pred + s.truth + smooth))
        .collect())
}

#[derive(Default, Clone, Copy)]
struct DiceStats {
    inter: f64,
    pred: f64,
    truth: f64,
}

fn dice_stats<T: Real>(probs: &[ProbabilityMap<T>], labels: &[&LabelMap], classes: usize) -> Vec<DiceStats> {
    let mut stats = vec![DiceStats::default(); classes];
    for (p, l) in probs.iter().zip(labels) {
        for (px, &y) in l.data().iter().enumerate() {
            if y == IGNORE_INDEX {
                continue;
            }
            for (c, s) in stats.iter_mut().enumerate() {
                let pc = p.prob(c, px).to_f64();
                s.pred += pc;
                if c == y as usize {
                    s.truth += 1.0;
                    s.inter += pc;
                }
            }
        }
    }
    stats
}

/// `-ln(mean_c softDice_c)` over non-ignored pixels.
pub fn log_soft_dice<T: Real>(
    probs: &[ProbabilityMap<T>],
    labels: &[&LabelMap],
    smooth: f64,
) -> Result<LossOutput<T>> {
    check_batch(probs, labels)?;
    let mut out = LossOutput::zero(probs);
    let Some(first) = probs.first() else {
        return Ok(out);
    };
    let classes = first.classes();
    let stats = dice_stats(probs, labels, classes);
    let count: usize = labels
        .iter()
        .map(|l| l.data().iter().filter(|&&v| v != IGNORE_INDEX).count())
        .sum();
    if count == 0 {
        return Ok(out);
    }
    let denoms: Vec<f64> = stats.iter().map(|s| s.pred + s.truth + smooth).collect();
    let dices: Vec<f64> = stats
        .iter()
        .zip(&denoms)
        .map(|(s, d)| (2.0 * s.inter + smooth) / d)
        .collect();
    let mean = dices.iter().sum::<f64>() / classes as f64;
    out.value = -mean.ln();
    out.counted_pixels = count;
    out.status = LossStatus::Ok;

    // d(-ln mean)/d p_c at a pixel with one-hot truth g_c.
    let scale = -1.0 / (mean * classes as f64);
    let mut dp = vec![0.0f64; classes];
    for ((p, l), g) in probs.iter().zip(labels).zip(out.grad_logits.iter_mut()) {
        let n = p.pixels();
        for (px, &y) in l.data().iter().enumerate() {
            if y == IGNORE_INDEX {
                continue;
            }
            for c in 0..classes {
                let truth = if c == y as usize { 1.0 } else { 0.0 };
                let num = 2.0 * stats[c].inter + smooth;
                dp[c] = scale * (2.0 * truth * denoms[c] - num) / (denoms[c] * denoms[c]);
            }
            // Softmax Jacobian: dz_k = p_k (dp_k - sum_j p_j dp_j).
            let dot: f64 = (0..classes).map(|c| p.prob(c, px).to_f64() * dp[c]).sum();
            for c in 0..classes {
                g.data[c * n + px] = T::from_f64(p.prob(c, px).to_f64() * (dp[c] - dot));
            }
        }
    }
    Ok(out)
}

/// Weighted cross-entropy plus negative log soft Dice. Returns 0 with
/// [`LossStatus::NoPixels`] when every ground-truth pixel is ignored.
pub fn supervised_loss<T: Real>(
    probs: &[ProbabilityMap<T>],
    labels: &[&LabelMap],
    weights: &LossWeights,
) -> Result<LossOutput<T>> {
    weights.validate()?;
    let ce = cross_entropy(probs, labels)?;
    if ce.status == LossStatus::NoPixels {
        log::warn!("supervised loss over an empty pixel set; returning 0");
        return Ok(ce);
    }
    let dice = log_soft_dice(probs, labels, weights.dice_smooth)?;
    Ok(ce.combine(weights.ce_weight, &dice, weights.log_dice_weight))
}

/// Mean cross-entropy against pseudo labels over retained pixels only.
/// The labels are constants: no gradient is attributed to them.
pub fn pseudo_supervised_loss<T: Real>(
    probs: &[ProbabilityMap<T>],
    pseudo: &[&PseudoLabelMap],
) -> Result<LossOutput<T>> {
    let labels: Vec<&LabelMap> = pseudo.iter().map(|p| p.labels()).collect();
    cross_entropy(probs, &labels)
}

/// `sup + lam * ps`.
pub fn overall_loss(sup: f64, ps: f64, lam: f64) -> f64 {
    sup + lam * ps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudolabel::{make_pseudo_labels, ConfidenceMask};
    use approx::assert_abs_diff_eq;

    fn uniform(classes: usize, h: usize, w: usize) -> ProbabilityMap<f64> {
        ProbabilityMap::from_logits(&Tensor3::zeros(classes, h, w))
    }

    fn onehot_logits(labels: &LabelMap, classes: usize, gap: f64) -> ProbabilityMap<f64> {
        let n = labels.height() * labels.width();
        let mut t = Tensor3::zeros(classes, labels.height(), labels.width());
        for (p, &y) in labels.data().iter().enumerate() {
            t.data[y as usize * n + p] = gap;
        }
        ProbabilityMap::from_logits(&t)
    }

    #[test]
    fn ramp_spot_values() {
        let s = RampSchedule::new(100).unwrap();
        assert_eq!(lambda_at(&s, 100).unwrap(), 1.0);
        assert_abs_diff_eq!(lambda_at(&s, 0).unwrap(), 0.006737946999085467, epsilon = 1e-15);
        assert_abs_diff_eq!(lambda_at(&s, 50).unwrap(), 0.0820849986238988, epsilon = 1e-15);
        assert!(lambda_at(&s, 101).is_err());
        let sq = RampSchedule { total_epochs: 100, squared: true };
        assert_abs_diff_eq!(lambda_at(&sq, 50).unwrap(), (-1.25f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn ramp_is_strictly_increasing_and_bounded() {
        let s = RampSchedule::new(37).unwrap();
        let vals: Vec<f64> = (0..=37).map(|e| lambda_at(&s, e).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
        assert!(vals.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let labels = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let p = onehot_logits(&labels, 2, 40.0);
        let out = supervised_loss(&[p], &[&labels], &LossWeights::default()).unwrap();
        assert!(out.value.abs() < 1e-9, "{}", out.value);
    }

    #[test]
    fn uniform_prediction_cross_entropy_is_ln2() {
        let labels = LabelMap::filled(3, 3, 1);
        let ce = cross_entropy(&[uniform(2, 3, 3)], &[&labels]).unwrap();
        assert_abs_diff_eq!(ce.value, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn half_probability_dice_against_full_foreground() {
        let labels = LabelMap::filled(4, 4, 1);
        let d = soft_dice_per_class(&[uniform(2, 4, 4)], &[&labels], 1e-12).unwrap();
        assert_abs_diff_eq!(d[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_loss_examples() {
        let p = uniform(2, 1, 3);
        let none = make_pseudo_labels(&p, &ConfidenceMask::new(1, 3, vec![0, 0, 0]).unwrap(), IGNORE_INDEX).unwrap();
        let out = pseudo_supervised_loss(&[p.clone()], &[&none]).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.status, LossStatus::NoPixels);
        assert!(out.grad_logits[0].data.iter().all(|&g| g == 0.0));

        let one = make_pseudo_labels(&p, &ConfidenceMask::new(1, 3, vec![0, 1, 0]).unwrap(), IGNORE_INDEX).unwrap();
        let out = pseudo_supervised_loss(&[p], &[&one]).unwrap();
        assert_abs_diff_eq!(out.value, -(0.5f64.ln()), epsilon = 1e-15);

        let labels = LabelMap::new(1, 2, vec![1, 0]).unwrap();
        let sharp = onehot_logits(&labels, 2, 60.0);
        let all = make_pseudo_labels(&sharp, &ConfidenceMask::ones(1, 2), IGNORE_INDEX).unwrap();
        assert!(pseudo_supervised_loss(&[sharp], &[&all]).unwrap().value < 1e-20);
    }

    #[test]
    fn empty_supervision_is_flagged() {
        let labels = LabelMap::filled(2, 2, IGNORE_INDEX);
        let out = supervised_loss(&[uniform(2, 2, 2)], &[&labels], &LossWeights::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.status, LossStatus::NoPixels);
    }

    #[test]
    fn overall_examples() {
        assert_eq!(overall_loss(1.0, 0.5, 0.5), 1.25);
        assert_eq!(overall_loss(0.7, 3.0, 0.0), 0.7);
        assert_eq!(overall_loss(0.7, 0.0, 0.9), 0.7);
    }

    #[test]
    fn labels_out_of_range_are_rejected() {
        let labels = LabelMap::filled(2, 2, 3);
        assert!(cross_entropy(&[uniform(2, 2, 2)], &[&labels]).is_err());
        assert!(cross_entropy(&[uniform(2, 2, 2)], &[]).is_err());
    }

    /// Finite differences of the supervised loss with respect to the logits.
    #[test]
    fn supervised_logit_gradient_matches_finite_differences() {
        let labels = LabelMap::new(2, 3, vec![0, 1, 2, 2, IGNORE_INDEX, 1]).unwrap();
        let logits: Vec<f64> = (0..18).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let weights = LossWeights { ce_weight: 0.7, log_dice_weight: 1.3, dice_smooth: 1e-3 };
        let eval = |z: &[f64]| {
            let t = Tensor3::from_vec(3, 2, 3, z.to_vec()).unwrap();
            supervised_loss(&[ProbabilityMap::from_logits(&t)], &[&labels], &weights).unwrap()
        };
        let analytic = eval(&logits).grad_logits[0].data.clone();
        let report =
            tist_oracles::fd_gradient_check(|z| eval(z).value, &logits, &analytic, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report}");
    }

    /// Gradient descent on a single shared logit bias lowers the loss at every step.
    #[test]
    fn supervised_loss_decreases_along_gradient() {
        let labels = LabelMap::new(1, 4, vec![1, 1, 1, 0]).unwrap();
        let base = [0.2, -0.1, 0.4, 0.3, 0.0, 0.1, -0.2, 0.5];
        let eval = |b: f64| {
            let mut z = base.to_vec();
            for v in &mut z[4..] {
                *v += b;
            }
            let t = Tensor3::from_vec(2, 1, 4, z).unwrap();
            supervised_loss(&[ProbabilityMap::from_logits(&t)], &[&labels], &LossWeights::default()).unwrap()
        };
        let mut b = -1.0;
        let mut prev = f64::INFINITY;
        for _ in 0..25 {
            let out = eval(b);
            assert!(out.value < prev);
            prev = out.value;
            let grad: f64 = out.grad_logits[0].data[4..].iter().sum();
            b -= 0.5 * grad;
        }
    }
}
