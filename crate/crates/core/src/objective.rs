//! Cross-view mutual-information estimators, the extractor alignment term,
//! and anomaly scoring.
//!
//! All estimators share the critic `T(a, b) = cos(a, b) / τ`. Positive pairs
//! are `(h_i, h*_i)`; everything else in the batch serves as negatives.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{cosine, Tape, Tensor, TensorError, Var, COSINE_EPS};

/// Probabilities are clamped into `[SKL_CLAMP, 1 - SKL_CLAMP]` before the
/// divergence is taken.
pub const SKL_CLAMP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("batch of {got} graphs is too small; at least 2 are needed for negatives")]
    BatchSize { got: usize },
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[serde(alias = "info_nce", alias = "info-nce")]
    InfoNce,
    Js,
    Dv,
}

/// Which similarities form the Info-NCE denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Same-view pairs `(h_i, h_j)`, `j != i`; the positive is not in the
    /// denominator.
    #[default]
    SameView,
    /// Cross-view pairs `(h_i, h*_j)` over all `j`, positive included.
    CrossView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub estimator: Estimator,
    pub temperature: f64,
    /// Weight of the alignment term between the lifted and the dual
    /// extractor's edge probabilities.
    pub beta: f64,
    pub negative_mode: NegativeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::InfoNce,
            temperature: 0.2,
            beta: 0.0,
            negative_mode: NegativeMode::SameView,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ObjectiveError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ObjectiveError::Config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

fn batch_size(tape: &Tape, h: Var, hs: Var) -> Result<usize, ObjectiveError> {
    let (sa, sb) = (tape.shape(h), tape.shape(hs));
    if sa != sb {
        return Err(TensorError::Dimension {
            op: "mutual information",
            left: sa,
            right: sb,
        }
        .into());
    }
    if sa.0 < 2 {
        return Err(ObjectiveError::BatchSize { got: sa.0 });
    }
    Ok(sa.0)
}

fn off_diagonal(b: usize) -> Tensor {
    Tensor::ones(b, b).zip_map(&Tensor::identity(b), |a, i| a - i)
}

/// `T_ij = cos(a_i, b_j) / τ`.
fn critic(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Result<Var, TensorError> {
    let za = tape.normalize_rows(a, COSINE_EPS);
    let zb = tape.normalize_rows(b, COSINE_EPS);
    let zbt = tape.transpose(zb);
    let s = tape.matmul(za, zbt)?;
    Ok(tape.scale(s, 1.0 / tau))
}

fn diagonal(tape: &mut Tape, m: Var, b: usize) -> Result<Var, TensorError> {
    let eye = tape.constant(Tensor::identity(b));
    let d = tape.mul(m, eye)?;
    Ok(tape.sum_rows(d))
}

/// The per-sample terms `ℓ(h_i, h*_i)` and `ℓ(h*_i, h_i)`, each `B x 1`.
pub fn info_nce_terms(
    tape: &mut Tape,
    h: Var,
    hs: Var,
    tau: f64,
    mode: NegativeMode,
) -> Result<(Var, Var), ObjectiveError> {
    let b = batch_size(tape, h, hs)?;
    let cross = critic(tape, h, hs, tau)?;
    let pos = diagonal(tape, cross, b)?;
    let (den1, den2) = match mode {
        NegativeMode::SameView => {
            let off = Some(Rc::new(off_diagonal(b)));
            let hh = critic(tape, h, h, tau)?;
            let ss = critic(tape, hs, hs, tau)?;
            (
                tape.log_sum_exp_rows(hh, off.clone())?,
                tape.log_sum_exp_rows(ss, off)?,
            )
        }
        NegativeMode::CrossView => {
            let cross_t = tape.transpose(cross);
            (
                tape.log_sum_exp_rows(cross, None)?,
                tape.log_sum_exp_rows(cross_t, None)?,
            )
        }
    };
    Ok((tape.sub(pos, den1)?, tape.sub(pos, den2)?))
}

/// `-(1/2B) Σ_i [ℓ(h_i, h*_i) + ℓ(h*_i, h_i)]`.
pub fn info_nce_loss(
    tape: &mut Tape,
    h: Var,
    hs: Var,
    tau: f64,
    mode: NegativeMode,
) -> Result<Var, ObjectiveError> {
    let b = tape.shape(h).0;
    let (l1, l2) = info_nce_terms(tape, h, hs, tau, mode)?;
    let both = tape.add(l1, l2)?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -0.5 / b as f64))
}

/// Negated Jensen-Shannon bound:
/// `mean_i sp(-T_ii) + mean_{i != j} sp(T_ij)` with `T_ij = cos(h_i, h*_j) / τ`.
pub fn js_loss(tape: &mut Tape, h: Var, hs: Var, tau: f64) -> Result<Var, ObjectiveError> {
    let b = batch_size(tape, h, hs)?;
    let t = critic(tape, h, hs, tau)?;
    let neg_t = tape.scale(t, -1.0);
    let sp_pos = tape.softplus(neg_t);
    let eye = tape.constant(Tensor::identity(b));
    let pos = tape.mul(sp_pos, eye)?;
    let pos = tape.sum(pos);
    let pos = tape.scale(pos, 1.0 / b as f64);
    let sp_neg = tape.softplus(t);
    let off = tape.constant(off_diagonal(b));
    let neg = tape.mul(sp_neg, off)?;
    let neg = tape.sum(neg);
    let neg = tape.scale(neg, 1.0 / (b * (b - 1)) as f64);
    Ok(tape.add(pos, neg)?)
}

/// Negated Donsker-Varadhan bound:
/// `-(mean_i T_ii - ln mean_{i != j} exp T_ij)`.
pub fn dv_loss(tape: &mut Tape, h: Var, hs: Var, tau: f64) -> Result<Var, ObjectiveError> {
    let b = batch_size(tape, h, hs)?;
    let t = critic(tape, h, hs, tau)?;
    let pos = diagonal(tape, t, b)?;
    let pos = tape.sum(pos);
    let pos_mean = tape.scale(pos, 1.0 / b as f64);
    let rows = tape.log_sum_exp_rows(t, Some(Rc::new(off_diagonal(b))))?;
    let rows_t = tape.transpose(rows);
    let lse = tape.log_sum_exp_rows(rows_t, None)?;
    let log_mean = tape.add_scalar(lse, -((b * (b - 1)) as f64).ln());
    let estimate = tape.sub(pos_mean, log_mean)?;
    Ok(tape.scale(estimate, -1.0))
}

/// Mean entrywise symmetrized Bernoulli KL divergence of two equally shaped
/// probability tensors, clamped away from 0 and 1.
pub fn skl_loss(tape: &mut Tape, p: Var, q: Var) -> Result<Var, ObjectiveError> {
    let n = tape.value(p).len();
    if n == 0 {
        return Err(ObjectiveError::Argument("empty probability vector".into()));
    }
    let logit = |tape: &mut Tape, x: Var| -> Result<(Var, Var), TensorError> {
        let c = tape.clamp(x, SKL_CLAMP, 1.0 - SKL_CLAMP);
        let lp = tape.log(c)?;
        let neg = tape.scale(c, -1.0);
        let comp = tape.add_scalar(neg, 1.0);
        let lq = tape.log(comp)?;
        Ok((c, tape.sub(lp, lq)?))
    };
    let (pc, lp) = logit(tape, p)?;
    let (qc, lq) = logit(tape, q)?;
    let d = tape.sub(pc, qc)?;
    let l = tape.sub(lp, lq)?;
    let prod = tape.mul(d, l)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, 0.5 / n as f64))
}

fn logit(x: f64) -> f64 {
    x.ln() - (1.0 - x).ln()
}

/// Value form of [`skl_loss`].
pub fn skl_divergence(p: &[f64], q: &[f64]) -> Result<f64, ObjectiveError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(ObjectiveError::Argument(format!(
            "lengths {} and {} must be equal and positive",
            p.len(),
            q.len()
        )));
    }
    let clamp = |x: f64| x.clamp(SKL_CLAMP, 1.0 - SKL_CLAMP);
    let total: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (clamp(a), clamp(b));
            0.5 * (a - b) * (logit(a) - logit(b))
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Like [`skl_divergence`] but rejects entries outside the open unit interval.
pub fn skl_divergence_strict(p: &[f64], q: &[f64]) -> Result<f64, ObjectiveError> {
    if let Some(v) = p.iter().chain(q).find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(ObjectiveError::Argument(format!(
            "probability {v} outside (0, 1)"
        )));
    }
    skl_divergence(p, q)
}

/// Estimator loss, plus `β · SKL(lifted, dual)` when `alignment` carries the
/// lifted and the dual extractor's edge probabilities.
pub fn training_loss(
    tape: &mut Tape,
    h: Var,
    hs: Var,
    cfg: &LossConfig,
    alignment: Option<(Var, Var)>,
) -> Result<Var, ObjectiveError> {
    cfg.validate()?;
    let tau = cfg.temperature;
    let base = match cfg.estimator {
        Estimator::InfoNce => info_nce_loss(tape, h, hs, tau, cfg.negative_mode)?,
        Estimator::Js => js_loss(tape, h, hs, tau)?,
        Estimator::Dv => dv_loss(tape, h, hs, tau)?,
    };
    match alignment {
        None if cfg.beta > 0.0 => Err(ObjectiveError::Config(
            "beta > 0 requires the dual extractor".into(),
        )),
        Some((lifted, dual)) if cfg.beta > 0.0 => {
            let skl = skl_loss(tape, lifted, dual)?;
            let weighted = tape.scale(skl, cfg.beta);
            Ok(tape.add(base, weighted)?)
        }
        _ => Ok(base),
    }
}

/// `max + ln Σ exp(t - max)` over terms summed in ascending order, so the
/// result does not depend on the order the terms arrive in.
fn sorted_log_sum_exp(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    let max = *terms.last().expect("non-empty");
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn score_against<'a>(
    h: &[f64],
    hs: &[f64],
    pool: impl Iterator<Item = (&'a [f64], &'a [f64])> + Clone,
    tau: f64,
    mode: NegativeMode,
) -> f64 {
    let pos = cosine(h, hs) / tau;
    let (t1, t2): (Vec<f64>, Vec<f64>) = match mode {
        NegativeMode::SameView => pool
            .map(|(ph, phs)| (cosine(h, ph) / tau, cosine(hs, phs) / tau))
            .unzip(),
        NegativeMode::CrossView => std::iter::once((pos, pos))
            .chain(pool.map(|(ph, phs)| (cosine(h, phs) / tau, cosine(hs, ph) / tau)))
            .unzip(),
    };
    let l1 = pos - sorted_log_sum_exp(t1);
    let l2 = pos - sorted_log_sum_exp(t2);
    -0.5 * (l1 + l2)
}

fn check_pool(h: &Tensor, hs: &Tensor, min_rows: usize) -> Result<(), ObjectiveError> {
    if h.shape() != hs.shape() {
        return Err(TensorError::Dimension {
            op: "anomaly_score",
            left: h.shape(),
            right: hs.shape(),
        }
        .into());
    }
    if h.rows() < min_rows {
        return Err(ObjectiveError::Argument(format!(
            "negative pool needs at least {min_rows} rows, got {}",
            h.rows()
        )));
    }
    Ok(())
}

/// Anomaly score of one sample against a fixed negative pool:
/// `-½[ℓ(h, h*) + ℓ(h*, h)]`. Higher means more anomalous.
pub fn anomaly_score(
    h: &[f64],
    hs: &[f64],
    pool_h: &Tensor,
    pool_hs: &Tensor,
    tau: f64,
    mode: NegativeMode,
) -> Result<f64, ObjectiveError> {
    check_pool(pool_h, pool_hs, 2)?;
    if h.len() != pool_h.cols() || hs.len() != pool_hs.cols() {
        return Err(ObjectiveError::Argument(format!(
            "embedding length {} does not match pool width {}",
            h.len(),
            pool_h.cols()
        )));
    }
    let pool = (0..pool_h.rows()).map(|r| (pool_h.row(r), pool_hs.row(r)));
    Ok(score_against(h, hs, pool, tau, mode))
}

/// Scores every row against all other rows as the negative pool.
pub fn anomaly_scores(
    h: &Tensor,
    hs: &Tensor,
    tau: f64,
    mode: NegativeMode,
) -> Result<Vec<f64>, ObjectiveError> {
    check_pool(h, hs, 2)?;
    Ok((0..h.rows())
        .map(|i| {
            let pool = (0..h.rows())
                .filter(move |&j| j != i)
                .map(|j| (h.row(j), hs.row(j)));
            score_against(h.row(i), hs.row(i), pool, tau, mode)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradcheck::max_rel_error;
    use crate::numerics::softplus;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    fn eval<F>(h: &Tensor, hs: &Tensor, f: F) -> f64
    where
        F: Fn(&mut Tape, Var, Var) -> Result<Var, ObjectiveError>,
    {
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(h.clone()), tape.constant(hs.clone()));
        let l = f(&mut tape, a, b).unwrap();
        tape.value(l).item().unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn nce(
        mode: NegativeMode,
        tau: f64,
    ) -> impl Fn(&mut Tape, Var, Var) -> Result<Var, ObjectiveError> {
        move |t, a, b| info_nce_loss(t, a, b, tau, mode)
    }

    #[test]
    fn info_nce_term_by_hand() {
        let h = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let hs = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(h), tape.constant(hs));
        let (l1, _) = info_nce_terms(&mut tape, a, b, 1.0, NegativeMode::SameView).unwrap();
        assert!((tape.value(l1).get(0, 0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn info_nce_under_total_symmetry() {
        let b = 4;
        let h = Tensor::filled(b, 3, 0.7);
        let loss = eval(&h, &h, nce(NegativeMode::SameView, 0.5));
        assert!((loss - ((b - 1) as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn info_nce_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, hs) = (random(&mut rng, 5, 4), random(&mut rng, 5, 4));
        let perm = [3, 0, 4, 1, 2];
        let shuffle = |t: &Tensor| {
            let r: Vec<&[f64]> = perm.iter().map(|&i| t.row(i)).collect();
            rows(&r)
        };
        for mode in [NegativeMode::SameView, NegativeMode::CrossView] {
            let a = eval(&h, &hs, nce(mode, 0.2));
            let b = eval(&shuffle(&h), &shuffle(&hs), nce(mode, 0.2));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_decreases_with_positive_similarity() {
        // Sample 0's positive moves along a private axis; every other
        // similarity stays fixed.
        let make = |theta: f64| {
            let h = rows(&[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.6, 0.8, 0.0],
            ]);
            let hs = rows(&[
                &[theta.cos(), 0.0, 0.0, theta.sin()],
                &[0.0, 0.8, 0.6, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
            ]);
            eval(&h, &hs, nce(NegativeMode::SameView, 0.2))
        };
        let losses: Vec<f64> = [1.4, 1.0, 0.6, 0.2, 0.0].iter().map(|&t| make(t)).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let h = Tensor::ones(1, 3);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(h.clone()), tape.constant(h));
        assert!(matches!(
            info_nce_loss(&mut tape, a, b, 0.2, NegativeMode::SameView),
            Err(ObjectiveError::BatchSize { got: 1 })
        ));
    }

    #[test]
    fn js_by_hand() {
        let h = rows(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let hs = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let tau = 0.5;
        let c = std::f64::consts::FRAC_1_SQRT_2;
        // T = [[1, 0], [c, c]] / τ
        let t = [[1.0 / tau, 0.0], [c / tau, c / tau]];
        let expected = (softplus(-t[0][0]) + softplus(-t[1][1])) / 2.0
            + (softplus(t[0][1]) + softplus(t[1][0])) / 2.0;
        let got = eval(&h, &hs, |tp, a, b| js_loss(tp, a, b, tau));
        assert!((got - expected).abs() < 1e-7);
    }

    #[test]
    fn js_estimate_grows_with_positive_similarity() {
        let make = |theta: f64| {
            let h = rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
            let hs = rows(&[&[theta.cos(), 0.0, theta.sin()], &[0.0, 1.0, 0.0]]);
            -eval(&h, &hs, |tp, a, b| js_loss(tp, a, b, 0.2))
        };
        let est: Vec<f64> = [1.5, 1.0, 0.5, 0.0].iter().map(|&t| make(t)).collect();
        assert!(est.windows(2).all(|w| w[1] > w[0]), "{est:?}");
    }

    #[test]
    fn dv_constant_critic_is_zero() {
        let h = Tensor::filled(3, 2, 1.5);
        let got = eval(&h, &h, |tp, a, b| dv_loss(tp, a, b, 0.3));
        assert!(got.abs() < 1e-12);
    }

    #[test]
    fn dv_by_hand() {
        let h = rows(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let hs = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let tau = 0.5;
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let pos = (1.0 / tau + c / tau) / 2.0;
        let neg = ((0.0f64).exp() + (c / tau).exp()) / 2.0;
        let expected = -(pos - neg.ln());
        let got = eval(&h, &hs, |tp, a, b| dv_loss(tp, a, b, tau));
        assert!((got - expected).abs() < 1e-7);
    }

    #[test]
    fn js_and_dv_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h, hs) = (random(&mut rng, 4, 3), random(&mut rng, 4, 3));
        let flip = |t: &Tensor| rows(&[t.row(2), t.row(3), t.row(0), t.row(1)]);
        let js = |h: &Tensor, hs: &Tensor| eval(h, hs, |tp, a, b| js_loss(tp, a, b, 0.2));
        let dv = |h: &Tensor, hs: &Tensor| eval(h, hs, |tp, a, b| dv_loss(tp, a, b, 0.2));
        assert!((js(&h, &hs) - js(&flip(&h), &flip(&hs))).abs() < 1e-12);
        assert!((dv(&h, &hs) - dv(&flip(&h), &flip(&hs))).abs() < 1e-12);
    }

    #[test]
    fn estimator_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = [random(&mut rng, 3, 4), random(&mut rng, 3, 4)];
        type Loss = fn(&mut Tape, Var, Var) -> Result<Var, ObjectiveError>;
        let cases: [(&str, Loss); 4] = [
            ("same_view", |t, a, b| {
                info_nce_loss(t, a, b, 0.2, NegativeMode::SameView)
            }),
            ("cross", |t, a, b| {
                info_nce_loss(t, a, b, 0.2, NegativeMode::CrossView)
            }),
            ("js", |t, a, b| js_loss(t, a, b, 0.2)),
            ("dv", |t, a, b| dv_loss(t, a, b, 0.2)),
        ];
        for (name, f) in cases {
            let err = max_rel_error(&inputs, 1e-5, |t, v| f(t, v[0], v[1]).unwrap());
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    fn kl(p: f64, q: f64) -> f64 {
        p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    }

    #[test]
    fn skl_examples() {
        assert_eq!(skl_divergence(&[0.3, 0.9], &[0.3, 0.9]).unwrap(), 0.0);
        let v = skl_divergence(&[0.5], &[0.25]).unwrap();
        assert!((v - 0.13733).abs() < 1e-4);
        assert!((v - 0.5 * (kl(0.5, 0.25) + kl(0.25, 0.5))).abs() < 1e-12);
        assert_eq!(
            skl_divergence(&[0.2, 0.7], &[0.6, 0.1]).unwrap(),
            skl_divergence(&[0.6, 0.1], &[0.2, 0.7]).unwrap()
        );
        assert!(skl_divergence(&[0.0], &[1.0]).unwrap().is_finite());
        assert!(skl_divergence_strict(&[0.0], &[0.5]).is_err());
    }

    #[test]
    fn skl_matches_kl_oracle_and_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
            let oracle = p
                .iter()
                .zip(&q)
                .map(|(&a, &b)| 0.5 * (kl(a, b) + kl(b, a)))
                .sum::<f64>()
                / 6.0;
            let v = skl_divergence(&p, &q).unwrap();
            assert!(v >= 0.0);
            assert!((v - oracle).abs() < 1e-12);
            let taped = eval(
                &Tensor::column(p.clone()),
                &Tensor::column(q.clone()),
                skl_loss,
            );
            assert!((taped - v).abs() < 1e-12);
        }
    }

    #[test]
    fn skl_gradient_matches_finite_differences() {
        let inputs = [
            Tensor::column(vec![0.2, 0.55, 0.9]),
            Tensor::column(vec![0.4, 0.35, 0.6]),
        ];
        let err = max_rel_error(&inputs, 1e-6, |t, v| skl_loss(t, v[0], v[1]).unwrap());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn training_loss_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, hs) = (random(&mut rng, 4, 3), random(&mut rng, 4, 3));
        let cfg = LossConfig::default();
        let single = eval(&h, &hs, |t, a, b| training_loss(t, a, b, &cfg, None));
        let plain = eval(&h, &hs, nce(NegativeMode::SameView, 0.2));
        assert_eq!(single, plain);

        let p = Tensor::column(vec![0.3, 0.8]);
        let with_pair = |cfg: &LossConfig, q: &Tensor| {
            let mut tape = Tape::new();
            let (a, b) = (tape.constant(h.clone()), tape.constant(hs.clone()));
            let (pv, qv) = (tape.constant(p.clone()), tape.constant(q.clone()));
            let l = training_loss(&mut tape, a, b, cfg, Some((pv, qv))).unwrap();
            tape.value(l).item().unwrap()
        };
        let two = LossConfig {
            beta: 1.0,
            ..cfg.clone()
        };
        assert_eq!(with_pair(&two, &p), plain);
        let zero = LossConfig {
            beta: 0.0,
            ..cfg.clone()
        };
        assert_eq!(with_pair(&zero, &Tensor::column(vec![0.9, 0.1])), plain);
        assert!(with_pair(&two, &Tensor::column(vec![0.9, 0.1])) > plain);

        let mut tape = Tape::new();
        let (a, b) = (tape.constant(h.clone()), tape.constant(hs.clone()));
        assert!(matches!(
            training_loss(&mut tape, a, b, &two, None),
            Err(ObjectiveError::Config(_))
        ));
    }

    #[test]
    fn bad_temperature_rejected() {
        let cfg = LossConfig {
            temperature: 0.0,
            ..LossConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn aligned_pair_scores_lowest() {
        // Pool rows are mutually orthogonal to the probe pair.
        let pool_h = rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let pool_hs = rows(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        let aligned = anomaly_score(
            &[1.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0],
            &pool_h,
            &pool_hs,
            0.2,
            NegativeMode::SameView,
        )
        .unwrap();
        let orth = anomaly_score(
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 1.0],
            &pool_h,
            &pool_hs,
            0.2,
            NegativeMode::SameView,
        )
        .unwrap();
        assert!(orth > aligned);
        for r in 0..2 {
            let s = anomaly_score(
                pool_h.row(r),
                pool_hs.row(r),
                &pool_h,
                &pool_hs,
                0.2,
                NegativeMode::SameView,
            )
            .unwrap();
            assert!(s > aligned);
        }
    }

    #[test]
    fn symmetric_pool_gives_equal_scores() {
        let h = Tensor::filled(4, 2, 1.0);
        let s = anomaly_scores(&h, &h, 0.2, NegativeMode::SameView).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
    }

    #[test]
    fn scores_are_order_independent_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (h, hs) = (random(&mut rng, 6, 3), random(&mut rng, 6, 3));
        let perm = [5, 2, 0, 4, 1, 3];
        let shuffle = |t: &Tensor| {
            let r: Vec<&[f64]> = perm.iter().map(|&i| t.row(i)).collect();
            rows(&r)
        };
        for mode in [NegativeMode::SameView, NegativeMode::CrossView] {
            let s = anomaly_scores(&h, &hs, 0.2, mode).unwrap();
            let t = anomaly_scores(&shuffle(&h), &shuffle(&hs), 0.2, mode).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                assert_eq!(t[k].to_bits(), s[i].to_bits());
            }
            let scaled =
                anomaly_scores(&h.map(|v| 3.0 * v), &hs.map(|v| 3.0 * v), 0.2, mode).unwrap();
            let order = |v: &[f64]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
                idx
            };
            assert_eq!(order(&s), order(&scaled));
        }
    }

    #[test]
    fn pool_must_have_two_rows() {
        let h = Tensor::ones(1, 2);
        assert!(anomaly_score(
            &[1.0, 0.0],
            &[1.0, 0.0],
            &h,
            &h,
            0.2,
            NegativeMode::SameView
        )
        .is_err());
    }
}
