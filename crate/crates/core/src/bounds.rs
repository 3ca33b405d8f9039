//! Generalization-bound calculators and an empirical Rademacher estimator.
//!
//! Conventions: natural logarithms everywhere; the universal constants hidden
//! by `O(.)` and `<~` are set to 1, so every value is "up to constants".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{backprop_logits, init_he, layer_norms, ChoiceModel, LayerNorms, MlpArch, MlpParams};
use crate::numerics::{Estimate, Matrix, Rng};

pub const LOG_CONVENTION: &str = "natural log; universal constants set to 1";

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn sample_size(n: f64) -> Result<()> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::Domain(format!("sample size must be >= 1, got {n}")));
    }
    Ok(())
}

fn input_dim(d0: f64) -> Result<()> {
    if !(d0 >= 2.0 && d0.is_finite()) {
        return Err(Error::Domain(format!("input dimension must be >= 2, got {d0}")));
    }
    Ok(())
}

/// `v = T * D * ln(T)` for `T` coefficients and depth `D`.
pub fn vc_dimension(param_count: f64, depth: usize) -> Result<f64> {
    if !(param_count >= 1.0 && param_count.is_finite()) {
        return Err(Error::Domain(format!("parameter count must be >= 1, got {param_count}")));
    }
    if depth == 0 {
        return Err(Error::Domain("depth must be >= 1".into()));
    }
    Ok(param_count * depth as f64 * param_count.ln())
}

/// `4 * sqrt(v * ln(N + 1) / N)`.
pub fn vc_rad_bound(vc_dim: f64, n: f64) -> Result<f64> {
    positive("VC dimension", vc_dim)?;
    sample_size(n)?;
    Ok(4.0 * (vc_dim * (n + 1.0).ln() / n).sqrt())
}

/// `sqrt(ln d0) * prod_j 2 M(j) / sqrt(N)` over the per-layer one-infinity norms.
pub fn norm_oneinf_bound(norms: &LayerNorms, d0: f64, n: f64) -> Result<f64> {
    input_dim(d0)?;
    sample_size(n)?;
    if norms.depth() == 0 {
        return Err(Error::Domain("no layers".into()));
    }
    let prod: f64 = norms.one_inf.iter().map(|m| 2.0 * m).product();
    Ok(d0.ln().sqrt() * prod / n.sqrt())
}

/// `sqrt(ln d0) * (sqrt(2 ln D) + 1) * prod_j M_F(j) / sqrt(N)`, with `D` the
/// number of layers in `norms`.
pub fn norm_frobenius_bound(norms: &LayerNorms, d0: f64, n: f64) -> Result<f64> {
    input_dim(d0)?;
    sample_size(n)?;
    let depth = norms.depth();
    if depth == 0 {
        return Err(Error::Domain("no layers".into()));
    }
    let prod: f64 = norms.frobenius.iter().product();
    Ok(d0.ln().sqrt() * ((2.0 * (depth as f64).ln()).sqrt() + 1.0) * prod / n.sqrt())
}

/// Upper bound on the population 0/1 loss: `margin_loss + (2 / gamma) * rad`.
pub fn prediction_upper(margin_loss: f64, gamma: f64, rad: f64) -> Result<f64> {
    positive("gamma", gamma)?;
    if margin_loss < 0.0 || rad < 0.0 {
        return Err(Error::Domain("margin loss and complexity must be nonnegative".into()));
    }
    Ok(margin_loss + 2.0 / gamma * rad)
}

/// Upper bound on the estimation error of the interpretation loss: `4 * rad`.
pub fn interpretation_upper(rad: f64) -> Result<f64> {
    if !(rad >= 0.0) {
        return Err(Error::Domain(format!("complexity must be nonnegative, got {rad}")));
    }
    Ok(4.0 * rad)
}

/// A function class over which `sup_f |(1/N) sum_i eps_i f(x_i)|` can be
/// approximated for given signs.
pub trait SupSearch: Sync {
    fn sup_correlation(&self, x: &Matrix, signs: &[f64], rng: &mut Rng) -> Result<f64>;
}

/// The singleton class holding one fixed function (the model's logit).
pub struct FrozenFunction<'a, M: ChoiceModel>(pub &'a M);

impl<M: ChoiceModel> SupSearch for FrozenFunction<'_, M> {
    fn sup_correlation(&self, x: &Matrix, signs: &[f64], _rng: &mut Rng) -> Result<f64> {
        let f = self.0.logits(x)?;
        Ok(correlation(&f, signs).abs())
    }
}

fn correlation(f: &[f64], signs: &[f64]) -> f64 {
    f.iter().zip(signs).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
}

/// Bias-free ReLU networks of a fixed architecture whose layer `j` has
/// Frobenius norm at most `budget[j]`.
///
/// The supremum is approached by projected gradient ascent from several
/// random starts; every iterate lies in the class, so the result is a lower
/// estimate of the true supremum.
#[derive(Debug, Clone)]
pub struct NormBallNetworks {
    pub arch: MlpArch,
    pub budget: Vec<f64>,
    pub restarts: usize,
    pub ascent_steps: usize,
    /// Step length as a fraction of each layer's budget.
    pub step_size: f64,
}

impl NormBallNetworks {
    pub fn new(arch: MlpArch, budget: Vec<f64>, config: &RademacherConfig) -> Result<Self> {
        if budget.len() != arch.depth() {
            return Err(Error::Shape(format!(
                "{} norm budgets for depth {}",
                budget.len(),
                arch.depth()
            )));
        }
        if budget.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Domain("norm budgets must be nonnegative".into()));
        }
        if config.restarts == 0 {
            return Err(Error::Config("at least one restart is required".into()));
        }
        Ok(Self {
            arch,
            budget,
            restarts: config.restarts,
            ascent_steps: config.ascent_steps,
            step_size: config.step_size,
        })
    }

    /// Class matched to a trained model: same architecture, budgets equal to
    /// its per-layer Frobenius norms.
    pub fn matching(params: &MlpParams, config: &RademacherConfig) -> Result<Self> {
        Self::new(params.arch.clone(), layer_norms(params).frobenius, config)
    }

    fn project(&self, params: &mut MlpParams) {
        for (layer, &b) in params.layers.iter_mut().zip(&self.budget) {
            let norm = layer.weights.frobenius_norm();
            if norm > b {
                let c = if norm > 0.0 { b / norm } else { 0.0 };
                layer.weights.scale(c);
            }
        }
    }

    fn ascend(&self, x: &Matrix, signs: &[f64], rng: &mut Rng) -> Result<f64> {
        let mut params = init_he(&self.arch, rng);
        // Start on the boundary of the ball: for homogeneous networks the
        // supremum is attained there.
        for (layer, &b) in params.layers.iter_mut().zip(&self.budget) {
            let norm = layer.weights.frobenius_norm();
            if norm > 0.0 {
                layer.weights.scale(b / norm);
            }
        }
        let n = x.rows() as f64;
        let upstream: Vec<f64> = signs.iter().map(|s| s / n).collect();
        let mut best = correlation(&params.logits(x)?, signs).abs();
        for _ in 0..self.ascent_steps {
            let value = correlation(&params.logits(x)?, signs);
            let direction = value.signum();
            let grads = backprop_logits(&params, x, &upstream)?;
            for ((layer, g), &b) in params.layers.iter_mut().zip(&grads.layers).zip(&self.budget) {
                let gn = g.weights.frobenius_norm();
                if gn > 0.0 {
                    let step = direction * self.step_size * b / gn;
                    for (w, gw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                        *w += step * gw;
                    }
                }
            }
            self.project(&mut params);
            best = best.max(correlation(&params.logits(x)?, signs).abs());
        }
        Ok(best)
    }
}

impl SupSearch for NormBallNetworks {
    fn sup_correlation(&self, x: &Matrix, signs: &[f64], rng: &mut Rng) -> Result<f64> {
        if x.cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "input has {} columns, class expects {}",
                x.cols(),
                self.arch.input_dim
            )));
        }
        let base = rng.split(0x5355_5052);
        let results: Vec<Result<f64>> = (0..self.restarts)
            .into_par_iter()
            .map(|r| self.ascend(x, signs, &mut base.split(r as u64)))
            .collect();
        results
            .into_iter()
            .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RademacherConfig {
    /// Independent sign vectors averaged over.
    pub sign_draws: usize,
    pub restarts: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    /// Use at most this many leading rows of the input.
    pub max_rows: Option<usize>,
}

impl Default for RademacherConfig {
    fn default() -> Self {
        Self {
            sign_draws: 5,
            restarts: 10,
            ascent_steps: 30,
            step_size: 0.1,
            max_rows: Some(1000),
        }
    }
}

/// `E_eps sup_f |(1/N) sum eps_i f(x_i)|`, averaged over `sign_draws` sign
/// vectors; reports mean and standard error over the draws.
pub fn empirical_rademacher(
    class: &impl SupSearch,
    x: &Matrix,
    sign_draws: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    if sign_draws == 0 {
        return Err(Error::Config("at least one sign draw is required".into()));
    }
    let signs: Vec<Vec<f64>> = (0..sign_draws)
        .map(|_| (0..x.rows()).map(|_| rng.rademacher()).collect())
        .collect();
    empirical_rademacher_with_signs(class, x, &signs, rng)
}

/// As [`empirical_rademacher`] with caller-supplied sign vectors.
pub fn empirical_rademacher_with_signs(
    class: &impl SupSearch,
    x: &Matrix,
    signs: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<Estimate> {
    if x.rows() == 0 {
        return Err(Error::Size("empty sample".into()));
    }
    if signs.is_empty() {
        return Err(Error::Config("at least one sign draw is required".into()));
    }
    let mut values = Vec::with_capacity(signs.len());
    for (k, s) in signs.iter().enumerate() {
        if s.len() != x.rows() {
            return Err(Error::Shape(format!("{} signs for {} rows", s.len(), x.rows())));
        }
        values.push(class.sup_correlation(x, s, &mut rng.split(k as u64))?);
    }
    Ok(Estimate::from_samples(values))
}

/// Leading rows of `x` used by the estimator under `config.max_rows`.
pub fn estimator_rows(x: &Matrix, config: &RademacherConfig) -> Matrix {
    match config.max_rows {
        Some(m) if m < x.rows() => x.select_rows(&(0..m).collect::<Vec<_>>()),
        _ => x.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub param_count: usize,
    pub depth: usize,
    pub input_dim: usize,
    pub n: usize,
    pub vc_dim: f64,
    pub vc_rad_bound: f64,
    pub norm_oneinf_bound: Option<f64>,
    pub norm_frobenius_bound: Option<f64>,
    pub empirical_rad: Option<Estimate>,
    /// Rows the empirical estimate was computed on.
    pub empirical_rows: Option<usize>,
    /// Frobenius bound at `empirical_rows`, the reference for the estimate.
    pub empirical_reference_bound: Option<f64>,
    pub gamma: f64,
    pub prediction_upper: Option<f64>,
    pub interpretation_upper: Option<f64>,
    pub convention: String,
    pub warnings: Vec<String>,
}

/// Bounds for a trained model on `n` training rows. The prediction and
/// interpretation bounds use the Frobenius-norm complexity bound; norm
/// bounds are absent when the input dimension is below 2.
pub fn bound_report(
    params: &MlpParams,
    n: usize,
    margin_loss: f64,
    gamma: f64,
    empirical: Option<(Estimate, usize)>,
) -> Result<BoundReport> {
    let arch = &params.arch;
    let t = params.param_count();
    let depth = arch.depth();
    let vc_dim = vc_dimension(t as f64, depth)?;
    let vc_rad = vc_rad_bound(vc_dim, n as f64)?;
    let norms = layer_norms(params);
    let d0 = arch.input_dim as f64;
    let oneinf = norm_oneinf_bound(&norms, d0, n as f64).ok();
    let frob = norm_frobenius_bound(&norms, d0, n as f64).ok();
    let mut warnings = Vec::new();
    let (empirical_rad, empirical_rows, empirical_reference_bound) = match empirical {
        Some((est, rows)) => {
            let reference = norm_frobenius_bound(&norms, d0, rows as f64).ok();
            if let Some(r) = reference {
                if est.value > r {
                    warnings.push(format!(
                        "empirical Rademacher estimate {:.4e} exceeds the Frobenius bound {:.4e}",
                        est.value, r
                    ));
                }
            }
            (Some(est), Some(rows), reference)
        }
        None => (None, None, None),
    };
    Ok(BoundReport {
        param_count: t,
        depth,
        input_dim: arch.input_dim,
        n,
        vc_dim,
        vc_rad_bound: vc_rad,
        norm_oneinf_bound: oneinf,
        norm_frobenius_bound: frob,
        empirical_rad,
        empirical_rows,
        empirical_reference_bound,
        gamma,
        prediction_upper: frob.map(|r| prediction_upper(margin_loss, gamma, r)).transpose()?,
        interpretation_upper: frob.map(interpretation_upper).transpose()?,
        convention: LOG_CONVENTION.to_string(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConstantModel;
    use crate::numerics::standard_normal_matrix;

    fn norms(frob: Vec<f64>, one_inf: Vec<f64>) -> LayerNorms {
        LayerNorms {
            frobenius: frob,
            one_inf,
        }
    }

    #[test]
    fn vc_examples() {
        let v = vc_dimension(50_000.0, 5).unwrap();
        assert!((v - 250_000.0 * 50_000f64.ln()).abs() < 1e-6);
        assert!(v > 2.7e6 && v < 2.71e6);
        let e = std::f64::consts::E;
        assert!((vc_dimension(e, 1).unwrap() - e).abs() < 1e-12);
        let a = vc_dimension(1234.0, 3).unwrap();
        assert!((vc_dimension(1234.0, 6).unwrap() - 2.0 * a).abs() < 1e-9);
        assert!(vc_dimension(0.5, 1).is_err());
    }

    #[test]
    fn vc_rad_examples() {
        let e = std::f64::consts::E;
        assert!((vc_rad_bound(1.0, e - 1.0).unwrap() - 4.0 / (e - 1.0).sqrt()).abs() < 1e-12);
        assert!((vc_rad_bound(1.0, e - 1.0).unwrap() - 3.052).abs() < 1e-3);
        let b1 = vc_rad_bound(10.0, 1000.0).unwrap();
        let b4 = vc_rad_bound(10.0, 4000.0).unwrap();
        assert!(b4 < b1 && b4 > 0.5 * b1);
        let b = vc_rad_bound(3e6, 1e5).unwrap();
        // 4 * sqrt(3e6 * ln(100001) / 1e5)
        assert!((b - 74.34).abs() < 0.05, "{b}");
        assert!(vc_rad_bound(0.0, 10.0).is_err());
    }

    #[test]
    fn norm_bound_examples() {
        let e = std::f64::consts::E;
        let one = norms(vec![1.0], vec![1.0]);
        assert!((norm_oneinf_bound(&one, e, 100.0).unwrap() - 0.2).abs() < 1e-12);
        assert!((norm_frobenius_bound(&one, e, 100.0).unwrap() - 0.1).abs() < 1e-12);

        let scaled = norms(vec![3.0], vec![3.0]);
        assert!((norm_oneinf_bound(&scaled, e, 100.0).unwrap() - 0.6).abs() < 1e-12);

        let deep = |k: usize| norms(vec![1.0; k], vec![1.0; k]);
        let b2 = norm_oneinf_bound(&deep(2), 10.0, 50.0).unwrap();
        let b3 = norm_oneinf_bound(&deep(3), 10.0, 50.0).unwrap();
        assert!((b3 / b2 - 2.0).abs() < 1e-12);
        assert!(norm_frobenius_bound(&one, 1.0, 100.0).is_err());
    }

    #[test]
    fn frobenius_tighter_than_oneinf_when_condition_holds() {
        let n = norms(vec![1.5, 2.0, 1.0], vec![1.0, 1.2, 0.9]);
        let lhs: f64 = n.frobenius.iter().product();
        let rhs = 8.0 * n.one_inf.iter().product::<f64>() / ((2.0 * 3f64.ln()).sqrt() + 1.0);
        assert!(lhs < rhs);
        assert!(norm_frobenius_bound(&n, 20.0, 1e4).unwrap() < norm_oneinf_bound(&n, 20.0, 1e4).unwrap());
    }

    #[test]
    fn bounds_monotone_on_grids() {
        let base = norms(vec![2.0, 3.0], vec![1.5, 2.5]);
        let mut prev = f64::INFINITY;
        for n in [10.0, 100.0, 1e3, 1e4, 1e5, 1e6] {
            let b = norm_frobenius_bound(&base, 20.0, n).unwrap();
            assert!(b < prev);
            prev = b;
            assert!(vc_rad_bound(100.0, n).unwrap() > vc_rad_bound(100.0, n * 2.0).unwrap());
            assert!(norm_oneinf_bound(&base, 20.0, n).unwrap() > norm_oneinf_bound(&base, 20.0, n * 2.0).unwrap());
        }
        for c in [1.1, 2.0, 5.0] {
            let bigger = norms(vec![2.0 * c, 3.0], vec![1.5 * c, 2.5]);
            assert!(norm_frobenius_bound(&bigger, 20.0, 100.0).unwrap() > norm_frobenius_bound(&base, 20.0, 100.0).unwrap());
            assert!(norm_oneinf_bound(&bigger, 20.0, 100.0).unwrap() > norm_oneinf_bound(&base, 20.0, 100.0).unwrap());
            assert!(vc_rad_bound(100.0 * c, 100.0).unwrap() > vc_rad_bound(100.0, 100.0).unwrap());
        }
    }

    #[test]
    fn upper_bound_arithmetic() {
        assert!((prediction_upper(0.1, 1.0, 0.05).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(prediction_upper(0.3, 2.0, 0.0).unwrap(), 0.3);
        assert_eq!(interpretation_upper(0.0).unwrap(), 0.0);
        assert!((interpretation_upper(0.05).unwrap() - 0.2).abs() < 1e-15);
        assert!(interpretation_upper(-1.0).is_err());
        assert!(prediction_upper(0.1, 0.0, 0.1).is_err());
    }

    #[test]
    fn frozen_constant_matches_binomial_oracle() {
        // For f = 1 the estimate is E|mean(eps)|. Exact value by enumerating
        // the binomial distribution of the number of +1 signs.
        let n = 64usize;
        let mut log_choose = vec![0.0f64; n + 1];
        for k in 1..=n {
            log_choose[k] = log_choose[k - 1] + ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        let exact: f64 = (0..=n)
            .map(|k| {
                let p = (log_choose[k] - n as f64 * 2f64.ln()).exp();
                p * ((2 * k) as f64 - n as f64).abs() / n as f64
            })
            .sum();
        assert!((exact - (2.0 / (std::f64::consts::PI * n as f64)).sqrt()).abs() < 0.01);

        let one = ConstantModel { dim: 2, logit: 1.0 };
        let x = Matrix::zeros(n, 2);
        let est = empirical_rademacher(&FrozenFunction(&one), &x, 4000, &mut Rng::new(3)).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.se, "{est:?} vs {exact}");
    }

    #[test]
    fn single_row_bounded_by_range() {
        let m = ConstantModel { dim: 1, logit: -0.7 };
        let x = Matrix::zeros(1, 1);
        let est = empirical_rademacher(&FrozenFunction(&m), &x, 50, &mut Rng::new(1)).unwrap();
        assert!(est.value <= 1.0);
        assert!((est.value - 0.7).abs() < 1e-15);
    }

    #[test]
    fn norm_ball_estimate_below_frobenius_bound() {
        let arch = MlpArch::dnn(5, 2, 8).unwrap();
        let trained = init_he(&arch, &mut Rng::new(2));
        let config = RademacherConfig {
            sign_draws: 3,
            restarts: 3,
            ascent_steps: 20,
            ..Default::default()
        };
        let class = NormBallNetworks::matching(&trained, &config).unwrap();
        // Inputs on the l1 unit sphere, the domain the norm bound is stated for.
        let mut x = standard_normal_matrix(&mut Rng::new(4), 200, 5).unwrap();
        for i in 0..x.rows() {
            let r = x.row_mut(i);
            let s: f64 = r.iter().map(|v| v.abs()).sum();
            r.iter_mut().for_each(|v| *v /= s);
        }
        let bound = norm_frobenius_bound(&layer_norms(&trained), 5.0, 200.0).unwrap();
        for seed in 0..3 {
            let est = empirical_rademacher(&class, &x, config.sign_draws, &mut Rng::new(seed)).unwrap();
            assert!(est.value > 0.0);
            assert!(est.value <= bound, "{} > {bound}", est.value);
        }
    }

    #[test]
    fn sign_flip_symmetry() {
        let arch = MlpArch::dnn(3, 1, 6).unwrap();
        let trained = init_he(&arch, &mut Rng::new(5));
        let config = RademacherConfig {
            restarts: 2,
            ascent_steps: 10,
            ..Default::default()
        };
        let class = NormBallNetworks::matching(&trained, &config).unwrap();
        let x = standard_normal_matrix(&mut Rng::new(6), 100, 3).unwrap();
        let mut rng = Rng::new(7);
        let signs: Vec<Vec<f64>> = (0..20).map(|_| (0..100).map(|_| rng.rademacher()).collect()).collect();
        let flipped: Vec<Vec<f64>> = signs.iter().map(|s| s.iter().map(|v| -v).collect()).collect();
        let a = empirical_rademacher_with_signs(&class, &x, &signs, &mut Rng::new(8)).unwrap();
        let b = empirical_rademacher_with_signs(&class, &x, &flipped, &mut Rng::new(9)).unwrap();
        let se = (a.se.powi(2) + b.se.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 3.0 * se, "{a:?} vs {b:?}");
    }

    #[test]
    fn report_warns_when_estimate_exceeds_bound() {
        let arch = MlpArch::dnn(4, 1, 3).unwrap();
        let p = init_he(&arch, &mut Rng::new(1));
        let r = bound_report(&p, 100, 0.2, 1.0, Some((Estimate::exact(1e9), 50))).unwrap();
        assert_eq!(r.warnings.len(), 1);
        let r = bound_report(&p, 100, 0.2, 1.0, Some((Estimate::exact(0.0), 50))).unwrap();
        assert!(r.warnings.is_empty());
        assert!(r.vc_rad_bound > 0.0);
        let upper = r.prediction_upper.unwrap();
        assert!((upper - (0.2 + 2.0 * r.norm_frobenius_bound.unwrap())).abs() < 1e-12);
    }
}
