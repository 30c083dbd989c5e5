//! Full-covariance Gaussian mixture over reduced vectors.
//!
//! EM fitting with k-means++ seeding and restarts, per-component and mixture
//! densities evaluated in log space, BIC and elbow-based selection of the
//! component count. All covariances are kept positive definite by a ridge
//! proportional to the average per-dimension data variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.8378770664093453;

/// EM fitting knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Iteration cap per restart.
    pub max_iters: usize,
    /// Convergence threshold on the relative log-likelihood change.
    pub tol: f64,
    /// Diagonal regularizer, scaled by the average per-dimension data
    /// variance before being added to every covariance in each M-step.
    pub ridge: f64,
    /// Independent EM runs; the one with the highest final log-likelihood
    /// wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 300,
            tol: 1e-6,
            ridge: 1e-6,
            restarts: 5,
            seed: 0,
        }
    }
}

/// Per-component cached factorizations.
#[derive(Debug, Clone)]
struct ComponentCache {
    chol: Cholesky<f64, Dyn>,
    precision: DMatrix<f64>,
    /// `-d/2 ln(2 pi) - 1/2 ln det(cov)`.
    log_norm: f64,
}

impl ComponentCache {
    fn build(cov: &DMatrix<f64>, component: usize) -> Result<Self> {
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::invalid(format!(
                "covariance of component {component} is not positive definite"
            ))
        })?;
        let d = cov.nrows() as f64;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|x| x.ln())
                .sum::<f64>();
        let precision = chol.inverse();
        Ok(ComponentCache {
            chol,
            precision,
            log_norm: -0.5 * (d * LOG_2PI + log_det),
        })
    }
}

/// A fitted mixture: weights, means and full covariances, with cached
/// precisions and log-normalizers.
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    cache: Vec<ComponentCache>,
}

impl PartialEq for GmmModel {
    /// Parameter equality; the caches are derived from the covariances.
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
    }
}

impl GmmModel {
    /// Validates the mixture invariants and builds the caches.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != m || covariances.len() != m {
            return Err(Error::invalid(format!(
                "component count mismatch: {m} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        if !weights.iter().all(|&w| w > 0.0) {
            return Err(Error::invalid("every mixture weight must be positive"));
        }
        let d = means[0].len();
        for (k, mu) in means.iter().enumerate() {
            if mu.len() != d {
                return Err(Error::Dimension {
                    context: "gmm mean",
                    expected: d,
                    actual: mu.len(),
                });
            }
            if mu.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite mean in component {k}")));
            }
        }
        let mut cache = Vec::with_capacity(m);
        for (k, cov) in covariances.iter().enumerate() {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::Dimension {
                    context: "gmm covariance",
                    expected: d,
                    actual: cov.nrows().max(cov.ncols()),
                });
            }
            let asym = (cov - cov.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(Error::invalid(format!(
                    "covariance of component {k} asymmetric by {asym:.3e}"
                )));
            }
            cache.push(ComponentCache::build(cov, k)?);
        }
        Ok(GmmModel {
            weights,
            means,
            covariances,
            cache,
        })
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn mean(&self, component: usize) -> &DVector<f64> {
        &self.means[component]
    }

    /// Inverse covariance of one component.
    pub fn precision(&self, component: usize) -> &DMatrix<f64> {
        &self.cache[component].precision
    }

    fn check_component(&self, component: usize) -> Result<()> {
        if component >= self.component_count() {
            return Err(Error::invalid(format!(
                "component index {component} out of range (M = {})",
                self.component_count()
            )));
        }
        Ok(())
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                context: "gmm input",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Squared Mahalanobis distance of `x` from one component's mean.
    pub fn mahalanobis_sq(&self, component: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_component(component)?;
        self.check_dim(x)?;
        Ok(self.mahalanobis_sq_unchecked(component, x))
    }

    fn mahalanobis_sq_unchecked(&self, component: usize, x: &DVector<f64>) -> f64 {
        let delta = x - &self.means[component];
        let prod = &self.cache[component].precision * &delta;
        delta.dot(&prod)
    }

    /// Log of the multivariate normal density of one component.
    pub fn log_component_density(&self, component: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_component(component)?;
        self.check_dim(x)?;
        Ok(self.log_component_density_unchecked(component, x))
    }

    fn log_component_density_unchecked(&self, component: usize, x: &DVector<f64>) -> f64 {
        self.cache[component].log_norm - 0.5 * self.mahalanobis_sq_unchecked(component, x)
    }

    /// Multivariate normal density with normalizer
    /// `(2 pi)^(-d/2) |cov|^(-1/2)`.
    pub fn component_density(&self, component: usize, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_component_density(component, x)?.exp())
    }

    /// `ln pi_m + ln N(x; mu_m, cov_m)` for every component.
    pub fn log_weighted_densities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok((0..self.component_count())
            .map(|m| self.weights[m].ln() + self.log_component_density_unchecked(m, x))
            .collect())
    }

    /// Log of the mixture density, via log-sum-exp; finite for every finite
    /// input.
    pub fn log_mixture_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(log_sum_exp(&self.log_weighted_densities(x)?))
    }

    /// Posterior responsibilities of each component for `x`; nonnegative and
    /// summing to 1.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let lw = self.log_weighted_densities(x)?;
        let lse = log_sum_exp(&lw);
        Ok(lw.iter().map(|v| (v - lse).exp()).collect())
    }

    /// Draws one point from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.component_count() - 1;
        for (m, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = m;
                break;
            }
        }
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample(rand_distr::StandardNormal));
        &self.means[pick] + self.cache[pick].chol.l_dirty().lower_triangle() * z
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Outcome of one EM fit: the model plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood of the training data under the final parameters.
    pub log_likelihood: f64,
    /// Log-likelihood after each M-step (index 0 is the seeded parameters).
    pub ll_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Diagonal value added to every covariance in each M-step.
    pub ridge_applied: f64,
}

/// Fits a mixture by EM with `config.restarts` independent seedings, keeping
/// the restart with the highest final log-likelihood.
pub fn fit_em(data: &[DVector<f64>], m: usize, config: &EmConfig) -> Result<GmmFit> {
    validate_data(data)?;
    if m == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if data.len() < m {
        return Err(Error::invalid(format!(
            "{} samples cannot support {m} components",
            data.len()
        )));
    }
    if config.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }

    let fits: Vec<Result<GmmFit>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| fit_em_once(data, m, config, derive_seed(config.seed, r as u64)))
        .collect();
    let mut best: Option<GmmFit> = None;
    for fit in fits {
        let fit = fit?;
        if best
            .as_ref()
            .is_none_or(|b| fit.log_likelihood > b.log_likelihood)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Splitmix64 step, used to derive independent per-job seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn validate_data(data: &[DVector<f64>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty training data"));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::invalid("zero-dimensional training data"));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != d {
            return Err(Error::Dimension {
                context: "gmm fit sample",
                expected: d,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value in sample {i}")));
        }
    }
    Ok(())
}

fn fit_em_once(data: &[DVector<f64>], m: usize, config: &EmConfig, seed: u64) -> Result<GmmFit> {
    let n = data.len();
    let d = data[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Global statistics: data mean, MLE covariance and the ridge scale.
    let mut data_mean = DVector::zeros(d);
    for x in data {
        data_mean += x;
    }
    data_mean /= n as f64;
    let mut global_cov = DMatrix::zeros(d, d);
    for x in data {
        let delta = x - &data_mean;
        global_cov.syger(1.0, &delta, &delta, 1.0);
    }
    mirror_lower(&mut global_cov);
    global_cov /= n as f64;
    let avg_variance = global_cov.trace() / d as f64;
    let ridge = if avg_variance > 0.0 {
        config.ridge * avg_variance
    } else {
        // All samples identical: fall back to the bare ridge so covariances
        // stay positive definite.
        config.ridge
    };
    for i in 0..d {
        global_cov[(i, i)] += ridge;
    }

    // Seeding: k-means++ means, global covariance, uniform weights.
    let mut means = kmeanspp_means(data, m, &mut rng);
    let mut covariances = vec![global_cov; m];
    let mut weights = vec![1.0 / m as f64; m];
    let mut cache: Vec<ComponentCache> = covariances
        .iter()
        .enumerate()
        .map(|(k, c)| ComponentCache::build(c, k))
        .collect::<Result<_>>()?;

    let mut ll_trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut resp = vec![vec![0.0f64; m]; n];

    for _ in 0..config.max_iters {
        // E-step.
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let row = &mut resp[i];
            for k in 0..m {
                let delta = x - &means[k];
                let q = delta.dot(&(&cache[k].precision * &delta));
                row[k] = weights[k].ln() + cache[k].log_norm - 0.5 * q;
            }
            let lse = log_sum_exp(row);
            ll += lse;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }

        if let Some(&prev) = ll_trace.last() {
            // EM guarantees nondecreasing likelihood; tolerate rounding.
            debug_assert!(
                ll >= prev - 1e-9 * (1.0 + prev.abs()),
                "log-likelihood decreased: {prev} -> {ll}"
            );
            if (ll - prev).abs() <= config.tol * prev.abs().max(1.0) {
                ll_trace.push(ll);
                converged = true;
                break;
            }
        }
        ll_trace.push(ll);

        // M-step.
        for k in 0..m {
            let mut nk = 0.0;
            for row in &resp {
                nk += row[k];
            }
            if nk < 1e-150 {
                // Dead component: freeze its parameters, keep a positive
                // weight so the model stays valid.
                weights[k] = 1e-300;
                continue;
            }
            let mut mu = DVector::zeros(d);
            for (i, x) in data.iter().enumerate() {
                mu.axpy(resp[i][k], x, 1.0);
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for (i, x) in data.iter().enumerate() {
                let delta = x - &mu;
                cov.syger(resp[i][k], &delta, &delta, 1.0);
            }
            mirror_lower(&mut cov);
            cov /= nk;
            for j in 0..d {
                cov[(j, j)] += ridge;
            }
            weights[k] = nk / n as f64;
            means[k] = mu;
            covariances[k] = cov;
        }
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
        for k in 0..m {
            cache[k] = ComponentCache::build(&covariances[k], k)?;
        }
    }

    if !converged {
        // The cap fired after an M-step; evaluate the final parameters.
        let mut ll = 0.0;
        for x in data {
            let lw: Vec<f64> = (0..m)
                .map(|k| {
                    let delta = x - &means[k];
                    let q = delta.dot(&(&cache[k].precision * &delta));
                    weights[k].ln() + cache[k].log_norm - 0.5 * q
                })
                .collect();
            ll += log_sum_exp(&lw);
        }
        ll_trace.push(ll);
    }

    let iterations = ll_trace.len() - 1;
    let log_likelihood = *ll_trace.last().expect("at least one evaluation");
    Ok(GmmFit {
        model: GmmModel::new(weights, means, covariances)?,
        log_likelihood,
        ll_trace,
        converged,
        iterations,
        ridge_applied: ridge,
    })
}

fn mirror_lower(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            mat[(i, j)] = mat[(j, i)];
        }
    }
}

/// k-means++ seeding: first center uniform, the rest sampled proportional to
/// the squared distance from the nearest chosen center.
fn kmeanspp_means<R: Rng>(data: &[DVector<f64>], m: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = data.len();
    let mut centers = Vec::with_capacity(m);
    centers.push(data[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = data
        .iter()
        .map(|x| (x - &centers[0]).norm_squared())
        .collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= u {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(data[pick].clone());
        let last = centers.last().expect("just pushed");
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min((x - last).norm_squared());
        }
    }
    centers
}

/// Free parameters of an `m`-component full-covariance mixture in `d`
/// dimensions: weights, means and symmetric covariances.
pub fn parameter_count(m: usize, d: usize) -> usize {
    (m - 1) + m * d + m * d * (d + 1) / 2
}

/// Schwarz criterion from already-known quantities.
pub fn bic_from_parts(n: usize, m: usize, d: usize, log_likelihood: f64) -> f64 {
    parameter_count(m, d) as f64 * (n as f64).ln() - 2.0 * log_likelihood
}

/// `p ln(n) - 2 ln L` for the model evaluated on `data`.
pub fn bic(model: &GmmModel, data: &[DVector<f64>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("BIC of empty data"));
    }
    let mut ll = 0.0;
    for x in data {
        ll += model.log_mixture_density(x)?;
    }
    Ok(bic_from_parts(
        data.len(),
        model.component_count(),
        model.dim(),
        ll,
    ))
}

/// Elbow of a BIC curve: the interior point maximizing the discrete second
/// difference `BIC(M-1) - 2 BIC(M) + BIC(M+1)`. A curve that only rises
/// selects the smallest M; with fewer than three points the minimum-BIC M is
/// selected.
pub fn elbow_of(curve: &[(usize, f64)]) -> Result<usize> {
    if curve.is_empty() {
        return Err(Error::invalid("empty BIC curve"));
    }
    if curve.windows(2).all(|w| w[1].1 > w[0].1) {
        return Ok(curve[0].0);
    }
    if curve.len() < 3 {
        let best = curve
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        return Ok(best.0);
    }
    let mut best_m = curve[1].0;
    let mut best_curvature = f64::NEG_INFINITY;
    for w in curve.windows(3) {
        let curvature = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if curvature > best_curvature {
            best_curvature = curvature;
            best_m = w[1].0;
        }
    }
    Ok(best_m)
}

/// Result of fitting one mixture per candidate M and picking the BIC elbow.
#[derive(Debug, Clone)]
pub struct ModelSelection {
    pub fit: GmmFit,
    pub selected_m: usize,
    pub bic_curve: Vec<(usize, f64)>,
}

/// Fits every M in `[m_min, m_max]`, computes the BIC curve and returns the
/// fit at the elbow together with the whole curve.
pub fn select_components(
    data: &[DVector<f64>],
    m_min: usize,
    m_max: usize,
    config: &EmConfig,
) -> Result<ModelSelection> {
    if m_min == 0 || m_min > m_max {
        return Err(Error::invalid(format!(
            "invalid component range [{m_min}, {m_max}]"
        )));
    }
    let fits: Vec<Result<(usize, GmmFit, f64)>> = (m_min..=m_max)
        .into_par_iter()
        .map(|m| {
            let per_m = EmConfig {
                seed: derive_seed(config.seed, 0x4D00 + m as u64),
                ..config.clone()
            };
            let fit = fit_em(data, m, &per_m)?;
            let b = bic_from_parts(data.len(), m, data[0].len(), fit.log_likelihood);
            Ok((m, fit, b))
        })
        .collect();

    let mut curve = Vec::new();
    let mut by_m = Vec::new();
    for item in fits {
        let (m, fit, b) = item?;
        curve.push((m, b));
        by_m.push((m, fit));
    }
    let selected_m = elbow_of(&curve)?;
    let fit = by_m
        .into_iter()
        .find(|(m, _)| *m == selected_m)
        .map(|(_, f)| f)
        .expect("selected M was fitted");
    Ok(ModelSelection {
        fit,
        selected_m,
        bic_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_model_2d() -> GmmModel {
        GmmModel::new(
            vec![1.0],
            vec![DVector::from_column_slice(&[0.5, -1.0])],
            vec![DMatrix::identity(2, 2)],
        )
        .unwrap()
    }

    fn vecs(rows: &[&[f64]]) -> Vec<DVector<f64>> {
        rows.iter().map(|r| DVector::from_column_slice(r)).collect()
    }

    fn sample_gaussian(
        n: usize,
        mean: &[f64],
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        (0..n)
            .map(|_| {
                DVector::from_iterator(
                    mean.len(),
                    mean.iter().map(|&mu| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        mu + scale * z
                    }),
                )
            })
            .collect()
    }

    #[test]
    fn density_at_mean_is_inverse_two_pi() {
        let g = unit_model_2d();
        let p = g.component_density(0, g.mean(0)).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * std::f64::consts::PI), max_relative = 1e-12);
    }

    #[test]
    fn density_at_squared_distance_two() {
        let g = unit_model_2d();
        let x = g.mean(0) + DVector::from_column_slice(&[1.0, 1.0]);
        let p = g.component_density(0, &x).unwrap();
        let expected = (1.0 / (2.0 * std::f64::consts::PI)) * (-1.0f64).exp();
        assert_relative_eq!(p, expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 0.0585498, max_relative = 1e-5);
    }

    #[test]
    fn component_index_out_of_range_is_an_error() {
        let g = unit_model_2d();
        assert!(g.component_density(1, g.mean(0)).is_err());
    }

    #[test]
    fn single_component_mixture_equals_component_density() {
        let g = unit_model_2d();
        let x = DVector::from_column_slice(&[1.3, 0.4]);
        assert_relative_eq!(
            g.log_mixture_density(&x).unwrap(),
            g.log_component_density(0, &x).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn duplicated_component_mixture_equals_single_density() {
        let mean = DVector::from_column_slice(&[2.0, 3.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let dup = GmmModel::new(
            vec![0.3, 0.7],
            vec![mean.clone(), mean.clone()],
            vec![cov.clone(), cov.clone()],
        )
        .unwrap();
        let single = GmmModel::new(vec![1.0], vec![mean], vec![cov]).unwrap();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        assert_relative_eq!(
            dup.log_mixture_density(&x).unwrap(),
            single.log_mixture_density(&x).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn two_gaussians_1d_hand_value() {
        let g = GmmModel::new(
            vec![0.5, 0.5],
            vec![
                DVector::from_column_slice(&[0.0]),
                DVector::from_column_slice(&[3.0]),
            ],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        let x = DVector::from_column_slice(&[0.0]);
        // Direct evaluation of 0.5 N(0;0,1) + 0.5 N(0;3,1).
        let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
        let expected = (0.5 / sqrt_2pi + 0.5 * (-4.5f64).exp() / sqrt_2pi).ln();
        assert_relative_eq!(
            g.log_mixture_density(&x).unwrap(),
            expected,
            max_relative = 1e-13
        );
    }

    #[test]
    fn log_mixture_matches_brute_force_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let m = rng.gen_range(1..5);
            let d = rng.gen_range(1..4);
            let mut weights: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.1).collect();
            let t: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= t);
            let means: Vec<DVector<f64>> = (0..m)
                .map(|_| DVector::from_fn(d, |_, _| rng.gen::<f64>() * 4.0 - 2.0))
                .collect();
            let covs: Vec<DMatrix<f64>> = (0..m)
                .map(|_| {
                    let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() - 0.5);
                    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
                })
                .collect();
            let g = GmmModel::new(weights.clone(), means, covs).unwrap();
            let x = DVector::from_fn(d, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
            let brute: f64 = (0..m)
                .map(|k| weights[k] * g.component_density(k, &x).unwrap())
                .sum();
            assert_relative_eq!(
                g.log_mixture_density(&x).unwrap(),
                brute.ln(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn permuting_components_preserves_mixture_density() {
        let weights = vec![0.2, 0.5, 0.3];
        let means = vecs(&[&[0.0, 0.0], &[3.0, 1.0], &[-2.0, 4.0]]);
        let covs: Vec<DMatrix<f64>> = (0..3)
            .map(|k| DMatrix::identity(2, 2) * (1.0 + k as f64))
            .collect();
        let g = GmmModel::new(weights.clone(), means.clone(), covs.clone()).unwrap();
        let perm = [2usize, 0, 1];
        let g2 = GmmModel::new(
            perm.iter().map(|&i| weights[i]).collect(),
            perm.iter().map(|&i| means[i].clone()).collect(),
            perm.iter().map(|&i| covs[i].clone()).collect(),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[0.7, -0.3]);
        assert_relative_eq!(
            g.log_mixture_density(&x).unwrap(),
            g2.log_mixture_density(&x).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn responsibilities_are_a_distribution() {
        let g = GmmModel::new(
            vec![0.25, 0.75],
            vecs(&[&[0.0, 0.0], &[5.0, 5.0]]),
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 2.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.gen::<f64>() * 10.0 - 2.0);
            let r = g.responsibilities(&x).unwrap();
            assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_mixture_parameters() {
        let mean = vecs(&[&[0.0]]);
        let eye = vec![DMatrix::identity(1, 1)];
        assert!(GmmModel::new(vec![0.9], mean.clone(), eye.clone()).is_err());
        assert!(GmmModel::new(vec![1.0, 0.0], mean.clone(), eye.clone()).is_err());
        let asym = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0])];
        assert!(GmmModel::new(vec![1.0], vecs(&[&[0.0, 0.0]]), asym).is_err());
        let indefinite = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])];
        assert!(GmmModel::new(vec![1.0], vecs(&[&[0.0, 0.0]]), indefinite).is_err());
    }

    #[test]
    fn single_component_fit_is_closed_form_mle() {
        let data = vecs(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let fit = fit_em(&data, 1, &EmConfig::default()).unwrap();
        let g = &fit.model;
        assert_relative_eq!(g.mean(0)[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(g.mean(0)[1], 1.0, epsilon = 1e-12);
        // MLE covariance (denominator n) is [[1,1],[1,1]] before the ridge.
        let mut cov = g.covariances()[0].clone();
        for i in 0..2 {
            cov[(i, i)] -= fit.ridge_applied;
        }
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(cov[(i, j)], 1.0, epsilon = 1e-12);
            }
        }
        // One EM iteration reaches the optimum; later iterations cannot move.
        assert!(fit.converged);
        assert_relative_eq!(fit.ll_trace[1], fit.log_likelihood, epsilon = 1e-9);
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let mut data = sample_gaussian(60, &[0.0, 0.0], 1.0, &mut rng);
            data.extend(sample_gaussian(60, &[4.0, 3.0], 0.7, &mut rng));
            let cfg = EmConfig {
                restarts: 1,
                seed: trial,
                ..EmConfig::default()
            };
            let fit = fit_em(&data, 2, &cfg).unwrap();
            for w in fit.ll_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()),
                    "trial {trial}: ll dropped {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn recovers_well_separated_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let truth = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]];
        let mut data = Vec::new();
        for mu in &truth {
            data.extend(sample_gaussian(400, mu, 1.0, &mut rng));
        }
        let fit = fit_em(&data, 3, &EmConfig::default()).unwrap();
        let recovered = fit.model.means();
        // Optimal matching over the 6 permutations of 3 components.
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let best = perms
            .iter()
            .map(|p| {
                truth
                    .iter()
                    .zip(p.iter())
                    .map(|(t, &k)| (&recovered[k] - DVector::from_column_slice(t)).norm())
                    .fold(0.0f64, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.15, "worst matched mean distance {best}");
    }

    #[test]
    fn bic_arithmetic_matches_schwarz_formula() {
        assert_eq!(parameter_count(1, 2), 5);
        assert_eq!(parameter_count(3, 20), 692);
        assert_relative_eq!(
            bic_from_parts(100, 1, 2, -300.0),
            5.0 * (100.0f64).ln() + 600.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            bic_from_parts(100, 1, 2, -300.0),
            623.0259,
            max_relative = 1e-7
        );
        // Monotone in n for fixed fit quality.
        assert!(bic_from_parts(200, 1, 2, -300.0) > bic_from_parts(100, 1, 2, -300.0));
    }

    #[test]
    fn elbow_picks_max_second_difference() {
        let curve = vec![(1, 100.0), (2, 40.0), (3, 38.0), (4, 37.0)];
        assert_eq!(elbow_of(&curve).unwrap(), 2);
    }

    #[test]
    fn elbow_of_rising_curve_is_first_point() {
        let curve = vec![(1, 10.0), (2, 20.0), (3, 35.0), (4, 60.0)];
        assert_eq!(elbow_of(&curve).unwrap(), 1);
        assert_eq!(elbow_of(&[(3, 5.0)]).unwrap(), 3);
        assert_eq!(elbow_of(&[(1, 9.0), (2, 4.0)]).unwrap(), 2);
    }

    #[test]
    fn selection_on_single_cluster_prefers_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = sample_gaussian(500, &[1.0, -2.0], 1.0, &mut rng);
        let cfg = EmConfig {
            restarts: 2,
            seed: 7,
            ..EmConfig::default()
        };
        let sel = select_components(&data, 1, 4, &cfg).unwrap();
        assert_eq!(sel.selected_m, 1);
        assert_eq!(sel.bic_curve.len(), 4);
        assert_eq!(sel.fit.model.component_count(), 1);
    }

    #[test]
    fn fit_rejects_bad_arguments() {
        let data = vecs(&[&[0.0], &[1.0]]);
        assert!(fit_em(&data, 3, &EmConfig::default()).is_err());
        assert!(fit_em(&data, 0, &EmConfig::default()).is_err());
        assert!(fit_em(&[], 1, &EmConfig::default()).is_err());
        let bad = vecs(&[&[f64::NAN], &[1.0]]);
        assert!(fit_em(&bad, 1, &EmConfig::default()).is_err());
        assert!(select_components(&data, 2, 1, &EmConfig::default()).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_covers_components() {
        let g = GmmModel::new(
            vec![0.5, 0.5],
            vecs(&[&[0.0], &[100.0]]),
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| g.sample(&mut rng)[0]).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        let near_zero = a.iter().filter(|v| v.abs() < 50.0).count();
        assert!(near_zero > 50 && near_zero < 150);
    }
}
