//! Oracle data generator: examples drawn from a known conditional law, with
//! optional heatmap distortion to simulate a miscalibrated model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{self, DecodeMode};
use crate::error::{Error, Result};
use crate::grid::{GridDistribution, GridGeometry};
use crate::io::{DType, Dataset, Example, Split};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Offset of the component mean from the latent center.
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Law of `truth − center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthNoise {
    Isotropic { sigma: f64 },
    Anisotropic { covariance: Vec<Vec<f64>> },
    Mixture { components: Vec<MixtureComponent> },
}

/// Distortion applied to the oracle heatmap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeatmapMode {
    #[default]
    Oracle,
    /// `p^β` renormalized, `β > 1`.
    Sharpened { beta: f64 },
    /// `p^β` renormalized, `0 < β < 1`.
    Blurred { beta: f64 },
    /// Oracle density centered at `center + offset`.
    Shifted { offset: Vec<f64> },
}

/// What goes into `Example::covariance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    #[default]
    True,
    Sample,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorDType {
    F4,
    #[default]
    F8,
}

impl From<TensorDType> for DType {
    fn from(t: TensorDType) -> DType {
        match t {
            TensorDType::F4 => DType::F32,
            TensorDType::F8 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dims: usize,
    pub grid_shape: Vec<usize>,
    /// Cell size per axis in mm; defaults to 1.
    #[serde(default)]
    pub spacing: Option<Vec<f64>>,
    /// Midpoint of cell 0; defaults to the origin.
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    /// Number of cases. Each case yields one example per landmark.
    pub n_examples: usize,
    #[serde(default = "one")]
    pub landmarks: usize,
    pub truth_noise: TruthNoise,
    #[serde(default)]
    pub heatmap_mode: HeatmapMode,
    #[serde(default)]
    pub sample_count: usize,
    #[serde(default)]
    pub covariance_source: CovarianceSource,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tensor_dtype: TensorDType,
}

fn one() -> usize {
    1
}

fn default_split() -> Split {
    Split::Calibration
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::config(field, reason)
}

fn check_spd(cov: &[Vec<f64>], d: usize, field: &str) -> Result<()> {
    linalg::check_covariance(cov, d).map_err(|r| config_err(field, r))?;
    if linalg::to_matrix(cov).cholesky().is_none() {
        return Err(config_err(field, "not positive definite"));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Minimal 2-D isotropic scenario, handy as a starting point.
    pub fn isotropic_2d(shape: [usize; 2], sigma: f64, n_examples: usize, seed: u64) -> Self {
        ScenarioConfig {
            dims: 2,
            grid_shape: shape.to_vec(),
            spacing: None,
            origin: None,
            n_examples,
            landmarks: 1,
            truth_noise: TruthNoise::Isotropic { sigma },
            heatmap_mode: HeatmapMode::Oracle,
            sample_count: 0,
            covariance_source: CovarianceSource::True,
            split: Split::Calibration,
            seed,
            tensor_dtype: TensorDType::F8,
        }
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        let d = self.dims;
        GridGeometry::new(
            self.grid_shape.clone(),
            self.origin.clone().unwrap_or_else(|| vec![0.0; d]),
            self.spacing.clone().unwrap_or_else(|| vec![1.0; d]),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if !(2..=3).contains(&d) {
            return Err(config_err("dims", format!("must be 2 or 3, got {d}")));
        }
        if self.grid_shape.len() != d || self.grid_shape.contains(&0) {
            return Err(config_err("grid_shape", format!("needs {d} positive sizes")));
        }
        for (name, v) in [("spacing", &self.spacing), ("origin", &self.origin)] {
            if let Some(v) = v {
                if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                    return Err(config_err(name, format!("needs {d} finite values")));
                }
            }
        }
        if let Some(s) = &self.spacing {
            if s.iter().any(|&x| x <= 0.0) {
                return Err(config_err("spacing", "must be positive"));
            }
        }
        if self.n_examples == 0 {
            return Err(config_err("n_examples", "must be at least 1"));
        }
        if self.landmarks == 0 {
            return Err(config_err("landmarks", "must be at least 1"));
        }
        match &self.truth_noise {
            TruthNoise::Isotropic { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(config_err("truth_noise.sigma", "must be positive"));
                }
            }
            TruthNoise::Anisotropic { covariance } => check_spd(covariance, d, "truth_noise.covariance")?,
            TruthNoise::Mixture { components } => {
                if components.is_empty() {
                    return Err(config_err("truth_noise.components", "empty mixture"));
                }
                let mut total = 0.0;
                for c in components {
                    if !(c.weight > 0.0) {
                        return Err(config_err("truth_noise.components.weight", "must be positive"));
                    }
                    if c.mean.len() != d {
                        return Err(config_err(
                            "truth_noise.components.mean",
                            format!("needs {d} values"),
                        ));
                    }
                    check_spd(&c.covariance, d, "truth_noise.components.covariance")?;
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(config_err(
                        "truth_noise.components.weight",
                        format!("weights sum to {total}, not 1"),
                    ));
                }
            }
        }
        match &self.heatmap_mode {
            HeatmapMode::Oracle => {}
            HeatmapMode::Sharpened { beta } => {
                if !(beta.is_finite() && *beta > 1.0) {
                    return Err(config_err("heatmap_mode.beta", "sharpening needs beta > 1"));
                }
            }
            HeatmapMode::Blurred { beta } => {
                if !(*beta > 0.0 && *beta < 1.0) {
                    return Err(config_err("heatmap_mode.beta", "blurring needs 0 < beta < 1"));
                }
            }
            HeatmapMode::Shifted { offset } => {
                if offset.len() != d || offset.iter().any(|x| !x.is_finite()) {
                    return Err(config_err(
                        "heatmap_mode.offset",
                        format!("needs {d} finite values"),
                    ));
                }
            }
        }
        if self.covariance_source == CovarianceSource::Sample && self.sample_count < 2 {
            return Err(config_err(
                "covariance_source",
                "sample covariance needs sample_count >= 2",
            ));
        }
        self.geometry()?;
        Ok(())
    }
}

struct Component {
    weight: f64,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    /// Row-major inverse covariance.
    inv: Vec<f64>,
    log_norm: f64,
}

/// The noise law prepared for sampling and density evaluation.
struct NoiseLaw {
    dims: usize,
    components: Vec<Component>,
    covariance: DMatrix<f64>,
}

impl NoiseLaw {
    fn new(noise: &TruthNoise, d: usize) -> NoiseLaw {
        let parts: Vec<(f64, Vec<f64>, DMatrix<f64>)> = match noise {
            TruthNoise::Isotropic { sigma } => {
                vec![(1.0, vec![0.0; d], DMatrix::identity(d, d) * (sigma * sigma))]
            }
            TruthNoise::Anisotropic { covariance } => {
                vec![(1.0, vec![0.0; d], linalg::to_matrix(covariance))]
            }
            TruthNoise::Mixture { components } => components
                .iter()
                .map(|c| (c.weight, c.mean.clone(), linalg::to_matrix(&c.covariance)))
                .collect(),
        };
        let components: Vec<Component> = parts
            .into_iter()
            .map(|(weight, mean, cov)| {
                let chol = cov.clone().cholesky().expect("validated covariance");
                let det: f64 = chol.l().diagonal().iter().map(|x| x * x).product();
                let inv = chol.inverse();
                Component {
                    weight,
                    mean: DVector::from_vec(mean),
                    inv: (0..d * d).map(|k| inv[(k / d, k % d)]).collect(),
                    chol: chol.l(),
                    log_norm: weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln()),
                }
            })
            .collect();
        // total law covariance: E[Σ_k] + Cov[μ_k]
        let mut mu = DVector::zeros(d);
        for c in &components {
            mu += &c.mean * c.weight;
        }
        let mut covariance = DMatrix::zeros(d, d);
        for c in &components {
            let sigma = &c.chol * c.chol.transpose();
            let dm = &c.mean - &mu;
            covariance += (sigma + &dm * dm.transpose()) * c.weight;
        }
        NoiseLaw {
            dims: d,
            components,
            covariance,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let comp = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            self.components
                .iter()
                .find(|c| {
                    acc += c.weight;
                    u < acc
                })
                .unwrap_or(self.components.last().expect("non-empty mixture"))
        };
        let z = DVector::from_fn(self.dims, |_, _| rng.sample::<f64, _>(StandardNormal));
        &comp.mean + &comp.chol * z
    }

    /// Log density of the noise at `x`, a streaming log-sum-exp over
    /// components.
    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dims;
        let (mut top, mut acc) = (f64::NEG_INFINITY, 0.0);
        for c in &self.components {
            let mut r = [0.0f64; 3];
            for j in 0..d {
                r[j] = x[j] - c.mean[j];
            }
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += r[i] * c.inv[i * d + j] * r[j];
                }
            }
            let t = c.log_norm - 0.5 * q;
            if t > top {
                acc = acc * (top - t).exp() + 1.0;
                top = t;
            } else {
                acc += (t - top).exp();
            }
        }
        top + acc.ln()
    }
}

fn heatmap(
    geo: &GridGeometry,
    law: &NoiseLaw,
    center: &DVector<f64>,
    mode: &HeatmapMode,
) -> Result<GridDistribution> {
    let d = geo.dims();
    let mut shift: Vec<f64> = center.iter().copied().collect();
    if let HeatmapMode::Shifted { offset } = mode {
        for (s, o) in shift.iter_mut().zip(offset) {
            *s += o;
        }
    }
    let beta = match mode {
        HeatmapMode::Sharpened { beta } | HeatmapMode::Blurred { beta } => *beta,
        _ => 1.0,
    };
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            (0..geo.shape[j])
                .map(|k| geo.midpoint_coord(j, k) - shift[j])
                .collect()
        })
        .collect();
    let mut logs = Vec::with_capacity(geo.len());
    let mut idx = vec![0usize; d];
    let mut x = [0.0f64; 3];
    for _ in 0..geo.len() {
        for j in 0..d {
            x[j] = axes[j][idx[j]];
        }
        logs.push(law.log_density(&x[..d]));
        // row-major increment
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < geo.shape[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for l in logs.iter_mut() {
        *l = (beta * (*l - top)).exp();
    }
    GridDistribution::new(geo.clone(), logs)
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws the scenario's examples. Each example has its own RNG stream, so
/// the output does not depend on generation order.
pub fn generate(config: &ScenarioConfig) -> Result<Vec<Example>> {
    config.validate()?;
    let d = config.dims;
    let geo = config.geometry()?;
    let law = NoiseLaw::new(&config.truth_noise, d);
    let true_cov = linalg::to_rows(&law.covariance);
    let mut out = Vec::with_capacity(config.n_examples * config.landmarks);
    for case in 0..config.n_examples {
        for lm in 0..config.landmarks {
            let index = case * config.landmarks + lm;
            let mut rng = example_rng(config.seed, index);
            let center = DVector::from_fn(d, |j, _| {
                let (lo, hi) = geo.extent(j);
                let q = (hi - lo) / 4.0;
                rng.random_range(lo + q..hi - q)
            });
            let truth = &center + law.draw(&mut rng);
            let samples: Vec<Vec<f64>> = (0..config.sample_count)
                .map(|_| (&center + law.draw(&mut rng)).iter().copied().collect())
                .collect();
            let grid = heatmap(&geo, &law, &center, &config.heatmap_mode)?;
            let mut ex = Example::new(
                format!("case{case:05}_lm{lm:02}"),
                truth.iter().copied().collect(),
            );
            ex.landmark = lm;
            ex.point = Some(density::decode(&grid, DecodeMode::WeightedMean)?);
            ex.covariance = match config.covariance_source {
                CovarianceSource::True => Some(true_cov.clone()),
                CovarianceSource::Sample => linalg::sample_covariance(&samples).map(|c| linalg::to_rows(&c)),
                CovarianceSource::None => None,
            };
            ex.samples = (config.sample_count > 0).then_some(samples);
            ex.grid = Some(grid);
            out.push(ex);
        }
    }
    Ok(out)
}

/// [`generate`] wrapped as a dataset that records the seed.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<Dataset> {
    let mut ds = Dataset::new(config.dims, config.split, generate(config)?);
    ds.seed = Some(config.seed);
    Ok(ds)
}

/// Volume of the true highest-density ellipsoid at level `1 − α`.
pub fn true_region_volume(config: &ScenarioConfig, alpha: f64) -> Result<f64> {
    crate::error::check_alpha(alpha)?;
    let d = config.dims;
    let det = match &config.truth_noise {
        TruthNoise::Isotropic { sigma } => sigma.powi(2 * d as i32),
        TruthNoise::Anisotropic { covariance } => linalg::determinant_spd(&linalg::to_matrix(covariance))?,
        TruthNoise::Mixture { .. } => {
            return Err(Error::UnsupportedNoise(
                "mixture noise has no ellipsoidal highest-density region".into(),
            ))
        }
    };
    let q = linalg::chi2_quantile(1.0 - alpha, d);
    Ok(linalg::unit_ball_volume(d) * q.powf(d as f64 / 2.0) * det.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScenarioConfig {
        ScenarioConfig::isotropic_2d([32, 32], 2.0, 20, 11)
    }

    #[test]
    fn tiny_noise_keeps_truth_on_center() {
        let mut c = base();
        c.truth_noise = TruthNoise::Isotropic { sigma: 1e-6 };
        c.sample_count = 3;
        for ex in generate(&c).unwrap() {
            for s in ex.samples.as_ref().unwrap() {
                assert!(crate::eval::euclidean(s, &ex.truth) < 1e-3);
            }
        }
    }

    #[test]
    fn centers_stay_in_the_central_half() {
        let mut c = base();
        c.truth_noise = TruthNoise::Isotropic { sigma: 1e-6 };
        for ex in generate(&c).unwrap() {
            assert!(ex.truth.iter().all(|&x| (7.5 - 1e-3..=23.5 + 1e-3).contains(&x)));
        }
    }

    #[test]
    fn oracle_grid_recovers_the_covariance() {
        let mut c = base();
        c.grid_shape = vec![64, 64];
        c.spacing = Some(vec![0.5, 0.5]);
        c.truth_noise = TruthNoise::Anisotropic {
            covariance: vec![vec![4.0, 1.5], vec![1.5, 2.25]],
        };
        for ex in generate(&c).unwrap() {
            let g = ex.grid.as_ref().unwrap();
            assert!((g.sum() - 1.0).abs() < 1e-12);
            let (_, cov) = density::fit_gaussian(g).unwrap();
            for (a, b) in [(cov[0][0], 4.0), (cov[1][1], 2.25), (cov[0][1], 1.5)] {
                assert!((a - b).abs() <= 0.05 * b, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut c = base();
        c.sample_count = 5;
        c.heatmap_mode = HeatmapMode::Sharpened { beta: 2.0 };
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        c.seed += 1;
        let other = generate(&c).unwrap();
        c.seed -= 1;
        assert_ne!(generate(&c).unwrap(), other);
    }

    #[test]
    fn landmarks_multiply_cases() {
        let mut c = base();
        c.landmarks = 3;
        let exs = generate(&c).unwrap();
        assert_eq!(exs.len(), 60);
        assert_eq!(exs[4].landmark, 1);
        assert_eq!(exs[4].id, "case00001_lm01");
    }

    #[test]
    fn invalid_fields_are_named() {
        type Edit = Box<dyn Fn(&mut ScenarioConfig)>;
        let cases: Vec<(Edit, &str)> = vec![
            (
                Box::new(|c| c.heatmap_mode = HeatmapMode::Sharpened { beta: 0.0 }),
                "heatmap_mode.beta",
            ),
            (
                Box::new(|c| c.heatmap_mode = HeatmapMode::Blurred { beta: 1.5 }),
                "heatmap_mode.beta",
            ),
            (
                Box::new(|c| c.truth_noise = TruthNoise::Isotropic { sigma: 0.0 }),
                "truth_noise.sigma",
            ),
            (Box::new(|c| c.dims = 4), "dims"),
            (
                Box::new(|c| {
                    c.truth_noise = TruthNoise::Mixture {
                        components: vec![MixtureComponent {
                            weight: 0.7,
                            mean: vec![0.0, 0.0],
                            covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                        }],
                    }
                }),
                "truth_noise.components.weight",
            ),
        ];
        for (mutate, field) in cases {
            let mut c = base();
            mutate(&mut c);
            match generate(&c) {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected InvalidConfig for {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn mixture_draws_follow_the_weights() {
        let mut c = base();
        c.n_examples = 4000;
        c.grid_shape = vec![8, 8];
        c.truth_noise = TruthNoise::Mixture {
            components: vec![
                MixtureComponent {
                    weight: 0.25,
                    mean: vec![-100.0, 0.0],
                    covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
                MixtureComponent {
                    weight: 0.75,
                    mean: vec![100.0, 0.0],
                    covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
            ],
        };
        let exs = generate(&c).unwrap();
        let left = exs.iter().filter(|e| e.truth[0] < 0.0).count() as f64 / exs.len() as f64;
        assert!((left - 0.25).abs() < 0.03, "{left}");
        let cov = exs[0].covariance.as_ref().unwrap();
        assert!((cov[0][0] - (1.0 + 0.25 * 0.75 * 200.0 * 200.0)).abs() < 1e-6);
    }

    #[test]
    fn true_volume_examples() {
        let mut c = base();
        c.truth_noise = TruthNoise::Isotropic { sigma: 1.0 };
        // chi2 with 2 dof: quantile 1 at p = 1 − e^{−1/2}
        let alpha = (-0.5f64).exp();
        let v1 = true_region_volume(&c, alpha).unwrap();
        assert!((v1 - std::f64::consts::PI).abs() < 1e-9);
        c.truth_noise = TruthNoise::Isotropic { sigma: 2.0 };
        assert!((true_region_volume(&c, alpha).unwrap() - 4.0 * v1).abs() < 1e-9);
        c.truth_noise = TruthNoise::Mixture { components: vec![] };
        assert!(matches!(
            true_region_volume(&c, 0.1),
            Err(Error::UnsupportedNoise(_))
        ));
    }

    #[test]
    fn chi2_volume_matches_monte_carlo_in_3d() {
        let q = linalg::chi2_quantile(0.9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let inside = (0..n)
            .filter(|_| {
                let r2: f64 = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum();
                r2 <= q
            })
            .count() as f64
            / n as f64;
        assert!((inside - 0.9).abs() < 0.002, "{inside}");
        let mut c = base();
        c.dims = 3;
        c.grid_shape = vec![8, 8, 8];
        c.truth_noise = TruthNoise::Isotropic { sigma: 1.0 };
        let v = true_region_volume(&c, 0.1).unwrap();
        let expected = 4.0 / 3.0 * std::f64::consts::PI * q.powf(1.5);
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn scenario_json_round_trip() {
        let json = r#"{
            "dims": 2, "grid_shape": [16, 16], "n_examples": 3,
            "truth_noise": {"kind": "isotropic", "sigma": 1.5},
            "heatmap_mode": {"mode": "blurred", "beta": 0.5},
            "tensor_dtype": "f4"
        }"#;
        let c: ScenarioConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.heatmap_mode, HeatmapMode::Blurred { beta: 0.5 });
        assert_eq!(c.split, Split::Calibration);
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
