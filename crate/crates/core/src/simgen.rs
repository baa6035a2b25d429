//! Polynomial image-on-image simulation scenarios.
//!
//! Each subject has `K` input images on a `d × d × d` grid (`J = d³` cells,
//! stored flattened) with iid `N(0, 1)` intensities. The outcome image has the
//! same grid and is cellwise
//!
//! ```text
//! y_i(j) = Σ_{o=1..O} Σ_{k=1..K} β_{o,k}(j) · x_{k,i}(j)^o + ε_i(j),   ε ~ N(0, σ²)
//! ```
//!
//! with `β_{o,k}(j) ~ N(0, 1)` drawn once per scenario seed. The test set is a
//! fresh draw of `round(0.2 · n)` subjects under the same coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{mix_seed, Rng, Vector};

/// Input images and outcome of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalSample {
    pub x: Vec<Vector>,
    pub y: Vector,
}

impl MultiModalSample {
    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.x.iter().all(Vector::is_finite)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<MultiModalSample>,
    pub test: Vec<MultiModalSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    /// Training subjects.
    pub n: usize,
    /// Grid side; each image has `d³` cells.
    pub d: usize,
    /// Polynomial order `O`.
    pub order: usize,
    pub noise_sd: f64,
    pub seed: u64,
    #[serde(default = "default_modalities")]
    pub modalities: usize,
}

fn default_modalities() -> usize {
    2
}

impl SimScenario {
    pub fn new(n: usize, d: usize, order: usize, noise_sd: f64, seed: u64) -> Self {
        SimScenario {
            n,
            d,
            order,
            noise_sd,
            seed,
            modalities: 2,
        }
    }

    pub fn cells(&self) -> usize {
        self.d * self.d * self.d
    }

    pub fn test_size(&self) -> usize {
        (0.2 * self.n as f64).round() as usize
    }

    /// Stable identifier, e.g. `n100_d2_o2_s0.1`.
    pub fn id(&self) -> String {
        format!("n{}_d{}_o{}_s{}", self.n, self.d, self.order, self.noise_sd)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.order == 0 || self.modalities == 0 {
            return Err(Error::InvalidConfig(format!(
                "scenario needs n, d, order, modalities >= 1 (got {:?})",
                self
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// `β_{o,k}(j)` stored flattened in `(o, k, j)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCoefficients {
    pub order: usize,
    pub modalities: usize,
    pub cells: usize,
    pub beta: Vec<f64>,
}

impl SimCoefficients {
    pub fn filled(order: usize, modalities: usize, cells: usize, value: f64) -> Self {
        SimCoefficients {
            order,
            modalities,
            cells,
            beta: vec![value; order * modalities * cells],
        }
    }

    /// `o` is 1-based, `k` and `j` are 0-based.
    pub fn get(&self, o: usize, k: usize, j: usize) -> f64 {
        self.beta[((o - 1) * self.modalities + k) * self.cells + j]
    }

    fn draw(order: usize, modalities: usize, cells: usize, rng: &mut Rng) -> Self {
        let beta = (0..order * modalities * cells)
            .map(|_| rng.standard_normal())
            .collect();
        SimCoefficients {
            order,
            modalities,
            cells,
            beta,
        }
    }

    /// Noise-free outcome `Σ_o Σ_k β_{o,k}(j) x_k(j)^o`.
    pub fn regression(&self, x: &[Vector]) -> Result<Vector> {
        if x.len() != self.modalities || x.iter().any(|v| v.len() != self.cells) {
            return Err(Error::shape(
                "SimCoefficients::regression",
                format!("{} modalities x {} cells", self.modalities, self.cells),
                format!(
                    "inputs {:?}",
                    x.iter().map(|v| v.len()).collect::<Vec<_>>()
                ),
            ));
        }
        Ok((0..self.cells)
            .map(|j| {
                let mut acc = 0.0;
                for o in 1..=self.order {
                    for (k, xk) in x.iter().enumerate() {
                        acc += self.get(o, k, j) * xk[j].powi(o as i32);
                    }
                }
                acc
            })
            .collect())
    }
}

/// Generated scenario with everything needed to replay the outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct SimData {
    pub split: SplitDataset,
    pub coefficients: SimCoefficients,
    pub train_noise: Vec<Vector>,
    pub test_noise: Vec<Vector>,
}

pub fn gen_scenario(sc: &SimScenario) -> Result<SimData> {
    sc.validate()?;
    let mut coef_rng = Rng::new(mix_seed(&[sc.seed, 0xC0EF]));
    let coefficients = SimCoefficients::draw(sc.order, sc.modalities, sc.cells(), &mut coef_rng);
    gen_with_coefficients(sc, coefficients)
}

/// Generates subjects under caller-supplied coefficients.
pub fn gen_with_coefficients(sc: &SimScenario, coefficients: SimCoefficients) -> Result<SimData> {
    sc.validate()?;
    if coefficients.order != sc.order
        || coefficients.modalities != sc.modalities
        || coefficients.cells != sc.cells()
        || coefficients.beta.len() != sc.order * sc.modalities * sc.cells()
    {
        return Err(Error::InvalidConfig(
            "coefficients do not match the scenario shape".into(),
        ));
    }
    let mut train_rng = Rng::new(mix_seed(&[sc.seed, 0x7EA1]));
    let mut test_rng = Rng::new(mix_seed(&[sc.seed, 0x7E57]));
    let (train, train_noise) = draw_subjects(sc, &coefficients, sc.n, &mut train_rng)?;
    let (test, test_noise) = draw_subjects(sc, &coefficients, sc.test_size(), &mut test_rng)?;
    Ok(SimData {
        split: SplitDataset { train, test },
        coefficients,
        train_noise,
        test_noise,
    })
}

fn draw_subjects(
    sc: &SimScenario,
    coef: &SimCoefficients,
    count: usize,
    rng: &mut Rng,
) -> Result<(Vec<MultiModalSample>, Vec<Vector>)> {
    let cells = sc.cells();
    let mut samples = Vec::with_capacity(count);
    let mut noise = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<Vector> = (0..sc.modalities)
            .map(|_| rng.gauss_vec(cells, 0.0, 1.0))
            .collect::<Result<_>>()?;
        let eps = rng.gauss_vec(cells, 0.0, sc.noise_sd)?;
        let mean = coef.regression(&x)?;
        let y = mean.iter().zip(eps.iter()).map(|(m, e)| m + e).collect();
        samples.push(MultiModalSample { x, y });
        noise.push(eps);
    }
    Ok((samples, noise))
}

/// `(1 / (n · m)) Σ_i ‖y_i − ŷ_i‖²`.
pub fn mspe<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (y, y_hat) in pairs {
        total += y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += y.len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// MSPE of the true regression function on `test`; its expectation is `σ²`.
pub fn oracle_mspe_floor(coefficients: &SimCoefficients, test: &[MultiModalSample]) -> Result<f64> {
    let preds = test
        .iter()
        .map(|s| coefficients.regression(&s.x))
        .collect::<Result<Vec<_>>>()?;
    Ok(mspe(
        test.iter()
            .zip(&preds)
            .map(|(s, p)| (s.y.as_slice(), p.as_slice())),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_coefficients_noise_free_linear() {
        let sc = SimScenario::new(20, 2, 1, 0.0, 9);
        let data = gen_with_coefficients(&sc, SimCoefficients::filled(1, 2, 8, 1.0)).unwrap();
        for s in data.split.train.iter().chain(&data.split.test) {
            for j in 0..8 {
                assert_eq!(s.y[j], s.x[0][j] + s.x[1][j]);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let sc = SimScenario::new(30, 2, 2, 0.3, 5);
        assert_eq!(gen_scenario(&sc).unwrap(), gen_scenario(&sc).unwrap());
        let other = SimScenario { seed: 6, ..sc };
        assert_ne!(gen_scenario(&sc).unwrap().split, gen_scenario(&other).unwrap().split);
    }

    #[test]
    fn test_set_is_twenty_percent() {
        let data = gen_scenario(&SimScenario::new(100, 2, 1, 0.1, 1)).unwrap();
        assert_eq!(data.split.train.len(), 100);
        assert_eq!(data.split.test.len(), 20);
        let data = gen_scenario(&SimScenario::new(800, 2, 1, 0.1, 1)).unwrap();
        assert_eq!(data.split.test.len(), 160);
    }

    #[test]
    fn residual_variance_matches_noise() {
        // Var(y − Σβx^o) per cell, averaged over cells, from the known β.
        let sc = SimScenario::new(800, 2, 2, 0.3, 77);
        let data = gen_scenario(&sc).unwrap();
        let train = &data.split.train;
        let n = train.len() as f64;
        let cells = sc.cells();
        let resid: Vec<Vector> = train
            .iter()
            .map(|s| s.y.sub(&data.coefficients.regression(&s.x).unwrap()).unwrap())
            .collect();
        let mut var_sum = 0.0;
        for j in 0..cells {
            let mean = resid.iter().map(|r| r[j]).sum::<f64>() / n;
            var_sum += resid.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        }
        let var = var_sum / cells as f64;
        assert!((var - 0.09).abs() / 0.09 < 0.15, "residual var {var}");
    }

    #[test]
    fn coefficients_shared_between_train_and_test() {
        let data = gen_scenario(&SimScenario::new(40, 2, 3, 0.5, 3)).unwrap();
        let all = data
            .split
            .train
            .iter()
            .zip(&data.train_noise)
            .chain(data.split.test.iter().zip(&data.test_noise));
        for (s, eps) in all {
            let mean = data.coefficients.regression(&s.x).unwrap();
            for j in 0..mean.len() {
                assert_eq!((mean[j] + eps[j]).to_bits(), s.y[j].to_bits());
            }
        }
    }

    #[test]
    fn input_marginal_moments() {
        let sc = SimScenario::new(800, 2, 1, 0.1, 12);
        let data = gen_scenario(&sc).unwrap();
        let n = data.split.train.len() as f64;
        for k in 0..2 {
            for j in 0..sc.cells() {
                let vals: Vec<f64> = data.split.train.iter().map(|s| s.x[k][j]).collect();
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                assert!(mean.abs() < 4.0 / n.sqrt());
                assert!((var - 1.0).abs() < 8.0 / n.sqrt());
            }
        }
    }

    #[test]
    fn oracle_floor_zero_noise() {
        let data = gen_scenario(&SimScenario::new(50, 2, 2, 0.0, 2)).unwrap();
        assert_eq!(oracle_mspe_floor(&data.coefficients, &data.split.test).unwrap(), 0.0);
    }

    #[test]
    fn oracle_floor_tracks_sigma_squared() {
        let data = gen_scenario(&SimScenario::new(800, 2, 1, 0.1, 4)).unwrap();
        assert_eq!(data.split.test.len(), 160);
        let floor = oracle_mspe_floor(&data.coefficients, &data.split.test).unwrap();
        assert!((floor - 0.01).abs() / 0.01 < 0.2, "floor {floor}");
    }

    #[test]
    fn mspe_normalizes_by_subjects_and_cells() {
        let y = [vec![1.0, 1.0], vec![0.0, 2.0]];
        let p = [vec![0.0, 1.0], vec![0.0, 0.0]];
        let v = mspe(y.iter().zip(&p).map(|(a, b)| (a.as_slice(), b.as_slice())));
        assert_eq!(v, 5.0 / 4.0);
    }

    #[test]
    fn rejects_bad_scenarios() {
        assert!(SimScenario::new(0, 2, 1, 0.1, 0).validate().is_err());
        assert!(SimScenario::new(10, 2, 1, -0.1, 0).validate().is_err());
    }
}
