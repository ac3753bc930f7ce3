//! Reproducible project ensembles and cash-flow noise.
//!
//! Every project (and every noise row) draws from its own ChaCha stream keyed
//! by `(seed, index)`, so results are identical whatever the thread count or
//! evaluation order.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{CashFlows, Ensemble, Error, Moments, Result};

const ENSEMBLE_DOMAIN: u64 = 0x9e37_79b9_7f4a_7c15;
const NOISE_DOMAIN: u64 = 0xc2b2_ae3d_27d4_eb4f;

/// Zero-mean noise with a prescribed variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3v), sqrt(3v))`.
    Uniform,
    /// `±sqrt(v)` with equal probability.
    Rademacher,
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "uniform" => Ok(NoiseFamily::Uniform),
            "rademacher" => Ok(NoiseFamily::Rademacher),
            other => Err(Error::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Uniform => "uniform",
            NoiseFamily::Rademacher => "rademacher",
        })
    }
}

/// Parameter distributions for the project ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDistributions {
    /// Beta shape of the coupon rate.
    pub alpha: f64,
    pub beta: f64,
    /// Mean of the exponential attenuation rate.
    pub gamma: f64,
    /// Noise variance `v`, shared by all projects.
    pub noise_variance: f64,
    pub noise_family: NoiseFamily,
}

impl Default for ParamDistributions {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 5.0, gamma: 0.9, noise_variance: 1.0, noise_family: NoiseFamily::Gaussian }
    }
}

impl ParamDistributions {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {x}")));
            }
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::Domain(format!("noise variance must be non-negative, got {}", self.noise_variance)));
        }
        Ok(())
    }
}

/// Root seed of a reproducible draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Independent seed for sub-experiment `index`.
    pub fn child(self, index: u64) -> Seed {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        Seed(rng.next_u64())
    }

    fn stream(self, domain: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0 ^ domain);
        rng.set_stream(index);
        rng
    }
}

/// Population moments implied by the distributions, with independent coupon
/// and attenuation rates.
pub fn analytic_moments(dist: &ParamDistributions) -> Result<Moments> {
    dist.validate()?;
    let (a, b) = (dist.alpha, dist.beta);
    let mean_c = a / (a + b);
    let second_c = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
    let var_c = a * b / ((a + b) * (a + b) * (a + b + 1.0));
    Moments::new(mean_c, dist.gamma, dist.noise_variance * second_c, var_c, dist.gamma * dist.gamma, 0.0)
}

/// Draws `n` projects: beta coupons (ratio of two gamma variates),
/// exponential attenuation (inverse CDF), and constant noise variance.
pub fn sample_ensemble(dist: &ParamDistributions, n: usize, seed: Seed) -> Result<Ensemble> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::Domain("ensemble size must be at least one".into()));
    }
    let shape_a = Gamma::new(dist.alpha, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let shape_b = Gamma::new(dist.beta, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let draws: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(ENSEMBLE_DOMAIN, i);
            let x: f64 = shape_a.sample(&mut rng);
            let y: f64 = shape_b.sample(&mut rng);
            let u: f64 = rng.gen();
            (x / (x + y), -dist.gamma * (-u).ln_1p())
        })
        .collect();
    let (coupon, attenuation) = draws.into_iter().unzip();
    Ensemble::new(coupon, attenuation, vec![dist.noise_variance; n])
}

/// Draws the `N × T` noise matrix; row `i` has mean zero and variance `v_i`.
pub fn sample_noise(ensemble: &Ensemble, maturity: u32, family: NoiseFamily, seed: Seed) -> Result<CashFlows> {
    if maturity < 1 {
        return Err(Error::Domain("maturity must be at least one period".into()));
    }
    let periods = maturity as usize;
    let mut data = vec![0.0; ensemble.len() * periods];
    data.par_chunks_mut(periods)
        .zip(ensemble.variance().par_iter())
        .enumerate()
        .for_each(|(i, (row, &v))| {
            if v == 0.0 {
                return;
            }
            let sd = v.sqrt();
            let mut rng = seed.stream(NOISE_DOMAIN, i as u64);
            match family {
                NoiseFamily::Gaussian => row.iter_mut().for_each(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = sd * z;
                }),
                NoiseFamily::Uniform => {
                    let half_width = (3.0 * v).sqrt();
                    row.iter_mut().for_each(|x| *x = rng.gen_range(-half_width..half_width));
                }
                NoiseFamily::Rademacher => row.iter_mut().for_each(|x| *x = if rng.gen::<bool>() { sd } else { -sd }),
            }
        });
    CashFlows::from_rows(ensemble.len(), periods, data)
}

#[derive(Serialize, Deserialize)]
struct EnsembleRow {
    c: f64,
    lambda: f64,
    v: f64,
}

/// Writes the ensemble as CSV with header `c,lambda,v`, one row per project,
/// using shortest round-trip decimal formatting.
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for ((&c, &lambda), &v) in ensemble.coupon().iter().zip(ensemble.attenuation()).zip(ensemble.variance()) {
        out.serialize(EnsembleRow { c, lambda, v }).map_err(csv_error("<output>"))?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(source: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
        _ => Error::Format {
            path: source.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        },
    }
}

/// Parses an ensemble CSV; `source` names the input in error messages.
pub fn read_ensemble_csv<R: Read>(reader: R, source: &str) -> Result<Ensemble> {
    let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = input.headers().map_err(csv_error(source))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["c", "lambda", "v"] {
        return Err(Error::Format {
            path: source.to_string(),
            line: 1,
            message: format!("expected header `c,lambda,v`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let (mut c, mut lambda, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for record in input.records() {
        let record = record.map_err(csv_error(source))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: EnsembleRow = record.deserialize(Some(&headers)).map_err(|e| Error::Format {
            path: source.to_string(),
            line,
            message: e.to_string(),
        })?;
        for (name, x) in [("c", row.c), ("lambda", row.lambda), ("v", row.v)] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::Format {
                    path: source.to_string(),
                    line,
                    message: format!("{name} = {x} must be finite and non-negative"),
                });
            }
        }
        c.push(row.c);
        lambda.push(row.lambda);
        v.push(row.v);
    }
    if c.is_empty() {
        return Err(Error::Format { path: source.to_string(), line: 1, message: "no projects".into() });
    }
    Ensemble::new(c, lambda, v)
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let file = std::fs::File::open(path)?;
    read_ensemble_csv(file, &path.display().to_string())
}
