//! Experiment drivers behind the command line: internal-rate curves, the
//! sign-region grid, self-averaging convergence runs and single allocations.
//!
//! Each command takes a flat configuration whose defaults reproduce the
//! reference setup (beta(2, 5) coupons, exponential attenuation with mean 0.9,
//! unit noise variance, `τ' = 3`) and returns a report that renders to CSV
//! with a `#`-prefixed header recording the resolved configuration.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::optimizer::{h_stats, max_npv_per_project, oracle_allocation, solve_allocation};
use crate::replica::{classify_region, internal_rate, kappa_quenched, RateKind, Region};
use crate::sampling::{analytic_moments, load_ensemble, sample_ensemble, sample_noise, NoiseFamily, ParamDistributions, Seed};
use crate::{npv, Ensemble, Error, Market, Result};

/// Reads a flat `key = value` configuration file. Unknown keys are rejected.
pub fn load_config<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn metadata<C: Serialize>(command: &str, config: &C) -> Result<String> {
    let body = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = format!("# command = \"{command}\"\n");
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let _ = writeln!(out, "# {line}");
    }
    Ok(out)
}

/// Parameter distributions shared by every command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DistributionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub v: f64,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        let d = ParamDistributions::default();
        Self { alpha: d.alpha, beta: d.beta, gamma: d.gamma, v: d.noise_variance }
    }
}

impl DistributionConfig {
    fn with_family(&self, noise_family: NoiseFamily) -> ParamDistributions {
        ParamDistributions { alpha: self.alpha, beta: self.beta, gamma: self.gamma, noise_variance: self.v, noise_family }
    }
}

// ---------------------------------------------------------------------------
// figure1
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Figure1Config {
    #[serde(flatten)]
    pub dist: DistributionConfig,
    pub tau_norm: f64,
    pub t_max: u32,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self { dist: DistributionConfig::default(), tau_norm: 3.0, t_max: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub maturity: u32,
    pub r_c: f64,
    pub r_c_or: f64,
}

#[derive(Debug, Clone)]
pub struct Figure1Report {
    pub config: Figure1Config,
    pub rows: Vec<RateRow>,
}

fn rate_row(moments: &crate::Moments, maturity: u32, tau_norm: f64) -> Result<RateRow> {
    let r_c = internal_rate(RateKind::Quenched, moments, maturity, tau_norm, None)?;
    let r_c_or = internal_rate(RateKind::Annealed, moments, maturity, tau_norm, None)?;
    if r_c < r_c_or {
        return Err(Error::Invariant(format!("r_c = {r_c} < r_c_or = {r_c_or} at T = {maturity}")));
    }
    Ok(RateRow { maturity, r_c, r_c_or })
}

/// Internal rates of the quenched and annealed maximal NPV for `T = 1..=t_max`.
pub fn figure1(config: &Figure1Config) -> Result<Figure1Report> {
    if config.t_max < 1 {
        return Err(Error::Config("t-max must be at least 1".into()));
    }
    let moments = analytic_moments(&config.dist.with_family(NoiseFamily::Gaussian))?;
    let rows = (1..=config.t_max)
        .into_par_iter()
        .map(|t| rate_row(&moments, t, config.tau_norm))
        .collect::<Result<Vec<_>>>()?;
    Ok(Figure1Report { config: config.clone(), rows })
}

impl Figure1Report {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(metadata("figure1", &self.config)?.as_bytes())?;
        writeln!(out, "T,r_c,r_c_or")?;
        for row in &self.rows {
            writeln!(out, "{},{},{}", row.maturity, row.r_c, row.r_c_or)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// region
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RegionConfig {
    #[serde(flatten)]
    pub dist: DistributionConfig,
    pub tau_norm: f64,
    pub t_max: u32,
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { dist: DistributionConfig::default(), tau_norm: 3.0, t_max: 30, r_min: 0.005, r_max: 1.6, r_step: 0.005 }
    }
}

impl RegionConfig {
    /// Rate grid `r_min + j·r_step`, computed without accumulation.
    pub fn rates(&self) -> Result<Vec<f64>> {
        if !(self.r_min > 0.0) || !(self.r_step > 0.0) || !(self.r_max >= self.r_min) || !self.r_max.is_finite() {
            return Err(Error::Config(format!(
                "rate grid needs 0 < r-min <= r-max and r-step > 0 (got {}, {}, {})",
                self.r_min, self.r_max, self.r_step
            )));
        }
        let count = ((self.r_max - self.r_min) / self.r_step + 1e-9).floor() as usize;
        Ok((0..=count).map(|j| self.r_min + j as f64 * self.r_step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRow {
    pub maturity: u32,
    pub rate: f64,
    pub region: Region,
}

#[derive(Debug, Clone)]
pub struct RegionReport {
    pub config: RegionConfig,
    pub rows: Vec<RegionRow>,
}

/// Sign region of `(κ, κ_OR)` on the `(T, r)` grid.
pub fn region(config: &RegionConfig) -> Result<RegionReport> {
    if config.t_max < 1 {
        return Err(Error::Config("t-max must be at least 1".into()));
    }
    let moments = analytic_moments(&config.dist.with_family(NoiseFamily::Gaussian))?;
    let rates = config.rates()?;
    let rows = (1..=config.t_max)
        .into_par_iter()
        .map(|t| {
            rates
                .iter()
                .map(|&rate| {
                    Ok(RegionRow { maturity: t, rate, region: classify_region(rate, t, &moments, config.tau_norm)? })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(RegionReport { config: config.clone(), rows })
}

impl RegionReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(metadata("region", &self.config)?.as_bytes())?;
        writeln!(out, "T,r,region")?;
        for row in &self.rows {
            writeln!(out, "{},{},{}", row.maturity, row.rate, row.region)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConvergeConfig {
    #[serde(flatten)]
    pub dist: DistributionConfig,
    pub noise: NoiseFamily,
    pub n_list: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
    pub r: f64,
    pub t_mat: u32,
    pub tau_norm: f64,
    pub m: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            dist: DistributionConfig::default(),
            noise: NoiseFamily::Gaussian,
            n_list: vec![100, 1_000, 10_000, 100_000],
            seeds: 32,
            seed: 1,
            r: 0.1,
            t_mat: 10,
            tau_norm: 3.0,
            m: 1.0,
        }
    }
}

impl ConvergeConfig {
    pub fn market(&self) -> Result<Market> {
        Market::with_tau_norm(self.r, self.t_mat, self.m, self.tau_norm)
    }
}

/// Finite-N maximal NPV per project for sample `index` of a seeded family of
/// worlds: the ensemble and the noise come from independent child seeds.
pub fn kappa_sample(dist: &ParamDistributions, market: &Market, n: usize, base: Seed, index: u64) -> Result<f64> {
    let world = base.child(index);
    let ensemble = sample_ensemble(dist, n, world.child(0))?;
    let noise = sample_noise(&ensemble, market.maturity, dist.noise_family, world.child(1))?;
    max_npv_per_project(&ensemble, &noise, market)
}

/// `kappa_sample` for indices `0..seeds`, in index order.
pub fn kappa_samples(dist: &ParamDistributions, market: &Market, n: usize, base: Seed, seeds: usize) -> Result<Vec<f64>> {
    (0..seeds as u64)
        .into_par_iter()
        .map(|s| kappa_sample(dist, market, n, base, s))
        .collect()
}

/// Mean and sample standard deviation (divisor `S - 1`).
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let (mean, var) = crate::mean_and_variance(samples).unwrap_or((f64::NAN, f64::NAN));
    let s = samples.len() as f64;
    let std = if samples.len() > 1 { (var * s / (s - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergeRow {
    pub n: usize,
    pub mean_kappa: f64,
    pub std_kappa: f64,
    pub kappa_analytic: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergeReport {
    pub config: ConvergeConfig,
    pub rows: Vec<ConvergeRow>,
}

/// Mean and spread of the finite-N optimum across seeds for each `N`,
/// against the quenched closed form.
pub fn converge(config: &ConvergeConfig) -> Result<ConvergeReport> {
    if config.n_list.is_empty() || config.n_list.contains(&0) {
        return Err(Error::Config("n-list must be a non-empty list of positive sizes".into()));
    }
    if config.seeds == 0 {
        return Err(Error::Config("seeds must be positive".into()));
    }
    let dist = config.dist.with_family(config.noise);
    let market = config.market()?;
    let kappa_analytic = kappa_quenched(&analytic_moments(&dist)?, &market);
    let rows = config
        .n_list
        .iter()
        .map(|&n| {
            let samples = kappa_samples(&dist, &market, n, Seed(config.seed), config.seeds)?;
            let (mean_kappa, std_kappa) = mean_std(&samples);
            Ok(ConvergeRow { n, mean_kappa, std_kappa, kappa_analytic })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergeReport { config: config.clone(), rows })
}

impl ConvergeReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(metadata("converge", &self.config)?.as_bytes())?;
        writeln!(out, "N,mean_kappa_N,std_kappa_N,kappa_analytic")?;
        for row in &self.rows {
            writeln!(out, "{},{},{},{}", row.n, row.mean_kappa, row.std_kappa, row.kappa_analytic)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// allocate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AllocateConfig {
    /// Ensemble CSV; when absent the ensemble is sampled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<PathBuf>,
    #[serde(flatten)]
    pub dist: DistributionConfig,
    pub n: usize,
    pub seed: u64,
    pub noise: NoiseFamily,
    pub r: f64,
    pub t_mat: u32,
    pub tau_norm: f64,
    pub m: f64,
    /// Cross-check the closed form against the numeric oracle.
    pub verify: bool,
}

impl Default for AllocateConfig {
    fn default() -> Self {
        Self {
            ensemble: None,
            dist: DistributionConfig::default(),
            n: 20,
            seed: 1,
            noise: NoiseFamily::Gaussian,
            r: 0.1,
            t_mat: 10,
            tau_norm: 3.0,
            m: 1.0,
            verify: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationRow {
    pub index: usize,
    pub c: f64,
    pub lambda: f64,
    pub h: f64,
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct AllocateReport {
    pub config: AllocateConfig,
    pub rows: Vec<AllocationRow>,
    pub k: f64,
    pub theta: f64,
    pub binding: bool,
    pub objective_per_project: f64,
    pub budget_residual: f64,
    pub concentration_residual: f64,
    /// Oracle objective per project, when verification was requested.
    pub oracle_objective: Option<f64>,
}

const VERIFY_TOL: f64 = 1e-8;

/// Optimal allocation for one realized world.
pub fn allocate(config: &AllocateConfig) -> Result<AllocateReport> {
    let market = Market::with_tau_norm(config.r, config.t_mat, config.m, config.tau_norm)?;
    let world = Seed(config.seed);
    let ensemble: Ensemble = match &config.ensemble {
        Some(path) => load_ensemble(path)?,
        None => {
            if config.n == 0 {
                return Err(Error::Config("n must be positive".into()));
            }
            sample_ensemble(&config.dist.with_family(config.noise), config.n, world.child(0))?
        }
    };
    let noise = sample_noise(&ensemble, market.maturity, config.noise, world.child(1))?;
    let stats = h_stats(npv::unit_returns(&ensemble, &noise, &market)?)?;
    let allocation = solve_allocation(&stats, &market);
    allocation.check_feasible(&market)?;

    let objective_per_project = allocation.objective_per_project(&stats.h);
    let oracle_objective = if config.verify {
        let oracle = oracle_allocation(&stats.h, &market)?;
        let value = oracle.objective_per_project(&stats.h);
        if !((value - objective_per_project).abs() < VERIFY_TOL) {
            return Err(Error::Invariant(format!(
                "closed-form objective {objective_per_project} differs from oracle {value}"
            )));
        }
        Some(value)
    } else {
        None
    };

    let rows = (0..ensemble.len())
        .map(|i| AllocationRow {
            index: i,
            c: ensemble.coupon()[i],
            lambda: ensemble.attenuation()[i],
            h: stats.h[i],
            w: allocation.w[i],
        })
        .collect();
    Ok(AllocateReport {
        config: config.clone(),
        rows,
        k: allocation.k,
        theta: allocation.theta,
        binding: allocation.binding,
        objective_per_project,
        budget_residual: allocation.budget_residual(&market),
        concentration_residual: allocation.concentration_residual(&market),
        oracle_objective,
    })
}

impl AllocateReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(metadata("allocate", &self.config)?.as_bytes())?;
        writeln!(out, "i,c,lambda,h,w")?;
        for row in &self.rows {
            writeln!(out, "{},{},{},{},{}", row.index, row.c, row.lambda, row.h, row.w)?;
        }
        writeln!(out, "# k = {}", self.k)?;
        writeln!(out, "# theta = {}", self.theta)?;
        writeln!(out, "# binding = {}", self.binding)?;
        writeln!(out, "# objective_per_project = {}", self.objective_per_project)?;
        writeln!(out, "# budget_residual = {:e}", self.budget_residual)?;
        writeln!(out, "# concentration_residual = {:e}", self.concentration_residual)?;
        if let Some(oracle) = self.oracle_objective {
            writeln!(out, "# oracle_objective_per_project = {oracle}")?;
            writeln!(out, "# oracle_gap = {:e}", (oracle - self.objective_per_project).abs())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> String {
        let mut buf = Vec::new();
        write(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn figure1_first_row_and_ordering() {
        let report = figure1(&Figure1Config { t_max: 5, ..Default::default() }).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert!((report.rows[0].r_c_or - 13.0 / 70.0).abs() < 1e-9);
        assert!(report.rows.iter().all(|r| r.r_c > r.r_c_or));
    }

    #[test]
    fn figure1_csv_is_reproducible() {
        let cfg = Figure1Config { t_max: 4, ..Default::default() };
        let a = csv_string(|b| figure1(&cfg).unwrap().write_csv(b));
        let b = csv_string(|b| figure1(&cfg).unwrap().write_csv(b));
        assert_eq!(a, b);
        assert!(a.starts_with("# command = \"figure1\"\n"));
        assert!(a.contains("# alpha = 2.0") && a.contains("# t-max = 4"));
        assert_eq!(a.lines().find(|l| !l.starts_with('#')), Some("T,r_c,r_c_or"));
    }

    #[test]
    fn figure1_reports_offending_maturity() {
        let cfg = Figure1Config { dist: DistributionConfig { gamma: 0.01, alpha: 0.01, ..Default::default() }, t_max: 3, ..Default::default() };
        let err = figure1(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("T=1"), "{err}");
    }

    #[test]
    fn region_grid_matches_roots() {
        let cfg = RegionConfig { t_max: 3, ..Default::default() };
        let report = region(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3 * 320);
        let roots = figure1(&Figure1Config { t_max: 3, ..Default::default() }).unwrap();
        for row in &report.rows {
            let rr = roots.rows[row.maturity as usize - 1];
            let expected = if row.rate < rr.r_c_or {
                Region::A
            } else if row.rate < rr.r_c {
                Region::B
            } else {
                Region::C
            };
            assert_eq!(row.region, expected, "T={} r={}", row.maturity, row.rate);
        }
        let regions: std::collections::HashSet<_> = report.rows.iter().map(|r| r.region).collect();
        assert_eq!(regions.len(), 3);
    }

    #[test]
    fn region_grid_validation() {
        assert!(RegionConfig { r_min: 0.0, ..Default::default() }.rates().is_err());
        assert!(RegionConfig { r_step: 0.0, ..Default::default() }.rates().is_err());
        assert!(RegionConfig { r_max: 0.001, ..Default::default() }.rates().is_err());
        let grid = RegionConfig::default().rates().unwrap();
        assert_eq!(grid.len(), 320);
        assert!((grid.last().unwrap() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn no_disorder_means_no_finite_size_effect() {
        let market = ConvergeConfig::default().market().unwrap();
        let moments = crate::Moments::point(0.3, 0.9, 0.0).unwrap();
        let analytic = kappa_quenched(&moments, &market);
        for n in [1, 10, 1000] {
            let ensemble = Ensemble::uniform(n, 0.3, 0.9, 0.0).unwrap();
            let noise = sample_noise(&ensemble, market.maturity, NoiseFamily::Gaussian, Seed(4)).unwrap();
            let finite = max_npv_per_project(&ensemble, &noise, &market).unwrap();
            assert!((finite - analytic).abs() < 1e-14, "N={n}: {finite} vs {analytic}");
        }
    }

    #[test]
    fn converge_spread_shrinks() {
        let cfg = ConvergeConfig { n_list: vec![100, 10_000], seeds: 16, ..Default::default() };
        let report = converge(&cfg).unwrap();
        assert!(report.rows[1].std_kappa < report.rows[0].std_kappa);
        let csv = csv_string(|b| report.write_csv(b));
        assert!(csv.contains("N,mean_kappa_N,std_kappa_N,kappa_analytic"));
        assert!(csv.contains("# n-list = [100, 10000]"));
    }

    #[test]
    fn converge_config_errors() {
        assert!(converge(&ConvergeConfig { n_list: vec![], ..Default::default() }).is_err());
        assert!(converge(&ConvergeConfig { seeds: 0, ..Default::default() }).is_err());
        assert_eq!(converge(&ConvergeConfig { r: -1.0, ..Default::default() }).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn allocate_sampled_with_verification() {
        let report = allocate(&AllocateConfig { n: 30, verify: true, ..Default::default() }).unwrap();
        assert_eq!(report.rows.len(), 30);
        assert!(report.budget_residual < 1e-9 && report.concentration_residual.abs() < 1e-9);
        assert!((report.oracle_objective.unwrap() - report.objective_per_project).abs() < 1e-8);
        let csv = csv_string(|b| report.write_csv(b));
        assert!(csv.contains("i,c,lambda,h,w\n0,"));
        assert!(csv.contains("# oracle_gap = "));
    }

    #[test]
    fn allocate_identical_noiseless_projects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.csv");
        std::fs::write(&path, "c,lambda,v\n0.3,0.9,0\n0.3,0.9,0\n0.3,0.9,0\n").unwrap();
        let report = allocate(&AllocateConfig { ensemble: Some(path), verify: true, ..Default::default() }).unwrap();
        assert!(report.rows.iter().all(|r| r.w == 1.0));
        assert!(!report.binding);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.toml");
        std::fs::write(&good, "t-max = 7\ngamma = 0.5\n").unwrap();
        let cfg: Figure1Config = load_config(&good).unwrap();
        assert_eq!((cfg.t_max, cfg.dist.gamma, cfg.dist.alpha), (7, 0.5, 2.0));

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "t-max = 7\nbogus = 1\n").unwrap();
        let err = load_config::<Figure1Config>(&bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
