//! Synthetic inputs: covariate proxies, a region of gauge records for prior
//! elicitation, and a complete fixture directory with a ready config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use surgebma_core::covariates::{time_series, winter_mean_nao, AnnualSeries, CovariateKind};
use surgebma_core::model::{ModelStructure, NonstationarityLevel, ParameterVector};
use surgebma_core::simulate::{simulate_record, synthetic_hourly, HourlyFixtureSpec, SimulationSpec};

use crate::error::Result;
use crate::io::{self, ExceedanceFile};
use crate::pipeline::{covariates_from_raw, derive_seed, Covariates, StationRecord};

/// Proxies are generated from this year on, so a value never depends on
/// the span requested.
const PROXY_ORIGIN: i32 = 1800;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Annual temperature anomaly proxy (°C): accelerating warming plus noise.
pub fn temperature_proxy(first: i32, last: i32, seed: u64) -> AnnualSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "temperature"));
    (PROXY_ORIGIN..=last)
        .map(|y| {
            let s = (y - 1850) as f64 / 160.0;
            (y, -0.3 + 0.9 * s * s + 0.12 * normal(&mut rng))
        })
        .filter(|(y, _)| *y >= first)
        .collect()
}

/// Annual global-mean sea level proxy (m).
pub fn sea_level_proxy(first: i32, last: i32, seed: u64) -> AnnualSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sea_level"));
    (PROXY_ORIGIN..=last)
        .map(|y| {
            let t = (y - 1850) as f64;
            (y, 0.0015 * t + 1.2e-5 * t * t + 0.012 * normal(&mut rng))
        })
        .filter(|(y, _)| *y >= first)
        .collect()
}

/// Monthly NAO index proxy: stationary, mildly persistent noise.
pub fn nao_monthly_proxy(first: i32, last: i32, seed: u64) -> Vec<(i32, u32, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "nao"));
    let mut x = 0.0;
    let mut out = Vec::new();
    for y in PROXY_ORIGIN..=last {
        for m in 1..=12 {
            x = 0.3 * x + 0.95 * normal(&mut rng);
            if y >= first {
                out.push((y, m, x));
            }
        }
    }
    out
}

/// Raw annual series of all four kinds over `first..=last`; NAO as winter
/// means.
pub fn proxy_covariates(first: i32, last: i32, seed: u64) -> Vec<(CovariateKind, AnnualSeries)> {
    let nao = winter_mean_nao(&nao_monthly_proxy(first - 1, last, seed)).values;
    vec![
        (CovariateKind::Time, time_series(first, last)),
        (CovariateKind::Temperature, temperature_proxy(first, last, seed)),
        (CovariateKind::SeaLevel, sea_level_proxy(first, last, seed)),
        (CovariateKind::NaoIndex, nao.into_iter().filter(|(y, _)| *y >= first && *y <= last).collect()),
    ]
}

/// Gauge records of a region ending in `last_year`. Record lengths run
/// from 11 to 30 years; station `i` follows the full nonstationary model
/// on covariate `i mod 4`, with its own threshold and parameters. Slopes
/// vary widely across the region, so the elicited slope priors are broad.
pub fn regional_stations(n: usize, covariates: &Covariates, last_year: i32, seed: u64) -> Result<Vec<StationRecord>> {
    (0..n)
        .map(|i| {
            let name = format!("station_{:02}", i + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &name));
            let kind = CovariateKind::ALL[i % CovariateKind::ALL.len()];
            let structure = ModelStructure::nonstationary(NonstationarityLevel::Ns3, kind)?;
            let lambda0 = rng.random_range(0.006..0.012);
            let theta = ParameterVector([
                lambda0,
                lambda0 * rng.random_range(-0.9..2.0),
                rng.random_range(0.08f64..0.2).ln(),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.2..0.15),
                rng.random_range(-0.3..0.3),
            ]);
            let spec = SimulationSpec {
                theta,
                structure,
                cov: covariates.get(kind).cloned(),
                first_year: last_year - rng.random_range(10..30),
                last_year,
                threshold: rng.random_range(0.8..1.6),
                seed: rng.random(),
            };
            Ok(StationRecord { name, set: simulate_record(&spec)? })
        })
        .collect()
}

pub const FIXTURE_STATIONS: usize = 27;
pub const FIXTURE_CONFIG: &str = "config.toml";

/// Writes a self-contained synthetic input directory and returns the path
/// of its config file.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<PathBuf> {
    let hourly = synthetic_hourly(&HourlyFixtureSpec {
        first_year: 1928,
        last_year: 2013,
        seed: derive_seed(seed, "hourly"),
        ..HourlyFixtureSpec::default()
    })?;
    io::write_hourly_csv(&dir.join("station_hourly.csv"), &hourly)?;

    let cov = dir.join("covariates");
    let (hist_end, proj_start, proj_end) = (2016, 2006, 2100);
    let temperature = temperature_proxy(1880, proj_end, seed);
    let sea_level = sea_level_proxy(1880, proj_end, seed);
    let split = |s: &AnnualSeries, a: i32, b: i32| -> AnnualSeries { s.iter().copied().filter(|(y, _)| *y >= a && *y <= b).collect() };
    io::write_annual_csv(&cov.join("temperature_historical.csv"), &split(&temperature, 1880, hist_end))?;
    io::write_annual_csv(&cov.join("temperature_projection.csv"), &split(&temperature, proj_start, proj_end))?;
    io::write_annual_csv(&cov.join("sea_level_historical.csv"), &split(&sea_level, 1880, hist_end))?;
    io::write_annual_csv(&cov.join("sea_level_projection.csv"), &split(&sea_level, proj_start, proj_end))?;
    let nao = nao_monthly_proxy(1898, proj_end, seed);
    let months = |a: i32, b: i32| -> Vec<(i32, u32, f64)> { nao.iter().copied().filter(|(y, _, _)| *y >= a && *y <= b).collect() };
    io::write_monthly_csv(&cov.join("nao_historical.csv"), &months(1898, hist_end))?;
    io::write_monthly_csv(&cov.join("nao_projection.csv"), &months(proj_start - 1, proj_end))?;

    let covariates = covariates_from_raw(proxy_covariates(1928, 2065, seed), (1928, 2013), 2065)?;
    for station in regional_stations(FIXTURE_STATIONS, &covariates, 2013, seed)? {
        let file = ExceedanceFile { config_hash: None, station: Some(station.name.clone()), set: station.set };
        io::write_json(&dir.join("stations").join(format!("{}.json", station.name)), &file)?;
    }

    let mut config = String::new();
    let _ = writeln!(config, "[run]\noutput_dir = \"out\"\nseed = {seed}\nprofile = \"desk\"\n");
    let _ = writeln!(config, "[station]\nname = \"synthetic\"\nhourly = \"station_hourly.csv\"\n");
    for kind in ["temperature", "sea_level", "nao"] {
        let _ = writeln!(
            config,
            "[covariates.{kind}]\nhistorical = \"covariates/{kind}_historical.csv\"\nprojection = \"covariates/{kind}_projection.csv\"\n"
        );
    }
    let _ = writeln!(config, "[calibration]\nstart = 1928\nend = 2013\n");
    let _ = writeln!(config, "[priors]\nstations_dir = \"stations\"\ninclude_target = true\n");
    let _ = writeln!(config, "[hazard]\nprojection_year = 2065\n");
    // longer chains than the desk default: the trend-covariate NS3 fits
    // need them to clear the convergence gate
    let _ = writeln!(config, "[sampler]\nn_iterations = 40000");
    let path = dir.join(FIXTURE_CONFIG);
    io::write_file(&path, &config)?;
    Ok(path)
}
