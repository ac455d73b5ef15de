//! Annual covariate series: construction, min-max normalization against the
//! historical period, and splicing observations onto projections.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CALIBRATION_START: i32 = 1928;
pub const CALIBRATION_END: i32 = 2013;
pub const PROJECTION_YEAR: i32 = 2065;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Time,
    Temperature,
    SeaLevel,
    NaoIndex,
}

impl CovariateKind {
    pub const ALL: [CovariateKind; 4] = [
        CovariateKind::Time,
        CovariateKind::Temperature,
        CovariateKind::SeaLevel,
        CovariateKind::NaoIndex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CovariateKind::Time => "time",
            CovariateKind::Temperature => "temperature",
            CovariateKind::SeaLevel => "sea_level",
            CovariateKind::NaoIndex => "nao",
        }
    }
}

impl fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovariateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CovariateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown covariate `{s}`")))
    }
}

/// Raw (unnormalized) annual values keyed by calendar year.
pub type AnnualSeries = Vec<(i32, f64)>;

/// Normalized annual covariate: `values[i]` belongs to `first_year + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSeries {
    pub kind: CovariateKind,
    pub first_year: i32,
    pub values: Vec<f64>,
    pub historical_range: (i32, i32),
}

impl CovariateSeries {
    pub fn last_year(&self) -> i32 {
        self.first_year + self.values.len() as i32 - 1
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first_year..=self.last_year()
    }

    /// Stored annual value; parameters are held constant within a year.
    pub fn value_for_year(&self, year: i32) -> Result<f64> {
        if year < self.first_year || year > self.last_year() {
            return Err(Error::CovariateCoverage(year));
        }
        Ok(self.values[(year - self.first_year) as usize])
    }
}

/// Result of [`winter_mean_nao`]: DJF means labeled by the January year,
/// plus the years dropped because a member month was missing.
#[derive(Debug, Clone, PartialEq)]
pub struct WinterMeans {
    pub values: AnnualSeries,
    pub omitted: Vec<i32>,
}

/// Winter (DJF) mean: year `y` averages December of `y - 1` with January
/// and February of `y`.
pub fn winter_mean_nao(monthly: &[(i32, u32, f64)]) -> WinterMeans {
    let lookup: BTreeMap<(i32, u32), f64> = monthly
        .iter()
        .filter(|(_, _, v)| v.is_finite())
        .map(|&(y, m, v)| ((y, m), v))
        .collect();
    let mut years: Vec<i32> = monthly
        .iter()
        .filter(|(_, m, _)| matches!(m, 12 | 1 | 2))
        .map(|&(y, m, _)| if m == 12 { y + 1 } else { y })
        .collect();
    years.sort_unstable();
    years.dedup();

    let mut out = WinterMeans { values: Vec::new(), omitted: Vec::new() };
    for y in years {
        match (lookup.get(&(y - 1, 12)), lookup.get(&(y, 1)), lookup.get(&(y, 2))) {
            (Some(d), Some(j), Some(f)) => out.values.push((y, (d + j + f) / 3.0)),
            _ => out.omitted.push(y),
        }
    }
    out
}

/// Per-year arithmetic mean of dated values.
pub fn annualize(series: &[(NaiveDate, f64)]) -> Result<AnnualSeries> {
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sums: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for (date, v) in series.iter().filter(|(_, v)| v.is_finite()) {
        let e = sums.entry(date.year()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(y, (s, n))| (y, s / n as f64)).collect())
}

/// Identity covariate `φ(y) = y` over `[first, last]`.
pub fn time_series(first: i32, last: i32) -> AnnualSeries {
    (first..=last).map(|y| (y, y as f64)).collect()
}

fn check_contiguous(series: &[(i32, f64)]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    for w in series.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            return Err(Error::InvalidArgument(alloc::format!(
                "annual series not contiguous between {} and {}",
                w[0].0,
                w[1].0
            )));
        }
    }
    Ok(())
}

/// Affine map sending the historical-range min/max to 0/1, applied to every
/// year (projection years may leave `[0, 1]`).
pub fn normalize_minmax(
    kind: CovariateKind,
    series: &[(i32, f64)],
    historical_range: (i32, i32),
) -> Result<CovariateSeries> {
    check_contiguous(series)?;
    let (h0, h1) = historical_range;
    let hist: Vec<f64> = series
        .iter()
        .filter(|(y, _)| *y >= h0 && *y <= h1)
        .map(|(_, v)| *v)
        .collect();
    if h1 < h0 || hist.len() != (h1 - h0 + 1) as usize {
        return Err(Error::InsufficientData(alloc::format!(
            "series does not cover historical range {h0}-{h1}"
        )));
    }
    let lo = hist.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = hist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateCovariate);
    }
    let span = hi - lo;
    Ok(CovariateSeries {
        kind,
        first_year: series[0].0,
        values: series.iter().map(|(_, v)| (v - lo) / span).collect(),
        historical_range,
    })
}

/// Joins observations (through `switch_year`, taking precedence) with
/// projections (after it). The result must be contiguous.
pub fn splice(
    historical: &[(i32, f64)],
    projection: &[(i32, f64)],
    switch_year: i32,
) -> Result<AnnualSeries> {
    let mut out: AnnualSeries = historical
        .iter()
        .copied()
        .filter(|(y, _)| *y <= switch_year)
        .collect();
    out.sort_by_key(|e| e.0);
    out.dedup_by_key(|e| e.0);
    if out.last().map(|e| e.0) != Some(switch_year) {
        return Err(Error::SpliceGap(switch_year));
    }
    let mut tail: AnnualSeries = projection
        .iter()
        .copied()
        .filter(|(y, _)| *y > switch_year)
        .collect();
    tail.sort_by_key(|e| e.0);
    tail.dedup_by_key(|e| e.0);
    out.extend(tail);
    for w in out.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            return Err(Error::SpliceGap(w[0].0 + 1));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn djf_mean() {
        let m = [(2000, 12, 3.0), (2001, 1, 0.0), (2001, 2, 0.0)];
        let w = winter_mean_nao(&m);
        assert_eq!(w.values, vec![(2001, 1.0)]);
        assert!(w.omitted.is_empty());
        let m = [(2000, 12, 0.4), (2001, 1, 0.4), (2001, 2, 0.4)];
        assert!((winter_mean_nao(&m).values[0].1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn incomplete_winter_is_reported() {
        let m = [
            (2001, 1, 0.0),
            (2001, 2, 0.0),
            (2001, 12, 1.0),
            (2002, 1, 1.0),
            (2002, 2, 1.0),
        ];
        let w = winter_mean_nao(&m);
        assert_eq!(w.values, vec![(2002, 1.0)]);
        assert_eq!(w.omitted, vec![2001]);
    }

    #[test]
    fn annualize_means() {
        let d = |y, m| NaiveDate::from_ymd_opt(y, m, 1).unwrap();
        assert_eq!(
            annualize(&[(d(1990, 1), 2.0), (d(1991, 1), 3.0)]).unwrap(),
            vec![(1990, 2.0), (1991, 3.0)]
        );
        let monthly: Vec<_> = (1..=12).map(|m| (d(1990, m), 0.25)).collect();
        assert_eq!(annualize(&monthly).unwrap(), vec![(1990, 0.25)]);
        assert_eq!(annualize(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn minmax_examples() {
        let s = vec![(2000, 2.0), (2001, 4.0), (2002, 6.0), (2003, 8.0)];
        let c = normalize_minmax(CovariateKind::Temperature, &s, (2000, 2002)).unwrap();
        assert_eq!(c.values, vec![0.0, 0.5, 1.0, 1.5]);
        let flat = vec![(2000, 1.0), (2001, 1.0)];
        assert_eq!(
            normalize_minmax(CovariateKind::SeaLevel, &flat, (2000, 2001)),
            Err(Error::DegenerateCovariate)
        );
    }

    #[test]
    fn time_covariate_over_calibration_window() {
        let c = normalize_minmax(
            CovariateKind::Time,
            &time_series(CALIBRATION_START, PROJECTION_YEAR),
            (CALIBRATION_START, CALIBRATION_END),
        )
        .unwrap();
        assert_eq!(c.value_for_year(1928).unwrap(), 0.0);
        assert_eq!(c.value_for_year(2013).unwrap(), 1.0);
        assert!(c.value_for_year(2065).unwrap() > 1.0);
        for (i, y) in (1928..=2013).enumerate() {
            assert!((c.value_for_year(y).unwrap() - i as f64 / 85.0).abs() < 1e-12);
        }
    }

    #[test]
    fn splice_precedence_and_gaps() {
        let h = [(2012, 1.0), (2013, 2.0)];
        let p = [(2013, 9.0), (2014, 3.0)];
        assert_eq!(
            splice(&h, &p, 2013).unwrap(),
            vec![(2012, 1.0), (2013, 2.0), (2014, 3.0)]
        );
        assert_eq!(splice(&h, &[(2015, 1.0)], 2013), Err(Error::SpliceGap(2014)));
        assert_eq!(splice(&h, &p, 2014), Err(Error::SpliceGap(2014)));
    }

    #[test]
    fn full_splice_has_138_years() {
        let h: AnnualSeries = (1880..=2016).map(|y| (y, y as f64 * 0.01)).collect();
        let p: AnnualSeries = (2006..=2100).map(|y| (y, y as f64 * 0.02)).collect();
        let s = splice(&h, &p, 2013).unwrap();
        let trimmed: Vec<_> = s
            .into_iter()
            .filter(|(y, _)| (1928..=2065).contains(y))
            .collect();
        assert_eq!(trimmed.len(), 138);
        assert!(trimmed.windows(2).all(|w| w[1].0 == w[0].0 + 1));
    }

    #[test]
    fn lookup() {
        let c = CovariateSeries {
            kind: CovariateKind::NaoIndex,
            first_year: 2064,
            values: vec![0.2, 1.31],
            historical_range: (2064, 2064),
        };
        assert_eq!(c.value_for_year(2065).unwrap(), 1.31);
        assert_eq!(c.value_for_year(2063), Err(Error::CovariateCoverage(2063)));
    }
}
