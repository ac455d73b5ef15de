//! Raw hourly tide-gauge records to declustered, year-grouped threshold
//! exceedances.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_WINDOW_DAYS: f64 = 365.25;
pub const DEFAULT_MIN_VALID_HOURS: u32 = 12;
pub const DEFAULT_THRESHOLD_QUANTILE: f64 = 0.99;
pub const DEFAULT_SEPARATION_DAYS: i64 = 3;
/// Fewest valid days accepted by [`compute_threshold`].
pub const MIN_THRESHOLD_DAYS: usize = 100;

const UNIX_EPOCH_CE_DAYS: i64 = 719_163;

/// Days since 1970-01-01.
pub fn day_number(date: NaiveDate) -> i64 {
    date.num_days_from_ce() as i64 - UNIX_EPOCH_CE_DAYS
}

pub fn date_from_day_number(day: i64) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt((day + UNIX_EPOCH_CE_DAYS) as i32)
        .expect("day number within chrono range")
}

/// Hours since the Unix epoch, truncated to the hour.
pub fn hour_number(datetime: NaiveDateTime) -> i64 {
    datetime.and_utc().timestamp().div_euclid(3600)
}

/// Hourly sea levels in meters. Timestamps are whole hours since the Unix
/// epoch (UTC); `None` marks a missing observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    timestamps: Vec<i64>,
    levels: Vec<Option<f64>>,
}

impl HourlySeries {
    pub fn new(timestamps: Vec<i64>, levels: Vec<Option<f64>>) -> Result<Self> {
        if timestamps.len() != levels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} timestamps but {} levels",
                timestamps.len(),
                levels.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::UnorderedTimestamps(i + 1));
        }
        let levels = levels
            .into_iter()
            .map(|l| l.filter(|v| v.is_finite()))
            .collect();
        Ok(Self { timestamps, levels })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn levels(&self) -> &[Option<f64>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Detrended daily maxima, one entry per calendar day between the first and
/// last observed day.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub dates: Vec<NaiveDate>,
    /// NaN where `valid` is false.
    pub max_level: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DailySeries {
    pub fn new(dates: Vec<NaiveDate>, max_level: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if dates.len() != max_level.len() || dates.len() != valid.len() {
            return Err(Error::InvalidArgument("daily series field lengths differ".into()));
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::UnorderedTimestamps(i + 1));
        }
        let valid = valid
            .into_iter()
            .zip(&max_level)
            .map(|(v, x)| v && x.is_finite())
            .collect();
        Ok(Self { dates, max_level, valid })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.max_level
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(x, _)| *x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRecord {
    pub date: NaiveDate,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearBlock {
    pub year: i32,
    pub records: Vec<ExceedanceRecord>,
    pub count: usize,
    /// Days of valid observation in this year.
    pub duration_days: f64,
}

impl YearBlock {
    pub fn new(year: i32, mut records: Vec<ExceedanceRecord>, duration_days: f64) -> Self {
        records.sort_by_key(|r| r.date);
        Self { year, count: records.len(), records, duration_days }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSet {
    pub threshold: f64,
    pub years: Vec<YearBlock>,
}

impl ExceedanceSet {
    pub fn total_count(&self) -> usize {
        self.years.iter().map(|y| y.count).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &ExceedanceRecord> + '_ {
        self.years.iter().flat_map(|y| y.records.iter())
    }

    pub fn first_year(&self) -> Option<i32> {
        self.years.first().map(|y| y.year)
    }

    pub fn last_year(&self) -> Option<i32> {
        self.years.last().map(|y| y.year)
    }

    /// Keeps only year blocks within `[first, last]`.
    pub fn trimmed(&self, first: i32, last: i32) -> ExceedanceSet {
        ExceedanceSet {
            threshold: self.threshold,
            years: self
                .years
                .iter()
                .filter(|y| y.year >= first && y.year <= last)
                .cloned()
                .collect(),
        }
    }

    /// Checks the structural invariants (used after deserializing).
    pub fn validate(&self, separation_days: i64) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("non-finite threshold".into()));
        }
        if self.years.windows(2).any(|w| w[1].year <= w[0].year) {
            return Err(Error::InvalidArgument("year blocks out of order".into()));
        }
        let mut last_day: Option<i64> = None;
        for block in &self.years {
            if block.count != block.records.len() {
                return Err(Error::InvalidArgument(format!("year {}: count mismatch", block.year)));
            }
            if !(block.duration_days > 0.0 && block.duration_days <= 366.0) {
                return Err(Error::InvalidArgument(format!(
                    "year {}: duration_days must lie in (0, 366]",
                    block.year
                )));
            }
            for r in &block.records {
                if r.date.year() != block.year || !(r.height >= self.threshold) {
                    return Err(Error::InvalidArgument(format!(
                        "year {}: record {} inconsistent with block",
                        block.year, r.date
                    )));
                }
                let day = day_number(r.date);
                if let Some(prev) = last_day {
                    if day - prev < separation_days {
                        return Err(Error::InvalidArgument(format!(
                            "records closer than {separation_days} days at {}",
                            r.date
                        )));
                    }
                }
                last_day = Some(day);
            }
        }
        Ok(())
    }
}

/// Subtracts a centered moving mean from every valid hour.
///
/// The window spans `window_days` and shrinks at the record edges. Output is
/// missing where the input is missing or where fewer than half of the hours
/// in the (clipped) window are valid.
pub fn detrend_moving_mean(series: &HourlySeries, window_days: f64) -> Result<HourlySeries> {
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(window_days >= 1.0) {
        return Err(Error::InvalidArgument("window_days must be at least 1".into()));
    }
    let ts = &series.timestamps;
    let half = window_days * 24.0 / 2.0;
    let (first, last) = (ts[0], ts[ts.len() - 1]);

    let mut out = Vec::with_capacity(ts.len());
    let (mut left, mut right) = (0usize, 0usize);
    let (mut sum, mut count) = (0.0f64, 0usize);
    for (i, &t) in ts.iter().enumerate() {
        let lo = libm::ceil(t as f64 - half) as i64;
        let hi = libm::floor(t as f64 + half) as i64;
        while right < ts.len() && ts[right] <= hi {
            if let Some(v) = series.levels[right] {
                sum += v;
                count += 1;
            }
            right += 1;
        }
        while ts[left] < lo {
            if let Some(v) = series.levels[left] {
                sum -= v;
                count -= 1;
            }
            left += 1;
        }
        let nominal = hi.min(last) - lo.max(first) + 1;
        let level = match series.levels[i] {
            Some(v) if count > 0 && 2 * count as i64 >= nominal => Some(v - sum / count as f64),
            _ => None,
        };
        out.push(level);
    }
    Ok(HourlySeries { timestamps: ts.clone(), levels: out })
}

/// Maximum over valid hours for every UTC calendar day spanned by the series.
pub fn daily_maxima(series: &HourlySeries, min_valid_hours: u32) -> Result<DailySeries> {
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(1..=24).contains(&min_valid_hours) {
        return Err(Error::InvalidArgument("min_valid_hours must lie in [1, 24]".into()));
    }
    let first_day = series.timestamps[0].div_euclid(24);
    let last_day = series.timestamps[series.len() - 1].div_euclid(24);
    let n_days = (last_day - first_day + 1) as usize;
    let mut maxima = alloc::vec![f64::NEG_INFINITY; n_days];
    let mut hours = alloc::vec![0u32; n_days];
    for (t, level) in series.timestamps.iter().zip(&series.levels) {
        if let Some(v) = level {
            let d = (t.div_euclid(24) - first_day) as usize;
            hours[d] += 1;
            if *v > maxima[d] {
                maxima[d] = *v;
            }
        }
    }
    let valid: Vec<bool> = hours.iter().map(|h| *h >= min_valid_hours).collect();
    let max_level = maxima
        .into_iter()
        .zip(&valid)
        .map(|(m, v)| if *v { m } else { f64::NAN })
        .collect();
    let dates = (0..n_days as i64).map(|d| date_from_day_number(first_day + d)).collect();
    Ok(DailySeries { dates, max_level, valid })
}

/// Empirical `quantile` of the valid daily maxima.
pub fn compute_threshold(daily: &DailySeries, quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument("quantile must lie in (0, 1)".into()));
    }
    let values: Vec<f64> = daily.valid_values().collect();
    if values.len() < MIN_THRESHOLD_DAYS {
        return Err(Error::InsufficientData(format!(
            "{} valid days, need at least {MIN_THRESHOLD_DAYS}",
            values.len()
        )));
    }
    Ok(math::quantile(&values, quantile))
}

/// Declusters `(day, height)` events: repeatedly keep the highest remaining
/// event (earliest on ties) and discard every event closer than
/// `separation_days` to a kept one. Output is sorted by day.
pub fn decluster_events(events: &[(i64, f64)], separation_days: i64) -> Vec<(i64, f64)> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[b]
            .1
            .total_cmp(&events[a].1)
            .then(events[a].0.cmp(&events[b].0))
    });
    let mut kept: BTreeSet<i64> = BTreeSet::new();
    let mut out = Vec::new();
    for i in order {
        let (day, height) = events[i];
        let blocked = kept
            .range(day - separation_days + 1..day + separation_days)
            .next()
            .is_some();
        if !blocked {
            kept.insert(day);
            out.push((day, height));
        }
    }
    out.sort_by_key(|e| e.0);
    out
}

/// Threshold exceedances of the valid daily maxima, declustered and grouped
/// by calendar year. Every year holding at least one valid day gets a block
/// (possibly empty) whose duration is its count of valid days.
pub fn decluster(daily: &DailySeries, threshold: f64, separation_days: i64) -> Result<ExceedanceSet> {
    if separation_days < 1 {
        return Err(Error::InvalidArgument("separation_days must be at least 1".into()));
    }
    let events: Vec<(i64, f64)> = daily
        .dates
        .iter()
        .zip(&daily.max_level)
        .zip(&daily.valid)
        .filter(|((_, x), v)| **v && **x >= threshold)
        .map(|((d, x), _)| (day_number(*d), *x))
        .collect();
    let kept = decluster_events(&events, separation_days);

    let mut years: Vec<YearBlock> = Vec::new();
    for (date, valid) in daily.dates.iter().zip(&daily.valid) {
        if !valid {
            continue;
        }
        match years.last_mut() {
            Some(b) if b.year == date.year() => b.duration_days += 1.0,
            _ => years.push(YearBlock::new(date.year(), Vec::new(), 1.0)),
        }
    }
    for (day, height) in kept {
        let date = date_from_day_number(day);
        let block = years
            .iter_mut()
            .find(|b| b.year == date.year())
            .expect("exceedance day is a valid day");
        block.records.push(ExceedanceRecord { date, height });
        block.count += 1;
    }
    Ok(ExceedanceSet { threshold, years })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn daily_from(start: NaiveDate, values: &[f64]) -> DailySeries {
        let d0 = day_number(start);
        DailySeries::new(
            (0..values.len() as i64).map(|i| date_from_day_number(d0 + i)).collect(),
            values.to_vec(),
            vec![true; values.len()],
        )
        .unwrap()
    }

    #[test]
    fn constant_series_detrends_to_zero() {
        let n = 24 * 800;
        let s = HourlySeries::new((0..n).collect(), vec![Some(1.5); n as usize]).unwrap();
        for window in [1.0, 30.0, 365.25] {
            let d = detrend_moving_mean(&s, window).unwrap();
            assert!(d.levels().iter().all(|l| *l == Some(0.0)));
        }
    }

    #[test]
    fn linear_trend_vanishes_in_full_interior_windows() {
        let n = 24 * 60;
        let a = 1e-4;
        let s = HourlySeries::new(
            (0..n).collect(),
            (0..n).map(|t| Some(a * t as f64)).collect(),
        )
        .unwrap();
        let d = detrend_moving_mean(&s, 10.0).unwrap();
        let half = 120;
        for t in half..(n - half) {
            assert!(d.levels()[t as usize].unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_window_is_missing() {
        // 30 valid hours, a 100-hour gap, then one isolated valid hour
        let mut levels = vec![Some(1.0); 30];
        levels.extend(vec![None; 100]);
        levels.push(Some(2.0));
        let s = HourlySeries::new((0..131).collect(), levels).unwrap();
        let d = detrend_moving_mean(&s, 2.0).unwrap();
        assert_eq!(d.levels()[0], Some(0.0));
        assert_eq!(d.levels()[50], None);
        assert_eq!(d.levels()[130], None);
    }

    #[test]
    fn empty_series_is_rejected() {
        let s = HourlySeries::new(vec![], vec![]).unwrap();
        assert_eq!(detrend_moving_mean(&s, 365.25), Err(Error::EmptyInput));
        assert_eq!(daily_maxima(&s, 12), Err(Error::EmptyInput));
    }

    #[test]
    fn unordered_timestamps_are_rejected() {
        assert!(matches!(
            HourlySeries::new(vec![0, 2, 2], vec![None; 3]),
            Err(Error::UnorderedTimestamps(2))
        ));
    }

    #[test]
    fn daily_max_over_sparse_day() {
        let s = HourlySeries::new(vec![3, 7, 20], vec![Some(0.1), Some(0.5), Some(0.3)]).unwrap();
        let d = daily_maxima(&s, 1).unwrap();
        assert_eq!(d.max_level, vec![0.5]);
        let d = daily_maxima(&s, 12).unwrap();
        assert_eq!(d.valid, vec![false]);
    }

    #[test]
    fn day_with_ten_hours_is_invalid_at_twelve() {
        let s = HourlySeries::new((0..10).collect(), vec![Some(1.0); 10]).unwrap();
        assert!(!daily_maxima(&s, 12).unwrap().valid[0]);
        assert!(daily_maxima(&s, 10).unwrap().valid[0]);
    }

    #[test]
    fn threshold_quantiles() {
        let d = daily_from(ymd(2000, 1, 1), &(1..=100).map(|v| v as f64).collect::<Vec<_>>());
        assert!((compute_threshold(&d, 0.99).unwrap() - 99.01).abs() < 1e-12);
        let d = daily_from(ymd(2000, 1, 1), &[0.7; 150]);
        assert_eq!(compute_threshold(&d, 0.99).unwrap(), 0.7);
        let d = daily_from(ymd(2000, 1, 1), &[1.0; 99]);
        assert!(matches!(compute_threshold(&d, 0.99), Err(Error::InsufficientData(_))));
        assert!(compute_threshold(&d, 1.0).is_err());
    }

    #[test]
    fn one_cluster_keeps_its_max() {
        let mut v = vec![0.0; 20];
        v[1] = 1.0;
        v[2] = 1.2;
        v[3] = 1.1;
        let set = decluster(&daily_from(ymd(2001, 1, 1), &v), 0.9, 3).unwrap();
        let recs: Vec<_> = set.records().copied().collect();
        assert_eq!(recs, vec![ExceedanceRecord { date: ymd(2001, 1, 3), height: 1.2 }]);
    }

    #[test]
    fn distant_exceedances_both_kept() {
        let mut v = vec![0.0; 20];
        v[1] = 1.0;
        v[10] = 1.0;
        let set = decluster(&daily_from(ymd(2001, 1, 1), &v), 0.9, 3).unwrap();
        assert_eq!(set.total_count(), 2);
    }

    #[test]
    fn ties_keep_earliest() {
        assert_eq!(decluster_events(&[(5, 2.0), (6, 2.0)], 3), vec![(5, 2.0)]);
    }

    #[test]
    fn year_blocks_cover_valid_days() {
        let mut v = vec![0.0; 400];
        v[10] = 2.0;
        v[380] = 2.0;
        let mut d = daily_from(ymd(2003, 1, 1), &v);
        d.valid[5] = false;
        let set = decluster(&d, 1.0, 3).unwrap();
        assert_eq!(set.years.len(), 2);
        assert_eq!(set.years[0].duration_days, 364.0);
        assert_eq!(set.years[1].duration_days, 35.0);
        assert_eq!(set.years[0].count, 1);
        assert!(set.validate(3).is_ok());
    }

    #[test]
    fn separation_spans_year_boundary() {
        let mut v = vec![0.0; 10];
        v[4] = 1.5; // 2004-12-31
        v[5] = 1.6; // 2005-01-01
        let set = decluster(&daily_from(ymd(2004, 12, 27), &v), 1.0, 3).unwrap();
        assert_eq!(set.total_count(), 1);
        assert_eq!(set.years[1].records[0].height, 1.6);
        assert_eq!(set.years[0].count, 0);
    }

    #[test]
    fn trimming_keeps_window() {
        let d = daily_from(ymd(2000, 1, 1), &vec![0.0; 365 * 4]);
        let set = decluster(&d, 1.0, 3).unwrap();
        let t = set.trimmed(2001, 2002);
        assert_eq!((t.first_year(), t.last_year()), (Some(2001), Some(2002)));
    }
}
