//! Preprocessing stages, applied in a fixed order: merge → interpolate →
//! time-shift → temporal extraction → split/standardize. Every stage
//! preserves timestamp monotonicity.

use chrono::{DateTime, Datelike, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ColumnStats, RawSeries, SplitIndices, TaskDataset};
use crate::{Error, Result};

/// Keeps only timestamps present in every series; per-series row order is
/// preserved, so the result stays strictly increasing.
pub fn merge_on_timestamp(series: Vec<RawSeries>) -> Result<Vec<RawSeries>> {
    if series.is_empty() {
        return Err(Error::data("merge needs at least one series".to_string()));
    }
    let mut counts: std::collections::HashMap<i64, usize> = std::collections::HashMap::new();
    for s in &series {
        for &t in &s.timestamps {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let n_series = series.len();
    let merged: Vec<RawSeries> = series
        .into_iter()
        .map(|s| {
            let d = s.n_features();
            let keep: Vec<usize> = (0..s.n_rows())
                .filter(|&i| counts[&s.timestamps[i]] == n_series)
                .collect();
            let mut features = Vec::with_capacity(keep.len() * d);
            for &i in &keep {
                features.extend_from_slice(&s.features[i * d..(i + 1) * d]);
            }
            RawSeries {
                task_name: s.task_name,
                timestamps: keep.iter().map(|&i| s.timestamps[i]).collect(),
                feature_names: s.feature_names,
                features,
                target: keep.iter().map(|&i| s.target[i]).collect(),
            }
        })
        .collect();
    if merged[0].timestamps.is_empty() {
        return Err(Error::data("series have no timestamps in common".to_string()));
    }
    Ok(merged)
}

/// Linearly interpolates features and target onto `factor`× finer stamps.
/// The last input stamp contributes only its own row (no extrapolation),
/// so H input rows become `factor·(H−1)+1`.
pub fn interpolate_features(series: &RawSeries, factor: usize) -> Result<RawSeries> {
    if factor == 0 {
        return Err(Error::usage("interpolation factor must be at least 1".to_string()));
    }
    let dt = series.uniform_spacing()?;
    if dt % factor as i64 != 0 {
        return Err(Error::data(format!(
            "spacing of {dt}s does not divide evenly into {factor} steps"
        )));
    }
    let sub = dt / factor as i64;
    let h = series.n_rows();
    let d = series.n_features();
    let n_out = factor * (h - 1) + 1;
    let mut timestamps = Vec::with_capacity(n_out);
    let mut features = Vec::with_capacity(n_out * d);
    let mut target = Vec::with_capacity(n_out);
    for row in 0..h - 1 {
        for k in 0..factor {
            let frac = k as f64 / factor as f64;
            timestamps.push(series.timestamps[row] + k as i64 * sub);
            for col in 0..d {
                let a = series.feature(row, col);
                let b = series.feature(row + 1, col);
                features.push(a + frac * (b - a));
            }
            target.push(series.target[row] + frac * (series.target[row + 1] - series.target[row]));
        }
    }
    timestamps.push(series.timestamps[h - 1]);
    features.extend_from_slice(&series.features[(h - 1) * d..]);
    target.push(series.target[h - 1]);
    Ok(RawSeries {
        task_name: series.task_name.clone(),
        timestamps,
        feature_names: series.feature_names.clone(),
        features,
        target,
    })
}

/// Appends `<name>_past` (value one hour earlier) and `<name>_future`
/// (one hour later) for each named feature; rows lacking either neighbor
/// are dropped.
pub fn add_time_shifts(series: &RawSeries, shifted: &[String]) -> Result<RawSeries> {
    if shifted.is_empty() {
        return Ok(series.clone());
    }
    let cols: Vec<usize> = shifted
        .iter()
        .map(|name| {
            series
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::data(format!("unknown shifted feature `{name}`")))
        })
        .collect::<Result<_>>()?;
    let dt = series.uniform_spacing()?;
    if dt <= 0 || 3600 % dt != 0 {
        return Err(Error::data(format!(
            "spacing of {dt}s cannot express a one-hour shift"
        )));
    }
    let step = (3600 / dt) as usize;
    let n = series.n_rows();
    if n <= 2 * step {
        return Err(Error::data(format!(
            "series '{}' too short for one-hour shifts: {n} rows at {dt}s spacing",
            series.task_name
        )));
    }
    let d = series.n_features();
    let mut feature_names = series.feature_names.clone();
    for name in shifted {
        feature_names.push(format!("{name}_past"));
        feature_names.push(format!("{name}_future"));
    }
    let d_out = feature_names.len();
    let keep = step..n - step;
    let mut features = Vec::with_capacity(keep.len() * d_out);
    for row in keep.clone() {
        features.extend_from_slice(&series.features[row * d..(row + 1) * d]);
        for &c in &cols {
            features.push(series.feature(row - step, c));
            features.push(series.feature(row + step, c));
        }
    }
    Ok(RawSeries {
        task_name: series.task_name.clone(),
        timestamps: series.timestamps[keep.clone()].to_vec(),
        feature_names,
        features,
        target: series.target[keep].to_vec(),
    })
}

/// (hour 0–23, ISO-8601 week 1–53, day of month 1–31) of a UTC timestamp.
pub fn extract_temporal(ts: i64) -> (u32, u32, u32) {
    let dt = DateTime::from_timestamp(ts, 0).expect("timestamp in representable range");
    (dt.hour(), dt.iso_week().week(), dt.day())
}

/// Rows before `boundary_ts` are shuffled into train/val by `train_frac`;
/// rows at or after it form the test split. Standardization stats come from
/// the train split only and are applied to every row, features and target.
pub fn split_and_standardize(
    series: &RawSeries,
    task_id: usize,
    boundary_ts: i64,
    train_frac: f64,
    seed: u64,
) -> Result<TaskDataset> {
    if !(0.0 < train_frac && train_frac < 1.0) {
        return Err(Error::usage(format!(
            "train fraction must be in (0,1), got {train_frac}"
        )));
    }
    let n = series.n_rows();
    let d = series.n_features();
    let mut pre: Vec<usize> = (0..n).filter(|&i| series.timestamps[i] < boundary_ts).collect();
    let test: Vec<usize> = (pre.len()..n).collect();
    if pre.is_empty() {
        return Err(Error::data(format!(
            "series '{}': no rows before the test boundary",
            series.task_name
        )));
    }
    if test.is_empty() {
        return Err(Error::data(format!(
            "series '{}': no rows at or after the test boundary",
            series.task_name
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pre.shuffle(&mut rng);
    let n_train = ((train_frac * pre.len() as f64).floor() as usize).clamp(1, pre.len() - 1);
    let mut train: Vec<usize> = pre[..n_train].to_vec();
    let mut val: Vec<usize> = pre[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();

    let stats = train_stats(series, &train)?;
    let mut features = Vec::with_capacity(n * d);
    for row in 0..n {
        for col in 0..d {
            features.push(
                (series.feature(row, col) - stats.feature_mean[col]) / stats.feature_stdev[col],
            );
        }
    }
    let target: Vec<f64> = series
        .target
        .iter()
        .map(|v| (v - stats.target_mean) / stats.target_stdev)
        .collect();
    let temporal: Vec<[u32; 3]> = series
        .timestamps
        .iter()
        .map(|&ts| {
            let (h, w, day) = extract_temporal(ts);
            [h, w, day]
        })
        .collect();

    Ok(TaskDataset {
        task_id,
        task_name: series.task_name.clone(),
        timestamps: series.timestamps.clone(),
        feature_names: series.feature_names.clone(),
        features,
        temporal,
        target,
        split: SplitIndices { train, val, test },
        stats,
    })
}

/// Mean and population standard deviation of every feature column and the
/// target, over the train rows only.
fn train_stats(series: &RawSeries, train: &[usize]) -> Result<ColumnStats> {
    let d = series.n_features();
    let k = train.len() as f64;
    let mut feature_mean = vec![0.0; d];
    let mut target_mean = 0.0;
    for &row in train {
        for col in 0..d {
            feature_mean[col] += series.feature(row, col);
        }
        target_mean += series.target[row];
    }
    for m in &mut feature_mean {
        *m /= k;
    }
    target_mean /= k;

    let mut feature_var = vec![0.0; d];
    let mut target_var = 0.0;
    for &row in train {
        for col in 0..d {
            let dv = series.feature(row, col) - feature_mean[col];
            feature_var[col] += dv * dv;
        }
        let dv = series.target[row] - target_mean;
        target_var += dv * dv;
    }
    let mut feature_stdev = Vec::with_capacity(d);
    for (col, v) in feature_var.iter().enumerate() {
        let s = (v / k).sqrt();
        if s == 0.0 {
            return Err(Error::numeric(format!(
                "series '{}': feature `{}` is constant over the train split",
                series.task_name, series.feature_names[col]
            )));
        }
        feature_stdev.push(s);
    }
    let target_stdev = (target_var / k).sqrt();
    if target_stdev == 0.0 {
        return Err(Error::numeric(format!(
            "series '{}': target is constant over the train split",
            series.task_name
        )));
    }
    Ok(ColumnStats { feature_mean, feature_stdev, target_mean, target_stdev })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hourly(name: &str, start: i64, values: &[f64]) -> RawSeries {
        RawSeries {
            task_name: name.to_string(),
            timestamps: (0..values.len()).map(|i| start + 3600 * i as i64).collect(),
            feature_names: vec!["f".to_string()],
            features: values.to_vec(),
            target: values.iter().map(|v| v * 10.0).collect(),
        }
    }

    #[test]
    fn merge_keeps_the_intersection_in_order() {
        let a = hourly("a", 0, &[1.0, 2.0, 3.0]); // t = 0, 3600, 7200
        let b = hourly("b", 3600, &[5.0, 6.0, 7.0]); // t = 3600, 7200, 10800
        let merged = merge_on_timestamp(vec![a, b]).unwrap();
        assert_eq!(merged[0].timestamps, vec![3600, 7200]);
        assert_eq!(merged[1].timestamps, vec![3600, 7200]);
        assert_eq!(merged[0].features, vec![2.0, 3.0]);
        assert_eq!(merged[1].features, vec![5.0, 6.0]);
        assert_eq!(merged[0].target, vec![20.0, 30.0]);
    }

    #[test]
    fn merge_of_identical_timestamps_is_identity() {
        let a = hourly("a", 0, &[1.0, 2.0]);
        let b = hourly("b", 0, &[3.0, 4.0]);
        let merged = merge_on_timestamp(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(merged[0], a);
        assert_eq!(merged[1], b);
    }

    #[test]
    fn merge_of_disjoint_series_is_an_error() {
        let a = hourly("a", 0, &[1.0, 2.0]);
        let b = hourly("b", 86400, &[3.0, 4.0]);
        assert!(merge_on_timestamp(vec![a, b]).is_err());
    }

    #[test]
    fn interpolation_fills_quarter_hours() {
        let s = hourly("a", 0, &[0.0, 4.0]);
        let out = interpolate_features(&s, 4).unwrap();
        assert_eq!(out.timestamps, vec![0, 900, 1800, 2700, 3600]);
        assert_eq!(out.features, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out.target, vec![0.0, 10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn interpolation_of_constant_stays_constant() {
        let s = hourly("a", 0, &[2.5, 2.5, 2.5]);
        let out = interpolate_features(&s, 4).unwrap();
        assert_eq!(out.n_rows(), 9);
        assert!(out.features.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn interpolation_row_count_follows_the_tail_rule() {
        let vals: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let s = hourly("a", 0, &vals);
        let out = interpolate_features(&s, 4).unwrap();
        assert_eq!(out.n_rows(), 97); // 4·24 + 1
        let dt: Vec<i64> = out.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(dt.iter().all(|&d| d == 900));
    }

    #[test]
    fn interpolation_rejects_irregular_spacing() {
        let mut s = hourly("a", 0, &[1.0, 2.0, 3.0]);
        s.timestamps[2] += 60;
        assert!(interpolate_features(&s, 4).is_err());
    }

    #[test]
    fn time_shifts_trim_boundaries_and_add_columns() {
        let s = hourly("a", 0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = add_time_shifts(&s, &["f".to_string()]).unwrap();
        assert_eq!(out.n_rows(), 4);
        assert_eq!(out.feature_names, vec!["f", "f_past", "f_future"]);
        // middle rows keep their own value plus both neighbors
        assert_eq!(out.feature(0, 0), 2.0);
        assert_eq!(out.feature(0, 1), 1.0);
        assert_eq!(out.feature(0, 2), 3.0);
        assert_eq!(out.timestamps[0], 3600);
        assert_eq!(out.target[0], 20.0);
    }

    #[test]
    fn time_shift_of_three_rows_keeps_the_middle() {
        let s = hourly("a", 0, &[1.0, 2.0, 3.0]);
        let out = add_time_shifts(&s, &["f".to_string()]).unwrap();
        assert_eq!(out.n_rows(), 1);
        assert_eq!(out.feature(0, 1), 1.0); // past
        assert_eq!(out.feature(0, 2), 3.0); // future
    }

    #[test]
    fn time_shift_of_constant_feature_copies_it() {
        let s = hourly("a", 0, &[7.0; 8]);
        let out = add_time_shifts(&s, &["f".to_string()]).unwrap();
        for row in 0..out.n_rows() {
            assert_eq!(out.feature(row, 0), out.feature(row, 1));
            assert_eq!(out.feature(row, 0), out.feature(row, 2));
        }
    }

    #[test]
    fn time_shift_on_quarter_hour_data_reaches_a_full_hour() {
        let vals: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut s = hourly("a", 0, &vals);
        for (i, t) in s.timestamps.iter_mut().enumerate() {
            *t = 900 * i as i64;
        }
        let out = add_time_shifts(&s, &["f".to_string()]).unwrap();
        assert_eq!(out.n_rows(), 4); // rows 4..8 of 12
        assert_eq!(out.feature(0, 0), 4.0);
        assert_eq!(out.feature(0, 1), 0.0); // one hour = 4 rows back
        assert_eq!(out.feature(0, 2), 8.0);
    }

    #[test]
    fn unknown_shift_name_is_an_error() {
        let s = hourly("a", 0, &[1.0, 2.0, 3.0]);
        assert!(add_time_shifts(&s, &["nope".to_string()]).is_err());
    }

    #[test]
    fn temporal_extraction_matches_calendar_oracles() {
        // 2015-01-01 is a Thursday → ISO week 1
        assert_eq!(extract_temporal(1420070400), (0, 1, 1));
        // 2016-01-01T13:00Z is a Friday in ISO week 53 of 2015
        assert_eq!(extract_temporal(1451653200), (13, 53, 1));
        // 2015-03-15T13:00Z
        assert_eq!(extract_temporal(1426424400), (13, 11, 15));
        // 2015-12-31 → ISO week 53; 2016-12-31 → ISO week 52
        assert_eq!(extract_temporal(1451520000).1, 53);
        assert_eq!(extract_temporal(1483142400).1, 52);
    }

    fn split_fixture(n: usize) -> RawSeries {
        let vals: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let mut s = hourly("a", 0, &vals);
        s.target = (0..n).map(|i| (i as f64 * 0.3).cos() * 2.0 + 1.0).collect();
        s
    }

    #[test]
    fn split_fractions_match_the_contract() {
        let s = split_fixture(125);
        // boundary after row 99 → 100 pre rows, 25 test rows
        let ds = split_and_standardize(&s, 0, s.timestamps[100], 0.8, 7).unwrap();
        assert_eq!(ds.split.train.len(), 80);
        assert_eq!(ds.split.val.len(), 20);
        assert_eq!(ds.split.test.len(), 25);
        // disjoint and covering
        let mut all: Vec<usize> = ds
            .split
            .train
            .iter()
            .chain(&ds.split.val)
            .chain(&ds.split.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..125).collect::<Vec<_>>());
        assert!(ds.split.test.iter().all(|&i| i >= 100));
    }

    #[test]
    fn train_split_is_standardized_and_stats_invert() {
        let s = split_fixture(125);
        let ds = split_and_standardize(&s, 0, s.timestamps[100], 0.8, 7).unwrap();
        let k = ds.split.train.len() as f64;
        for col in 0..ds.n_features() {
            let mean: f64 =
                ds.split.train.iter().map(|&r| ds.features[r * ds.n_features() + col]).sum::<f64>()
                    / k;
            let var: f64 = ds
                .split
                .train
                .iter()
                .map(|&r| {
                    let v = ds.features[r * ds.n_features() + col] - mean;
                    v * v
                })
                .sum::<f64>()
                / k;
            assert!(mean.abs() < 1e-9, "col {col} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "col {col} stdev {}", var.sqrt());
        }
        let tm: f64 = ds.split.train.iter().map(|&r| ds.target[r]).sum::<f64>() / k;
        assert!(tm.abs() < 1e-9);
        // round trip standardize → destandardize
        for &r in &ds.split.test {
            let back = ds.destandardize_target(ds.target[r]);
            assert!((back - s.target[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_reproduces_membership_and_stats_ignore_test_rows() {
        let s = split_fixture(125);
        let boundary = s.timestamps[100];
        let a = split_and_standardize(&s, 0, boundary, 0.8, 99).unwrap();
        let b = split_and_standardize(&s, 0, boundary, 0.8, 99).unwrap();
        assert_eq!(a.split, b.split);

        // perturbing test rows must not move the standardization stats
        let mut perturbed = s.clone();
        for i in 100..125 {
            perturbed.features[i] += 1000.0;
            perturbed.target[i] -= 500.0;
        }
        let c = split_and_standardize(&perturbed, 0, boundary, 0.8, 99).unwrap();
        assert_eq!(a.stats, c.stats);
        assert_eq!(a.split, c.split);
    }

    #[test]
    fn degenerate_splits_are_errors() {
        let s = split_fixture(50);
        // boundary before everything → no train rows
        assert!(split_and_standardize(&s, 0, s.timestamps[0], 0.8, 1).is_err());
        // boundary after everything → no test rows
        assert!(split_and_standardize(&s, 0, s.timestamps[49] + 3600, 0.8, 1).is_err());
    }

    #[test]
    fn constant_columns_are_numeric_errors() {
        let mut s = split_fixture(50);
        for v in &mut s.features {
            *v = 3.0;
        }
        let err = split_and_standardize(&s, 0, s.timestamps[40], 0.8, 1).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
