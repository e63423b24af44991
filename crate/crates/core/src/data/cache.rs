//! Columnar binary cache for prepared datasets: magic `MTLC`, a format
//! version, then each task's columns as little-endian scalars. Round-trips
//! are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{ColumnStats, SplitIndices, TaskDataset};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MTLC";
const VERSION: u32 = 1;

pub fn save_cache(path: &Path, tasks: &[TaskDataset]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u64(&mut w, tasks.len() as u64)?;
    for t in tasks {
        put_u64(&mut w, t.task_id as u64)?;
        put_str(&mut w, &t.task_name)?;
        put_u64(&mut w, t.n_rows() as u64)?;
        put_u64(&mut w, t.n_features() as u64)?;
        for name in &t.feature_names {
            put_str(&mut w, name)?;
        }
        for &ts in &t.timestamps {
            w.write_all(&ts.to_le_bytes())?;
        }
        // column-major feature dump
        let (n, d) = (t.n_rows(), t.n_features());
        for col in 0..d {
            for row in 0..n {
                w.write_all(&t.features[row * d + col].to_le_bytes())?;
            }
        }
        for row in &t.temporal {
            for &v in row {
                put_u32(&mut w, v)?;
            }
        }
        for &v in &t.target {
            w.write_all(&v.to_le_bytes())?;
        }
        for part in [&t.split.train, &t.split.val, &t.split.test] {
            put_u64(&mut w, part.len() as u64)?;
            for &i in part {
                put_u64(&mut w, i as u64)?;
            }
        }
        for &v in &t.stats.feature_mean {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &t.stats.feature_stdev {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&t.stats.target_mean.to_le_bytes())?;
        w.write_all(&t.stats.target_stdev.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<Vec<TaskDataset>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "{}: not a dataset cache (bad magic)",
            path.display()
        )));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::data(format!(
            "{}: unsupported cache version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let n_tasks = get_u64(&mut r)? as usize;
    let mut tasks = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let task_id = get_u64(&mut r)? as usize;
        let task_name = get_str(&mut r)?;
        let n = get_u64(&mut r)? as usize;
        let d = get_u64(&mut r)? as usize;
        let feature_names: Vec<String> =
            (0..d).map(|_| get_str(&mut r)).collect::<Result<_>>()?;
        let timestamps: Vec<i64> = (0..n).map(|_| get_i64(&mut r)).collect::<Result<_>>()?;
        let mut features = vec![0.0; n * d];
        for col in 0..d {
            for row in 0..n {
                features[row * d + col] = get_f64(&mut r)?;
            }
        }
        let temporal: Vec<[u32; 3]> = (0..n)
            .map(|_| -> Result<[u32; 3]> {
                Ok([get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?])
            })
            .collect::<Result<_>>()?;
        let target: Vec<f64> = (0..n).map(|_| get_f64(&mut r)).collect::<Result<_>>()?;
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = get_u64(&mut r)? as usize;
            parts.push((0..len).map(|_| Ok(get_u64(&mut r)? as usize)).collect::<Result<Vec<_>>>()?);
        }
        let test = parts.pop().unwrap();
        let val = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        let feature_mean: Vec<f64> = (0..d).map(|_| get_f64(&mut r)).collect::<Result<_>>()?;
        let feature_stdev: Vec<f64> = (0..d).map(|_| get_f64(&mut r)).collect::<Result<_>>()?;
        let target_mean = get_f64(&mut r)?;
        let target_stdev = get_f64(&mut r)?;
        tasks.push(TaskDataset {
            task_id,
            task_name,
            timestamps,
            feature_names,
            features,
            temporal,
            target,
            split: SplitIndices { train, val, test },
            stats: ColumnStats { feature_mean, feature_stdev, target_mean, target_stdev },
        });
    }
    Ok(tasks)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::data("truncated dataset cache".to_string()))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_i64<R: Read>(r: &mut R) -> Result<i64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u32(r)? as usize;
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::data("invalid string in dataset cache".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Nonlinearity, SyntheticSpec};

    fn sample_tasks() -> Vec<TaskDataset> {
        let spec = SyntheticSpec {
            n_tasks: 3,
            n_features: 5,
            relatedness: 0.6,
            nonlinearity: Nonlinearity::PowerCurve,
            noise_stdev: 0.2,
            n_samples: 64,
            test_fraction: 0.25,
            seed: 5,
        };
        generate_synthetic(&spec, 0.8, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tasks = sample_tasks();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.cache");
        save_cache(&path, &tasks).unwrap();
        let back = load_cache(&path).unwrap();
        assert_eq!(tasks, back);
    }

    #[test]
    fn wrong_magic_and_truncation_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.cache");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert_eq!(load_cache(&path).unwrap_err().exit_code(), 2);

        let tasks = sample_tasks();
        let good = dir.path().join("good.cache");
        save_cache(&good, &tasks).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.cache");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_cache(&cut).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let tasks = sample_tasks();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.cache");
        save_cache(&path, &tasks).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        let err = load_cache(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
