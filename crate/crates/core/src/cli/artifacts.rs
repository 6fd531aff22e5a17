//! On-disk layout of prepared datasets and run directories.
//!
//! A prepared dataset directory holds `train.tsv`, `validation.tsv`,
//! `test.tsv` (`user<TAB>item<TAB>rating`, dense ids, `-` for a missing
//! rating), an optional `noise_mask.csv` and `manifest.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{read_noise_mask, write_noise_mask, Dataset, Interaction};
use crate::error::{Error, Result};

pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "validation.tsv", "test.tsv"];
pub const NOISE_MASK: &str = "noise_mask.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub format: String,
    pub seed: u64,
    pub noise_rate: f64,
    pub clean_min_rating: Option<i64>,
    pub num_users: usize,
    pub num_items: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub injected: usize,
}

fn write_split(path: &Path, rows: &[Interaction]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in rows {
        let rating = it.rating.map_or_else(|| "-".to_string(), |r| r.to_string());
        writeln!(w, "{}\t{}\t{}", it.user, it.item, rating).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path, num_users: usize, num_items: usize) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: path.display().to_string(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [user, item, rating] = fields.as_slice() else {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let user: u32 = user.parse().map_err(|e| err(format!("user: {e}")))?;
        let item: u32 = item.parse().map_err(|e| err(format!("item: {e}")))?;
        if user as usize >= num_users || item as usize >= num_items {
            return Err(err(format!("pair ({user}, {item}) outside {num_users} x {num_items}")));
        }
        let rating = match *rating {
            "-" => None,
            r => Some(r.parse::<i64>().map_err(|e| err(format!("rating: {e}")))?),
        };
        rows.push(Interaction::positive(user, item, rating));
    }
    Ok(rows)
}

/// Writes the three splits, the noise mask (when noise was injected) and the
/// manifest. Output depends only on the inputs, so reruns are byte-identical.
pub fn write_prepared(dir: &Path, dataset: &Dataset, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, rows) in SPLIT_FILES.iter().zip([&dataset.train, &dataset.validation, &dataset.test]) {
        write_split(&dir.join(name), rows)?;
    }
    if manifest.injected > 0 {
        write_noise_mask(dataset, dir.join(NOISE_MASK))?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

/// Loads a prepared dataset, restoring ground-truth noise flags from the mask.
pub fn read_prepared(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let (nu, ni) = (manifest.num_users, manifest.num_items);
    let mut train = read_split(&dir.join(SPLIT_FILES[0]), nu, ni)?;
    let validation = read_split(&dir.join(SPLIT_FILES[1]), nu, ni)?;
    let test = read_split(&dir.join(SPLIT_FILES[2]), nu, ni)?;
    if train.is_empty() {
        return Err(Error::EmptyDataset(dir.join(SPLIT_FILES[0]).display().to_string()));
    }
    let mask_path = dir.join(NOISE_MASK);
    if mask_path.exists() {
        for id in read_noise_mask(&mask_path)? {
            let row = train.get_mut(id.index()).ok_or_else(|| {
                Error::Config(format!("{}: sample {} beyond train split", mask_path.display(), id.0))
            })?;
            row.truly_noisy = true;
        }
    }
    Ok((Dataset::new(nu, ni, train, validation, test), manifest))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Creates `<out>/<command>-<unix seconds>`, adding a counter on collision.
pub fn timestamped_dir(out: &Path, command: &str, stamp: u64) -> Result<PathBuf> {
    create_dir(out)?;
    for n in 0.. {
        let name = if n == 0 {
            format!("{command}-{stamp}")
        } else {
            format!("{command}-{stamp}-{n}")
        };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded counter")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{inject_noise, NoiseSpec};

    fn manifest(ds: &Dataset) -> DatasetManifest {
        DatasetManifest {
            source: "toy".into(),
            format: "tsv".into(),
            seed: 1,
            noise_rate: 0.25,
            clean_min_rating: Some(5),
            num_users: ds.num_users,
            num_items: ds.num_items,
            train: ds.train.len(),
            validation: ds.validation.len(),
            test: ds.test.len(),
            injected: ds.noisy_samples().len(),
        }
    }

    #[test]
    fn prepared_roundtrip_keeps_sample_ids_and_noise() {
        let train = (0..8).map(|k| Interaction::positive(k % 3, k, Some(4))).collect();
        let ds = Dataset::new(3, 12, train, vec![Interaction::positive(0, 11, Some(5))], vec![]);
        let ds = inject_noise(&ds, &NoiseSpec { noise_rate: 0.25, seed: 4 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_prepared(dir.path(), &ds, &manifest(&ds)).unwrap();
        let (back, m) = read_prepared(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m, manifest(&ds));
    }

    #[test]
    fn out_of_range_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(2, 2, vec![Interaction::positive(0, 0, None)], vec![], vec![]);
        write_prepared(dir.path(), &ds, &DatasetManifest { injected: 0, ..manifest(&ds) }).unwrap();
        fs::write(dir.path().join("test.tsv"), "0\t7\t5\n").unwrap();
        let err = read_prepared(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn timestamped_dirs_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let a = timestamped_dir(dir.path(), "train", 42).unwrap();
        let b = timestamped_dir(dir.path(), "train", 42).unwrap();
        assert_ne!(a, b);
        assert!(a.ends_with("train-42") && b.ends_with("train-42-1"));
    }
}
