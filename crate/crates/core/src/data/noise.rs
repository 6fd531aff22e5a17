use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_index, floor_count, mix_seed, Dataset, Interaction, ItemId, SampleId, UserId};
use crate::error::{Error, Result};

/// Synthetic false-positive injection.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Injected pairs as a fraction of the clean training positives.
    pub noise_rate: f64,
    pub seed: u64,
}

const NOISE_SALT: u64 = 0x4e4f_4953_45;

/// Appends `floor(noise_rate * |train|)` false positives drawn uniformly from
/// pairs absent from every split. Injected interactions get the next sample
/// ids and `truly_noisy = true`.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !(0.0..1.0).contains(&spec.noise_rate) {
        return Err(Error::Config(format!(
            "noise rate {} outside [0, 1)",
            spec.noise_rate
        )));
    }
    let needed = floor_count(spec.noise_rate * dataset.train.len() as f64);
    if needed == 0 {
        return Ok(dataset.clone());
    }

    let mut occupied = dataset.occupied_pairs();
    let universe = dataset.num_users * dataset.num_items;
    let available = universe - occupied.len();
    if needed > available {
        return Err(Error::Capacity { needed, available });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, NOISE_SALT));
    let mut picked: Vec<(UserId, ItemId)> = Vec::with_capacity(needed);
    if available <= 4 * needed {
        // Dense regime: enumerate the free pairs and take a random prefix.
        let mut free: Vec<(UserId, ItemId)> = (0..dataset.num_users as u32)
            .flat_map(|u| (0..dataset.num_items as u32).map(move |i| (u, i)))
            .filter(|p| !occupied.contains(p))
            .collect();
        for k in 0..needed {
            let j = rng.random_range(k..free.len());
            free.swap(k, j);
        }
        free.truncate(needed);
        picked = free;
    } else {
        while picked.len() < needed {
            let pair = (
                rng.random_range(0..dataset.num_users as u32),
                rng.random_range(0..dataset.num_items as u32),
            );
            if occupied.insert(pair) {
                picked.push(pair);
            }
        }
    }

    let mut out = dataset.clone();
    out.train.extend(picked.into_iter().map(|(user, item)| Interaction {
        user,
        item,
        label: 1,
        rating: None,
        truly_noisy: true,
    }));
    out.train_positive_index = build_index(out.num_users, &out.train);
    Ok(out)
}

/// Writes `sample_id,user,item` for every injected training positive.
pub fn write_noise_mask(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "sample_id,user,item").expect("write to vec");
    for (i, it) in dataset.train.iter().enumerate() {
        if it.truly_noisy {
            writeln!(buf, "{},{},{}", i, it.user, it.item).expect("write to vec");
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a noise mask back as a set of sample ids.
pub fn read_noise_mask(path: impl AsRef<Path>) -> Result<HashSet<SampleId>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashSet::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let id = line
            .split(',')
            .next()
            .and_then(|t| t.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Parse {
                source_name: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad noise-mask row {line:?}"),
            })?;
        out.insert(SampleId(id));
    }
    Ok(out)
}
