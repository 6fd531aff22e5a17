use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use super::{Interaction, RawDataset};
use crate::error::{Error, Result};

/// On-disk layout of an interaction file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripletFormat {
    /// `user \t item \t rating [\t timestamp]` with arbitrary string tokens.
    Tsv,
    /// MovieLens-100K `u.data`: numeric 1-based ids, remapped to 0-based.
    MovieLens100k,
}

impl FromStr for TripletFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv-triplet" | "tsv" => Ok(TripletFormat::Tsv),
            "movielens-100k" | "ml-100k" => Ok(TripletFormat::MovieLens100k),
            other => Err(Error::Config(format!(
                "unknown format {other:?} (expected tsv-triplet or movielens-100k)"
            ))),
        }
    }
}

pub fn load_triplets(path: impl AsRef<Path>, format: TripletFormat) -> Result<RawDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triplets(BufReader::new(file), &path.display().to_string(), format)
}

/// Parses triplets from any reader. `source_name` only feeds error messages.
///
/// Every record is an observed positive. Duplicate (user, item) pairs collapse
/// into one interaction carrying the maximum rating.
pub fn parse_triplets<R: BufRead>(
    reader: R,
    source_name: &str,
    format: TripletFormat,
) -> Result<RawDataset> {
    let mut users = TokenMap::default();
    let mut items = TokenMap::default();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    let mut interactions: Vec<Interaction> = Vec::new();

    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_err(
                lineno,
                format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let rating: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid rating {:?}", fields[2])))?;
        if let Some(ts) = fields.get(3) {
            ts.trim()
                .parse::<i64>()
                .map_err(|_| parse_err(lineno, format!("invalid timestamp {ts:?}")))?;
        }

        let (user, item) = match format {
            TripletFormat::Tsv => (users.intern(fields[0].trim()), items.intern(fields[1].trim())),
            TripletFormat::MovieLens100k => {
                let one_based = |tok: &str, what: &str| -> Result<u32> {
                    match tok.trim().parse::<u32>() {
                        Ok(v) if v >= 1 => Ok(v - 1),
                        _ => Err(parse_err(lineno, format!("invalid 1-based {what} id {tok:?}"))),
                    }
                };
                let u = one_based(fields[0], "user")?;
                let i = one_based(fields[1], "item")?;
                users.observe(u);
                items.observe(i);
                (u, i)
            }
        };

        match seen.get(&(user, item)) {
            Some(&idx) => {
                let existing = &mut interactions[idx];
                if existing.rating.is_none_or(|r| rating > r) {
                    existing.rating = Some(rating);
                }
            }
            None => {
                seen.insert((user, item), interactions.len());
                interactions.push(Interaction::positive(user, item, Some(rating)));
            }
        }
    }

    if interactions.is_empty() {
        return Err(Error::EmptyDataset(source_name.to_string()));
    }
    Ok(RawDataset {
        num_users: users.len(),
        num_items: items.len(),
        interactions,
    })
}

/// Dense id assignment: first-appearance order for string tokens, or
/// `max + 1` cardinality for numeric ids.
#[derive(Default)]
struct TokenMap {
    ids: HashMap<String, u32>,
    max_numeric: Option<u32>,
}

impl TokenMap {
    fn intern(&mut self, token: &str) -> u32 {
        let next = self.ids.len() as u32;
        *self.ids.entry(token.to_string()).or_insert(next)
    }

    fn observe(&mut self, id: u32) {
        self.max_numeric = Some(self.max_numeric.map_or(id, |m| m.max(id)));
    }

    fn len(&self) -> usize {
        match self.max_numeric {
            Some(m) => m as usize + 1,
            None => self.ids.len(),
        }
    }
}
