use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute key holding the binarized age label.
pub const AGE_GROUP: &str = "age_group";
pub const YOUNGER: &str = "Y";
pub const OLDER: &str = "O";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub timestamp: Option<u64>,
}

impl InteractionRecord {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: Option<u64>) -> Self {
        InteractionRecord {
            user: user.into(),
            item: item.into(),
            timestamp,
        }
    }
}

/// Column layout of an interaction file. Column references are header
/// names when `header` is set, zero-based indices otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionFormat {
    pub delimiter: String,
    pub header: bool,
    pub user_column: String,
    pub item_column: String,
    pub timestamp_column: Option<String>,
}

impl Default for InteractionFormat {
    fn default() -> Self {
        InteractionFormat {
            delimiter: "\t".into(),
            header: true,
            user_column: "user_id".into(),
            item_column: "item_id".into(),
            timestamp_column: Some("timestamp".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeFormat {
    pub delimiter: String,
    pub header: bool,
    pub user_column: String,
    pub gender_column: Option<String>,
    pub age_column: Option<String>,
}

impl Default for AttributeFormat {
    fn default() -> Self {
        AttributeFormat {
            delimiter: "\t".into(),
            header: true,
            user_column: "user_id".into(),
            gender_column: Some("gender".into()),
            age_column: Some("age".into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatSpec {
    pub interactions: InteractionFormat,
    pub attributes: AttributeFormat,
}

impl FormatSpec {
    /// Layout of the MovieLens-1M `ratings.dat` / `users.dat` exports.
    pub fn movielens_1m() -> Self {
        FormatSpec {
            interactions: InteractionFormat {
                delimiter: "::".into(),
                header: false,
                user_column: "0".into(),
                item_column: "1".into(),
                timestamp_column: Some("3".into()),
            },
            attributes: AttributeFormat {
                delimiter: "::".into(),
                header: false,
                user_column: "0".into(),
                gender_column: Some("1".into()),
                age_column: Some("2".into()),
            },
        }
    }
}

/// Per-user attribute labels, keyed by external user id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserAttributeTable {
    rows: BTreeMap<String, BTreeMap<String, String>>,
}

impl UserAttributeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, user: &str, attribute: &str, label: impl Into<String>) {
        self.rows
            .entry(user.to_string())
            .or_default()
            .insert(attribute.to_string(), label.into());
    }

    pub fn get(&self, user: &str, attribute: &str) -> Option<&str> {
        self.rows
            .get(user)
            .and_then(|r| r.get(attribute))
            .map(String::as_str)
    }

    pub fn contains_user(&self, user: &str) -> bool {
        self.rows.contains_key(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Keeps only the listed users.
    pub fn retain_users(&mut self, keep: &BTreeSet<&str>) {
        self.rows.retain(|u, _| keep.contains(u.as_str()));
    }

    /// Users lacking `attribute`, in id order.
    pub fn missing(&self, users: &[&str], attribute: &str) -> Vec<String> {
        users
            .iter()
            .filter(|u| self.get(u, attribute).is_none())
            .map(|u| u.to_string())
            .collect()
    }
}

struct Columns {
    indices: Vec<Option<usize>>,
}

fn resolve_columns(
    path: &Path,
    header: Option<&str>,
    delimiter: &str,
    wanted: &[Option<&str>],
) -> Result<Columns> {
    let names: Option<Vec<&str>> = header.map(|h| h.split(delimiter).map(str::trim).collect());
    let mut indices = Vec::with_capacity(wanted.len());
    for w in wanted {
        let Some(w) = w else {
            indices.push(None);
            continue;
        };
        let idx = match &names {
            Some(names) => names.iter().position(|n| n == w).or_else(|| w.parse().ok()),
            None => w.parse().ok(),
        };
        match idx {
            Some(i) => indices.push(Some(i)),
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("unknown column '{w}'"),
                })
            }
        }
    }
    Ok(Columns { indices })
}

/// Non-empty, non-comment data lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_interactions(path: &Path, text: &str, fmt: &InteractionFormat) -> Result<Vec<InteractionRecord>> {
    let mut lines = data_lines(text);
    let header = if fmt.header {
        lines.next().map(|(_, h)| h)
    } else {
        None
    };
    let cols = resolve_columns(
        path,
        header,
        &fmt.delimiter,
        &[
            Some(fmt.user_column.as_str()),
            Some(fmt.item_column.as_str()),
            fmt.timestamp_column.as_deref(),
        ],
    )?;
    let needed = cols.indices.iter().flatten().max().copied().unwrap_or(0) + 1;
    let mut out = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(fmt.delimiter.as_str()).map(str::trim).collect();
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if fields.len() < needed {
            return Err(err(format!(
                "expected at least {needed} fields, found {}",
                fields.len()
            )));
        }
        let user = fields[cols.indices[0].unwrap()];
        let item = fields[cols.indices[1].unwrap()];
        if user.is_empty() || item.is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let timestamp = match cols.indices[2] {
            Some(c) if !fields[c].is_empty() => {
                let raw = fields[c];
                let ts = raw
                    .parse::<u64>()
                    .or_else(|_| {
                        raw.parse::<f64>()
                            .ok()
                            .filter(|v| *v >= 0.0 && v.is_finite())
                            .map(|v| v as u64)
                            .ok_or(())
                    })
                    .map_err(|_| err(format!("invalid timestamp '{raw}'")))?;
                Some(ts)
            }
            _ => None,
        };
        out.push(InteractionRecord::new(user, item, timestamp));
    }
    Ok(out)
}

fn parse_attributes(path: &Path, text: &str, fmt: &AttributeFormat) -> Result<UserAttributeTable> {
    let mut lines = data_lines(text);
    let header = if fmt.header {
        lines.next().map(|(_, h)| h)
    } else {
        None
    };
    let cols = resolve_columns(
        path,
        header,
        &fmt.delimiter,
        &[
            Some(fmt.user_column.as_str()),
            fmt.gender_column.as_deref(),
            fmt.age_column.as_deref(),
        ],
    )?;
    let needed = cols.indices.iter().flatten().max().copied().unwrap_or(0) + 1;
    let mut table = UserAttributeTable::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(fmt.delimiter.as_str()).map(str::trim).collect();
        if fields.len() < needed {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected at least {needed} fields, found {}", fields.len()),
            });
        }
        let user = fields[cols.indices[0].unwrap()];
        if let Some(c) = cols.indices[1] {
            table.set(user, "gender", fields[c]);
        }
        if let Some(c) = cols.indices[2] {
            table.set(user, "age", fields[c]);
        }
    }
    Ok(table)
}

/// Reads an interaction log and its attribute table.
///
/// Repeated `(user, item)` rows collapse to one record that keeps the
/// latest timestamp. Every user with an interaction must have an
/// attribute row.
pub fn ingest(
    interaction_path: &Path,
    attribute_path: &Path,
    format: &FormatSpec,
) -> Result<(Vec<InteractionRecord>, UserAttributeTable)> {
    let text = read_text(interaction_path)?;
    let records = parse_interactions(interaction_path, &text, &format.interactions)?;
    let records = group_events_by_item(records);
    let text = read_text(attribute_path)?;
    let table = parse_attributes(attribute_path, &text, &format.attributes)?;

    let mut seen = BTreeSet::new();
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !table.contains_user(&r.user) && seen.insert(r.user.as_str()))
        .map(|r| r.user.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAttribute { users: missing });
    }
    Ok((records, table))
}

/// Collapses repeated `(user, item)` events into one record whose timestamp
/// is the latest of the group. Output keeps first-occurrence order.
pub fn group_events_by_item(records: Vec<InteractionRecord>) -> Vec<InteractionRecord> {
    let mut position: HashMap<(String, String), usize> = HashMap::with_capacity(records.len());
    let mut out: Vec<InteractionRecord> = Vec::with_capacity(records.len());
    for r in records {
        match position.get(&(r.user.clone(), r.item.clone())) {
            Some(&k) => {
                if r.timestamp > out[k].timestamp {
                    out[k].timestamp = r.timestamp;
                }
            }
            None => {
                position.insert((r.user.clone(), r.item.clone()), out.len());
                out.push(r);
            }
        }
    }
    out
}

/// Drops users with fewer than `k_min` distinct items. A single pass, not
/// an iterative k-core.
pub fn filter_min_degree(records: Vec<InteractionRecord>, k_min: usize) -> Vec<InteractionRecord> {
    let mut items: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for r in &records {
        items.entry(&r.user).or_default().insert(&r.item);
    }
    let keep: BTreeSet<String> = items
        .into_iter()
        .filter(|(_, s)| s.len() >= k_min)
        .map(|(u, _)| u.to_string())
        .collect();
    records
        .into_iter()
        .filter(|r| keep.contains(&r.user))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeBinarization {
    /// Share of labeled users assigned to the Younger group.
    pub younger_share: f64,
    pub warning: Option<String>,
}

/// Labels users with `age < threshold` as Younger and the rest as Older,
/// stored under [`AGE_GROUP`].
pub fn binarize_age(table: &mut UserAttributeTable, threshold: f64) -> Result<AgeBinarization> {
    let mut labels = Vec::new();
    for (user, row) in &table.rows {
        if let Some(raw) = row.get("age") {
            let age: f64 = raw.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("user {user}: age '{raw}' is not numeric"))
            })?;
            labels.push((user.clone(), if age < threshold { YOUNGER } else { OLDER }));
        }
    }
    let younger = labels.iter().filter(|(_, l)| *l == YOUNGER).count();
    for (user, label) in labels.iter() {
        table.set(user, AGE_GROUP, *label);
    }
    let younger_share = if labels.is_empty() {
        0.0
    } else {
        younger as f64 / labels.len() as f64
    };
    let warning = (younger_share <= 0.5).then(|| {
        let msg = format!(
            "age threshold {threshold} leaves the Younger group at {:.1}% (not the majority)",
            100.0 * younger_share
        );
        log::warn!("{msg}");
        msg
    });
    Ok(AgeBinarization {
        younger_share,
        warning,
    })
}

/// Writes records as a tab-separated file with a header row, preceded by
/// `# `-prefixed comment lines.
pub fn write_records(path: &Path, records: &[InteractionRecord], comments: &[String]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "user_id\titem_id\ttimestamp")?;
        for r in records {
            match r.timestamp {
                Some(t) => writeln!(w, "{}\t{}\t{}", r.user, r.item, t)?,
                None => writeln!(w, "{}\t{}\t", r.user, r.item)?,
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads a file produced by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<InteractionRecord>> {
    let text = read_text(path)?;
    parse_interactions(path, &text, &InteractionFormat::default())
}
