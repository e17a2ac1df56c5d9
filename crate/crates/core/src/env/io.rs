//! Text formats for ratings logs and item catalogs.
//!
//! Ratings: header `user_id,item_id,timestamp,rating`, 0-based integer ids,
//! timestamp in seconds, non-negative rating. Catalogs: header
//! `item_id,tags` with 1-4 pipe-separated tag ids, or
//! `item_id,v0,...,v{d-1}` for continuous item vectors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, ItemCatalog, ItemId, RatingMatrix, UserId, MAX_TAGS_PER_ITEM};

pub const RATINGS_HEADER: &str = "user_id,item_id,timestamp,rating";
pub const TAG_CATALOG_HEADER: &str = "item_id,tags";

/// One logged interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: UserId,
    pub item: ItemId,
    /// Seconds in logs; planning step index during planning.
    pub timestamp: f64,
    pub rating: f64,
}

struct Cursor<'a> {
    file: &'a str,
    line: usize,
}

impl Cursor<'_> {
    fn err(&self, column: usize, message: impl Into<String>) -> EnvError {
        EnvError::Parse {
            file: self.file.to_string(),
            line: self.line,
            column,
            message: message.into(),
        }
    }
}

/// Split on commas, keeping each field's 1-based starting column.
fn fields(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (k, ch) in line.char_indices() {
        if ch == ',' {
            out.push((start + 1, line[start..k].trim()));
            start = k + 1;
        }
    }
    out.push((start + 1, line[start..].trim()));
    out
}

fn parse_id(cur: &Cursor<'_>, col: usize, s: &str, what: &str) -> Result<usize, EnvError> {
    s.parse::<usize>()
        .map_err(|_| cur.err(col, format!("{what} `{s}` is not a non-negative integer")))
}

fn parse_f64(cur: &Cursor<'_>, col: usize, s: &str, what: &str) -> Result<f64, EnvError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(cur.err(col, format!("{what} `{s}` is not a finite number"))),
    }
}

fn read(path: &Path) -> Result<String, EnvError> {
    fs::read_to_string(path).map_err(|source| EnvError::Io {
        file: path.display().to_string(),
        source,
    })
}

/// Data lines with their 1-based line numbers, skipping blanks.
fn body(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, l)| (k + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn check_header(file: &str, text: &str, expected: &str) -> Result<(), EnvError> {
    let header = text
        .lines()
        .next()
        .unwrap_or("")
        .trim_end_matches('\r')
        .trim();
    if header != expected {
        return Err(EnvError::Parse {
            file: file.to_string(),
            line: 1,
            column: 1,
            message: format!("expected header `{expected}`, found `{header}`"),
        });
    }
    Ok(())
}

pub fn parse_records(file: &str, text: &str) -> Result<Vec<InteractionRecord>, EnvError> {
    check_header(file, text, RATINGS_HEADER)?;
    let mut out = Vec::new();
    for (line, raw) in body(text) {
        let cur = Cursor { file, line };
        let f = fields(raw);
        if f.len() != 4 {
            let col = f.get(4).map_or(raw.len() + 1, |x| x.0);
            return Err(cur.err(col, format!("expected 4 fields, found {}", f.len())));
        }
        let user = parse_id(&cur, f[0].0, f[0].1, "user_id")?;
        let item = parse_id(&cur, f[1].0, f[1].1, "item_id")?;
        let timestamp = parse_f64(&cur, f[2].0, f[2].1, "timestamp")?;
        let rating = parse_f64(&cur, f[3].0, f[3].1, "rating")?;
        if rating < 0.0 {
            return Err(cur.err(f[3].0, format!("rating {rating} is negative")));
        }
        out.push(InteractionRecord {
            user,
            item,
            timestamp,
            rating,
        });
    }
    Ok(out)
}

/// Read a (possibly sparse) interaction log.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>, EnvError> {
    let path = path.as_ref();
    parse_records(&path.display().to_string(), &read(path)?)
}

/// Assemble a fully observed matrix; every (user, item) cell must appear
/// exactly once. Dimensions are `max id + 1`.
pub fn parse_matrix(file: &str, text: &str) -> Result<RatingMatrix, EnvError> {
    let records = parse_records(file, text)?;
    let n_users = records.iter().map(|r| r.user + 1).max().unwrap_or(0);
    let n_items = records.iter().map(|r| r.item + 1).max().unwrap_or(0);
    if n_users == 0 {
        return Err(EnvError::Invalid(format!("{file}: no ratings")));
    }
    let mut cells: Vec<Option<f64>> = vec![None; n_users * n_items];
    for ((line, raw), r) in body(text).zip(&records) {
        let slot = &mut cells[r.user * n_items + r.item];
        if slot.is_some() {
            return Err(Cursor { file, line }.err(
                1,
                format!(
                    "duplicate cell (user {}, item {}) in `{}`",
                    r.user,
                    r.item,
                    raw.trim()
                ),
            ));
        }
        *slot = Some(r.rating);
    }
    if let Some(k) = cells.iter().position(Option::is_none) {
        return Err(EnvError::Incomplete {
            file: file.to_string(),
            user: k / n_items,
            item: k % n_items,
        });
    }
    RatingMatrix::new(n_users, n_items, cells.into_iter().flatten().collect())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<RatingMatrix, EnvError> {
    let path = path.as_ref();
    parse_matrix(&path.display().to_string(), &read(path)?)
}

/// Parse a catalog. For tag catalogs the vocabulary is `vocab` when given,
/// otherwise the largest tag id plus one.
pub fn parse_catalog(
    file: &str,
    text: &str,
    vocab: Option<usize>,
) -> Result<ItemCatalog, EnvError> {
    let header = text
        .lines()
        .next()
        .unwrap_or("")
        .trim_end_matches('\r')
        .trim();
    let header_fields = fields(header);
    let categorical = header == TAG_CATALOG_HEADER;
    if !categorical {
        let ok = header_fields.len() >= 2
            && header_fields[0].1 == "item_id"
            && header_fields[1..]
                .iter()
                .enumerate()
                .all(|(k, (_, name))| *name == format!("v{k}"));
        if !ok {
            return Err(EnvError::Parse {
                file: file.to_string(),
                line: 1,
                column: 1,
                message: format!(
                    "expected header `{TAG_CATALOG_HEADER}` or `item_id,v0,...,v{{d-1}}`, found `{header}`"
                ),
            });
        }
    }
    let width = header_fields.len();

    let mut rows: Vec<(usize, usize, Vec<u32>, Vec<f64>)> = Vec::new();
    for (line, raw) in body(text) {
        let cur = Cursor { file, line };
        let f = fields(raw);
        if f.len() != width {
            let col = f.get(width).map_or(raw.len() + 1, |x| x.0);
            return Err(cur.err(col, format!("expected {width} fields, found {}", f.len())));
        }
        let item = parse_id(&cur, f[0].0, f[0].1, "item_id")?;
        if categorical {
            let (col, spec) = f[1];
            let mut tags = Vec::new();
            let mut offset = 0;
            for part in spec.split('|') {
                let tag = part.trim().parse::<u32>().map_err(|_| {
                    cur.err(col + offset, format!("tag `{part}` is not an integer id"))
                })?;
                tags.push(tag);
                offset += part.len() + 1;
            }
            if tags.len() > MAX_TAGS_PER_ITEM {
                return Err(cur.err(
                    col,
                    format!(
                        "item {item} lists {} tags; at most {MAX_TAGS_PER_ITEM} allowed",
                        tags.len()
                    ),
                ));
            }
            rows.push((line, item, tags, Vec::new()));
        } else {
            let mut v = Vec::with_capacity(width - 1);
            for (col, s) in &f[1..] {
                v.push(parse_f64(&cur, *col, s, "coordinate")?);
            }
            rows.push((line, item, Vec::new(), v));
        }
    }
    if rows.is_empty() {
        return Err(EnvError::Invalid(format!("{file}: catalog has no items")));
    }
    let n = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut seen: Vec<Option<usize>> = vec![None; n];
    for (line, item, _, _) in &rows {
        if seen[*item].is_some() {
            return Err(Cursor { file, line: *line }.err(1, format!("item {item} listed twice")));
        }
        seen[*item] = Some(*line);
    }
    if let Some(missing) = seen.iter().position(Option::is_none) {
        return Err(EnvError::Invalid(format!(
            "{file}: item {missing} is missing from the catalog"
        )));
    }
    rows.sort_by_key(|r| r.1);
    if categorical {
        let tags: Vec<Vec<u32>> = rows.into_iter().map(|r| r.2).collect();
        let vocab = vocab.unwrap_or_else(|| {
            tags.iter()
                .flatten()
                .map(|&t| t as usize + 1)
                .max()
                .unwrap_or(1)
        });
        ItemCatalog::categorical(vocab, tags)
    } else {
        ItemCatalog::continuous(rows.into_iter().map(|r| r.3).collect())
    }
}

pub fn load_catalog(path: impl AsRef<Path>, vocab: Option<usize>) -> Result<ItemCatalog, EnvError> {
    let path = path.as_ref();
    parse_catalog(&path.display().to_string(), &read(path)?, vocab)
}

pub fn format_records(records: &[InteractionRecord]) -> String {
    let mut s = String::from(RATINGS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.user, r.item, r.timestamp, r.rating);
    }
    s
}

/// Every cell of the matrix as a ratings file (timestamps are zero).
pub fn format_matrix(m: &RatingMatrix) -> String {
    let records: Vec<_> = (0..m.n_users())
        .flat_map(|u| {
            (0..m.n_items()).map(move |i| InteractionRecord {
                user: u,
                item: i,
                timestamp: 0.0,
                rating: m.get(u, i),
            })
        })
        .collect();
    format_records(&records)
}

pub fn format_catalog(catalog: &ItemCatalog) -> String {
    let mut s = String::new();
    match catalog {
        ItemCatalog::Categorical { tags, .. } => {
            s.push_str(TAG_CATALOG_HEADER);
            s.push('\n');
            for (i, t) in tags.iter().enumerate() {
                let joined: Vec<String> = t.iter().map(u32::to_string).collect();
                let _ = writeln!(s, "{i},{}", joined.join("|"));
            }
        }
        ItemCatalog::Continuous { dim, vectors } => {
            s.push_str("item_id");
            for k in 0..*dim {
                let _ = write!(s, ",v{k}");
            }
            s.push('\n');
            for (i, v) in vectors.iter().enumerate() {
                let _ = write!(s, "{i}");
                for x in v {
                    let _ = write!(s, ",{x}");
                }
                s.push('\n');
            }
        }
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), EnvError> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| EnvError::Io {
        file: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_two_by_two() {
        let text = "user_id,item_id,timestamp,rating\n0,0,1,0.5\n0,1,2,1.5\n1,0,3.5,2\n1,1,4,0\n";
        let m = parse_matrix("r.csv", text).unwrap();
        assert_eq!((m.n_users(), m.n_items()), (2, 2));
        assert_eq!(m.get(0, 1), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn missing_cell_is_reported() {
        let text = "user_id,item_id,timestamp,rating\n0,0,1,0.5\n0,1,2,1.5\n1,1,4,0\n";
        match parse_matrix("r.csv", text) {
            Err(EnvError::Incomplete { user, item, .. }) => assert_eq!((user, item), (1, 0)),
            other => panic!("expected incompleteness error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = "user_id,item_id,timestamp,rating\n0,0,1,0.5\n0,x,2,1.5\n";
        match parse_records("r.csv", text) {
            Err(EnvError::Parse {
                file, line, column, ..
            }) => {
                assert_eq!(file, "r.csv");
                assert_eq!(line, 3);
                assert_eq!(column, 3);
            }
            other => panic!("{other:?}"),
        }
        let neg = "user_id,item_id,timestamp,rating\n0,0,1,-1\n";
        assert!(matches!(
            parse_records("r.csv", neg),
            Err(EnvError::Parse {
                line: 2,
                column: 7,
                ..
            })
        ));
        let bad_header = "user,item,ts,r\n";
        assert!(matches!(
            parse_records("r.csv", bad_header),
            Err(EnvError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn five_tags_is_a_parse_error() {
        let text = "item_id,tags\n0,1|2\n1,1|2|3|4|5\n";
        match parse_catalog("c.csv", text, Some(31)) {
            Err(EnvError::Parse {
                line,
                column,
                message,
                ..
            }) => {
                assert_eq!((line, column), (3, 3));
                assert!(message.contains("at most 4"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tag_catalog_roundtrip() {
        let text = "item_id,tags\n1,3\n0,0|7\n";
        let c = parse_catalog("c.csv", text, None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.tags(0), Some(&[0u32, 7][..]));
        let again = parse_catalog("c.csv", &format_catalog(&c), Some(8)).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn continuous_catalog_roundtrip() {
        let c = ItemCatalog::continuous(vec![vec![0.1, -2.5, 3.0], vec![1e-3, 0.0, 7.25]]).unwrap();
        let text = format_catalog(&c);
        assert!(text.starts_with("item_id,v0,v1,v2\n"));
        assert_eq!(parse_catalog("c.csv", &text, None).unwrap(), c);
    }

    #[test]
    fn matrix_roundtrip() {
        let m = RatingMatrix::new(2, 3, vec![0.0, 0.25, 1.0 / 3.0, 4.0, 5.5, 1e-9]).unwrap();
        assert_eq!(parse_matrix("m.csv", &format_matrix(&m)).unwrap(), m);
    }
}
