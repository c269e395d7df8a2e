//! Processed dataset directory:
//!
//! ```text
//! meta               key=value lines (counts, threshold, seed, ...)
//! records.csv        user,item,label,split
//! social.csv         src,dst
//! idmap_users.csv    id,token
//! idmap_items.csv    id,token
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{HsrError, Result};
use crate::model::SocialGraph;

use super::{InteractionData, LabeledRecord, SplitTag};

/// Ordered `key=value` metadata.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Meta {
    entries: BTreeMap<String, String>,
}

impl Meta {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self
            .get(key)
            .ok_or_else(|| HsrError::Input(format!("meta is missing '{key}'")))?;
        v.parse()
            .map_err(|_| HsrError::Input(format!("meta '{key}' is not a count: '{v}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn parse_meta(text: &str) -> Result<Meta> {
    let mut meta = Meta::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HsrError::parse("meta", i + 1, "expected key=value"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(HsrError::parse("meta", i + 1, "empty key"));
        }
        meta.set(k, v.trim());
    }
    Ok(meta)
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(bytes)
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, name: &str, expected: &[&str]) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| HsrError::parse(name, 1, e.to_string()))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(HsrError::parse(name, 1, format!("expected header '{}'", expected.join(","))));
    }
    Ok(())
}

fn rows(rdr: &mut csv::Reader<&[u8]>, name: &str) -> Result<Vec<(usize, csv::StringRecord)>> {
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                HsrError::parse(name, line, e.to_string())
            })?;
            let line = r.position().map_or(0, |p| p.line() as usize);
            Ok((line, r))
        })
        .collect()
}

fn field<T: std::str::FromStr>(r: &csv::StringRecord, k: usize, name: &str, line: usize) -> Result<T> {
    let raw = r
        .get(k)
        .ok_or_else(|| HsrError::parse(name, line, format!("missing column {}", k + 1)))?;
    raw.parse()
        .map_err(|_| HsrError::parse(name, line, format!("invalid value '{raw}' in column {}", k + 1)))
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<LabeledRecord>> {
    const NAME: &str = "records.csv";
    let mut rdr = reader(bytes);
    check_header(&mut rdr, NAME, &["user", "item", "label", "split"])?;
    let mut out = Vec::new();
    for (line, r) in rows(&mut rdr, NAME)? {
        let label = match r.get(2) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(HsrError::parse(NAME, line, format!("label must be 0 or 1, got {other:?}")));
            }
        };
        let split: SplitTag = field(&r, 3, NAME, line)?;
        out.push(LabeledRecord {
            user: field(&r, 0, NAME, line)?,
            item: field(&r, 1, NAME, line)?,
            label,
            split,
        });
    }
    Ok(out)
}

pub fn parse_social(bytes: &[u8]) -> Result<Vec<(usize, usize)>> {
    const NAME: &str = "social.csv";
    let mut rdr = reader(bytes);
    check_header(&mut rdr, NAME, &["src", "dst"])?;
    rows(&mut rdr, NAME)?
        .into_iter()
        .map(|(line, r)| {
            Ok((field(&r, 0, NAME, line)?, field(&r, 1, NAME, line)?))
        })
        .collect()
}

/// Parses an `id,token` map whose ids must run 0, 1, 2, ... in order.
pub fn parse_idmap(bytes: &[u8], name: &str) -> Result<Vec<String>> {
    let mut rdr = reader(bytes);
    check_header(&mut rdr, name, &["id", "token"])?;
    let mut tokens = Vec::new();
    for (line, r) in rows(&mut rdr, name)? {
        let id: usize = field(&r, 0, name, line)?;
        if id != tokens.len() {
            return Err(HsrError::parse(name, line, format!("expected id {}, found {id}", tokens.len())));
        }
        tokens.push(field(&r, 1, name, line)?);
    }
    Ok(tokens)
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let wrap = |e: csv::Error| HsrError::Input(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| HsrError::Input(format!("csv encoding failed: {e}")))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| HsrError::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    std::fs::read(&path).map_err(|e| HsrError::io(path, e))
}

/// Writes `data` into `dir` (created if needed). Counts are added to `extra`
/// to form the `meta` file.
pub fn write_dataset(dir: &Path, data: &InteractionData, extra: &Meta) -> Result<Meta> {
    data.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HsrError::io(dir, e))?;
    let mut meta = extra.clone();
    meta.set("num_users", data.num_users);
    meta.set("num_items", data.num_items);
    meta.set("num_records", data.records.len());
    meta.set("num_positives", data.num_positives());
    meta.set("num_relations", data.social.num_edges());
    for (split, n) in data.split_counts() {
        meta.set(&format!("num_{split}"), n);
    }
    write(dir, "meta", meta.render().as_bytes())?;

    let records = data.records.iter().map(|r| {
        [
            r.user.to_string(),
            r.item.to_string(),
            u8::from(r.label).to_string(),
            r.split.to_string(),
        ]
    });
    write(dir, "records.csv", &csv_bytes(&["user", "item", "label", "split"], records)?)?;
    let social = data.social.edges().map(|(a, b)| [a.to_string(), b.to_string()]);
    write(dir, "social.csv", &csv_bytes(&["src", "dst"], social)?)?;
    for (name, tokens) in [("idmap_users.csv", &data.user_tokens), ("idmap_items.csv", &data.item_tokens)] {
        let rows = tokens.iter().enumerate().map(|(i, t)| [i.to_string(), t.clone()]);
        write(dir, name, &csv_bytes(&["id", "token"], rows)?)?;
    }
    Ok(meta)
}

pub fn read_dataset(dir: &Path) -> Result<(InteractionData, Meta)> {
    let meta_bytes = read(dir, "meta")?;
    let meta = parse_meta(
        std::str::from_utf8(&meta_bytes).map_err(|_| HsrError::parse("meta", 0, "not valid UTF-8"))?,
    )?;
    let num_users = meta.get_usize("num_users")?;
    let num_items = meta.get_usize("num_items")?;
    let mut records = parse_records(&read(dir, "records.csv")?)?;
    records.sort_unstable();
    let edges = parse_social(&read(dir, "social.csv")?)?;
    let social = SocialGraph::from_edges(num_users, edges).map_err(|e| HsrError::Input(format!("social.csv: {e}")))?;
    let data = InteractionData {
        num_users,
        num_items,
        records,
        social,
        user_tokens: parse_idmap(&read(dir, "idmap_users.csv")?, "idmap_users.csv")?,
        item_tokens: parse_idmap(&read(dir, "idmap_items.csv")?, "idmap_items.csv")?,
    };
    data.validate()?;
    if let Some(n) = meta.get("num_records") {
        if n != data.records.len().to_string() {
            return Err(HsrError::Input(format!(
                "meta declares {n} records, records.csv has {}",
                data.records.len()
            )));
        }
    }
    Ok((data, meta))
}

#[cfg(test)]
mod tests {
    use super::super::{synth_generate, SynthConfig};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_byte_identical_rewrite() {
        let data = synth_generate(&SynthConfig::new(60, 80, 2.5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut extra = Meta::default();
        extra.set("seed", 1);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(a.path(), &data, &extra).unwrap();
        let (back, meta) = read_dataset(a.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(meta.get("seed"), Some("1"));
        write_dataset(b.path(), &back, &meta).unwrap();
        for f in ["meta", "records.csv", "social.csv", "idmap_users.csv", "idmap_items.csv"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn tokens_with_commas_survive() {
        let tokens = vec!["plain".to_string(), "with,comma".to_string(), "q\"uote".to_string()];
        let bytes = csv_bytes(&["id", "token"], tokens.iter().enumerate().map(|(i, t)| [i.to_string(), t.clone()])).unwrap();
        assert_eq!(parse_idmap(&bytes, "m").unwrap(), tokens);
    }

    #[test]
    fn parser_errors_carry_lines() {
        let err = parse_records(b"user,item,label,split\n0,1,1,train\n0,2,7,test\n").unwrap_err();
        assert!(matches!(err, HsrError::Parse { line: 3, .. }), "{err}");
        assert!(parse_records(b"u,i,l,s\n").is_err());
        assert!(parse_records(b"user,item,label,split\n0,1,1,holdout\n").is_err());
        assert!(parse_social(b"src,dst\n1\n").is_err());
        assert!(parse_idmap(b"id,token\n1,a\n", "m").is_err());
        assert!(parse_meta("novalue\n").is_err());
        assert_eq!(parse_meta("a = b\n# c\n").unwrap().get("a"), Some("b"));
    }
}
