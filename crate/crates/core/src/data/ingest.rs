use std::collections::HashMap;
use std::path::Path;

use log::{info, warn};

use crate::error::{HsrError, Result};

/// Dense ids for arbitrary string tokens, assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        IdMap { tokens, index }
    }

    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRatings {
    pub users: IdMap,
    pub items: IdMap,
    /// `(user, item, rating)`, one per pair, in first-seen order.
    pub records: Vec<(usize, usize, f64)>,
    /// Repeated `(user, item)` lines folded into an earlier record.
    pub duplicates: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTrust {
    /// `(truster, trustee)` in the ratings' user id space.
    pub pairs: Vec<(usize, usize)>,
    /// Lines naming a user with no ratings.
    pub dropped: usize,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, trimmed.split_whitespace().collect()))
        }
    })
}

/// Parses `user item rating` lines. Repeated pairs keep the highest rating.
pub fn parse_ratings(text: &str, source_name: &str) -> Result<RawRatings> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut records: Vec<(usize, usize, f64)> = Vec::new();
    let mut position: HashMap<(usize, usize), usize> = HashMap::new();
    let mut duplicates = 0;
    for (line, fields) in content_lines(text) {
        let [user, item, rating] = fields[..] else {
            return Err(HsrError::parse(
                source_name,
                line,
                format!("expected 'user item rating', found {} fields", fields.len()),
            ));
        };
        let rating: f64 = rating
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| HsrError::parse(source_name, line, format!("invalid rating '{rating}'")))?;
        let key = (users.intern(user), items.intern(item));
        match position.get(&key) {
            Some(&at) => {
                duplicates += 1;
                records[at].2 = records[at].2.max(rating);
            }
            None => {
                position.insert(key, records.len());
                records.push((key.0, key.1, rating));
            }
        }
    }
    if duplicates > 0 {
        warn!("{source_name}: folded {duplicates} duplicate (user, item) lines, keeping the max rating");
    }
    Ok(RawRatings {
        users,
        items,
        records,
        duplicates,
    })
}

/// Parses `user user` lines against the user ids of `users`. Pairs naming an
/// unknown user are dropped and counted.
pub fn parse_trust(text: &str, source_name: &str, users: &IdMap) -> Result<RawTrust> {
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for (line, fields) in content_lines(text) {
        let [a, b] = fields[..] else {
            return Err(HsrError::parse(
                source_name,
                line,
                format!("expected 'user user', found {} fields", fields.len()),
            ));
        };
        match (users.get(a), users.get(b)) {
            (Some(a), Some(b)) => pairs.push((a, b)),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!("{source_name}: dropped {dropped} trust lines naming users without ratings");
    }
    if pairs.is_empty() {
        return Err(HsrError::Input(format!(
            "{source_name}: no usable trust relations; every user would be filtered out"
        )));
    }
    Ok(RawTrust { pairs, dropped })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HsrError::io(path, e))
}

pub fn ingest(ratings_path: &Path, trust_path: &Path) -> Result<(RawRatings, RawTrust)> {
    let ratings = parse_ratings(&read_text(ratings_path)?, &ratings_path.display().to_string())?;
    let trust = parse_trust(
        &read_text(trust_path)?,
        &trust_path.display().to_string(),
        &ratings.users,
    )?;
    info!(
        "ingested {} ratings ({} users, {} items) and {} trust pairs",
        ratings.records.len(),
        ratings.users.len(),
        ratings.items.len(),
        trust.pairs.len()
    );
    Ok((ratings, trust))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_fixture() {
        let r = parse_ratings("u1 i1 5\nu2\ti2\t3\n# note\n\nu3 i1 4.5\n", "r").unwrap();
        assert_eq!(r.records.len(), 3);
        assert_eq!(r.users.len(), 3);
        assert_eq!(r.records.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(r.items.get("i1"), Some(0));
        assert_eq!(r.records[2], (2, 0, 4.5));
    }

    #[test]
    fn duplicates_keep_max_rating() {
        let r = parse_ratings("a x 2\na x 5\na x 3\nb x 1\n", "r").unwrap();
        assert_eq!(r.duplicates, 2);
        assert_eq!(r.records, vec![(0, 0, 5.0), (1, 0, 1.0)]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_ratings("a x 1\n\na y\n", "ratings.txt").unwrap_err();
        assert!(matches!(err, HsrError::Parse { line: 3, .. }), "{err}");
        let err = parse_ratings("a x NaN\n", "ratings.txt").unwrap_err();
        assert!(matches!(err, HsrError::Parse { line: 1, .. }));
        let err = parse_ratings("a x 1\n", "r")
            .and_then(|r| parse_trust("a b c\n", "t", &r.users))
            .unwrap_err();
        assert!(matches!(err, HsrError::Parse { line: 1, .. }));
    }

    #[test]
    fn trust_drops_unknown_users_and_rejects_empty() {
        let r = parse_ratings("a x 1\nb x 1\n", "r").unwrap();
        let t = parse_trust("a b\nzz a\nb a\n", "t", &r.users).unwrap();
        assert_eq!(t.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(t.dropped, 1);
        assert!(matches!(parse_trust("", "t", &r.users), Err(HsrError::Input(_))));
        assert!(matches!(parse_trust("# only\n", "t", &r.users), Err(HsrError::Input(_))));
    }
}
