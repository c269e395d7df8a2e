//! CSV renderings of evaluation results. Values are written with Rust's
//! shortest round-trip float formatting; undefined metrics are empty cells.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HsrError, Result};

use super::{AttentionExport, BinReport, HierarchyGroup, MetricReport};

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(r: &MetricReport) -> String {
    let mut out = String::from("metric,k,value\n");
    let _ = writeln!(out, "auc,,{}", cell(r.auc));
    let _ = writeln!(out, "accuracy,,{}", cell(r.accuracy));
    for (k, v) in &r.precision {
        let _ = writeln!(out, "precision,{k},{v}");
    }
    for (k, v) in &r.recall {
        let _ = writeln!(out, "recall,{k},{v}");
    }
    let _ = writeln!(out, "ranked_users,,{}", r.ranked_users);
    let _ = writeln!(out, "records,,{}", r.records);
    out
}

pub fn bins_csv(rows: &[BinReport]) -> String {
    let ks: Vec<usize> = rows
        .first()
        .map(|r| r.metrics.precision.keys().copied().collect())
        .unwrap_or_default();
    let mut out = String::from("bin,users,interactions,min_count,max_count,auc,accuracy");
    for k in &ks {
        let _ = write!(out, ",precision@{k}");
    }
    for k in &ks {
        let _ = write!(out, ",recall@{k}");
    }
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.bin,
            r.users,
            r.interactions,
            r.min_count,
            r.max_count,
            cell(m.auc),
            cell(m.accuracy)
        );
        for k in &ks {
            let _ = write!(out, ",{}", cell(m.precision.get(k).copied()));
        }
        for k in &ks {
            let _ = write!(out, ",{}", cell(m.recall.get(k).copied()));
        }
        out.push('\n');
    }
    out
}

pub fn hierarchy_csv(groups: &[HierarchyGroup]) -> String {
    let mut out = String::from("group,users,min_dist,max_dist,avg_out_degree\n");
    for g in groups {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            g.group, g.users, g.min_dist, g.max_dist, g.avg_out_degree
        );
    }
    out
}

/// One row per item, one column per neighbor (headed by its user id).
pub fn attention_csv(e: &AttentionExport) -> String {
    let mut out = String::from("item");
    for n in &e.neighbors {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for (item, row) in e.items.iter().zip(&e.weights) {
        let _ = write!(out, "{item}");
        for w in row {
            let _ = write!(out, ",{w}");
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HsrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn metrics_layout() {
        let r = MetricReport {
            auc: Some(0.75),
            accuracy: None,
            precision: BTreeMap::from([(5, 0.2)]),
            recall: BTreeMap::from([(5, 0.5)]),
            ranked_users: 3,
            records: 10,
        };
        assert_eq!(
            metrics_csv(&r),
            "metric,k,value\nauc,,0.75\naccuracy,,\nprecision,5,0.2\nrecall,5,0.5\nranked_users,,3\nrecords,,10\n"
        );
    }

    #[test]
    fn attention_layout() {
        let e = AttentionExport {
            user: 0,
            neighbors: vec![2, 7],
            items: vec![4],
            weights: vec![vec![0.25, 0.75]],
        };
        assert_eq!(attention_csv(&e), "item,2,7\n4,0.25,0.75\n");
    }
}
