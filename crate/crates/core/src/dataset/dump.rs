//! Human-readable renderings of a dataset: one row per synthetic example
//! with de-normalized features and its label or action. Features outside
//! the row's own block (zero padding in merged datasets) print as `pad`
//! in text and as empty cells in CSV.

use std::fmt::Write as _;

use super::{Actions, SyntheticDataset};

/// Aligned text table.
pub fn dump_text(ds: &SyntheticDataset) -> String {
    let mut out = String::new();
    let kind = match &ds.actions {
        Actions::Discrete { n_classes, .. } => format!("{n_classes} classes"),
        Actions::Continuous { low, .. } => format!("{}-d continuous actions", low.len()),
    };
    let _ = writeln!(
        out,
        "# dataset {}: {} rows, {} features, {kind}",
        ds.task,
        ds.n_rows(),
        ds.obs_dim()
    );
    if ds.blocks.len() > 1 {
        for b in &ds.blocks {
            let _ = writeln!(
                out,
                "# block {}: rows {}..{}, features {}..{}, actions {}..{}",
                b.task,
                b.row_offset,
                b.row_offset + b.rows,
                b.obs_offset,
                b.obs_offset + b.obs_dim,
                b.act_offset,
                b.act_offset + b.act_dim
            );
        }
    }
    let _ = write!(out, "{:>4}  {:<14}", "row", "action");
    for j in 0..ds.obs_dim() {
        let _ = write!(out, " {:>10}", format!("s{j}"));
    }
    out.push('\n');
    for r in 0..ds.n_rows() {
        let _ = write!(out, "{r:>4}  {:<14}", action_label(ds, r));
        let raw = ds.raw_row(r);
        let own = own_columns(ds, r);
        for (j, v) in raw.iter().enumerate() {
            if own.contains(&j) {
                let _ = write!(out, " {v:>10.4}");
            } else {
                let _ = write!(out, " {:>10}", "pad");
            }
        }
        out.push('\n');
    }
    out
}

/// Tidy CSV: `row,block,action,s0..` with a schema comment line.
pub fn dump_csv(ds: &SyntheticDataset) -> String {
    let mut out = String::from("#schema=dataset-dump/1\n");
    out.push_str("row,block,action");
    for j in 0..ds.obs_dim() {
        let _ = write!(out, ",s{j}");
    }
    out.push('\n');
    for r in 0..ds.n_rows() {
        let block = ds.row_block(r).map(|b| b.task.as_str()).unwrap_or("");
        let action = action_label(ds, r).replace(' ', ";");
        let _ = write!(out, "{r},{block},{action}");
        let own = own_columns(ds, r);
        for (j, v) in ds.raw_row(r).iter().enumerate() {
            if own.contains(&j) {
                let _ = write!(out, ",{v}");
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

fn own_columns(ds: &SyntheticDataset, r: usize) -> std::ops::Range<usize> {
    match ds.row_block(r) {
        Some(b) => b.obs_offset..b.obs_offset + b.obs_dim,
        None => 0..ds.obs_dim(),
    }
}

fn action_label(ds: &SyntheticDataset, r: usize) -> String {
    match &ds.actions {
        Actions::Discrete { labels, .. } => {
            let l = labels[r];
            match ds.row_block(r) {
                Some(b) if ds.blocks.len() > 1 => format!("{} ({}:{})", l, b.task, l - b.act_offset),
                _ => named_action(&ds.task, l).map_or_else(|| l.to_string(), |n| format!("{l} ({n})")),
            }
        }
        Actions::Continuous { values, .. } => {
            let own = match ds.row_block(r) {
                Some(b) => b.act_offset..b.act_offset + b.act_dim,
                None => 0..values.cols(),
            };
            values.row(r)[own]
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

fn named_action(task: &str, label: usize) -> Option<&'static str> {
    match (task, label) {
        ("cartpole", 0) => Some("left"),
        ("cartpole", 1) => Some("right"),
        ("acrobot", 0) => Some("-1"),
        ("acrobot", 1) => Some("0"),
        ("acrobot", 2) => Some("+1"),
        ("gridbreakout", 0) => Some("noop"),
        ("gridbreakout", 1) => Some("left"),
        ("gridbreakout", 2) => Some("right"),
        _ => None,
    }
}
