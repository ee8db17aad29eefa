//! Renders run artifacts as an aligned table, TSV or JSON.

use std::fmt::Write;

use clap::ValueEnum;

use crate::commands::RunArtifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
    Tsv,
}

struct Block {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn metric_block(a: &RunArtifacts, precise: bool) -> Block {
    let num = |x: f64| if precise { x.to_string() } else { format!("{x:.4}") };
    let m = &a.evaluation.metrics;
    let mut rows = Vec::new();
    for (k, c) in &m.at {
        rows.push(vec![format!("HR@{k}"), num(c.hr)]);
    }
    for (k, c) in &m.at {
        rows.push(vec![format!("NDCG@{k}"), num(c.ndcg)]);
    }
    for (k, g) in &m.green_share {
        rows.push(vec![format!("green_share@{k}"), num(*g)]);
    }
    if let Some(gt) = &m.green_target {
        rows.push(vec!["green_target_sessions".into(), gt.n_sessions.to_string()]);
        for (k, c) in &gt.at {
            rows.push(vec![format!("green_target HR@{k}"), num(c.hr)]);
            rows.push(vec![format!("green_target NDCG@{k}"), num(c.ndcg)]);
        }
    }
    rows.push(vec!["sessions".into(), m.n_sessions.to_string()]);
    rows.push(vec!["target_retention".into(), num(m.target_retention_rate)]);
    rows.push(vec!["failure_rate".into(), num(m.failure_rate)]);
    rows.push(vec!["repair_rate".into(), num(m.repair_rate)]);
    if let Some(r) = &a.retention {
        for s in &r.splits {
            rows.push(vec![format!("filter_retention[{}]", s.split), num(s.rate)]);
        }
    }
    rows.push(vec!["prompt_id".into(), a.evaluation.prompt.id.to_string()]);
    Block {
        header: vec!["metric".into(), "value".into()],
        rows,
    }
}

fn prompt_block(a: &RunArtifacts, precise: bool) -> Option<Block> {
    let result = a.optimization.as_ref()?;
    let rows = result
        .pool
        .iter()
        .map(|p| {
            let best = if p.id == result.best_prompt.id { "*" } else { "" };
            vec![
                format!("{}{best}", p.id),
                format!("{:?}", p.origin).to_lowercase(),
                p.parent.map_or("-".into(), |x| x.to_string()),
                p.pull_count.to_string(),
                p.mean_reward
                    .map_or("-".into(), |x| if precise { x.to_string() } else { format!("{x:.4}") }),
                if p.active { "yes" } else { "no" }.into(),
            ]
        })
        .collect();
    Some(Block {
        header: ["prompt", "origin", "parent", "pulls", "mean_reward", "active"]
            .map(String::from)
            .to_vec(),
        rows,
    })
}

fn aligned(block: &Block, out: &mut String) {
    let cols = block.header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            std::iter::once(&block.header)
                .chain(&block.rows)
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&block.header, out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in &block.rows {
        line(r, out);
    }
}

fn tsv(block: &Block, out: &mut String) {
    let _ = writeln!(out, "{}", block.header.join("\t"));
    for r in &block.rows {
        let _ = writeln!(out, "{}", r.join("\t"));
    }
}

pub fn render(a: &RunArtifacts, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Json => {
            out = serde_json::to_string_pretty(a).expect("artifacts serialize");
            out.push('\n');
        }
        Format::Table | Format::Tsv => {
            let precise = format == Format::Tsv;
            let write = if precise { tsv } else { aligned };
            write(&metric_block(a, precise), &mut out);
            if let Some(p) = prompt_block(a, precise) {
                out.push('\n');
                write(&p, &mut out);
            }
        }
    }
    out
}
