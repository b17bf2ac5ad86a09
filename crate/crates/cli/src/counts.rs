//! Count arrays read by `msr stats`.
//!
//! Accepted layouts: a `k,f_k` table (header optional, counts taken from the
//! second column), or a plain list of counts on one row or one per line.

use anyhow::{bail, Context};

pub fn read_counts(raw: &str) -> anyhow::Result<Vec<u64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.context("reading CSV")?;
        let fields: Vec<String> = record.iter().map(str::to_string).filter(|f| !f.is_empty()).collect();
        if !fields.is_empty() {
            rows.push(fields);
        }
    }
    if rows.first().is_some_and(|r| r.iter().all(|f| f.parse::<f64>().is_err())) {
        rows.remove(0);
    }
    if rows.is_empty() {
        bail!("no counts found");
    }
    let parse = |f: &str| -> anyhow::Result<u64> { f.parse().with_context(|| format!("\"{f}\" is not a count")) };

    let two_columns = rows.len() > 1 && rows.iter().all(|r| r.len() == 2);
    let values: anyhow::Result<Vec<u64>> = if two_columns {
        rows.iter().map(|r| parse(&r[1])).collect()
    } else if rows.len() == 1 {
        rows[0].iter().map(|f| parse(f)).collect()
    } else if rows.iter().all(|r| r.len() == 1) {
        rows.iter().map(|r| parse(&r[0])).collect()
    } else {
        bail!("unrecognized count layout");
    };
    values
}
