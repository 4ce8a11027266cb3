use std::ops::RangeInclusive;
use std::path::PathBuf;

use clap::Args;
use kaa_core::mrd::{bound_lt, bound_mlp};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::report::Report;

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    /// A single `d` or an inclusive range such as `2..4`.
    #[arg(long, value_parser = parse_range)]
    #[serde(serialize_with = "range_text")]
    pub d: RangeInclusive<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn range_text<S: serde::Serializer>(r: &RangeInclusive<usize>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}..{}", r.start(), r.end()))
}

pub fn parse_range(text: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{t}` is not a non-negative integer"))
    };
    let (lo, hi) = match text.split_once("..") {
        Some((lo, hi)) => (num(lo)?, num(hi.trim_start_matches('='))?),
        None => {
            let d = num(text)?;
            (d, d)
        }
    };
    if lo < 2 || lo > hi {
        return Err(format!("range `{text}` must satisfy 2 <= start <= end"));
    }
    Ok(lo..=hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsRow {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub bound_lt: f64,
    pub mlp_lower: f64,
    pub mlp_upper: f64,
}

pub fn rows(ds: RangeInclusive<usize>) -> CliResult<Vec<BoundsRow>> {
    ds.map(|d| {
        let n = d
            .checked_mul(d)
            .ok_or_else(|| CliError::Usage(format!("d = {d} is too large")))?;
        let mlp = bound_mlp(n, d)?;
        Ok(BoundsRow {
            d,
            n,
            bound_lt: bound_lt(n, d)?,
            mlp_lower: mlp.lower,
            mlp_upper: mlp.upper,
        })
    })
    .collect()
}

pub fn run(args: &BoundsArgs) -> CliResult<()> {
    let table = rows(args.d.clone())?;
    println!(
        "{:>4} {:>6} {:>14} {:>14} {:>14}",
        "d", "N", "bound_lt", "mlp_lower", "mlp_upper"
    );
    for r in &table {
        println!(
            "{:>4} {:>6} {:>14.5} {:>14.5} {:>14.5}",
            r.d, r.n, r.bound_lt, r.mlp_lower, r.mlp_upper
        );
    }
    if let Some(out) = &args.out {
        Report::new("bounds", args, &table).write(out, "bounds.json")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("2..4").unwrap(), 2..=4);
        assert_eq!(parse_range("2..=4").unwrap(), 2..=4);
        assert_eq!(parse_range("3").unwrap(), 3..=3);
        for bad in ["1..3", "4..2", "a..3", "", "2..x"] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn d2_row() {
        let r = &rows(2..=2).unwrap()[0];
        assert_eq!(r.n, 4);
        assert!((r.bound_lt - 5f64.sqrt()).abs() < 1e-12);
        assert!((r.mlp_lower - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.mlp_upper, r.bound_lt);
    }
}
