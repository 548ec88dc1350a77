//! `--grid` syntax: `key=values;key=values`, where values are a comma list of
//! integers, powers `2^a`, or power ranges `2^a..2^b`.
//!
//! ```text
//! n=2^9..2^13;k=8;d=16;method=grover-sampled,brute
//! ```

use anyhow::{anyhow, bail, Context, Result};
use qattn_core::Method;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub d: Vec<usize>,
    pub methods: Vec<Method>,
}

fn parse_power(s: &str) -> Result<usize> {
    match s.split_once('^') {
        Some((base, exp)) => {
            let base: usize = base
                .trim()
                .parse()
                .with_context(|| format!("bad base in {s:?}"))?;
            let exp: u32 = exp
                .trim()
                .parse()
                .with_context(|| format!("bad exponent in {s:?}"))?;
            base.checked_pow(exp)
                .ok_or_else(|| anyhow!("{s} overflows"))
        }
        None => s
            .trim()
            .parse()
            .with_context(|| format!("bad integer {s:?}")),
    }
}

fn parse_counts(values: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in values.split(',') {
        match item.split_once("..") {
            Some((lo, hi)) if lo.contains('^') && hi.contains('^') => {
                let (base, lo_exp) = lo.split_once('^').unwrap();
                let (base_hi, hi_exp) = hi.split_once('^').unwrap();
                if base.trim() != base_hi.trim() {
                    bail!("power range {item:?} mixes bases");
                }
                let base: usize = base.trim().parse()?;
                let (a, b): (u32, u32) = (lo_exp.trim().parse()?, hi_exp.trim().parse()?);
                for e in a..=b {
                    out.push(
                        base.checked_pow(e)
                            .ok_or_else(|| anyhow!("{base}^{e} overflows"))?,
                    );
                }
            }
            Some((lo, hi)) => {
                let (a, b) = (parse_power(lo)?, parse_power(hi)?);
                out.extend(a..=b);
            }
            None => out.push(parse_power(item)?),
        }
    }
    Ok(out)
}

impl Grid {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = Grid {
            n: vec![],
            k: vec![8],
            d: vec![16],
            methods: vec![],
        };
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| anyhow!("grid entry {part:?} is not key=values"))?;
            match key.trim() {
                "n" => grid.n = parse_counts(values)?,
                "k" => grid.k = parse_counts(values)?,
                "d" => grid.d = parse_counts(values)?,
                "method" | "methods" => {
                    grid.methods = values
                        .split(',')
                        .map(|m| m.trim().parse::<Method>().map_err(anyhow::Error::from))
                        .collect::<Result<_>>()?
                }
                other => bail!("unknown grid key {other:?}"),
            }
        }
        if grid.n.is_empty() {
            bail!("grid needs at least one n");
        }
        if grid.methods.is_empty() {
            bail!("grid needs at least one method");
        }
        Ok(grid)
    }
}
