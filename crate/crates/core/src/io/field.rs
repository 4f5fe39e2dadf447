use std::fmt::Write as _;

use super::{field_of, float_list, fmt_f, header_line, join, parse_f, parse_header, parse_u};
use crate::error::{Error, Result};
use crate::pde::{BoundaryMode, DecouplingField, FieldMeta, TimeSpaceGrid};

pub const FIELD_MAGIC: &str = "wfbsde-field";
const VERSION: &str = "1";

/// Layout:
///
/// ```text
/// wfbsde-field version=1
/// grid t_end=1e0 n_t=200 lo=-4e0 hi=4e0 n_x=400
/// meta picard_iters_used=3 residual_sup=1e-12 damping_reduced=false boundary=extended
/// k i u du
/// 0 0 <u> <du>
/// ...
/// ```
///
/// Two-dimensional fields use columns `k i j u du0 du1`. Rows are time-major
/// with axis 0 fastest.
pub fn encode_field(field: &DecouplingField) -> String {
    let g = &field.grid;
    let d = g.dim();
    let nodes = g.node_count();
    let mut out = header_line(FIELD_MAGIC, &[("version", VERSION.into())]);
    out += &header_line(
        "grid",
        &[
            ("t_end", fmt_f(g.t_end)),
            ("n_t", g.n_t.to_string()),
            ("lo", join(&g.lo.iter().map(|&v| fmt_f(v)).collect::<Vec<_>>())),
            ("hi", join(&g.hi.iter().map(|&v| fmt_f(v)).collect::<Vec<_>>())),
            ("n_x", join(&g.n_x)),
        ],
    );
    let m = &field.meta;
    out += &header_line(
        "meta",
        &[
            ("picard_iters_used", m.picard_iters_used.to_string()),
            ("residual_sup", fmt_f(m.residual_sup)),
            ("damping_reduced", m.damping_reduced.to_string()),
            ("boundary", boundary_name(m.boundary).into()),
        ],
    );
    out += if d == 1 { "k i u du\n" } else { "k i j u du0 du1\n" };
    let (u, du) = (field.values(), field.gradients());
    for k in 0..=g.n_t {
        for idx in 0..nodes {
            let flat = k * nodes + idx;
            let ix = g.unflatten(idx);
            let _ = write!(out, "{k}");
            for a in ix.iter().take(d) {
                let _ = write!(out, " {a}");
            }
            let _ = write!(out, " {}", fmt_f(u[flat]));
            for a in 0..d {
                let _ = write!(out, " {}", fmt_f(du[flat * d + a]));
            }
            out.push('\n');
        }
    }
    out
}

fn boundary_name(b: BoundaryMode) -> &'static str {
    match b {
        BoundaryMode::Extended => "extended",
        BoundaryMode::Cutoff => "cutoff",
    }
}

pub fn decode_field(text: &str) -> Result<DecouplingField> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(0, format!("missing {what}")));

    let (n, l) = next("magic line")?;
    let magic = parse_header(n, l, FIELD_MAGIC)?;
    if magic.get("version").map(String::as_str) != Some(VERSION) {
        return Err(Error::parse(n, "unsupported field version"));
    }

    let (n, l) = next("grid header")?;
    let h = parse_header(n, l, "grid")?;
    let n_x: Vec<usize> = h
        .get("n_x")
        .ok_or_else(|| Error::parse(n, "missing `n_x`"))?
        .split(',')
        .map(|v| v.parse().map_err(|_| Error::parse(n, "bad `n_x`")))
        .collect::<Result<_>>()?;
    let grid = TimeSpaceGrid::new(
        field_of(&h, n, "t_end")?,
        field_of(&h, n, "n_t")?,
        float_list(&h, n, "lo")?,
        float_list(&h, n, "hi")?,
        n_x,
    )
    .map_err(|e| Error::parse(n, e.to_string()))?;
    let d = grid.dim();
    let nodes = grid.n_x.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    let total =
        nodes.and_then(|m| m.checked_mul(grid.n_t.checked_add(1)?)).ok_or_else(|| Error::parse(n, "grid too large"))?;
    let nodes = nodes.unwrap_or(0);

    let (n, l) = next("meta header")?;
    let h = parse_header(n, l, "meta")?;
    let boundary = match h.get("boundary").map(String::as_str) {
        Some("extended") => BoundaryMode::Extended,
        Some("cutoff") => BoundaryMode::Cutoff,
        _ => return Err(Error::parse(n, "boundary must be `extended` or `cutoff`")),
    };
    let meta = FieldMeta {
        picard_iters_used: field_of(&h, n, "picard_iters_used")?,
        residual_sup: field_of(&h, n, "residual_sup")?,
        damping_reduced: field_of(&h, n, "damping_reduced")?,
        boundary,
    };

    let (n, l) = next("column header")?;
    let expect = if d == 1 { "k i u du" } else { "k i j u du0 du1" };
    if l.split_whitespace().collect::<Vec<_>>().join(" ") != expect {
        return Err(Error::parse(n, format!("expected columns `{expect}`")));
    }

    let cap = total.min(1 << 20);
    let mut u = Vec::with_capacity(cap);
    let mut du = Vec::with_capacity(cap * d);
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let row = u.len();
        if row >= total {
            return Err(Error::parse(n, "more rows than the grid holds"));
        }
        let mut cols = l.split_whitespace();
        let (k, idx) = (row / nodes, row % nodes);
        let ix = grid.unflatten(idx);
        if parse_u(n, cols.next())? != k {
            return Err(Error::parse(n, format!("expected time index {k}")));
        }
        for (a, &want) in ix.iter().take(d).enumerate() {
            if parse_u(n, cols.next())? != want {
                return Err(Error::parse(n, format!("expected index {want} on axis {a}")));
            }
        }
        u.push(parse_f(n, cols.next())?);
        for _ in 0..d {
            du.push(parse_f(n, cols.next())?);
        }
        if cols.next().is_some() {
            return Err(Error::parse(n, "trailing columns"));
        }
    }
    if u.len() != total {
        return Err(Error::parse(0, format!("expected {total} rows, found {}", u.len())));
    }
    Ok(DecouplingField::from_parts(grid, u, du, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(d: usize) -> DecouplingField {
        let grid = if d == 1 {
            TimeSpaceGrid::uniform(0.5, 3, 5, -1.0, 2.0).unwrap()
        } else {
            TimeSpaceGrid::new(1.0, 2, vec![-1.0, 0.0], vec![1.0, 3.0], vec![3, 4]).unwrap()
        };
        let n = (grid.n_t + 1) * grid.node_count();
        let u = (0..n).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let meta = FieldMeta {
            picard_iters_used: 4,
            residual_sup: 1.5e-13,
            damping_reduced: true,
            boundary: BoundaryMode::Cutoff,
        };
        DecouplingField::from_values(grid, u, meta)
    }

    #[test]
    fn round_trip_is_exact() {
        for d in [1, 2] {
            let f = sample(d);
            let text = encode_field(&f);
            assert_eq!(decode_field(&text).unwrap(), f);
            assert_eq!(encode_field(&decode_field(&text).unwrap()), text);
        }
    }

    #[test]
    fn rejects_truncation_and_reordering() {
        let text = encode_field(&sample(1));
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(decode_field(&cut).is_err());
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(5, 6);
        assert!(decode_field(&lines.join("\n")).is_err());
        assert!(decode_field("").is_err());
    }
}
