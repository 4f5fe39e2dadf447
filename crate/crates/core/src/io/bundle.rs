use std::fmt::Write as _;
use std::io;

use super::{field_of, fmt_f, header_line, parse_f, parse_header, parse_u};
use crate::error::{Error, Result};
use crate::simulate::{PathBundle, TimeGrid};

pub const BUNDLE_MAGIC: &str = "wfbsde-bundle";
const VERSION: &str = "1";

/// Layout:
///
/// ```text
/// wfbsde-bundle version=1
/// grid t_end=1e0 n_steps=100 dim=1 seed=7 n_paths=1000 exit_fraction=0e0
/// warning <text>            (zero or more)
/// path step t B X Y Z N weight
/// 0 0 0e0 0e0 ...
/// ```
///
/// `B` is the running sum of the Brownian increments; vector columns are
/// split as `B0 B1 X0 X1 Z0 Z1` when `dim = 2`. `weight` is the per-path
/// Girsanov weight (`1` when the bundle is unweighted) repeated on each row.
pub fn encode_bundle(b: &PathBundle) -> String {
    let mut buf = Vec::new();
    write_bundle(b, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Streaming form of [`encode_bundle`], one path at a time.
pub fn write_bundle<W: io::Write>(b: &PathBundle, w: &mut W) -> io::Result<()> {
    let d = b.dim;
    let mut out = header_line(BUNDLE_MAGIC, &[("version", VERSION.into())]);
    out += &header_line(
        "grid",
        &[
            ("t_end", fmt_f(b.grid.t_end)),
            ("n_steps", b.grid.n_steps.to_string()),
            ("dim", d.to_string()),
            ("seed", b.seed.to_string()),
            ("n_paths", b.n_paths.to_string()),
            ("exit_fraction", fmt_f(b.exit_fraction)),
            ("weighted", b.weights.is_some().to_string()),
        ],
    );
    for w in &b.warnings {
        let _ = writeln!(out, "warning {}", w.replace('\n', " "));
    }
    out += &columns(d);
    out.push('\n');
    w.write_all(out.as_bytes())?;
    let mut cum = vec![0.0; d];
    for p in 0..b.n_paths {
        out.clear();
        cum.iter_mut().for_each(|c| *c = 0.0);
        let weight = b.weights.as_ref().map_or(1.0, |w| w[p]);
        for k in 0..b.nodes() {
            if k > 0 {
                for (c, db) in cum.iter_mut().zip(b.increment(p, k - 1)) {
                    *c += db;
                }
            }
            let _ = write!(out, "{p} {k} {}", fmt_f(b.grid.time(k)));
            for v in cum.iter().chain(b.x_at(p, k)) {
                let _ = write!(out, " {}", fmt_f(*v));
            }
            let _ = write!(out, " {}", fmt_f(b.y_at(p, k)));
            for v in b.z_at(p, k) {
                let _ = write!(out, " {}", fmt_f(*v));
            }
            let _ = writeln!(out, " {} {}", fmt_f(b.residual_at(p, k)), fmt_f(weight));
        }
        w.write_all(out.as_bytes())?;
    }
    Ok(())
}

fn columns(d: usize) -> String {
    if d == 1 {
        return "path step t B X Y Z N weight".into();
    }
    let v = |s: &str| (0..d).map(|i| format!("{s}{i}")).collect::<Vec<_>>().join(" ");
    format!("path step t {} {} Y {} N weight", v("B"), v("X"), v("Z"))
}

/// Inverse of [`encode_bundle`]. Increments are recovered as differences of
/// `B`, so they agree with the originals up to rounding of the running sum.
pub fn decode_bundle(text: &str) -> Result<PathBundle> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let (n, l) = lines.next().ok_or_else(|| Error::parse(0, "empty bundle"))?;
    let magic = parse_header(n, l, BUNDLE_MAGIC)?;
    if magic.get("version").map(String::as_str) != Some(VERSION) {
        return Err(Error::parse(n, "unsupported bundle version"));
    }
    let (n, l) = lines.next().ok_or_else(|| Error::parse(n, "missing grid header"))?;
    let h = parse_header(n, l, "grid")?;
    let grid = TimeGrid::new(field_of(&h, n, "t_end")?, field_of(&h, n, "n_steps")?)
        .map_err(|e| Error::parse(n, e.to_string()))?;
    let dim: usize = field_of(&h, n, "dim")?;
    if !(1..=2).contains(&dim) {
        return Err(Error::parse(n, "dim must be 1 or 2"));
    }
    let seed: u64 = field_of(&h, n, "seed")?;
    let n_paths: usize = field_of(&h, n, "n_paths")?;
    let exit_fraction: f64 = field_of(&h, n, "exit_fraction")?;
    let weighted: bool = field_of(&h, n, "weighted")?;
    let nodes = grid.n_steps.checked_add(1).ok_or_else(|| Error::parse(n, "too many steps"))?;
    let rows = n_paths.checked_mul(nodes).ok_or_else(|| Error::parse(n, "bundle too large"))?;

    let mut warnings = Vec::new();
    while let Some((_, l)) = lines.peek() {
        match l.strip_prefix("warning ") {
            Some(w) => {
                warnings.push(w.to_string());
                lines.next();
            }
            None => break,
        }
    }
    let (n, l) = lines.next().ok_or_else(|| Error::parse(0, "missing column header"))?;
    if l.split_whitespace().collect::<Vec<_>>().join(" ") != columns(dim) {
        return Err(Error::parse(n, format!("expected columns `{}`", columns(dim))));
    }

    let cap = rows.min(1 << 20);
    let mut x = Vec::with_capacity(cap * dim);
    let mut y = Vec::with_capacity(cap);
    let mut z = Vec::with_capacity(cap * dim);
    let mut residual = Vec::with_capacity(cap);
    let mut increments = Vec::with_capacity(cap * dim);
    let mut weights = Vec::with_capacity(n_paths.min(1 << 20));
    let mut prev_b = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut row = 0usize;
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        if row >= rows {
            return Err(Error::parse(n, "more rows than the header declares"));
        }
        let (p, k) = (row / nodes, row % nodes);
        let mut cols = l.split_whitespace();
        if parse_u(n, cols.next())? != p || parse_u(n, cols.next())? != k {
            return Err(Error::parse(n, format!("expected path {p} step {k}")));
        }
        let t = parse_f(n, cols.next())?;
        if t != grid.time(k) {
            return Err(Error::parse(n, format!("time {t} does not match step {k}")));
        }
        for v in b.iter_mut() {
            *v = parse_f(n, cols.next())?;
        }
        if k == 0 {
            if b.iter().any(|&v| v != 0.0) {
                return Err(Error::parse(n, "B must start at 0"));
            }
        } else {
            increments.extend(b.iter().zip(&prev_b).map(|(a, c)| a - c));
        }
        prev_b.copy_from_slice(&b);
        for _ in 0..dim {
            x.push(parse_f(n, cols.next())?);
        }
        y.push(parse_f(n, cols.next())?);
        for _ in 0..dim {
            z.push(parse_f(n, cols.next())?);
        }
        residual.push(parse_f(n, cols.next())?);
        let w = parse_f(n, cols.next())?;
        if k == 0 {
            weights.push(w);
        } else if weights.last() != Some(&w) {
            return Err(Error::parse(n, "weight changes along a path"));
        }
        if cols.next().is_some() {
            return Err(Error::parse(n, "trailing columns"));
        }
        row += 1;
    }
    if row != rows {
        return Err(Error::parse(0, format!("expected {rows} rows, found {row}")));
    }
    if !weighted && weights.iter().any(|&w| w != 1.0) {
        return Err(Error::parse(0, "unweighted bundle carries weights other than 1"));
    }
    Ok(PathBundle {
        grid,
        dim,
        n_paths,
        seed,
        increments,
        x,
        y,
        z,
        residual,
        weights: weighted.then_some(weights),
        exit_fraction,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{problem, Params};
    use crate::simulate::euler_forward;

    #[test]
    fn round_trip_preserves_nodes() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let mut b = euler_forward(&c, None, &[0.2], &grid, 5, 11).unwrap();
        b.warnings.push("test warning".into());
        let text = encode_bundle(&b);
        let back = decode_bundle(&text).unwrap();
        assert_eq!((back.x.clone(), back.y.clone(), back.z.clone()), (b.x.clone(), b.y.clone(), b.z.clone()));
        assert_eq!(back.warnings, b.warnings);
        for (a, c) in back.increments.iter().zip(&b.increments) {
            assert!((a - c).abs() < 1e-14);
        }
        assert_eq!(encode_bundle(&back), text);
    }

    #[test]
    fn weights_and_errors() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let b = euler_forward(&c, None, &[0.0], &TimeGrid::new(1.0, 2).unwrap(), 2, 1)
            .unwrap()
            .with_weights(vec![0.5, 1.5])
            .unwrap();
        let back = decode_bundle(&encode_bundle(&b)).unwrap();
        assert_eq!(back.weights, Some(vec![0.5, 1.5]));
        let text = encode_bundle(&b).replacen("n_paths=2", "n_paths=3", 1);
        assert!(decode_bundle(&text).is_err());
        assert!(decode_bundle("wfbsde-bundle version=1\n").is_err());
    }
}
