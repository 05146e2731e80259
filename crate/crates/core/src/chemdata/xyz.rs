use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{number_to_symbol, symbol_to_number, Cluster, ClusterSet};
use crate::error::{Error, Result};

/// Parses multi-frame extended XYZ.
///
/// Frame layout: atom count, a comment line of `key=value` pairs, then one
/// `Symbol x y z [fx fy fz]` row per atom. `energy` is optional here; use
/// [`parse_xyz_strict`] when every frame must carry one.
pub fn parse_xyz(text: &str) -> Result<ClusterSet> {
    parse(text, false)
}

/// Like [`parse_xyz`] but a frame without an `energy` key is an error.
pub fn parse_xyz_strict(text: &str) -> Result<ClusterSet> {
    parse(text, true)
}

fn parse(text: &str, require_energy: bool) -> Result<ClusterSet> {
    let lines: Vec<&str> = text.lines().collect();
    let mut clusters = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| Error::parse(count_line, format!("expected atom count, found `{}`", lines[i].trim())))?;
        if n == 0 {
            return Err(Error::parse(count_line, "frame with zero atoms"));
        }
        let comment = lines
            .get(i + 1)
            .ok_or_else(|| Error::parse(count_line + 1, "missing comment line"))?;
        let mut tags = parse_comment(comment).map_err(|m| Error::parse(count_line + 1, m))?;
        let energy = match tags.remove("energy") {
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::parse(count_line + 1, format!("non-numeric energy `{v}`")))?,
            ),
            None if require_energy => return Err(Error::parse(count_line + 1, "missing `energy` key")),
            None => None,
        };

        let mut numbers = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut forces = Vec::with_capacity(n);
        let mut ncols = None;
        for k in 0..n {
            let lineno = i + 3 + k;
            let row = lines.get(i + 2 + k).map(|l| l.trim()).unwrap_or("");
            let fields: Vec<&str> = row.split_whitespace().collect();
            // a short frame runs into the next count line, which has one field
            if fields.len() != 4 && fields.len() != 7 {
                return Err(Error::parse(
                    lineno,
                    format!("frame declares {n} atoms but atom row {} is malformed: `{row}`", k + 1),
                ));
            }
            if *ncols.get_or_insert(fields.len()) != fields.len() {
                return Err(Error::parse(lineno, "inconsistent column count within frame"));
            }
            let z = symbol_to_number(fields[0]).ok_or_else(|| Error::parse(lineno, format!("unknown element `{}`", fields[0])))?;
            let mut vals = [0.0f64; 6];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|_| Error::parse(lineno, format!("non-numeric field `{f}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(lineno, format!("non-finite field `{f}`")));
                }
            }
            numbers.push(z);
            positions.push([vals[0], vals[1], vals[2]]);
            if fields.len() == 7 {
                forces.push([vals[3], vals[4], vals[5]]);
            }
        }
        clusters.push(Cluster {
            atomic_numbers: numbers,
            positions,
            energy,
            forces: (ncols == Some(7)).then_some(forces),
            tags,
        });
        i += 2 + n;
    }
    Ok(ClusterSet::new(clusters))
}

fn parse_comment(line: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut chars = line.trim().chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let key: String = chars.by_ref().take_while(|&c| c != '=').collect();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("malformed key=value pair near `{key}`"));
        }
        let value: String = if chars.peek() == Some(&'"') {
            chars.next();
            let v: String = chars.by_ref().take_while(|&c| c != '"').collect();
            v
        } else {
            chars.by_ref().take_while(|c| !c.is_whitespace()).collect()
        };
        out.insert(key, value);
    }
    Ok(out)
}

/// Serializes a set to extended XYZ. Every cluster must carry an energy.
pub fn write_xyz(set: &ClusterSet) -> Result<String> {
    if set.is_empty() {
        return Err(Error::Serialize("empty cluster set".into()));
    }
    let mut out = String::new();
    for (idx, c) in set.clusters.iter().enumerate() {
        let e = c
            .energy
            .ok_or_else(|| Error::Serialize(format!("cluster {idx} has no energy")))?;
        write_frame(&mut out, c, &format!("energy={e}"))?;
    }
    Ok(out)
}

pub(crate) fn write_frame(out: &mut String, c: &Cluster, lead: &str) -> Result<()> {
    c.validate()?;
    let _ = writeln!(out, "{}", c.n_atoms());
    out.push_str(lead);
    for (k, v) in &c.tags {
        if v.contains(char::is_whitespace) {
            let _ = write!(out, " {k}=\"{v}\"");
        } else {
            let _ = write!(out, " {k}={v}");
        }
    }
    out.push('\n');
    for (a, (&z, p)) in c.atomic_numbers.iter().zip(&c.positions).enumerate() {
        let sym = number_to_symbol(z).ok_or(Error::UnknownElement(z))?;
        let _ = write!(out, "{sym} {} {} {}", p[0], p[1], p[2]);
        if let Some(f) = &c.forces {
            let f = f[a];
            let _ = write!(out, " {} {} {}", f[0], f[1], f[2]);
        }
        out.push('\n');
    }
    Ok(())
}

pub fn read_xyz_file(path: impl AsRef<Path>) -> Result<ClusterSet> {
    parse_xyz(&std::fs::read_to_string(path)?)
}

pub fn write_xyz_file(path: impl AsRef<Path>, set: &ClusterSet) -> Result<()> {
    std::fs::write(path, write_xyz(set)?)?;
    Ok(())
}
