//! Plain-text model checkpoints. Every float is written in its shortest
//! round-trip decimal form, so `read(write(m)) == m` exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::gru::GruCell;
use super::model::{Normalizer, SrpModel, FEATURES};
use crate::error::SrpError;

const MAGIC: &str = "srp-checkpoint 1";

fn write_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

fn write_matrix(out: &mut String, name: &str, m: &Array2<f64>) {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
    for row in m.rows() {
        write_row(out, row.iter().copied());
    }
}

fn write_vector(out: &mut String, name: &str, v: &Array1<f64>) {
    writeln!(out, "{name} {}", v.len()).unwrap();
    write_row(out, v.iter().copied());
}

pub fn write_checkpoint(model: &SrpModel) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "hidden {}", model.hidden_size()).unwrap();
    writeln!(out, "features {FEATURES}").unwrap();
    writeln!(out, "seq_len {}", model.seq_len).unwrap();
    writeln!(out, "horizon {}", model.horizon).unwrap();
    out.push_str("normalizer_lo ");
    write_row(&mut out, model.normalizer.lo);
    out.push_str("normalizer_hi ");
    write_row(&mut out, model.normalizer.hi);
    for (prefix, cell) in [("encoder", &model.encoder), ("decoder", &model.decoder)] {
        for (name, m) in [
            ("w_z", &cell.w_z),
            ("w_r", &cell.w_r),
            ("w_h", &cell.w_h),
            ("u_z", &cell.u_z),
            ("u_r", &cell.u_r),
            ("u_h", &cell.u_h),
        ] {
            write_matrix(&mut out, &format!("{prefix}.{name}"), m);
        }
        for (name, v) in [("b_z", &cell.b_z), ("b_r", &cell.b_r), ("b_h", &cell.b_h)] {
            write_vector(&mut out, &format!("{prefix}.{name}"), v);
        }
    }
    write_matrix(&mut out, "proj.w", &model.proj_w);
    write_vector(&mut out, "proj.b", &model.proj_b);
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str), SrpError> {
        loop {
            match self.inner.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.trim())),
                None => return Err(SrpError::Checkpoint("unexpected end of file".into())),
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>, SrpError> {
        let (n, line) = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(SrpError::Checkpoint(format!("line {n}: expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn floats(&mut self, expect: usize) -> Result<Vec<f64>, SrpError> {
        let (n, line) = self.next()?;
        parse_floats(n, line.split_whitespace(), expect)
    }
}

fn parse_floats<'a>(
    line: usize,
    parts: impl Iterator<Item = &'a str>,
    expect: usize,
) -> Result<Vec<f64>, SrpError> {
    let v: Vec<f64> = parts
        .map(|p| {
            p.parse::<f64>()
                .map_err(|e| SrpError::Checkpoint(format!("line {line}: {p}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if v.len() != expect {
        return Err(SrpError::Checkpoint(format!(
            "line {line}: expected {expect} values, found {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SrpError::Checkpoint(format!("line {line}: non-finite value")));
    }
    Ok(v)
}

fn usize_field(parts: &[&str], key: &str) -> Result<usize, SrpError> {
    parts
        .first()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| SrpError::Checkpoint(format!("`{key}` needs an integer")))
}

fn read_matrix(lines: &mut Lines, name: &str, shape: (usize, usize)) -> Result<Array2<f64>, SrpError> {
    let head = lines.keyed(name)?;
    let dims = (usize_field(&head, name)?, usize_field(&head[1..], name)?);
    if dims != shape {
        return Err(SrpError::Checkpoint(format!(
            "{name}: shape {dims:?}, expected {shape:?}"
        )));
    }
    let mut data = Vec::with_capacity(shape.0 * shape.1);
    for _ in 0..shape.0 {
        data.extend(lines.floats(shape.1)?);
    }
    Ok(Array2::from_shape_vec(shape, data).expect("shape checked"))
}

fn read_vector(lines: &mut Lines, name: &str, len: usize) -> Result<Array1<f64>, SrpError> {
    let head = lines.keyed(name)?;
    if usize_field(&head, name)? != len {
        return Err(SrpError::Checkpoint(format!("{name}: expected length {len}")));
    }
    Ok(Array1::from(lines.floats(len)?))
}

pub fn read_checkpoint(text: &str) -> Result<SrpModel, SrpError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, magic) = lines.next()?;
    if magic != MAGIC {
        return Err(SrpError::Checkpoint(format!("not a checkpoint: `{magic}`")));
    }
    let hidden = usize_field(&lines.keyed("hidden")?, "hidden")?;
    let features = usize_field(&lines.keyed("features")?, "features")?;
    if features != FEATURES {
        return Err(SrpError::Checkpoint(format!(
            "checkpoint has {features} features, expected {FEATURES}"
        )));
    }
    let seq_len = usize_field(&lines.keyed("seq_len")?, "seq_len")?;
    let horizon = usize_field(&lines.keyed("horizon")?, "horizon")?;
    let lo = parse_floats(0, lines.keyed("normalizer_lo")?.into_iter(), FEATURES)?;
    let hi = parse_floats(0, lines.keyed("normalizer_hi")?.into_iter(), FEATURES)?;
    let normalizer = Normalizer {
        lo: lo.try_into().unwrap(),
        hi: hi.try_into().unwrap(),
    };
    let mut cells = Vec::new();
    for prefix in ["encoder", "decoder"] {
        let mut c = GruCell::zeros(hidden, FEATURES);
        c.w_z = read_matrix(&mut lines, &format!("{prefix}.w_z"), (hidden, FEATURES))?;
        c.w_r = read_matrix(&mut lines, &format!("{prefix}.w_r"), (hidden, FEATURES))?;
        c.w_h = read_matrix(&mut lines, &format!("{prefix}.w_h"), (hidden, FEATURES))?;
        c.u_z = read_matrix(&mut lines, &format!("{prefix}.u_z"), (hidden, hidden))?;
        c.u_r = read_matrix(&mut lines, &format!("{prefix}.u_r"), (hidden, hidden))?;
        c.u_h = read_matrix(&mut lines, &format!("{prefix}.u_h"), (hidden, hidden))?;
        c.b_z = read_vector(&mut lines, &format!("{prefix}.b_z"), hidden)?;
        c.b_r = read_vector(&mut lines, &format!("{prefix}.b_r"), hidden)?;
        c.b_h = read_vector(&mut lines, &format!("{prefix}.b_h"), hidden)?;
        cells.push(c);
    }
    let proj_w = read_matrix(&mut lines, "proj.w", (FEATURES, hidden))?;
    let proj_b = read_vector(&mut lines, "proj.b", FEATURES)?;
    let decoder = cells.pop().unwrap();
    let encoder = cells.pop().unwrap();
    let model = SrpModel {
        encoder,
        decoder,
        proj_w,
        proj_b,
        seq_len,
        horizon,
        normalizer,
    };
    model.check_shapes()?;
    Ok(model)
}

pub fn save_checkpoint(model: &SrpModel, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, write_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<SrpModel, SrpError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SrpError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = SrpModel::new(6, 5, 3, Normalizer::for_scenario(25.0, 2.5), 99).unwrap();
        let text = write_checkpoint(&m);
        let back = read_checkpoint(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_checkpoint(&back), text);
    }

    #[test]
    fn rejects_truncated_and_wrong_shapes() {
        let m = SrpModel::new(3, 2, 2, Normalizer::for_scenario(25.0, 2.5), 1).unwrap();
        let text = write_checkpoint(&m);
        let cut: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(&cut).is_err());
        let bad = text.replacen("encoder.w_z 3 5", "encoder.w_z 3 4", 1);
        assert!(read_checkpoint(&bad).is_err());
        assert!(read_checkpoint("hello").is_err());
    }
}
