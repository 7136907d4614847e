//! CSV encodings. Values are written with 17 significant digits so that a
//! parse of the rendered text reproduces every bit.

use super::{BandEnergyTable, Spectrum, Trajectory};
use crate::error::{Error, Result};

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn render_matrix(index_col: &str, rows: usize, dim: usize, data: &[f64]) -> String {
    let mut out = String::with_capacity(rows * dim * 24 + 64);
    out.push_str(index_col);
    for j in 0..dim {
        out.push_str(&format!(",dim{j}"));
    }
    out.push('\n');
    for r in 0..rows {
        out.push_str(&r.to_string());
        for v in &data[r * dim..(r + 1) * dim] {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn render_trajectory_csv(traj: &Trajectory) -> String {
    render_matrix("t", traj.horizon(), traj.dim(), traj.values())
}

pub fn render_spectrum_csv(spec: &Spectrum) -> String {
    render_matrix("i", spec.horizon(), spec.dim(), spec.coeffs())
}

fn records(source: &str, text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_f64(source: &str, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(source, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(source, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_matrix(source: &str, text: &str, index_col: &str) -> Result<(usize, usize, Vec<f64>)> {
    let recs = records(source, text)?;
    let Some((hline, header)) = recs.first() else {
        return Err(Error::parse(source, 1, "empty file"));
    };
    if header.first().map(String::as_str) != Some(index_col) {
        return Err(Error::parse(
            source,
            *hline,
            format!("header must start with {index_col:?}"),
        ));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(Error::parse(source, *hline, "no data columns"));
    }
    for (j, name) in header[1..].iter().enumerate() {
        if *name != format!("dim{j}") {
            return Err(Error::parse(
                source,
                *hline,
                format!("column {} should be dim{j}, found {name:?}", j + 1),
            ));
        }
    }
    let mut data = Vec::with_capacity((recs.len() - 1) * dim);
    for (row, (line, rec)) in recs[1..].iter().enumerate() {
        if rec.len() != dim + 1 {
            return Err(Error::parse(
                source,
                *line,
                format!("expected {} fields, found {}", dim + 1, rec.len()),
            ));
        }
        if rec[0] != row.to_string() {
            return Err(Error::parse(
                source,
                *line,
                format!("index {:?} out of sequence, expected {row}", rec[0]),
            ));
        }
        for field in &rec[1..] {
            data.push(parse_f64(source, *line, field)?);
        }
    }
    let rows = recs.len() - 1;
    if rows == 0 {
        return Err(Error::parse(source, *hline, "no data rows"));
    }
    Ok((rows, dim, data))
}

/// Parses the `t,dim0,...` trajectory encoding. `source` labels errors.
pub fn parse_trajectory_csv(source: &str, text: &str) -> Result<Trajectory> {
    let (n, d, data) = parse_matrix(source, text, "t")?;
    Trajectory::new(n, d, data)
}

/// Parses the `i,dim0,...` spectrum encoding.
pub fn parse_spectrum_csv(source: &str, text: &str) -> Result<Spectrum> {
    let (n, d, data) = parse_matrix(source, text, "i")?;
    Spectrum::new(n, d, data)
}

/// Header `dim,<lo>-<hi>,...` with edges in shortest round-trip form, then one
/// row per action dimension.
pub fn render_band_table_csv(table: &BandEnergyTable) -> String {
    let mut out = String::from("dim");
    for w in table.band_edges.windows(2) {
        out.push_str(&format!(",{}-{}", w[0], w[1]));
    }
    out.push('\n');
    for j in 0..table.dim {
        out.push_str(&j.to_string());
        for e in table.row(j) {
            out.push(',');
            out.push_str(&fmt_f64(*e));
        }
        out.push('\n');
    }
    out
}

pub fn parse_band_table_csv(source: &str, text: &str) -> Result<BandEnergyTable> {
    let recs = records(source, text)?;
    let Some((hline, header)) = recs.first() else {
        return Err(Error::parse(source, 1, "empty file"));
    };
    if header.first().map(String::as_str) != Some("dim") || header.len() < 2 {
        return Err(Error::parse(source, *hline, "header must be dim,<band>..."));
    }
    let mut edges = Vec::with_capacity(header.len());
    for (b, band) in header[1..].iter().enumerate() {
        let (lo, hi) = band
            .split_once('-')
            .ok_or_else(|| Error::parse(source, *hline, format!("bad band label {band:?}")))?;
        let lo = parse_f64(source, *hline, lo)?;
        let hi = parse_f64(source, *hline, hi)?;
        if b == 0 {
            edges.push(lo);
        } else if edges[b] != lo {
            return Err(Error::parse(source, *hline, "band labels are not contiguous"));
        }
        edges.push(hi);
    }
    BandEnergyTable::validate_edges(&edges)
        .map_err(|e| Error::parse(source, *hline, e.to_string()))?;
    let bands = edges.len() - 1;
    let mut energy = Vec::new();
    for (row, (line, rec)) in recs[1..].iter().enumerate() {
        if rec.len() != bands + 1 || rec[0] != row.to_string() {
            return Err(Error::parse(source, *line, "malformed band row"));
        }
        for field in &rec[1..] {
            energy.push(parse_f64(source, *line, field)?);
        }
    }
    Ok(BandEnergyTable {
        dim: recs.len() - 1,
        energy,
        band_edges: edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip_is_bit_exact() {
        let vals = vec![0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE, -0.0];
        let t = Trajectory::new(3, 2, vals).unwrap();
        let text = render_trajectory_csv(&t);
        assert!(text.starts_with("t,dim0,dim1\n"));
        let back = parse_trajectory_csv("x", &text).unwrap();
        for (a, b) in t.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn spectrum_header() {
        let s = Spectrum::new(1, 1, vec![2.0]).unwrap();
        assert_eq!(render_spectrum_csv(&s), "i,dim0\n0,2.0000000000000000e0\n");
        assert!(parse_trajectory_csv("s", &render_spectrum_csv(&s)).is_err());
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_trajectory_csv("demo.csv", "t,dim0\n0,1.0\n1,abc\n").unwrap_err();
        match err {
            Error::Parse { source_name, line, .. } => {
                assert_eq!(source_name, "demo.csv");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_trajectory_csv("x", "t,dim0\n1,1.0\n").is_err());
        assert!(parse_trajectory_csv("x", "t,dim1\n0,1.0\n").is_err());
        assert!(parse_trajectory_csv("x", "t,dim0\n0,NaN\n").is_err());
        assert!(parse_trajectory_csv("x", "").is_err());
        assert!(parse_trajectory_csv("x", "t,dim0\n").is_err());
    }

    #[test]
    fn band_table_round_trip() {
        let table = BandEnergyTable {
            energy: vec![0.75, 0.25, 1.0 / 3.0, 2.0 / 3.0],
            dim: 2,
            band_edges: vec![0.0, 0.3, 1.0],
        };
        let text = render_band_table_csv(&table);
        assert!(text.starts_with("dim,0-0.3,0.3-1\n"));
        assert_eq!(parse_band_table_csv("b", &text).unwrap(), table);
    }
}
