//! Path serialization: CSV trajectories and their JSON sidecars.
//!
//! Values are written in scientific notation with 16 fractional digits
//! (17 significant digits), which round-trips every finite f64 exactly, so a
//! written path re-reads bit for bit.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::simulate::{PathMeta, SamplePath};

/// Write `t,x` rows at full double precision.
pub fn write_path_csv<W: Write>(path: &SamplePath, mut w: W) -> Result<()> {
    w.write_all(b"t,x\n")?;
    for (t, x) in path.times().iter().zip(path.values()) {
        writeln!(w, "{t:.16e},{x:.16e}")?;
    }
    Ok(())
}

/// Read a `t,x` CSV written by [`write_path_csv`] (or compatible data).
pub fn read_path_csv<R: Read>(r: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty path CSV".into()))??;
    if header.trim() != "t,x" {
        return Err(Error::InvalidConfig(format!(
            "path CSV must start with 't,x', got '{}'",
            header.trim()
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (t, x) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(x), None) => (t, x),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "path CSV row {} is not 't,x'",
                    i + 2
                )))
            }
        };
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("bad {what} '{s}' at CSV row {}", i + 2))
            })
        };
        times.push(parse(t, "time")?);
        values.push(parse(x, "value")?);
    }
    Ok((times, values))
}

/// Read a path CSV and wrap it as observations against the given period.
pub fn load_path_csv<R: Read>(r: R, nu: f64) -> Result<SamplePath> {
    let (times, values) = read_path_csv(r)?;
    SamplePath::from_observations(times, values, nu)
}

/// Write the metadata sidecar JSON.
pub fn write_meta_json<W: Write>(meta: &PathMeta, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, meta)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Read a metadata sidecar JSON.
pub fn read_meta_json<R: Read>(r: R) -> Result<PathMeta> {
    Ok(serde_json::from_reader(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::PeriodicBasis;
    use crate::model::{DriftParams, InitPolicy, ModelSpec};
    use crate::simulate::simulate_exact;

    fn sample_path() -> SamplePath {
        let basis = PeriodicBasis::fourier(1.0, 2, 128).unwrap();
        let model = ModelSpec::new(
            basis,
            DriftParams::new(vec![1.0, 0.5], 1.0),
            0.2,
            InitPolicy::Stationary,
        )
        .unwrap();
        simulate_exact(&model, 2.0, 0.01, 42).unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let path = sample_path();
        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let (times, values) = read_path_csv(buf.as_slice()).unwrap();
        assert_eq!(times, path.times());
        assert_eq!(values, path.values());
    }

    #[test]
    fn csv_output_is_deterministic() {
        let path = sample_path();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_path_csv(&path, &mut a).unwrap();
        write_path_csv(&path, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with(b"t,x\n"));
    }

    #[test]
    fn loaded_path_reconstructs_grid() {
        let path = sample_path();
        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let loaded = load_path_csv(buf.as_slice(), 1.0).unwrap();
        assert_eq!(loaded.values(), path.values());
        assert_eq!(loaded.dt(), path.dt());
        assert_eq!(loaded.meta().scheme, "observed");
    }

    #[test]
    fn meta_round_trip_preserves_fields() {
        let path = sample_path();
        let mut buf = Vec::new();
        write_meta_json(path.meta(), &mut buf).unwrap();
        let meta = read_meta_json(buf.as_slice()).unwrap();
        assert_eq!(&meta, path.meta());
        // change_index is omitted when absent.
        assert!(!String::from_utf8(buf).unwrap().contains("change_index"));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(read_path_csv("x,t\n0,1\n".as_bytes()).is_err());
        assert!(read_path_csv("t,x\n0.0\n".as_bytes()).is_err());
        assert!(read_path_csv("t,x\n0.0,abc\n".as_bytes()).is_err());
        assert!(read_path_csv("".as_bytes()).is_err());
    }
}
