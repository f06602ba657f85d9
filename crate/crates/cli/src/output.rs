//! Byte-stable report emission. Floats print with 17 significant digits
//! so CSV round-trips bit-exactly; rerunning an identical config rewrites
//! identical bytes (the manifest, which carries wall time, lives in its
//! own file).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}

/// One CSV cell.
pub enum Cell {
    U64(u64),
    Usize(usize),
    F64(f64),
    Str(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::U64(v) => v.to_string(),
            Cell::Usize(v) => v.to_string(),
            Cell::F64(v) => fmt_f64(*v),
            Cell::Str(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

pub struct Emitter {
    pub dir: PathBuf,
    pub config_hash: String,
    pub csv: bool,
    pub json: bool,
    pub written: Vec<PathBuf>,
}

impl Emitter {
    pub fn new(dir: &Path, config_hash: &str, formats: &[String]) -> std::io::Result<Emitter> {
        std::fs::create_dir_all(dir)?;
        let csv = formats.iter().any(|f| f == "csv");
        let json = formats.iter().any(|f| f == "json");
        Ok(Emitter {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            csv,
            json,
            written: Vec::new(),
        })
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl Iterator<Item = Vec<Cell>>,
    ) -> std::io::Result<Option<PathBuf>> {
        if !self.csv {
            return Ok(None);
        }
        let path = self.dir.join(name);
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(out, "# config_hash={}", self.config_hash)?;
        writeln!(out, "{}", header.join(","))?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        self.written.push(path.clone());
        Ok(Some(path))
    }

    pub fn write_json<T: Serialize>(
        &mut self,
        name: &str,
        payload: &T,
    ) -> std::io::Result<Option<PathBuf>> {
        if !self.json {
            return Ok(None);
        }
        let path = self.dir.join(name);
        let mut out = std::fs::File::create(&path)?;
        let text = serde_json::to_string_pretty(payload)?;
        out.write_all(text.as_bytes())?;
        out.write_all(b"\n")?;
        self.written.push(path.clone());
        Ok(Some(path))
    }

    /// The manifest is always written and always excluded from the
    /// byte-determinism contract (it carries wall time).
    pub fn write_manifest(&mut self, manifest: &Manifest) -> std::io::Result<PathBuf> {
        let path = self.dir.join("manifest.json");
        let mut out = std::fs::File::create(&path)?;
        let text = serde_json::to_string_pretty(manifest)?;
        out.write_all(text.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(path)
    }
}

#[derive(Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub threads: usize,
    pub wall_seconds: f64,
    pub notes: Vec<String>,
    pub outputs: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_formatting_roundtrips() {
        for x in [
            0.1,
            -3.25e-300,
            1.0 / 3.0,
            6.02e23,
            f64::MIN_POSITIVE,
            -0.0,
            12345.6789,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s} -> {back}");
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }
}
