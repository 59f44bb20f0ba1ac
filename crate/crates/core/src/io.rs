//! File formats for stage intermediates: dense matrices, model checkpoints
//! and loss traces. Binary values are little-endian `f64` in row-major order
//! regardless of the scalar type used for computation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::training::EpochStats;

const MATRIX_MAGIC: &[u8; 8] = b"WIGMAT01";
const CHECKPOINT_MAGIC: &[u8; 8] = b"WIGCKP01";

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::parse(what, e))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 8], what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::parse(what, e))?;
    if &buf != magic {
        return Err(Error::parse(what, "bad magic bytes"));
    }
    Ok(())
}

fn write_values<F: Real>(a: ArrayView2<'_, F>, w: &mut impl Write) -> Result<()> {
    for &x in a.iter() {
        w.write_all(&x.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

fn read_values(r: &mut impl Read, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
    let len = rows.checked_mul(cols).ok_or_else(|| Error::parse(what, "matrix too large"))?;
    let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::parse(what, "matrix too large"))?];
    r.read_exact(&mut bytes).map_err(|e| Error::parse(what, e))?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::parse(what, e))
}

fn dim(x: u64, what: &str) -> Result<usize> {
    usize::try_from(x).map_err(|e| Error::parse(what, e))
}

pub fn write_matrix<F: Real>(a: ArrayView2<'_, F>, mut w: impl Write) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    write_values(a, &mut w)
}

pub fn read_matrix(mut r: impl Read) -> Result<Array2<f64>> {
    read_magic(&mut r, MATRIX_MAGIC, "matrix")?;
    let rows = dim(read_u64(&mut r, "matrix")?, "matrix")?;
    let cols = dim(read_u64(&mut r, "matrix")?, "matrix")?;
    read_values(&mut r, rows, cols, "matrix")
}

pub fn save_matrix<F: Real>(a: ArrayView2<'_, F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(a, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    read_matrix(BufReader::new(open_input(path)?))
}

/// Opens a stage input, reporting a missing file as such.
pub fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingStageInput { path: path.to_path_buf() },
        _ => Error::Io(e),
    })
}

/// CSV with an optional header row; values use the shortest round-trip form.
pub fn write_matrix_csv<F: Real>(a: ArrayView2<'_, F>, header: Option<&[String]>, mut w: impl Write) -> Result<()> {
    if let Some(h) = header {
        writeln!(w, "{}", h.join(","))?;
    }
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_f64_lossy().to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Trained parameters plus the configuration that produced them, stored as
/// ordered `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub r: Array2<f64>,
    pub a: Array2<f64>,
}

impl Checkpoint {
    pub fn new<F: Real>(config: Vec<(String, String)>, r: ArrayView2<'_, F>, a: ArrayView2<'_, F>) -> Result<Self> {
        if r.ncols() != a.nrows() {
            return Err(Error::ShapeMismatch(format!("R has {} topics, A has {}", r.ncols(), a.nrows())));
        }
        for (k, v) in &config {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidConfig(format!("config entry `{k}` cannot be stored")));
            }
        }
        Ok(Self { config, r: r.mapv(|x| x.to_f64_lossy()), a: a.mapv(|x| x.to_f64_lossy()) })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let text: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        for d in [self.r.nrows(), self.r.ncols(), self.a.ncols()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_values(self.r.view(), &mut w)?;
        write_values(self.a.view(), &mut w)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        const WHAT: &str = "checkpoint";
        read_magic(&mut r, CHECKPOINT_MAGIC, WHAT)?;
        let len = dim(read_u64(&mut r, WHAT)?, WHAT)?;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text).map_err(|e| Error::parse(WHAT, e))?;
        let text = String::from_utf8(text).map_err(|e| Error::parse(WHAT, e))?;
        let config = text
            .lines()
            .map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| Error::parse(WHAT, format!("bad config line `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        let n = dim(read_u64(&mut r, WHAT)?, WHAT)?;
        let k = dim(read_u64(&mut r, WHAT)?, WHAT)?;
        let m = dim(read_u64(&mut r, WHAT)?, WHAT)?;
        let rm = read_values(&mut r, n, k, WHAT)?;
        let am = read_values(&mut r, k, m, WHAT)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::parse(WHAT, "trailing bytes"));
        }
        Ok(Self { config, r: rm, a: am })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(open_input(path)?))
    }
}

pub fn write_loss_trace(trace: &[EpochStats], mut w: impl Write) -> Result<()> {
    writeln!(w, "epoch,train_loss,heldout_loss")?;
    for s in trace {
        let held = s.heldout_loss.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", s.epoch, s.train_loss, held)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_round_trip() {
        let a = array![[1.5f64, -0.0, f64::MIN_POSITIVE], [3.0, 1e300, -7.25]];
        let mut buf = Vec::new();
        write_matrix(a.view(), &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 6 * 8);
        let b = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        assert!(read_matrix(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_matrix(buf.as_slice()).is_err());
    }

    #[test]
    fn checkpoint_bytes_are_stable() {
        let r = array![[0.1f32, 0.2], [0.3, -0.4], [1.0, 2.0]];
        let a = array![[0.5f32], [-0.5]];
        let cfg = vec![("train.topics".to_string(), "2".to_string()), ("note".to_string(), "a=b".to_string())];
        let ck = Checkpoint::new(cfg, r.view(), a.view()).unwrap();
        let mut first = Vec::new();
        ck.write_to(&mut first).unwrap();
        let back = Checkpoint::read_from(first.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("note"), Some("a=b"));
        let mut second = Vec::new();
        back.write_to(&mut second).unwrap();
        assert_eq!(first, second);
        first.push(0);
        assert!(Checkpoint::read_from(first.as_slice()).is_err());
    }

    #[test]
    fn checkpoint_rejects_mismatched_shapes() {
        let r = Array2::<f64>::zeros((3, 2));
        let a = Array2::<f64>::zeros((3, 1));
        assert!(Checkpoint::new(vec![], r.view(), a.view()).is_err());
    }

    #[test]
    fn missing_input_is_reported() {
        let e = load_matrix(Path::new("/nonexistent/cost.bin")).unwrap_err();
        assert!(matches!(e, Error::MissingStageInput { .. }));
    }

    #[test]
    fn trace_csv_leaves_missing_heldout_blank() {
        let trace = vec![
            EpochStats { epoch: 1, train_loss: 0.5, heldout_loss: None },
            EpochStats { epoch: 2, train_loss: 0.25, heldout_loss: Some(0.75) },
        ];
        let mut out = Vec::new();
        write_loss_trace(&trace, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_loss,heldout_loss\n1,0.5,\n2,0.25,0.75\n");
    }
}
