//! Binary checkpoints: a versioned header, a shape manifest, then flat
//! little-endian `f64` payloads for parameters and optional optimizer state.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::optim::Adam;
use super::tape::{Mat, ParamSet};

const MAGIC: &[u8; 4] = b"MSN1";
const FORMAT_VERSION: u32 = 1;
const MAX_NAME_LEN: u32 = 4096;
const MAX_PARAMS: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(&'static str),
    #[error("checkpoint holds module {got:?}, expected {expected:?}")]
    ModuleMismatch { expected: String, got: String },
    #[error("parameter {name:?} is missing from the checkpoint")]
    MissingParam { name: String },
    #[error("checkpoint carries unknown parameter {name:?}")]
    UnexpectedParam { name: String },
    #[error("parameter {name:?} has shape {got:?} in the checkpoint, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("optimizer state requested but absent from the checkpoint")]
    NoOptimizerState,
}

/// Parsed checkpoint contents, not yet bound to any parameter set.
pub struct Checkpoint {
    pub module: String,
    pub entries: Vec<(String, Mat)>,
    pub optim: Option<(u64, Vec<Mat>, Vec<Mat>)>,
}

fn write_u32(w: &mut impl Write, x: u32) -> io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_u64(w: &mut impl Write, x: u64) -> io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_mat(w: &mut impl Write, m: &Mat) -> io::Result<()> {
    for &x in m.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Corrupt("unexpected end of file")
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = read_u32(r)?;
    if len > MAX_NAME_LEN {
        return Err(CheckpointError::Corrupt("name length out of range"));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("name is not utf-8"))
}

fn read_mat(r: &mut impl Read, rows: usize, cols: usize) -> Result<Mat, CheckpointError> {
    let mut data = Vec::with_capacity(rows * cols);
    let mut b = [0u8; 8];
    for _ in 0..rows * cols {
        read_exact(r, &mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Mat::from_shape_vec((rows, cols), data)
        .map_err(|_| CheckpointError::Corrupt("shape/payload mismatch"))
}

/// Writes `set` (and optionally `optim`) under `module` to `path`.
pub fn save_checkpoint(
    path: &Path,
    module: &str,
    set: &ParamSet,
    optim: Option<&Adam>,
) -> Result<(), CheckpointError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_str(&mut w, module)?;
    write_u32(&mut w, set.len() as u32)?;
    for id in set.ids() {
        let v = set.value(id);
        write_str(&mut w, set.name(id))?;
        write_u32(&mut w, v.nrows() as u32)?;
        write_u32(&mut w, v.ncols() as u32)?;
    }
    w.write_all(&[optim.is_some() as u8])?;
    for id in set.ids() {
        write_mat(&mut w, set.value(id))?;
    }
    if let Some(adam) = optim {
        let (steps, m, v) = adam.state();
        write_u64(&mut w, steps)?;
        for mat in m {
            write_mat(&mut w, mat)?;
        }
        for mat in v {
            write_mat(&mut w, mat)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads and fully validates the container structure of a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let module = read_str(&mut r)?;
    let count = read_u32(&mut r)?;
    if count > MAX_PARAMS {
        return Err(CheckpointError::Corrupt("parameter count out of range"));
    }
    let mut manifest = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        manifest.push((name, rows, cols));
    }
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag)?;
    let mut entries = Vec::with_capacity(manifest.len());
    for (name, rows, cols) in &manifest {
        entries.push((name.clone(), read_mat(&mut r, *rows, *cols)?));
    }
    let optim = if flag[0] != 0 {
        let steps = read_u64(&mut r)?;
        let mut m = Vec::with_capacity(manifest.len());
        for (_, rows, cols) in &manifest {
            m.push(read_mat(&mut r, *rows, *cols)?);
        }
        let mut v = Vec::with_capacity(manifest.len());
        for (_, rows, cols) in &manifest {
            v.push(read_mat(&mut r, *rows, *cols)?);
        }
        Some((steps, m, v))
    } else {
        None
    };
    Ok(Checkpoint {
        module,
        entries,
        optim,
    })
}

impl Checkpoint {
    /// Copies the checkpointed values into `set` after verifying that names
    /// and shapes agree exactly. Nothing is written on error. If `optim` is
    /// given, its moments are restored too.
    pub fn install(
        &self,
        expected_module: &str,
        set: &mut ParamSet,
        optim: Option<&mut Adam>,
    ) -> Result<(), CheckpointError> {
        if self.module != expected_module {
            return Err(CheckpointError::ModuleMismatch {
                expected: expected_module.to_string(),
                got: self.module.clone(),
            });
        }
        if optim.is_some() && self.optim.is_none() {
            return Err(CheckpointError::NoOptimizerState);
        }
        for (name, _) in &self.entries {
            if set.id_of(name).is_none() {
                return Err(CheckpointError::UnexpectedParam { name: name.clone() });
            }
        }
        let mut staged = Vec::with_capacity(set.len());
        for id in set.ids() {
            let name = set.name(id).to_string();
            let want = set.value(id).raw_dim();
            let found = self
                .entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or(CheckpointError::MissingParam { name: name.clone() })?;
            if found.1.raw_dim() != want {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: (want[0], want[1]),
                    got: (found.1.nrows(), found.1.ncols()),
                });
            }
            staged.push((id, found.1.clone()));
        }
        for (id, mat) in staged {
            set.set_value(id, mat);
        }
        if let Some(adam) = optim {
            let (steps, m, v) = self.optim.clone().expect("checked above");
            adam.restore(steps, m, v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::optim::AdamConfig;
    use ndarray::array;

    fn demo_set() -> ParamSet {
        let mut set = ParamSet::new();
        set.add("layer.w", array![[0.1, -0.25], [3.5e-7, 2.0]])
            .unwrap();
        set.add("layer.b", array![[1.0 / 3.0, -0.0]]).unwrap();
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let set = demo_set();
        save_checkpoint(&path, "demo", &set, None).unwrap();
        let cp = load_checkpoint(&path).unwrap();
        assert_eq!(cp.module, "demo");
        let mut target = demo_set();
        // Perturb before install to prove values come from the file.
        let id = target.id_of("layer.w").unwrap();
        target.value_mut(id).fill(9.0);
        cp.install("demo", &mut target, None).unwrap();
        for id in set.ids() {
            let a = set.value(id);
            let b = target.value(target.id_of(set.name(id)).unwrap());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let mut set = demo_set();
        let mut adam = Adam::new(AdamConfig::default(), &set);
        let id = set.id_of("layer.w").unwrap();
        set.accumulate_grad(id, &array![[1.0, 2.0], [3.0, 4.0]]);
        adam.step(&mut set);
        save_checkpoint(&path, "demo", &set, Some(&adam)).unwrap();

        let cp = load_checkpoint(&path).unwrap();
        let mut set2 = demo_set();
        let mut adam2 = Adam::new(AdamConfig::default(), &set2);
        cp.install("demo", &mut set2, Some(&mut adam2)).unwrap();
        assert_eq!(adam2.step_count(), 1);
        let (_, m1, _) = adam.state();
        let (_, m2, _) = adam2.state();
        for (a, b) in m1.iter().zip(m2.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn module_and_shape_mismatches_are_rejected_without_partial_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let set = demo_set();
        save_checkpoint(&path, "demo", &set, None).unwrap();
        let cp = load_checkpoint(&path).unwrap();

        let mut other = demo_set();
        assert!(matches!(
            cp.install("other", &mut other, None),
            Err(CheckpointError::ModuleMismatch { .. })
        ));

        let mut wrong_shape = ParamSet::new();
        wrong_shape.add("layer.w", Mat::zeros((2, 2))).unwrap();
        wrong_shape.add("layer.b", Mat::zeros((1, 3))).unwrap();
        let before = wrong_shape.value(wrong_shape.id_of("layer.w").unwrap()).clone();
        assert!(matches!(
            cp.install("demo", &mut wrong_shape, None),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
        // No partial write happened.
        assert_eq!(
            &before,
            wrong_shape.value(wrong_shape.id_of("layer.w").unwrap())
        );
    }

    #[test]
    fn truncated_file_is_reported_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.ckpt");
        let set = demo_set();
        save_checkpoint(&path, "demo", &set, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint");
        std::fs::write(&path, b"PNG\x89 something else").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }
}
