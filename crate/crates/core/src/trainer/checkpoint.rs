//! Self-describing binary checkpoint container with a version tag.
//!
//! Layout: magic, version, config (JSON), iteration, seed, splat arrays,
//! optimizer moments; all numbers little-endian. Writes go to a temp file
//! renamed into place, so a crash never leaves a partial checkpoint.

use super::adam::{MomentPair, OptimizerState};
use crate::error::TrainError;
use crate::scene::{SplatSet, TrainConfig};
use crate::{Quat, Vec3};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"OSPLCKPT";
const VERSION: u32 = 1;

/// Resumable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub splats: SplatSet,
    pub optimizer: OptimizerState,
    pub iteration: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    for v in &mut out {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(out)
}

fn write_pair<W: Write>(w: &mut W, p: &MomentPair) -> std::io::Result<()> {
    write_f64s(w, &p.m)?;
    write_f64s(w, &p.v)
}

fn read_pair<R: Read>(r: &mut R, rows: usize, width: usize) -> std::io::Result<MomentPair> {
    Ok(MomentPair {
        m: read_f64s(r, rows * width)?,
        v: read_f64s(r, rows * width)?,
        width,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(VERSION)?;
            let config = serde_json::to_vec(&ckpt.config).expect("config serializes");
            w.write_u64::<LittleEndian>(config.len() as u64)?;
            w.write_all(&config)?;
            w.write_u64::<LittleEndian>(ckpt.iteration as u64)?;
            w.write_u64::<LittleEndian>(ckpt.seed)?;

            let s = &ckpt.splats;
            w.write_u64::<LittleEndian>(s.len() as u64)?;
            for p in &s.position {
                write_f64s(&mut w, p.as_slice())?;
            }
            for q in &s.rotation {
                write_f64s(&mut w, q.as_slice())?;
            }
            for ls in &s.log_scale {
                write_f64s(&mut w, ls)?;
            }
            write_f64s(&mut w, &s.opacity_logit)?;
            for sh in &s.sh {
                for coeff in sh {
                    write_f64s(&mut w, coeff)?;
                }
            }
            write_f64s(&mut w, &s.grad_accum)?;
            for &c in &s.grad_count {
                w.write_u32::<LittleEndian>(c)?;
            }
            write_f64s(&mut w, &s.max_radius_px)?;
            for &b in &s.seen_since_prune {
                w.write_u8(b as u8)?;
            }

            let o = &ckpt.optimizer;
            w.write_u64::<LittleEndian>(o.step)?;
            write_pair(&mut w, &o.position)?;
            write_pair(&mut w, &o.rotation)?;
            write_pair(&mut w, &o.log_scale)?;
            write_pair(&mut w, &o.opacity)?;
            write_pair(&mut w, &o.sh)?;
            w.flush()
        })()
        .map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(TrainError::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err(path))?;
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    (|| -> std::io::Result<Checkpoint> {
        let config_len = r.read_u64::<LittleEndian>()? as usize;
        let mut config_buf = vec![0u8; config_len];
        r.read_exact(&mut config_buf)?;
        let config: TrainConfig = serde_json::from_slice(&config_buf)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let iteration = r.read_u64::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;

        let m = r.read_u64::<LittleEndian>()? as usize;
        let mut splats = SplatSet::with_len(m);
        for p in &mut splats.position {
            let v = read_f64s(&mut r, 3)?;
            *p = Vec3::new(v[0], v[1], v[2]);
        }
        for q in &mut splats.rotation {
            let v = read_f64s(&mut r, 4)?;
            *q = Quat::new(v[0], v[1], v[2], v[3]);
        }
        for ls in &mut splats.log_scale {
            let v = read_f64s(&mut r, 2)?;
            ls.copy_from_slice(&v);
        }
        splats.opacity_logit = read_f64s(&mut r, m)?;
        for sh in &mut splats.sh {
            for coeff in sh.iter_mut() {
                let v = read_f64s(&mut r, 3)?;
                coeff.copy_from_slice(&v);
            }
        }
        splats.grad_accum = read_f64s(&mut r, m)?;
        for c in &mut splats.grad_count {
            *c = r.read_u32::<LittleEndian>()?;
        }
        splats.max_radius_px = read_f64s(&mut r, m)?;
        for b in &mut splats.seen_since_prune {
            *b = r.read_u8()? != 0;
        }

        let step = r.read_u64::<LittleEndian>()?;
        let optimizer = OptimizerState {
            step,
            position: read_pair(&mut r, m, 3)?,
            rotation: read_pair(&mut r, m, 4)?,
            log_scale: read_pair(&mut r, m, 2)?,
            opacity: read_pair(&mut r, m, 1)?,
            sh: read_pair(&mut r, m, 48)?,
        };
        Ok(Checkpoint {
            splats,
            optimizer,
            iteration,
            seed,
            config,
        })
    })()
    .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_checkpoint(seed: u64, m: usize) -> Checkpoint {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut splats = SplatSet::with_len(m);
        for i in 0..m {
            splats.position[i] = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            splats.rotation[i] = Quat::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            splats.log_scale[i] = [rng.gen(), rng.gen()];
            splats.opacity_logit[i] = rng.gen();
            for k in 0..16 {
                for c in 0..3 {
                    splats.sh[i][k][c] = rng.gen();
                }
            }
            splats.grad_accum[i] = rng.gen();
            splats.grad_count[i] = rng.gen_range(0..100);
            splats.max_radius_px[i] = rng.gen();
            splats.seen_since_prune[i] = rng.gen_bool(0.5);
        }
        let mut optimizer = OptimizerState::new(m);
        optimizer.step = rng.gen_range(0..10_000);
        for v in optimizer
            .position
            .m
            .iter_mut()
            .chain(optimizer.sh.v.iter_mut())
        {
            *v = rng.gen();
        }
        Checkpoint {
            splats,
            optimizer,
            iteration: rng.gen_range(0..30_000),
            seed: rng.gen(),
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let ckpt = random_checkpoint(7, 5);
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
    }

    #[test]
    fn empty_initial_state_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        let ckpt = Checkpoint {
            splats: SplatSet::default(),
            optimizer: OptimizerState::new(0),
            iteration: 0,
            seed: 0,
            config: TrainConfig::default(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        save_checkpoint(&path, &random_checkpoint(9, 4)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(TrainError::Checkpoint(_))
        ));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(TrainError::Checkpoint(_))
        ));
    }
}
