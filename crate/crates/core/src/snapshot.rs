//! Snapshots (windowed eigenpairs at one parameter point) and their cache.
//!
//! Cache layout: `cache_dir/<first 16 hex digits of fingerprint>/<point key>.snap`.
//! Each file is little-endian binary:
//!
//! ```text
//! magic      8 bytes  "EGTSNAP1"
//! fingerprint 32 bytes
//! d          u32
//! d times:   numerator i64, log2 denominator u32
//! N          u64      vector length
//! n          u64      number of eigenpairs
//! n × f64    eigenvalues
//! n × N f64  eigenvectors, one after another
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{eval_coefficient, CoeffError, CoeffSpec, RunConfig, Window};
use crate::eigensolver::{solve_window, SolverError};
use crate::fem::{assemble_mass, assemble_stiffness, build_mesh, FemError, Mesh, SymmetricSparseMatrix};
use crate::grid::{DyadicCoord, ParamBox, ParamPoint};

const MAGIC: &[u8; 8] = b"EGTSNAP1";

pub type Fingerprint = [u8; 32];

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("point {0} has the wrong dimension for this box")]
    Dimension(ParamPoint),
    #[error(transparent)]
    Coefficient(#[from] CoeffError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("eigensolve at {point} failed: {source}")]
    Solver { point: ParamPoint, source: SolverError },
    #[error("cache I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// All windowed eigenpairs at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub point: ParamPoint,
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub fingerprint: Fingerprint,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let big_n = self.vectors.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(64 + 8 * self.len() * (big_n + 1));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&(self.point.dim() as u32).to_le_bytes());
        for c in self.point.coords() {
            out.extend_from_slice(&c.numerator().to_le_bytes());
            out.extend_from_slice(&c.log2_denominator().to_le_bytes());
        }
        out.extend_from_slice(&(big_n as u64).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for u in &self.vectors {
            for v in u {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the binary layout; `None` on any structural problem.
    pub fn from_bytes(bytes: &[u8]) -> Option<Snapshot> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return None;
        }
        let fingerprint: Fingerprint = r.take(32)?.try_into().ok()?;
        let d = r.u32()? as usize;
        let mut coords = Vec::with_capacity(d);
        for _ in 0..d {
            let num = r.i64()?;
            let den = r.u32()?;
            let c = DyadicCoord::new(num, den)?;
            // Reject non-canonical encodings so keys stay unique.
            if c.numerator() != num || c.log2_denominator() != den {
                return None;
            }
            coords.push(c);
        }
        let big_n = usize::try_from(r.u64()?).ok()?;
        let n = usize::try_from(r.u64()?).ok()?;
        let expected = n.checked_mul(big_n.checked_add(1)?)?.checked_mul(8)?;
        if bytes.len() - r.pos != expected {
            return None;
        }
        let values = (0..n).map(|_| r.f64()).collect::<Option<Vec<_>>>()?;
        let vectors = (0..n)
            .map(|_| (0..big_n).map(|_| r.f64()).collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()?;
        Some(Snapshot { point: ParamPoint::new(coords), values, vectors, fingerprint })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn i64(&mut self) -> Option<i64> {
        Some(i64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Hash of everything a snapshot depends on besides the point itself.
pub fn fingerprint(mesh_n: usize, param_box: &ParamBox, window: Window, coefficient: &CoeffSpec) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(format!("mesh_n={mesh_n}\n"));
    for (lo, hi) in param_box.lower.iter().zip(&param_box.upper) {
        h.update(format!("axis={:016x},{:016x}\n", lo.to_bits(), hi.to_bits()));
    }
    h.update(format!("window={:016x},{:016x}\n", window.min.to_bits(), window.max.to_bits()));
    h.update(format!("coefficient={}\n", coefficient.canonical()));
    h.finalize().into()
}

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    hex::encode(fp)
}

/// Anything that can hand out snapshots on a shared mesh.
pub trait SnapshotSource: Sync {
    fn snapshot(&self, point: &ParamPoint) -> Result<Arc<Snapshot>, SnapshotError>;
    fn mass(&self) -> &SymmetricSparseMatrix;
    fn param_box(&self) -> &ParamBox;

    /// Computes missing snapshots for all `points`, possibly in parallel.
    fn prefetch(&self, points: &[ParamPoint]) -> Result<(), SnapshotError> {
        points.par_iter().try_for_each(|p| self.snapshot(p).map(|_| ()))
    }
}

/// Computes snapshots for one problem and caches them in memory and,
/// optionally, on disk.
pub struct SnapshotStore {
    mesh: Mesh,
    mass: SymmetricSparseMatrix,
    param_box: ParamBox,
    coefficient: CoeffSpec,
    window: Window,
    fingerprint: Fingerprint,
    cache_dir: Option<PathBuf>,
    memory: Mutex<HashMap<ParamPoint, Arc<Snapshot>>>,
    solves: AtomicUsize,
}

impl SnapshotStore {
    pub fn new(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<Self, SnapshotError> {
        let mesh = build_mesh(cfg.mesh_n)?;
        let mass = assemble_mass(&mesh);
        let fp = fingerprint(cfg.mesh_n, &cfg.param_box, cfg.window, &cfg.coefficient);
        let cache_dir = cache_dir.map(|d| d.join(&hex::encode(fp)[..16]));
        Ok(SnapshotStore {
            mesh,
            mass,
            param_box: cfg.param_box.clone(),
            coefficient: cfg.coefficient.clone(),
            window: cfg.window,
            fingerprint: fp,
            cache_dir,
            memory: Mutex::new(HashMap::new()),
            solves: AtomicUsize::new(0),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    /// Directory holding this problem's cache files, if disk caching is on.
    pub fn cache_path(&self) -> Option<&Path> {
        self.cache_dir.as_deref()
    }

    /// Number of eigensolves performed by this store (cache misses).
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    fn file_for(&self, point: &ParamPoint) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{}.snap", point.key())))
    }

    fn compute(&self, point: &ParamPoint) -> Result<Snapshot, SnapshotError> {
        let mu = self.param_box.to_physical(point);
        let c = eval_coefficient(&self.coefficient, &mu)?;
        let a = assemble_stiffness(&self.mesh, &c)?;
        let spectrum = solve_window(&a, &self.mass, self.window)
            .map_err(|source| SnapshotError::Solver { point: point.clone(), source })?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        log::debug!("solved {point}: {} eigenpairs", spectrum.len());
        Ok(Snapshot {
            point: point.clone(),
            values: spectrum.values,
            vectors: spectrum.vectors,
            fingerprint: self.fingerprint,
        })
    }

    fn load(&self, point: &ParamPoint, path: &Path) -> Option<Snapshot> {
        let mut bytes = Vec::new();
        match fs::File::open(path) {
            Ok(mut f) => {
                if let Err(e) = f.read_to_end(&mut bytes) {
                    log::warn!("cannot read {}: {e}; recomputing", path.display());
                    return None;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cannot open {}: {e}; recomputing", path.display());
                return None;
            }
        }
        match Snapshot::from_bytes(&bytes) {
            Some(s) if s.fingerprint == self.fingerprint && s.point == *point && self.plausible(&s) => Some(s),
            Some(_) => {
                log::warn!("cache entry {} does not match this problem; recomputing", path.display());
                None
            }
            None => {
                log::warn!("cache entry {} is corrupt; recomputing", path.display());
                None
            }
        }
    }

    fn plausible(&self, s: &Snapshot) -> bool {
        s.vectors.iter().all(|u| u.len() == self.mass.dim())
            && s.values.iter().all(|&l| self.window.contains(l))
            && s.values.windows(2).all(|w| w[0] <= w[1])
    }

    fn store(&self, snap: &Snapshot, path: &Path) -> Result<(), SnapshotError> {
        let io_err = |source| SnapshotError::Io { path: path.to_path_buf(), source };
        let dir = path.parent().expect("cache files live in a directory");
        fs::create_dir_all(dir).map_err(io_err)?;
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            snap.point.key(),
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&snap.to_bytes()).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
        drop(f);
        fs::rename(&tmp, path).map_err(io_err)
    }
}

impl SnapshotSource for SnapshotStore {
    fn snapshot(&self, point: &ParamPoint) -> Result<Arc<Snapshot>, SnapshotError> {
        if point.dim() != self.param_box.dim() {
            return Err(SnapshotError::Dimension(point.clone()));
        }
        if let Some(s) = self.memory.lock().expect("snapshot map poisoned").get(point) {
            return Ok(Arc::clone(s));
        }
        let path = self.file_for(point);
        let snap = match path.as_deref().and_then(|p| self.load(point, p)) {
            Some(s) => s,
            None => {
                let s = self.compute(point)?;
                if let Some(p) = &path {
                    self.store(&s, p)?;
                }
                s
            }
        };
        let snap = Arc::new(snap);
        let mut map = self.memory.lock().expect("snapshot map poisoned");
        Ok(Arc::clone(map.entry(point.clone()).or_insert(snap)))
    }

    fn mass(&self) -> &SymmetricSparseMatrix {
        &self.mass
    }

    fn param_box(&self) -> &ParamBox {
        &self.param_box
    }
}
