//! File formats: CSV for paths and tables, JSON for configs and reports, and
//! a small binary dump of particle clouds.
//!
//! Every CSV starts with a `# seed=<n> config=<sha256>` comment line; every
//! JSON report carries the same two fields. Floats are written with 17
//! significant digits so a write/read round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Theta};
use crate::saem::fit::IterationRecord;
use crate::simulate::Trajectory;
use crate::smc::{FilterOutput, ParticleCloud, StepSummary};

/// Relative tolerance on the spacing of time stamps in input files.
pub const GRID_TOLERANCE: f64 = 1e-9;

const CLOUD_MAGIC: &[u8; 8] = b"MLSMCDMP";
const CLOUD_VERSION: u32 = 1;

/// Seed and configuration fingerprint stamped on every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new<C: Serialize>(seed: u64, config: &C) -> Self {
        Provenance { seed, config_sha256: config_hash(config) }
    }

    fn comment(&self) -> String {
        format!("# seed={} config={}\n", self.seed, self.config_sha256)
    }
}

/// SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize to JSON");
    hex::encode(Sha256::digest(&bytes))
}

#[inline]
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn data_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data { path: path.to_path_buf(), msg: msg.into() }
}

/// Write `t,v` or `t,v,u` depending on whether the hidden coordinate is set.
pub fn write_trajectory(path: &Path, traj: &Trajectory, prov: &Provenance) -> Result<()> {
    let mut s = prov.comment();
    match &traj.u {
        Some(u) => {
            s.push_str("t,v,u\n");
            for (i, (v, u)) in traj.v.iter().zip(u).enumerate() {
                s += &format!("{},{},{}\n", num(traj.time(i)), num(*v), num(*u));
            }
        }
        None => {
            s.push_str("t,v\n");
            for (i, v) in traj.v.iter().enumerate() {
                s += &format!("{},{}\n", num(traj.time(i)), num(*v));
            }
        }
    }
    write_all(path, &s)
}

/// Read a `t,v` or `t,v,u` file on a uniform grid. Lines starting with `#`
/// are skipped.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| data_err(path, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let with_u = match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["t", "v"] => false,
        ["t", "v", "u"] => true,
        other => return Err(data_err(path, format!("expected header t,v or t,v,u, found {}", other.join(",")))),
    };
    let (mut t, mut v, mut u) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_err(path, e.to_string()))?;
        let field = |k: usize| -> Result<f64> {
            let raw = rec.get(k).ok_or_else(|| data_err(path, format!("row {}: missing column {k}", line + 1)))?;
            let x: f64 = raw
                .parse()
                .map_err(|_| data_err(path, format!("row {}: cannot parse {raw:?}", line + 1)))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(data_err(path, format!("row {}: non-finite value", line + 1)))
            }
        };
        t.push(field(0)?);
        v.push(field(1)?);
        if with_u {
            u.push(field(2)?);
        }
    }
    if t.len() < 2 {
        return Err(data_err(path, "need at least two rows"));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) {
        return Err(data_err(path, "time stamps must increase"));
    }
    for (i, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > GRID_TOLERANCE * dt {
            return Err(data_err(
                path,
                format!("non-uniform time grid at row {}: step {} vs {dt}", i + 2, w[1] - w[0]),
            ));
        }
    }
    let mut traj = Trajectory::observations(t[0], dt, v)?;
    if with_u {
        if let Some(bad) = u.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(data_err(path, format!("gating value {bad} outside [0, 1]")));
        }
        traj.u = Some(u);
    }
    Ok(traj)
}

pub fn write_summaries(path: &Path, rows: &[StepSummary], prov: &Provenance) -> Result<()> {
    let mut s = prov.comment();
    s.push_str("t,mean_u,lo95,hi95\n");
    for r in rows {
        s += &format!("{},{},{},{}\n", num(r.t), num(r.mean_u), num(r.lo95), num(r.hi95));
    }
    write_all(path, &s)
}

/// Per-iteration estimates, one row per SAEM iteration.
pub fn write_iterations(path: &Path, rows: &[IterationRecord], prov: &Provenance) -> Result<()> {
    let mut s = prov.comment();
    s.push_str("m,step,particles,");
    s.push_str(&Theta::NAMES.join(","));
    s.push_str(",log_likelihood,failed\n");
    for r in rows {
        s += &format!("{},{},{}", r.m, num(r.step), r.particles);
        for x in r.theta.to_array() {
            s += &format!(",{}", num(x));
        }
        let ll = r.log_likelihood.map(num).unwrap_or_default();
        s += &format!(",{ll},{}\n", r.failed as u8);
    }
    write_all(path, &s)
}

/// A plain table with a header row and float cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[(String, Vec<f64>)], prov: &Provenance) -> Result<()> {
    let mut s = prov.comment();
    s.push_str(&header.join(","));
    s.push('\n');
    for (key, vals) in rows {
        s.push_str(key);
        for x in vals {
            s += &format!(",{}", num(*x));
        }
        s.push('\n');
    }
    write_all(path, &s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
    s.push('\n');
    write_all(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Model parameters from a JSON config, validated.
pub fn read_params(path: &Path) -> Result<ModelParams> {
    let p: ModelParams = read_json(path)?;
    p.validate()?;
    Ok(p)
}

/// Binary dump of every particle cloud: magic, version, step count `n`,
/// particles per step `K`, `t0`, `dt`, the log-likelihood, then per step
/// `K` particles, `K` weights and `K` ancestor indices. All little-endian.
pub fn write_cloud_dump(path: &Path, out: &FilterOutput) -> Result<()> {
    let k = out.clouds.first().map_or(0, |c| c.particles.len());
    let mut buf = Vec::with_capacity(48 + out.len() * k * 24);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(out.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    for x in [out.t0, out.dt, out.log_likelihood] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for c in &out.clouds {
        if c.particles.len() != k {
            return Err(Error::Config("cloud dump needs a constant particle count".into()));
        }
        for x in c.particles.iter().chain(&c.weights) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for a in &c.ancestors {
            buf.extend_from_slice(&(*a as u64).to_le_bytes());
        }
    }
    let mut w = create(path)?;
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| data_err(self.path, "truncated cloud dump"))?;
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        self.u64().map(f64::from_bits)
    }
}

pub fn read_cloud_dump(path: &Path) -> Result<FilterOutput> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(8)? != CLOUD_MAGIC {
        return Err(data_err(path, "not a cloud dump"));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("four bytes"));
    if version != CLOUD_VERSION {
        return Err(data_err(path, format!("unsupported cloud dump version {version}")));
    }
    let n = cur.u64()? as usize;
    let k = cur.u64()? as usize;
    let (t0, dt, log_likelihood) = (cur.f64()?, cur.f64()?, cur.f64()?);
    let mut clouds = Vec::with_capacity(n);
    for step in 0..n {
        let particles = (0..k).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let weights = (0..k).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let ancestors = (0..k).map(|_| Ok(cur.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        clouds.push(ParticleCloud { step, particles, weights, ancestors, log_increment: f64::NAN });
    }
    Ok(FilterOutput { t0, dt, clouds, log_likelihood })
}
