//! Seeded `(tau, k, eta)`-good problem instances and their file container.
//!
//! Two constructions, both exact:
//!
//! * `gram_exact` places a target score matrix `S` directly and factors it as
//!   `Q = S`, `K = I_n`, so `d = n`.
//! * `random_embed` keeps `d` small. `d - 1` randomly chosen "hot" keys get
//!   their own coordinate axis and every other key sits on the last axis at a
//!   random depth in `[-eta, 0]`; each query row carries its on-support and
//!   off-support scores in the hot coordinates and a `1` in the last one. A
//!   random signed permutation of the coordinates is applied to both `Q` and
//!   `K`. Every inner product has a single nonzero term, so scores are exact.
//!
//! Randomness comes from ChaCha8 keyed by the instance seed, with one stream
//! per row (`stream = row`, `V` rows at `V_STREAM + row`, shared draws at
//! `GLOBAL_STREAM`). Output is bit-reproducible across platforms and thread
//! counts.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! b"QATTNINS"  u32 header_len  header_json
//! Q, K, V      f64 row-major, shapes from the header
//! truth        per row: LEB128 count, then LEB128 column indices
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_goodness, dot, DenseMatrix, GoodnessReport, SupportSets};

pub const MAGIC: &[u8; 8] = b"QATTNINS";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_ATTEMPTS: u64 = 16;

const V_STREAM: u64 = 1 << 32;
const GLOBAL_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    GramExact,
    RandomEmbed,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram_exact" | "gram-exact" => Ok(Mode::GramExact),
            "random_embed" | "random-embed" => Ok(Mode::RandomEmbed),
            other => Err(Error::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    /// Ignored by `gram_exact`, which always uses `d = n`.
    pub d: usize,
    pub k: usize,
    pub tau: f64,
    pub eta: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Entries of `V` are uniform in `[-cap, cap]`; `None` means `eta`.
    pub v_inf_cap: Option<f64>,
}

impl InstanceSpec {
    /// `gram_exact` spec with `tau = 2 ln n`.
    pub fn gram(n: usize, k: usize, eta: f64, seed: u64) -> Self {
        Self {
            n,
            d: n,
            k,
            tau: min_tau(n),
            eta,
            seed,
            mode: Mode::GramExact,
            v_inf_cap: None,
        }
    }

    /// `random_embed` spec with `tau = 2 ln n`.
    pub fn embed(n: usize, d: usize, k: usize, eta: f64, seed: u64) -> Self {
        Self {
            d,
            mode: Mode::RandomEmbed,
            ..Self::gram(n, k, eta, seed)
        }
    }

    pub fn v_cap(&self) -> f64 {
        self.v_inf_cap.unwrap_or(self.eta)
    }

    /// Dimension of the generated `Q`, `K` and `V`.
    pub fn effective_d(&self) -> usize {
        match self.mode {
            Mode::GramExact => self.n,
            Mode::RandomEmbed => self.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Invalid(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if self.k < 1 || self.k > self.n {
            return Err(Error::Invalid(format!(
                "k must lie in [1, n = {}], got {}",
                self.n, self.k
            )));
        }
        if !self.tau.is_finite() || self.tau < min_tau(self.n) {
            return Err(Error::Invalid(format!(
                "tau must be at least 2 ln n = {}, got {}",
                min_tau(self.n),
                self.tau
            )));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Invalid(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        if !(self.v_cap() >= 0.0) || !self.v_cap().is_finite() {
            return Err(Error::Invalid(format!(
                "v_inf_cap must be finite and non-negative, got {}",
                self.v_cap()
            )));
        }
        if self.mode == Mode::RandomEmbed {
            let hot = (self.d.saturating_sub(1)).min(self.n);
            if self.k > hot {
                return Err(Error::Invalid(format!(
                    "random_embed needs k <= min(d - 1, n) = {hot}, got k = {}",
                    self.k
                )));
            }
        }
        Ok(())
    }
}

/// `2 ln n`, the smallest admissible threshold.
pub fn min_tau(n: usize) -> f64 {
    2.0 * (n as f64).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    pub truth: SupportSets,
}

impl Instance {
    pub fn goodness(&self) -> Result<GoodnessReport> {
        check_goodness(&self.q, &self.k, self.spec.tau, self.spec.k, self.spec.eta)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Per-row target scores: `|S_i|` uniform in `[1, k]`, on-support uniform in
/// `[tau, tau + 1]`, off-support uniform in `[-eta, 0]`, over `width` slots.
fn row_targets(spec: &InstanceSpec, seed: u64, row: usize, width: usize) -> (Vec<f64>, Vec<usize>) {
    let mut rng = rng_for(seed, row as u64);
    let mut scores: Vec<f64> = (0..width)
        .map(|_| uniform(&mut rng, -spec.eta, 0.0))
        .collect();
    let count = rng.gen_range(1..=spec.k);
    let mut slots = sample(&mut rng, width, count).into_vec();
    slots.sort_unstable();
    for &s in &slots {
        scores[s] = uniform(&mut rng, spec.tau, spec.tau + 1.0);
    }
    (scores, slots)
}

fn generate_v(spec: &InstanceSpec, seed: u64, d: usize) -> DenseMatrix {
    let cap = spec.v_cap();
    let mut data = Vec::with_capacity(spec.n * d);
    for j in 0..spec.n {
        let mut rng = rng_for(seed, V_STREAM + j as u64);
        data.extend((0..d).map(|_| uniform(&mut rng, -cap, cap)));
    }
    DenseMatrix::from_parts_unchecked(spec.n, d, data)
}

fn truth_from(
    q: &DenseMatrix,
    k: &DenseMatrix,
    tau: f64,
    supports: Vec<Vec<usize>>,
) -> SupportSets {
    let pairs = supports
        .into_iter()
        .enumerate()
        .map(|(i, cols)| {
            cols.into_iter()
                .map(|j| (j, dot(q.row(i), k.row(j))))
                .collect()
        })
        .collect();
    SupportSets::from_pairs(k.rows(), tau, pairs)
}

fn gram_exact(spec: &InstanceSpec, seed: u64) -> Result<Instance> {
    let n = spec.n;
    let mut data = Vec::with_capacity(n * n);
    let mut supports = Vec::with_capacity(n);
    for i in 0..n {
        let (scores, slots) = row_targets(spec, seed, i, n);
        data.extend(scores);
        supports.push(slots);
    }
    let q = DenseMatrix::new(n, n, data)?;
    let k = DenseMatrix::identity(n)?;
    let v = generate_v(spec, seed, n);
    let truth = truth_from(&q, &k, spec.tau, supports);
    Ok(Instance {
        spec: InstanceSpec {
            d: n,
            ..spec.clone()
        },
        q,
        k,
        v,
        truth,
    })
}

fn random_embed(spec: &InstanceSpec, seed: u64) -> Result<Instance> {
    let (n, d) = (spec.n, spec.d);
    let last = d - 1;
    let hot_count = last.min(n);
    let mut g = rng_for(seed, GLOBAL_STREAM);
    let hot_keys = sample(&mut g, n, hot_count).into_vec();
    let mut slot_of = vec![None; n];
    for (h, &j) in hot_keys.iter().enumerate() {
        slot_of[j] = Some(h);
    }
    let depth: Vec<f64> = (0..n).map(|_| uniform(&mut g, 0.0, spec.eta)).collect();
    let perm = sample(&mut g, d, d).into_vec();
    let sign: Vec<f64> = (0..d)
        .map(|_| if g.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let place = |base: &[f64], out: &mut Vec<f64>| {
        let start = out.len();
        out.resize(start + d, 0.0);
        for l in 0..d {
            out[start + perm[l]] = sign[l] * base[l];
        }
    };

    let mut k_data = Vec::with_capacity(n * d);
    let mut base = vec![0.0; d];
    for j in 0..n {
        base.fill(0.0);
        match slot_of[j] {
            Some(h) => base[h] = 1.0,
            None => base[last] = -depth[j],
        }
        place(&base, &mut k_data);
    }

    let mut q_data = Vec::with_capacity(n * d);
    let mut supports = Vec::with_capacity(n);
    for i in 0..n {
        let (scores, slots) = row_targets(spec, seed, i, hot_count);
        base.fill(0.0);
        base[..hot_count].copy_from_slice(&scores);
        base[last] = 1.0;
        place(&base, &mut q_data);
        let mut cols: Vec<usize> = slots.into_iter().map(|h| hot_keys[h]).collect();
        cols.sort_unstable();
        supports.push(cols);
    }
    let q = DenseMatrix::new(n, d, q_data)?;
    let k = DenseMatrix::new(n, d, k_data)?;
    let v = generate_v(spec, seed, d);
    let truth = truth_from(&q, &k, spec.tau, supports);
    Ok(Instance {
        spec: spec.clone(),
        q,
        k,
        v,
        truth,
    })
}

/// Generates and validates an instance. `gram_exact` must pass the goodness
/// check on the first try; `random_embed` is retried with fresh randomness up
/// to [`MAX_ATTEMPTS`] times.
pub fn generate(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let attempts = match spec.mode {
        Mode::GramExact => 1,
        Mode::RandomEmbed => MAX_ATTEMPTS,
    };
    let mut last_failure = String::new();
    for attempt in 0..attempts {
        let seed = spec
            .seed
            .wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let inst = match spec.mode {
            Mode::GramExact => gram_exact(spec, seed)?,
            Mode::RandomEmbed => random_embed(spec, seed)?,
        };
        let report = inst.goodness()?;
        match report.violation() {
            None => return Ok(inst),
            Some(why) => last_failure = format!("attempt {attempt}: {why}"),
        }
    }
    Err(Error::NotGood(format!(
        "generation failed after {attempts} attempt(s); {last_failure}"
    )))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: InstanceSpec,
    q: [usize; 2],
    k: [usize; 2],
    v: [usize; 2],
}

fn write_leb128(out: &mut Vec<u8>, mut x: u64) {
    loop {
        let byte = (x & 0x7f) as u8;
        x >>= 7;
        if x == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn read_leb128(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut x = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *buf
            .get(*pos)
            .ok_or_else(|| Error::Format("truncated varint".into()))?;
        *pos += 1;
        x |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(x);
        }
    }
    Err(Error::Format("varint longer than 64 bits".into()))
}

impl Instance {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: "qattn-instance".into(),
            version: FORMAT_VERSION,
            spec: self.spec.clone(),
            q: [self.q.rows(), self.q.cols()],
            k: [self.k.rows(), self.k.cols()],
            v: [self.v.rows(), self.v.cols()],
        };
        let json = serde_json::to_vec(&header)?;
        let floats = self.q.data().len() + self.k.data().len() + self.v.data().len();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for m in [&self.q, &self.k, &self.v] {
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for row in &self.truth.rows {
            write_leb128(&mut out, row.len() as u64);
            for &j in row {
                write_leb128(&mut out, j as u64);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..8] != MAGIC {
            return Err(Error::Format("missing instance magic".into()));
        }
        let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let body = buf
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format != "qattn-instance" || header.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported container {} v{}",
                header.format, header.version
            )));
        }
        let mut pos = 12 + hlen;
        let mut read_matrix = |shape: [usize; 2]| -> Result<DenseMatrix> {
            let len = shape[0]
                .checked_mul(shape[1])
                .ok_or_else(|| Error::Format("matrix shape overflows".into()))?;
            let bytes = buf
                .get(pos..pos + 8 * len)
                .ok_or_else(|| Error::Format("truncated matrix block".into()))?;
            pos += 8 * len;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            DenseMatrix::new(shape[0], shape[1], data)
        };
        let q = read_matrix(header.q)?;
        let k = read_matrix(header.k)?;
        let v = read_matrix(header.v)?;
        if q.cols() != k.cols() || v.rows() != k.rows() {
            return Err(Error::Format("inconsistent matrix shapes".into()));
        }
        let n = k.rows();
        let mut supports = Vec::with_capacity(q.rows());
        for _ in 0..q.rows() {
            let count = read_leb128(buf, &mut pos)? as usize;
            let mut cols = Vec::with_capacity(count.min(n));
            for _ in 0..count {
                let j = read_leb128(buf, &mut pos)? as usize;
                if j >= n {
                    return Err(Error::Format(format!("support index {j} out of range")));
                }
                cols.push(j);
            }
            supports.push(cols);
        }
        if pos != buf.len() {
            return Err(Error::Format("trailing bytes after truth block".into()));
        }
        let truth = truth_from(&q, &k, header.spec.tau, supports);
        Ok(Instance {
            spec: header.spec,
            q,
            k,
            v,
            truth,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
