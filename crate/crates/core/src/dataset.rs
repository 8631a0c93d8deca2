//! Training corpora: pairs of density snapshots `(f_j(t1), f_j(t2))` started
//! from Gaussians with random means, optional smoothing noise, and a
//! checksummed container file.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldio::{read_f64s, write_f64s};
use crate::fokker_planck::{gaussian_density, snapshots_with, DriftSpec, FokkerPlanckSolver, SolverConfig};
use crate::grid::{Grid2D, ScalarField};

pub const CORPUS_MAGIC: &str = "DRIFTDECOMP-CORPUS v1";

/// Variance of every initial Gaussian.
pub const INITIAL_VARIANCE: f64 = 0.01;

/// Initial means are drawn uniformly from `[-MEAN_BOX, MEAN_BOX]^2`.
pub const MEAN_BOX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub f1: ScalarField,
    pub f2: ScalarField,
    pub t1: f64,
    pub t2: f64,
    pub init_mean: (f64, f64),
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<SnapshotPair>,
    pub grid: Grid2D,
    pub noise_level: f64,
    pub drift_label: String,
    pub seed: u64,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn times(&self) -> (f64, f64) {
        self.pairs.first().map(|p| (p.t1, p.t2)).unwrap_or((0.0, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.pairs.first().ok_or_else(|| Error::Precondition("corpus has no pairs".into()))?;
        for p in &self.pairs {
            if p.f1.grid() != &self.grid || p.f2.grid() != &self.grid {
                return Err(Error::GridMismatch);
            }
            if p.t1 != first.t1 || p.t2 != first.t2 || !(p.t2 > p.t1) {
                return Err(Error::Precondition("pairs must share snapshot times with t2 > t1".into()));
            }
        }
        Ok(())
    }
}

/// Draws `m` initial means uniformly from the mean box.
pub fn sample_means(m: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-MEAN_BOX, MEAN_BOX);
    (0..m).map(|_| (dist.sample(&mut rng), dist.sample(&mut rng))).collect()
}

/// Solves the Fokker-Planck equation from `m` random Gaussian initial states.
///
/// Trajectories run in parallel; results are ordered by `j`, so the corpus
/// depends only on the inputs and `seed`.
pub fn build_corpus(
    drift: &DriftSpec,
    cfg: SolverConfig,
    m: usize,
    seed: u64,
    grid: &Grid2D,
    t1: f64,
    t2: f64,
) -> Result<Corpus> {
    if m == 0 {
        return Err(Error::Precondition("corpus size M must be at least 1".into()));
    }
    let solver = FokkerPlanckSolver::new(grid, drift, cfg)?;
    let means = sample_means(m, seed);
    let pairs = means
        .par_iter()
        .map(|&mean| {
            let f0 = gaussian_density(grid, mean, INITIAL_VARIANCE)?;
            let (f1, f2) = snapshots_with(&solver, &f0, t1, t2)?;
            Ok(SnapshotPair { f1, f2, t1, t2, init_mean: mean, seed })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { pairs, grid: *grid, noise_level: 0.0, drift_label: drift.label.clone(), seed })
}

/// Normalised, truncated 1-D Gaussian weights for offsets `-k..=k` cells.
fn kernel_1d(variance: f64, h: f64) -> Vec<f64> {
    let half = (4.0 * variance.sqrt() / h).floor() as usize;
    let w: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let s = (i as f64 - half as f64) * h;
            (-s * s / (2.0 * variance)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric reflection of index `j` into `0..n`.
#[inline]
fn reflect(j: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = j.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn convolve_line(src: &[f64], dst: &mut [f64], kernel: &[f64]) {
    let n = src.len();
    let half = (kernel.len() / 2) as isize;
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            acc += w * src[reflect(i as isize + k as isize - half, n)];
        }
        *out = acc;
    }
}

/// Convolution with an isotropic Gaussian of the given variance (physical
/// units), truncated at four standard deviations per axis, with reflected
/// boundaries. Variance zero is the identity.
pub fn smooth_field(field: &ScalarField, variance: f64) -> Result<ScalarField> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Precondition(format!("noise variance must be non-negative, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(field.clone());
    }
    let g = *field.grid();
    let (nx, ny) = (g.nx, g.ny);
    let kx = kernel_1d(variance, g.dx());
    let ky = kernel_1d(variance, g.dy());

    let src = field.values();
    let mut tmp = vec![0.0; src.len()];
    for iy in 0..ny {
        convolve_line(&src[iy * nx..(iy + 1) * nx], &mut tmp[iy * nx..(iy + 1) * nx], &kx);
    }
    let mut out = vec![0.0; src.len()];
    let mut col = vec![0.0; ny];
    let mut col_out = vec![0.0; ny];
    for ix in 0..nx {
        for iy in 0..ny {
            col[iy] = tmp[iy * nx + ix];
        }
        convolve_line(&col, &mut col_out, &ky);
        for iy in 0..ny {
            out[iy * nx + ix] = col_out[iy];
        }
    }
    ScalarField::new(g, out)
}

/// Applies [`smooth_field`] to every snapshot and records the noise level.
pub fn perturb_gaussian(corpus: &Corpus, noise_variance: f64) -> Result<Corpus> {
    let pairs = corpus
        .pairs
        .par_iter()
        .map(|p| {
            Ok(SnapshotPair {
                f1: smooth_field(&p.f1, noise_variance)?,
                f2: smooth_field(&p.f2, noise_variance)?,
                ..p.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { pairs, noise_level: corpus.noise_level + noise_variance, ..corpus.clone() })
}

#[derive(Serialize, Deserialize)]
struct PairMeta {
    init_mean: [f64; 2],
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    grid: Grid2D,
    m: usize,
    t1: f64,
    t2: f64,
    noise_level: f64,
    drift_label: String,
    seed: u64,
    pairs: Vec<PairMeta>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode_corpus(corpus: &Corpus) -> Result<Vec<u8>> {
    corpus.validate()?;
    let (t1, t2) = corpus.times();
    let meta = CorpusMeta {
        grid: corpus.grid,
        m: corpus.len(),
        t1,
        t2,
        noise_level: corpus.noise_level,
        drift_label: corpus.drift_label.clone(),
        seed: corpus.seed,
        pairs: corpus
            .pairs
            .iter()
            .map(|p| PairMeta { init_mean: [p.init_mean.0, p.init_mean.1], seed: p.seed })
            .collect(),
    };
    let json = serde_json::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CORPUS_MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    for p in &corpus.pairs {
        write_f64s(&mut buf, p.f1.values())?;
        write_f64s(&mut buf, p.f2.values())?;
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus> {
    let magic_line = CORPUS_MAGIC.len() + 1;
    if bytes.len() < magic_line || &bytes[..CORPUS_MAGIC.len()] != CORPUS_MAGIC.as_bytes() || bytes[CORPUS_MAGIC.len()] != b'\n'
    {
        return Err(Error::FormatVersionMismatch(format!("missing '{CORPUS_MAGIC}' header")));
    }
    if bytes.len() < magic_line + 8 {
        return Err(Error::FormatVersionMismatch("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let rest = &body[magic_line..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::FormatVersionMismatch("unterminated metadata".into()))?;
    let meta: CorpusMeta =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::FormatVersionMismatch(format!("metadata: {e}")))?;
    meta.grid.validate()?;
    let n = meta.grid.len();
    let mut payload = &rest[nl + 1..];
    if payload.len() != meta.m * 2 * n * 8 || meta.pairs.len() != meta.m {
        return Err(Error::FormatVersionMismatch("payload size does not match metadata".into()));
    }
    let mut pairs = Vec::with_capacity(meta.m);
    for pm in &meta.pairs {
        let f1 = ScalarField::new(meta.grid, read_f64s(&mut payload, n)?)?;
        let f2 = ScalarField::new(meta.grid, read_f64s(&mut payload, n)?)?;
        pairs.push(SnapshotPair {
            f1,
            f2,
            t1: meta.t1,
            t2: meta.t2,
            init_mean: (pm.init_mean[0], pm.init_mean[1]),
            seed: pm.seed,
        });
    }
    let corpus = Corpus {
        pairs,
        grid: meta.grid,
        noise_level: meta.noise_level,
        drift_label: meta.drift_label,
        seed: meta.seed,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_corpus(corpus)?)?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    decode_corpus(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{centroid, quadrature};

    fn small_corpus(m: usize, seed: u64) -> Corpus {
        let g = Grid2D::square(4.0, 40).unwrap();
        let ou = DriftSpec::linear("ou", [[-1.0, 0.0], [0.0, -1.0]]);
        build_corpus(&ou, SolverConfig::new(1e-4, 2.0, 0.0), m, seed, &g, 0.0015, 0.0016).unwrap()
    }

    #[test]
    fn means_stay_in_box_and_average_out() {
        let m = 4000;
        let means = sample_means(m, 11);
        assert!(means.iter().all(|&(x, y)| x.abs() <= MEAN_BOX && y.abs() <= MEAN_BOX));
        let (sx, sy) = means.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        // a uniform on [-2, 2] has standard deviation 2/sqrt(3)
        let tol = 3.0 * (2.0 / 3f64.sqrt()) / (m as f64).sqrt();
        assert!((sx / m as f64).abs() < tol && (sy / m as f64).abs() < tol);
    }

    #[test]
    fn corpus_is_deterministic_and_normalised() {
        let a = small_corpus(3, 5);
        let b = small_corpus(3, 5);
        assert_eq!(encode_corpus(&a).unwrap(), encode_corpus(&b).unwrap());
        for p in &a.pairs {
            assert!((quadrature(&p.f1) - 1.0).abs() < 1e-10);
        }
        assert_ne!(a, small_corpus(3, 6));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let g = Grid2D::square(4.0, 10).unwrap();
        let r = build_corpus(&DriftSpec::zero(), SolverConfig::new(1e-4, 0.0, 0.0), 0, 1, &g, 0.001, 0.002);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn reflect_indices() {
        let n = 4;
        let got: Vec<usize> = (-5..9).map(|j| reflect(j, n)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
    }

    #[test]
    fn zero_noise_is_identity() {
        let c = small_corpus(2, 1);
        let p = perturb_gaussian(&c, 0.0).unwrap();
        assert_eq!(encode_corpus(&p).unwrap(), encode_corpus(&c).unwrap());
    }

    #[test]
    fn smoothing_preserves_mass_and_constants() {
        let g = Grid2D::square(4.0, 80).unwrap();
        let f = gaussian_density(&g, (3.7, -3.8), 0.01).unwrap();
        for var in [0.01, 0.1, 2.0, 50.0] {
            let s = smooth_field(&f, var).unwrap();
            assert!((quadrature(&s) - quadrature(&f)).abs() < 1e-12, "variance {var}");
        }
        let c = ScalarField::constant(g, 2.5);
        let s = smooth_field(&c, 0.1).unwrap();
        assert!(s.values().iter().all(|v| (v - 2.5).abs() < 1e-13));
    }

    #[test]
    fn smoothing_a_gaussian_adds_variances() {
        let g = Grid2D::square(4.0, 80).unwrap();
        let f = gaussian_density(&g, (0.4, -0.2), 0.01).unwrap();
        let s = smooth_field(&f, 0.1).unwrap();
        let expected = gaussian_density(&g, (0.4, -0.2), 0.11).unwrap();
        let err = s.values().iter().zip(expected.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "sup error {err}");
        let (cx, cy) = centroid(&s);
        assert!((cx - 0.4).abs() < 1e-6 && (cy + 0.2).abs() < 1e-6);
    }

    #[test]
    fn corpus_file_roundtrip() {
        let c = perturb_gaussian(&small_corpus(2, 9), 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_corpus(&c, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.noise_level, 0.1);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = encode_corpus(&small_corpus(1, 2)).unwrap();
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(
            decode_corpus(truncated),
            Err(Error::ChecksumMismatch { .. }) | Err(Error::FormatVersionMismatch(_))
        ));
        let mut flipped = bytes.clone();
        let k = flipped.len() - 100;
        flipped[k] ^= 1;
        assert!(matches!(decode_corpus(&flipped), Err(Error::ChecksumMismatch { .. })));
        let mut wrong = bytes;
        wrong[20] = b'2';
        assert!(matches!(decode_corpus(&wrong), Err(Error::FormatVersionMismatch(_))));
        assert!(matches!(decode_corpus(b"DRIFT"), Err(Error::FormatVersionMismatch(_))));
    }
}
