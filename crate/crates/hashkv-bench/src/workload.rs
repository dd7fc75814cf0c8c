//! Declarative workload phases and their deterministic generators: hashed
//! insertion order for loads, Zipfian and latest distributions for updates
//! and reads, and fixed or skewed pair-size schedules.

use hashkv::record::fnv1a64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Deterministic key generator: key `i` is the hex digest of FNV-1a over
/// (seed, i), extended with a second hash and cut to the configured length,
/// so inserts arrive in pseudo-random (hashed) order.
#[derive(Debug, Clone, Copy)]
pub struct KeyGen {
    pub seed: u64,
    pub key_len: usize,
}

impl KeyGen {
    pub fn new(seed: u64, key_len: usize) -> KeyGen {
        assert!((1..=64).contains(&key_len));
        KeyGen { seed, key_len }
    }

    pub fn key(&self, i: u64) -> Vec<u8> {
        let mut buf = [0u8; 16];
        buf[..8].copy_from_slice(&self.seed.to_le_bytes());
        buf[8..].copy_from_slice(&i.to_le_bytes());
        let a = fnv1a64(&buf);
        buf[..8].copy_from_slice(&(self.seed + 1).to_le_bytes());
        let b = fnv1a64(&buf);
        let hex = format!("{a:016x}{b:016x}{:016x}", a.rotate_left(32) ^ b);
        let mut key = hex.into_bytes();
        key.truncate(self.key_len);
        key
    }
}

/// Zipfian sampler over ranks `0..n` by inverse CDF lookup. Exact with
/// respect to the Zipf pmf, rejection-free, and deterministic under a seeded
/// generator.
#[derive(Debug, Clone)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(n: usize, theta: f64) -> Zipf {
        assert!(n >= 1);
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0f64;
        for i in 1..=n {
            acc += 1.0 / (i as f64).powf(theta);
            cdf.push(acc);
        }
        Zipf { cdf }
    }

    pub fn population(&self) -> usize {
        self.cdf.len()
    }

    pub fn zeta(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    /// 0-based rank: rank 0 is the most popular.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen::<f64>() * self.zeta();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }

    pub fn pmf(&self, rank: usize) -> f64 {
        let prev = if rank == 0 { 0.0 } else { self.cdf[rank - 1] };
        (self.cdf[rank] - prev) / self.zeta()
    }
}

/// Key distribution of a phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyDist {
    /// Sequential over the hashed key space (the load order).
    HashedOrder,
    Zipfian { theta: f64 },
    /// Skew toward the most recently inserted keys.
    Latest { theta: f64 },
}

/// Total encoded pair size (8-byte header + key + value) per operation.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSize {
    Fixed(u32),
    /// Each key keeps a stable size class chosen by its index.
    PerKeyClasses(Vec<u32>),
    /// Size class drawn per insert with a Zipf distribution over the class
    /// list (ascending: the smallest class is the most frequent).
    ZipfClasses { classes: Vec<u32>, theta: f64 },
}

impl PairSize {
    pub fn max(&self) -> u32 {
        match self {
            PairSize::Fixed(s) => *s,
            PairSize::PerKeyClasses(c) => *c.iter().max().unwrap(),
            PairSize::ZipfClasses { classes, .. } => *classes.iter().max().unwrap(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            PairSize::Fixed(s) => *s as f64,
            PairSize::PerKeyClasses(c) => c.iter().map(|&s| s as f64).sum::<f64>() / c.len() as f64,
            PairSize::ZipfClasses { classes, theta } => {
                let z = Zipf::new(classes.len(), *theta);
                classes.iter().enumerate().map(|(i, &s)| z.pmf(i) * s as f64).sum()
            }
        }
    }
}

/// Operation mix fractions; they must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpMix {
    pub insert: f64,
    pub update: f64,
    pub read: f64,
    pub read_modify_write: f64,
    pub scan: f64,
}

impl OpMix {
    pub fn updates_only() -> OpMix {
        OpMix { insert: 0.0, update: 1.0, read: 0.0, read_modify_write: 0.0, scan: 0.0 }
    }

    pub fn inserts_only() -> OpMix {
        OpMix { insert: 1.0, update: 0.0, read: 0.0, read_modify_write: 0.0, scan: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sum = self.insert + self.update + self.read + self.read_modify_write + self.scan;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("op mix fractions sum to {sum}, not 1"));
        }
        Ok(())
    }
}

/// YCSB core workload mixes (workload E is replaced by the scan benchmark).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YcsbWorkload {
    A,
    B,
    C,
    D,
    F,
}

impl YcsbWorkload {
    pub fn mix(self) -> OpMix {
        match self {
            YcsbWorkload::A => OpMix {
                insert: 0.0,
                update: 0.5,
                read: 0.5,
                read_modify_write: 0.0,
                scan: 0.0,
            },
            YcsbWorkload::B => OpMix {
                insert: 0.0,
                update: 0.05,
                read: 0.95,
                read_modify_write: 0.0,
                scan: 0.0,
            },
            YcsbWorkload::C => OpMix {
                insert: 0.0,
                update: 0.0,
                read: 1.0,
                read_modify_write: 0.0,
                scan: 0.0,
            },
            YcsbWorkload::D => OpMix {
                insert: 0.05,
                update: 0.0,
                read: 0.95,
                read_modify_write: 0.0,
                scan: 0.0,
            },
            YcsbWorkload::F => OpMix {
                insert: 0.0,
                update: 0.0,
                read: 0.5,
                read_modify_write: 0.5,
                scan: 0.0,
            },
        }
    }

    pub fn dist(self) -> KeyDist {
        match self {
            YcsbWorkload::D => KeyDist::Latest { theta: 0.99 },
            _ => KeyDist::Zipfian { theta: 0.99 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            YcsbWorkload::A => "A",
            YcsbWorkload::B => "B",
            YcsbWorkload::C => "C",
            YcsbWorkload::D => "D",
            YcsbWorkload::F => "F",
        }
    }
}

impl std::str::FromStr for YcsbWorkload {
    type Err = String;
    fn from_str(s: &str) -> Result<YcsbWorkload, String> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(YcsbWorkload::A),
            "B" => Ok(YcsbWorkload::B),
            "C" => Ok(YcsbWorkload::C),
            "D" => Ok(YcsbWorkload::D),
            "F" => Ok(YcsbWorkload::F),
            other => Err(format!("unknown YCSB workload {other:?} (supported: A B C D F)")),
        }
    }
}

/// One benchmark phase.
#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub name: String,
    pub mix: OpMix,
    pub dist: KeyDist,
    pub pair_size: PairSize,
    /// Stop criterion: total logical bytes written (insert/update/rmw)...
    pub volume_bytes: Option<u64>,
    /// ...or a fixed operation count (used by the YCSB phases).
    pub op_count: Option<u64>,
    /// Pairs per scan request.
    pub scan_count: usize,
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.mix.validate()?;
        if self.volume_bytes.is_none() && self.op_count.is_none() {
            return Err(format!("phase {} has neither a volume nor an op count", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub key_len: usize,
    pub phases: Vec<PhaseSpec>,
}

pub fn value_len(pair_size: u32, key_len: usize) -> usize {
    (pair_size as usize).saturating_sub(8 + key_len)
}

/// Deterministic value fill for (key index, version counter).
pub fn value_bytes(len: usize, key_index: u64, version: u64) -> Vec<u8> {
    let fill = (key_index
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(version.wrapping_mul(0x2545f4914f6cdd1d))
        >> 16) as u8;
    vec![fill; len]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn keys_are_fixed_width_and_distinct() {
        let gen = KeyGen::new(42, 24);
        let mut seen = std::collections::HashSet::new();
        for i in 0..200_000u64 {
            let k = gen.key(i);
            assert_eq!(k.len(), 24);
            assert!(seen.insert(k), "collision at {i}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let a = KeyGen::new(7, 24);
        let b = KeyGen::new(7, 24);
        for i in 0..1000 {
            assert_eq!(a.key(i), b.key(i));
        }
        let c = KeyGen::new(8, 24);
        assert_ne!(a.key(0), c.key(0));
    }

    /// Wilson-Hilferty approximation of the chi-square critical value.
    fn chi2_critical(df: f64, z_alpha: f64) -> f64 {
        df * (1.0 - 2.0 / (9.0 * df) + z_alpha * (2.0 / (9.0 * df)).sqrt()).powi(3)
    }

    #[test]
    fn zipf_fits_pmf_by_chi_square() {
        // 10^6 draws at theta = 0.99 must fit the Zipf pmf at the 1% level.
        let n = 1000usize;
        let zipf = Zipf::new(n, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 1_000_000u64;
        let mut counts = vec![0u64; n];
        for _ in 0..draws {
            counts[zipf.sample(&mut rng)] += 1;
        }
        let mut chi2 = 0.0;
        for (rank, &c) in counts.iter().enumerate() {
            let expected = zipf.pmf(rank) * draws as f64;
            assert!(expected >= 5.0, "cell {rank} too thin for chi-square");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        let critical = chi2_critical((n - 1) as f64, 2.326348); // alpha = 0.01
        assert!(chi2 < critical, "chi2 {chi2:.1} >= critical {critical:.1}");
    }

    #[test]
    fn zipf_head_is_heavy() {
        let zipf = Zipf::new(100_000, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = 0u64;
        let draws = 100_000;
        for _ in 0..draws {
            if zipf.sample(&mut rng) < 1000 {
                head += 1;
            }
        }
        // Top 1% of ranks should draw roughly half the mass at theta 0.99.
        assert!(head > draws / 3, "head draws: {head}");
    }

    #[test]
    fn mix_fractions_must_sum_to_one() {
        let mut mix = OpMix::updates_only();
        assert!(mix.validate().is_ok());
        mix.read = 0.5;
        assert!(mix.validate().is_err());
        for w in [YcsbWorkload::A, YcsbWorkload::B, YcsbWorkload::C, YcsbWorkload::D, YcsbWorkload::F] {
            w.mix().validate().unwrap();
        }
    }

    #[test]
    fn zipf_class_mean_prefers_small_sizes() {
        let sizes = PairSize::ZipfClasses { classes: vec![40, 1024, 8192], theta: 0.99 };
        let mean = sizes.mean();
        assert!(mean < 2000.0, "mean {mean}");
        assert!(mean > 40.0);
    }
}
