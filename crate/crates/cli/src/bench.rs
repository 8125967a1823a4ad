//! Benchmark harness comparing the EB-tree against static Merkle trees.
//!
//! Every (implementation, size) pair gets a fresh in-memory store. Timings
//! are wall clock, warm-up trials are discarded, and each metric is
//! reported as mean and 95th percentile in milliseconds.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ebtree_auditnet::audit::{fresh_nonce, handle_challenge, verify_bundle};
use ebtree_auditnet::wire::Challenge;
use ebtree_core::baselines::{mht_verify, Mht};
use ebtree_core::filepipe::FileManifest;
use ebtree_core::versionstore::{Mutation, VersionedTree};
use ebtree_core::{block_digest, Digest32, Seed};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

pub const CSV_HEADER: &str = "metric,impl,blocks,block_size,t,mean_ms,p95_ms,trials";
pub const AUDIT_K: u32 = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Impl {
    EbTree,
    Mht,
    Mht8,
}

impl Impl {
    pub const ALL: [Impl; 3] = [Impl::EbTree, Impl::Mht, Impl::Mht8];
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Impl::EbTree => "ebtree",
            Impl::Mht => "mht",
            Impl::Mht8 => "mht8",
        })
    }
}

impl FromStr for Impl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ebtree" => Ok(Impl::EbTree),
            "mht" => Ok(Impl::Mht),
            "mht8" => Ok(Impl::Mht8),
            _ => Err(format!("unknown implementation {s:?} (expected ebtree, mht or mht8)")),
        }
    }
}

/// A workload size: a byte count (`64MB`, `1GB`, `512KB`) or a bare block
/// count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Size {
    Bytes(u64),
    Blocks(u64),
}

impl Size {
    pub fn blocks(&self, block_size: usize) -> u64 {
        match *self {
            Size::Bytes(b) => b.div_ceil(block_size as u64).max(1),
            Size::Blocks(n) => n,
        }
    }
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim().to_ascii_uppercase();
        let bad = || format!("bad size {s:?}");
        for (suffix, mult) in [("KB", 1u64 << 10), ("MB", 1 << 20), ("GB", 1 << 30)] {
            if let Some(num) = t.strip_suffix(suffix) {
                let n: u64 = num.trim().parse().map_err(|_| bad())?;
                return Ok(Size::Bytes(n * mult));
            }
        }
        let n: u64 = t.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok(Size::Blocks(n))
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub impls: Vec<Impl>,
    pub sizes: Vec<Size>,
    pub block_size: usize,
    pub t: usize,
    pub trials: usize,
    pub warmup: usize,
    pub rng_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            impls: Impl::ALL.to_vec(),
            sizes: vec![Size::Bytes(32 << 20), Size::Bytes(64 << 20)],
            block_size: 16 * 1024,
            t: ebtree_core::DEFAULT_MIN_DEGREE,
            trials: 10,
            warmup: 2,
            rng_seed: 2024,
        }
    }
}

/// Wall-clock samples in milliseconds.
#[derive(Clone, Debug, Default)]
pub struct Samples(pub Vec<f64>);

impl Samples {
    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len().max(1) as f64
    }

    /// Nearest-rank 95th percentile.
    pub fn p95(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        v[rank - 1]
    }

    pub fn sd(&self) -> f64 {
        let n = self.0.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.0.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Runs `f` `warmup + trials` times and keeps the last `trials` timings.
pub fn time_trials<F: FnMut()>(warmup: usize, trials: usize, mut f: F) -> Samples {
    for _ in 0..warmup {
        f();
    }
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        f();
        out.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Samples(out)
}

#[derive(Clone, Debug)]
pub struct Row {
    pub metric: &'static str,
    pub imp: Impl,
    pub blocks: u64,
    pub block_size: usize,
    pub t: usize,
    pub samples: Samples,
}

impl Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.4},{}",
            self.metric,
            self.imp,
            self.blocks,
            self.block_size,
            self.t,
            self.samples.mean(),
            self.samples.p95(),
            self.samples.0.len()
        )
    }
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

/// Deterministic pseudo-random block contents.
pub fn synthetic_blocks(n: u64, block_size: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut b = vec![0u8; block_size];
            rng.fill_bytes(&mut b);
            b
        })
        .collect()
}

fn digests(seed: &Seed, blocks: &[Vec<u8>]) -> Vec<(Vec<u8>, Digest32)> {
    blocks.iter().map(|b| (b.clone(), block_digest(seed, b))).collect()
}

pub fn run(cfg: &BenchConfig) -> Vec<Row> {
    let mut rows = Vec::new();
    for size in &cfg.sizes {
        let n = size.blocks(cfg.block_size);
        let blocks = synthetic_blocks(n, cfg.block_size, cfg.rng_seed);
        for &imp in &cfg.impls {
            let samples = match imp {
                Impl::EbTree => bench_ebtree(cfg, &blocks),
                Impl::Mht => bench_mht(cfg, &blocks, 2),
                Impl::Mht8 => bench_mht(cfg, &blocks, 8),
            };
            for (metric, s) in samples {
                rows.push(Row { metric, imp, blocks: n, block_size: cfg.block_size, t: cfg.t, samples: s });
            }
        }
    }
    rows
}

type Metrics = Vec<(&'static str, Samples)>;

fn bench_ebtree(cfg: &BenchConfig, blocks: &[Vec<u8>]) -> Metrics {
    let seed = Seed([0x5e; 32]);
    let mut rng = StdRng::seed_from_u64(cfg.rng_seed ^ 1);
    let creation = time_trials(cfg.warmup.min(1), cfg.trials, || {
        let pairs = digests(&seed, blocks);
        std::hint::black_box(VersionedTree::in_memory(cfg.t, &pairs).unwrap());
    });
    let vt = VersionedTree::in_memory(cfg.t, &digests(&seed, blocks)).unwrap();
    let fresh = blocks[0].clone();

    let retrieval = time_trials(cfg.warmup, cfg.trials, || {
        let n = vt.tree().unwrap().len();
        std::hint::black_box(vt.prove(None, rng.gen_range(1..=n)).unwrap());
    });
    let update = time_trials(cfg.warmup, cfg.trials, || {
        let n = vt.tree().unwrap().len();
        let d = block_digest(&seed, &fresh);
        vt.apply(None, Mutation::Update { position: rng.gen_range(1..=n), block: fresh.clone(), digest: d }).unwrap();
    });
    let insert = time_trials(cfg.warmup, cfg.trials, || {
        let n = vt.tree().unwrap().len();
        let d = block_digest(&seed, &fresh);
        vt.apply(None, Mutation::Insert { position: rng.gen_range(1..=n + 1), block: fresh.clone(), digest: d }).unwrap();
    });
    let delete = time_trials(cfg.warmup, cfg.trials, || {
        let n = vt.tree().unwrap().len();
        vt.apply(None, Mutation::Delete { position: rng.gen_range(1..=n) }).unwrap();
    });
    let audit = time_trials(cfg.warmup, cfg.trials, || {
        assert!(ebtree_audit(&vt, &seed, AUDIT_K));
    });
    vec![
        ("creation", creation),
        ("retrieval", retrieval),
        ("update", update),
        ("insert", insert),
        ("delete", delete),
        ("audit", audit),
    ]
}

/// One full challenge/verify round against the latest version.
pub fn ebtree_audit(vt: &VersionedTree, seed: &Seed, k: u32) -> bool {
    let latest = vt.latest();
    let tree = vt.tree().unwrap();
    let manifest = FileManifest {
        file_id: [0; 16],
        block_size: 0,
        block_count: tree.len(),
        version: latest.version,
        root_digest: latest.root_digest,
        commit: latest.commit,
        seed_fingerprint: seed.fingerprint(),
        op_counter: 0,
    };
    let nonce = fresh_nonce();
    let ch = Challenge { file_id: [0; 16], version: None, nonce: Some(nonce), k };
    let bundle = handle_challenge(vt, &ch).unwrap();
    verify_bundle(&manifest, seed, &nonce, k, &bundle).passed()
}

/// The static baseline keeps its blocks beside the tree; inserts and
/// deletes rebuild it, updates recompute one path.
fn bench_mht(cfg: &BenchConfig, blocks: &[Vec<u8>], arity: usize) -> Metrics {
    let seed = Seed([0x5e; 32]);
    let mut rng = StdRng::seed_from_u64(cfg.rng_seed ^ 2);
    let creation = time_trials(cfg.warmup.min(1), cfg.trials, || {
        let leaves: Vec<Digest32> = blocks.iter().map(|b| block_digest(&seed, b)).collect();
        std::hint::black_box(Mht::build(&leaves, arity).unwrap());
    });
    let mut store: Vec<Vec<u8>> = blocks.to_vec();
    let mut leaves: Vec<Digest32> = blocks.iter().map(|b| block_digest(&seed, b)).collect();
    let mut mht = Mht::build(&leaves, arity).unwrap();
    let fresh = blocks[0].clone();

    let retrieval = time_trials(cfg.warmup, cfg.trials, || {
        let i = rng.gen_range(0..store.len());
        std::hint::black_box((store[i].clone(), mht.prove(i).unwrap()));
    });
    let update = time_trials(cfg.warmup, cfg.trials, || {
        let i = rng.gen_range(0..store.len());
        store[i] = fresh.clone();
        leaves[i] = block_digest(&seed, &fresh);
        mht.update_leaf(i, leaves[i]).unwrap();
    });
    let insert = time_trials(cfg.warmup, cfg.trials, || {
        let i = rng.gen_range(0..=store.len());
        store.insert(i, fresh.clone());
        leaves.insert(i, block_digest(&seed, &fresh));
        mht = Mht::build(&leaves, arity).unwrap();
    });
    let delete = time_trials(cfg.warmup, cfg.trials, || {
        let i = rng.gen_range(0..store.len());
        store.remove(i);
        leaves.remove(i);
        mht = Mht::build(&leaves, arity).unwrap();
    });
    let audit = time_trials(cfg.warmup, cfg.trials, || {
        let root = mht.root();
        for _ in 0..AUDIT_K {
            let i = rng.gen_range(0..store.len());
            let proof = mht.prove(i).unwrap();
            let leaf = block_digest(&seed, &store[i]);
            assert!(mht_verify(&proof, arity, &leaf, &root));
        }
    });
    vec![
        ("creation", creation),
        ("retrieval", retrieval),
        ("update", update),
        ("insert", insert),
        ("delete", delete),
        ("audit", audit),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!("64MB".parse::<Size>().unwrap(), Size::Bytes(64 << 20));
        assert_eq!("1gb".parse::<Size>().unwrap(), Size::Bytes(1 << 30));
        assert_eq!("656".parse::<Size>().unwrap(), Size::Blocks(656));
        assert!("0".parse::<Size>().is_err());
        assert!("12XB".parse::<Size>().is_err());
        assert_eq!(Size::Bytes(1 << 30).blocks(16 * 1024), 65_536);
        assert_eq!(Size::Bytes(40_000).blocks(16_384), 3);
    }

    #[test]
    fn percentile_and_spread() {
        let s = Samples((1..=20).map(f64::from).collect());
        assert_eq!(s.mean(), 10.5);
        assert_eq!(s.p95(), 19.0);
        assert!((s.sd() - 5.916).abs() < 1e-3);
        assert_eq!(Samples(vec![]).p95(), 0.0);
    }

    #[test]
    fn small_run_emits_every_metric() {
        let cfg = BenchConfig {
            sizes: vec![Size::Blocks(64)],
            block_size: 256,
            trials: 3,
            warmup: 1,
            ..BenchConfig::default()
        };
        let rows = run(&cfg);
        assert_eq!(rows.len(), 18);
        let csv = to_csv(&rows);
        assert!(csv.starts_with("metric,impl,blocks,block_size,t,mean_ms,p95_ms,trials\n"));
        assert!(csv.contains("\ninsert,mht8,64,256,8,"));
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8 && l.ends_with(",3")));
    }
}
