//! Challenge sampling, proof generation and bundle verification, free of
//! any transport.

use std::fmt;

use ebtree_core::digest::{sha256, TAG_POSITION};
use ebtree_core::filepipe::FileManifest;
use ebtree_core::versionstore::VersionedTree;
use ebtree_core::{verify_proof_at, Digest32, Seed};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::wire::{Challenge, ProofBundle, NONCE_LEN};

pub const DEFAULT_K: u32 = 300;
/// Largest `k` a server will answer in one bundle.
pub const MAX_K: u32 = 100_000;

pub fn fresh_nonce() -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut n);
    n
}

/// `p_i = 1 + (H(0x04 || r || u32_be(i)) mod n)` for `i = 1..=k`, reading
/// the digest as a big-endian integer. Repeats are allowed.
pub fn derive_positions(nonce: &[u8], k: u32, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(ebtree_core::Error::Range { pos: 1, max: 0 }.into());
    }
    Ok((1..=k)
        .map(|i| {
            let h = sha256(&[&[TAG_POSITION], nonce, &i.to_be_bytes()]);
            1 + mod_be(h.as_bytes(), n)
        })
        .collect())
}

fn mod_be(bytes: &[u8], n: u64) -> u64 {
    let n = n as u128;
    bytes.iter().fold(0u128, |acc, &b| ((acc << 8) | b as u128) % n) as u64
}

/// Server side of a challenge: proofs for every derived position of the
/// requested version. Never writes.
pub fn handle_challenge(vt: &VersionedTree, ch: &Challenge) -> Result<ProofBundle> {
    let Some(nonce) = ch.nonce else {
        return Err(ebtree_core::Error::Codec("challenge without a nonce".into()).into());
    };
    if ch.k == 0 || ch.k > MAX_K {
        return Err(ebtree_core::Error::Codec(format!("k must be in 1..={MAX_K}, got {}", ch.k)).into());
    }
    let rec = match ch.version {
        Some(v) => vt.record(v)?,
        None => vt.latest(),
    };
    let tree = vt.load_version(rec.version)?;
    let positions = derive_positions(&nonce, ch.k, tree.len())?;
    let proofs = positions.iter().map(|&p| vt.prove_in(&tree, p)).collect::<ebtree_core::Result<_>>()?;
    Ok(ProofBundle {
        file_id: ch.file_id,
        version: rec.version,
        root_digest: rec.root_digest,
        block_count: tree.len(),
        proofs,
    })
}

/// Outcome of one audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass { k: u32, version: u64 },
    Fail(Failure),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Failure {
    /// Proofs at these ranks did not verify.
    #[serde(rename_all = "camelCase")]
    Integrity { ranks: Vec<u64>, version: u64 },
    /// The server proved a different version than the auditor expects.
    #[serde(rename_all = "camelCase")]
    VersionMismatch {
        expected_version: u64,
        expected_root: Digest32,
        server_version: u64,
        server_root: Digest32,
    },
    Transport { detail: String },
    Server { detail: String },
    /// The bundle does not answer the challenge that was sent.
    Protocol { detail: String },
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass { k, version } => write!(f, "PASS k={k} version={version}"),
            Verdict::Fail(Failure::Integrity { ranks, version }) => {
                let ranks: Vec<String> = ranks.iter().map(u64::to_string).collect();
                write!(f, "FAIL integrity version={version} ranks={}", ranks.join(","))
            }
            Verdict::Fail(Failure::VersionMismatch { expected_version, server_version, .. }) => {
                write!(f, "FAIL version-mismatch expected={expected_version} server={server_version}")
            }
            Verdict::Fail(Failure::Transport { detail }) => write!(f, "FAIL transport {detail}"),
            Verdict::Fail(Failure::Server { detail }) => write!(f, "FAIL server {detail}"),
            Verdict::Fail(Failure::Protocol { detail }) => write!(f, "FAIL protocol {detail}"),
        }
    }
}

/// Auditor side: checks `bundle` answers challenge `(nonce, k)` for the
/// version the manifest describes, then verifies each proof.
pub fn verify_bundle(manifest: &FileManifest, seed: &Seed, nonce: &[u8], k: u32, bundle: &ProofBundle) -> Verdict {
    if bundle.file_id != manifest.file_id {
        return Verdict::Fail(Failure::Protocol { detail: "bundle is for another file".into() });
    }
    if bundle.version != manifest.version
        || bundle.root_digest != manifest.root_digest
        || bundle.block_count != manifest.block_count
    {
        return Verdict::Fail(Failure::VersionMismatch {
            expected_version: manifest.version,
            expected_root: manifest.root_digest,
            server_version: bundle.version,
            server_root: bundle.root_digest,
        });
    }
    let positions = match derive_positions(nonce, k, manifest.block_count) {
        Ok(p) => p,
        Err(e) => return Verdict::Fail(Failure::Protocol { detail: e.to_string() }),
    };
    if bundle.proofs.len() != positions.len() {
        return Verdict::Fail(Failure::Protocol {
            detail: format!("expected {} proofs, got {}", positions.len(), bundle.proofs.len()),
        });
    }
    let mut failed: Vec<u64> = positions
        .iter()
        .zip(&bundle.proofs)
        .filter(|(&p, proof)| verify_proof_at(proof, seed, &manifest.root_digest, p).is_err())
        .map(|(&p, _)| p)
        .collect();
    if failed.is_empty() {
        return Verdict::Pass { k, version: manifest.version };
    }
    failed.sort_unstable();
    failed.dedup();
    Verdict::Fail(Failure::Integrity { ranks: failed, version: manifest.version })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_file_always_samples_rank_one() {
        assert_eq!(derive_positions(&[9; 16], 50, 1).unwrap(), vec![1; 50]);
        assert!(derive_positions(&[9; 16], 5, 0).is_err());
    }

    #[test]
    fn positions_are_deterministic_and_in_range() {
        let a = derive_positions(&[3; 16], 300, 656).unwrap();
        assert_eq!(a, derive_positions(&[3; 16], 300, 656).unwrap());
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|&p| (1..=656).contains(&p)));
        assert_ne!(a, derive_positions(&[4; 16], 300, 656).unwrap());
    }

    #[test]
    fn big_endian_reduction() {
        // Oracle: the first position by hand, via u128 chunks of the digest.
        let h = sha256(&[&[TAG_POSITION], &[0u8; 16], &1u32.to_be_bytes()]);
        let hi = u128::from_be_bytes(h.0[..16].try_into().unwrap());
        let lo = u128::from_be_bytes(h.0[16..].try_into().unwrap());
        let n = 1_000_003u128;
        // (hi * 2^128 + lo) mod n, with 2^128 mod n computed as (2^64 mod n)^2.
        let two64 = (1u128 << 64) % n;
        let two128 = two64 * two64 % n;
        let want = ((hi % n) * two128 % n + lo % n) % n;
        assert_eq!(derive_positions(&[0; 16], 1, n as u64).unwrap(), vec![1 + want as u64]);
    }

    #[test]
    fn uniform_over_a_hundred_bins() {
        // Each bin count is Binomial(10^5, 1/100): mean 1000, sd ~ 31.5.
        // Across 100 bins a 3 sd band is breached by chance about a quarter
        // of the time, so bins get 4 sd and the chi-square test decides.
        let draws = derive_positions(&[0x42; 16], 100_000, 100).unwrap();
        let mut bins = [0u32; 100];
        for p in draws {
            bins[p as usize - 1] += 1;
        }
        let sd = (100_000f64 * 0.01 * 0.99).sqrt();
        for (i, &c) in bins.iter().enumerate() {
            assert!((c as f64 - 1000.0).abs() <= 4.0 * sd, "bin {i} holds {c}");
        }
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        // 99.9th percentile of chi-square with 99 degrees of freedom.
        assert!(chi2 < 148.2, "chi2 {chi2}");
    }
}
