//! Benchmark bundles: netlists, labels, cone metadata, splits and a digest
//! manifest, written atomically and reloadable with verification.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::equiv::{Verdict, VerdictStatus};
use crate::inserter::{apply, InsertError, InsertionPlan, LabelSet};
use crate::miner::ConeMeta;
use crate::netlist::{parse_structural_verilog, write_structural_verilog, Netlist, NetlistError};

pub const BUNDLE_FILES: [&str; 5] = ["golden.v", "trojan.v", "labels.csv", "cones.json", "splits.json"];
pub const MANIFEST: &str = "manifest.json";
pub const TOOL_VERSION: &str = concat!("htgen ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.15, 0.15);

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("{0} cones; at least 3 are needed for a three-way split")]
    TooFewCones(usize),
    #[error("nothing to export: no accepted instances")]
    Empty,
    #[error("cone `{0}` carries a mismatch verdict and cannot be exported")]
    Mismatch(String),
    #[error("cone `{0}` has no verdicts")]
    Unverified(String),
    #[error("digest mismatch for `{0}`")]
    Digest(String),
    #[error("bundle is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Insert(#[from] InsertError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn check_ratios(r: (f64, f64, f64)) -> Result<(), ExportError> {
    let ok = r.0 > 0.0 && r.1 > 0.0 && r.2 > 0.0 && (r.0 + r.1 + r.2 - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(ExportError::BadRatios(r))
    }
}

/// Seeded partition; val and test sizes are rounded, train takes the rest.
pub fn make_splits(cone_ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<Splits, ExportError> {
    check_ratios(ratios)?;
    if cone_ids.len() < 3 {
        return Err(ExportError::TooFewCones(cone_ids.len()));
    }
    Ok(split_unchecked(cone_ids, ratios, seed))
}

fn split_unchecked(cone_ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Splits {
    let mut ids = cone_ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_val = (ratios.1 * n as f64).round() as usize;
    let n_test = ((ratios.2 * n as f64).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let mut take = |k: usize| {
        let mut v: Vec<String> = ids.drain(..k).collect();
        v.sort();
        v
    };
    let train = take(n_train);
    let val = take(n_val);
    let test = take(n_test);
    Splits { seed, train, val, test }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedVerdict {
    pub check: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSeeds {
    pub mining: u64,
    pub template: u64,
}

/// One insertion that passed every check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedInstance {
    pub plan: InsertionPlan,
    pub anchor: String,
    pub meta: ConeMeta,
    pub seeds: InstanceSeeds,
    pub verdicts: Vec<NamedVerdict>,
    pub stealth_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeRecord {
    pub cone_id: String,
    pub anchor: String,
    pub template_id: String,
    pub seeds: InstanceSeeds,
    pub meta: ConeMeta,
    pub verdicts: Vec<NamedVerdict>,
    pub victim_net: String,
    pub trigger_net: String,
    pub payload_net: String,
    pub gate_delta: usize,
    pub new_cells: Vec<String>,
    pub trigger_nets: Vec<String>,
    pub payload_nets: Vec<String>,
    pub stealth_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConesFile {
    /// `proxy` unless detector feedback replaced the labels.
    pub stealth_label_source: String,
    pub cones: Vec<ConeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub digest_algorithm: String,
    pub files: BTreeMap<String, String>,
    /// SHA-256 over `name  digest\n` lines in name order.
    pub bundle_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkBundle {
    pub dir: PathBuf,
    pub golden: Netlist,
    pub trojan: Netlist,
    pub labels: LabelSet,
    pub cones: ConesFile,
    pub splits: Splits,
    pub manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_for(files: &BTreeMap<String, Vec<u8>>) -> Manifest {
    let digests: BTreeMap<String, String> = files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect();
    let listing: String = digests.iter().map(|(k, d)| format!("{k}  {d}\n")).collect();
    Manifest {
        tool_version: TOOL_VERSION.to_string(),
        digest_algorithm: "sha256".to_string(),
        bundle_digest: sha256_hex(listing.as_bytes()),
        files: digests,
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, ExportError> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Applies every plan to `base` and writes the bundle into `out_dir`,
/// replacing it only once all files are complete.
pub fn export_bundle(
    base: &Netlist,
    instances: &[AcceptedInstance],
    ratios: (f64, f64, f64),
    split_seed: u64,
    out_dir: &Path,
) -> Result<BenchmarkBundle, ExportError> {
    check_ratios(ratios)?;
    if instances.is_empty() {
        return Err(ExportError::Empty);
    }
    for inst in instances {
        if inst.verdicts.is_empty() {
            return Err(ExportError::Unverified(inst.plan.cone_id.clone()));
        }
        if inst.verdicts.iter().any(|v| v.verdict.status == VerdictStatus::Mismatch) {
            return Err(ExportError::Mismatch(inst.plan.cone_id.clone()));
        }
    }
    let mut trojan = base.clone();
    for inst in instances {
        trojan = apply(&trojan, &inst.plan)?.0;
    }
    let labels = LabelSet::from_plans(&trojan, instances.iter().map(|i| &i.plan));
    let ids: Vec<String> = instances.iter().map(|i| i.plan.cone_id.clone()).collect();
    let splits = if ids.len() < 3 {
        let mut train = ids.clone();
        train.sort();
        Splits {
            seed: split_seed,
            train,
            val: Vec::new(),
            test: Vec::new(),
        }
    } else {
        make_splits(&ids, ratios, split_seed)?
    };
    let cones = ConesFile {
        stealth_label_source: "proxy".to_string(),
        cones: instances
            .iter()
            .map(|i| {
                let rw = &i.plan.rewrite;
                ConeRecord {
                    cone_id: i.plan.cone_id.clone(),
                    anchor: i.anchor.clone(),
                    template_id: rw.template_id.clone(),
                    seeds: i.seeds.clone(),
                    meta: i.meta.clone(),
                    verdicts: i.verdicts.clone(),
                    victim_net: rw.victim_net.clone(),
                    trigger_net: rw.trigger_net.clone(),
                    payload_net: rw.payload_net.clone(),
                    gate_delta: i.plan.gate_delta,
                    new_cells: rw.new_cells.iter().map(|c| c.name.clone()).collect(),
                    trigger_nets: rw.trigger_nets.clone(),
                    payload_nets: rw.payload_nets.clone(),
                    stealth_label: i.stealth_label,
                }
            })
            .collect(),
    };

    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    files.insert("golden.v".into(), write_structural_verilog(base).into_bytes());
    files.insert("trojan.v".into(), write_structural_verilog(&trojan).into_bytes());
    let mut lab = Vec::new();
    labels.write_csv(&mut lab)?;
    files.insert("labels.csv".into(), lab);
    files.insert("cones.json".into(), json_bytes(&cones)?);
    files.insert("splits.json".into(), json_bytes(&splits)?);
    let manifest = manifest_for(&files);

    write_atomically(out_dir, &files, &json_bytes(&manifest)?)?;
    Ok(BenchmarkBundle {
        dir: out_dir.to_path_buf(),
        golden: base.clone(),
        trojan,
        labels,
        cones,
        splits,
        manifest,
    })
}

fn write_atomically(out_dir: &Path, files: &BTreeMap<String, Vec<u8>>, manifest: &[u8]) -> Result<(), ExportError> {
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let base = out_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into());
    let tmp = parent.join(format!(".{base}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    for (name, bytes) in files {
        fs::write(tmp.join(name), bytes)?;
    }
    fs::write(tmp.join(MANIFEST), manifest)?;
    if out_dir.exists() {
        fs::remove_dir_all(out_dir)?;
    }
    fs::rename(&tmp, out_dir)?;
    Ok(())
}

/// Reads a bundle back, verifying every digest and the cross-file contracts.
pub fn load_bundle(dir: &Path) -> Result<BenchmarkBundle, ExportError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let mut files = BTreeMap::new();
    for name in BUNDLE_FILES {
        let bytes = fs::read(dir.join(name))?;
        if manifest.files.get(name) != Some(&sha256_hex(&bytes)) {
            return Err(ExportError::Digest(name.to_string()));
        }
        files.insert(name.to_string(), bytes);
    }
    if manifest_for(&files).bundle_digest != manifest.bundle_digest {
        return Err(ExportError::Digest(MANIFEST.to_string()));
    }
    let text = |n: &str| String::from_utf8_lossy(&files[n]).into_owned();
    let golden = parse_structural_verilog(&text("golden.v"))?;
    let trojan = parse_structural_verilog(&text("trojan.v"))?;
    let labels = LabelSet::read_csv(&files["labels.csv"][..])?;
    let cones: ConesFile = serde_json::from_slice(&files["cones.json"])?;
    let splits: Splits = serde_json::from_slice(&files["splits.json"])?;

    let known: std::collections::BTreeSet<&str> = cones.cones.iter().map(|c| c.cone_id.as_str()).collect();
    for id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        if !known.contains(id.as_str()) {
            return Err(ExportError::Inconsistent(format!("split cone `{id}` has no metadata")));
        }
    }
    for net in trojan.nets() {
        if !labels.nets.contains_key(net) {
            return Err(ExportError::Inconsistent(format!("net `{net}` has no label")));
        }
    }
    Ok(BenchmarkBundle {
        dir: dir.to_path_buf(),
        golden,
        trojan,
        labels,
        cones,
        splits,
        manifest,
    })
}
