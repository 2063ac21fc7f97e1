//! End-to-end run: parse, graph, SCOAP, mining, ranking, insertion, checks,
//! export, with per-candidate outcomes and history for the policy.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, InputFormat, PipelineConfig};
use crate::equiv::{build_miter, check_exhaustive, check_random, scan_integrity, Constraint, Verdict};
use crate::export::{export_bundle, AcceptedInstance, BenchmarkBundle, InstanceSeeds, NamedVerdict};
use crate::graph::{annotate, build_graph, sequential_cut};
use crate::inserter::{apply, default_budget, plan_insertion, rollback, Guardrail, InsertError};
use crate::miner::{extract_coi, select_rare_excluding, ConeOfInfluence};
use crate::netlist::{parse_bench, parse_structural_verilog, CellKind, Netlist, Pin};
use crate::policy::{
    append_history, featurize, rank, rank_combined, read_history, stealth_proxy, train, HistoryRecord, Outcome,
    PolicyNet, Scores,
};
use crate::scoap::{compute_scoap, rarity};
use crate::templates::{
    builtin_library, compile_template, load_library, ClockSource, CompileContext, GraphRewrite, TemplateDescriptor,
    RESERVED_PREFIX,
};

pub const BUNDLE_DIR: &str = "bundle";
pub const REPORT_FILE: &str = "run_report.json";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}`{}: {message}", .candidate.as_ref().map(|c| format!(" (candidate {c})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        candidate: Option<String>,
        message: String,
    },
    #[error("no instance accepted: {}", .0.message.clone().unwrap_or_default())]
    Empty(Box<RunReport>),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Empty(_) => 4,
        }
    }
}

fn stage_err(stage: &'static str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage,
        candidate: None,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOutcome {
    Accepted,
    FailedEquivalence,
    FailedScan,
    FailedBudget,
    /// The template could not be compiled onto the cone.
    Inapplicable,
    /// The cone contains a net spliced or tapped by an accepted rewrite.
    SkippedOverlap,
}

impl CandidateOutcome {
    pub fn history_outcome(self) -> Option<Outcome> {
        match self {
            CandidateOutcome::Accepted => Some(Outcome::Accepted),
            CandidateOutcome::FailedEquivalence => Some(Outcome::FailedEquivalence),
            CandidateOutcome::FailedScan => Some(Outcome::FailedScan),
            CandidateOutcome::FailedBudget => Some(Outcome::FailedBudget),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
    /// Peak resident set size after the stage, when the platform reports it.
    pub peak_rss_kb: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub id: String,
    pub cone_id: String,
    pub anchor: String,
    pub template_id: String,
    pub seed: u64,
    pub rank_score: f64,
    pub outcome: CandidateOutcome,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub design: String,
    pub nets: usize,
    pub cells: usize,
    pub edges: usize,
    pub rare_nets: usize,
    pub cones: usize,
    pub ranked: usize,
    pub cold_start: bool,
    pub stages: Vec<StageTiming>,
    pub candidates: Vec<CandidateReport>,
    pub accepted: usize,
    pub positive_fraction: Option<f64>,
    pub bundle_digest: Option<String>,
    pub history_records: usize,
    pub message: Option<String>,
}

impl RunReport {
    pub fn count(&self, o: CandidateOutcome) -> usize {
        self.candidates.iter().filter(|c| c.outcome == o).count()
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub bundle: BenchmarkBundle,
    pub instances: Vec<AcceptedInstance>,
    pub report: RunReport,
    pub history: Vec<HistoryRecord>,
    pub golden: Netlist,
}

/// Peak resident set size (`VmHWM`) in KiB; Linux only.
pub fn peak_rss_kb() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn record(&mut self, stage: &str, millis: f64) {
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            millis,
            peak_rss_kb: peak_rss_kb(),
        });
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.record(stage, t.elapsed().as_secs_f64() * 1e3);
        out
    }
}

pub fn read_netlist(path: &Path, format: InputFormat) -> Result<Netlist, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| stage_err("parse", format!("{}: {e}", path.display())))?;
    let n = match format {
        InputFormat::Bench => parse_bench(&text),
        InputFormat::Verilog => parse_structural_verilog(&text),
    }
    .map_err(|e| stage_err("parse", e))?;
    n.validate().map_err(|e| stage_err("parse", e))?;
    Ok(n)
}

fn clock_source(n: &Netlist, cfg: &PipelineConfig) -> Result<(ClockSource, BTreeSet<String>), PipelineError> {
    let clocks: BTreeSet<String> = n
        .cells
        .iter()
        .filter(|c| c.kind == CellKind::Dff)
        .filter_map(|c| c.pin_net(Pin::Clk).map(str::to_string))
        .collect();
    if let Some(c) = &cfg.clock {
        if !n.nets().contains(c.as_str()) {
            return Err(ConfigError::Invalid(format!("clock net `{c}` not found in the design")).into());
        }
        let mut all = clocks;
        all.insert(c.clone());
        return Ok((ClockSource::Net(c.clone()), all));
    }
    let src = match clocks.iter().next() {
        Some(c) => ClockSource::Net(c.clone()),
        None => ClockSource::Implicit,
    };
    Ok((src, clocks))
}

fn mix_seed(base: u64, a: usize, b: usize) -> u64 {
    let mut x = base ^ ((a as u64) << 20) ^ (b as u64);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct Candidate<'a> {
    id: String,
    cone: usize,
    template: &'a TemplateDescriptor,
    seed: u64,
    score: f64,
    features: crate::policy::FeatureVector,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    run_pipeline_with(cfg, None)
}

/// As [`run_pipeline`]; `hook` may alter each compiled rewrite before it is
/// planned, which lets tests inject broken templates.
pub fn run_pipeline_with(
    cfg: &PipelineConfig,
    hook: Option<&dyn Fn(&mut GraphRewrite)>,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let format = cfg.input_format().expect("validated");
    let mut clock = Clock { timings: Vec::new() };

    let t = Instant::now();
    let golden = read_netlist(&cfg.input, format)?;
    let graph = build_graph(&golden).map_err(|e| stage_err("graph", e))?;
    let edges = graph.edge_count();
    let cut = sequential_cut(graph).map_err(|e| stage_err("graph", e))?;
    let cut = annotate(cut, cfg.reconv_radius);
    clock.record("parse_graph", t.elapsed().as_secs_f64() * 1e3);

    let rt = clock.time("scoap", || rarity(&compute_scoap(&cut), cfg.alpha)).map_err(|e| stage_err("scoap", e))?;

    let (clock_src, clock_nets) = clock_source(&golden, cfg)?;
    let scan = &cfg.scan_patterns;
    let t = Instant::now();
    let rare = select_rare_excluding(&cut, &rt, cfg.threshold_pct, &cfg.filters, |v| {
        let name = cut.name(v);
        scan.matches(name) || clock_nets.contains(name) || name.starts_with(RESERVED_PREFIX)
    })
    .map_err(|e| stage_err("mining", e))?;
    let cones: Vec<ConeOfInfluence> = rare
        .iter()
        .map(|c| extract_coi(&cut, &rt, &c.net, cfg.cone))
        .collect::<Result<_, _>>()
        .map_err(|e| stage_err("mining", e))?;
    clock.record("mining", t.elapsed().as_secs_f64() * 1e3);

    let t = Instant::now();
    let library = match &cfg.templates {
        Some(dir) => load_library(dir).map_err(|e| stage_err("ranking", e))?,
        None => builtin_library(),
    };
    let policy = match &cfg.policy.weights {
        Some(p) if p.is_file() => {
            let text = fs::read_to_string(p).map_err(|e| stage_err("ranking", e))?;
            Some(PolicyNet::read_json(&text).map_err(|e| stage_err("ranking", e))?)
        }
        _ => None,
    };
    let mut pool: Vec<Candidate> = Vec::new();
    for (ci, coi) in cones.iter().enumerate() {
        for (ti, d) in library.iter().enumerate() {
            pool.push(Candidate {
                id: format!("k{ci:04}_{ti:02}"),
                cone: ci,
                template: d,
                seed: mix_seed(cfg.seeds.templates, ci, ti),
                score: 0.0,
                features: featurize(&coi.meta, coi.boundary_in.len(), d),
            });
        }
    }
    let order: Vec<String> = match &policy {
        Some(p) => {
            let fvs: Vec<_> = pool.iter().map(|c| c.features.clone()).collect();
            let scores = p.score_batch(&fvs).map_err(|e| stage_err("ranking", e))?;
            let (wa, ws) = cfg.policy.rank_weights;
            for (c, s) in pool.iter_mut().zip(&scores) {
                c.score = wa * s.acceptance + ws * s.stealth;
            }
            let pairs: Vec<(String, Scores)> = pool.iter().map(|c| c.id.clone()).zip(scores).collect();
            rank(&pairs, cfg.policy.rank_weights).map_err(|e| stage_err("ranking", e))?
        }
        None => {
            for c in pool.iter_mut() {
                c.score = stealth_proxy(&cones[c.cone].meta);
            }
            rank_combined(pool.iter().map(|c| (c.id.clone(), c.score)).collect())
        }
    };
    let by_id: std::collections::HashMap<&str, usize> =
        pool.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let ranked: Vec<usize> = order.iter().take(cfg.budget.candidates).map(|id| by_id[id.as_str()]).collect();
    clock.record("ranking", t.elapsed().as_secs_f64() * 1e3);

    let budget = cfg.budget.gate_budget.unwrap_or_else(|| default_budget(golden.cells.len()));
    let mut current = golden.clone();
    let mut positives = 0usize;
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut instances: Vec<AcceptedInstance> = Vec::new();
    let mut reports: Vec<CandidateReport> = Vec::new();
    let mut history: Vec<HistoryRecord> = Vec::new();
    let (mut insert_ms, mut check_ms) = (0.0, 0.0);

    for &k in &ranked {
        if instances.len() >= cfg.budget.max_accepted {
            break;
        }
        let cand = &pool[k];
        let coi = &cones[cand.cone];
        let cone_id = format!("cone_{:04}", cand.cone);
        let mut report = CandidateReport {
            id: cand.id.clone(),
            cone_id: cone_id.clone(),
            anchor: coi.anchor.clone(),
            template_id: cand.template.id.clone(),
            seed: cand.seed,
            rank_score: cand.score,
            outcome: CandidateOutcome::Inapplicable,
            detail: None,
        };
        let result = attempt(
            cfg,
            &current,
            coi,
            cand,
            &cone_id,
            &clock_src,
            budget,
            positives,
            &used,
            hook,
            (&mut insert_ms, &mut check_ms),
        )?;
        report.outcome = result.outcome;
        report.detail = result.detail;
        if let Some(o) = result.outcome.history_outcome() {
            history.push(HistoryRecord {
                candidate: cand.id.clone(),
                features: cand.features.clone(),
                outcome: o,
                stealth: stealth_proxy(&coi.meta),
            });
        }
        if let Some((next, inst)) = result.accepted {
            positives += inst.plan.rewrite.trigger_nets.len() + inst.plan.rewrite.payload_nets.len();
            let rw = &inst.plan.rewrite;
            used.insert(rw.victim_net.clone());
            used.extend(rw.added_loads().keys().map(|s| s.to_string()));
            current = next;
            instances.push(inst);
        }
        reports.push(report);
    }
    clock.record("insertion", insert_ms);
    clock.record("checks", check_ms);

    let mut report = RunReport {
        design: golden.name.clone(),
        nets: golden.nets().len(),
        cells: golden.cells.len(),
        edges,
        rare_nets: rare.len(),
        cones: cones.len(),
        ranked: ranked.len(),
        cold_start: policy.is_none(),
        stages: Vec::new(),
        candidates: reports,
        accepted: instances.len(),
        positive_fraction: None,
        bundle_digest: None,
        history_records: history.len(),
        message: None,
    };

    fs::create_dir_all(&cfg.output_dir).map_err(|e| stage_err("export", e))?;
    write_history(cfg, &history)?;

    if instances.is_empty() {
        report.message = Some(if rare.is_empty() {
            format!(
                "no net reached the rarity threshold {} with a structural filter",
                cfg.threshold_pct
            )
        } else {
            format!("{} candidates attempted, none passed every check", report.candidates.len())
        });
        report.stages = clock.timings;
        write_report(&cfg.output_dir, &report)?;
        return Err(PipelineError::Empty(Box::new(report)));
    }

    let bundle_dir = cfg.output_dir.join(BUNDLE_DIR);
    let bundle = clock
        .time("export", || {
            export_bundle(&golden, &instances, cfg.split_ratios, cfg.seeds.splits, &bundle_dir)
        })
        .map_err(|e| stage_err("export", e))?;
    report.positive_fraction = Some(bundle.labels.positive_fraction());
    report.bundle_digest = Some(bundle.manifest.bundle_digest.clone());
    report.stages = clock.timings;
    write_report(&cfg.output_dir, &report)?;
    Ok(RunOutput {
        bundle,
        instances,
        report,
        history,
        golden,
    })
}

struct Attempt {
    outcome: CandidateOutcome,
    detail: Option<String>,
    accepted: Option<(Netlist, AcceptedInstance)>,
}

impl Attempt {
    fn fail(outcome: CandidateOutcome, detail: impl Into<String>) -> Self {
        Attempt {
            outcome,
            detail: Some(detail.into()),
            accepted: None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attempt(
    cfg: &PipelineConfig,
    current: &Netlist,
    coi: &ConeOfInfluence,
    cand: &Candidate,
    cone_id: &str,
    clock_src: &ClockSource,
    budget: usize,
    positives: usize,
    used: &BTreeSet<String>,
    hook: Option<&dyn Fn(&mut GraphRewrite)>,
    ms: (&mut f64, &mut f64),
) -> Result<Attempt, PipelineError> {
    if let Some(net) = coi.nodes.iter().find(|n| used.contains(*n)) {
        return Ok(Attempt::fail(
            CandidateOutcome::SkippedOverlap,
            format!("net `{net}` is used by an accepted rewrite"),
        ));
    }
    let t = Instant::now();
    let ctx = CompileContext {
        tag: cand.id.clone(),
        clock: clock_src.clone(),
        forbidden: cfg.scan_patterns.clone(),
    };
    let mut rw = match compile_template(cand.template, coi, cand.seed, &ctx) {
        Ok(rw) => rw,
        Err(e) => {
            *ms.0 += t.elapsed().as_secs_f64() * 1e3;
            return Ok(Attempt::fail(CandidateOutcome::Inapplicable, e.to_string()));
        }
    };
    if let Some(h) = hook {
        h(&mut rw);
    }
    let planned = plan_insertion(current, cone_id, coi, &rw, budget, &cfg.scan_patterns);
    let plan = match planned {
        Ok(p) => p,
        Err(InsertError::Guardrail(r)) => {
            *ms.0 += t.elapsed().as_secs_f64() * 1e3;
            let failed = r.failed();
            let outcome = if failed.contains(&Guardrail::Scan) {
                CandidateOutcome::FailedScan
            } else if failed.contains(&Guardrail::Budget) {
                CandidateOutcome::FailedBudget
            } else {
                CandidateOutcome::FailedEquivalence
            };
            return Ok(Attempt::fail(outcome, InsertError::Guardrail(r).to_string()));
        }
        Err(e) => {
            *ms.0 += t.elapsed().as_secs_f64() * 1e3;
            return Ok(Attempt::fail(CandidateOutcome::FailedEquivalence, e.to_string()));
        }
    };
    let applied = apply(current, &plan);
    *ms.0 += t.elapsed().as_secs_f64() * 1e3;
    let (mutated, _) = match applied {
        Ok(x) => x,
        Err(e) => return Ok(Attempt::fail(CandidateOutcome::FailedEquivalence, e.to_string())),
    };
    if let Some(cap) = cfg.budget.max_positive_fraction {
        let pos = positives + rw.trigger_nets.len() + rw.payload_nets.len();
        let frac = pos as f64 / mutated.nets().len() as f64;
        if frac > cap {
            return Ok(Attempt::fail(
                CandidateOutcome::FailedBudget,
                format!("positive fraction {frac:.6} would exceed {cap}"),
            ));
        }
    }

    let t = Instant::now();
    let verdicts = verify(cfg, current, &mutated, coi, &rw, cand.seed);
    *ms.1 += t.elapsed().as_secs_f64() * 1e3;
    let failure = match &verdicts {
        Err(e) => Some((CandidateOutcome::FailedEquivalence, e.clone())),
        Ok(v) => v.iter().find(|v| !v.verdict.status.is_equivalent()).map(|v| {
            let class = if v.check == "scan_integrity" {
                CandidateOutcome::FailedScan
            } else {
                CandidateOutcome::FailedEquivalence
            };
            let cex = serde_json::to_string(&v.verdict.counterexample).unwrap_or_default();
            (class, format!("{} mismatch: {cex}", v.check))
        }),
    };
    if let Some((class, detail)) = failure {
        let restored = rollback(&mutated, &plan).map_err(|e| stage_err("checks", e))?;
        if &restored != current {
            return Err(PipelineError::Stage {
                stage: "checks",
                candidate: Some(cand.id.clone()),
                message: "rollback did not restore the netlist".into(),
            });
        }
        return Ok(Attempt::fail(class, detail));
    }
    let inst = AcceptedInstance {
        plan,
        anchor: coi.anchor.clone(),
        meta: coi.meta.clone(),
        seeds: InstanceSeeds {
            mining: cfg.seeds.mining,
            template: cand.seed,
        },
        verdicts: verdicts.expect("checked"),
        stealth_label: stealth_proxy(&coi.meta),
    };
    Ok(Attempt {
        outcome: CandidateOutcome::Accepted,
        detail: None,
        accepted: Some((mutated, inst)),
    })
}

/// Scan integrity plus cone equivalence with the trigger held inactive;
/// exhaustive when the free inputs fit the bound, sampled otherwise.
fn verify(
    cfg: &PipelineConfig,
    golden: &Netlist,
    mutated: &Netlist,
    coi: &ConeOfInfluence,
    rw: &GraphRewrite,
    seed: u64,
) -> Result<Vec<NamedVerdict>, String> {
    let scan = scan_integrity(golden, mutated, &cfg.scan_patterns);
    let eq = &cfg.equivalence;
    let miter = build_miter(golden, mutated, coi, &[Constraint::new(&rw.trigger_net, false)], eq.unroll)
        .map_err(|e| e.to_string())?;
    let cone: Verdict = if miter.free_inputs().len() <= eq.max_free_inputs {
        check_exhaustive(&miter, eq.max_free_inputs)
    } else {
        check_random(&miter, eq.random_vectors, cfg.seeds.mining ^ seed)
    }
    .map_err(|e| e.to_string())?;
    Ok(vec![
        NamedVerdict {
            check: "scan_integrity".into(),
            verdict: scan,
        },
        NamedVerdict {
            check: "cone_equivalence".into(),
            verdict: cone,
        },
    ])
}

fn write_report(dir: &Path, report: &RunReport) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| stage_err("export", e))?;
    text.push('\n');
    fs::write(dir.join(REPORT_FILE), text).map_err(|e| stage_err("export", e))
}

/// Writes this run's records, appends them to the persistent log and
/// retrains the policy when configured.
fn write_history(cfg: &PipelineConfig, records: &[HistoryRecord]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    append_history(&mut buf, records).map_err(|e| stage_err("export", e))?;
    fs::write(cfg.output_dir.join(HISTORY_FILE), &buf).map_err(|e| stage_err("export", e))?;
    let Some(log) = &cfg.policy.history else {
        return Ok(());
    };
    if records.is_empty() {
        return Ok(());
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(log)
        .map_err(|e| stage_err("export", e))?;
    std::io::Write::write_all(&mut f, &buf).map_err(|e| stage_err("export", e))?;
    if let (true, Some(weights)) = (cfg.policy.retrain, &cfg.policy.weights) {
        retrain(log, weights, cfg)?;
    }
    Ok(())
}

fn retrain(log: &Path, weights: &PathBuf, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let file = fs::File::open(log).map_err(|e| stage_err("export", e))?;
    let all = read_history(BufReader::new(file)).map_err(|e| stage_err("export", e))?;
    let start = match fs::read_to_string(weights) {
        Ok(t) => PolicyNet::read_json(&t).map_err(|e| stage_err("export", e))?,
        Err(_) => PolicyNet::init(cfg.policy.train.seed),
    };
    match train(&start, &all, cfg.policy.train) {
        Ok((net, _)) => {
            let mut buf = Vec::new();
            net.write_json(&mut buf).map_err(|e| stage_err("export", e))?;
            fs::write(weights, buf).map_err(|e| stage_err("export", e))
        }
        Err(e) => {
            log::warn!("policy not retrained: {e}");
            Ok(())
        }
    }
}
