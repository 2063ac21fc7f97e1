//! `htgen`: function-preserving hardware-Trojan benchmark generation.
//!
//! ```bash
//! htgen analyze design.bench -o scoap.csv
//! htgen mine design.v --threshold 99 -o candidates.csv
//! htgen insert design.bench --anchor N680 --template hamming-mux-4 -o trojan.v
//! htgen verify golden.v trojan.v
//! htgen export pipeline.toml
//! htgen eval out/bundle predictions.csv --top-k 100
//! htgen heatmap design.v -o heatmap.csv
//! ```
//!
//! Exit codes: 0 success, 1 non-equivalent designs (`verify`), 2 configuration
//! or usage error, 3 pipeline-stage error, 4 empty result.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use htgen::config::{InputFormat, PipelineConfig};
use htgen::equiv::{
    build_miter, check_exhaustive, check_random, scan_integrity, whole_design_miter, Constraint, Verdict,
    DEFAULT_MAX_FREE_INPUTS, DEFAULT_UNROLL,
};
use htgen::eval::{read_predictions, score_predictions, DEFAULT_TOP_K};
use htgen::export::load_bundle;
use htgen::graph::{annotate, build_graph, sequential_cut, CutGraph, DEFAULT_RECONV_RADIUS};
use htgen::inserter::{apply, default_budget, plan_insertion};
use htgen::miner::{extract_coi, select_rare, write_candidates_csv, ConeBounds, FilterConfig};
use htgen::netlist::{write_structural_verilog, Netlist};
use htgen::patterns::NamePatterns;
use htgen::pipeline::{read_netlist, run_pipeline};
use htgen::scoap::{compute_scoap, depth_rarity_histogram, rarity, write_scoap_csv, HeatmapBins, RarityTable};
use htgen::templates::{builtin_library, compile_template, load_library, ClockSource, CompileContext};

#[derive(Parser)]
#[command(name = "htgen", version, about = "Hardware-Trojan benchmark generation for gate-level netlists")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-net SCOAP, rarity and percentile as CSV.
    Analyze(Analyze),
    /// Rare candidate nets passing the structural filters.
    Mine(Mine),
    /// Insert one template at one anchor and check the result.
    Insert(Insert),
    /// Whole-design equivalence and scan integrity of two netlists.
    Verify(Verify),
    /// Run the full pipeline from a TOML config and write a bundle.
    Export(Export),
    /// Score a per-net predictions CSV against a bundle.
    Eval(Eval),
    /// Depth-vs-rarity histogram as CSV.
    Heatmap(Heatmap),
}

#[derive(Args)]
struct Design {
    /// Netlist (.bench or structural .v)
    netlist: PathBuf,
    /// Override format detection.
    #[arg(long, value_parser = parse_format)]
    format: Option<InputFormat>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct Analyze {
    #[command(flatten)]
    design: Design,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Mine {
    #[command(flatten)]
    design: Design,
    #[arg(long, default_value_t = 99.0)]
    threshold: f64,
    /// Keep every candidate instead of the default 0.1% cap.
    #[arg(long)]
    no_cap: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Insert {
    #[command(flatten)]
    design: Design,
    #[arg(long)]
    anchor: String,
    #[arg(long)]
    template: String,
    /// Descriptor directory (built-in library by default).
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trojanized netlist (structural Verilog).
    #[arg(short, long)]
    output: PathBuf,
    /// Per-net labels CSV.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    clock: Option<String>,
}

#[derive(Args)]
struct Verify {
    golden: PathBuf,
    mutated: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_FREE_INPUTS)]
    max_free_inputs: usize,
    /// Check this many seeded random vectors instead of all of them.
    #[arg(long)]
    random: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_UNROLL)]
    unroll: u32,
    /// Pin a net, as `net=0` or `net=1`. Scan/test inputs are pinned to 0 unless given.
    #[arg(long = "pin", value_parser = parse_pin)]
    pins: Vec<Constraint>,
}

#[derive(Args)]
struct Export {
    config: PathBuf,
}

#[derive(Args)]
struct Eval {
    bundle: PathBuf,
    predictions: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Include the full precision/recall sweep in the JSON output.
    #[arg(long)]
    sweep: bool,
}

#[derive(Args)]
struct Heatmap {
    #[command(flatten)]
    design: Design,
    #[arg(long, default_value_t = 16)]
    depth_bins: usize,
    #[arg(long, default_value_t = 20)]
    rarity_bins: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    match s {
        "bench" => Ok(InputFormat::Bench),
        "verilog" | "v" => Ok(InputFormat::Verilog),
        _ => Err(format!("unknown format `{s}` (bench | verilog)")),
    }
}

fn parse_pin(s: &str) -> Result<Constraint, String> {
    let (net, v) = s.split_once('=').ok_or("expected net=0|1")?;
    match v {
        "0" => Ok(Constraint::new(net, false)),
        "1" => Ok(Constraint::new(net, true)),
        _ => Err(format!("bad pin value `{v}`")),
    }
}

/// Marks errors that should exit with code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load(d: &Design) -> Result<Netlist> {
    let format = d
        .format
        .or_else(|| InputFormat::from_path(&d.netlist))
        .ok_or_else(|| Usage(format!("cannot infer the format of `{}`", d.netlist.display())))?;
    Ok(read_netlist(&d.netlist, format)?)
}

fn load_path(p: &Path) -> Result<Netlist> {
    load(&Design {
        netlist: p.to_path_buf(),
        format: None,
        alpha: 1.0,
    })
}

fn analyzed(d: &Design) -> Result<(Netlist, CutGraph, htgen::scoap::ScoapScores, RarityTable)> {
    let n = load(d)?;
    let cut = annotate(sequential_cut(build_graph(&n)?)?, DEFAULT_RECONV_RADIUS);
    let scores = compute_scoap(&cut);
    let table = rarity(&scores, d.alpha).map_err(|e| Usage(e.to_string()))?;
    Ok((n, cut, scores, table))
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn analyze(a: &Analyze) -> Result<u8> {
    let (_, cut, scores, table) = analyzed(&a.design)?;
    write_scoap_csv(&cut, &scores, &table, sink(&a.output)?)?;
    Ok(0)
}

fn mine(m: &Mine) -> Result<u8> {
    let (_, cut, _, table) = analyzed(&m.design)?;
    let mut filters = FilterConfig::default();
    if m.no_cap {
        filters.max_candidate_fraction = None;
    }
    let cands = select_rare(&cut, &table, m.threshold, &filters).map_err(|e| Usage(e.to_string()))?;
    write_candidates_csv(&cands, sink(&m.output)?)?;
    log::info!("{} candidates", cands.len());
    Ok(0)
}

fn insert(i: &Insert) -> Result<u8> {
    let (n, cut, _, table) = analyzed(&i.design)?;
    let coi = extract_coi(&cut, &table, &i.anchor, ConeBounds::default()).map_err(|e| Usage(e.to_string()))?;
    let lib = match &i.templates {
        Some(dir) => load_library(dir)?,
        None => builtin_library(),
    };
    let d = lib
        .iter()
        .find(|d| d.id == i.template)
        .ok_or_else(|| Usage(format!("unknown template `{}`", i.template)))?;
    let clock = match &i.clock {
        Some(c) => ClockSource::Net(c.clone()),
        None => ClockSource::Implicit,
    };
    let scan = NamePatterns::scan_defaults();
    let ctx = CompileContext {
        tag: "cli0".into(),
        clock,
        forbidden: scan.clone(),
    };
    let rw = compile_template(d, &coi, i.seed, &ctx)?;
    let plan = plan_insertion(&n, "cone_0000", &coi, &rw, default_budget(n.cells.len()), &scan)?;
    let (t, labels) = apply(&n, &plan)?;
    let miter = build_miter(&n, &t, &coi, &[Constraint::new(&rw.trigger_net, false)], DEFAULT_UNROLL)?;
    let verdict = if miter.free_inputs().len() <= DEFAULT_MAX_FREE_INPUTS {
        check_exhaustive(&miter, DEFAULT_MAX_FREE_INPUTS)?
    } else {
        check_random(&miter, 1 << 16, i.seed)?
    };
    let scan_v = scan_integrity(&n, &t, &scan);
    std::fs::write(&i.output, write_structural_verilog(&t))?;
    if let Some(p) = &i.labels {
        labels.write_csv(File::create(p)?)?;
    }
    print_json(&serde_json::json!({
        "template": rw.template_id,
        "victim": rw.victim_net,
        "trigger_net": rw.trigger_net,
        "gate_delta": plan.gate_delta,
        "cone_equivalence": verdict,
        "scan_integrity": scan_v,
    }))?;
    Ok(if verdict.status.is_equivalent() && scan_v.status.is_equivalent() { 0 } else { 1 })
}

fn verify(v: &Verify) -> Result<u8> {
    let g = load_path(&v.golden)?;
    let m = load_path(&v.mutated)?;
    let scan = NamePatterns::scan_defaults();
    let mut pins = v.pins.clone();
    for pi in &g.inputs {
        if scan.matches(pi) && !pins.iter().any(|p| &p.net == pi) {
            pins.push(Constraint::new(pi, false));
        }
    }
    let miter = whole_design_miter(&g, &m, &pins, v.unroll)?;
    let eq: Verdict = match v.random {
        Some(k) => check_random(&miter, k, v.seed)?,
        None => check_exhaustive(&miter, v.max_free_inputs).map_err(|e| Usage(e.to_string()))?,
    };
    let sc = scan_integrity(&g, &m, &scan);
    print_json(&serde_json::json!({ "equivalence": eq, "scan_integrity": sc }))?;
    Ok(if eq.status.is_equivalent() && sc.status.is_equivalent() { 0 } else { 1 })
}

fn export(e: &Export) -> Result<u8> {
    let cfg = PipelineConfig::load(&e.config).map_err(|e| Usage(e.to_string()))?.with_env();
    match run_pipeline(&cfg) {
        Ok(out) => {
            let r = &out.report;
            println!("accepted {} of {} candidates", r.accepted, r.candidates.len());
            println!("bundle {}", out.bundle.dir.display());
            println!("bundle_digest {}", out.bundle.manifest.bundle_digest);
            if let Some(f) = r.positive_fraction {
                println!("positive_fraction {f:.6}");
            }
            Ok(0)
        }
        Err(err) => {
            eprintln!("htgen: {err}");
            Ok(err.exit_code() as u8)
        }
    }
}

fn eval(e: &Eval) -> Result<u8> {
    let bundle = load_bundle(&e.bundle)?;
    let preds = read_predictions(File::open(&e.predictions).with_context(|| e.predictions.display().to_string())?)?;
    let mut m = score_predictions(&bundle.labels, &preds, e.top_k)?;
    println!("roc_auc = {}", m.roc_auc);
    println!("average_precision = {}", m.average_precision);
    println!("cone_hit_rate = {}", m.cone_hit_rate);
    if !e.sweep {
        m.sweep.clear();
    }
    print_json(&m)?;
    Ok(0)
}

fn heatmap(h: &Heatmap) -> Result<u8> {
    let (_, cut, _, table) = analyzed(&h.design)?;
    if h.depth_bins == 0 || h.rarity_bins == 0 {
        bail!(Usage("bin counts must be positive".into()));
    }
    let attrs = cut.attrs().ok_or_else(|| anyhow!("graph is not annotated"))?;
    let bins = HeatmapBins {
        depth_bins: h.depth_bins,
        rarity_bins: h.rarity_bins,
    };
    let hm = depth_rarity_histogram(attrs, &table, bins)?;
    hm.write_csv(sink(&h.output)?)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Mine(m) => mine(m),
        Command::Insert(i) => insert(i),
        Command::Verify(v) => verify(v),
        Command::Export(e) => export(e),
        Command::Eval(e) => eval(e),
        Command::Heatmap(h) => heatmap(h),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|x| x.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("htgen: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else if let Some(p) = e.downcast_ref::<htgen::pipeline::PipelineError>() {
                ExitCode::from(p.exit_code() as u8)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
