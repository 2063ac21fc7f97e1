mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use htgen::equiv::{build_miter, check_exhaustive, scan_integrity, whole_design_miter, Constraint, VerdictStatus};
use htgen::eval::roc_auc;
use htgen::export::make_splits;
use htgen::graph::{annotate, build_graph, sequential_cut, DEFAULT_RECONV_RADIUS};
use htgen::inserter::{apply, default_budget, plan_insertion, rollback, InsertionPlan, Label};
use htgen::miner::{extract_coi, select_rare, ConeBounds, FilterConfig};
use htgen::netlist::{parse_structural_verilog, write_structural_verilog, CellKind, Netlist};
use htgen::patterns::NamePatterns;
use htgen::policy::{rank, rank_combined, FeatureVector, PolicyNet, Scores, FEATURES};
use htgen::scoap::{compute_scoap, rarity};
use htgen::synthetic::{generate, SynthParams};
use htgen::templates::{builtin_library, compile_template, ClockSource, CompileContext, GraphRewrite};

fn design() -> impl Strategy<Value = Netlist> {
    (2usize..6, 8usize..40, 0usize..4, any::<bool>(), any::<u64>()).prop_map(|(i, g, f, scan, seed)| {
        let p = SynthParams {
            scan: scan && f > 0,
            window: 10,
            ..SynthParams::scan_chained(i, g, f, seed)
        };
        generate(&p)
    })
}

fn sorted_connections(n: &Netlist) -> Vec<(String, String, CellKind, htgen::netlist::Pin)> {
    let mut v = n.connection_set();
    v.sort();
    v
}

struct Inserted {
    golden: Netlist,
    mutated: Netlist,
    plan: InsertionPlan,
    rw: GraphRewrite,
    coi: htgen::miner::ConeOfInfluence,
}

/// Compiles template `ti` at the `ai`-th rare anchor and applies it.
fn insert(n: &Netlist, ai: usize, ti: usize, seed: u64) -> Option<Inserted> {
    let cut = annotate(sequential_cut(build_graph(n).ok()?).ok()?, DEFAULT_RECONV_RADIUS);
    let rt = rarity(&compute_scoap(&cut), 1.0).ok()?;
    let filters = FilterConfig {
        max_candidate_fraction: None,
        ..FilterConfig::default()
    };
    let scan = NamePatterns::scan_defaults();
    let cands: Vec<_> = select_rare(&cut, &rt, 50.0, &filters)
        .ok()?
        .into_iter()
        .filter(|c| !scan.matches(&c.net) && c.net != "clk")
        .collect();
    if cands.is_empty() {
        return None;
    }
    let anchor = &cands[ai % cands.len()].net;
    let coi = extract_coi(&cut, &rt, anchor, ConeBounds::default()).ok()?;
    let lib = builtin_library();
    let d = &lib[ti % lib.len()];
    let clock = if n.cells.iter().any(|c| c.kind == CellKind::Dff) {
        ClockSource::Net("clk".into())
    } else {
        ClockSource::None
    };
    let ctx = CompileContext {
        tag: "p0".into(),
        clock,
        forbidden: scan.clone(),
    };
    let rw = compile_template(d, &coi, seed, &ctx).ok()?;
    let plan = plan_insertion(n, "cone_0000", &coi, &rw, default_budget(n.cells.len()), &scan).ok()?;
    let (mutated, _) = apply(n, &plan).ok()?;
    Some(Inserted {
        golden: n.clone(),
        mutated,
        plan,
        rw,
        coi,
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn verilog_round_trip(n in design()) {
        let text = write_structural_verilog(&n);
        let back = parse_structural_verilog(&text).unwrap();
        prop_assert_eq!(&back.inputs, &n.inputs);
        prop_assert_eq!(&back.outputs, &n.outputs);
        prop_assert_eq!(sorted_connections(&back), sorted_connections(&n));
        prop_assert_eq!(parse_structural_verilog(&text).unwrap(), back);
    }

    #[test]
    fn graph_structure(n in design()) {
        let g = build_graph(&n).unwrap();
        let arity: usize = n.cells.iter().map(|c| c.inputs.len()).sum();
        prop_assert_eq!(g.edge_count(), arity);
        prop_assert_eq!(g.node_count(), n.nets().len());
        prop_assert!(g.edges().iter().all(|e| e.from != e.to));
        let flops = n.cells.iter().filter(|c| c.kind == CellKind::Dff).count();
        let cut = annotate(sequential_cut(g).unwrap(), DEFAULT_RECONV_RADIUS);
        prop_assert_eq!(cut.registers().len(), flops);
        for v in 0..cut.node_count() as u32 {
            for u in cut.comb_fanin(v) {
                prop_assert!(cut.topo_position(u) < cut.topo_position(v));
            }
        }
        let attrs = cut.attrs().unwrap();
        for v in 0..cut.node_count() as u32 {
            let a = &attrs[v as usize];
            if cut.is_source(v) {
                prop_assert_eq!(a.depth, 0);
            }
            if cut.is_sink(v) {
                prop_assert_eq!(a.dist_to_po, Some(0));
            }
            prop_assert_eq!(a.fanout as usize, cut.graph().fanout_edges(v).len());
            let r = &a.reconv;
            for x in [r.overlap_max, r.overlap_mean, r.branch_disjointness] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn scoap_boundaries_and_rarity(n in design(), alpha in 0.5f64..=1.0) {
        let cut = sequential_cut(build_graph(&n).unwrap()).unwrap();
        let s = compute_scoap(&cut);
        let t = rarity(&s, alpha).unwrap();
        for v in 0..cut.node_count() as u32 {
            let i = v as usize;
            if cut.is_source(v) {
                prop_assert_eq!((s.cc0[i], s.cc1[i]), (1, 1));
            }
            if cut.is_sink(v) {
                prop_assert_eq!(s.co[i], 0);
            }
            prop_assert_eq!(t.r[i] - (s.cc0[i].max(s.cc1[i]) as f64 + alpha * s.co[i] as f64), 0.0);
        }
        for i in 0..t.len() {
            for j in 0..t.len() {
                if t.r[i] < t.r[j] {
                    prop_assert!(t.pct[i] <= t.pct[j]);
                }
            }
            prop_assert!((0.0..=100.0).contains(&t.pct[i]));
        }
    }

    #[test]
    fn candidates_and_cones(n in design(), thr in 0.0f64..95.0) {
        let cut = annotate(sequential_cut(build_graph(&n).unwrap()).unwrap(), DEFAULT_RECONV_RADIUS);
        let rt = rarity(&compute_scoap(&cut), 1.0).unwrap();
        let filters = FilterConfig { max_candidate_fraction: None, ..FilterConfig::default() };
        let cands = select_rare(&cut, &rt, thr, &filters).unwrap();
        prop_assert_eq!(&cands, &select_rare(&cut, &rt, thr, &filters).unwrap());
        for c in cands.iter().take(4) {
            prop_assert!(c.pct >= thr);
            prop_assert!(!c.reasons.is_empty());
            let coi = extract_coi(&cut, &rt, &c.net, ConeBounds::default()).unwrap();
            let all: BTreeSet<&str> = coi.nodes.iter().chain(&coi.boundary_in).chain(&coi.boundary_out)
                .map(String::as_str).collect();
            for e in &coi.edges {
                prop_assert!(all.contains(e.from.as_str()) && all.contains(e.to.as_str()));
            }
            prop_assert_eq!(coi.meta.size, coi.nodes.len());
        }
    }

    #[test]
    fn insertion_guardrails_hold(n in design(), ai in 0usize..64, ti in 0usize..64, seed in any::<u64>()) {
        let ins = insert(&n, ai, ti, seed);
        prop_assume!(ins.is_some());
        let Inserted { golden, mutated, plan, rw, coi } = ins.unwrap();
        let scan = NamePatterns::scan_defaults();
        prop_assert_eq!(&mutated.inputs, &golden.inputs);
        prop_assert_eq!(&mutated.outputs, &golden.outputs);
        let sv = scan_integrity(&golden, &mutated, &scan);
        prop_assert!(sv.status.is_equivalent(), "{:?} {:?} taps {:?} victim {}", sv, rw.template_id, rw.taps, rw.victim_net);
        prop_assert_eq!(plan.gate_delta, rw.new_cells.len());
        prop_assert!(plan.gate_delta <= default_budget(golden.cells.len()));
        mutated.validate().unwrap();

        // transactional
        let back = rollback(&mutated, &plan).unwrap();
        prop_assert_eq!(sorted_connections(&back), sorted_connections(&golden));
        prop_assert_eq!(&back.inputs, &golden.inputs);

        // labels partition the nets; positives only on new nets
        let (_, labels) = apply(&golden, &plan).unwrap();
        let nets: BTreeSet<String> = mutated.nets().into_iter().map(str::to_string).collect();
        let labelled: BTreeSet<String> = labels.nets.keys().cloned().collect();
        prop_assert_eq!(&labelled, &nets);
        let old: BTreeSet<&str> = golden.nets();
        for (net, l) in &labels.nets {
            if l.label.is_positive() {
                prop_assert!(!old.contains(net.as_str()) && net.starts_with("ht__"), "{}", net);
            }
            if l.label == Label::CoiContext {
                prop_assert!(old.contains(net.as_str()));
            }
        }

        // cone check agrees with the whole-design check under trigger-inactive
        let pins: Vec<Constraint> = golden.inputs.iter().filter(|p| scan.matches(p))
            .map(|p| Constraint::new(p, false)).collect();
        let cone = build_miter(&golden, &mutated, &coi, &[Constraint::new(&rw.trigger_net, false)], 8).unwrap();
        if let Ok(v) = check_exhaustive(&cone, 16) {
            prop_assert_eq!(v.status, VerdictStatus::EquivalentExhaustive);
        }
        let whole = whole_design_miter(&golden, &mutated, &pins, 8).unwrap();
        if let Ok(v) = check_exhaustive(&whole, 14) {
            prop_assert_eq!(v.status, VerdictStatus::EquivalentExhaustive);
        }
    }

    #[test]
    fn counterexamples_replay(n in design(), flip in any::<prop::sample::Index>()) {
        // swap one gate's function and compare against the original
        let mut m = n.clone();
        let gates: Vec<usize> = (0..m.cells.len())
            .filter(|&i| matches!(m.cells[i].kind, CellKind::And | CellKind::Or | CellKind::Nand | CellKind::Nor))
            .collect();
        prop_assume!(!gates.is_empty());
        let c = &mut m.cells[gates[flip.index(gates.len())]];
        c.kind = match c.kind {
            CellKind::And => CellKind::Or,
            CellKind::Or => CellKind::And,
            CellKind::Nand => CellKind::Nor,
            _ => CellKind::Nand,
        };
        let pins: Vec<Constraint> = n.inputs.iter().filter(|p| p.starts_with("scan"))
            .map(|p| Constraint::new(p, false)).collect();
        let miter = whole_design_miter(&n, &m, &pins, 4).unwrap();
        let v = check_exhaustive(&miter, 14);
        prop_assume!(v.is_ok());
        let v = v.unwrap();
        if v.status == VerdictStatus::Mismatch {
            let cex = v.counterexample.as_ref().unwrap();
            prop_assert!(miter.replay(cex));
            if let htgen::equiv::Counterexample::Inputs { assignment, .. } = cex {
                for cycle in assignment {
                    for p in &pins {
                        prop_assert_eq!(cycle.get(&p.net).copied().unwrap_or(p.value), p.value);
                    }
                }
            }
        } else {
            prop_assert!(v.counterexample.is_none());
        }
    }

    #[test]
    fn scores_in_open_interval(seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, FEATURES)) {
        let s = PolicyNet::init(seed).score(&FeatureVector(x)).unwrap();
        prop_assert!(s.acceptance > 0.0 && s.acceptance < 1.0);
        prop_assert!(s.stealth > 0.0 && s.stealth < 1.0);
    }

    #[test]
    fn ranking_is_order_invariant(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40)) {
        let cands: Vec<(String, Scores)> = raw.iter().enumerate()
            .map(|(i, &(a, s))| (format!("c{i:02}"), Scores { acceptance: a, stealth: s }))
            .collect();
        let order = rank(&cands, (0.5, 0.5)).unwrap();
        let combined: Vec<(String, f64)> = cands.iter()
            .map(|(id, s)| (id.clone(), 2.0 * (0.5 * s.acceptance + 0.5 * s.stealth) + 1.0))
            .collect();
        prop_assert_eq!(rank_combined(combined), order);
    }

    #[test]
    fn auc_complement(raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..200)) {
        prop_assume!(raw.iter().any(|r| r.1) && raw.iter().any(|r| !r.1));
        let s: Vec<f64> = raw.iter().map(|r| (r.0 * 20.0).round() / 20.0).collect();
        let y: Vec<bool> = raw.iter().map(|r| r.1).collect();
        let inv: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
        let a = roc_auc(&s, &y);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + roc_auc(&inv, &y) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn splits_partition(n in 3usize..200, seed in any::<u64>(), a in 0.1f64..0.8) {
        let ids: Vec<String> = (0..n).map(|i| format!("cone_{i:04}")).collect();
        let r = ((1.0 - a) / 2.0, (1.0 - a) / 2.0);
        let ratios = (1.0 - r.0 - r.1, r.0, r.1);
        let s = make_splits(&ids, ratios, seed).unwrap();
        prop_assert_eq!(&s, &make_splits(&ids, ratios, seed).unwrap());
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        prop_assert_eq!(all, ids);
        prop_assert_eq!(s.val.len(), (ratios.1 * n as f64).round() as usize);
    }
}

#[test]
fn inverter_chain_observability_steps_by_one() {
    let mut n = Netlist::new("inv");
    n.inputs = vec!["a".into()];
    let mut prev = "a".to_string();
    for i in 0..12 {
        let out = format!("n{i}");
        let kind = if i % 2 == 0 { CellKind::Inv } else { CellKind::Buf };
        n.cells.push(htgen::netlist::Cell::gate(format!("u{i}"), kind, [prev.clone()], out.clone()));
        prev = out;
    }
    n.outputs = vec![prev];
    let cut = sequential_cut(build_graph(&n).unwrap()).unwrap();
    let s = compute_scoap(&cut);
    let co = |net: &str| s.co[cut.node(net).unwrap() as usize];
    assert_eq!(co("n11"), 0);
    for i in (0..11).rev() {
        assert_eq!(co(&format!("n{i}")), co(&format!("n{}", i + 1)) + 1);
    }
    assert_eq!(co("a"), co("n0") + 1);
}

#[test]
fn tree_fanin_has_no_overlap() {
    let n = common::tree(4, CellKind::And);
    let cut = annotate(sequential_cut(build_graph(&n).unwrap()).unwrap(), DEFAULT_RECONV_RADIUS);
    for a in cut.attrs().unwrap() {
        assert_eq!(a.reconv.overlap_max, 0.0);
    }
}
