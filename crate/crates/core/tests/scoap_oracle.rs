mod common;

use htgen::graph::{build_graph, sequential_cut};
use htgen::scoap::{compute_scoap, rarity};

use common::{small_corpus, NaiveScoap};

#[test]
fn matches_naive_recurrences() {
    let corpus = small_corpus();
    assert!(corpus.len() >= 25);
    for (name, n) in &corpus {
        let cut = sequential_cut(build_graph(n).unwrap()).unwrap();
        assert!(cut.node_count() <= 50, "{name} has {} nets", cut.node_count());
        let s = compute_scoap(&cut);
        let oracle = NaiveScoap::compute(n);
        for v in 0..cut.node_count() as u32 {
            let net = cut.name(v);
            let i = v as usize;
            assert_eq!(s.cc0[i] as u64, oracle.cc0[net], "{name} cc0({net})");
            assert_eq!(s.cc1[i] as u64, oracle.cc1[net], "{name} cc1({net})");
            assert_eq!(s.co[i] as u64, oracle.co[net], "{name} co({net})");
        }
    }
}

#[test]
fn rarity_follows_scores() {
    for (name, n) in small_corpus() {
        let cut = sequential_cut(build_graph(&n).unwrap()).unwrap();
        let s = compute_scoap(&cut);
        let t = rarity(&s, 0.75).unwrap();
        for i in 0..cut.node_count() {
            let want = s.cc0[i].max(s.cc1[i]) as f64 + 0.75 * s.co[i] as f64;
            assert_eq!(t.r[i], want, "{name}");
        }
    }
}
