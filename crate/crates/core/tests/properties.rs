mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::*;
use vendorlink::graph::{build_graph, parse_graph_json, export_json, GraphMode};
use vendorlink::metrics::{self, RankedQuery};
use vendorlink::records::{is_clean, mask_text, split_dataset};
use vendorlink::{build_communities, FlatIndex, RetrievalRun};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn masking_is_idempotent_on_printable_text(s in "[ -~]{0,120}") {
        let once = mask_text(&s);
        prop_assert_eq!(mask_text(&once), once.clone());
        prop_assert!(is_clean(&once), "{:?} -> {:?}", s, once);
    }

    #[test]
    fn masking_is_idempotent_on_pii_mixtures(seed in any::<u64>()) {
        let s = pii_string(&mut rng(seed));
        let once = mask_text(&s);
        prop_assert_eq!(mask_text(&once), once.clone());
        prop_assert!(is_clean(&once));
    }

    #[test]
    fn communities_match_bfs(seed in any::<u64>()) {
        let ads = random_bipartite(&mut rng(seed), 60, 20);
        let got = build_communities(&ads).unwrap();
        let want = components_reference(&ads);
        prop_assert_eq!(got.communities(), want.as_slice());
        prop_assert_eq!(got.num_ads(), ads.len());
    }

    #[test]
    fn metrics_are_bounded(seed in any::<u64>()) {
        let run = random_run(&mut rng(seed), 8, 40);
        let reports = [
            metrics::mrr_at_k(&run, 10),
            metrics::r_precision_at_x(&run).unwrap(),
            metrics::macro_f1_at_x(&run).unwrap(),
        ];
        for rep in &reports {
            for v in rep.per_vendor.values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
            prop_assert!((0.0..=1.0).contains(&rep.mean));
            prop_assert!(rep.std >= 0.0 && rep.std <= 0.5);
        }
    }

    #[test]
    fn metrics_ignore_query_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let run = random_run(&mut r, 8, 40);
        let mut queries = run.queries.clone();
        queries.shuffle(&mut r);
        let shuffled = RetrievalRun::new(queries, run.doc_vendor.clone()).unwrap();
        let close = |a: &vendorlink::MetricReport, b: &vendorlink::MetricReport| {
            a.per_vendor.keys().eq(b.per_vendor.keys())
                && a.per_vendor.values().zip(b.per_vendor.values()).all(|(x, y)| (x - y).abs() < 1e-12)
                && (a.mean - b.mean).abs() < 1e-12
        };
        prop_assert!(close(&metrics::mrr_at_k(&run, 10), &metrics::mrr_at_k(&shuffled, 10)));
        prop_assert!(close(&metrics::r_precision_at_x(&run).unwrap(), &metrics::r_precision_at_x(&shuffled).unwrap()));
        prop_assert!(close(&metrics::macro_f1_at_x(&run).unwrap(), &metrics::macro_f1_at_x(&shuffled).unwrap()));
    }

    #[test]
    fn r_precision_equals_macro_f1_for_full_rankings(seed in any::<u64>()) {
        let mut r = rng(seed);
        let run = random_run(&mut r, 8, 40);
        let ids: Vec<String> = run.doc_vendor.keys().cloned().collect();
        let queries: Vec<RankedQuery> = run
            .queries
            .iter()
            .map(|q| {
                let mut ranked = ids.clone();
                ranked.shuffle(&mut r);
                RankedQuery { ranked, ..q.clone() }
            })
            .collect();
        let full = RetrievalRun::new(queries, run.doc_vendor.clone()).unwrap();
        let rp = metrics::r_precision_at_x(&full).unwrap();
        let f1 = metrics::macro_f1_at_x(&full).unwrap();
        prop_assert!((rp.mean - f1.mean).abs() < 1e-12);
        for (v, x) in &rp.per_vendor {
            prop_assert!((x - f1.per_vendor[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn index_matches_full_scan(seed in any::<u64>(), n in 1usize..200, d in 1usize..24, k in 1usize..20) {
        let mut r = rng(seed);
        let docs = embeddings("d", gaussian(&mut r, n, d));
        let queries = embeddings("q", gaussian(&mut r, 5, d));
        let k = k.min(n);
        let idx = FlatIndex::build(&docs).unwrap();
        let got = idx.search(&queries, k).unwrap();
        for (hits, want) in got.iter().zip(naive_search(&docs, &queries, k)) {
            let ids: Vec<&str> = hits.iter().map(|h| idx.doc_id(h.doc)).collect();
            let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
            prop_assert_eq!(ids, want_ids);
            for w in hits.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
        }
    }

    #[test]
    fn graph_edges_shrink_as_theta_rises(seed in any::<u64>(), lo in -1.0f64..1.0, gap in 0.0f64..1.0) {
        let mut r = rng(seed);
        let docs = embeddings("d", gaussian(&mut r, 30, 6));
        let q = gaussian(&mut r, 1, 6);
        let idx = FlatIndex::build(&docs).unwrap();
        let edges = |theta: f64| {
            let g = build_graph(&idx, "query", q.row(0), GraphMode::MrrK, 8, theta).unwrap();
            g.validate().unwrap();
            let round = parse_graph_json(&export_json(&g).unwrap()).unwrap();
            assert_eq!(round, g);
            g.edges.into_iter().map(|e| (e.a, e.b)).collect::<BTreeSet<_>>()
        };
        let loose = edges(lo);
        let tight = edges(lo + gap);
        prop_assert!(tight.is_subset(&loose));
        prop_assert_eq!(tight.iter().filter(|(a, _)| a == "query").count(), 8);
    }

    #[test]
    fn split_is_a_partition(n in 3usize..300, seed in any::<u64>(), train in 0.0f64..1.0, val_frac in 0.0f64..1.0) {
        let val = (1.0 - train) * val_frac;
        let ratios = (train, val, 1.0 - train - val);
        let ids: Vec<String> = (0..n).map(|i| format!("ad{i}")).collect();
        let split = split_dataset(&ids, ratios, seed).unwrap();
        let mut all: Vec<&String> = split.train_ids.iter().chain(&split.val_ids).chain(&split.test_ids).collect();
        prop_assert_eq!(all.len(), n);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(split.train_ids.len(), (train * n as f64).round() as usize);
        prop_assert_eq!(split_dataset(&ids, ratios, seed).unwrap(), split);
    }
}
