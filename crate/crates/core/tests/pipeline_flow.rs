//! Cross-module flow: note -> queries -> linked entities -> contextual
//! graph -> distant labels -> trained model -> contextual query -> ranked
//! codes, all through the public API.

use std::collections::BTreeMap;

use icdq_core::corpus::{extract_queries, split_sentences, ClinicalNote, ExtractionRules};
use icdq_core::ctxgraph::build_graph;
use icdq_core::ir::{build_index, search, IcdCode, IcdVersion};
use icdq_core::kb::{Concept, KnowledgeBase};
use icdq_core::model::{
    contextual_query, predict_relevant, score_graph, train, EmbeddingTable, QueryGraph,
    TrainConfig,
};
use icdq_core::nel::{link_query, link_sentence};
use icdq_core::supervision::build_labeled_set;

fn fixture_kb() -> KnowledgeBase {
    let concepts = [
        ("sciatica", "sciatica", "condition"),
        ("right", "right", "laterality"),
        ("left", "left", "laterality"),
        ("dm", "diabetes mellitus", "condition"),
    ]
    .into_iter()
    .map(|(id, name, ty)| {
        (
            Concept {
                concept_id: id.into(),
                canonical_name: name.into(),
                synonyms: vec![],
                semantic_type: ty.into(),
            },
            0,
        )
    })
    .collect();
    let edges = vec![
        ("sciatica".into(), "right".into(), "laterality_of".into(), 0),
        ("sciatica".into(), "left".into(), "laterality_of".into(), 0),
        ("sciatica".into(), "dm".into(), "comorbid_with".into(), 0),
    ];
    KnowledgeBase::build(concepts, edges).unwrap()
}

fn note(id: &str, side: &str, gold: &str) -> ClinicalNote {
    ClinicalNote {
        note_id: id.into(),
        sections: [
            (
                "FINDINGS".to_string(),
                format!("Sciatica localized to the {side} side. History includes diabetes mellitus."),
            ),
            ("DIAGNOSIS".to_string(), "Sciatica".to_string()),
        ]
        .into_iter()
        .collect(),
        gold_codes: [gold.to_string()].into_iter().collect(),
    }
}

#[test]
fn note_to_ranked_codes() {
    let kb = fixture_kb();
    let codes = vec![
        IcdCode { code: "M54.30".into(), description: "Sciatica, unspecified side".into(), version: IcdVersion::Icd10 },
        IcdCode { code: "M54.31".into(), description: "Sciatica, right side".into(), version: IcdVersion::Icd10 },
        IcdCode { code: "M54.32".into(), description: "Sciatica, left side".into(), version: IcdVersion::Icd10 },
        IcdCode { code: "E11.9".into(), description: "Type 2 diabetes mellitus without complications".into(), version: IcdVersion::Icd10 },
    ];
    let index = build_index(&codes).unwrap();

    // Several notes so the model sees both lateralities during training.
    let notes = vec![
        note("n1", "right", "M54.31"),
        note("n2", "left", "M54.32"),
        note("n3", "right", "M54.31"),
        note("n4", "left", "M54.32"),
    ];

    let rules = ExtractionRules::default();
    let mut graphs = Vec::new();
    let mut queries = Vec::new();
    for n in &notes {
        let outcome = extract_queries(n, &rules);
        assert_eq!(outcome.queries.len(), 1);
        let note_entities: Vec<_> =
            split_sentences(n).iter().flat_map(|s| link_sentence(s, &kb)).collect();
        for query in outcome.queries {
            let p_i = link_query(&query, &kb);
            assert_eq!(p_i.len(), 1, "query links the sciatica concept");
            let graph = build_graph(&query, &p_i, &note_entities, &kb, 2);
            assert!(graph.node_count() >= 3, "condition + laterality + comorbidity");
            graphs.push(graph);
            queries.push(query);
        }
    }

    let gold_codes_of: BTreeMap<_, _> =
        notes.iter().map(|n| (n.note_id.clone(), n.gold_codes.clone())).collect();
    let labeled = build_labeled_set(&graphs, &queries, &gold_codes_of, &index, 0.15);
    assert_eq!(labeled.graphs.len(), 4);
    assert_eq!(labeled.alignment["n1#q0"], "M54.31");

    // Laterality nodes are labeled relevant, the comorbidity node is not.
    for graph in &labeled.graphs {
        let labels = graph.labels.as_ref().unwrap();
        for node in &graph.nodes {
            let expect = match node.words[0].as_str() {
                "sciatica" | "right" | "left" => 1,
                _ => 0,
            };
            assert_eq!(labels[node.node_id], expect, "node {:?}", node.words);
        }
    }

    let emb = EmbeddingTable::random(12, 9);
    let examples: Vec<QueryGraph> = labeled
        .graphs
        .iter()
        .map(|g| QueryGraph { query_tokens: vec!["sciatica".into()], graph: g.clone() })
        .collect();
    let cfg = TrainConfig {
        embedding_dim: 12,
        hidden_dim: 8,
        gnn_layers: 2,
        learning_rate: 0.05,
        epochs: 60,
        l2_lambda: 1e-5,
        seed: 4,
        ..TrainConfig::default()
    };
    let outcome = train(&examples, &[], &emb, &cfg).unwrap();

    // The trained model keeps the laterality and drops the comorbidity.
    let graph = &labeled.graphs[0];
    let probs = score_graph(graph, &["sciatica".into()], &emb, &outcome.params).unwrap();
    let decisions = predict_relevant(&probs, cfg.tau);
    let q_c = contextual_query("Sciatica", graph, &decisions);
    assert_eq!(q_c, "Sciatica right");

    let result = search(&index, &q_c, 4);
    assert_eq!(result.ranked[0].0, "M54.31", "context word breaks the tie");

    // The bare query cannot separate the laterality codes: tie broken by
    // code, so the unspecified code wins.
    let bare = search(&index, "Sciatica", 4);
    assert_eq!(bare.ranked[0].0, "M54.30");
}
