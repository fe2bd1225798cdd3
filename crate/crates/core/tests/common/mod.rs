#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use nrkg::kg::{build_cross_modal_kg, CrossModalKg, KgView, Record, Tag};
use nrkg::math::{backward_into, Parameter, Tape, LEAKY_SLOPE};
use nrkg::model::{ModelDims, ModelParams, ParamGroup};
use nrkg::synth::{SyntheticSpec, TokenRelationSpec};
use nrkg::training::{stream_rng, view_objective, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn record(id: &str, features: &[f64], target: f64, tags: &[(&str, &str)]) -> Record {
    Record {
        id: id.into(),
        features: features.to_vec(),
        target: Some(target),
        tags: tags.iter().map(|(r, t)| Tag::new(*r, *t)).collect(),
    }
}

/// Three proxies and two tokens over two relations.
pub fn five_node_kg() -> CrossModalKg {
    build_cross_modal_kg(&[
        record(
            "a",
            &[0.9, 0.1, 0.3],
            1.5,
            &[("processedBy", "X"), ("hasCrystalStructure", "Y")],
        ),
        record("b", &[0.2, 0.7, 0.4], -0.5, &[("processedBy", "X")]),
        record("c", &[0.5, 0.3, 0.8], 0.25, &[("hasCrystalStructure", "Y")]),
    ])
    .unwrap()
}

/// Worst relative gradient error of the full objective per parameter group.
pub fn full_loss_grad_errors(kg: &CrossModalKg, config: &TrainConfig) -> BTreeMap<&'static str, f64> {
    let view = kg.full_view();
    let dims = ModelDims {
        semantic_nodes: view.semantic_count(),
        relations: view.relation_count(),
        feature_dim: kg.feature_dim(),
        hidden: config.hidden,
        gcn_layers: config.gcn_layers,
        target_dim: 1,
    };
    let model = ModelParams::init(dims, config.dropout, &mut stream_rng(config.seed, 0)).unwrap();
    let errors = nrkg::math::grad_check_per_param(&model.params, 1e-6, |p: &mut [Parameter]| {
        let m = ModelParams {
            params: p.to_vec(),
            ..model.clone()
        };
        let mut tape = Tape::new();
        // same negatives and dropout mask at every probe
        let mut rng = stream_rng(config.seed, 1);
        let (loss, parts) = view_objective(&mut tape, &m, &view, config, (0.3, 1.2), &mut rng, true)?;
        backward_into(&tape, loss, p)?;
        Ok(parts.total)
    })
    .unwrap();
    let mut by_group = BTreeMap::new();
    for (slot, e) in errors.into_iter().enumerate() {
        let name = match model.group_of(slot) {
            ParamGroup::Dictionary => "dictionary",
            ParamGroup::Projection => "projection",
            ParamGroup::Gcn => "gcn",
            ParamGroup::Decoder => "decoder",
        };
        let w = by_group.entry(name).or_insert(0.0f64);
        *w = w.max(e);
    }
    by_group
}

/// HEA-sized data where every record carries one processing and one
/// crystal tag: processing tokens are independent of the composition,
/// crystal tokens follow it and are skewed towards a few structures.
pub fn semantic_spec(seed: u64) -> SyntheticSpec {
    let relation = |name: &str, prefix: &str, tokens, zipf, coupling| TokenRelationSpec {
        name: name.into(),
        prefix: prefix.into(),
        tokens,
        coverage: 1.0,
        extra_tag_prob: 0.0,
        max_tags: 1,
        zipf_exponent: zipf,
        coupling,
        effect_scale: 1.0,
    };
    SyntheticSpec {
        annotated_fraction: 1.0,
        relations: vec![
            relation("processedBy", "P", 33, 1.0, 0.0),
            relation("hasCrystalStructure", "C", 7, 2.0, 3.0),
        ],
        seed,
        ..Default::default()
    }
}

/// Up to 10 nodes: a few proxies with random tags over two relations.
pub fn random_small_view(rng: &mut ChaCha8Rng) -> KgView {
    let proxies = rng.random_range(1..=6);
    let tokens = rng.random_range(1..=(10 - proxies).min(4));
    let records: Vec<Record> = (0..proxies)
        .map(|i| Record {
            id: format!("p{i}"),
            features: vec![rng.random(), rng.random()],
            target: Some(rng.random()),
            tags: (0..tokens)
                .filter(|_| rng.random::<f64>() < 0.5)
                .map(|t| Tag::new(if t % 2 == 0 { "r" } else { "s" }, format!("T{t}")))
                .collect(),
        })
        .collect();
    build_cross_modal_kg(&records).unwrap().full_view()
}

/// `act(D^-1/2 (A + I) D^-1/2 H W)` per layer, by plain loops over the triples.
pub fn dense_gcn_oracle(view: &KgView, directed: bool, x: &[Vec<f64>], weights: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n = view.node_count();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for t in view.triples() {
        a[t.tail][t.head] = 1.0;
        if !directed {
            a[t.head][t.tail] = 1.0;
        }
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut h = x.to_vec();
    for w in weights {
        let mut ah = vec![vec![0.0; h[0].len()]; n];
        for i in 0..n {
            for j in 0..n {
                let c = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
                for k in 0..h[0].len() {
                    ah[i][k] += c * h[j][k];
                }
            }
        }
        h = (0..n)
            .map(|i| {
                (0..w[0].len())
                    .map(|o| {
                        let v: f64 = (0..w.len()).map(|k| ah[i][k] * w[k][o]).sum();
                        if v > 0.0 {
                            v
                        } else {
                            LEAKY_SLOPE * v
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h
}
