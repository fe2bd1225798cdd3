//! Synthetic records with a known generating function.
//!
//! Features are sparse compositions on the simplex. Every record has latent
//! tokens drawn from a long-tail prior tilted by the composition, so they are
//! partly predictable from the numbers; only annotated records expose them as
//! tags. The target is linear in the features plus an additive effect per
//! latent token plus Gaussian noise.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};
use crate::kg::{Record, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRelationSpec {
    pub name: String,
    /// Token labels are `prefix` plus a 1-based index.
    pub prefix: String,
    pub tokens: usize,
    /// Probability that an annotated record carries this relation at all.
    pub coverage: f64,
    /// Probability of each additional tag after the first.
    pub extra_tag_prob: f64,
    pub max_tags: usize,
    pub zipf_exponent: f64,
    /// How strongly the composition tilts the token choice.
    pub coupling: f64,
    /// Relative spread of this relation's token effects before calibration.
    #[serde(default = "unit")]
    pub effect_scale: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub feature_dim: usize,
    pub min_nonzero: usize,
    pub max_nonzero: usize,
    /// Share of records carrying any tag.
    pub annotated_fraction: f64,
    pub relations: Vec<TokenRelationSpec>,
    /// Share of signal variance owed to token effects.
    pub token_share: f64,
    /// Signal variance over noise variance.
    pub snr: f64,
    pub weight_scale: f64,
    /// Every token is used by at least this many records.
    pub min_token_count: usize,
    pub intercept: f64,
    pub weights: Option<Vec<f64>>,
    /// Effects per relation, in token order; replaces the calibrated ones.
    pub token_effects: Option<BTreeMap<String, Vec<f64>>>,
    pub noise_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_records: 397,
            feature_dim: 7,
            min_nonzero: 3,
            max_nonzero: 6,
            annotated_fraction: 0.51,
            relations: vec![
                TokenRelationSpec {
                    name: "processedBy".into(),
                    prefix: "P".into(),
                    tokens: 33,
                    coverage: 0.9,
                    extra_tag_prob: 0.25,
                    max_tags: 2,
                    zipf_exponent: 1.0,
                    coupling: 1.0,
                    effect_scale: 1.0,
                },
                TokenRelationSpec {
                    name: "hasCrystalStructure".into(),
                    prefix: "C".into(),
                    tokens: 7,
                    coverage: 0.85,
                    extra_tag_prob: 0.0,
                    max_tags: 1,
                    zipf_exponent: 1.0,
                    coupling: 3.0,
                    effect_scale: 1.0,
                },
            ],
            token_share: 0.3,
            snr: 5.0,
            weight_scale: 100.0,
            min_token_count: 5,
            intercept: 0.0,
            weights: None,
            token_effects: None,
            noise_sigma: None,
            seed: 0,
        }
    }
}

/// The exact generating parameters, written beside the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// relation -> token -> additive effect
    pub token_effects: BTreeMap<String, BTreeMap<String, f64>>,
    pub noise_sigma: f64,
    /// Noise-free target of every record, in record order.
    pub signal: Vec<f64>,
    /// Tokens behind every record's target, observed or not.
    pub latent_tags: Vec<Vec<Tag>>,
    pub realized_token_share: f64,
    pub realized_snr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<Record>,
    pub truth: GroundTruth,
}

impl SyntheticSpec {
    // negated comparisons so that NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NrkgError::Spec(m));
        if self.n_records == 0 || self.feature_dim == 0 {
            return bad("n_records and feature_dim must be positive".into());
        }
        if self.min_nonzero == 0 || self.min_nonzero > self.max_nonzero {
            return bad(format!(
                "nonzero range {}..={} is empty",
                self.min_nonzero, self.max_nonzero
            ));
        }
        if self.max_nonzero > self.feature_dim {
            return bad(format!(
                "max_nonzero = {} exceeds feature_dim = {}",
                self.max_nonzero, self.feature_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.annotated_fraction) {
            return bad("annotated_fraction outside [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.token_share) || !(self.snr > 0.0) {
            return bad("token_share must lie in [0, 1) and snr be positive".into());
        }
        if let Some(w) = &self.weights {
            if w.len() != self.feature_dim {
                return bad(format!("{} weights for feature_dim = {}", w.len(), self.feature_dim));
            }
        }
        if self.noise_sigma.is_some_and(|s| !(s >= 0.0)) {
            return bad("noise_sigma must be nonnegative".into());
        }
        for r in &self.relations {
            if r.tokens == 0 || r.max_tags == 0 || r.max_tags > r.tokens {
                return bad(format!("relation {} needs 1 <= max_tags <= tokens", r.name));
            }
            if let Some(e) = self.token_effects.as_ref().and_then(|m| m.get(&r.name)) {
                if e.len() != r.tokens {
                    return bad(format!("{} effects for {} tokens of {}", e.len(), r.tokens, r.name));
                }
            }
        }
        if let Some(m) = &self.token_effects {
            if let Some(k) = m.keys().find(|k| !self.relations.iter().any(|r| &r.name == *k)) {
                return bad(format!("effects given for unknown relation {k}"));
            }
        }
        Ok(())
    }

    fn token(&self, rel: &TokenRelationSpec, k: usize) -> String {
        let width = rel.tokens.to_string().len();
        format!("{}{:0width$}", rel.prefix, k + 1)
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

fn composition<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<f64> {
    let k = rng.random_range(spec.min_nonzero..=spec.max_nonzero);
    let mut slots: Vec<usize> = (0..spec.feature_dim).collect();
    slots.shuffle(rng);
    let mut v = vec![0.0; spec.feature_dim];
    // flat Dirichlet through normalized exponentials
    for &s in &slots[..k] {
        let g: f64 = Exp1.sample(rng);
        v[s] = g.max(1e-3);
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

fn sample_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Draws records and their ground truth.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_records;
    let d = spec.feature_dim;
    let features: Vec<Vec<f64>> = (0..n).map(|_| composition(spec, &mut rng)).collect();

    let annotated: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < spec.annotated_fraction).collect();
    // every record has latent tokens; only annotated ones are observed
    let mut tags: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); spec.relations.len()]; n];
    let mut observed: Vec<Vec<bool>> = vec![vec![false; spec.relations.len()]; n];
    for (ri, rel) in spec.relations.iter().enumerate() {
        let dirs: Vec<Vec<f64>> = (0..rel.tokens)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        // per-token projections, z-scored over records
        let mut proj: Vec<Vec<f64>> = dirs
            .iter()
            .map(|u| {
                features
                    .iter()
                    .map(|v| u.iter().zip(v).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        for p in &mut proj {
            let m = p.iter().sum::<f64>() / n as f64;
            let s = variance(p).sqrt().max(1e-12);
            p.iter_mut().for_each(|x| *x = (*x - m) / s);
        }
        let prior: Vec<f64> = (0..rel.tokens)
            .map(|k| -(rel.zipf_exponent * ((k + 1) as f64).ln()))
            .collect();
        for i in 0..n {
            observed[i][ri] = annotated[i] && rng.random::<f64>() < rel.coverage;
            let logits: Vec<f64> = (0..rel.tokens).map(|k| prior[k] + rel.coupling * proj[k][i]).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let mut chosen = Vec::new();
            while chosen.len() < rel.max_tags {
                if !chosen.is_empty() && rng.random::<f64>() >= rel.extra_tag_prob {
                    break;
                }
                let k = sample_weighted(&w, &mut rng);
                w[k] = 0.0;
                chosen.push(k);
            }
            chosen.sort_unstable();
            tags[i][ri] = chosen;
        }
        rebalance(&mut tags, &observed, ri, rel, spec.min_token_count, &mut rng)?;
    }

    let weights = match &spec.weights {
        Some(w) => w.clone(),
        None => (0..d)
            .map(|_| spec.weight_scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let linear: Vec<f64> = features
        .iter()
        .map(|v| spec.intercept + weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>())
        .collect();

    let mut effects: Vec<Vec<f64>> = spec
        .relations
        .iter()
        .map(|r| {
            (0..r.tokens)
                .map(|_| r.effect_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let token_part = |effects: &[Vec<f64>]| -> Vec<f64> {
        tags.iter()
            .map(|per_rel| {
                per_rel
                    .iter()
                    .enumerate()
                    .flat_map(|(ri, ks)| ks.iter().map(move |&k| effects[ri][k]))
                    .sum()
            })
            .collect()
    };
    match &spec.token_effects {
        Some(given) => {
            for (ri, r) in spec.relations.iter().enumerate() {
                effects[ri] = given.get(&r.name).cloned().unwrap_or_else(|| vec![0.0; r.tokens]);
            }
        }
        None => {
            let raw = variance(&token_part(&effects));
            let lin = variance(&linear);
            let scale = if raw > 0.0 && spec.token_share > 0.0 {
                (spec.token_share / (1.0 - spec.token_share) * lin / raw).sqrt()
            } else {
                0.0
            };
            effects.iter_mut().flatten().for_each(|e| *e *= scale);
        }
    }
    let tokens = token_part(&effects);
    let signal: Vec<f64> = linear.iter().zip(&tokens).map(|(l, t)| l + t).collect();
    let signal_var = variance(&signal);
    let noise_sigma = spec.noise_sigma.unwrap_or_else(|| (signal_var / spec.snr).sqrt());

    let records = (0..n)
        .map(|i| {
            let noise: f64 = rng.sample(StandardNormal);
            Record {
                id: format!("m{:04}", i + 1),
                features: features[i].clone(),
                target: Some(signal[i] + noise_sigma * noise),
                tags: spec
                    .relations
                    .iter()
                    .zip(&tags[i])
                    .zip(&observed[i])
                    .filter(|(_, seen)| **seen)
                    .flat_map(|((r, ks), _)| ks.iter().map(move |&k| Tag::new(&r.name, spec.token(r, k))))
                    .collect(),
            }
        })
        .collect();

    let token_effects = spec
        .relations
        .iter()
        .zip(&effects)
        .map(|(r, es)| {
            (
                r.name.clone(),
                es.iter().enumerate().map(|(k, e)| (spec.token(r, k), *e)).collect(),
            )
        })
        .collect();
    let latent_tags = tags
        .iter()
        .map(|per_rel| {
            spec.relations
                .iter()
                .zip(per_rel)
                .flat_map(|(r, ks)| ks.iter().map(move |&k| Tag::new(&r.name, spec.token(r, k))))
                .collect()
        })
        .collect();
    let token_var = variance(&tokens);
    let lin_var = variance(&linear);
    Ok(SyntheticData {
        records,
        truth: GroundTruth {
            spec: spec.clone(),
            weights,
            intercept: spec.intercept,
            token_effects,
            noise_sigma,
            realized_token_share: if token_var + lin_var > 0.0 {
                token_var / (token_var + lin_var)
            } else {
                0.0
            },
            realized_snr: if noise_sigma > 0.0 {
                signal_var / (noise_sigma * noise_sigma)
            } else {
                f64::INFINITY
            },
            signal,
            latent_tags,
        },
    })
}

/// Moves observed tags from the most used token to any token observed fewer
/// than `min_count` times.
fn rebalance<R: Rng>(
    tags: &mut [Vec<Vec<usize>>],
    observed: &[Vec<bool>],
    ri: usize,
    rel: &TokenRelationSpec,
    min_count: usize,
    rng: &mut R,
) -> Result<()> {
    let tagged = observed.iter().filter(|o| o[ri]).count();
    if min_count == 0 || tagged == 0 {
        return Ok(());
    }
    if tagged < min_count * rel.tokens {
        return Err(NrkgError::Spec(format!(
            "{tagged} records carry {} but {} tokens need {min_count} each",
            rel.name, rel.tokens
        )));
    }
    loop {
        let mut count = vec![0usize; rel.tokens];
        (0..tags.len())
            .filter(|&i| observed[i][ri])
            .flat_map(|i| &tags[i][ri])
            .for_each(|&k| count[k] += 1);
        let Some(short) = (0..rel.tokens).find(|&k| count[k] < min_count) else {
            return Ok(());
        };
        let rich = (0..rel.tokens)
            .max_by_key(|&k| (count[k], std::cmp::Reverse(k)))
            .expect("tokens > 0");
        let donors: Vec<usize> = (0..tags.len())
            .filter(|&i| observed[i][ri] && tags[i][ri].contains(&rich) && !tags[i][ri].contains(&short))
            .collect();
        let &i = donors.choose(rng).expect("the richest token has a record");
        let slot = tags[i][ri].iter().position(|&k| k == rich).expect("donor holds it");
        tags[i][ri][slot] = short;
        tags[i][ri].sort_unstable();
    }
}
