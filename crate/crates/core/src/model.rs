//! Flat parameter storage shared by the dictionary, projection layer, GCN
//! and decoder. Components refer to their tensors by slot index so that a
//! single `Vec<Parameter>` can be fed to the tape, Adam and grad checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};
use crate::gnn::{GcnStack, PropertyDecoder};
use crate::math::{Parameter, Tensor, LEAKY_SLOPE};
use crate::projection::{NumericalProjectionLayer, SemanticDictionary};

/// Slots of one `x W + b` layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineSlots {
    pub weight: usize,
    pub bias: usize,
}

/// Sizes needed to allocate a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub semantic_nodes: usize,
    pub relations: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub target_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub params: Vec<Parameter>,
    pub dictionary: SemanticDictionary,
    pub npl: NumericalProjectionLayer,
    pub gcn: GcnStack,
    pub decoder: PropertyDecoder,
    pub dims: ModelDims,
}

/// Parameter groups reported separately by gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Dictionary,
    Projection,
    Gcn,
    Decoder,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let vals = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), vals).expect("shape matches")
}

/// Kaiming-uniform bound for a LeakyReLU layer with the given fan-in.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt()
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ModelParams {
    /// Randomly initialized model.
    ///
    /// Dictionary rows are uniform in `[-6/sqrt(H), 6/sqrt(H)]`; projection and
    /// decoder weights are Kaiming-uniform, GCN weights Glorot-uniform, biases zero.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, dropout: f64, rng: &mut R) -> Result<Self> {
        let h = dims.hidden;
        if h < 2 || dims.feature_dim == 0 || dims.target_dim == 0 {
            return Err(NrkgError::Config(format!("degenerate model dimensions {dims:?}")));
        }
        let mut params = Vec::new();
        let mut push = |p: Parameter| {
            params.push(p);
            params.len() - 1
        };
        let dict_bound = 6.0 / (h as f64).sqrt();
        let entity = push(Parameter::new(
            "dictionary.entity",
            uniform(rng, &[dims.semantic_nodes.max(1), h], dict_bound),
        ));
        let relation = push(Parameter::new(
            "dictionary.relation",
            uniform(rng, &[dims.relations.max(1), h], dict_bound),
        ));

        let mut affine = |name: &str, fan_in: usize, fan_out: usize, bound: f64, rng: &mut R| AffineSlots {
            weight: push(Parameter::new(
                format!("{name}.weight"),
                uniform(rng, &[fan_in, fan_out], bound),
            )),
            bias: push(Parameter::new(format!("{name}.bias"), Tensor::zeros(&[fan_out]))),
        };
        let npl = vec![
            affine("npl.0", dims.feature_dim, h, kaiming_bound(dims.feature_dim), rng),
            affine("npl.1", h, h, kaiming_bound(h), rng),
        ];
        let half = (h / 2).max(1);
        let decoder = vec![
            affine("decoder.0", h, half, kaiming_bound(h), rng),
            affine("decoder.1", half, dims.target_dim, kaiming_bound(half), rng),
        ];
        let gcn = (0..dims.gcn_layers)
            .map(|l| {
                push(Parameter::new(
                    format!("gcn.{l}.weight"),
                    uniform(rng, &[h, h], glorot_bound(h, h)),
                ))
            })
            .collect();

        Ok(Self {
            params,
            dictionary: SemanticDictionary { entity, relation },
            npl: NumericalProjectionLayer { layers: npl },
            gcn: GcnStack::leaky(gcn),
            decoder: PropertyDecoder {
                layers: decoder,
                dropout,
            },
            dims,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn group_of(&self, slot: usize) -> ParamGroup {
        let in_affine = |ls: &[AffineSlots]| ls.iter().any(|a| a.weight == slot || a.bias == slot);
        if slot == self.dictionary.entity || slot == self.dictionary.relation {
            ParamGroup::Dictionary
        } else if in_affine(&self.npl.layers) {
            ParamGroup::Projection
        } else if in_affine(&self.decoder.layers) {
            ParamGroup::Decoder
        } else {
            ParamGroup::Gcn
        }
    }

    /// Every slot exists and the layer shapes chain.
    pub fn check_slots(&self) -> Result<()> {
        let shape = |slot: usize| -> Result<&[usize]> {
            self.params
                .get(slot)
                .map(|p| p.value.shape())
                .ok_or_else(|| NrkgError::Dimension(format!("slot {slot} of {}", self.params.len())))
        };
        let h = self.dims.hidden;
        let expect = |slot: usize, want: &[usize]| -> Result<()> {
            let got = shape(slot)?;
            if got != want {
                return Err(NrkgError::Dimension(format!(
                    "{} has shape {got:?}, expected {want:?}",
                    self.params[slot].name
                )));
            }
            Ok(())
        };
        expect(self.dictionary.entity, &[self.dims.semantic_nodes.max(1), h])?;
        expect(self.dictionary.relation, &[self.dims.relations.max(1), h])?;
        let chain = |layers: &[AffineSlots], mut width: usize| -> Result<usize> {
            for l in layers {
                let out = shape(l.weight)?.get(1).copied().unwrap_or(0);
                expect(l.weight, &[width, out])?;
                expect(l.bias, &[out])?;
                width = out;
            }
            Ok(width)
        };
        let projected = chain(&self.npl.layers, self.dims.feature_dim)?;
        if projected != h {
            return Err(NrkgError::Dimension(format!(
                "projection emits {projected}, expected H = {h}"
            )));
        }
        let width = chain(&self.decoder.layers, h)?;
        if width != self.dims.target_dim {
            return Err(NrkgError::Dimension(format!(
                "decoder emits {width}, expected {}",
                self.dims.target_dim
            )));
        }
        for &w in &self.gcn.layers {
            expect(w, &[h, h])?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }
}
