use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Seq2SeqConfig};
use crate::numcore::{DenseTensor, NumError, Tape, Var};

/// One gate's stacked filter blocks `[(C·M) × units]` and bias `[1 × units]`.
///
/// Row block `b = dir·K + d` holds `W_{d,dir}` for an input of `C` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub weight: DenseTensor,
    pub bias: DenseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub input_dim: usize,
    pub units: usize,
    pub reset: GateParams,
    pub update: GateParams,
    pub candidate: GateParams,
}

/// Encoder and decoder stacks plus the shared output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DcgruParams {
    pub config: Seq2SeqConfig,
    pub encoder: Vec<CellParams>,
    pub decoder: Vec<CellParams>,
    pub proj_weight: DenseTensor,
    pub proj_bias: DenseTensor,
}

#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub units: usize,
    pub reset: GateVars,
    pub update: GateVars,
    pub candidate: GateVars,
}

/// Parameters recorded on a tape; [`ParamVars::flat`] follows
/// [`DcgruParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub encoder: Vec<CellVars>,
    pub decoder: Vec<CellVars>,
    pub proj_weight: Var,
    pub proj_bias: Var,
}

fn glorot_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize, out: &mut Vec<f64>) {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    for _ in 0..rows * cols {
        out.push(rng.gen_range(-r..=r));
    }
}

impl GateParams {
    fn init(rng: &mut ChaCha8Rng, block_rows: usize, n_blocks: usize, units: usize, bias: f64) -> Self {
        let mut w = Vec::with_capacity(block_rows * n_blocks * units);
        for _ in 0..n_blocks {
            glorot_block(rng, block_rows, units, &mut w);
        }
        Self {
            weight: DenseTensor::matrix(block_rows * n_blocks, units, w).expect("sized above"),
            bias: DenseTensor::filled(vec![1, units], bias),
        }
    }
}

impl CellParams {
    fn init(rng: &mut ChaCha8Rng, input_dim: usize, units: usize, n_blocks: usize) -> Self {
        let c = input_dim + units;
        Self {
            input_dim,
            units,
            reset: GateParams::init(rng, c, n_blocks, units, 1.0),
            update: GateParams::init(rng, c, n_blocks, units, 1.0),
            candidate: GateParams::init(rng, c, n_blocks, units, 0.0),
        }
    }

    fn gates(&self) -> [(&'static str, &GateParams); 3] {
        [("reset", &self.reset), ("update", &self.update), ("candidate", &self.candidate)]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 3] {
        [&mut self.reset, &mut self.update, &mut self.candidate]
    }

    /// Filter block `W_{d,dir}` of one gate (`gate` in `reset|update|candidate`).
    pub fn block(&self, gate: &str, dir: usize, d: usize, k: usize) -> Option<DenseTensor> {
        let g = self.gates().into_iter().find(|(n, _)| *n == gate)?.1;
        let c = self.input_dim + self.units;
        let b = dir * k + d;
        if (b + 1) * c > g.weight.rows() {
            return None;
        }
        let vals = g.weight.values()[b * c * self.units..(b + 1) * c * self.units].to_vec();
        DenseTensor::matrix(c, self.units, vals).ok()
    }
}

impl DcgruParams {
    /// Per-block uniform Glorot weights; gate biases 1.0 for reset/update, 0
    /// elsewhere.
    pub fn init(config: &Seq2SeqConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = config.n_blocks();
        let stack = |rng: &mut ChaCha8Rng, first: usize| {
            (0..config.layers)
                .map(|l| CellParams::init(rng, if l == 0 { first } else { config.units }, config.units, m))
                .collect::<Vec<_>>()
        };
        let encoder = stack(&mut rng, config.input_dim);
        let decoder = stack(&mut rng, config.output_dim);
        let mut w = Vec::new();
        glorot_block(&mut rng, config.units, config.output_dim, &mut w);
        Ok(Self {
            config: *config,
            encoder,
            decoder,
            proj_weight: DenseTensor::matrix(config.units, config.output_dim, w).expect("sized above"),
            proj_bias: DenseTensor::zeros(vec![1, config.output_dim]),
        })
    }

    pub fn named(&self) -> Vec<(String, &DenseTensor)> {
        let mut out = Vec::new();
        for (stack, cells) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (l, cell) in cells.iter().enumerate() {
                for (gate, g) in cell.gates() {
                    out.push((format!("{stack}.{l}.{gate}.weight"), &g.weight));
                    out.push((format!("{stack}.{l}.{gate}.bias"), &g.bias));
                }
            }
        }
        out.push(("projection.weight".into(), &self.proj_weight));
        out.push(("projection.bias".into(), &self.proj_bias));
        out
    }

    pub fn tensors(&self) -> Vec<&DenseTensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out = Vec::new();
        for cell in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            for g in cell.gates_mut() {
                out.push(&mut g.weight);
                out.push(&mut g.bias);
            }
        }
        out.push(&mut self.proj_weight);
        out.push(&mut self.proj_bias);
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_map(&self) -> BTreeMap<String, DenseTensor> {
        self.named().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Rebuilds from named tensors; names and shapes must match `config`.
    pub fn from_map(config: &Seq2SeqConfig, map: &BTreeMap<String, DenseTensor>) -> Result<Self, ModelError> {
        let mut params = Self::init(config, 0)?;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != map.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                names.len(),
                map.len()
            )));
        }
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = map
                .get(name)
                .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }

    pub fn record(&self, tape: &mut Tape) -> Result<ParamVars, NumError> {
        let stack = |cells: &[CellParams], tape: &mut Tape| -> Result<Vec<CellVars>, NumError> {
            cells
                .iter()
                .map(|c| {
                    let mut gate = |g: &GateParams| -> Result<GateVars, NumError> {
                        Ok(GateVars {
                            weight: tape.parameter(g.weight.clone())?,
                            bias: tape.parameter(g.bias.clone())?,
                        })
                    };
                    Ok(CellVars {
                        units: c.units,
                        reset: gate(&c.reset)?,
                        update: gate(&c.update)?,
                        candidate: gate(&c.candidate)?,
                    })
                })
                .collect()
        };
        let encoder = stack(&self.encoder, tape)?;
        let decoder = stack(&self.decoder, tape)?;
        Ok(ParamVars {
            encoder,
            decoder,
            proj_weight: tape.parameter(self.proj_weight.clone())?,
            proj_bias: tape.parameter(self.proj_bias.clone())?,
        })
    }
}

impl ParamVars {
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for cell in self.encoder.iter().chain(&self.decoder) {
            for g in [cell.reset, cell.update, cell.candidate] {
                out.push(g.weight);
                out.push(g.bias);
            }
        }
        out.push(self.proj_weight);
        out.push(self.proj_bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FilterType;

    fn cfg() -> Seq2SeqConfig {
        Seq2SeqConfig {
            input_dim: 2,
            output_dim: 1,
            layers: 2,
            units: 3,
            max_diffusion_step: 2,
            filter_type: FilterType::DualRandomWalk,
            ..Seq2SeqConfig::default()
        }
    }

    #[test]
    fn shapes_and_biases() {
        let p = DcgruParams::init(&cfg(), 1).unwrap();
        assert_eq!(p.encoder[0].reset.weight.shape(), &[(2 + 3) * 4, 3]);
        assert_eq!(p.encoder[1].reset.weight.shape(), &[(3 + 3) * 4, 3]);
        assert_eq!(p.decoder[0].candidate.weight.shape(), &[(1 + 3) * 4, 3]);
        assert_eq!(p.proj_weight.shape(), &[3, 1]);
        assert!(p.encoder[0].update.bias.values().iter().all(|&b| b == 1.0));
        assert!(p.encoder[0].candidate.bias.values().iter().all(|&b| b == 0.0));
        let r = (6.0f64 / (5.0 + 3.0)).sqrt();
        assert!(p.encoder[0].reset.weight.values().iter().all(|w| w.abs() <= r));
        assert_eq!(p.tensors().len(), p.named().len());
        let block = p.encoder[0].block("update", 1, 1, 2).unwrap();
        assert_eq!(block.shape(), &[5, 3]);
        assert_eq!(block.get(0, 0), p.encoder[0].update.weight.get(15, 0));
    }

    #[test]
    fn seeded_and_map_round_trip() {
        let a = DcgruParams::init(&cfg(), 9).unwrap();
        assert_eq!(a, DcgruParams::init(&cfg(), 9).unwrap());
        assert_ne!(a, DcgruParams::init(&cfg(), 10).unwrap());
        let back = DcgruParams::from_map(&cfg(), &a.to_map()).unwrap();
        assert_eq!(back, a);
        let mut m = a.to_map();
        m.remove("projection.bias");
        assert!(DcgruParams::from_map(&cfg(), &m).is_err());
    }

    #[test]
    fn flat_order_matches_tensors() {
        let p = DcgruParams::init(&cfg(), 3).unwrap();
        let mut tape = Tape::new();
        let vars = p.record(&mut tape).unwrap();
        for (v, t) in vars.flat().into_iter().zip(p.tensors()) {
            assert_eq!(tape.value(v), t);
        }
    }
}
