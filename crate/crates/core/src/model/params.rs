use indexmap::IndexMap;
use rand::Rng;

use super::config::ModelConfig;
use super::ModelError;
use crate::rng::stream_rng;
use crate::tensor::{RunningStats, Tape, Tensor, Var};

/// How a parameter tensor is filled at initialisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform(f64),
    Zeros,
    Ones,
    /// LSTM bias: zeros except the forget-gate block, which is 1.
    ForgetBias { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, c_out: usize, c_in: usize, k: usize, bias: bool) {
    let bound = 1.0 / ((c_in * k) as f64).sqrt();
    out.push(spec(format!("{name}.weight"), &[c_out, c_in, k], Init::Uniform(bound)));
    if bias {
        out.push(spec(format!("{name}.bias"), &[c_out], Init::Zeros));
    }
}

fn linear(out: &mut Vec<ParamSpec>, name: &str, d_out: usize, d_in: usize, bias: bool) {
    let bound = 1.0 / (d_in as f64).sqrt();
    out.push(spec(format!("{name}.weight"), &[d_out, d_in], Init::Uniform(bound)));
    if bias {
        out.push(spec(format!("{name}.bias"), &[d_out], Init::Zeros));
    }
}

fn batchnorm(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    out.push(spec(format!("{name}.gamma"), &[c], Init::Ones));
    out.push(spec(format!("{name}.beta"), &[c], Init::Zeros));
}

/// Names of the batch-norm layers, in forward order, with their widths.
pub fn batchnorm_layers(config: &ModelConfig) -> Vec<(String, usize)> {
    let mut out = vec![("stem.bn".to_string(), config.initial_filters)];
    for (i, &c) in config.block_channels.iter().enumerate() {
        out.push((format!("block{}.bn1", i + 1), c));
        out.push((format!("block{}.bn2", i + 1), c));
    }
    out
}

/// Every learnable tensor of a configuration in a fixed order. Tensors of
/// disabled components (LSTM, attention) are not allocated.
pub fn layout(config: &ModelConfig, input_channels: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    conv(&mut out, "stem.conv", config.initial_filters, input_channels, config.initial_kernel, false);
    batchnorm(&mut out, "stem.bn", config.initial_filters);
    let mut c_in = config.initial_filters;
    for (i, &c) in config.block_channels.iter().enumerate() {
        let b = format!("block{}", i + 1);
        conv(&mut out, &format!("{b}.conv1"), c, c_in, 3, false);
        batchnorm(&mut out, &format!("{b}.bn1"), c);
        conv(&mut out, &format!("{b}.conv2"), c, c, 3, false);
        batchnorm(&mut out, &format!("{b}.bn2"), c);
        if c != c_in {
            conv(&mut out, &format!("{b}.skip"), c, c_in, 1, true);
        }
        c_in = c;
    }
    if config.variant.uses_lstm() {
        let h = config.lstm_hidden;
        let bound = 1.0 / (h as f64).sqrt();
        out.push(spec("lstm.w_ih", &[4 * h, c_in], Init::Uniform(bound)));
        out.push(spec("lstm.w_hh", &[4 * h, h], Init::Uniform(bound)));
        out.push(spec("lstm.bias", &[4 * h], Init::ForgetBias { hidden: h }));
    }
    if config.variant.uses_attention() {
        for i in 0..config.num_heads {
            for part in ["query", "key", "value"] {
                linear(&mut out, &format!("attn.{i}.{part}"), config.head_dim, config.lstm_hidden, true);
            }
        }
        let d = config.attention_dim();
        linear(&mut out, "attn.out", d, d, false);
    }
    linear(&mut out, "proj", config.projection_dim, 2 * config.frame_dim(), true);
    linear(&mut out, "classifier", config.num_classes, config.projection_dim, true);
    out
}

pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Learnable weights plus batch-norm running statistics.
///
/// All stored values are kept representable in `f32`, so checkpoints
/// (which store `f32`) reload bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    input_channels: usize,
    weights: IndexMap<String, Tensor>,
    stats: IndexMap<String, RunningStats>,
}

/// Tape handles for every parameter of a [`ModelParams`].
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn new(vars: IndexMap<String, Var>) -> Self {
        Bound { vars }
    }

    /// Panics when `name` is not part of the layout; the forward pass only
    /// asks for names the layout produced.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter {name} is not bound"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl ModelParams {
    /// Fresh parameters drawn from the `init` sub-stream of `seed`.
    pub fn init(config: &ModelConfig, input_channels: usize, seed: u64) -> Result<Self, ModelError> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(ModelError::InvalidConfig(errs));
        }
        if input_channels == 0 {
            return Err(ModelError::InvalidConfig(vec!["input channels must be positive".into()]));
        }
        let mut rng = stream_rng(seed, "init", &[]);
        let mut weights = IndexMap::new();
        for p in layout(config, input_channels) {
            let t = match p.init {
                Init::Uniform(b) => Tensor::from_fn(p.shape.clone(), |_| round_f32(rng.random_range(-b..=b))),
                Init::Zeros => Tensor::zeros(p.shape.clone()),
                Init::Ones => Tensor::full(p.shape.clone(), 1.0),
                Init::ForgetBias { hidden } => {
                    Tensor::from_fn(p.shape.clone(), |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
                }
            };
            weights.insert(p.name, t);
        }
        let stats = batchnorm_layers(config)
            .into_iter()
            .map(|(n, c)| (n, RunningStats::new(c)))
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            input_channels,
            weights,
            stats,
        })
    }

    /// Reassembles parameters, checking names and shapes against the layout.
    pub fn from_parts(
        config: ModelConfig,
        input_channels: usize,
        weights: IndexMap<String, Tensor>,
        stats: IndexMap<String, RunningStats>,
    ) -> Result<Self, ModelError> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(ModelError::InvalidConfig(errs));
        }
        let want = layout(&config, input_channels);
        if want.len() != weights.len() {
            return Err(ModelError::Input(format!(
                "expected {} parameter tensors, found {}",
                want.len(),
                weights.len()
            )));
        }
        for p in &want {
            match weights.get(&p.name) {
                Some(t) if t.shape() == p.shape => {}
                Some(t) => {
                    return Err(ModelError::Input(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.shape
                    )))
                }
                None => return Err(ModelError::Input(format!("missing parameter {}", p.name))),
            }
        }
        for (name, c) in batchnorm_layers(&config) {
            match stats.get(&name) {
                Some(s) if s.mean.len() == c && s.var.len() == c => {}
                _ => return Err(ModelError::Input(format!("missing or mis-sized running statistics {name}"))),
            }
        }
        let weights = want
            .iter()
            .map(|p| (p.name.clone(), weights[&p.name].clone()))
            .collect();
        Ok(ModelParams {
            config,
            input_channels,
            weights,
            stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn weights(&self) -> &IndexMap<String, Tensor> {
        &self.weights
    }

    pub fn stats(&self) -> &IndexMap<String, RunningStats> {
        &self.stats
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.values().map(Tensor::numel).sum()
    }

    /// Applies `f` to each weight tensor in layout order, then rounds every
    /// value back to `f32` precision.
    pub fn update_weights(&mut self, mut f: impl FnMut(usize, &mut Tensor)) {
        for (i, t) in self.weights.values_mut().enumerate() {
            f(i, t);
            t.data_mut().iter_mut().for_each(|v| *v = round_f32(*v));
        }
    }

    /// Replaces the running statistics with the ones produced by a
    /// training-mode forward pass.
    pub fn commit_stats(&mut self, mut stats: IndexMap<String, RunningStats>) {
        for s in stats.values_mut() {
            s.mean.iter_mut().chain(s.var.iter_mut()).for_each(|v| *v = round_f32(*v));
        }
        assert_eq!(stats.len(), self.stats.len(), "running statistics layout changed");
        self.stats = stats;
    }

    /// Registers every weight on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .weights
            .iter()
            .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), trainable)))
            .collect();
        Bound { vars }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;

    #[test]
    fn variants_allocate_only_their_components() {
        let mut c = ModelConfig::default();
        let full = layout(&c, 1);
        assert!(full.iter().any(|p| p.name == "attn.7.value.weight"));
        assert!(full.iter().any(|p| p.name == "attn.out.weight" && p.shape == [256, 256]));
        c.variant = Variant::Resnet;
        let names: Vec<String> = layout(&c, 1).into_iter().map(|p| p.name).collect();
        assert!(!names.iter().any(|n| n.starts_with("attn") || n.starts_with("lstm")));
        assert!(names.contains(&"proj.weight".to_string()));
    }

    #[test]
    fn init_is_seeded_and_f32_representable() {
        let c = ModelConfig {
            block_channels: [4, 8, 8],
            initial_filters: 4,
            lstm_hidden: 8,
            num_heads: 2,
            head_dim: 4,
            projection_dim: 8,
            ..ModelConfig::default()
        };
        let a = ModelParams::init(&c, 1, 7).unwrap();
        assert_eq!(a, ModelParams::init(&c, 1, 7).unwrap());
        assert_ne!(a, ModelParams::init(&c, 1, 8).unwrap());
        for t in a.weights().values() {
            assert!(t.data().iter().all(|&v| v == round_f32(v)));
        }
        let bias = &a.weights()["lstm.bias"];
        assert_eq!(&bias.data()[8..16], &[1.0; 8]);
        assert!(bias.data()[..8].iter().chain(&bias.data()[16..]).all(|&v| v == 0.0));
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let c = ModelConfig::default();
        let p = ModelParams::init(&c, 1, 0).unwrap();
        let mut w = p.weights().clone();
        w.insert("proj.bias".into(), Tensor::zeros([3]));
        assert!(ModelParams::from_parts(c.clone(), 1, w, p.stats().clone()).is_err());
        let mut w = p.weights().clone();
        w.shift_remove("classifier.bias");
        assert!(ModelParams::from_parts(c, 1, w, p.stats().clone()).is_err());
    }
}
