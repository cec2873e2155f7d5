use super::backbone::{BackboneConfig, ResNet};
use super::layers::{Layer, Mode};
use super::plain::{PlainCnn, PlainCnnConfig};
use super::tensor::{NumericBatch, Param};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    ResNet(BackboneConfig),
    PlainCnn(PlainCnnConfig),
}

impl ModelConfig {
    pub fn architecture(&self) -> &'static str {
        match self {
            ModelConfig::ResNet(_) => "resnet",
            ModelConfig::PlainCnn(_) => "plain_cnn",
        }
    }

    pub fn num_categories(&self) -> usize {
        match self {
            ModelConfig::ResNet(c) => c.num_categories,
            ModelConfig::PlainCnn(c) => c.num_categories,
        }
    }

    /// Checks that segments of length `t` can pass through the network.
    pub fn accepts_len(&self, t: usize) -> Result<()> {
        match self {
            ModelConfig::ResNet(c) if t < c.min_input_len() => Err(Error::SegmentLength {
                expected: c.min_input_len(),
                actual: t,
            }),
            ModelConfig::PlainCnn(c) if t != c.input_len => Err(Error::SegmentLength {
                expected: c.input_len,
                actual: t,
            }),
            _ => Ok(()),
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("architecture", self.architecture());
        match self {
            ModelConfig::ResNet(c) => c.to_kv(&mut kv, ""),
            ModelConfig::PlainCnn(c) => c.to_kv(&mut kv, ""),
        }
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        match kv.get_str("architecture") {
            Some("resnet") => {
                let mut c = BackboneConfig::default();
                c.update_from_kv(kv, "")?;
                Ok(ModelConfig::ResNet(c))
            }
            Some("plain_cnn") => {
                let mut c = PlainCnnConfig::default();
                c.update_from_kv(kv, "")?;
                Ok(ModelConfig::PlainCnn(c))
            }
            other => Err(Error::config("architecture", format!("unknown value {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    ResNet(ResNet),
    PlainCnn(PlainCnn),
}

impl Model {
    /// Freshly initialised network; identical seeds give identical parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Init);
        Ok(match config {
            ModelConfig::ResNet(c) => Model::ResNet(ResNet::new(c.clone(), &mut rng)?),
            ModelConfig::PlainCnn(c) => Model::PlainCnn(PlainCnn::new(c.clone(), &mut rng)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::ResNet(m) => ModelConfig::ResNet(m.config.clone()),
            Model::PlainCnn(m) => ModelConfig::PlainCnn(m.config.clone()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn inner(&mut self) -> &mut dyn Layer {
        match self {
            Model::ResNet(m) => m,
            Model::PlainCnn(m) => m,
        }
    }

    fn inner_ref(&self) -> &dyn Layer {
        match self {
            Model::ResNet(m) => m,
            Model::PlainCnn(m) => m,
        }
    }
}

impl Layer for Model {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch> {
        self.inner().forward(x, mode, rng)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        self.inner().backward(grad)
    }

    fn params(&self) -> Vec<&Param> {
        self.inner_ref().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.inner().params_mut()
    }

    fn buffers(&self) -> Vec<&Param> {
        self.inner_ref().buffers()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.inner().buffers_mut()
    }
}

/// Logits `[B, K, 1]` for a batch of segments.
pub fn model_forward<L: Layer + ?Sized>(model: &mut L, batch: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch> {
    model.forward(batch, mode, rng)
}
