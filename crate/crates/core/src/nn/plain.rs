use super::layers::{Conv1d, Dense, Flatten, Layer, MaxPool1d, Mode, Relu};
use super::tensor::{NumericBatch, Param};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::rng::Rng;

/// Plain convolutional classifier used as the first-stage label scorer:
/// `(Conv → ReLU → MaxPool) × stages`, flatten, dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainCnnConfig {
    pub filters: Vec<usize>,
    pub kernel_size: usize,
    pub input_len: usize,
    pub num_categories: usize,
}

impl Default for PlainCnnConfig {
    fn default() -> Self {
        PlainCnnConfig {
            filters: vec![16, 32, 64],
            kernel_size: 5,
            input_len: 600,
            num_categories: 5,
        }
    }
}

impl PlainCnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::config("stage1.filters", "need at least one positive stage"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("stage1.kernel_size", "must be odd"));
        }
        if self.input_len >> self.filters.len() == 0 {
            return Err(Error::config("stage1.input_len", "too short for the pooling cascade"));
        }
        if self.num_categories < 2 {
            return Err(Error::config("stage1.num_categories", "must be at least 2"));
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        let t = self.filters.iter().fold(self.input_len, |t, _| t / 2);
        t * self.filters.last().copied().unwrap_or(1)
    }

    pub fn to_kv(&self, kv: &mut KvMap, prefix: &str) {
        kv.set_list(format!("{prefix}filters"), &self.filters);
        kv.set(format!("{prefix}kernel_size"), self.kernel_size);
        kv.set(format!("{prefix}input_len"), self.input_len);
        kv.set(format!("{prefix}num_categories"), self.num_categories);
    }

    pub fn update_from_kv(&mut self, kv: &KvMap, prefix: &str) -> Result<()> {
        if let Some(v) = kv.get_list(&format!("{prefix}filters"))? {
            self.filters = v;
        }
        if let Some(v) = kv.get(&format!("{prefix}kernel_size"))? {
            self.kernel_size = v;
        }
        if let Some(v) = kv.get(&format!("{prefix}input_len"))? {
            self.input_len = v;
        }
        if let Some(v) = kv.get(&format!("{prefix}num_categories"))? {
            self.num_categories = v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv1d,
    relu: Relu,
    pool: MaxPool1d,
}

#[derive(Debug, Clone)]
pub struct PlainCnn {
    pub config: PlainCnnConfig,
    stages: Vec<Stage>,
    flatten: Flatten,
    pub head: Dense,
}

impl PlainCnn {
    pub fn new(config: PlainCnnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let mut channels = 1;
        let mut stages = Vec::new();
        for (i, &f) in config.filters.iter().enumerate() {
            stages.push(Stage {
                conv: Conv1d::new(&format!("cnn{}", i + 1), channels, f, k, k / 2, true, rng),
                relu: Relu::default(),
                pool: MaxPool1d::new(2),
            });
            channels = f;
        }
        let head = Dense::new("cnn_head", config.flat_len(), config.num_categories, rng);
        Ok(PlainCnn {
            config,
            stages,
            flatten: Flatten::default(),
            head,
        })
    }
}

impl Layer for PlainCnn {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch> {
        if x.time() != self.config.input_len || x.channels() != 1 {
            return Err(Error::SegmentLength {
                expected: self.config.input_len,
                actual: x.time(),
            });
        }
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.conv.forward(&h, mode, rng)?;
            h = s.relu.forward(&h, mode, rng)?;
            h = s.pool.forward(&h, mode, rng)?;
        }
        let h = self.flatten.forward(&h, mode, rng)?;
        self.head.forward(&h, mode, rng)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let g = self.head.backward(grad)?;
        let mut g = self.flatten.backward(&g)?;
        for s in self.stages.iter_mut().rev() {
            g = s.pool.backward(&g)?;
            g = s.relu.backward(&g)?;
            g = s.conv.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.stages.iter().flat_map(|s| s.conv.params()).collect();
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.stages.iter_mut().flat_map(|s| s.conv.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use crate::rng::{self, Stream};
    use rand::{Rng as _, SeedableRng};

    #[test]
    fn shapes_and_gradients() {
        let config = PlainCnnConfig {
            filters: vec![2, 3],
            kernel_size: 3,
            input_len: 13,
            num_categories: 5,
        };
        assert_eq!(config.flat_len(), 3 * 3);
        let mut net = PlainCnn::new(config, &mut rng::stream(1, Stream::Init)).unwrap();
        let mut r = Rng::seed_from_u64(2);
        let x = NumericBatch::from_vec([2, 1, 13], (0..26).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let logits = net.forward(&x, Mode::Eval, &mut r).unwrap();
        assert_eq!(logits.shape(), [2, 5, 1]);
        let report = gradient_check(&mut net, &x, &[1, 2], 1e-5, 1.0, 3).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
        let wrong = NumericBatch::zeros(1, 1, 12);
        assert!(net.forward(&wrong, Mode::Eval, &mut r).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PlainCnnConfig::default().validate().is_ok());
        assert!(PlainCnnConfig { kernel_size: 4, ..Default::default() }.validate().is_err());
        assert!(PlainCnnConfig { input_len: 4, ..Default::default() }.validate().is_err());
    }
}
