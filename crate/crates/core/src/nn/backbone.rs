use super::block::ResidualBlock;
use super::layers::{Conv1d, Dense, GlobalAvgPool, Layer, MaxPool1d, Mode};
use super::tensor::{NumericBatch, Param};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub stem_filters: usize,
    pub num_blocks: usize,
    pub filter_schedule: Vec<usize>,
    pub kernel_size: usize,
    /// A max pool (size 2) follows every `pool_every`-th block.
    pub pool_every: usize,
    pub dropout_keep_train: f64,
    pub num_categories: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_filters: 64,
            num_blocks: 5,
            filter_schedule: vec![64, 64, 128, 128, 256],
            kernel_size: 3,
            pool_every: 2,
            dropout_keep_train: 0.5,
            num_categories: 5,
        }
    }
}

impl BackboneConfig {
    /// Six-block variant with the same doubling-every-two schedule.
    pub fn six_blocks() -> Self {
        BackboneConfig {
            num_blocks: 6,
            filter_schedule: vec![64, 64, 128, 128, 256, 256],
            ..Self::default()
        }
    }

    /// Schedule starting at `base` filters, doubling every two blocks.
    pub fn doubling_schedule(base: usize, blocks: usize) -> Vec<usize> {
        (0..blocks).map(|i| base << (i / 2)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_schedule.len() != self.num_blocks {
            return Err(Error::config(
                "nn.filter_schedule",
                format!("{} entries for {} blocks", self.filter_schedule.len(), self.num_blocks),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("nn.kernel_size", "must be odd"));
        }
        if !(self.dropout_keep_train > 0.0 && self.dropout_keep_train <= 1.0) {
            return Err(Error::config("nn.dropout_keep_train", "must lie in (0, 1]"));
        }
        if self.pool_every == 0 {
            return Err(Error::config("nn.pool_every", "must be positive"));
        }
        if self.num_categories < 2 || self.stem_filters == 0 || self.filter_schedule.contains(&0) {
            return Err(Error::config("nn", "filters must be positive and categories >= 2"));
        }
        Ok(())
    }

    pub fn pools_after(&self, block: usize) -> bool {
        (block + 1) % self.pool_every == 0
    }

    pub fn num_pools(&self) -> usize {
        self.num_blocks / self.pool_every
    }

    /// Shortest input that survives the pooling cascade.
    pub fn min_input_len(&self) -> usize {
        1 << self.num_pools()
    }

    pub fn to_kv(&self, kv: &mut KvMap, prefix: &str) {
        kv.set(format!("{prefix}stem_filters"), self.stem_filters);
        kv.set(format!("{prefix}num_blocks"), self.num_blocks);
        kv.set_list(format!("{prefix}filter_schedule"), &self.filter_schedule);
        kv.set(format!("{prefix}kernel_size"), self.kernel_size);
        kv.set(format!("{prefix}pool_every"), self.pool_every);
        kv.set(format!("{prefix}dropout_keep_train"), self.dropout_keep_train);
        kv.set(format!("{prefix}num_categories"), self.num_categories);
    }

    /// Reads fields present under `prefix`, keeping `self` for the rest.
    pub fn update_from_kv(&mut self, kv: &KvMap, prefix: &str) -> Result<()> {
        let key = |k: &str| format!("{prefix}{k}");
        if let Some(v) = kv.get(&key("stem_filters"))? {
            self.stem_filters = v;
        }
        if let Some(v) = kv.get(&key("num_blocks"))? {
            self.num_blocks = v;
        }
        if let Some(v) = kv.get_list(&key("filter_schedule"))? {
            self.filter_schedule = v;
        }
        if let Some(v) = kv.get(&key("kernel_size"))? {
            self.kernel_size = v;
        }
        if let Some(v) = kv.get(&key("pool_every"))? {
            self.pool_every = v;
        }
        if let Some(v) = kv.get(&key("dropout_keep_train"))? {
            self.dropout_keep_train = v;
        }
        if let Some(v) = kv.get(&key("num_categories"))? {
            self.num_categories = v;
        }
        Ok(())
    }
}

/// Stem convolution, residual blocks with periodic max pooling, global average
/// pooling and a dense classification head.
#[derive(Debug, Clone)]
pub struct ResNet {
    pub config: BackboneConfig,
    pub stem: Conv1d,
    pub blocks: Vec<ResidualBlock>,
    pools: Vec<Option<MaxPool1d>>,
    gap: GlobalAvgPool,
    pub head: Dense,
}

impl ResNet {
    pub fn new(config: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let stem = Conv1d::new("stem", 1, config.stem_filters, k, k / 2, false, rng);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut pools = Vec::with_capacity(config.num_blocks);
        let mut channels = config.stem_filters;
        for (i, &filters) in config.filter_schedule.iter().enumerate() {
            blocks.push(ResidualBlock::new(
                &format!("block{}", i + 1),
                channels,
                filters,
                k,
                config.dropout_keep_train,
                rng,
            ));
            pools.push(config.pools_after(i).then(|| MaxPool1d::new(2)));
            channels = filters;
        }
        let head = Dense::new("head", channels, config.num_categories, rng);
        Ok(ResNet {
            config,
            stem,
            blocks,
            pools,
            gap: GlobalAvgPool::default(),
            head,
        })
    }
}

impl Layer for ResNet {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch> {
        if x.time() < self.config.min_input_len() {
            return Err(Error::Shape(format!(
                "input length {} is shorter than the pooling cascade minimum {}",
                x.time(),
                self.config.min_input_len()
            )));
        }
        let mut h = self.stem.forward(x, mode, rng)?;
        for (block, pool) in self.blocks.iter_mut().zip(&mut self.pools) {
            h = block.forward(&h, mode, rng)?;
            if let Some(pool) = pool {
                h = pool.forward(&h, mode, rng)?;
            }
        }
        let h = self.gap.forward(&h, mode, rng)?;
        self.head.forward(&h, mode, rng)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let g = self.head.backward(grad)?;
        let mut g = self.gap.backward(&g)?;
        for (block, pool) in self.blocks.iter_mut().zip(&mut self.pools).rev() {
            if let Some(pool) = pool {
                g = pool.backward(&g)?;
            }
            g = block.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.stem.params();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.stem.params_mut();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    fn buffers(&self) -> Vec<&Param> {
        self.blocks.iter().flat_map(|b| b.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.blocks.iter_mut().flat_map(|b| b.buffers_mut()).collect()
    }
}
