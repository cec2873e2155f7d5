use super::layers::{BatchNorm1d, Conv1d, Dropout, Layer, Mode, Relu};
use super::tensor::{NumericBatch, Param};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Residual block: `[BN → Conv → ReLU] → Dropout → [BN → Conv → ReLU]` plus a
/// shortcut that is the identity, or a 1×1 projection when the channel count
/// changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub bn1: BatchNorm1d,
    pub conv1: Conv1d,
    relu1: Relu,
    pub dropout: Dropout,
    pub bn2: BatchNorm1d,
    pub conv2: Conv1d,
    relu2: Relu,
    pub shortcut: Option<Conv1d>,
}

impl ResidualBlock {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        keep_prob: f64,
        rng: &mut Rng,
    ) -> Self {
        let pad = kernel_size / 2;
        ResidualBlock {
            bn1: BatchNorm1d::new(&format!("{name}.bn1"), in_channels),
            conv1: Conv1d::new(&format!("{name}.conv1"), in_channels, out_channels, kernel_size, pad, false, rng),
            relu1: Relu::default(),
            dropout: Dropout::new(keep_prob),
            bn2: BatchNorm1d::new(&format!("{name}.bn2"), out_channels),
            conv2: Conv1d::new(&format!("{name}.conv2"), out_channels, out_channels, kernel_size, pad, false, rng),
            relu2: Relu::default(),
            shortcut: (in_channels != out_channels)
                .then(|| Conv1d::new(&format!("{name}.shortcut"), in_channels, out_channels, 1, 0, false, rng)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }
}

impl Layer for ResidualBlock {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch> {
        if x.channels() != self.in_channels() {
            return Err(Error::Shape(format!(
                "residual block expects {} channels, got {}",
                self.in_channels(),
                x.channels()
            )));
        }
        let h = self.bn1.forward(x, mode, rng)?;
        let h = self.conv1.forward(&h, mode, rng)?;
        let h = self.relu1.forward(&h, mode, rng)?;
        let h = self.dropout.forward(&h, mode, rng)?;
        let h = self.bn2.forward(&h, mode, rng)?;
        let h = self.conv2.forward(&h, mode, rng)?;
        let mut out = self.relu2.forward(&h, mode, rng)?;
        match &mut self.shortcut {
            Some(proj) => out.add_assign(&proj.forward(x, mode, rng)?)?,
            None => out.add_assign(x)?,
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let g = self.relu2.backward(grad)?;
        let g = self.conv2.backward(&g)?;
        let g = self.bn2.backward(&g)?;
        let g = self.dropout.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.conv1.backward(&g)?;
        let mut gx = self.bn1.backward(&g)?;
        match &mut self.shortcut {
            Some(proj) => gx.add_assign(&proj.backward(grad)?)?,
            None => gx.add_assign(grad)?,
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.bn1.params();
        out.extend(self.conv1.params());
        out.extend(self.bn2.params());
        out.extend(self.conv2.params());
        if let Some(p) = &self.shortcut {
            out.extend(p.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.bn1.params_mut();
        out.extend(self.conv1.params_mut());
        out.extend(self.bn2.params_mut());
        out.extend(self.conv2.params_mut());
        if let Some(p) = &mut self.shortcut {
            out.extend(p.params_mut());
        }
        out
    }

    fn buffers(&self) -> Vec<&Param> {
        let mut out = self.bn1.buffers();
        out.extend(self.bn2.buffers());
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.bn1.buffers_mut();
        out.extend(self.bn2.buffers_mut());
        out
    }
}
