use crate::numerics::Real;

/// Keys and values of one layer over a run of positions, `[rows × d_model]`
/// with heads contiguous inside each row. Keys are post-rotary.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock<T = f32> {
    pub rows: usize,
    pub k: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> KvBlock<T> {
    pub fn empty() -> Self {
        Self {
            rows: 0,
            k: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn width(&self) -> Option<usize> {
        (self.rows > 0).then(|| self.k.len() / self.rows)
    }
}

/// Per-layer K/V for the memory layers, ascending by layer index. Used both
/// for captured observation spans and for fused memory fed to attention.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKV<T = f32> {
    pub layers: Vec<usize>,
    pub blocks: Vec<KvBlock<T>>,
}

impl<T: Real> LayerKV<T> {
    pub fn empty(layers: &[usize]) -> Self {
        Self {
            layers: layers.to_vec(),
            blocks: layers.iter().map(|_| KvBlock::empty()).collect(),
        }
    }

    pub fn block(&self, layer: usize) -> Option<&KvBlock<T>> {
        self.layers.iter().position(|&l| l == layer).map(|i| &self.blocks[i])
    }

    /// Row count shared by every block, if consistent.
    pub fn rows(&self) -> Option<usize> {
        let r = self.blocks.first()?.rows;
        self.blocks.iter().all(|b| b.rows == r).then_some(r)
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|b| b.rows == 0)
    }
}
