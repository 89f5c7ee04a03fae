//! Spatio-temporal frontend: a 3D convolutional stem followed by a 2D
//! residual stack applied to every frame independently.
//!
//! The stem mixes a short temporal window; everything after it treats frames
//! as batch entries, so the temporal length survives to the output.

use crate::augment::dropblock;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2dLayer, Conv3dLayer, Ctx, ParamSet, SeBlock};
use crate::optim::DropBlockCfg;
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Element;

/// One basic residual block: conv-bn-relu-conv-bn, optional channel
/// attention, then the skip connection and a final relu.
struct ResBlock {
    conv1: Conv2dLayer,
    bn1: BatchNorm,
    conv2: Conv2dLayer,
    bn2: BatchNorm,
    se: Option<SeBlock>,
    down: Option<(Conv2dLayer, BatchNorm)>,
}

impl ResBlock {
    fn new(name: &str, in_c: usize, out_c: usize, stride: usize, se: bool) -> Self {
        let conv1 =
            Conv2dLayer::new(format!("{name}.conv1"), in_c, out_c, (3, 3), (stride, stride), (1, 1));
        let conv2 = Conv2dLayer::new(format!("{name}.conv2"), out_c, out_c, (3, 3), (1, 1), (1, 1));
        let down = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2dLayer::new(format!("{name}.down"), in_c, out_c, (1, 1), (stride, stride), (0, 0)),
                BatchNorm::new(format!("{name}.down_bn"), out_c),
            )
        });
        ResBlock {
            conv1,
            bn1: BatchNorm::new(format!("{name}.bn1"), out_c),
            conv2,
            bn2: BatchNorm::new(format!("{name}.bn2"), out_c),
            se: se.then(|| SeBlock::new(format!("{name}.se"), out_c, 4)),
            down,
        }
    }

    fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        self.conv1.init(ps, rng);
        self.bn1.init(ps);
        self.conv2.init(ps, rng);
        self.bn2.init(ps);
        if let Some(se) = &self.se {
            se.init(ps, rng);
        }
        if let Some((conv, bn)) = &self.down {
            conv.init(ps, rng);
            bn.init(ps);
        }
    }

    fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let h = self.conv2.forward(ctx, h)?;
        let mut h = self.bn2.forward(ctx, h)?;
        if let Some(se) = &self.se {
            h = se.forward(ctx, h)?;
        }
        let skip = match &self.down {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, s)?
            }
            None => x,
        };
        let sum = ctx.tape.add(h, skip)?;
        Ok(ctx.tape.relu(sum))
    }
}

pub struct Frontend {
    stem: Conv3dLayer,
    stem_bn: BatchNorm,
    stages: Vec<Vec<ResBlock>>,
    out_bn: BatchNorm,
    feat: usize,
}

impl Frontend {
    /// `stages` lists (blocks, channels, stride) per stage; the first block
    /// of a stage carries its stride and channel change.
    pub fn new(name: &str, stem_channels: usize, stages: &[(usize, usize, usize)], se: bool) -> Self {
        assert!(!stages.is_empty(), "frontend needs at least one residual stage");
        let stem = Conv3dLayer::new(
            format!("{name}.stem"),
            1,
            stem_channels,
            (5, 7, 7),
            (1, 2, 2),
            (2, 3, 3),
        );
        let mut blocks = Vec::new();
        let mut in_c = stem_channels;
        for (si, &(n, c, stride)) in stages.iter().enumerate() {
            let mut stage = Vec::new();
            for b in 0..n {
                let s = if b == 0 { stride } else { 1 };
                stage.push(ResBlock::new(&format!("{name}.stage{si}.block{b}"), in_c, c, s, se));
                in_c = c;
            }
            blocks.push(stage);
        }
        Frontend {
            stem,
            stem_bn: BatchNorm::new(format!("{name}.stem_bn"), stem_channels),
            stages: blocks,
            out_bn: BatchNorm::new(format!("{name}.out_bn"), in_c),
            feat: in_c,
        }
    }

    /// Feature width F of the (B, T, F) output.
    pub fn feat(&self) -> usize {
        self.feat
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        self.stem.init(ps, rng);
        self.stem_bn.init(ps);
        for stage in &self.stages {
            for block in stage {
                block.init(ps, rng);
            }
        }
        self.out_bn.init(ps);
    }

    /// video: (B, T, H, W) → per-frame features (B, T, F).
    pub fn forward<E: Element>(
        &self,
        ctx: &mut Ctx<E>,
        video: Var,
        dropblock_cfg: Option<DropBlockCfg>,
    ) -> Result<Var> {
        let shape = ctx.tape.shape(video).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(
                "frontend",
                format!("expected (B, T, H, W) video, got {shape:?}"),
            ));
        }
        let (b, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if h < 8 || w < 8 {
            return Err(Error::shape(
                "frontend",
                format!("spatial dims {h}x{w} too small for the stem's two 2x downsamples"),
            ));
        }

        let x = ctx.tape.reshape(video, vec![b, 1, t, h, w])?;
        let x = self.stem.forward(ctx, x)?;
        let x = self.stem_bn.forward(ctx, x)?;
        let x = ctx.tape.relu(x);

        // Fold time into the batch; the rest of the stack is per-frame. The
        // (1, 3, 3) max pool has no temporal extent, so it commutes with the
        // fold.
        let hs = ctx.tape.shape(x)[3];
        let ws = ctx.tape.shape(x)[4];
        let c = self.stem.out_c;
        let x = ctx.tape.permute(x, &[0, 2, 1, 3, 4])?;
        let x = ctx.tape.reshape(x, vec![b * t, c, hs, ws])?;
        let mut x = ctx.tape.maxpool2d(x, (3, 3), (2, 2), (1, 1))?;

        for stage in &self.stages {
            for block in stage {
                x = block.forward(ctx, x)?;
            }
            if let Some(db) = dropblock_cfg {
                x = dropblock(ctx, x, db.keep_prob, db.block_size)?;
            }
        }

        let x = ctx.tape.mean_axes(x, &[2, 3])?;
        let x = ctx.tape.reshape(x, vec![b * t, self.feat])?;
        let x = self.out_bn.forward(ctx, x)?;
        ctx.tape.reshape(x, vec![b, t, self.feat])
    }
}
