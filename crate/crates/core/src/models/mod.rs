//! The three architectures under study: frontend + MS-TCN, frontend + BiGRU,
//! and either of those with a domain discriminator attached for adversarial
//! training. A lateral inhibition layer can be inserted before the head in
//! any variant.

pub mod frontend;
pub mod mstcn;

use serde::{Deserialize, Serialize};

use crate::adversarial::{grl, DaConfig, Discriminator};
use crate::error::{Error, Result};
use crate::li::{LiLayer, LiMode};
use crate::nn::{dropout, BiGru, Ctx, Linear, ParamSet};
use crate::optim::DropBlockCfg;
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Element;

pub use frontend::Frontend;
pub use mstcn::MsTcn;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// CPU-minutes scale: 16-frame 32x32 clips, narrow stack.
    #[default]
    Desk,
    /// Full-scale topology: 29-frame 64x64 clips, ResNet-18-shaped stack.
    Paper,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mstcn,
    Bigru,
}

/// Widths and shapes implied by a preset. `input` may be overridden per
/// config; everything else is pinned so parameter counts stay reproducible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dims {
    pub input: [usize; 3],
    pub stem: usize,
    /// (blocks, channels, stride) per residual stage.
    pub stages: Vec<(usize, usize, usize)>,
    /// Frontend feature width F.
    pub feat: usize,
    pub mstcn_channels: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_true")]
    pub li: bool,
    #[serde(default)]
    pub li_mode: LiMode,
    /// (T, H, W) override; defaults to the preset's geometry.
    #[serde(default)]
    pub input: Option<[usize; 3]>,
    #[serde(default = "default_true")]
    pub se: bool,
    /// Gates whether DropBlock is applied when the trainer supplies a
    /// configuration for it.
    #[serde(default = "default_true")]
    pub dropblock: bool,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_true() -> bool {
    true
}
fn default_dropout() -> f64 {
    0.12
}

impl ModelConfig {
    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            num_classes,
            preset: Preset::Desk,
            backend: Backend::Mstcn,
            li: true,
            li_mode: LiMode::Spiking,
            input: None,
            se: true,
            dropblock: true,
            dropout: default_dropout(),
        }
    }

    pub fn paper(num_classes: usize) -> Self {
        ModelConfig { preset: Preset::Paper, ..ModelConfig::desk(num_classes) }
    }

    pub fn dims(&self) -> Dims {
        let mut d = match self.preset {
            Preset::Desk => Dims {
                input: [16, 32, 32],
                stem: 8,
                stages: vec![(1, 16, 1), (1, 32, 2)],
                feat: 32,
                mstcn_channels: 48,
                gru_hidden: 48,
                gru_layers: 3,
            },
            Preset::Paper => Dims {
                input: [29, 64, 64],
                stem: 64,
                stages: vec![(2, 64, 1), (2, 128, 2), (2, 256, 2), (2, 512, 2)],
                feat: 512,
                mstcn_channels: 768,
                gru_hidden: 512,
                gru_layers: 3,
            },
        };
        if let Some(input) = self.input {
            d.input = input;
        }
        d
    }

    /// Width of the pooled vector the head (and LI layer) sees.
    pub fn pooled_width(&self) -> usize {
        let d = self.dims();
        match self.backend {
            Backend::Mstcn => d.mstcn_channels,
            Backend::Bigru => 2 * d.gru_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(
                "model_config",
                format!("need at least 2 classes, got {}", self.num_classes),
            ));
        }
        let d = self.dims();
        let [t, h, w] = d.input;
        if t == 0 || h < 8 || w < 8 {
            return Err(Error::invalid(
                "model_config",
                format!("input {t}x{h}x{w} too small; need T >= 1 and spatial dims >= 8"),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(
                "model_config",
                format!("dropout must lie in [0, 1), got {}", self.dropout),
            ));
        }
        Ok(())
    }
}

/// Per-call forward switches that belong to the training step rather than
/// the architecture.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOpts {
    /// DropBlock parameters; applied after each residual stage in train mode
    /// when the model's config enables it.
    pub dropblock: Option<DropBlockCfg>,
    /// Run the gradient-reversed domain head at this coefficient. `None`
    /// skips the head entirely, which keeps a λ=0 adversarial run bitwise
    /// equal to a baseline run.
    pub lambda: Option<f64>,
}

impl ForwardOpts {
    pub fn inference() -> Self {
        ForwardOpts::default()
    }
}

pub struct ModelOut {
    pub class_logits: Var,
    pub domain_logits: Option<Var>,
    /// Frontend output (B, T, F), the discriminator's view.
    pub features: Var,
    /// Temporally pooled backend output (B, width), before any LI gating.
    pub pooled: Var,
}

enum BackendNet {
    Mstcn(MsTcn),
    Bigru(Vec<BiGru>),
}

pub struct Model {
    pub config: ModelConfig,
    pub dims: Dims,
    frontend: Frontend,
    backend: BackendNet,
    li: Option<LiLayer>,
    head: Linear,
    disc: Option<Discriminator>,
}

impl Model {
    pub fn new(config: &ModelConfig, da: Option<&DaConfig>) -> Result<Model> {
        config.validate()?;
        if let Some(d) = da {
            d.validate()?;
        }
        let dims = config.dims();
        let frontend = Frontend::new("frontend", dims.stem, &dims.stages, config.se);
        let backend = match config.backend {
            Backend::Mstcn => BackendNet::Mstcn(MsTcn::new(
                "tcn",
                dims.feat,
                dims.mstcn_channels,
                config.dropout,
            )?),
            Backend::Bigru => {
                let mut layers = Vec::with_capacity(dims.gru_layers);
                let mut in_f = dims.feat;
                for l in 0..dims.gru_layers {
                    layers.push(BiGru::new(format!("gru{l}"), in_f, dims.gru_hidden));
                    in_f = 2 * dims.gru_hidden;
                }
                BackendNet::Bigru(layers)
            }
        };
        let width = config.pooled_width();
        let li = config.li.then(|| LiLayer::new("li", width, config.li_mode));
        let head = Linear::new("head", width, config.num_classes);
        let disc = da.map(|d| {
            Discriminator::new("disc", dims.feat, d.disc_width.unwrap_or(dims.feat), d.num_domains)
        });
        Ok(Model { config: config.clone(), dims, frontend, backend, li, head, disc })
    }

    pub fn has_discriminator(&self) -> bool {
        self.disc.is_some()
    }

    /// Fresh parameters. The discriminator draws from a derived stream so a
    /// baseline model and an adversarial model with the same seed share
    /// bit-identical weights for every common layer.
    pub fn init<E: Element>(&self, rng: &mut Rng) -> ParamSet<E> {
        let mut ps = ParamSet::new();
        self.frontend.init(&mut ps, rng);
        match &self.backend {
            BackendNet::Mstcn(t) => t.init(&mut ps, rng),
            BackendNet::Bigru(layers) => {
                for l in layers {
                    l.init(&mut ps, rng);
                }
            }
        }
        if let Some(li) = &self.li {
            li.init(&mut ps, rng);
        }
        self.head.init(&mut ps, rng);
        if let Some(d) = &self.disc {
            d.init(&mut ps, &mut rng.derive_named("disc", 0));
        }
        ps
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut Ctx<'_, E>,
        video: Var,
        opts: &ForwardOpts,
    ) -> Result<ModelOut> {
        let db = (self.config.dropblock && ctx.mode.is_train())
            .then_some(opts.dropblock)
            .flatten();
        let features = self.frontend.forward(ctx, video, db)?;
        let seq = match &self.backend {
            BackendNet::Mstcn(t) => t.forward(ctx, features)?,
            BackendNet::Bigru(layers) => {
                let mut x = features;
                for (i, l) in layers.iter().enumerate() {
                    x = l.forward(ctx, x)?;
                    if i + 1 < layers.len() {
                        x = dropout(ctx, x, self.config.dropout)?;
                    }
                }
                x
            }
        };
        let b = ctx.tape.shape(seq)[0];
        let width = ctx.tape.shape(seq)[2];
        let pooled = ctx.tape.mean_axes(seq, &[1])?;
        let pooled = ctx.tape.reshape(pooled, vec![b, width])?;
        let gated = match &self.li {
            Some(li) => li.forward(ctx, pooled)?,
            None => pooled,
        };
        let class_logits = self.head.forward(ctx, gated)?;
        let domain_logits = match (&self.disc, opts.lambda) {
            (Some(d), Some(lambda)) => {
                let rev = grl(ctx.tape, features, lambda)?;
                Some(d.forward(ctx, rev)?)
            }
            (None, Some(_)) => {
                return Err(Error::invalid(
                    "model",
                    "domain head requested but the model was built without a discriminator",
                ));
            }
            _ => None,
        };
        Ok(ModelOut { class_logits, domain_logits, features, pooled })
    }
}
