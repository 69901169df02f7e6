use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::numerics::{AttentionBlock, BlockConfig, Ctx, Init, Mlp, ParamId, ParamStore, Real, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CioConfig {
    pub dim: usize,
    pub heads: usize,
    /// Number of stacked CIO layers.
    pub layers: usize,
    /// Encoder layers inside each compose function.
    pub compose_depth: usize,
    /// Tie inside and outside compose parameters within a layer.
    pub share: bool,
    /// Affine layers per compatibility MLP (1 = a single affine map).
    pub compat_layers: usize,
}

impl CioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.compose_depth == 0 || self.compat_layers == 0 {
            return Err(Error::Config(format!("degenerate CIO config {self:?}")));
        }
        BlockConfig::new(self.dim, self.heads, self.compose_depth).map(|_| ())
    }
}

/// Which input slot of a compose call to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Left,
    Right,
    Parent,
}

impl Slot {
    pub fn row(self) -> usize {
        match self {
            Slot::Left => 0,
            Slot::Right => 1,
            Slot::Parent => 2,
        }
    }
}

/// Attention block plus role embeddings for the left, right and parent slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposeParams {
    pub block: AttentionBlock,
    pub role_left: ParamId,
    pub role_right: ParamId,
    pub role_parent: ParamId,
}

impl ComposeParams {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        config: &CioConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let block = AttentionBlock::new(
            store,
            &format!("{name}.block"),
            BlockConfig::new(config.dim, config.heads, config.compose_depth)?,
            rng,
        )?;
        let d = config.dim;
        let role_left = store.add(&format!("{name}.role_left"), &[d], Init::Normal(0.1), rng)?;
        let role_right = store.add(&format!("{name}.role_right"), &[d], Init::Normal(0.1), rng)?;
        let role_parent = store.add(&format!("{name}.role_parent"), &[d], Init::Normal(0.1), rng)?;
        Ok(ComposeParams { block, role_left, role_right, role_parent })
    }
}

/// Runs a compose function over `[left, right, third]` (plus role
/// embeddings) and returns the requested slots as a `[slots.len(), d]` matrix.
pub fn compose<F: Real>(
    ctx: &mut Ctx<'_, F>,
    params: &ComposeParams,
    left: Var,
    right: Var,
    third: Var,
    slots: &[Slot],
) -> Var {
    let rl = ctx.param(params.role_left);
    let rr = ctx.param(params.role_right);
    let rp = ctx.param(params.role_parent);
    let l = ctx.add(left, rl);
    let r = ctx.add(right, rr);
    let p = ctx.add(third, rp);
    let x = ctx.concat_rows(&[l, r, p]);
    let rows: Vec<usize> = slots.iter().map(|s| s.row()).collect();
    params.block.forward_rows(ctx, x, &rows)
}

/// Compatibility MLP pairs for the inside (`α`) and outside (`β`) scores,
/// shared by every layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatHead {
    pub inside_left: Mlp,
    pub inside_right: Mlp,
    pub outside_left: Mlp,
    pub outside_right: Mlp,
}

impl CompatHead {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, config: &CioConfig, rng: &mut R) -> Result<Self> {
        let dims: Vec<usize> = alloc::vec![config.dim; config.compat_layers + 1];
        Ok(CompatHead {
            inside_left: Mlp::new(store, "cio.compat.inside_left", &dims, rng)?,
            inside_right: Mlp::new(store, "cio.compat.inside_right", &dims, rng)?,
            outside_left: Mlp::new(store, "cio.compat.outside_left", &dims, rng)?,
            outside_right: Mlp::new(store, "cio.compat.outside_right", &dims, rng)?,
        })
    }
}

/// `MLP_L(x) · MLP_R(y) / √d`.
pub fn compatibility<F: Real>(ctx: &mut Ctx<'_, F>, left: &Mlp, right: &Mlp, x: Var, y: Var) -> Var {
    let u = left.forward(ctx, x);
    let v = right.forward(ctx, y);
    scaled_dot(ctx, u, v)
}

pub(crate) fn scaled_dot<F: Real>(ctx: &mut Ctx<'_, F>, u: Var, v: Var) -> Var {
    let d = ctx.value(u).numel();
    let dot = ctx.dot(u, v);
    ctx.scale(dot, F::one() / F::c(d as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CioLayer {
    /// Index into [`CioStack::composes`].
    pub inside: usize,
    pub outside: usize,
    pub root_outside: ParamId,
}

/// `L` CIO layers with a shared compatibility head and the layer-0 outside
/// tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CioStack {
    pub config: CioConfig,
    pub composes: Vec<ComposeParams>,
    pub layers: Vec<CioLayer>,
    pub compat: CompatHead,
    pub outside0: ParamId,
}

impl CioStack {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, config: CioConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut composes = Vec::new();
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let inside = composes.len();
            let outside = if config.share {
                composes.push(ComposeParams::new(store, &format!("cio.layer{l}.compose"), &config, rng)?);
                inside
            } else {
                composes.push(ComposeParams::new(store, &format!("cio.layer{l}.inside"), &config, rng)?);
                composes.push(ComposeParams::new(store, &format!("cio.layer{l}.outside"), &config, rng)?);
                inside + 1
            };
            let root_outside =
                store.add(&format!("cio.layer{l}.root_outside"), &[config.dim], Init::Normal(0.1), rng)?;
            layers.push(CioLayer { inside, outside, root_outside });
        }
        let compat = CompatHead::new(store, &config, rng)?;
        let outside0 = store.add("cio.outside0", &[config.dim], Init::Normal(0.1), rng)?;
        Ok(CioStack { config, composes, layers, compat, outside0 })
    }

    pub fn inside_params(&self, l: usize) -> &ComposeParams {
        &self.composes[self.layers[l].inside]
    }

    pub fn outside_params(&self, l: usize) -> &ComposeParams {
        &self.composes[self.layers[l].outside]
    }
}
