//! Spatio-Temporal Learning Module: per-frame spatial learning (mask fusion
//! plus patch tokens) followed by sparse deformable attention over the
//! space-time token grid, producing the fused current-frame feature U.

use crate::geometry::{rasterize_box_mask, Box3D, BoxMask, GridConfig};
use crate::numerics::{NumericsError, ParameterSet, Result, Tensor};
use crate::pillars::FeatureMap;

/// Structural ablation switches. `Full` is the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StlmVariant {
    Full,
    /// Mask injected by elementwise multiply instead of MaskConv + add.
    Dot,
    /// No mask fusion at all; past frames are treated like the current one.
    NoMask,
    /// Mask embedding added but the second conv dropped.
    NoBoxConv,
    /// Stride-1 conv first, then per-patch mean pooling.
    ConvPatch,
    /// Full softmax attention over all N*S tokens instead of sparse sampling.
    Dense,
    /// Sinusoidal positional embedding added before attention.
    PosEmbed,
}

impl StlmVariant {
    pub fn parse(s: &str) -> Option<StlmVariant> {
        Some(match s {
            "full" => StlmVariant::Full,
            "dot" => StlmVariant::Dot,
            "no_mask" => StlmVariant::NoMask,
            "no_boxconv" => StlmVariant::NoBoxConv,
            "conv_patch" => StlmVariant::ConvPatch,
            "dense" => StlmVariant::Dense,
            "pos_embed" => StlmVariant::PosEmbed,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            StlmVariant::Full => "full",
            StlmVariant::Dot => "dot",
            StlmVariant::NoMask => "no_mask",
            StlmVariant::NoBoxConv => "no_boxconv",
            StlmVariant::ConvPatch => "conv_patch",
            StlmVariant::Dense => "dense",
            StlmVariant::PosEmbed => "pos_embed",
        }
    }

    pub fn all() -> [StlmVariant; 7] {
        [
            StlmVariant::Full,
            StlmVariant::Dot,
            StlmVariant::NoMask,
            StlmVariant::NoBoxConv,
            StlmVariant::ConvPatch,
            StlmVariant::Dense,
            StlmVariant::PosEmbed,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StlmConfig {
    /// Token grid side length R; S = R * R tokens per frame.
    pub patch_r: usize,
    /// Attention heads L.
    pub heads: usize,
    /// Sampling points per query K.
    pub samples: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub variant: StlmVariant,
    /// Test hook: bypass the offset net and sample every query at its own
    /// location. Exercised by the identity and duplicate-frame checks.
    pub force_zero_offsets: bool,
}

impl Default for StlmConfig {
    fn default() -> Self {
        StlmConfig {
            patch_r: 4,
            heads: 4,
            samples: 4,
            c1: 32,
            c2: 32,
            c3: 64,
            c4: 64,
            variant: StlmVariant::Full,
            force_zero_offsets: false,
        }
    }
}

impl StlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_r < 1 || self.heads < 1 || self.samples < 1 {
            return Err(NumericsError::Contract("patch_r, heads, samples must be >= 1".into()));
        }
        if self.c3 % self.heads != 0 {
            return Err(NumericsError::Contract(format!(
                "c3={} not divisible by heads={}",
                self.c3, self.heads
            )));
        }
        // PatchConv is shared by past frames (C2 channels) and the current
        // frame (C1 channels), so the two must agree.
        if self.c1 != self.c2 {
            return Err(NumericsError::Contract(format!(
                "c1={} must equal c2={} so PatchConv applies to every frame",
                self.c1, self.c2
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.patch_r * self.patch_r
    }

    pub fn head_dim(&self) -> usize {
        self.c3 / self.heads
    }
}

/// S x C3 patch tokens for one frame; token k covers patch
/// (k div R, k mod R) in row-major order.
#[derive(Clone)]
pub struct PatchTokens {
    pub tokens: Tensor,
    pub patch_grid: (usize, usize),
    pub source_dims: (usize, usize),
}

/// N x S x C3 space-time token grid; rows ordered oldest frame first,
/// current frame last.
#[derive(Clone)]
pub struct SpatioTemporalGrid {
    pub values: Tensor,
    pub frame_ages: Vec<f64>,
}

pub fn init_stlm_params(ps: &mut ParameterSet, cfg: &StlmConfig) -> Result<()> {
    cfg.validate()?;
    let (c1, c2, c3, c4) = (cfg.c1, cfg.c2, cfg.c3, cfg.c4);
    let (l, k) = (cfg.heads, cfg.samples);
    let hd = cfg.head_dim();

    ps.init_uniform("stlm.mask_conv.weight", &[3, 3, 1, c1], 9)?;
    ps.init_uniform("stlm.mask_conv.bias", &[c1], 9)?;
    ps.init_uniform("stlm.box_conv.weight", &[3, 3, c1, c2], 9 * c1)?;
    ps.init_uniform("stlm.box_conv.bias", &[c2], 9 * c1)?;
    ps.init_uniform("stlm.offset_net.weight", &[c3, l * k * 2], c3)?;
    ps.init_uniform("stlm.offset_net.bias", &[l * k * 2], c3)?;
    ps.init_uniform("stlm.weight_net.weight", &[c3, l * k], c3)?;
    ps.init_uniform("stlm.weight_net.bias", &[l * k], c3)?;
    for li in 0..l {
        ps.init_uniform(&format!("stlm.value{li}.weight"), &[c3, hd], c3)?;
        ps.init_uniform(&format!("stlm.value{li}.bias"), &[hd], c3)?;
        ps.init_uniform(&format!("stlm.out{li}.weight"), &[hd, c3], hd)?;
        ps.init_uniform(&format!("stlm.out{li}.bias"), &[c3], hd)?;
    }
    ps.init_uniform("stlm.lift.weight", &[c3, c4], c3)?;
    ps.init_uniform("stlm.lift.bias", &[c4], c3)?;
    ps.init_uniform("stlm.fuse.weight", &[3, 3, c4 + c1, c1], 9 * (c4 + c1))?;
    ps.init_uniform("stlm.fuse.bias", &[c1], 9 * (c4 + c1))?;
    match cfg.variant {
        StlmVariant::ConvPatch => {
            ps.init_uniform("stlm.cp_conv.weight", &[3, 3, c2, c3], 9 * c2)?;
            ps.init_uniform("stlm.cp_conv.bias", &[c3], 9 * c2)?;
        }
        StlmVariant::Dense => {
            for li in 0..l {
                ps.init_uniform(&format!("stlm.query{li}.weight"), &[c3, hd], c3)?;
                ps.init_uniform(&format!("stlm.query{li}.bias"), &[hd], c3)?;
                ps.init_uniform(&format!("stlm.key{li}.weight"), &[c3, hd], c3)?;
                ps.init_uniform(&format!("stlm.key{li}.bias"), &[hd], c3)?;
            }
        }
        _ => {}
    }
    if cfg.variant != StlmVariant::ConvPatch {
        // PatchConv kernel spans one whole patch; declared after validation
        // so the patch extent is known at feature time (square maps only).
        // Weight shape is filled lazily per feature size in patchify when
        // missing, so nothing to do here.
    }
    Ok(())
}

/// Register the PatchConv weights for a given feature-map side length.
pub fn init_patch_conv(ps: &mut ParameterSet, cfg: &StlmConfig, side: usize) -> Result<()> {
    let k = patch_extent(cfg, side)?;
    if !ps.contains("stlm.patch_conv.weight") {
        ps.init_uniform("stlm.patch_conv.weight", &[k, k, cfg.c2, cfg.c3], k * k * cfg.c2)?;
        ps.init_uniform("stlm.patch_conv.bias", &[cfg.c3], k * k * cfg.c2)?;
    }
    Ok(())
}

fn patch_extent(cfg: &StlmConfig, side: usize) -> Result<usize> {
    if side % cfg.patch_r != 0 {
        return Err(NumericsError::Dimension(format!(
            "feature side {side} not divisible by patch_r {}",
            cfg.patch_r
        )));
    }
    Ok(side / cfg.patch_r)
}

fn mask_tensor(mask: &BoxMask) -> Result<Tensor> {
    Tensor::from_vec(&[mask.h, mask.w, 1], mask.values.iter().map(|&v| v as f64).collect())
}

/// Mask fusion: embed the box mask, add it to the frame feature,
/// and extract foreground features with a second conv.
pub fn mask_fusion(
    feature: &FeatureMap,
    mask: &BoxMask,
    params: &ParameterSet,
    cfg: &StlmConfig,
) -> Result<FeatureMap> {
    let fshape = feature.values.shape();
    if fshape.len() != 3 || fshape[0] != mask.h || fshape[1] != mask.w {
        return Err(NumericsError::Dimension(format!(
            "mask {}x{} vs feature {fshape:?}",
            mask.h, mask.w
        )));
    }
    let m = mask_tensor(mask)?;
    let fused = match cfg.variant {
        StlmVariant::Dot => {
            // broadcast the binary mask over channels and gate the feature
            let c = fshape[2];
            let mut exp = vec![0.0; mask.h * mask.w * c];
            for (cell, &v) in mask.values.iter().enumerate() {
                for ch in 0..c {
                    exp[cell * c + ch] = v as f64;
                }
            }
            let gate = Tensor::from_vec(&[mask.h, mask.w, c], exp)?;
            let gated = feature.values.mul(&gate)?;
            gated
                .conv2d(
                    params.get("stlm.box_conv.weight")?,
                    params.get("stlm.box_conv.bias")?,
                    1,
                    1,
                )?
                .relu()?
        }
        StlmVariant::NoBoxConv => {
            let emb = m.conv2d(
                params.get("stlm.mask_conv.weight")?,
                params.get("stlm.mask_conv.bias")?,
                1,
                1,
            )?;
            emb.add(&feature.values)?
        }
        _ => {
            let emb = m.conv2d(
                params.get("stlm.mask_conv.weight")?,
                params.get("stlm.mask_conv.bias")?,
                1,
                1,
            )?;
            emb.add(&feature.values)?
                .conv2d(
                    params.get("stlm.box_conv.weight")?,
                    params.get("stlm.box_conv.bias")?,
                    1,
                    1,
                )?
                .relu()?
        }
    };
    Ok(FeatureMap { values: fused, grid: feature.grid, frame_age: feature.frame_age })
}

/// Patch transformation: a conv whose kernel and stride span one patch maps
/// the feature map to an R x R x C3 grid, flattened row-major to S x C3.
pub fn patchify(feature: &FeatureMap, params: &ParameterSet, cfg: &StlmConfig) -> Result<PatchTokens> {
    let shape = feature.values.shape();
    let (h, w) = (shape[0], shape[1]);
    if h != w {
        return Err(NumericsError::Dimension(format!(
            "patchify requires a square feature map, got {h}x{w}"
        )));
    }
    let r = cfg.patch_r;
    let map = match cfg.variant {
        StlmVariant::ConvPatch => {
            // conv first, patch second
            let conved = feature
                .values
                .conv2d(params.get("stlm.cp_conv.weight")?, params.get("stlm.cp_conv.bias")?, 1, 1)?;
            conved.patch_mean(r)?
        }
        _ => {
            let k = patch_extent(cfg, h)?;
            feature.values.conv2d(
                params.get("stlm.patch_conv.weight")?,
                params.get("stlm.patch_conv.bias")?,
                k,
                0,
            )?
        }
    };
    Ok(PatchTokens {
        tokens: map.reshape(&[r * r, cfg.c3])?,
        patch_grid: (r, r),
        source_dims: (w, h),
    })
}

/// Stack per-frame token sets into the N x S x C3 grid, input order kept.
pub fn build_grid(tokens: &[PatchTokens], ages: &[f64]) -> Result<SpatioTemporalGrid> {
    if tokens.is_empty() || tokens.len() != ages.len() {
        return Err(NumericsError::Contract("token/age count mismatch".into()));
    }
    let s = tokens[0].tokens.shape()[0];
    let c = tokens[0].tokens.shape()[1];
    for t in tokens {
        if t.tokens.shape() != [s, c] {
            return Err(NumericsError::Dimension("inconsistent token shapes".into()));
        }
    }
    let rows: Vec<Tensor> = tokens
        .iter()
        .map(|t| t.tokens.reshape(&[1, s * c]))
        .collect::<Result<_>>()?;
    // concat along a new first axis: [N, S*C] then reshape
    let refs: Vec<Tensor> = rows.iter().map(|r| r.transpose2().unwrap()).collect();
    let stacked = Tensor::concat_last(&refs)?; // [S*C, N]
    let grid = stacked.transpose2()?.reshape(&[tokens.len(), s, c])?;
    Ok(SpatioTemporalGrid { values: grid, frame_ages: ages.to_vec() })
}

fn sinusoidal_pe(n: usize, s: usize, c: usize) -> Result<Tensor> {
    let half = c / 2;
    let mut data = vec![0.0; n * s * c];
    for ni in 0..n {
        for si in 0..s {
            let base = (ni * s + si) * c;
            for ch in 0..c {
                let (pos, idx, width) = if ch < half {
                    (si as f64, ch, half)
                } else {
                    (ni as f64, ch - half, c - half)
                };
                let freq = 1.0 / 10000f64.powf((2 * (idx / 2)) as f64 / width.max(1) as f64);
                data[base + ch] =
                    if idx % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() };
            }
        }
    }
    Tensor::from_vec(&[n, s, c], data)
}

/// Sparse deformable attention over the N x S token grid treated as a 2D
/// field (time axis first). Every query predicts K sampling offsets and K
/// softmax-normalized weights per head; values are read by bilinear
/// interpolation with zero padding outside the grid.
pub fn deformable_attend(
    grid: &SpatioTemporalGrid,
    params: &ParameterSet,
    cfg: &StlmConfig,
) -> Result<SpatioTemporalGrid> {
    let shape = grid.values.shape();
    let (n, s, c3) = (shape[0], shape[1], shape[2]);
    if c3 != cfg.c3 {
        return Err(NumericsError::Dimension(format!("grid channels {c3} != c3 {}", cfg.c3)));
    }
    let q = n * s;
    let mut g = grid.values.clone();
    if cfg.variant == StlmVariant::PosEmbed {
        g = g.add(&sinusoidal_pe(n, s, c3)?)?;
    }
    let g_flat = g.reshape(&[q, c3])?;

    if cfg.variant == StlmVariant::Dense {
        return dense_attend(grid, &g_flat, params, cfg);
    }

    let (l, k) = (cfg.heads, cfg.samples);
    let hd = cfg.head_dim();
    let offsets = g_flat.linear(params.get("stlm.offset_net.weight")?, params.get("stlm.offset_net.bias")?)?;
    let logits = g_flat.linear(params.get("stlm.weight_net.weight")?, params.get("stlm.weight_net.bias")?)?;

    // query coordinate (time-row, space-col), repeated K times
    let mut base = vec![0.0; q * k * 2];
    for ni in 0..n {
        for si in 0..s {
            for ki in 0..k {
                let o = ((ni * s + si) * k + ki) * 2;
                base[o] = ni as f64;
                base[o + 1] = si as f64;
            }
        }
    }
    let base = Tensor::from_vec(&[q * k, 2], base)?;

    let mut out: Option<Tensor> = None;
    for li in 0..l {
        let locs = if cfg.force_zero_offsets {
            base.clone()
        } else {
            offsets.slice_last(li * k * 2, k * 2)?.reshape(&[q * k, 2])?.add(&base)?
        };
        let weights = logits.slice_last(li * k, k)?.softmax(1)?;
        let values = g_flat
            .linear(
                params.get(&format!("stlm.value{li}.weight"))?,
                params.get(&format!("stlm.value{li}.bias"))?,
            )?
            .reshape(&[n, s, hd])?;
        let samples = values.bilinear_sample(&locs)?;
        let combined = Tensor::attn_combine(&samples, &weights)?;
        let head_out = combined.linear(
            params.get(&format!("stlm.out{li}.weight"))?,
            params.get(&format!("stlm.out{li}.bias"))?,
        )?;
        out = Some(match out {
            Some(acc) => acc.add(&head_out)?,
            None => head_out,
        });
    }
    Ok(SpatioTemporalGrid {
        values: out.unwrap().reshape(&[n, s, c3])?,
        frame_ages: grid.frame_ages.clone(),
    })
}

fn dense_attend(
    grid: &SpatioTemporalGrid,
    g_flat: &Tensor,
    params: &ParameterSet,
    cfg: &StlmConfig,
) -> Result<SpatioTemporalGrid> {
    let shape = grid.values.shape();
    let (n, s, c3) = (shape[0], shape[1], shape[2]);
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out: Option<Tensor> = None;
    for li in 0..cfg.heads {
        let qp = g_flat.linear(
            params.get(&format!("stlm.query{li}.weight"))?,
            params.get(&format!("stlm.query{li}.bias"))?,
        )?;
        let kp = g_flat.linear(
            params.get(&format!("stlm.key{li}.weight"))?,
            params.get(&format!("stlm.key{li}.bias"))?,
        )?;
        let vp = g_flat.linear(
            params.get(&format!("stlm.value{li}.weight"))?,
            params.get(&format!("stlm.value{li}.bias"))?,
        )?;
        let attn = qp.matmul(&kp.transpose2()?)?.scale(scale)?.softmax(1)?;
        let mixed = attn.matmul(&vp)?;
        let head_out = mixed.linear(
            params.get(&format!("stlm.out{li}.weight"))?,
            params.get(&format!("stlm.out{li}.bias"))?,
        )?;
        out = Some(match out {
            Some(acc) => acc.add(&head_out)?,
            None => head_out,
        });
    }
    Ok(SpatioTemporalGrid {
        values: out.unwrap().reshape(&[n, s, c3])?,
        frame_ages: grid.frame_ages.clone(),
    })
}

/// Current-frame fusion: lift the attended current-frame row, upsample it back
/// to the map resolution, concatenate with the raw current feature, and mix
/// with a final conv.
pub fn fuse_current(
    attended: &SpatioTemporalGrid,
    current: &FeatureMap,
    params: &ParameterSet,
    cfg: &StlmConfig,
) -> Result<FeatureMap> {
    let n = attended.values.shape()[0];
    let row = attended.values.row(n - 1)?; // [S, C3]
    let lifted = row.linear(params.get("stlm.lift.weight")?, params.get("stlm.lift.bias")?)?;
    let r = cfg.patch_r;
    let patch_map = lifted.reshape(&[r, r, cfg.c4])?;
    let (h, w) = (current.values.shape()[0], current.values.shape()[1]);
    if h % r != 0 || w % r != 0 {
        return Err(NumericsError::Dimension(format!("map {h}x{w} not divisible by R={r}")));
    }
    let up = patch_map.upsample_nearest(h / r, w / r)?;
    let cat = Tensor::concat_last(&[up, current.values.clone()])?;
    let fused = cat.conv2d(params.get("stlm.fuse.weight")?, params.get("stlm.fuse.bias")?, 1, 1)?;
    Ok(FeatureMap { values: fused, grid: current.grid, frame_age: current.frame_age })
}

/// Full STLM forward pass. `features` are ordered oldest to current;
/// `boxes` hold the N-1 past-frame boxes in the same local frame.
pub fn stlm_forward(
    features: &[FeatureMap],
    boxes: &[Box3D],
    params: &ParameterSet,
    cfg: &StlmConfig,
    grid_cfg: &GridConfig,
) -> Result<FeatureMap> {
    if features.is_empty() || boxes.len() + 1 != features.len() {
        return Err(NumericsError::Contract(format!(
            "{} features need {} past boxes, got {}",
            features.len(),
            features.len().saturating_sub(1),
            boxes.len()
        )));
    }
    let n = features.len();
    let mut tokens = Vec::with_capacity(n);
    let mut ages = Vec::with_capacity(n);
    for (i, f) in features.iter().enumerate() {
        let is_current = i == n - 1;
        let spatial = if is_current || cfg.variant == StlmVariant::NoMask {
            f.clone()
        } else {
            let mask = rasterize_box_mask(&boxes[i], grid_cfg);
            mask_fusion(f, &mask, params, cfg)?
        };
        tokens.push(patchify(&spatial, params, cfg)?);
        ages.push(f.frame_age);
    }
    let grid = build_grid(&tokens, &ages)?;
    let attended = deformable_attend(&grid, params, cfg)?;
    fuse_current(&attended, &features[n - 1], params, cfg)
}
