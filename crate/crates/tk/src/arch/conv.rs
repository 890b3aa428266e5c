//! Convolutional architectures: the causal TCN and its non-causal CNN twin.
//!
//! Both stack residual blocks of dilated 1-D convolutions with doubling
//! dilations. The TCN pads causally (output length = input length) and its
//! head reads the final time position; the CNN uses valid convolutions
//! (each conv shortens the map), aligns the residual to the surviving
//! positions, and its head averages over them.

use super::{
    ArchDef, ArchError, ArchSpec, ForwardCx, ForwardImpl, Model, ParamBuilder, TaskShapes,
};
use crate::tensor::VarId;
use std::sync::Arc;

struct BlockParams {
    /// (weight, bias) per conv in the block.
    convs: Vec<(usize, usize)>,
    /// 1×1 projection for the residual when channel counts differ.
    proj: Option<usize>,
    dilation: usize,
}

struct ConvForward {
    blocks: Vec<BlockParams>,
    head: (usize, usize),
    kernel: usize,
    causal: bool,
    dropout: f64,
}

struct ConvConfig {
    kernel: usize,
    channels: usize,
    /// One entry per block; the block count is this list's length.
    dilations: Vec<usize>,
    convs_per_block: usize,
    dropout: f64,
}

fn parse_config(spec: &ArchSpec, defaults: (usize, usize)) -> Result<ConvConfig, ArchError> {
    spec.check_keys(&[
        "blocks",
        "kernel_size",
        "channels",
        "dilations",
        "dropout",
        "convs_per_block",
    ])?;
    let (default_blocks, default_kernel) = defaults;
    let blocks = spec.usize_or("blocks", default_blocks)?;
    let kernel = spec.usize_or("kernel_size", default_kernel)?;
    let channels = spec.usize_or("channels", 16)?;
    let convs_per_block = spec.usize_or("convs_per_block", 2)?;
    if blocks == 0 || kernel == 0 || channels == 0 || convs_per_block == 0 {
        return Err(ArchError::IncompatibleHyperparams(
            "blocks, kernel_size, channels, and convs_per_block must be positive".into(),
        ));
    }
    let default_dilations: Vec<usize> = (0..blocks).map(|i| 1usize << i).collect();
    let dilations = spec.usize_list_or("dilations", &default_dilations)?;
    if dilations.len() != blocks {
        return Err(ArchError::IncompatibleHyperparams(format!(
            "dilations has {} entries for {blocks} blocks",
            dilations.len()
        )));
    }
    if dilations.iter().any(|&d| d == 0) {
        return Err(ArchError::IncompatibleHyperparams(
            "dilations must be positive".into(),
        ));
    }
    Ok(ConvConfig {
        kernel,
        channels,
        dilations,
        convs_per_block,
        dropout: spec.f64_or("dropout", 0.0)?,
    })
}

fn build_conv_model(
    spec: &ArchSpec,
    shapes: TaskShapes,
    seed: u64,
    causal: bool,
    defaults: (usize, usize),
) -> Result<Model, ArchError> {
    let cfg = parse_config(spec, defaults)?;
    let mut warnings = Vec::new();

    // span each position's value can reach backward through the stack
    let reach_per_conv: Vec<usize> = cfg
        .dilations
        .iter()
        .map(|&d| (cfg.kernel - 1) * d)
        .collect();
    if causal {
        let rf = 1 + cfg.convs_per_block * reach_per_conv.iter().sum::<usize>();
        if rf > shapes.l_in {
            warnings.push(format!(
                "receptive field {rf} exceeds the input window length {}",
                shapes.l_in
            ));
        }
    } else {
        let mut len = shapes.l_in;
        for &r in &reach_per_conv {
            let cut = cfg.convs_per_block * r;
            if cut >= len {
                return Err(ArchError::IncompatibleHyperparams(format!(
                    "valid convolutions consume the whole window: length {len} reduced by {cut}"
                )));
            }
            len -= cut;
        }
    }

    let mut b = ParamBuilder::new(seed);
    let mut blocks = Vec::new();
    let mut c_in = shapes.c_in;
    for (i, &d) in cfg.dilations.iter().enumerate() {
        let mut convs = Vec::new();
        let mut cj = c_in;
        for j in 0..cfg.convs_per_block {
            let w = b.uniform(
                &format!("block{i}.conv{j}.weight"),
                &[cfg.kernel, cj, cfg.channels],
                cfg.kernel * cj,
            );
            let bias = b.zeros(&format!("block{i}.conv{j}.bias"), &[cfg.channels]);
            convs.push((w, bias));
            cj = cfg.channels;
        }
        let proj = (c_in != cfg.channels)
            .then(|| b.uniform(&format!("block{i}.proj.weight"), &[c_in, cfg.channels], c_in));
        blocks.push(BlockParams {
            convs,
            proj,
            dilation: d,
        });
        c_in = cfg.channels;
    }
    let head = (
        b.uniform("head.weight", &[cfg.channels, shapes.out_dim()], cfg.channels),
        b.zeros("head.bias", &[shapes.out_dim()]),
    );

    let mut model = Model::from_parts(
        spec.clone(),
        shapes,
        b.finish(),
        false,
        seed,
        Arc::new(ConvForward {
            blocks,
            head,
            kernel: cfg.kernel,
            causal,
            dropout: cfg.dropout,
        }),
    );
    model.warnings = warnings;
    Ok(model)
}

impl ForwardImpl for ConvForward {
    fn forward(&self, cx: &mut ForwardCx) -> Result<VarId, ArchError> {
        let mut outputs = Vec::with_capacity(cx.batch);
        for bi in 0..cx.batch {
            let mut xs = cx.sample(bi)?;
            for (blk_no, blk) in self.blocks.iter().enumerate() {
                let mut h = xs;
                for &(w, bias) in &blk.convs {
                    h = cx
                        .tape
                        .conv1d(h, cx.params[w], blk.dilation, self.causal)?;
                    h = cx.tape.add(h, cx.params[bias])?;
                    h = cx.tape.relu(h);
                    h = cx.dropout(h, self.dropout)?;
                }
                // residual: for valid convs, keep the input rows that line
                // up with the surviving (latest-tap-aligned) positions
                let mut res = xs;
                if !self.causal {
                    let cut = blk.convs.len() * (self.kernel - 1) * blk.dilation;
                    let full = cx.tape.shape(res)[0];
                    res = cx.tape.slice_rows(res, cut, full)?;
                }
                if let Some(p) = blk.proj {
                    res = cx.tape.matmul(res, cx.params[p])?;
                }
                let sum = cx.tape.add(h, res)?;
                xs = cx.tape.relu(sum);
                cx.tap(format!("b{bi}.block{blk_no}"), xs);
            }
            let feat = if self.causal {
                let len = cx.tape.shape(xs)[0];
                cx.tape.slice_rows(xs, len - 1, len)?
            } else {
                cx.tape.mean_rows(xs)?
            };
            let mut y = cx.tape.matmul(feat, cx.params[self.head.0])?;
            y = cx.tape.add(y, cx.params[self.head.1])?;
            outputs.push(y);
        }
        Ok(cx.stack(outputs)?)
    }
}

/// Dilated causal convolutions with residual blocks; no future leakage.
pub struct TcnDef;

impl ArchDef for TcnDef {
    fn name(&self) -> &str {
        "tcn"
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        build_conv_model(spec, shapes, seed, true, (2, 2))
    }
}

/// The TCN topology with valid (unpadded) convolutions.
pub struct CnnDef;

impl ArchDef for CnnDef {
    fn name(&self) -> &str {
        "cnn"
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        build_conv_model(spec, shapes, seed, false, (1, 2))
    }

    fn conformance_spec(&self) -> ArchSpec {
        // the default conformance geometry is small; keep the map alive
        ArchSpec::new("cnn").with("kernel_size", serde_json::json!(2))
    }
}
