//! Deep-supervision multi-task objective.
//!
//! Each decoder block contributes `BCE(region) + BCE(edge) + MSE(distance)`
//! with its maps bilinearly upsampled by `2^(4-i)` to ground-truth
//! resolution; the fusion-level region map adds one more BCE term. Every
//! loss is a mean over batch and pixels.

use crate::error::{Error, Result};
use crate::network::ForwardOutputs;
use crate::tensor::{Tape, Tensor, ValueId};

/// Ground truth for one batch, all `(N, 1, H, W)` at full resolution.
#[derive(Clone, Debug)]
pub struct BatchTargets {
    pub region: Tensor,
    pub edge: Tensor,
    pub distance: Tensor,
}

/// Loss components of one decoder block.
#[derive(Clone, Copy, Debug)]
pub struct BlockLoss {
    pub bce_region: f64,
    pub bce_edge: Option<f64>,
    pub mse_distance: Option<f64>,
}

/// All loss components of one step; `total` is their sum.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub bce_r0: f64,
    pub blocks: Vec<BlockLoss>,
    pub total: f64,
}

impl LossReport {
    /// `(name, value)` pairs in a fixed order: total, r0, then per block.
    pub fn components(&self) -> Vec<(String, f64)> {
        let mut out = vec![("loss_total".to_string(), self.total), ("loss_r0".to_string(), self.bce_r0)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("bce_region_{}", i + 1), b.bce_region));
            if let Some(v) = b.bce_edge {
                out.push((format!("bce_edge_{}", i + 1), v));
            }
            if let Some(v) = b.mse_distance {
                out.push((format!("mse_distance_{}", i + 1), v));
            }
        }
        out
    }

    pub fn component_count(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| 1 + b.bce_edge.is_some() as usize + b.mse_distance.is_some() as usize)
            .sum::<usize>()
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.components()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// Mean binary cross-entropy on logits (numerically stable form).
pub fn bce_loss(tape: &mut Tape, logits: ValueId, target: &Tensor) -> Result<ValueId> {
    tape.bce_with_logits(logits, target.clone())
}

/// Mean squared error.
pub fn mse_loss(tape: &mut Tape, pred: ValueId, target: &Tensor) -> Result<ValueId> {
    tape.mse(pred, target.clone())
}

fn upsampled_to_full(
    tape: &mut Tape,
    id: ValueId,
    factor: usize,
    full: (usize, usize, usize),
    what: &str,
) -> Result<ValueId> {
    let (n, h, w) = full;
    let (xn, xc, xh, xw) = tape.value(id).dims();
    if xn != n || xc != 1 || xh * factor != h || xw * factor != w {
        return Err(Error::Shape(format!(
            "{what}: map {:?} does not sit on the resolution ladder \
             (expected ({n}, 1, {}, {}) for upsample factor {factor})",
            tape.value(id).shape(),
            h / factor,
            w / factor,
        )));
    }
    if factor == 1 {
        Ok(id)
    } else {
        tape.bilinear_upsample(id, factor)
    }
}

/// Total deep-supervision loss over all output maps.
///
/// Returns the scalar loss node (for `backward`) and a report of every
/// component value.
pub fn total_loss(
    tape: &mut Tape,
    outputs: &ForwardOutputs,
    targets: &BatchTargets,
) -> Result<(ValueId, LossReport)> {
    let (n, c, h, w) = targets.region.dims();
    if c != 1 {
        return Err(Error::Shape(format!(
            "targets must be single-channel, got {:?}",
            targets.region.shape()
        )));
    }
    for (t, name) in [(&targets.edge, "edge"), (&targets.distance, "distance")] {
        if t.shape() != targets.region.shape() {
            return Err(Error::Shape(format!(
                "{name} target {:?} does not match region target {:?}",
                t.shape(),
                targets.region.shape()
            )));
        }
    }
    if outputs.blocks.len() != 4 {
        return Err(Error::Shape(format!(
            "expected 4 decoder blocks, got {}",
            outputs.blocks.len()
        )));
    }

    let full = (n, h, w);
    let r0_up = upsampled_to_full(tape, outputs.r0, 16, full, "r0")?;
    let r0_loss = tape.bce_with_logits(r0_up, targets.region.clone())?;
    let bce_r0 = tape.value(r0_loss).data()[0];

    let mut total = r0_loss;
    let mut blocks = Vec::with_capacity(4);
    for (i, block) in outputs.blocks.iter().enumerate() {
        let factor = 1usize << (3 - i);
        let r_up = upsampled_to_full(tape, block.region, factor, full, "region")?;
        let r_loss = tape.bce_with_logits(r_up, targets.region.clone())?;
        let bce_region = tape.value(r_loss).data()[0];
        total = tape.add(total, r_loss)?;

        let bce_edge = match block.edge {
            Some(edge) => {
                let e_up = upsampled_to_full(tape, edge, factor, full, "edge")?;
                let e_loss = tape.bce_with_logits(e_up, targets.edge.clone())?;
                total = tape.add(total, e_loss)?;
                Some(tape.value(e_loss).data()[0])
            }
            None => None,
        };
        let mse_distance = match block.distance {
            Some(dist) => {
                let d_up = upsampled_to_full(tape, dist, factor, full, "distance")?;
                let d_loss = tape.mse(d_up, targets.distance.clone())?;
                total = tape.add(total, d_loss)?;
                Some(tape.value(d_loss).data()[0])
            }
            None => None,
        };
        blocks.push(BlockLoss { bce_region, bce_edge, mse_distance });
    }

    let report = LossReport { bce_r0, blocks, total: tape.value(total).data()[0] };
    Ok((total, report))
}
