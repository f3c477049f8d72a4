//! The segmentation network: three frequency encoders with guided residuals,
//! a dilated-convolution attention fusion block, and a deeply supervised
//! multi-task decoder.
//!
//! Resolution ladder for input `(H, W)` (both divisible by 16):
//!
//! - encoder level `i` produces `C_i` channels at `H/2^i` (stride-2 first
//!   conv in block 1, 2x2 max pooling at the entry of blocks 2-4);
//! - the fusion block operates at `H/16` on the channel concatenation
//!   `[x4_low, x4_full, x4_high]` (or `x4_full` alone without frequency
//!   decomposition);
//! - decoder block `i` outputs at `H/2^(4-i)`, so the loss upsamples its
//!   maps by `2^(4-i)` to full resolution.
//!
//! Decoder skip connections concatenate the full-frequency encoder features
//! at matching resolutions (levels 3, 2, 1 for blocks 1, 2, 3; block 4 has
//! none). `decoder_plan[0]` is both the fusion output and decoder block 1
//! output width; block `i` outputs `decoder_plan[i-1]` channels.

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{self, PowerSpectrumRatio};
use crate::tensor::{BatchNormState, ParamId, ParamStore, Tape, Tensor, ValueId};
use rand_chacha::ChaCha8Rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Ablation switches. `gcb` requires `fd`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub fd: bool,
    pub gcb: bool,
    pub mtl: bool,
    pub faspp: bool,
}

impl Toggles {
    pub fn all_on() -> Self {
        Toggles { fd: true, gcb: true, mtl: true, faspp: true }
    }

    pub fn all_off() -> Self {
        Toggles { fd: false, gcb: false, mtl: false, faspp: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder channels `[C1, C2, C3, C4]`.
    pub channel_plan: [usize; 4],
    /// Input `(H, W)`, both divisible by 16.
    pub input_size: (usize, usize),
    /// Power-spectrum ratio for the frequency decomposition.
    pub power_ratio: f64,
    pub toggles: Toggles,
    /// Output channels of the fusion block and the four decoder blocks.
    pub decoder_plan: [usize; 4],
    /// Dilation rates of the four fusion branches.
    pub aspp_rates: [usize; 4],
}

impl ModelConfig {
    /// Config with a given encoder plan; the decoder plan mirrors it.
    pub fn with_plan(channel_plan: [usize; 4], input_size: (usize, usize)) -> Self {
        let [c1, c2, c3, c4] = channel_plan;
        ModelConfig {
            channel_plan,
            input_size,
            power_ratio: 0.5,
            toggles: Toggles::all_on(),
            decoder_plan: [c4, c3, c2, c1],
            aspp_rates: [1, 6, 12, 18],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input size ({h}, {w}) must be a positive multiple of 16"
            )));
        }
        if self.channel_plan.iter().any(|&c| c == 0) || self.decoder_plan.iter().any(|&c| c == 0) {
            return Err(Error::Config("channel plans must be positive".into()));
        }
        if self.aspp_rates.iter().any(|&r| r == 0) {
            return Err(Error::Config("aspp rates must be positive".into()));
        }
        if self.toggles.gcb && !self.toggles.fd {
            return Err(Error::Config(
                "gcb requires fd: the guided convolution block connects the \
                 full-frequency encoder to the low/high encoders"
                    .into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.power_ratio) {
            return Err(Error::Config(format!(
                "power ratio {} must lie in [0, 1]",
                self.power_ratio
            )));
        }
        Ok(())
    }

    /// Deep-supervision maps produced per forward pass (13 with multi-task
    /// heads, 5 with the region head only).
    pub fn output_map_count(&self) -> usize {
        if self.toggles.mtl {
            1 + 4 * 3
        } else {
            1 + 4
        }
    }
}

// ── Layer descriptors (parameter handles, no data) ──────────────────────

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    padding: usize,
    dilation: usize,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    state: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    conv: Conv,
    bn: Bn,
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    pool: bool,
    c1: ConvBn,
    c2: ConvBn,
}

#[derive(Clone, Debug)]
struct Encoder {
    blocks: Vec<EncoderBlock>,
}

/// 1x1 conv + ReLU residual per encoder level.
#[derive(Clone, Debug)]
struct Gcb {
    levels: Vec<Conv>,
}

#[derive(Clone, Debug)]
struct Sam {
    branches: Vec<Conv>,
    gate: Conv,
    alpha: ParamId,
    beta: ParamId,
    fuse: Conv,
}

#[derive(Clone, Debug)]
enum Fusion {
    Sam(Sam),
    Plain(Conv),
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    c1: ConvBn,
    c2: ConvBn,
    head_region: Conv,
    head_edge: Option<Conv>,
    head_distance: Option<Conv>,
}

#[derive(Clone, Debug)]
struct Arch {
    enc_full: Encoder,
    enc_low: Option<Encoder>,
    enc_high: Option<Encoder>,
    gcb_low: Option<Gcb>,
    gcb_high: Option<Gcb>,
    fusion: Fusion,
    head_r0: Conv,
    decoder: Vec<DecoderBlock>,
}

/// Which frequency component an encoder consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqBand {
    Full,
    Low,
    High,
}

/// One batch of network inputs. `low`/`high` are required when frequency
/// decomposition is enabled.
#[derive(Clone, Debug)]
pub struct BatchInput {
    pub full: Tensor,
    pub low: Option<Tensor>,
    pub high: Option<Tensor>,
}

impl BatchInput {
    pub fn full_only(full: Tensor) -> Self {
        BatchInput { full, low: None, high: None }
    }

    /// Decompose every batch element with the given power ratio.
    pub fn decompose(full: Tensor, r: PowerSpectrumRatio) -> Result<Self> {
        let n = full.dims().0;
        let mut lows = Vec::with_capacity(n);
        let mut highs = Vec::with_capacity(n);
        for ni in 0..n {
            let d = spectral::decompose(&full.slice_batch(ni), r)?;
            lows.push(d.low);
            highs.push(d.high);
        }
        let low = Tensor::stack_batch(&lows.iter().collect::<Vec<_>>())?;
        let high = Tensor::stack_batch(&highs.iter().collect::<Vec<_>>())?;
        Ok(BatchInput { full, low: Some(low), high: Some(high) })
    }
}

/// Deep-supervision outputs of one decoder block (logits; the distance map
/// is already sigmoid-activated).
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub region: ValueId,
    pub edge: Option<ValueId>,
    pub distance: Option<ValueId>,
}

/// All maps produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// Region logits at `H/16` from the fusion output.
    pub r0: ValueId,
    /// Decoder block outputs, index `i` at resolution `H/2^(3-i)`.
    pub blocks: Vec<BlockOutput>,
    /// Fusion block output (decoder input).
    pub fused: ValueId,
    /// Channel concatenation entering the fusion block, when `fd` is on.
    pub sam_input: Option<ValueId>,
}

impl ForwardOutputs {
    pub fn map_count(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| 1 + b.edge.is_some() as usize + b.distance.is_some() as usize)
            .sum::<usize>()
    }
}

#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    bn: Vec<(String, BatchNormState)>,
    arch: Arch,
}

// ── Construction ────────────────────────────────────────────────────────

struct Builder<'a> {
    params: &'a mut ParamStore,
    bn: &'a mut Vec<(String, BatchNormState)>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    /// Kaiming fan-in initialization for the weight, zero bias.
    fn conv(
        &mut self,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Conv {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let w = Tensor::from_fn([cout, cin, k, k], |_, _, _, _| rng::normal(self.rng) * std);
        Conv {
            w: self.params.add(format!("{name}.weight"), w),
            b: self.params.add(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1])),
            stride,
            padding,
            dilation,
        }
    }

    fn conv3(&mut self, name: &str, cout: usize, cin: usize) -> Conv {
        self.conv(name, cout, cin, 3, 1, 1, 1)
    }

    fn conv1(&mut self, name: &str, cout: usize, cin: usize) -> Conv {
        self.conv(name, cout, cin, 1, 1, 0, 1)
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let gamma = self.params.add(format!("{name}.gamma"), Tensor::full([1, c, 1, 1], 1.0));
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1]));
        self.bn.push((name.to_string(), BatchNormState::new(c)));
        Bn { gamma, beta, state: self.bn.len() - 1 }
    }

    fn conv_bn(&mut self, name: &str, cout: usize, cin: usize, stride: usize) -> ConvBn {
        let conv = self.conv(&format!("{name}.conv"), cout, cin, 3, stride, 1, 1);
        let bn = self.bn(&format!("{name}.bn"), cout);
        ConvBn { conv, bn }
    }

    fn encoder(&mut self, prefix: &str, in_ch: usize, plan: &[usize; 4]) -> Encoder {
        let mut blocks = Vec::with_capacity(4);
        let mut cin = in_ch;
        for (i, &cout) in plan.iter().enumerate() {
            let name = format!("{prefix}.b{}", i + 1);
            // Block 1 reaches H/2 through a stride-2 first conv; the rest
            // pool at entry.
            let stride = if i == 0 { 2 } else { 1 };
            let c1 = self.conv_bn(&format!("{name}.s1"), cout, cin, stride);
            let c2 = self.conv_bn(&format!("{name}.s2"), cout, cout, 1);
            blocks.push(EncoderBlock { pool: i > 0, c1, c2 });
            cin = cout;
        }
        Encoder { blocks }
    }

    fn gcb(&mut self, prefix: &str, plan: &[usize; 4]) -> Gcb {
        let levels = plan
            .iter()
            .enumerate()
            .map(|(i, &c)| self.conv1(&format!("{prefix}.l{}", i + 1), c, c))
            .collect();
        Gcb { levels }
    }
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let mut r = rng::rng_from(rng::derive(seed, 0x6d6f64656c, 0, 0));
        let mut b = Builder { params: &mut params, bn: &mut bn, rng: &mut r };

        let plan = cfg.channel_plan;
        let c4 = plan[3];
        let enc_full = b.encoder("enc_full", 3, &plan);
        let (enc_low, enc_high, gcb_low, gcb_high) = if cfg.toggles.fd {
            let low = b.encoder("enc_low", 3, &plan);
            let high = b.encoder("enc_high", 3, &plan);
            let (gl, gh) = if cfg.toggles.gcb {
                (Some(b.gcb("gcb_low", &plan)), Some(b.gcb("gcb_high", &plan)))
            } else {
                (None, None)
            };
            (Some(low), Some(high), gl, gh)
        } else {
            (None, None, None, None)
        };

        let fin = if cfg.toggles.fd { 3 * c4 } else { c4 };
        let p1 = cfg.decoder_plan[0];
        let fusion = if cfg.toggles.faspp {
            let branches = cfg
                .aspp_rates
                .iter()
                .enumerate()
                .map(|(i, &rate)| {
                    b.conv(&format!("sam.branch{}", i + 1), fin, fin, 3, 1, rate, rate)
                })
                .collect();
            let gate = b.conv1("sam.gate", 1, fin);
            let alpha = b.params.add("sam.alpha", Tensor::scalar(1.0));
            let beta = b.params.add("sam.beta", Tensor::scalar(1.0));
            let fuse = b.conv3("sam.fuse", p1, 2 * fin);
            Fusion::Sam(Sam { branches, gate, alpha, beta, fuse })
        } else {
            Fusion::Plain(b.conv1("fuse", p1, fin))
        };

        let head_r0 = b.conv1("head_r0", 1, p1);

        let mut decoder = Vec::with_capacity(4);
        let mut prev = p1;
        for i in 0..4 {
            let name = format!("dec.b{}", i + 1);
            // Blocks 1-3 concatenate full-encoder features at levels 3, 2, 1.
            let skip = if i < 3 { plan[2 - i] } else { 0 };
            let out = cfg.decoder_plan[i];
            let c1 = b.conv_bn(&format!("{name}.s1"), out, prev + skip, 1);
            let c2 = b.conv_bn(&format!("{name}.s2"), out, out, 1);
            let head_region = b.conv1(&format!("{name}.head_region"), 1, out);
            let (head_edge, head_distance) = if cfg.toggles.mtl {
                (
                    Some(b.conv1(&format!("{name}.head_edge"), 1, out)),
                    Some(b.conv1(&format!("{name}.head_distance"), 1, out)),
                )
            } else {
                (None, None)
            };
            decoder.push(DecoderBlock { c1, c2, head_region, head_edge, head_distance });
            prev = out;
        }

        let arch = Arch {
            enc_full,
            enc_low,
            enc_high,
            gcb_low,
            gcb_high,
            fusion,
            head_r0,
            decoder,
        };
        Ok(Model { cfg, params, bn, arch })
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.total_scalars()
    }

    /// Power ratio as a validated type.
    pub fn power_ratio(&self) -> PowerSpectrumRatio {
        PowerSpectrumRatio::new(self.cfg.power_ratio).expect("validated at construction")
    }

    /// Run the network on a prepared batch. Returns the outputs and the
    /// tape ids of the bound parameters (aligned with `params` order).
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: &BatchInput,
        training: bool,
    ) -> Result<(ForwardOutputs, Vec<ValueId>)> {
        let bound = self.params.bind(tape);
        let out = forward_bound(&self.arch, &self.cfg, &bound, &mut self.bn, tape, input, training)?;
        Ok((out, bound))
    }

    /// Run the network on raw images, decomposing inline when `fd` is on.
    pub fn forward_image(
        &mut self,
        tape: &mut Tape,
        batch: &Tensor,
        training: bool,
    ) -> Result<(ForwardOutputs, Vec<ValueId>)> {
        let input = if self.cfg.toggles.fd {
            BatchInput::decompose(batch.clone(), self.power_ratio())?
        } else {
            BatchInput::full_only(batch.clone())
        };
        self.forward(tape, &input, training)
    }

    /// Run one encoder on an already-recorded image value. For the low/high
    /// encoders with guided residuals the full-frequency features must be
    /// supplied.
    pub fn encoder_forward(
        &mut self,
        tape: &mut Tape,
        image: ValueId,
        band: FreqBand,
        full_features: Option<&[ValueId]>,
        training: bool,
    ) -> Result<Vec<ValueId>> {
        let bound = self.params.bind(tape);
        let (enc, gcb) = match band {
            FreqBand::Full => (&self.arch.enc_full, None),
            FreqBand::Low => (
                self.arch
                    .enc_low
                    .as_ref()
                    .ok_or_else(|| Error::Config("low-frequency encoder disabled (fd off)".into()))?,
                self.arch.gcb_low.as_ref(),
            ),
            FreqBand::High => (
                self.arch
                    .enc_high
                    .as_ref()
                    .ok_or_else(|| Error::Config("high-frequency encoder disabled (fd off)".into()))?,
                self.arch.gcb_high.as_ref(),
            ),
        };
        encoder_forward_impl(enc, gcb, full_features, &bound, &mut self.bn, tape, image, training)
    }

    /// Fusion block on the three level-4 feature maps (requires `faspp`).
    pub fn faspp_sam_forward(
        &mut self,
        tape: &mut Tape,
        x4_low: ValueId,
        x4_full: ValueId,
        x4_high: ValueId,
    ) -> Result<ValueId> {
        let bound = self.params.bind(tape);
        let Fusion::Sam(sam) = &self.arch.fusion else {
            return Err(Error::Config("fusion attention disabled (faspp off)".into()));
        };
        for id in [x4_full, x4_high] {
            if tape.value(id).shape() != tape.value(x4_low).shape() {
                return Err(Error::Shape(format!(
                    "fusion inputs disagree: {:?} vs {:?}",
                    tape.value(id).shape(),
                    tape.value(x4_low).shape()
                )));
            }
        }
        let x = tape.concat_channels(&[x4_low, x4_full, x4_high])?;
        sam_forward_impl(sam, &bound, tape, x)
    }

    /// Named tensors of the full model state: parameters first, then batch
    /// norm running statistics.
    pub fn state_entries(&self) -> Vec<(String, [usize; 4], Vec<f64>)> {
        let mut out: Vec<(String, [usize; 4], Vec<f64>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), *p.value.shape(), p.value.data().to_vec()))
            .collect();
        for (name, state) in &self.bn {
            let c = state.mean.len();
            out.push((format!("{name}.running_mean"), [1, c, 1, 1], state.mean.clone()));
            out.push((format!("{name}.running_var"), [1, c, 1, 1], state.var.clone()));
        }
        out
    }

    /// Restore state produced by [`Model::state_entries`]. Every entry must
    /// match an existing tensor by name and shape, and cover all of them.
    pub fn load_state_entries(&mut self, entries: &[(String, [usize; 4], Vec<f64>)]) -> Result<()> {
        let expected = self.params.len() + 2 * self.bn.len();
        if entries.len() != expected {
            return Err(Error::Config(format!(
                "state holds {} tensors, model needs {expected}",
                entries.len()
            )));
        }
        for (name, shape, data) in entries {
            let target: &mut Tensor = if let Some(stripped) = name.strip_suffix(".running_mean") {
                let idx = self
                    .bn
                    .iter()
                    .position(|(n, _)| n == stripped)
                    .ok_or_else(|| Error::Config(format!("unknown state tensor `{name}`")))?;
                if self.bn[idx].1.mean.len() != data.len() {
                    return Err(Error::Shape(format!("state tensor `{name}` has wrong size")));
                }
                self.bn[idx].1.mean.copy_from_slice(data);
                continue;
            } else if let Some(stripped) = name.strip_suffix(".running_var") {
                let idx = self
                    .bn
                    .iter()
                    .position(|(n, _)| n == stripped)
                    .ok_or_else(|| Error::Config(format!("unknown state tensor `{name}`")))?;
                if self.bn[idx].1.var.len() != data.len() {
                    return Err(Error::Shape(format!("state tensor `{name}` has wrong size")));
                }
                self.bn[idx].1.var.copy_from_slice(data);
                continue;
            } else {
                let pi = self
                    .params
                    .iter()
                    .position(|p| &p.name == name)
                    .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
                &mut self.params.get_mut(ParamId(pi)).value
            };
            if target.shape() != shape || target.numel() != data.len() {
                return Err(Error::Shape(format!("state tensor `{name}` has wrong shape")));
            }
            target.data_mut().copy_from_slice(data);
        }
        Ok(())
    }
}

/// Binarize final region logits: `sigmoid(logits) > threshold`.
pub fn predict(r4_logits: &Tensor, threshold: f64) -> Tensor {
    Tensor::from_fn(*r4_logits.shape(), |n, c, y, x| {
        let p = 1.0 / (1.0 + (-r4_logits.at(n, c, y, x)).exp());
        if p > threshold {
            1.0
        } else {
            0.0
        }
    })
}

// ── Forward implementation (free functions so the gradient checker can
//    drive the same graph from a candidate parameter store) ──────────────

fn conv_fwd(tape: &mut Tape, bound: &[ValueId], c: &Conv, x: ValueId) -> Result<ValueId> {
    tape.conv2d(x, bound[c.w.0], bound[c.b.0], c.stride, c.padding, c.dilation)
}

#[allow(clippy::too_many_arguments)]
fn conv_bn_relu(
    tape: &mut Tape,
    bound: &[ValueId],
    bn: &mut [(String, BatchNormState)],
    layer: &ConvBn,
    x: ValueId,
    training: bool,
) -> Result<ValueId> {
    let x = conv_fwd(tape, bound, &layer.conv, x)?;
    let x = tape.batchnorm2d(
        x,
        bound[layer.bn.gamma.0],
        bound[layer.bn.beta.0],
        &mut bn[layer.bn.state].1,
        BN_MOMENTUM,
        BN_EPS,
        training,
    )?;
    Ok(tape.relu(x))
}

#[allow(clippy::too_many_arguments)]
fn encoder_forward_impl(
    enc: &Encoder,
    gcb: Option<&Gcb>,
    full_features: Option<&[ValueId]>,
    bound: &[ValueId],
    bn: &mut [(String, BatchNormState)],
    tape: &mut Tape,
    image: ValueId,
    training: bool,
) -> Result<Vec<ValueId>> {
    if gcb.is_some() && full_features.is_none() {
        return Err(Error::Config(
            "guided residuals enabled but full-frequency features were not supplied".into(),
        ));
    }
    let mut feats = Vec::with_capacity(4);
    let mut x = image;
    for (i, block) in enc.blocks.iter().enumerate() {
        if block.pool {
            x = tape.maxpool2x2(x)?;
        }
        x = conv_bn_relu(tape, bound, bn, &block.c1, x, training)?;
        x = conv_bn_relu(tape, bound, bn, &block.c2, x, training)?;
        if let Some(g) = gcb {
            let full = full_features.unwrap()[i];
            let res = conv_fwd(tape, bound, &g.levels[i], full)?;
            let res = tape.relu(res);
            x = tape.add(x, res)?;
        }
        feats.push(x);
    }
    Ok(feats)
}

fn sam_forward_impl(sam: &Sam, bound: &[ValueId], tape: &mut Tape, x: ValueId) -> Result<ValueId> {
    let mut f = conv_fwd(tape, bound, &sam.branches[0], x)?;
    for branch in &sam.branches[1..] {
        let b = conv_fwd(tape, bound, branch, x)?;
        f = tape.add(f, b)?;
    }
    let gate = conv_fwd(tape, bound, &sam.gate, f)?;
    let attn = tape.sigmoid(gate);

    let fg = tape.gate_mul(x, attn)?;
    let fg = tape.scale_by_param(fg, bound[sam.alpha.0])?;
    let inv = tape.one_minus(attn);
    let bg = tape.gate_mul(x, inv)?;
    let bg = tape.scale_by_param(bg, bound[sam.beta.0])?;

    let cat = tape.concat_channels(&[fg, bg])?;
    conv_fwd(tape, bound, &sam.fuse, cat)
}

fn forward_bound(
    arch: &Arch,
    cfg: &ModelConfig,
    bound: &[ValueId],
    bn: &mut [(String, BatchNormState)],
    tape: &mut Tape,
    input: &BatchInput,
    training: bool,
) -> Result<ForwardOutputs> {
    let (_, c, h, w) = input.full.dims();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3-channel input, got {c}")));
    }
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Config(format!(
            "input size ({h}, {w}) must be divisible by 16"
        )));
    }

    let full = tape.constant(input.full.clone());
    let full_feats =
        encoder_forward_impl(&arch.enc_full, None, None, bound, bn, tape, full, training)?;

    let (fusion_input, sam_input) = if cfg.toggles.fd {
        let (Some(low_t), Some(high_t)) = (&input.low, &input.high) else {
            return Err(Error::Config(
                "frequency decomposition enabled but low/high components missing".into(),
            ));
        };
        let low = tape.constant(low_t.clone());
        let high = tape.constant(high_t.clone());
        let low_feats = encoder_forward_impl(
            arch.enc_low.as_ref().unwrap(),
            arch.gcb_low.as_ref(),
            Some(&full_feats),
            bound,
            bn,
            tape,
            low,
            training,
        )?;
        let high_feats = encoder_forward_impl(
            arch.enc_high.as_ref().unwrap(),
            arch.gcb_high.as_ref(),
            Some(&full_feats),
            bound,
            bn,
            tape,
            high,
            training,
        )?;
        let x = tape.concat_channels(&[low_feats[3], full_feats[3], high_feats[3]])?;
        (x, Some(x))
    } else {
        (full_feats[3], None)
    };

    let fused = match &arch.fusion {
        Fusion::Sam(sam) => sam_forward_impl(sam, bound, tape, fusion_input)?,
        Fusion::Plain(conv) => conv_fwd(tape, bound, conv, fusion_input)?,
    };

    let r0 = conv_fwd(tape, bound, &arch.head_r0, fused)?;

    let mut blocks = Vec::with_capacity(4);
    let mut cur = fused;
    for (i, db) in arch.decoder.iter().enumerate() {
        cur = tape.bilinear_upsample(cur, 2)?;
        if i < 3 {
            cur = tape.concat_channels(&[cur, full_feats[2 - i]])?;
        }
        cur = conv_bn_relu(tape, bound, bn, &db.c1, cur, training)?;
        cur = conv_bn_relu(tape, bound, bn, &db.c2, cur, training)?;
        let region = conv_fwd(tape, bound, &db.head_region, cur)?;
        let edge = match &db.head_edge {
            Some(hd) => Some(conv_fwd(tape, bound, hd, cur)?),
            None => None,
        };
        let distance = match &db.head_distance {
            Some(hd) => {
                let d = conv_fwd(tape, bound, hd, cur)?;
                Some(tape.sigmoid(d))
            }
            None => None,
        };
        blocks.push(BlockOutput { region, edge, distance });
    }

    Ok(ForwardOutputs { r0, blocks, fused, sam_input })
}

/// Finite-difference check of the whole model against the total loss,
/// probing `n_probes` sampled parameter entries plus every name listed in
/// `must_include` (the attention scalars, typically).
pub fn gradcheck_model(
    model: &mut Model,
    input: &BatchInput,
    targets: &crate::loss::BatchTargets,
    eps: f64,
    n_probes: usize,
    must_include: &[&str],
    seed: u64,
) -> Result<crate::tensor::gradcheck::GradCheckReport> {
    use crate::tensor::gradcheck;

    let arch = &model.arch;
    let cfg = &model.cfg;
    let bn = &mut model.bn;
    let params = &mut model.params;

    let mut probe_rng = rng::rng_from(rng::derive(seed, 0x70726f6265, 0, 0));
    let probes = gradcheck::probes_sampled(params, n_probes, must_include, &mut probe_rng);

    let build = |ps: &ParamStore| -> Result<(Tape, ValueId, Vec<ValueId>)> {
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let out = forward_bound(arch, cfg, &bound, bn, &mut tape, input, true)?;
        let (loss, _) = crate::loss::total_loss(&mut tape, &out, targets)?;
        Ok((tape, loss, bound))
    };
    gradcheck::finite_diff_check(params, build, eps, &probes)
}
