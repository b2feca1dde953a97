//! Toy convolutional backbone and the ensemble container.
//!
//! `Conv3x3(c1) -> ReLU -> MaxPool -> Conv3x3(c2) -> ReLU -> MaxPool ->
//! GlobalAvgPool -> [Dropout] -> Dense(n_classes)`, with `c1 = 16`, `c2 = 32`
//! at width multiplier 1. The global-average-pooled vector is the feature
//! vector used by centroid classifiers; the dense layer is the classification
//! head that few-shot evaluation discards.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of parameter tensors per backbone.
pub const N_TENSORS: usize = 6;

const ARCH_TAG: &str = "toyconv-v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub in_channels: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub n_classes: usize,
    /// Dropout probability applied to features before the head in train mode.
    pub dropout: f64,
}

impl Architecture {
    /// Standard 1 -> 16 -> 32 channel plan on grayscale input.
    pub fn standard(n_classes: usize) -> Self {
        Architecture {
            in_channels: 1,
            conv1: 16,
            conv2: 32,
            n_classes,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(self, dropout: f64) -> Self {
        Architecture { dropout, ..self }
    }

    /// Scale both convolution widths (at least one channel each).
    pub fn with_width(self, multiplier: f64) -> Self {
        let scale = |c: usize| (libm::round(c as f64 * multiplier) as usize).max(1);
        Architecture {
            conv1: scale(16),
            conv2: scale(32),
            ..self
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.conv2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::param("n_classes", format!("{} < 2", self.n_classes)));
        }
        if self.in_channels == 0 || self.conv1 == 0 || self.conv2 == 0 {
            return Err(Error::param("channels", "channel counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Canonical textual description, stable across runs.
    pub fn descriptor(&self) -> String {
        format!(
            "{ARCH_TAG};in={};c1={};c2={};classes={};dropout={:?}",
            self.in_channels, self.conv1, self.conv2, self.n_classes, self.dropout
        )
    }

    pub fn parse(descriptor: &str) -> Result<Self> {
        let bad = |why: &str| Error::param("architecture", format!("{why} in `{descriptor}`"));
        let mut parts = descriptor.split(';');
        if parts.next() != Some(ARCH_TAG) {
            return Err(bad("unknown architecture tag"));
        }
        let mut arch = Architecture::standard(2);
        let mut seen = 0u8;
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("malformed field"))?;
            let int = || v.parse::<usize>().map_err(|_| bad("bad integer"));
            match k {
                "in" => arch.in_channels = int()?,
                "c1" => arch.conv1 = int()?,
                "c2" => arch.conv2 = int()?,
                "classes" => arch.n_classes = int()?,
                "dropout" => arch.dropout = v.parse().map_err(|_| bad("bad dropout"))?,
                _ => return Err(bad("unknown field")),
            }
            seen += 1;
        }
        if seen != 5 {
            return Err(bad("missing fields"));
        }
        arch.validate()?;
        Ok(arch)
    }

    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.descriptor().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn tensor_shapes(&self) -> [Vec<usize>; N_TENSORS] {
        [
            vec![self.conv1, self.in_channels, 3, 3],
            vec![self.conv1],
            vec![self.conv2, self.conv1, 3, 3],
            vec![self.conv2],
            vec![self.conv2, self.n_classes],
            vec![self.n_classes],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters of one backbone: two conv stages and the dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    arch: Architecture,
    /// conv1 kernels, conv1 bias, conv2 kernels, conv2 bias, head weight, head bias
    tensors: Vec<Tensor>,
}

impl BackboneParams {
    /// Uniform weights in `+-sqrt(3 / fan_in)`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed, "init", 0);
        let tensors = arch
            .tensor_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                let data = if i % 2 == 1 {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = if shape.len() == 4 { shape[1] * 9 } else { shape[0] };
                    let bound = libm::sqrt(3.0 / fan_in as f64);
                    (0..n).map(|_| r.random_range(-bound..=bound)).collect()
                };
                Tensor::new(shape, data).expect("shape from architecture")
            })
            .collect();
        Ok(BackboneParams { arch, tensors })
    }

    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.tensor_shapes();
        if tensors.len() != N_TENSORS {
            return Err(Error::dim("backbone tensors", &[tensors.len()], &[N_TENSORS]));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::dim("backbone tensor", t.shape(), s));
            }
            if !t.is_finite() {
                return Err(Error::Numeric("non-finite parameter".into()));
            }
        }
        Ok(BackboneParams { arch, tensors })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Record the parameters on `tape` as trainable leaves (or constants).
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
        ParamVars(vars.try_into().expect("six tensors"))
    }
}

/// Tape handles of one backbone's parameters, in [`BackboneParams::tensors`] order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars(pub [Var; N_TENSORS]);

impl ParamVars {
    /// `sum ||theta||^2` over every parameter tensor.
    pub fn l2(&self, tape: &mut Tape) -> Result<Var> {
        let mut total = tape.l2_norm_squared(self.0[0]);
        for &v in &self.0[1..] {
            let term = tape.l2_norm_squared(v);
            total = tape.add(total, term)?;
        }
        Ok(total)
    }
}

/// Output of a forward pass recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub features: Var,
}

/// Forward pass over a `[b, c, h, w]` batch already on the tape. Dropout is
/// applied only in [`Mode::Train`] and only when the architecture asks for it.
pub fn forward_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    arch: &Architecture,
    params: &ParamVars,
    batch: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardVars> {
    let shape = tape.shape(batch);
    if shape.len() != 4 || shape[1] != arch.in_channels || shape[2] < 4 || shape[3] < 4 {
        return Err(Error::dim("forward input", shape, &[0, arch.in_channels, 0, 0]));
    }
    let [k1, b1, k2, b2, w, b] = params.0;
    let h = tape.conv2d(batch, k1, Some(b1))?;
    let h = tape.relu(h);
    let h = tape.max_pool_2x2(h)?;
    let h = tape.conv2d(h, k2, Some(b2))?;
    let h = tape.relu(h);
    let h = tape.max_pool_2x2(h)?;
    let features = tape.global_average_pool(h)?;
    let head_in = if mode == Mode::Train && arch.dropout > 0.0 {
        tape.dropout(features, arch.dropout, rng)?
    } else {
        features
    };
    let z = tape.matmul(head_in, w)?;
    let logits = tape.add_row_bias(z, b)?;
    Ok(ForwardVars { logits, features })
}

/// Value-only forward pass: `(logits [b, n_classes], features [b, feature_dim])`.
pub fn forward<R: Rng + ?Sized>(
    params: &BackboneParams,
    batch: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let x = tape.constant(batch.clone());
    let out = forward_on_tape(&mut tape, &params.arch, &vars, x, mode, rng)?;
    Ok((tape.value(out.logits).clone(), tape.value(out.features).clone()))
}

/// Eval-mode features for `indices` of `dataset`, one row per sample.
pub fn features_of(params: &BackboneParams, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(indices.len());
    let mut unused = rng::stream(0, "unused", 0);
    for chunk in indices.chunks(CHUNK) {
        let batch = dataset.plain_batch(chunk);
        let (_, feats) = forward(params, &batch, Mode::Eval, &mut unused)?;
        out.extend(feats.rows().map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Eval-mode logits for `indices` of `dataset`.
pub fn logits_of(params: &BackboneParams, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(indices.len());
    let mut unused = rng::stream(0, "unused", 0);
    for chunk in indices.chunks(CHUNK) {
        let batch = dataset.plain_batch(chunk);
        let (logits, _) = forward(params, &batch, Mode::Eval, &mut unused)?;
        out.extend(logits.rows().map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// `K` backbones sharing one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleParams {
    members: Vec<BackboneParams>,
    member_seeds: Vec<u64>,
}

impl EnsembleParams {
    pub fn init(arch: Architecture, member_seeds: &[u64]) -> Result<Self> {
        let members = member_seeds
            .iter()
            .map(|&s| BackboneParams::init(arch, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, member_seeds.to_vec())
    }

    pub fn new(members: Vec<BackboneParams>, member_seeds: Vec<u64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::param("members", "an ensemble needs at least one member"));
        }
        if members.len() != member_seeds.len() {
            return Err(Error::dim("member seeds", &[members.len()], &[member_seeds.len()]));
        }
        let fp = members[0].arch.fingerprint();
        if members.iter().any(|m| m.arch.fingerprint() != fp) {
            return Err(Error::param("members", "members must share one architecture"));
        }
        Ok(EnsembleParams { members, member_seeds })
    }

    pub fn single(member: BackboneParams, seed: u64) -> Self {
        EnsembleParams {
            members: vec![member],
            member_seeds: vec![seed],
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn arch(&self) -> &Architecture {
        &self.members[0].arch
    }

    pub fn arch_fingerprint(&self) -> u64 {
        self.arch().fingerprint()
    }

    pub fn members(&self) -> &[BackboneParams] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [BackboneParams] {
        &mut self.members
    }

    pub fn member_seeds(&self) -> &[u64] {
        &self.member_seeds
    }

    /// SHA-256 over the architecture descriptor, seeds and every parameter
    /// bit pattern, truncated to 64 bits.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.arch().descriptor().as_bytes());
        for (m, s) in self.members.iter().zip(&self.member_seeds) {
            h.update(s.to_le_bytes());
            for t in &m.tensors {
                for v in t.data() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    /// Ensemble made of member `j` alone.
    pub fn member_ensemble(&self, j: usize) -> EnsembleParams {
        EnsembleParams::single(self.members[j].clone(), self.member_seeds[j])
    }
}

/// Default backbone for `n_classes`, deterministic per seed.
pub fn init_backbone(seed: u64, n_classes: usize) -> Result<BackboneParams> {
    BackboneParams::init(Architecture::standard(n_classes), seed)
}
