//! Encoder, the four classifier heads and the bundle that ties them to a stage.

mod checkpoint;
mod encoder;
pub mod layers;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use encoder::{Encoder, EncoderConfig, SmallConvEncoder};
pub use layers::Mode;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Image, NUM_ROTATIONS};
use crate::error::{Result, RosError};
use crate::losses::softmax_rows;
use layers::{BatchNorm, LeakyRelu, Linear, Param};

/// Width of the first affine layer of every head.
pub const HEAD_HIDDEN: usize = 256;
pub const HEAD_LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HeadRole {
    /// Stage I semantic classifier, `|C_s|` outputs.
    C1,
    /// Stage I multi-rotation classifier, `4|C_s|` outputs.
    R1,
    /// Stage II semantic + unknown classifier, `|C_s| + 1` outputs.
    C2,
    /// Stage II relative rotation classifier, 4 outputs.
    R2,
}

impl HeadRole {
    pub fn input_dim(self, feature_dim: usize) -> usize {
        match self {
            HeadRole::C1 | HeadRole::C2 => feature_dim,
            HeadRole::R1 | HeadRole::R2 => 2 * feature_dim,
        }
    }

    pub fn output_dim(self, n_known: usize) -> usize {
        match self {
            HeadRole::C1 => n_known,
            HeadRole::R1 => NUM_ROTATIONS * n_known,
            HeadRole::C2 => n_known + 1,
            HeadRole::R2 => NUM_ROTATIONS,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, HeadRole::R1 | HeadRole::R2)
    }
}

impl fmt::Display for HeadRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    One,
    Two,
}

/// `F_in → 256 → batch norm → leaky ReLU(0.2) → n_out`.
#[derive(Clone, Debug)]
pub struct Head {
    role: HeadRole,
    fc1: Linear,
    bn: BatchNorm,
    act: LeakyRelu,
    fc2: Linear,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(role: HeadRole, feature_dim: usize, n_known: usize, rng: &mut R) -> Self {
        let name = format!("{role}");
        Self {
            role,
            fc1: Linear::new(&format!("{name}.fc1"), role.input_dim(feature_dim), HEAD_HIDDEN, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), HEAD_HIDDEN),
            act: LeakyRelu::new(HEAD_LEAKY_SLOPE),
            fc2: Linear::new(&format!("{name}.fc2"), HEAD_HIDDEN, role.output_dim(n_known), rng),
        }
    }

    pub fn role(&self) -> HeadRole {
        self.role
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.outputs()
    }

    /// Returns `(logits [n_out, B], penultimate [256, B])`; the penultimate
    /// activation is taken after the leaky rectifier.
    pub fn forward(&mut self, x: &Array2<f32>, mode: Mode) -> Result<(Array2<f32>, Array2<f32>)> {
        if x.nrows() != self.input_dim() {
            return Err(RosError::shape(format!(
                "head {} expects {} input features, got {}",
                self.role,
                self.input_dim(),
                x.nrows()
            )));
        }
        let h = self.fc1.forward(x, mode);
        let h = self.bn.forward(&h, mode);
        let v = self.act.forward(h, mode);
        let logits = self.fc2.forward(&v, mode);
        Ok((logits, v))
    }

    /// Backpropagates logit gradients plus any extra gradient on the penultimate activation.
    pub fn backward(&mut self, grad_logits: &Array2<f32>, grad_penultimate: Option<&Array2<f32>>) -> Array2<f32> {
        let mut dv = self.fc2.backward(grad_logits);
        if let Some(extra) = grad_penultimate {
            dv += extra;
        }
        let dh = self.act.backward(dv);
        let dh = self.bn.backward(&dh);
        self.fc1.backward(&dh)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    fn params(&self) -> Vec<&Param> {
        vec![
            &self.fc1.weight,
            &self.fc1.bias,
            &self.bn.gamma,
            &self.bn.beta,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }

    fn state(&self) -> Vec<(String, &Array2<f32>)> {
        let mut out: Vec<(String, &Array2<f32>)> =
            self.params().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
        out.push((format!("{}.bn.running_mean", self.role), &self.bn.running_mean));
        out.push((format!("{}.bn.running_var", self.role), &self.bn.running_var));
        out
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Array2<f32>)> {
        let role = self.role;
        let mut out = Vec::new();
        for p in [
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ] {
            out.push((p.name.clone(), &mut p.value));
        }
        out.push((format!("{role}.bn.running_mean"), &mut self.bn.running_mean));
        out.push((format!("{role}.bn.running_var"), &mut self.bn.running_var));
        out
    }
}

/// Softmax outputs of a classifier head, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationOutput {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    /// 256-d penultimate activations, one row per sample.
    pub penultimate: Array2<f64>,
}

/// Feature-major `[rows, B]` → sample-major `[B, rows]` in f64.
pub fn to_rows(x: &Array2<f32>) -> Array2<f64> {
    x.t().mapv(f64::from)
}

/// Sample-major f64 gradient rows → feature-major f32 columns.
pub fn to_columns(x: &Array2<f64>) -> Array2<f32> {
    x.t().mapv(|v| v as f32)
}

/// Builds rotation-head inputs `[E(x); E(x̃)]` column by column. Without the
/// anchor the rotated features are duplicated so the head keeps its `2F` width.
pub fn stack_rotation_input(anchor: &Array2<f32>, rotated: &Array2<f32>, use_anchor: bool) -> Result<Array2<f32>> {
    if anchor.dim() != rotated.dim() {
        return Err(RosError::shape(format!(
            "anchor features {:?} and rotated features {:?} differ",
            anchor.dim(),
            rotated.dim()
        )));
    }
    let f = anchor.nrows();
    let mut out = Array2::<f32>::zeros((2 * f, anchor.ncols()));
    out.slice_mut(s![..f, ..])
        .assign(if use_anchor { anchor } else { rotated });
    out.slice_mut(s![f.., ..]).assign(rotated);
    Ok(out)
}

/// Splits a `[2F, B]` rotation-input gradient back into anchor and rotated halves.
pub fn split_rotation_grad(grad: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
    let f = grad.nrows() / 2;
    (grad.slice(s![..f, ..]).to_owned(), grad.slice(s![f.., ..]).to_owned())
}

#[derive(Clone, Debug)]
pub struct NetworkBundle {
    pub encoder: Box<dyn Encoder>,
    heads: BTreeMap<HeadRole, Head>,
    pub stage: Stage,
    pub n_known: usize,
}

impl NetworkBundle {
    pub fn new<R: Rng + ?Sized>(
        encoder_config: &EncoderConfig,
        n_known: usize,
        stage: Stage,
        rng: &mut R,
    ) -> Result<Self> {
        if n_known == 0 {
            return Err(RosError::validation("network needs at least one known class"));
        }
        let encoder = encoder_config.build(rng)?;
        let f = encoder.feature_dim();
        let roles = match stage {
            Stage::One => [HeadRole::C1, HeadRole::R1],
            Stage::Two => [HeadRole::C2, HeadRole::R2],
        };
        let heads = roles
            .into_iter()
            .map(|role| (role, Head::new(role, f, n_known, rng)))
            .collect();
        Ok(Self {
            encoder,
            heads,
            stage,
            n_known,
        })
    }

    pub fn stage1<R: Rng + ?Sized>(encoder_config: &EncoderConfig, n_known: usize, rng: &mut R) -> Result<Self> {
        Self::new(encoder_config, n_known, Stage::One, rng)
    }

    pub fn roles(&self) -> Vec<HeadRole> {
        self.heads.keys().copied().collect()
    }

    pub fn head(&self, role: HeadRole) -> Result<&Head> {
        self.heads
            .get(&role)
            .ok_or_else(|| RosError::shape(format!("bundle has no {role} head")))
    }

    pub fn head_mut(&mut self, role: HeadRole) -> Result<&mut Head> {
        self.heads
            .get_mut(&role)
            .ok_or_else(|| RosError::shape(format!("bundle has no {role} head")))
    }

    pub fn encode(&mut self, images: &[&Image], mode: Mode) -> Result<Array2<f32>> {
        self.encoder.forward(images, mode)
    }

    /// Evaluation-mode semantic prediction `softmax(C(E(x)))`.
    pub fn forward_semantic(&mut self, images: &[&Image], role: HeadRole) -> Result<ClassifierOutput> {
        if role.is_rotation() {
            return Err(RosError::shape(format!("{role} is not a semantic head")));
        }
        self.head(role)?;
        let features = self.encode(images, Mode::Eval)?;
        let (logits, _) = self.head_mut(role)?.forward(&features, Mode::Eval)?;
        let logits = to_rows(&logits);
        Ok(ClassifierOutput {
            probs: softmax_rows(&logits),
            logits,
        })
    }

    /// Evaluation-mode rotation prediction `softmax(R([E(x), E(x̃)]))`.
    pub fn forward_rotation(
        &mut self,
        anchors: &[&Image],
        rotated: &[&Image],
        use_anchor: bool,
        role: HeadRole,
    ) -> Result<RotationOutput> {
        if anchors.len() != rotated.len() {
            return Err(RosError::shape(format!(
                "{} anchors but {} rotated images",
                anchors.len(),
                rotated.len()
            )));
        }
        if !role.is_rotation() {
            return Err(RosError::shape(format!("{role} is not a rotation head")));
        }
        self.head(role)?;
        let a = self.encode(anchors, Mode::Eval)?;
        let r = self.encode(rotated, Mode::Eval)?;
        self.rotation_from_features(&a, &r, use_anchor, role)
    }

    pub fn rotation_from_features(
        &mut self,
        anchor_features: &Array2<f32>,
        rotated_features: &Array2<f32>,
        use_anchor: bool,
        role: HeadRole,
    ) -> Result<RotationOutput> {
        let input = stack_rotation_input(anchor_features, rotated_features, use_anchor)?;
        let (logits, v) = self.head_mut(role)?.forward(&input, Mode::Eval)?;
        let logits = to_rows(&logits);
        Ok(RotationOutput {
            probs: softmax_rows(&logits),
            logits,
            penultimate: to_rows(&v),
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.encoder.params_mut();
        for head in self.heads.values_mut() {
            out.extend(head.params_mut());
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Sets per-tensor learning-rate multipliers: one for the encoder, one for the heads,
    /// and an extra factor on the unknown-class output row of C2 when present.
    pub fn set_lr_multipliers(&mut self, encoder: f32, heads: f32, unknown_row: f32) {
        for p in self.encoder.params_mut() {
            p.lr_mult = encoder;
        }
        let n_known = self.n_known;
        for (role, head) in self.heads.iter_mut() {
            for p in head.params_mut() {
                p.lr_mult = heads;
            }
            if *role == HeadRole::C2 {
                let mut rows = vec![1.0; n_known + 1];
                rows[n_known] = unknown_row;
                head.fc2.weight.row_lr = Some(rows.clone());
                head.fc2.bias.row_lr = Some(rows);
            }
        }
    }

    /// Learning-rate multiplier of the C2 unknown-class row, if this is a Stage II bundle.
    pub fn unknown_row_lr(&self) -> Option<f32> {
        let head = self.heads.get(&HeadRole::C2)?;
        head.fc2.weight.row_lr.as_ref().map(|r| r[self.n_known])
    }

    pub fn state(&self) -> Vec<(String, &Array2<f32>)> {
        let mut out = self.encoder.state();
        for head in self.heads.values() {
            out.extend(head.state());
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Array2<f32>)> {
        let mut out = self.encoder.state_mut();
        for head in self.heads.values_mut() {
            out.extend(head.state_mut());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOptions {
    /// Start Stage II from the Stage I weights; otherwise reinitialize everything.
    pub enabled: bool,
    pub unknown_lr_mult: f32,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            enabled: true,
            unknown_lr_mult: 2.0,
        }
    }
}

/// Builds the Stage II bundle. With transfer enabled the encoder is copied, C2
/// inherits C1's hidden layer and known-class output rows, and the unknown row
/// and R2 are freshly initialized.
pub fn transfer_stage1_to_stage2<R: Rng + ?Sized>(
    stage1: &NetworkBundle,
    options: &TransferOptions,
    rng: &mut R,
) -> Result<NetworkBundle> {
    let n_known = stage1.n_known;
    let mut bundle = NetworkBundle::new(&stage1.encoder.config(), n_known, Stage::Two, rng)?;
    if options.enabled {
        bundle.encoder = stage1.encoder.clone();
        let c1 = stage1.head(HeadRole::C1)?;
        let c2 = bundle.head_mut(HeadRole::C2)?;
        c2.fc1.weight.value.assign(&c1.fc1.weight.value);
        c2.fc1.bias.value.assign(&c1.fc1.bias.value);
        c2.bn.gamma.value.assign(&c1.bn.gamma.value);
        c2.bn.beta.value.assign(&c1.bn.beta.value);
        c2.bn.running_mean.assign(&c1.bn.running_mean);
        c2.bn.running_var.assign(&c1.bn.running_var);
        c2.fc2
            .weight
            .value
            .slice_mut(s![..n_known, ..])
            .assign(&c1.fc2.weight.value);
        c2.fc2
            .bias
            .value
            .slice_mut(s![..n_known, ..])
            .assign(&c1.fc2.bias.value);
    }
    for p in bundle.params_mut() {
        p.velocity.fill(0.0);
    }
    bundle.set_lr_multipliers(1.0, 1.0, options.unknown_lr_mult);
    Ok(bundle)
}

/// Column `j` of `x` repeated for each index in `idx` (gathers samples).
pub fn gather_columns(x: &Array2<f32>, idx: &[usize]) -> Array2<f32> {
    x.select(Axis(1), idx)
}
