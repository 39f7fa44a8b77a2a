//! Training losses: binary cross-entropy, soft Dice, a differentiable
//! accuracy surrogate, and the three composite losses built from them, plus
//! the weighted dual-output total.
//!
//! `G` is a binary ground-truth map and `O` a probability map, both as
//! tensors of identical shape. Only the logs are clamped; Dice and accuracy
//! see the raw probabilities.

use crate::tensor::{
    add, clamp, exp, log, mul, one_minus, reduce_mean, reduce_sum, scalar_add, scalar_mul, sub,
    Result, Tensor,
};

/// Probability clamp applied inside logarithms.
pub const LOG_CLAMP: f32 = 1e-7;

/// The three composite loss variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `BCE - e^(1 + Dice)`
    L1,
    /// `BCE - e^(1 + Dice) - Accuracy`
    L2,
    /// `2*BCE - e^(1 + Dice) - Accuracy`
    L3,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<LossKind, String> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "l3" => Ok(LossKind::L3),
            other => Err(format!("unknown loss kind '{other}' (expected l1|l2|l3)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::L1 => write!(f, "L1"),
            LossKind::L2 => write!(f, "L2"),
            LossKind::L3 => write!(f, "L3"),
        }
    }
}

/// Scalar loss components recorded per training step. The `bce`, `dice` and
/// `accuracy` fields are those of the full-resolution head.
#[derive(Debug, Clone, Copy)]
pub struct LossValues {
    pub bce: f32,
    pub dice: f32,
    pub accuracy: f32,
    pub l_i: f32,
    pub l_o: f32,
    pub l_final: f32,
}

/// Mean binary cross-entropy over pixels, with probabilities clamped to
/// `[1e-7, 1 - 1e-7]` inside the logs.
pub fn bce(g: &Tensor, o: &Tensor) -> Result<Tensor> {
    let o_safe = clamp(o, LOG_CLAMP, 1.0 - LOG_CLAMP);
    let pos = mul(g, &log(&o_safe)?)?;
    let neg = mul(&one_minus(g), &log(&one_minus(&o_safe))?)?;
    Ok(scalar_mul(&reduce_mean(&add(&pos, &neg)?), -1.0))
}

/// Soft Dice with smoothing constant `s`:
/// `(2*sum(G*O) + s) / (sum(G) + sum(O) + s)`.
pub fn soft_dice(g: &Tensor, o: &Tensor, s: f32) -> Result<Tensor> {
    let intersection = reduce_sum(&mul(g, o)?);
    let numerator = scalar_add(&scalar_mul(&intersection, 2.0), s);
    let denominator = scalar_add(&add(&reduce_sum(g), &reduce_sum(o))?, s);
    crate::tensor::div(&numerator, &denominator)
}

/// Differentiable accuracy surrogate: `mean(G*O + (1-G)*(1-O))`. Equals the
/// hard (TP+TN)/total accuracy whenever `O` is binary.
pub fn soft_accuracy(g: &Tensor, o: &Tensor) -> Result<Tensor> {
    let agree_fg = mul(g, o)?;
    let agree_bg = mul(&one_minus(g), &one_minus(o))?;
    Ok(reduce_mean(&add(&agree_fg, &agree_bg)?))
}

/// One composite loss on a single output head.
pub fn composite_loss(kind: LossKind, g: &Tensor, o: &Tensor, smoothing: f32) -> Result<Tensor> {
    let bce_term = bce(g, o)?;
    let dice_term = exp(&scalar_add(&soft_dice(g, o, smoothing)?, 1.0));
    Ok(match kind {
        LossKind::L1 => sub(&bce_term, &dice_term)?,
        LossKind::L2 => sub(&sub(&bce_term, &dice_term)?, &soft_accuracy(g, o)?)?,
        LossKind::L3 => sub(
            &sub(&scalar_mul(&bce_term, 2.0), &dice_term)?,
            &soft_accuracy(g, o)?,
        )?,
    })
}

/// Dual-output training loss: `l_final = 2 * l_i + l_o`, where `l_i` is the
/// composite loss of the coarse (internal) head and `l_o` that of the
/// full-resolution head. Returns the differentiable total together with the
/// recorded scalar components.
pub fn total_loss(
    kind: LossKind,
    g_full: &Tensor,
    o_full: &Tensor,
    g_coarse: &Tensor,
    o_coarse: &Tensor,
    smoothing: f32,
) -> Result<(Tensor, LossValues)> {
    total_loss_with(kind, kind, g_full, o_full, g_coarse, o_coarse, smoothing)
}

/// [`total_loss`] with independently chosen kinds for the two heads.
pub fn total_loss_with(
    kind_internal: LossKind,
    kind_output: LossKind,
    g_full: &Tensor,
    o_full: &Tensor,
    g_coarse: &Tensor,
    o_coarse: &Tensor,
    smoothing: f32,
) -> Result<(Tensor, LossValues)> {
    let l_i = composite_loss(kind_internal, g_coarse, o_coarse, smoothing)?;
    let l_o = composite_loss(kind_output, g_full, o_full, smoothing)?;
    let l_final = add(&scalar_mul(&l_i, 2.0), &l_o)?;
    let values = LossValues {
        bce: bce(g_full, o_full)?.item(),
        dice: soft_dice(g_full, o_full, smoothing)?.item(),
        accuracy: soft_accuracy(g_full, o_full)?.item(),
        l_i: l_i.item(),
        l_o: l_o.item(),
        l_final: l_final.item(),
    };
    Ok((l_final, values))
}
