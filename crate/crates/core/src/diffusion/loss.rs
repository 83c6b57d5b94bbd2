use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Motion, Skeleton, CONTACT_OFFSET, NUM_CONTACTS, NUM_JOINTS, ROOT_OFFSET, ROT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub joints: f64,
    pub velocity: f64,
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            joints: 1.0,
            velocity: 2.0,
            foot: 5.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            joints: 0.0,
            velocity: 0.0,
            foot: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("joints", self.joints), ("velocity", self.velocity), ("foot", self.foot)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Per-term batch means, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub simple: f64,
    pub joints: f64,
    pub velocity: f64,
    pub foot: f64,
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() || a.rank() != 3 {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn need_frames(x: &Tensor, n: usize) -> Result<usize> {
    let s = x.dim(1)?;
    if s < n {
        return Err(Error::TooShort { needed: n, got: s });
    }
    Ok(s)
}

/// Per-sample mean squared error over all `S x 151` entries. Shape `(B,)`.
pub fn loss_simple(m0: &Tensor, pred: &Tensor) -> Result<Tensor> {
    check_pair(m0, pred)?;
    Ok((m0 - pred)?.sqr()?.flatten_from(1)?.mean(1)?)
}

/// Differentiable forward kinematics: `(B, S, 151)` to joint positions `(B, S, 24, 3)`.
pub struct TensorFk {
    parents: Vec<Option<usize>>,
    offsets: Tensor,
}

impl TensorFk {
    pub fn new(skeleton: &Skeleton, dtype: DType) -> Result<Self> {
        if skeleton.num_joints() != NUM_JOINTS {
            return Err(Error::InvalidSkeleton(format!("{} joints", skeleton.num_joints())));
        }
        let data: Vec<f64> = (0..NUM_JOINTS).flat_map(|j| skeleton.offset(j).iter().copied().collect::<Vec<_>>()).collect();
        Ok(Self {
            parents: (0..NUM_JOINTS).map(|j| skeleton.parent(j)).collect(),
            offsets: Tensor::from_vec(data, (NUM_JOINTS, 3), &candle_core::Device::Cpu)?.to_dtype(dtype)?,
        })
    }

    /// Local rotation matrices `(B, S, 24, 3, 3)` from the 6D channels by Gram-Schmidt.
    pub fn rotations(&self, m: &Tensor) -> Result<Tensor> {
        let (b, s, _) = m.dims3()?;
        let r = m.narrow(2, 0, ROT_DIM)?.reshape((b, s, NUM_JOINTS, 6))?;
        let a1 = r.narrow(3, 0, 3)?;
        let a2 = r.narrow(3, 3, 3)?;
        let b1 = a1.broadcast_div(&a1.sqr()?.sum_keepdim(3)?.sqrt()?)?;
        let proj = (&b1 * &a2)?.sum_keepdim(3)?;
        let u2 = (&a2 - b1.broadcast_mul(&proj)?)?;
        let b2 = u2.broadcast_div(&u2.sqr()?.sum_keepdim(3)?.sqrt()?)?;
        let c = |t: &Tensor, i: usize| t.narrow(3, i, 1);
        let (x1, y1, z1) = (c(&b1, 0)?, c(&b1, 1)?, c(&b1, 2)?);
        let (x2, y2, z2) = (c(&b2, 0)?, c(&b2, 1)?, c(&b2, 2)?);
        let b3 = Tensor::cat(
            &[
                ((&y1 * &z2)? - (&z1 * &y2)?)?,
                ((&z1 * &x2)? - (&x1 * &z2)?)?,
                ((&x1 * &y2)? - (&y1 * &x2)?)?,
            ],
            3,
        )?;
        // Columns b1, b2, b3: R[.., i, k] = b_k[i].
        Ok(Tensor::stack(&[b1, b2, b3], 4)?)
    }

    pub fn positions(&self, m: &Tensor) -> Result<Tensor> {
        let (b, s, _) = m.dims3()?;
        let local = self.rotations(m)?;
        let root = m.narrow(2, ROOT_OFFSET, 3)?;
        let mut glob: Vec<Tensor> = Vec::with_capacity(NUM_JOINTS);
        let mut pos: Vec<Tensor> = Vec::with_capacity(NUM_JOINTS);
        for j in 0..NUM_JOINTS {
            let l = local.narrow(2, j, 1)?.squeeze(2)?;
            match self.parents[j] {
                None => {
                    glob.push(l);
                    pos.push(root.clone());
                }
                Some(p) => {
                    let gp = &glob[p];
                    // (gp @ l)[i, k] = sum_j gp[i, j] l[j, k]
                    let g = gp.unsqueeze(4)?.broadcast_mul(&l.unsqueeze(2)?)?.sum(3)?;
                    let off = self.offsets.narrow(0, j, 1)?.reshape((1, 1, 1, 3))?;
                    let p_j = (&pos[p] + gp.broadcast_mul(&off)?.sum(3)?)?;
                    glob.push(g);
                    pos.push(p_j);
                }
            }
        }
        Ok(Tensor::stack(&pos, 2)?.reshape((b, s, NUM_JOINTS, 3))?)
    }
}

/// Per-sample mean over frames of the summed squared joint-position error.
pub fn loss_joints(fk: &TensorFk, m0: &Tensor, pred: &Tensor) -> Result<Tensor> {
    check_pair(m0, pred)?;
    let d = (fk.positions(m0)? - fk.positions(pred)?)?;
    Ok(d.sqr()?.sum((2, 3))?.mean(1)?)
}

/// Per-sample mean over frame pairs of the squared difference of deltas, full state.
pub fn loss_vel(m0: &Tensor, pred: &Tensor) -> Result<Tensor> {
    check_pair(m0, pred)?;
    let s = need_frames(m0, 2)?;
    let delta = |x: &Tensor| -> Result<Tensor> { Ok((x.narrow(1, 1, s - 1)? - x.narrow(1, 0, s - 1)?)?) };
    Ok((delta(m0)? - delta(pred)?)?.sqr()?.sum(2)?.mean(1)?)
}

/// Per-sample mean over frame pairs of squared foot displacement gated by the
/// predicted contact probability `sigmoid(f_hat)` of the earlier frame.
pub fn loss_foot(fk: &TensorFk, skeleton: &Skeleton, pred: &Tensor) -> Result<Tensor> {
    let s = need_frames(pred, 2)?;
    let pos = fk.positions(pred)?;
    let feet: Vec<Tensor> = skeleton
        .foot_joint_ids
        .iter()
        .map(|&j| pos.narrow(2, j, 1))
        .collect::<candle_core::Result<_>>()?;
    let feet = Tensor::cat(&feet, 2)?;
    let vel = (feet.narrow(1, 1, s - 1)? - feet.narrow(1, 0, s - 1)?)?;
    let gate = candle_nn::ops::sigmoid(&pred.narrow(2, CONTACT_OFFSET, NUM_CONTACTS)?.narrow(1, 0, s - 1)?)?;
    Ok(vel.broadcast_mul(&gate.unsqueeze(3)?)?.sqr()?.sum((2, 3))?.mean(1)?)
}

/// Per-sample terms `(simple, joints, vel, foot)`, each shape `(B,)`.
pub struct LossTerms {
    pub simple: Tensor,
    pub joints: Tensor,
    pub velocity: Tensor,
    pub foot: Tensor,
}

pub fn loss_terms(fk: &TensorFk, skeleton: &Skeleton, m0: &Tensor, pred: &Tensor) -> Result<LossTerms> {
    Ok(LossTerms {
        simple: loss_simple(m0, pred)?,
        joints: loss_joints(fk, m0, pred)?,
        velocity: loss_vel(m0, pred)?,
        foot: loss_foot(fk, skeleton, pred)?,
    })
}

impl LossTerms {
    /// Batch-mean of `simple + gate * (w1 joints + w2 vel + w3 foot)`, with
    /// `aux_gate[b]` switching auxiliary terms per sample.
    pub fn total(&self, w: &LossWeights, aux_gate: &[bool]) -> Result<(Tensor, LossBreakdown)> {
        let b = self.simple.dim(0)?;
        if aux_gate.len() != b {
            return Err(Error::ShapeMismatch(format!("{} gates for batch {b}", aux_gate.len())));
        }
        let dtype = self.simple.dtype();
        let g: Vec<f64> = aux_gate.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        let g = Tensor::from_vec(g, b, self.simple.device())?.to_dtype(dtype)?;
        let aux = ((&self.joints * w.joints)? + (&self.velocity * w.velocity)?)?;
        let aux = (aux + (&self.foot * w.foot)?)?;
        let total = (&self.simple + (aux * g)?)?.mean(0)?;
        let scalar = |t: &Tensor| -> Result<f64> { Ok(t.mean(0)?.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        let breakdown = LossBreakdown {
            total: total.to_dtype(DType::F64)?.to_scalar::<f64>()?,
            simple: scalar(&self.simple)?,
            joints: scalar(&self.joints)?,
            velocity: scalar(&self.velocity)?,
            foot: scalar(&self.foot)?,
        };
        Ok((total, breakdown))
    }
}

/// Motions as an `(B, S, 151)` f64 tensor; all motions must share a length.
pub fn motions_to_tensor(motions: &[&Motion]) -> Result<Tensor> {
    let s = motions.first().map(|m| m.len()).unwrap_or(0);
    if motions.iter().any(|m| m.len() != s) {
        return Err(Error::LengthMismatch("motion batch has mixed lengths".into()));
    }
    let data: Vec<f64> = motions.iter().flat_map(|m| m.to_flat()).collect();
    Ok(Tensor::from_vec(data, (motions.len(), s, crate::skeleton::MOTION_DIM), &candle_core::Device::Cpu)?)
}

pub fn tensor_to_motions(t: &Tensor, fps: f64) -> Result<Vec<Motion>> {
    let (b, _, _) = t.dims3()?;
    let t = t.to_dtype(DType::F64)?;
    (0..b)
        .map(|i| Motion::from_flat(fps, &t.get(i)?.flatten_all()?.to_vec1::<f64>()?))
        .collect()
}

/// Scalar form of the full objective on one pair of motions.
pub fn total_loss(m0: &Motion, pred: &Motion, skeleton: &Skeleton, w: &LossWeights) -> Result<LossBreakdown> {
    let a = motions_to_tensor(&[m0])?;
    let b = motions_to_tensor(&[pred])?;
    let fk = TensorFk::new(skeleton, DType::F64)?;
    Ok(loss_terms(&fk, skeleton, &a, &b)?.total(w, &[true])?.1)
}
