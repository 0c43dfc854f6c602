use crate::error::{shape_err, Result};
use crate::motion::{Layout, NormStats, Skeleton};
use crate::tensor::{Graph, Tensor, Var};

/// `softplus(-D(real)) + softplus(D(fake))`, each batch-meaned.
pub fn disc_loss<'g>(real: Var<'g>, fake: Var<'g>) -> Result<Var<'g>> {
    real.neg()?.softplus()?.mean()?.add(fake.softplus()?.mean()?)
}

/// Non-saturating generator loss `softplus(-D(fake))`, batch-meaned.
pub fn gen_adv_loss<'g>(fake: Var<'g>) -> Result<Var<'g>> {
    fake.neg()?.softplus()?.mean()
}

/// `γ/2 · mean_b ‖∂D_b/∂x_prev‖²`, kept on the tape so it can be
/// differentiated again with respect to the critic's parameters.
pub fn r1_penalty<'g>(real_scores: Var<'g>, x_prev: Var<'g>, gamma: f64) -> Result<Var<'g>> {
    let g = real_scores.graph();
    if gamma == 0.0 {
        return Ok(g.scalar(0.0));
    }
    let batch = real_scores.numel().max(1) as f64;
    let grad = g.grad(real_scores.sum()?, &[x_prev])?[0];
    grad.square()?.sum()?.scale(0.5 * gamma / batch)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeoTerms<T> {
    pub recon: T,
    pub pos: T,
    pub foot: T,
    pub vel: T,
}

/// `adv + R·(recon + λ·(pos + vel + foot))`.
pub fn total_gen_loss<'g>(adv: Var<'g>, geo: &GeoTerms<Var<'g>>, weight: f64, lambda: f64) -> Result<Var<'g>> {
    if weight == 0.0 {
        return Ok(adv);
    }
    let mut inner = geo.recon;
    if lambda != 0.0 {
        inner = inner.add(geo.pos.add(geo.vel)?.add(geo.foot)?.scale(lambda)?)?;
    }
    adv.add(inner.scale(weight)?)
}

/// Differentiable forward kinematics for frame vectors.
pub struct GeoContext {
    pub skeleton: Skeleton,
    pub layout: Layout,
    pub stats: NormStats,
}

type Mat3<'g> = [[Var<'g>; 3]; 3];

impl GeoContext {
    pub fn new(skeleton: Skeleton, stats: NormStats) -> Self {
        Self { layout: Layout::of(&skeleton), skeleton, stats }
    }

    /// Raw-unit values of a normalized `[B, N, D_f]` block.
    pub fn denormalize<'g>(&self, x: Var<'g>) -> Result<Var<'g>> {
        let g = x.graph();
        let d = self.layout.dim();
        let std = g.leaf(Tensor::new(vec![d], self.stats.std.clone())?);
        let mean = g.leaf(Tensor::new(vec![d], self.stats.mean.clone())?);
        x.mul(std)?.add(mean)
    }

    /// Global joint positions `[B, N, J, 3]` from the root and rotation
    /// channels of a raw block; quaternions are renormalized first.
    pub fn fk<'g>(&self, raw: Var<'g>) -> Result<Var<'g>> {
        let shape = raw.shape();
        if shape.len() != 3 || shape[2] != self.layout.dim() {
            return shape_err("fk", format!("{:?} for frame width {}", shape, self.layout.dim()));
        }
        let (b, n, j) = (shape[0], shape[1], self.layout.joints);
        let root = raw.slice(2, self.layout.root(), 3)?.reshape(&[b, n, 1, 3])?;
        let q = raw.slice(2, self.layout.rotations(), 4 * j)?.reshape(&[b, n, j, 4])?;
        let q = q.div(q.square()?.sum_axis(3)?.shift(1e-12)?.sqrt()?)?;
        let c: Vec<Var> = (0..4).map(|k| q.slice(3, k, 1)).collect::<Result<_>>()?;
        let (w, x, y, z) = (c[0], c[1], c[2], c[3]);
        let two = |a: Var<'g>, b: Var<'g>| a.mul(b)?.scale(2.0);
        let local: Mat3 = [
            [
                two(y, y)?.add(two(z, z)?)?.neg()?.shift(1.0)?,
                two(x, y)?.sub(two(w, z)?)?,
                two(x, z)?.add(two(w, y)?)?,
            ],
            [
                two(x, y)?.add(two(w, z)?)?,
                two(x, x)?.add(two(z, z)?)?.neg()?.shift(1.0)?,
                two(y, z)?.sub(two(w, x)?)?,
            ],
            [
                two(x, z)?.sub(two(w, y)?)?,
                two(y, z)?.add(two(w, x)?)?,
                two(x, x)?.add(two(y, y)?)?.neg()?.shift(1.0)?,
            ],
        ];
        let joint = |m: &Mat3<'g>, k: usize| -> Result<Mat3<'g>> {
            let row = |r: usize| -> Result<[Var<'g>; 3]> {
                Ok([m[r][0].slice(2, k, 1)?, m[r][1].slice(2, k, 1)?, m[r][2].slice(2, k, 1)?])
            };
            Ok([row(0)?, row(1)?, row(2)?])
        };
        let has_children: Vec<bool> =
            (0..j).map(|k| (0..j).any(|c| self.skeleton.parent(c) == Some(k))).collect();
        let mut global: Vec<Option<Mat3>> = vec![None; j];
        let mut pos: Vec<Var> = Vec::with_capacity(j);
        for k in 0..j {
            match self.skeleton.parent(k) {
                None => {
                    pos.push(root);
                    global[k] = Some(joint(&local, k)?);
                }
                Some(p) => {
                    let gp = global[p].as_ref().expect("parents precede children");
                    let off = self.skeleton.offsets[k];
                    let mut coords = Vec::with_capacity(3);
                    for r in 0..3 {
                        let mut acc: Option<Var> = None;
                        for (col, &o) in off.iter().enumerate() {
                            if o != 0.0 {
                                let term = gp[r][col].scale(o)?;
                                acc = Some(match acc {
                                    Some(a) => a.add(term)?,
                                    None => term,
                                });
                            }
                        }
                        coords.push(acc.expect("non-root bones have length"));
                    }
                    pos.push(pos[p].add(Var::concat(&coords, 3)?)?);
                    if has_children[k] {
                        let lk = joint(&local, k)?;
                        let mut m: Vec<[Var; 3]> = Vec::with_capacity(3);
                        for r in 0..3 {
                            let mut row = Vec::with_capacity(3);
                            for col in 0..3 {
                                let e = gp[r][0]
                                    .mul(lk[0][col])?
                                    .add(gp[r][1].mul(lk[1][col])?)?
                                    .add(gp[r][2].mul(lk[2][col])?)?;
                                row.push(e);
                            }
                            m.push([row[0], row[1], row[2]]);
                        }
                        global[k] = Some([m[0], m[1], m[2]]);
                    }
                }
            }
        }
        Var::concat(&pos, 2)
    }

    /// Geometric terms of a normalized prediction against normalized
    /// ground truth `[B, N, D_f]` (the truth is treated as constant).
    pub fn losses<'g>(&self, x0: &Tensor, pred: Var<'g>) -> Result<GeoTerms<Var<'g>>> {
        let g: &'g Graph = pred.graph();
        let shape = pred.shape();
        if x0.shape() != shape.as_slice() || shape.len() != 3 || shape[1] < 2 {
            return shape_err("geo_losses", format!("truth {:?} vs prediction {:?}", x0.shape(), shape));
        }
        let (b, n, j) = (shape[0], shape[1], self.layout.joints);
        let truth = g.leaf(x0.clone());
        let recon = truth.sub(pred)?.square()?.mean()?;

        let raw_truth = self.stats.denormalize(x0)?;
        let true_pos = g
            .leaf(raw_truth.clone())
            .slice(2, self.layout.positions(), 3 * j)?
            .reshape(&[b, n, j, 3])?;
        let pred_pos = self.fk(self.denormalize(pred)?)?;
        let per_frame = (b * n) as f64;
        let pos = true_pos.sub(pred_pos)?.square()?.sum()?.scale(1.0 / per_frame)?;

        let feet: Vec<Var> =
            self.skeleton.foot_joints.iter().map(|&f| pred_pos.slice(2, f, 1)).collect::<Result<_>>()?;
        let feet = Var::concat(&feet, 2)?;
        let step = feet.slice(1, 1, n - 1)?.sub(feet.slice(1, 0, n - 1)?)?;
        let nf = self.layout.feet;
        let contact = g
            .leaf(raw_truth)
            .slice(2, self.layout.contacts(), nf)?
            .slice(1, 0, n - 1)?
            .reshape(&[b, n - 1, nf, 1])?;
        let pairs = (b * (n - 1)) as f64;
        let foot = step.mul(contact)?.square()?.sum()?.scale(1.0 / pairs)?;

        let dt = truth.slice(1, 1, n - 1)?.sub(truth.slice(1, 0, n - 1)?)?;
        let dp = pred.slice(1, 1, n - 1)?.sub(pred.slice(1, 0, n - 1)?)?;
        let vel = dt.sub(dp)?.square()?.mean()?;
        Ok(GeoTerms { recon, pos, foot, vel })
    }
}
