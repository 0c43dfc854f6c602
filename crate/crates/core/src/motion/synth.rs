//! Procedural action classes on the stiff-legged biped.
//!
//! Every class is built from planted-foot kinematics: a stance foot stays
//! fixed in the world while the pelvis vaults over it, so feet never slide
//! during contact and leg length is preserved exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::dataset::{Dataset, Sample};
use super::quat::{self, Quat, Vec3, IDENTITY};
use super::repr::{encode, MotionClip, NormStats, Pose};
use super::skeleton::{BipedSpec, Skeleton};
use crate::error::{Error, Result};

pub const CLASS_NAMES: [&str; 6] = ["walk", "run", "jump", "sit", "turn-left", "wave"];
/// Clearance between foot joint and floor in the rest pose.
pub const FOOT_HEIGHT: f64 = 0.02;
const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    pub biped: BipedSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 6, clips_per_class: 200, frames: 60, fps: 20.0, seed: 0, biped: BipedSpec::default() }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=CLASS_NAMES.len()).contains(&self.classes) {
            return Err(Error::Config(format!("classes must be in 2..={}", CLASS_NAMES.len())));
        }
        if self.frames < 2 {
            return Err(Error::Config("frames must be at least 2".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config("fps must be positive".into()));
        }
        Ok(())
    }
}

fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

struct Body {
    leg: f64,
    half_width: f64,
}

/// Pelvis placement and foot targets for one frame.
struct Frame {
    pelvis: Vec3,
    yaw: f64,
    feet: [Vec3; 2],
    spine: Quat,
    hand: Quat,
}

impl Body {
    fn hip_local(&self, side: usize) -> Vec3 {
        [0.0, if side == 0 { self.half_width } else { -self.half_width }, 0.0]
    }

    fn pose(&self, f: &Frame) -> Pose {
        let root = quat::yaw(f.yaw);
        let mut rotations = vec![IDENTITY; 8];
        rotations[0] = root;
        rotations[1] = f.spine;
        rotations[7] = f.hand;
        for side in 0..2 {
            let hip = quat::vadd(f.pelvis, quat::rotate(root, self.hip_local(side)));
            let local = quat::rotate(quat::conj(root), quat::vsub(f.feet[side], hip));
            rotations[3 + 2 * side] = quat::shortest_arc([0.0, 0.0, -1.0], local);
        }
        Pose { root: f.pelvis, rotations }
    }

    /// Pelvis position that puts a planted foot at `foot` with the leg
    /// pitched by `theta` (positive: foot ahead of the hip).
    fn pelvis_over(&self, foot: Vec3, yaw: f64, side: usize, theta: f64) -> Vec3 {
        let leg = [self.leg * theta.sin(), 0.0, -self.leg * theta.cos()];
        quat::vsub(foot, quat::rotate(quat::yaw(yaw), quat::vadd(leg, self.hip_local(side))))
    }

    fn foot_from(&self, pelvis: Vec3, yaw: f64, side: usize, theta: f64, abduct: f64) -> Vec3 {
        let out = if side == 0 { 1.0 } else { -1.0 };
        let (l, c) = (self.leg, theta.cos());
        let leg = [l * theta.sin(), out * l * c * abduct.sin(), -l * c * abduct.cos()];
        quat::vadd(pelvis, quat::rotate(quat::yaw(yaw), quat::vadd(leg, self.hip_local(side))))
    }
}

struct Gait {
    theta: f64,
    single: f64,
    gap: f64,
    flight: bool,
    lift: f64,
    turn: f64,
    arm: f64,
    lean: f64,
    sway: f64,
}

impl Gait {
    /// Frames of a stepping gait sampled at `times` (all >= 0).
    fn frames(&self, body: &Body, times: &[f64], yaw0: f64, first_side: usize) -> Vec<Frame> {
        let period = self.single + self.gap;
        let speed = 2.0 * body.leg * self.theta.sin() / self.single;
        let mut side = first_side;
        let mut yaw = yaw0;
        let mut stance = quat::rotate(quat::yaw(yaw0), [0.0, if side == 0 { body.half_width } else { -body.half_width }, FOOT_HEIGHT]);
        let mut start = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            while t >= start + period {
                let end_yaw = yaw + self.turn;
                let mut pelvis = body.pelvis_over(stance, end_yaw, side, -self.theta);
                if self.flight {
                    pelvis = quat::vadd(pelvis, quat::rotate(quat::yaw(end_yaw), [speed * self.gap, 0.0, 0.0]));
                }
                stance = body.foot_from(pelvis, end_yaw, 1 - side, self.theta, 0.0);
                stance[2] = FOOT_HEIGHT;
                yaw = end_yaw;
                side = 1 - side;
                start += period;
            }
            let w = t - start;
            let cycle = (w / period + side as f64) * PI;
            let (pelvis, cur_yaw, swing) = if w < self.single {
                let s = w / self.single;
                let theta = self.theta * (1.0 - 2.0 * s);
                let y = yaw + self.turn * smoothstep(s);
                let p = body.pelvis_over(stance, y, side, theta);
                let sw = body.foot_from(p, y, 1 - side, -theta, self.lift * (PI * s).sin());
                (p, y, sw)
            } else {
                let u = w - self.single;
                let y = yaw + self.turn;
                let mut p = body.pelvis_over(stance, y, side, -self.theta);
                if self.flight {
                    p = quat::vadd(p, quat::rotate(quat::yaw(y), [speed * u, 0.0, 0.0]));
                    p[2] += 0.5 * GRAVITY * u * (self.gap - u);
                }
                (p, y, body.foot_from(p, y, 1 - side, self.theta, 0.0))
            };
            let stance_now = if self.flight && w >= self.single {
                body.foot_from(pelvis, cur_yaw, side, -self.theta, 0.0)
            } else {
                stance
            };
            let mut feet = [stance_now, swing];
            if side == 1 {
                feet.swap(0, 1);
            }
            out.push(Frame {
                pelvis,
                yaw: cur_yaw,
                feet,
                spine: quat::mul(quat::pitch(self.lean), quat::yaw(self.sway * cycle.sin())),
                hand: quat::pitch(self.arm * cycle.sin()),
            });
        }
        out
    }
}

fn walk<R: Rng>(body: &Body, times: &[f64], rng: &mut R) -> Vec<Frame> {
    let period = rng.gen_range(0.52..0.62);
    let double = rng.gen_range(0.2..0.3);
    let gait = Gait {
        theta: deg(rng.gen_range(20.0..26.0)),
        single: period / (1.0 + double),
        gap: period * double / (1.0 + double),
        flight: false,
        lift: deg(rng.gen_range(12.0..18.0)),
        turn: 0.0,
        arm: deg(rng.gen_range(15.0..25.0)),
        lean: deg(rng.gen_range(0.0..4.0)),
        sway: deg(rng.gen_range(4.0..8.0)),
    };
    let offset = rng.gen_range(0.0..2.0 * period);
    gait_frames(&gait, body, times, offset, rng)
}

fn run<R: Rng>(body: &Body, times: &[f64], rng: &mut R) -> Vec<Frame> {
    let gait = Gait {
        theta: deg(rng.gen_range(28.0..34.0)),
        single: rng.gen_range(0.22..0.28),
        gap: rng.gen_range(0.10..0.16),
        flight: true,
        lift: deg(rng.gen_range(8.0..12.0)),
        turn: 0.0,
        arm: deg(rng.gen_range(35.0..50.0)),
        lean: deg(rng.gen_range(10.0..16.0)),
        sway: deg(rng.gen_range(6.0..10.0)),
    };
    let offset = rng.gen_range(0.0..2.0 * (gait.single + gait.gap));
    gait_frames(&gait, body, times, offset, rng)
}

fn turn_left<R: Rng>(body: &Body, times: &[f64], rng: &mut R) -> Vec<Frame> {
    let single = rng.gen_range(0.42..0.52);
    let gait = Gait {
        theta: deg(rng.gen_range(8.0..12.0)),
        single,
        gap: single * rng.gen_range(0.25..0.35),
        flight: false,
        lift: deg(rng.gen_range(10.0..14.0)),
        turn: deg(rng.gen_range(15.0..25.0)),
        arm: deg(rng.gen_range(5.0..10.0)),
        lean: 0.0,
        sway: deg(rng.gen_range(2.0..4.0)),
    };
    let offset = rng.gen_range(0.0..2.0 * (gait.single + gait.gap));
    gait_frames(&gait, body, times, offset, rng)
}

fn gait_frames<R: Rng>(gait: &Gait, body: &Body, times: &[f64], offset: f64, rng: &mut R) -> Vec<Frame> {
    let shifted: Vec<f64> = times.iter().map(|t| t + offset).collect();
    let yaw0 = rng.gen_range(-0.15..0.15);
    let side = rng.gen_range(0..2);
    gait.frames(body, &shifted, yaw0, side)
}

/// Both feet planted side by side, legs pitched forward by `alpha`.
fn crouch(body: &Body, mid: Vec3, yaw: f64, alpha: f64) -> (Vec3, [Vec3; 2]) {
    let pelvis = body.pelvis_over(quat::vadd(mid, quat::rotate(quat::yaw(yaw), body.hip_local(0))), yaw, 0, alpha);
    let feet = [0, 1].map(|s| quat::vadd(mid, quat::rotate(quat::yaw(yaw), body.hip_local(s))));
    (pelvis, feet)
}

fn jump<R: Rng>(body: &Body, times: &[f64], rng: &mut R) -> Vec<Frame> {
    let apex = rng.gen_range(0.2..0.4);
    let flight = 2.0 * (2.0 * apex / GRAVITY).sqrt();
    let squat = rng.gen_range(0.35..0.45);
    let rest = rng.gen_range(0.1..0.3);
    let depth = deg(rng.gen_range(22.0..32.0));
    let hop = rng.gen_range(0.0..0.3);
    let yaw = rng.gen_range(-0.15..0.15);
    let arm = deg(rng.gen_range(30.0..60.0));
    let period = rest + squat + flight;
    let offset = rng.gen_range(0.0..period);
    let heading = quat::rotate(quat::yaw(yaw), [1.0, 0.0, 0.0]);
    times
        .iter()
        .map(|&t| {
            let t = t + offset;
            let k = (t / period).floor();
            let w = t - k * period;
            let mid = quat::vadd([0.0, 0.0, FOOT_HEIGHT], quat::vscale(heading, hop * k));
            let (pelvis, feet, bend) = if w < rest {
                let (p, f) = crouch(body, mid, yaw, 0.0);
                (p, f, 0.0)
            } else if w < rest + squat {
                let a = depth * (PI * (w - rest) / squat).sin();
                let (p, f) = crouch(body, mid, yaw, a);
                (p, f, a)
            } else {
                let u = (w - rest - squat) / flight;
                let (mut p, _) = crouch(body, quat::vadd(mid, quat::vscale(heading, hop * u)), yaw, 0.0);
                p[2] += apex * 4.0 * u * (1.0 - u);
                let f = [0, 1].map(|s| body.foot_from(p, yaw, s, 0.0, 0.0));
                (p, f, 0.0)
            };
            Frame {
                pelvis,
                yaw,
                feet,
                spine: quat::pitch(0.8 * bend),
                hand: quat::pitch(-arm * (bend / depth.max(1e-9))),
            }
        })
        .collect()
}

fn sit<R: Rng>(body: &Body, times: &[f64], rng: &mut R) -> Vec<Frame> {
    let total = times.last().copied().unwrap_or(0.0).max(1e-6);
    let start = rng.gen_range(0.0..0.15) * total;
    let duration = rng.gen_range(0.35..0.55) * total;
    let depth = deg(rng.gen_range(55.0..75.0));
    let yaw = rng.gen_range(-0.15..0.15);
    let lean = rng.gen_range(0.4..0.7);
    let arm = deg(rng.gen_range(20.0..50.0));
    times
        .iter()
        .map(|&t| {
            let s = smoothstep((t - start) / duration);
            let alpha = depth * s;
            let (pelvis, feet) = crouch(body, [0.0, 0.0, FOOT_HEIGHT], yaw, alpha);
            Frame { pelvis, yaw, feet, spine: quat::pitch(lean * alpha), hand: quat::pitch(-arm * s) }
        })
        .collect()
}

fn wave<R: Rng>(body: &Body, times: &[f64], rng: &mut R) -> Vec<Frame> {
    let freq = rng.gen_range(1.0..1.6);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let sway = deg(rng.gen_range(10.0..20.0));
    let raise = deg(rng.gen_range(100.0..140.0));
    let swing = deg(rng.gen_range(25.0..45.0));
    let yaw = rng.gen_range(-0.15..0.15);
    times
        .iter()
        .map(|&t| {
            let c = (2.0 * PI * freq * t + phase).sin();
            let (pelvis, feet) = crouch(body, [0.0, 0.0, FOOT_HEIGHT], yaw, 0.0);
            Frame {
                pelvis,
                yaw,
                feet,
                spine: quat::roll(sway * c),
                hand: quat::mul(quat::roll(-raise), quat::pitch(swing * c)),
            }
        })
        .collect()
}

/// One clip of class `label`. Horizontal root position starts at the origin.
pub fn synth_clip<R: Rng>(label: usize, spec: &BipedSpec, frames: usize, fps: f64, rng: &mut R) -> Result<MotionClip> {
    let body = Body { leg: spec.leg_length, half_width: spec.hip_half_width };
    let times: Vec<f64> = (0..frames).map(|i| i as f64 / fps).collect();
    let raw = match CLASS_NAMES.get(label).copied() {
        Some("walk") => walk(&body, &times, rng),
        Some("run") => run(&body, &times, rng),
        Some("jump") => jump(&body, &times, rng),
        Some("sit") => sit(&body, &times, rng),
        Some("turn-left") => turn_left(&body, &times, rng),
        Some("wave") => wave(&body, &times, rng),
        _ => return Err(Error::InvalidArgument(format!("no procedural class {}", label))),
    };
    let origin = raw.first().map(|f| [f.pelvis[0], f.pelvis[1], 0.0]).unwrap_or([0.0; 3]);
    let frames = raw
        .into_iter()
        .map(|mut f| {
            f.pelvis = quat::vsub(f.pelvis, origin);
            f.feet = f.feet.map(|p| quat::vsub(p, origin));
            body.pose(&f)
        })
        .collect();
    Ok(MotionClip { label, fps, frames })
}

/// Deterministic synthetic dataset; clip `i` has label `i % classes` and
/// its own RNG stream derived from `(seed, i)`.
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let skeleton = Skeleton::biped(&config.biped)?;
    let count = config.classes * config.clips_per_class;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let label = i % config.classes;
        let clip = synth_clip(label, &config.biped, config.frames, config.fps, &mut rng)?;
        samples.push(Sample { label, data: encode(&clip, &skeleton)? });
    }
    let stats = NormStats::compute(&samples.iter().map(|s| &s.data).collect::<Vec<_>>(), skeleton.frame_dim())?;
    Ok(Dataset {
        class_names: CLASS_NAMES[..config.classes].iter().map(|s| s.to_string()).collect(),
        skeleton,
        frames: config.frames,
        fps: config.fps,
        stats,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::repr::{detect_foot_contact, ContactThresholds};

    fn clips(label: usize, count: usize, frames: usize, fps: f64) -> Vec<MotionClip> {
        (0..count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                rng.set_stream(i as u64);
                synth_clip(label, &BipedSpec::default(), frames, fps, &mut rng).unwrap()
            })
            .collect()
    }

    fn skeleton() -> Skeleton {
        Skeleton::biped(&BipedSpec::default()).unwrap()
    }

    #[test]
    fn walk_speed_in_range() {
        for clip in clips(0, 20, 60, 20.0) {
            let (a, b) = (clip.frames[0].root, clip.frames[59].root);
            let speed = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt() / (59.0 / 20.0);
            assert!((0.8..=1.6).contains(&speed), "walk speed {}", speed);
        }
    }

    #[test]
    fn walk_alternates_support_with_planted_feet() {
        let s = skeleton();
        for clip in clips(0, 10, 60, 20.0) {
            let pos = clip.positions(&s).unwrap();
            let mask = detect_foot_contact(&pos, &s, ContactThresholds::default(), 20.0).unwrap();
            let duty: f64 = mask.iter().flatten().sum::<f64>() / (2.0 * mask.len() as f64);
            assert!((0.5..=0.8).contains(&duty), "duty {}", duty);
            assert!(mask.iter().all(|m| m[0] + m[1] >= 1.0), "a support foot is always planted");
            assert!(mask.iter().any(|m| m[0] == 0.0) && mask.iter().any(|m| m[1] == 0.0));
            for i in 0..mask.len() - 1 {
                for (k, &f) in s.foot_joints.iter().enumerate() {
                    if mask[i][k] == 1.0 {
                        let d = quat::vsub(pos[i + 1][f], pos[i][f]);
                        assert!((d[0] * d[0] + d[1] * d[1]).sqrt() < 0.01);
                    }
                }
            }
        }
    }

    #[test]
    fn sit_lowers_pelvis() {
        for clip in clips(3, 20, 60, 20.0) {
            let (a, b) = (clip.frames[0].root[2], clip.frames[59].root[2]);
            assert!(b <= 0.7 * a, "sit from {} to {}", a, b);
        }
    }

    #[test]
    fn jump_apex_lifts_both_feet() {
        let s = skeleton();
        for clip in clips(2, 10, 60, 20.0) {
            let pos = clip.positions(&s).unwrap();
            let mask = detect_foot_contact(&pos, &s, ContactThresholds::default(), 20.0).unwrap();
            let apex = (0..pos.len()).max_by(|&i, &j| pos[i][0][2].total_cmp(&pos[j][0][2])).unwrap();
            assert!(pos[apex][0][2] > 1.0);
            assert_eq!(mask[apex], vec![0.0, 0.0]);
        }
    }

    #[test]
    fn run_has_flight_and_short_stance() {
        let s = skeleton();
        for clip in clips(1, 10, 60, 20.0) {
            let pos = clip.positions(&s).unwrap();
            let mask = detect_foot_contact(&pos, &s, ContactThresholds::default(), 20.0).unwrap();
            let duty: f64 = mask.iter().flatten().sum::<f64>() / (2.0 * mask.len() as f64);
            assert!(duty < 0.5, "run duty {}", duty);
        }
    }

    #[test]
    fn feet_never_go_below_rest_height() {
        let s = skeleton();
        for label in 0..CLASS_NAMES.len() {
            for clip in clips(label, 5, 40, 20.0) {
                for frame in clip.positions(&s).unwrap() {
                    for p in frame {
                        assert!(p[2] > FOOT_HEIGHT - 1e-9, "class {} joint at {}", label, p[2]);
                    }
                }
            }
        }
    }

    #[test]
    fn turn_left_rotates_heading() {
        for clip in clips(4, 10, 60, 20.0) {
            let yaw = |q: Quat| 2.0 * q[3].atan2(q[0]);
            let turned = yaw(clip.frames[59].rotations[0]) - yaw(clip.frames[0].rotations[0]);
            let turned = turned.rem_euclid(2.0 * PI);
            assert!(turned > 0.5, "turned {}", turned);
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = SynthConfig { clips_per_class: 3, frames: 12, ..Default::default() };
        let a = synth_dataset(&cfg).unwrap().to_bytes().unwrap();
        let b = synth_dataset(&cfg).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
        let other = synth_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap().to_bytes().unwrap();
        assert_ne!(a, other);
    }
}
