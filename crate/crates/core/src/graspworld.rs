//! A planar grasp-and-carry world with hidden per-affordance parameters.
//!
//! The object carries four graspable affordances. Each episode draws a
//! [`HiddenParam`] that may block some of them (closing on a blocked
//! affordance never attaches) or make them slippery (the grasp is lost with
//! some probability on every carry step). Neither is visible in the
//! [`Observation`]. The task succeeds when the object is carried into the
//! goal disc.

use std::f64::consts::TAU;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::types::{Event, Observation, ProprioPoint, OBS_DIM};

pub const NUM_AFFORDANCES: usize = 4;

/// Episodes never draw a hidden parameter without at least one affordance
/// that is unblocked and at most this slippery.
pub const SOLVABLE_SLIP: f64 = 0.05;

const PURPOSE_HIDDEN: u64 = 1;
const PURPOSE_POSE: u64 = 2;
const PURPOSE_DYNAMICS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Train,
    Blocked,
    AdversarialSlip,
    HeldOut,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Train,
        Variant::Blocked,
        Variant::AdversarialSlip,
        Variant::HeldOut,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Train => "train",
            Variant::Blocked => "blocked",
            Variant::AdversarialSlip => "adversarial_slip",
            Variant::HeldOut => "held_out",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown variant '{s}'")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffordanceParam {
    pub blocked: bool,
    pub slip_prob: f64,
}

impl AffordanceParam {
    pub fn eligible(&self) -> bool {
        !self.blocked && self.slip_prob <= SOLVABLE_SLIP
    }
}

/// The unobserved per-episode context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenParam {
    pub affordances: [AffordanceParam; NUM_AFFORDANCES],
    /// Per-axis scale applied to the affordance offsets (held-out geometry).
    #[serde(default = "unit_scale")]
    pub offset_scale: [f64; 2],
}

fn unit_scale() -> [f64; 2] {
    [1.0, 1.0]
}

impl HiddenParam {
    pub fn nominal() -> Self {
        Self {
            affordances: [AffordanceParam {
                blocked: false,
                slip_prob: 0.0,
            }; NUM_AFFORDANCES],
            offset_scale: unit_scale(),
        }
    }

    pub fn is_solvable(&self) -> bool {
        self.affordances.iter().any(AffordanceParam::eligible)
    }

    pub fn eligible(&self) -> Vec<usize> {
        (0..NUM_AFFORDANCES)
            .filter(|&i| self.affordances[i].eligible())
            .collect()
    }
}

/// Draw the hidden parameter for `variant` from `stream`.
pub fn sample_hidden(variant: Variant, stream: SeedStream) -> HiddenParam {
    sample_hidden_with(variant, &mut stream.rng())
}

pub(crate) fn sample_hidden_with(variant: Variant, rng: &mut impl Rng) -> HiddenParam {
    loop {
        let mut h = HiddenParam::nominal();
        for a in h.affordances.iter_mut() {
            a.slip_prob = rng.random_range(0.0..=0.02);
        }
        match variant {
            Variant::Train => {}
            Variant::Blocked => {
                let first = rng.random_range(0..NUM_AFFORDANCES);
                let mut second = rng.random_range(0..NUM_AFFORDANCES - 1);
                if second >= first {
                    second += 1;
                }
                h.affordances[first].blocked = true;
                h.affordances[second].blocked = true;
            }
            Variant::AdversarialSlip => {
                let good = rng.random_range(0..NUM_AFFORDANCES);
                for (i, a) in h.affordances.iter_mut().enumerate() {
                    if i != good {
                        a.slip_prob = rng.random_range(0.2..=0.4);
                    }
                }
            }
            Variant::HeldOut => {
                h.offset_scale = [rng.random_range(0.7..=1.3), rng.random_range(0.7..=1.3)];
            }
        }
        if h.is_solvable() {
            return h;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    fn inside_unit_square(&self) -> bool {
        (0..2).all(|i| 0.0 <= self.min[i] && self.min[i] <= self.max[i] && self.max[i] <= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub variant: Variant,
    pub placement_region: Region,
    /// Affordance offsets from the object centre in the object frame.
    pub affordance_offsets: [[f64; 2]; NUM_AFFORDANCES],
    pub goal_center: [f64; 2],
    pub goal_radius: f64,
    pub grasp_radius: f64,
    pub v_max: f64,
    pub home: ProprioPoint,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::new(Variant::Train)
    }
}

impl ScenarioConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            placement_region: Region {
                min: [0.25, 0.1],
                max: [0.75, 0.6],
            },
            affordance_offsets: [[0.06, 0.0], [-0.06, 0.0], [0.0, 0.06], [0.0, -0.06]],
            goal_center: [0.5, 0.9],
            goal_radius: 0.05,
            grasp_radius: 0.03,
            v_max: 0.05,
            home: ProprioPoint::new(0.5, 0.95, 1.0),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.placement_region.inside_unit_square() {
            return Err(Error::Config("placement region must lie inside [0,1]^2".into()));
        }
        let [gx, gy] = self.goal_center;
        let r = self.goal_radius;
        if !(r > 0.0 && gx - r >= 0.0 && gx + r <= 1.0 && gy - r >= 0.0 && gy + r <= 1.0) {
            return Err(Error::Config("goal region must lie inside [0,1]^2".into()));
        }
        if !(self.grasp_radius > 0.0 && self.v_max > 0.0) {
            return Err(Error::Config("grasp radius and v_max must be positive".into()));
        }
        self.home.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub cfg: ScenarioConfig,
    pub ee: ProprioPoint,
    pub object: ObjectPose,
    /// Index of the grasped affordance, if any.
    pub attached: Option<usize>,
    pub hidden: HiddenParam,
    pub steps: usize,
    pub recoveries: usize,
    pub done: bool,
    rng: ChaCha8Rng,
}

/// Start an episode: home pose, freshly placed object, fresh hidden parameter.
pub fn reset(cfg: &ScenarioConfig, stream: SeedStream) -> Result<(WorldState, Observation)> {
    cfg.validate()?;
    let hidden = sample_hidden(cfg.variant, stream.fork(PURPOSE_HIDDEN));
    let mut pose_rng = stream.fork(PURPOSE_POSE).rng();
    let Region { min, max } = cfg.placement_region;
    let object = ObjectPose {
        x: uniform(&mut pose_rng, min[0], max[0]),
        y: uniform(&mut pose_rng, min[1], max[1]),
        theta: pose_rng.random_range(0.0..TAU),
    };
    let state = WorldState {
        cfg: cfg.clone(),
        ee: cfg.home,
        object,
        attached: None,
        hidden,
        steps: 0,
        recoveries: 0,
        done: false,
        rng: stream.fork(PURPOSE_DYNAMICS).rng(),
    };
    let obs = state.observe();
    Ok((state, obs))
}

fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl WorldState {
    /// Build a state directly; mainly for tests and scripted scenarios.
    pub fn from_parts(
        cfg: ScenarioConfig,
        ee: ProprioPoint,
        object: ObjectPose,
        hidden: HiddenParam,
        stream: SeedStream,
    ) -> Self {
        Self {
            cfg,
            ee,
            object,
            attached: None,
            hidden,
            steps: 0,
            recoveries: 0,
            done: false,
            rng: stream.fork(PURPOSE_DYNAMICS).rng(),
        }
    }

    /// World position of affordance `i`.
    pub fn affordance_position(&self, i: usize) -> [f64; 2] {
        let [ox, oy] = self.cfg.affordance_offsets[i];
        let [sx, sy] = self.hidden.offset_scale;
        let (dx, dy) = rotate(ox * sx, oy * sy, self.object.theta);
        [self.object.x + dx, self.object.y + dy]
    }

    pub fn proprio(&self) -> ProprioPoint {
        self.ee
    }

    pub fn in_goal(&self) -> bool {
        let [gx, gy] = self.cfg.goal_center;
        self.ee.planar_dist(gx, gy) <= self.cfg.goal_radius
    }

    /// Straight-line step count from home to affordance `i`, one closing
    /// step, and the carry into the goal disc.
    pub fn optimal_steps(&self, i: usize) -> usize {
        let [ax, ay] = self.affordance_position(i);
        let v = self.cfg.v_max;
        let approach = self.cfg.home.planar_dist(ax, ay);
        let [gx, gy] = self.cfg.goal_center;
        let carry = ((ax - gx).hypot(ay - gy) - self.cfg.goal_radius).max(0.0);
        ticks(approach, v) + 1 + ticks(carry, v)
    }

    /// Project the state onto the observed features. Hidden parameters are
    /// never read except for the offset scale, which is visible geometry.
    pub fn observe(&self) -> Observation {
        let mut f = [0.0; OBS_DIM];
        f[Observation::EE_X] = self.ee.x;
        f[Observation::EE_Y] = self.ee.y;
        f[Observation::GRIPPER] = self.ee.gripper;
        f[Observation::OBJ_X] = self.object.x;
        f[Observation::OBJ_Y] = self.object.y;
        f[Observation::OBJ_THETA] = self.object.theta;
        f[Observation::ATTACHED] = if self.attached.is_some() { 1.0 } else { 0.0 };
        for i in 0..NUM_AFFORDANCES {
            let [x, y] = self.affordance_position(i);
            f[Observation::AFFORDANCES + 2 * i] = x;
            f[Observation::AFFORDANCES + 2 * i + 1] = y;
        }
        Observation(f)
    }

    fn move_toward(&mut self, tx: f64, ty: f64) {
        let dx = tx - self.ee.x;
        let dy = ty - self.ee.y;
        let d = dx.hypot(dy);
        let v = self.cfg.v_max;
        if d <= v {
            self.ee.x = tx;
            self.ee.y = ty;
        } else {
            self.ee.x += dx / d * v;
            self.ee.y += dy / d * v;
        }
        self.ee.x = self.ee.x.clamp(0.0, 1.0);
        self.ee.y = self.ee.y.clamp(0.0, 1.0);
    }

    fn carry_object(&mut self) {
        if let Some(i) = self.attached {
            let [ax, ay] = self.affordance_position(i);
            self.object.x += self.ee.x - ax;
            self.object.y += self.ee.y - ay;
        }
    }

    fn nearest_affordance_within(&self, radius: f64) -> Option<usize> {
        (0..NUM_AFFORDANCES)
            .map(|i| {
                let [x, y] = self.affordance_position(i);
                (i, self.ee.planar_dist(x, y))
            })
            .filter(|&(_, d)| d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Advance one simulator step toward the absolute target `target`.
    pub fn step(&mut self, target: ProprioPoint) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a terminal state".into()));
        }
        let mut events = Vec::new();
        let was_open = self.ee.is_open();
        let open = target.is_open();

        if let Some(i) = self.attached {
            if open {
                self.attached = None;
            } else if self.rng.random::<f64>() < self.hidden.affordances[i].slip_prob {
                // The object stays where it was when the grasp was lost.
                events.push(Event::Slip);
                self.attached = None;
            }
        }

        self.move_toward(target.x, target.y);
        self.ee.gripper = if open { 1.0 } else { 0.0 };
        self.carry_object();

        if was_open && !open {
            if let Some(i) = self.nearest_affordance_within(self.cfg.grasp_radius) {
                if self.hidden.affordances[i].blocked {
                    events.push(Event::GraspFailBlocked);
                } else {
                    self.attached = Some(i);
                    self.carry_object();
                    events.push(Event::GraspAttach);
                }
            }
        }

        self.steps += 1;
        let success = self.attached.is_some() && self.in_goal();
        if success {
            events.push(Event::Success);
            self.done = true;
        }
        Ok(StepOutcome {
            obs: self.observe(),
            reward: if success { 0.0 } else { -1.0 },
            done: self.done,
            events,
        })
    }

    /// Open the gripper and drive back to the home pose. Returns the number
    /// of simulator ticks used; these do not count toward `steps`.
    pub fn run_recovery(&mut self) -> usize {
        self.attached = None;
        self.ee.gripper = 1.0;
        let [hx, hy] = [self.cfg.home.x, self.cfg.home.y];
        let mut used = 0;
        while self.ee.planar_dist(hx, hy) > 1e-12 {
            if self.ee.planar_dist(hx, hy) <= self.cfg.v_max + 1e-12 {
                self.ee.x = hx;
                self.ee.y = hy;
            } else {
                self.move_toward(hx, hy);
            }
            used += 1;
        }
        self.ee.gripper = self.cfg.home.gripper;
        self.recoveries += 1;
        used
    }
}

fn rotate(x: f64, y: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * x - s * y, s * x + c * y)
}

fn ticks(distance: f64, v: f64) -> usize {
    (distance / v - 1e-9).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(ee: ProprioPoint, object: [f64; 2], hidden: HiddenParam) -> WorldState {
        let object = ObjectPose {
            x: object[0],
            y: object[1],
            theta: 0.0,
        };
        WorldState::from_parts(ScenarioConfig::default(), ee, object, hidden, SeedStream::new(0, 0))
    }

    #[test]
    fn motion_is_clamped_to_v_max() {
        let mut s = state_at(ProprioPoint::new(0.5, 0.5, 1.0), [0.2, 0.2], HiddenParam::nominal());
        let out = s.step(ProprioPoint::new(0.5, 0.0, 1.0)).unwrap();
        assert!((s.ee.x - 0.5).abs() < 1e-12 && (s.ee.y - 0.45).abs() < 1e-12);
        assert_eq!(out.reward, -1.0);
        assert!(!out.done);
        // A target within reach is hit exactly.
        s.step(ProprioPoint::new(0.47, 0.44, 1.0)).unwrap();
        assert_eq!((s.ee.x, s.ee.y), (0.47, 0.44));
    }

    #[test]
    fn blocked_affordance_never_attaches() {
        let mut h = HiddenParam::nominal();
        h.affordances[0].blocked = true;
        let mut s = state_at(ProprioPoint::new(0.56, 0.4, 1.0), [0.5, 0.4], h);
        let out = s.step(ProprioPoint::new(0.56, 0.4, 0.0)).unwrap();
        assert!(out.events.contains(&Event::GraspFailBlocked));
        assert_eq!(s.attached, None);
        assert_eq!(out.obs.0[Observation::ATTACHED], 0.0);

        // The opposite side is fine.
        let mut s = state_at(ProprioPoint::new(0.44, 0.4, 1.0), [0.5, 0.4], h);
        let out = s.step(ProprioPoint::new(0.44, 0.4, 0.0)).unwrap();
        assert_eq!(out.events, vec![Event::GraspAttach]);
        assert_eq!(s.attached, Some(1));
    }

    #[test]
    fn certain_slip_drops_object_in_place() {
        let mut h = HiddenParam::nominal();
        h.affordances[2].slip_prob = 1.0;
        let mut s = state_at(ProprioPoint::new(0.5, 0.46, 1.0), [0.5, 0.4], h);
        s.step(ProprioPoint::new(0.5, 0.46, 0.0)).unwrap();
        assert_eq!(s.attached, Some(2));
        let out = s.step(ProprioPoint::new(0.5, 0.9, 0.0)).unwrap();
        assert!(out.events.contains(&Event::Slip));
        assert_eq!(s.attached, None);
        assert_eq!((s.object.x, s.object.y), (0.5, 0.4));
    }

    #[test]
    fn carrying_into_goal_succeeds() {
        let mut s = state_at(ProprioPoint::new(0.5, 0.76, 1.0), [0.5, 0.7], HiddenParam::nominal());
        s.step(ProprioPoint::new(0.5, 0.76, 0.0)).unwrap();
        let mut last = None;
        for _ in 0..10 {
            let out = s.step(ProprioPoint::new(0.5, 0.9, 0.0)).unwrap();
            if out.done {
                last = Some(out);
                break;
            }
        }
        let out = last.expect("reaches the goal");
        assert_eq!(out.reward, 0.0);
        assert!(out.events.contains(&Event::Success));
        assert!(s.step(ProprioPoint::new(0.5, 0.9, 0.0)).is_err());
    }

    #[test]
    fn recovery_ticks() {
        let mut s = state_at(ProprioPoint::new(0.5, 0.45, 0.0), [0.5, 0.4], HiddenParam::nominal());
        s.attached = Some(2);
        assert_eq!(s.run_recovery(), 10);
        assert_eq!(s.attached, None);
        assert_eq!(s.ee, s.cfg.home);
        assert_eq!((s.steps, s.recoveries), (0, 1));
        assert_eq!(s.run_recovery(), 0);
        assert_eq!(s.recoveries, 2);
    }

    #[test]
    fn observation_layout() {
        let s = state_at(ProprioPoint::new(0.5, 0.95, 1.0), [0.3, 0.4], HiddenParam::nominal());
        let o = s.observe();
        assert_eq!(o.affordance(0), (0.36, 0.4));
        assert_eq!(o.0[Observation::ATTACHED], 0.0);
        assert_eq!(o.proprio(), ProprioPoint::new(0.5, 0.95, 1.0));
    }

    #[test]
    fn observation_ignores_hidden() {
        let a = state_at(ProprioPoint::new(0.4, 0.6, 1.0), [0.5, 0.3], HiddenParam::nominal());
        let mut h = HiddenParam::nominal();
        h.affordances[1].blocked = true;
        h.affordances[3].slip_prob = 0.7;
        let b = state_at(ProprioPoint::new(0.4, 0.6, 1.0), [0.5, 0.3], h);
        assert_eq!(a.observe(), b.observe());
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = ScenarioConfig::new(Variant::Blocked);
        let (a, oa) = reset(&cfg, SeedStream::new(4, 2)).unwrap();
        let (b, ob) = reset(&cfg, SeedStream::new(4, 2)).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.ee, ProprioPoint::new(0.5, 0.95, 1.0));
        assert_eq!(oa.0[Observation::ATTACHED], 0.0);
        let Region { min, max } = cfg.placement_region;
        assert!((min[0]..=max[0]).contains(&a.object.x) && (min[1]..=max[1]).contains(&a.object.y));
    }

    #[test]
    fn samplers_follow_variant_rules() {
        for seed in 0..100 {
            let s = SeedStream::new(seed, 0);
            let h = sample_hidden(Variant::Train, s);
            assert!(h.affordances.iter().all(|a| !a.blocked && a.slip_prob <= 0.02));

            let h = sample_hidden(Variant::Blocked, s);
            assert_eq!(h.affordances.iter().filter(|a| a.blocked).count(), 2);
            assert!(h.affordances.iter().all(|a| a.slip_prob <= 0.02));

            let h = sample_hidden(Variant::AdversarialSlip, s);
            assert!(h.affordances.iter().all(|a| !a.blocked));
            assert_eq!(h.affordances.iter().filter(|a| a.slip_prob <= 0.02).count(), 1);
            assert_eq!(
                h.affordances
                    .iter()
                    .filter(|a| (0.2..=0.4).contains(&a.slip_prob))
                    .count(),
                3
            );

            let h = sample_hidden(Variant::HeldOut, s);
            assert!(h.offset_scale.iter().all(|f| (0.7..=1.3).contains(f)));
            assert!(h.affordances.iter().all(|a| !a.blocked));
        }
        let h = sample_hidden(Variant::AdversarialSlip, SeedStream::new(7, 0));
        assert_eq!(h.affordances.iter().filter(|a| a.slip_prob <= 0.02).count(), 1);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ScenarioConfig::new(Variant::HeldOut);
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.placement_region.max = [1.2, 0.5];
        assert!(bad.validate().is_err());
        assert!("nonsense".parse::<Variant>().is_err());
        assert_eq!("adversarial_slip".parse::<Variant>().unwrap(), Variant::AdversarialSlip);
    }
}
