//! Retrieval-based stochastic chunk policy and skewed chunk selection.
//!
//! The policy indexes every non-terminal demonstration state. To act, it
//! finds the `n_neighbors` closest indexed states under a standardised,
//! weighted Euclidean metric, picks one uniformly and replays that
//! demonstration's next `chunk_len` targets with Gaussian noise. Targets that
//! the demonstrator issued before grasping are expressed relative to the
//! object and moved into the query's object frame, so a neighbour that
//! approached affordance `j` yields a chunk that approaches the query
//! object's affordance `j`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::demogen::Dataset;
use crate::error::{Error, Result};
use crate::types::{ActionChunk, Observation, ProprioPoint, CHUNK_LEN, OBS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    pub n_neighbors: usize,
    pub action_noise: f64,
    pub chunk_len: usize,
    pub execute_len: usize,
    pub feature_weights: [f64; OBS_DIM],
    /// Move pre-grasp targets into the query's object frame.
    pub object_frame: bool,
    /// Stretch the approach segment so the grasp closes after the query's
    /// end effector has covered its own distance to the grasp target.
    pub retime: bool,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            n_neighbors: 16,
            action_noise: 0.01,
            chunk_len: CHUNK_LEN,
            execute_len: 16,
            feature_weights: [1.0; OBS_DIM],
            object_frame: true,
            retime: true,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors == 0 {
            return Err(Error::Config("n_neighbors must be at least 1".into()));
        }
        if self.chunk_len == 0 || self.chunk_len > CHUNK_LEN {
            return Err(Error::Config(format!("chunk_len must be in 1..={CHUNK_LEN}")));
        }
        if self.execute_len == 0 || self.execute_len > self.chunk_len {
            return Err(Error::Config("execute_len must be in 1..=chunk_len".into()));
        }
        if !(self.action_noise >= 0.0) || self.feature_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("noise and feature weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DemoTrack {
    actions: Vec<ProprioPoint>,
    attached: Vec<bool>,
    pose: Vec<(f64, f64, f64)>,
    ee: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalPolicy {
    pub params: PolicyParams,
    mean: [f64; OBS_DIM],
    scale: [f64; OBS_DIM],
    keys: Vec<[f64; OBS_DIM]>,
    entries: Vec<(usize, usize)>,
    demos: Vec<DemoTrack>,
}

/// Index a dataset for retrieval.
pub fn build_policy(dataset: &Dataset, params: PolicyParams) -> Result<RetrievalPolicy> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot build a policy from an empty dataset".into()));
    }
    let mut mean = [0.0; OBS_DIM];
    let mut scale = [0.0; OBS_DIM];
    for i in 0..OBS_DIM {
        mean[i] = dataset.meta.feature_mean[i];
        scale[i] = params.feature_weights[i].sqrt() / dataset.meta.feature_std[i];
    }
    let mut keys = Vec::new();
    let mut entries = Vec::new();
    let mut demos = Vec::with_capacity(dataset.len());
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        let track = DemoTrack {
            actions: traj.transitions.iter().map(|t| t.action).collect(),
            attached: traj.transitions.iter().map(|t| t.obs.attached()).collect(),
            pose: traj.transitions.iter().map(|t| t.obs.object_pose()).collect(),
            ee: traj.transitions.iter().map(|t| (t.proprio.x, t.proprio.y)).collect(),
        };
        for (t, tr) in traj.transitions.iter().enumerate().take(traj.len().saturating_sub(1)) {
            keys.push(key(&tr.obs, &mean, &scale));
            entries.push((ti, t));
        }
        demos.push(track);
    }
    Ok(RetrievalPolicy {
        params,
        mean,
        scale,
        keys,
        entries,
        demos,
    })
}

fn key(obs: &Observation, mean: &[f64; OBS_DIM], scale: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
    let mut k = [0.0; OBS_DIM];
    for i in 0..OBS_DIM {
        k[i] = (obs.0[i] - mean[i]) * scale[i];
    }
    k
}

impl RetrievalPolicy {
    /// Number of indexed `(trajectory, step)` pairs.
    pub fn index_len(&self) -> usize {
        self.entries.len()
    }

    /// The `n` closest indexed states as `(squared distance, trajectory, step)`,
    /// nearest first, ties broken by index order.
    pub fn neighbors(&self, obs: &Observation, n: usize) -> Vec<(f64, usize, usize)> {
        let q = key(obs, &self.mean, &self.scale);
        let mut scored: Vec<(f64, usize)> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let d = k.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (d, i)
            })
            .collect();
        let n = n.min(scored.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if n < scored.len() {
            scored.select_nth_unstable_by(n, cmp);
            scored.truncate(n);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .map(|(d, i)| {
                let (traj, t) = self.entries[i];
                (d, traj, t)
            })
            .collect()
    }

    /// Exact demonstration targets starting at `(traj, t)`, padded with the
    /// final target, without noise or frame changes.
    pub fn demo_slice(&self, traj: usize, t: usize) -> Vec<ProprioPoint> {
        let track = &self.demos[traj];
        let last = track.actions.len() - 1;
        (0..self.params.chunk_len)
            .map(|h| track.actions[(t + h).min(last)])
            .collect()
    }

    /// Offset of the first closing target issued before attachment, if any.
    fn close_offset(&self, traj: usize, t: usize) -> Option<usize> {
        let track = &self.demos[traj];
        (t..track.actions.len())
            .take(self.params.chunk_len)
            .find(|&i| !track.attached[i] && !track.actions[i].is_open())
            .map(|i| i - t)
    }

    fn chunk_from(
        &self,
        obs: &Observation,
        traj: usize,
        t: usize,
        noise: Option<&Normal<f64>>,
        rng: &mut impl Rng,
    ) -> ActionChunk {
        let track = &self.demos[traj];
        let last = track.actions.len() - 1;
        let (nx, ny, nth) = track.pose[t];
        let (qx, qy, qth) = obs.object_pose();
        let same_frame = nx == qx && ny == qy && nth == qth;
        let (s, c) = (qth - nth).sin_cos();
        let anchor = |src: usize| {
            let mut p = track.actions[src];
            if self.params.object_frame && !same_frame && !track.attached[src] {
                let (dx, dy) = (p.x - nx, p.y - ny);
                p.x = qx + c * dx - s * dy;
                p.y = qy + s * dx + c * dy;
            }
            p
        };

        // Approach steps before the close, in the neighbour (`from`) and for the query (`to`).
        let mut warp = None;
        if self.params.retime {
            if let Some(from) = self.close_offset(traj, t).filter(|&k| k > 0) {
                let goal = anchor(t + from);
                let (ex, ey) = track.ee[t];
                let src = track.actions[t + from];
                let d_from = (src.x - ex).hypot(src.y - ey);
                let q = obs.proprio();
                let d_to = (goal.x - q.x).hypot(goal.y - q.y);
                if d_from > 1e-9 {
                    let to = ((from as f64) * d_to / d_from).ceil() as usize;
                    warp = Some((from, to.clamp(1, from + self.params.chunk_len)));
                }
            }
        }
        let source = |h: usize| match warp {
            Some((from, to)) if h < to => t + h * from / to,
            Some((from, to)) => t + from + (h - to),
            None => t + h,
        };

        let targets = (0..self.params.chunk_len)
            .map(|h| {
                let mut p = anchor(source(h).min(last));
                if let Some(n) = noise {
                    p.x += n.sample(rng);
                    p.y += n.sample(rng);
                    p.gripper += n.sample(rng);
                }
                p.clamped()
            })
            .collect();
        ActionChunk { targets }
    }

    /// Sample one chunk for `obs`.
    pub fn sample_chunk(&self, obs: &Observation, rng: &mut impl Rng) -> ActionChunk {
        self.sample_chunks(obs, 1, rng).pop().expect("one chunk")
    }

    /// Sample `n` independent chunks for the same observation.
    pub fn sample_chunks(&self, obs: &Observation, n: usize, rng: &mut impl Rng) -> Vec<ActionChunk> {
        let neighbors = self.neighbors(obs, self.params.n_neighbors);
        let noise =
            (self.params.action_noise > 0.0).then(|| Normal::new(0.0, self.params.action_noise).expect("valid noise"));
        (0..n)
            .map(|_| {
                let (_, traj, t) = neighbors[rng.random_range(0..neighbors.len())];
                self.chunk_from(obs, traj, t, noise.as_ref(), rng)
            })
            .collect()
    }
}

/// Proprioceptive mistake points collected during one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AvoidanceSet {
    pub points: Vec<ProprioPoint>,
}

impl AvoidanceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn clear(&mut self) {
        self.points.clear();
    }
}

/// Append a mistake point. Duplicates are kept.
pub fn record_avoid(avoid: &mut AvoidanceSet, p: ProprioPoint) {
    avoid.points.push(p);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkewConfig {
    pub n_skew: usize,
}

impl Default for SkewConfig {
    fn default() -> Self {
        Self { n_skew: 10 }
    }
}

/// Minimum squared distance between any chunk target and any avoidance point;
/// `+inf` for an empty set.
pub fn skew_score(chunk: &ActionChunk, avoid: &AvoidanceSet) -> f64 {
    chunk
        .targets
        .iter()
        .flat_map(|a| avoid.points.iter().map(move |s| a.dist2(s)))
        .fold(f64::INFINITY, f64::min)
}

/// Pick the chunk that stays farthest from the avoidance set; the lowest
/// index wins ties.
pub fn skewed_select<'a>(chunks: &'a [ActionChunk], avoid: &AvoidanceSet) -> Result<(&'a ActionChunk, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in chunks.iter().enumerate() {
        let s = skew_score(c, avoid);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::Validation("no chunks to select from".into()))?;
    Ok((&chunks[i], i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demogen::generate_demos;
    use crate::graspworld::{reset, Region, ScenarioConfig, Variant};
    use crate::rng::SeedStream;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn demos() -> &'static Dataset {
        static D: OnceLock<Dataset> = OnceLock::new();
        D.get_or_init(|| generate_demos(&ScenarioConfig::new(Variant::Train), 60, SeedStream::new(2, 0)).unwrap())
    }

    fn targeted(obs: &Observation, chunk: &ActionChunk) -> usize {
        let p = chunk.targets[0];
        (0..4)
            .min_by(|&a, &b| {
                let (ax, ay) = obs.affordance(a);
                let (bx, by) = obs.affordance(b);
                p.planar_dist(ax, ay).total_cmp(&p.planar_dist(bx, by))
            })
            .unwrap()
    }

    fn point() -> impl Strategy<Value = ProprioPoint> {
        (
            0.0..=1.0f64,
            0.0..=1.0f64,
            prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64],
        )
            .prop_map(|(x, y, g)| ProprioPoint::new(x, y, g))
    }

    fn chunk_strategy() -> impl Strategy<Value = ActionChunk> {
        prop::collection::vec(point(), 1..6).prop_map(|targets| ActionChunk { targets })
    }

    fn oracle(chunks: &[ActionChunk], avoid: &[ProprioPoint]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in chunks.iter().enumerate() {
            let mut score = f64::INFINITY;
            for a in &c.targets {
                for s in avoid {
                    let d = (a.x - s.x).powi(2) + (a.y - s.y).powi(2) + (a.gripper - s.gripper).powi(2);
                    if d < score {
                        score = d;
                    }
                }
            }
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn selection_matches_exhaustive_oracle(
            chunks in prop::collection::vec(chunk_strategy(), 1..=8),
            avoid in prop::collection::vec(point(), 0..=8),
        ) {
            let set = AvoidanceSet { points: avoid.clone() };
            prop_assert_eq!(skewed_select(&chunks, &set).unwrap().1, oracle(&chunks, &avoid));
        }

        #[test]
        fn extra_avoid_points_never_raise_scores(
            chunks in prop::collection::vec(chunk_strategy(), 1..=8),
            avoid in prop::collection::vec(point(), 0..=8),
            extra in point(),
        ) {
            let mut set = AvoidanceSet { points: avoid };
            let before: Vec<f64> = chunks.iter().map(|c| skew_score(c, &set)).collect();
            record_avoid(&mut set, extra);
            for (c, b) in chunks.iter().zip(before) {
                prop_assert!(skew_score(c, &set) <= b);
            }
        }
    }

    #[test]
    fn index_covers_non_terminal_steps() {
        let d = demos();
        let p = build_policy(d, PolicyParams::default()).unwrap();
        let want: usize = d.trajectories.iter().map(|t| t.len() - 1).sum();
        assert_eq!(p.index_len(), want);
        assert_eq!(p, build_policy(d, PolicyParams::default()).unwrap());
    }

    #[test]
    fn training_state_is_its_own_neighbour() {
        let d = demos();
        let p = build_policy(d, PolicyParams::default()).unwrap();
        for (ti, t) in [(0, 0), (3, 5), (17, 9)] {
            let obs = d.trajectories[ti].transitions[t].obs;
            let (dist, traj, step) = p.neighbors(&obs, 1)[0];
            assert_eq!((dist, traj, step), (0.0, ti, t));
        }
    }

    #[test]
    fn degenerate_sampler_replays_the_demo() {
        let d = demos();
        let mut rng = SeedStream::new(0, 0).rng();
        for params in [
            PolicyParams {
                n_neighbors: 1,
                action_noise: 0.0,
                ..Default::default()
            },
            PolicyParams {
                n_neighbors: 1,
                action_noise: 0.0,
                object_frame: false,
                retime: false,
                ..Default::default()
            },
        ] {
            let p = build_policy(d, params).unwrap();
            for (ti, t) in [(0, 0), (5, 3), (9, 12)] {
                let obs = d.trajectories[ti].transitions[t].obs;
                let chunk = p.sample_chunk(&obs, &mut rng);
                assert_eq!(chunk.targets, p.demo_slice(ti, t));
                let last = d.trajectories[ti].len() - 1;
                for (h, target) in chunk.targets.iter().enumerate() {
                    assert_eq!(*target, d.trajectories[ti].transitions[(t + h).min(last)].action);
                }
            }
        }
    }

    #[test]
    fn chunks_are_full_length_and_in_bounds() {
        let d = demos();
        let p = build_policy(d, PolicyParams::default()).unwrap();
        let mut rng = SeedStream::new(1, 0).rng();
        for seed in 0..20 {
            let (_, obs) = reset(&ScenarioConfig::new(Variant::Blocked), SeedStream::new(seed, 0)).unwrap();
            for c in p.sample_chunks(&obs, 3, &mut rng) {
                assert_eq!(c.len(), CHUNK_LEN);
                assert!(c.targets.iter().all(|t| t.validate().is_ok()));
            }
        }
    }

    #[test]
    fn home_samples_cover_several_affordances() {
        let d = demos();
        let p = build_policy(d, PolicyParams::default()).unwrap();
        let (_, obs) = reset(&ScenarioConfig::new(Variant::Train), SeedStream::new(77, 0)).unwrap();
        let mut rng = SeedStream::new(3, 0).rng();
        let mut seen = [false; 4];
        for _ in 0..100 {
            seen[targeted(&obs, &p.sample_chunk(&obs, &mut rng))] = true;
        }
        assert!(seen.iter().filter(|&&s| s).count() >= 2, "{seen:?}");
    }

    #[test]
    fn sampling_is_multimodal_between_strategies() {
        // With a single object pose every home state is identical, so the
        // neighbour set mixes the demonstrators' strategies evenly.
        let mut cfg = ScenarioConfig::new(Variant::Train);
        cfg.placement_region = Region {
            min: [0.5, 0.3],
            max: [0.5, 0.3],
        };
        let d = generate_demos(&cfg, 40, SeedStream::new(4, 0)).unwrap();
        let p = build_policy(&d, PolicyParams::default()).unwrap();
        let obs = d.trajectories[0].transitions[0].obs;
        let mut rng = SeedStream::new(5, 0).rng();
        let mut counts = [0usize; 4];
        for _ in 0..1000 {
            counts[targeted(&obs, &p.sample_chunk(&obs, &mut rng))] += 1;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        assert!(counts[1] >= 200, "{counts:?}");
    }

    #[test]
    fn object_frame_follows_the_query() {
        let d = demos();
        let p = build_policy(
            d,
            PolicyParams {
                n_neighbors: 1,
                action_noise: 0.0,
                retime: false,
                ..Default::default()
            },
        )
        .unwrap();
        let src = d.trajectories[0].transitions[0].obs;
        let mut moved = src;
        moved.0[Observation::OBJ_X] += 0.05;
        for i in 0..4 {
            moved.0[Observation::AFFORDANCES + 2 * i] += 0.05;
        }
        let (_, traj, t) = p.neighbors(&moved, 1)[0];
        let chunk = p.sample_chunk(&moved, &mut SeedStream::new(0, 0).rng());
        let raw = p.demo_slice(traj, t)[0];
        let (nx, ny, nth) = d.trajectories[traj].transitions[t].obs.object_pose();
        let (qx, qy, qth) = moved.object_pose();
        let (sn, cs) = (qth - nth).sin_cos();
        let (dx, dy) = (raw.x - nx, raw.y - ny);
        let want = ProprioPoint::new(qx + cs * dx - sn * dy, qy + sn * dx + cs * dy, raw.gripper).clamped();
        assert!(chunk.targets[0].dist2(&want) < 1e-18);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let d = demos();
        for params in [
            PolicyParams {
                n_neighbors: 0,
                ..Default::default()
            },
            PolicyParams {
                execute_len: 30,
                ..Default::default()
            },
            PolicyParams {
                chunk_len: 25,
                ..Default::default()
            },
            PolicyParams {
                action_noise: -0.1,
                ..Default::default()
            },
        ] {
            assert!(build_policy(d, params).is_err());
        }
    }

    fn chunk(points: &[[f64; 3]]) -> ActionChunk {
        ActionChunk {
            targets: points.iter().map(|&p| p.into()).collect(),
        }
    }

    #[test]
    fn farther_chunk_wins() {
        let mut avoid = AvoidanceSet::new();
        record_avoid(&mut avoid, ProprioPoint::new(0.0, 0.0, 0.0));
        let chunks = [chunk(&[[0.0, 0.0, 0.0]]), chunk(&[[1.0, 1.0, 0.0]])];
        assert_eq!(skew_score(&chunks[0], &avoid), 0.0);
        assert_eq!(skew_score(&chunks[1], &avoid), 2.0);
        assert_eq!(skewed_select(&chunks, &avoid).unwrap().1, 1);
    }

    #[test]
    fn empty_set_picks_first() {
        let chunks = vec![chunk(&[[0.2, 0.3, 1.0]]); 3];
        let (_, i) = skewed_select(&chunks, &AvoidanceSet::new()).unwrap();
        assert_eq!(i, 0);
        assert!(skewed_select(&[], &AvoidanceSet::new()).is_err());
    }

    #[test]
    fn multiset_semantics() {
        let mut avoid = AvoidanceSet::new();
        let p = ProprioPoint::new(0.4, 0.4, 1.0);
        record_avoid(&mut avoid, p);
        assert_eq!(avoid.len(), 1);
        record_avoid(&mut avoid, p);
        assert_eq!(avoid.len(), 2);
        let c = chunk(&[[0.9, 0.9, 0.0], [0.4, 0.4, 1.0]]);
        assert_eq!(skew_score(&c, &avoid), 0.0);
    }
}
