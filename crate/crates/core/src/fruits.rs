//! Fruits World: a 5x5 grid holding five distinct fruits. A task asks the
//! agent to basket a subset of them, either in any order (combination) or in
//! a fixed order (sequence), then to declare completion with the done-action.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{seeded_rng, ActionId, Environment, Observation, SeededRng, Transition};

pub const GRID: usize = 5;
pub const CELLS: usize = GRID * GRID;
pub const FRUITS: usize = 5;
pub const MAX_TARGETS: usize = 4;
/// Index of the done-action; cells use `row * 5 + col`.
pub const DONE_ACTION: usize = CELLS;
pub const ACTION_COUNT: usize = CELLS + 1;
pub const WRONG_PICK_REWARD: f64 = -0.1;
pub const SUCCESS_REWARD: f64 = 1.0;
pub const DEFAULT_MAX_STEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FruitsMode {
    #[serde(rename = "comb")]
    Combination,
    #[serde(rename = "seq")]
    Sequence,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawFruitsTask")]
pub struct FruitsTask {
    pub mode: FruitsMode,
    pub targets: Vec<u8>,
}

#[derive(Deserialize)]
struct RawFruitsTask {
    mode: FruitsMode,
    targets: Vec<u8>,
}

impl TryFrom<RawFruitsTask> for FruitsTask {
    type Error = Error;

    fn try_from(raw: RawFruitsTask) -> Result<Self> {
        FruitsTask::new(raw.mode, raw.targets)
    }
}

impl FruitsTask {
    pub fn new(mode: FruitsMode, mut targets: Vec<u8>) -> Result<Self> {
        if targets.is_empty() || targets.len() > MAX_TARGETS {
            return Err(Error::InvalidArgument(format!(
                "a fruits task needs 1..={MAX_TARGETS} targets, got {}",
                targets.len()
            )));
        }
        if targets.iter().any(|&f| f as usize >= FRUITS) {
            return Err(Error::InvalidArgument(format!(
                "fruit ids must be < {FRUITS}"
            )));
        }
        let mut sorted = targets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != targets.len() {
            return Err(Error::InvalidArgument(
                "target fruits must be distinct".into(),
            ));
        }
        if mode == FruitsMode::Combination {
            targets = sorted;
        }
        Ok(Self { mode, targets })
    }

    pub fn combination(targets: &[u8]) -> Result<Self> {
        Self::new(FruitsMode::Combination, targets.to_vec())
    }

    pub fn sequence(targets: &[u8]) -> Result<Self> {
        Self::new(FruitsMode::Sequence, targets.to_vec())
    }

    pub fn obs_len(&self) -> usize {
        match self.mode {
            FruitsMode::Combination => CELLS * FRUITS + CELLS,
            FruitsMode::Sequence => CELLS * FRUITS + MAX_TARGETS * FRUITS,
        }
    }

    /// Short label, e.g. `comb-0-3` or `seq-4-1-2`.
    pub fn name(&self) -> String {
        let prefix = match self.mode {
            FruitsMode::Combination => "comb",
            FruitsMode::Sequence => "seq",
        };
        let ids: Vec<String> = self.targets.iter().map(|t| t.to_string()).collect();
        format!("{prefix}-{}", ids.join("-"))
    }

    /// Inverse of [`FruitsTask::name`].
    pub fn parse(name: &str) -> Result<Self> {
        let mut parts = name.split('-');
        let mode = match parts.next() {
            Some("comb") => FruitsMode::Combination,
            Some("seq") => FruitsMode::Sequence,
            _ => return Err(Error::UnknownToken(name.to_string())),
        };
        let targets = parts
            .map(|p| {
                p.parse::<u8>()
                    .map_err(|_| Error::UnknownToken(name.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mode, targets)
    }

    fn basket_complete(&self, basket: &[u8]) -> bool {
        match self.mode {
            FruitsMode::Sequence => basket == self.targets.as_slice(),
            FruitsMode::Combination => {
                let mut b = basket.to_vec();
                b.sort_unstable();
                b == self.targets
            }
        }
    }

    /// Fruits that may be basketed next.
    fn acceptable_next(&self, basket: &[u8]) -> Vec<u8> {
        match self.mode {
            FruitsMode::Sequence => self
                .targets
                .get(basket.len())
                .copied()
                .into_iter()
                .collect(),
            FruitsMode::Combination => self
                .targets
                .iter()
                .copied()
                .filter(|t| !basket.contains(t))
                .collect(),
        }
    }
}

/// All 30 non-empty subsets of at most four of the five fruits, ordered by
/// size and then lexicographically.
pub fn enumerate_combination_tasks() -> Vec<FruitsTask> {
    let mut out = Vec::new();
    for size in 1..=MAX_TARGETS {
        let mut subsets: Vec<Vec<u8>> = (0u32..1 << FRUITS)
            .filter(|m| m.count_ones() as usize == size)
            .map(|m| (0..FRUITS as u8).filter(|&f| m & (1 << f) != 0).collect())
            .collect();
        subsets.sort();
        out.extend(subsets.into_iter().map(|t| FruitsTask {
            mode: FruitsMode::Combination,
            targets: t,
        }));
    }
    out
}

fn sequences_of_len(len: usize) -> Vec<Vec<u8>> {
    fn extend(prefix: &mut Vec<u8>, len: usize, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for f in 0..FRUITS as u8 {
            if !prefix.contains(&f) {
                prefix.push(f);
                extend(prefix, len, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), len, &mut out);
    out
}

/// Number of distinct sequence tasks (5 + 20 + 60 + 120).
pub fn sequence_universe_size() -> usize {
    (1..=MAX_TARGETS).map(|l| sequences_of_len(l).len()).sum()
}

/// Per-length quotas for `n` sampled sequences: as even as the per-length
/// universe sizes allow, extra tasks going to longer sequences first.
pub fn sequence_length_quotas(n: usize) -> Result<[usize; MAX_TARGETS]> {
    let caps: Vec<usize> = (1..=MAX_TARGETS)
        .map(|l| sequences_of_len(l).len())
        .collect();
    let total: usize = caps.iter().sum();
    if n > total {
        return Err(Error::TooManyRequested {
            requested: n,
            available: total,
        });
    }
    let mut quota = [0usize; MAX_TARGETS];
    let mut left = n;
    while left > 0 {
        // Raise the smallest non-full quota; ties go to the longest length.
        let pick = (0..MAX_TARGETS)
            .rev()
            .filter(|&i| quota[i] < caps[i])
            .min_by_key(|&i| quota[i])
            .expect("n <= total guarantees room");
        quota[pick] += 1;
        left -= 1;
    }
    Ok(quota)
}

/// Samples `n` distinct sequence tasks, balanced across lengths 1..=4.
pub fn sample_sequence_tasks<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<FruitsTask>> {
    let quota = sequence_length_quotas(n)?;
    let mut out = Vec::with_capacity(n);
    for (i, &q) in quota.iter().enumerate() {
        let pool = sequences_of_len(i + 1);
        let mut chosen: Vec<Vec<u8>> = pool.choose_multiple(rng, q).cloned().collect();
        chosen.sort();
        out.extend(chosen.into_iter().map(|t| FruitsTask {
            mode: FruitsMode::Sequence,
            targets: t,
        }));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FruitsState {
    pub grid: [Option<u8>; CELLS],
    /// Basketed fruits in pick order.
    pub basket: Vec<u8>,
    /// Cells whose fruit went into the basket.
    pub picked_positions: Vec<usize>,
    pub steps: usize,
}

impl FruitsState {
    /// Five fruits scattered over distinct random cells.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut grid = [None; CELLS];
        for (fruit, cell) in sample(rng, CELLS, FRUITS).into_iter().enumerate() {
            grid[cell] = Some(fruit as u8);
        }
        Self {
            grid,
            basket: Vec::new(),
            picked_positions: Vec::new(),
            steps: 0,
        }
    }

    pub fn cell_of(&self, fruit: u8) -> Option<usize> {
        self.grid.iter().position(|&c| c == Some(fruit))
    }
}

/// Flattened observation: a 5x5x5 one-hot fruit block (cell-major, fruit
/// channel last), followed by the picked-position channel (combination) or
/// four one-hot basket slots in pick order (sequence).
pub fn encode_observation(state: &FruitsState, task: &FruitsTask) -> Observation {
    let mut data = vec![0f32; task.obs_len()];
    for (cell, fruit) in state.grid.iter().enumerate() {
        if let Some(f) = fruit {
            data[cell * FRUITS + *f as usize] = 1.0;
        }
    }
    let tail = CELLS * FRUITS;
    match task.mode {
        FruitsMode::Combination => {
            for &cell in &state.picked_positions {
                data[tail + cell] = 1.0;
            }
        }
        FruitsMode::Sequence => {
            for (slot, &f) in state.basket.iter().take(MAX_TARGETS).enumerate() {
                data[tail + slot * FRUITS + f as usize] = 1.0;
            }
        }
    }
    let len = data.len();
    Observation::new(data, vec![len]).expect("length matches by construction")
}

/// Pure transition function. The step budget is not applied here.
pub fn fruits_step(
    state: &FruitsState,
    task: &FruitsTask,
    action: ActionId,
) -> Result<(FruitsState, f64, bool)> {
    let a = action.index();
    if a >= ACTION_COUNT {
        return Err(Error::ActionOutOfRange {
            action: a,
            count: ACTION_COUNT,
        });
    }
    let mut next = state.clone();
    next.steps += 1;
    if a == DONE_ACTION {
        let reward = if task.basket_complete(&state.basket) {
            SUCCESS_REWARD
        } else {
            0.0
        };
        return Ok((next, reward, true));
    }
    let reward = match state.grid[a] {
        None => 0.0,
        Some(fruit) if task.acceptable_next(&state.basket).contains(&fruit) => {
            next.grid[a] = None;
            next.basket.push(fruit);
            next.picked_positions.push(a);
            0.0
        }
        Some(_) => WRONG_PICK_REWARD,
    };
    Ok((next, reward, false))
}

/// The scripted expert: the done-action once the basket is complete,
/// otherwise the cell of the next required fruit (lowest unpicked id for
/// combinations).
pub fn fruits_optimal_action(state: &FruitsState, task: &FruitsTask) -> Result<ActionId> {
    if task.basket_complete(&state.basket) {
        return Ok(ActionId(DONE_ACTION));
    }
    let next = *task
        .acceptable_next(&state.basket)
        .iter()
        .min()
        .expect("incomplete basket leaves an acceptable fruit");
    state
        .cell_of(next)
        .map(ActionId)
        .ok_or(Error::TargetFruitMissing(next))
}

/// Every action on a shortest path to success: the done-action once the
/// basket is complete, otherwise the cells of all acceptable next fruits.
pub fn fruits_optimal_actions(state: &FruitsState, task: &FruitsTask) -> Vec<ActionId> {
    if task.basket_complete(&state.basket) {
        return vec![ActionId(DONE_ACTION)];
    }
    let mut cells: Vec<usize> = task
        .acceptable_next(&state.basket)
        .into_iter()
        .filter_map(|f| state.cell_of(f))
        .collect();
    cells.sort_unstable();
    cells.into_iter().map(ActionId).collect()
}

/// Recovers the state behind an observation of `task`. Fruits missing from
/// the grid are in the basket; for combinations their order is unknown and
/// reported ascending. The step counter is not observable and reads 0.
pub fn decode_observation(obs: &Observation, task: &FruitsTask) -> Result<FruitsState> {
    if obs.len() != task.obs_len() {
        return Err(crate::error::shape_err(task.obs_len(), obs.len()));
    }
    let data = obs.data();
    let mut grid = [None; CELLS];
    for (cell, slot) in grid.iter_mut().enumerate() {
        *slot = (0..FRUITS)
            .find(|&f| data[cell * FRUITS + f] > 0.5)
            .map(|f| f as u8);
    }
    let tail = CELLS * FRUITS;
    let (basket, picked_positions) = match task.mode {
        FruitsMode::Combination => {
            let basket = (0..FRUITS as u8)
                .filter(|f| !grid.contains(&Some(*f)))
                .collect();
            let picked = (0..CELLS).filter(|&c| data[tail + c] > 0.5).collect();
            (basket, picked)
        }
        FruitsMode::Sequence => {
            let basket = (0..MAX_TARGETS)
                .map_while(|slot| (0..FRUITS).find(|&f| data[tail + slot * FRUITS + f] > 0.5))
                .map(|f| f as u8)
                .collect();
            (basket, Vec::new())
        }
    };
    Ok(FruitsState {
        grid,
        basket,
        picked_positions,
        steps: 0,
    })
}

#[derive(Clone, Debug)]
pub struct FruitsEnv {
    task: FruitsTask,
    state: FruitsState,
    rng: SeededRng,
    max_steps: usize,
    terminal: bool,
    success: bool,
}

impl FruitsEnv {
    pub fn new(task: FruitsTask, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let state = FruitsState::random(&mut rng);
        Self {
            task,
            state,
            rng,
            max_steps: DEFAULT_MAX_STEPS,
            terminal: false,
            success: false,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps.max(1);
        self
    }

    pub fn task(&self) -> &FruitsTask {
        &self.task
    }

    pub fn state(&self) -> &FruitsState {
        &self.state
    }

    /// Scripted expert action for the current state.
    pub fn optimal_action(&self) -> Result<ActionId> {
        fruits_optimal_action(&self.state, &self.task)
    }
}

impl Environment for FruitsEnv {
    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn obs_shape(&self) -> Vec<usize> {
        vec![self.task.obs_len()]
    }

    fn reset(&mut self) -> Observation {
        self.state = FruitsState::random(&mut self.rng);
        self.terminal = false;
        self.success = false;
        self.observation()
    }

    fn step(&mut self, action: ActionId) -> Result<Transition> {
        if self.terminal {
            return Err(Error::SteppedTerminalEnv);
        }
        let before = self.observation();
        let (next, reward, finished) = fruits_step(&self.state, &self.task, action)?;
        self.state = next;
        self.success = finished && reward >= SUCCESS_REWARD;
        self.terminal = finished || self.state.steps >= self.max_steps;
        Transition::new(before, action, reward, self.observation(), self.terminal)
    }

    fn observation(&self) -> Observation {
        encode_observation(&self.state, &self.task)
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn succeeded(&self) -> bool {
        self.success
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{episode_return, rollout};
    use std::collections::{HashSet, VecDeque};

    fn state_with(placements: &[(u8, usize)]) -> FruitsState {
        let mut grid = [None; CELLS];
        for &(f, c) in placements {
            grid[c] = Some(f);
        }
        FruitsState {
            grid,
            basket: vec![],
            picked_positions: vec![],
            steps: 0,
        }
    }

    #[test]
    fn thirty_combination_tasks() {
        let tasks = enumerate_combination_tasks();
        assert_eq!(tasks.len(), 30);
        assert_eq!(tasks.iter().filter(|t| t.targets.len() == 1).count(), 5);
        assert_eq!(tasks.iter().filter(|t| t.targets.len() == 4).count(), 5);
        let distinct: HashSet<_> = tasks.iter().collect();
        assert_eq!(distinct.len(), 30);
    }

    #[test]
    fn sequence_sampling_is_balanced_and_deterministic() {
        assert_eq!(sequence_universe_size(), 205);
        let a = sample_sequence_tasks(20, &mut seeded_rng(3)).unwrap();
        let b = sample_sequence_tasks(20, &mut seeded_rng(3)).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 20);
        for len in 1..=4 {
            assert_eq!(a.iter().filter(|t| t.targets.len() == len).count(), 5);
        }
        assert!(matches!(
            sample_sequence_tasks(206, &mut seeded_rng(0)),
            Err(Error::TooManyRequested { .. })
        ));
        assert_eq!(
            sample_sequence_tasks(205, &mut seeded_rng(0))
                .unwrap()
                .len(),
            205
        );
    }

    #[test]
    fn quotas_stay_within_one_when_capacity_allows() {
        for n in 0..=20 {
            let q = sequence_length_quotas(n).unwrap();
            assert_eq!(q.iter().sum::<usize>(), n);
            assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn reset_places_five_fruits() {
        let mut env = FruitsEnv::new(FruitsTask::combination(&[0, 1]).unwrap(), 7);
        let obs = env.reset();
        let block = &obs.data()[..CELLS * FRUITS];
        assert_eq!(block.iter().filter(|&&v| v != 0.0).count(), 5);
        let mut env2 = FruitsEnv::new(FruitsTask::combination(&[0, 1]).unwrap(), 7);
        assert_eq!(env2.reset(), obs);
    }

    #[test]
    fn observation_lengths_and_channels() {
        let comb = FruitsTask::combination(&[2]).unwrap();
        let seq = FruitsTask::sequence(&[2]).unwrap();
        let mut s = state_with(&[(0, 0), (1, 1), (2, 13), (3, 20), (4, 24)]);
        assert_eq!(encode_observation(&s, &comb).len(), 150);
        let o = encode_observation(&s, &seq);
        assert_eq!(o.len(), 145);
        assert!(o.data()[125..].iter().all(|&v| v == 0.0));

        let (next, r, done) = fruits_step(&s, &comb, ActionId(13)).unwrap();
        assert_eq!((r, done), (0.0, false));
        let o = encode_observation(&next, &comb);
        let channel = &o.data()[125..];
        assert_eq!(channel[13], 1.0);
        assert_eq!(channel.iter().filter(|&&v| v != 0.0).count(), 1);

        s.basket = vec![3, 1];
        let o = encode_observation(&s, &seq);
        assert_eq!(o.data()[125 + 3], 1.0);
        assert_eq!(o.data()[125 + 5 + 1], 1.0);
    }

    #[test]
    fn rewards_follow_pick_rules() {
        let task = FruitsTask::sequence(&[2, 0]).unwrap();
        let s = state_with(&[(0, 0), (1, 1), (2, 13), (3, 20), (4, 24)]);
        // wrong fruit stays on the grid
        let (s1, r, d) = fruits_step(&s, &task, ActionId(0)).unwrap();
        assert_eq!((r, d), (WRONG_PICK_REWARD, false));
        assert_eq!(s1.grid[0], Some(0));
        let (s2, r, _) = fruits_step(&s1, &task, ActionId(13)).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(s2.basket, vec![2]);
        let (s3, r, _) = fruits_step(&s2, &task, ActionId(7)).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(s3.basket, s2.basket);
        let (s4, _, _) = fruits_step(&s3, &task, ActionId(0)).unwrap();
        let (_, r, d) = fruits_step(&s4, &task, ActionId(DONE_ACTION)).unwrap();
        assert_eq!((r, d), (1.0, true));
        let (_, r, d) = fruits_step(&s2, &task, ActionId(DONE_ACTION)).unwrap();
        assert_eq!((r, d), (0.0, true));
        assert!(fruits_step(&s, &task, ActionId(26)).is_err());
    }

    #[test]
    fn stepping_after_done_is_an_error() {
        let mut env = FruitsEnv::new(FruitsTask::combination(&[1]).unwrap(), 0);
        env.reset();
        let t = env.step(ActionId(DONE_ACTION)).unwrap();
        assert!(t.done);
        assert!(matches!(
            env.step(ActionId(0)),
            Err(Error::SteppedTerminalEnv)
        ));
        assert!(matches!(
            FruitsEnv::new(FruitsTask::combination(&[1]).unwrap(), 0).step(ActionId(99)),
            Err(Error::ActionOutOfRange { .. })
        ));
    }

    #[test]
    fn always_done_policy_ends_immediately_with_zero() {
        let mut env = FruitsEnv::new(FruitsTask::combination(&[1, 2]).unwrap(), 4);
        let traj = rollout(&mut env, 20, &mut seeded_rng(0), |_, _, _| {
            Ok(ActionId(DONE_ACTION))
        })
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(episode_return(&traj), 0.0);
        assert!(rollout(&mut env, 0, &mut seeded_rng(0), |_, _, _| Ok(ActionId(0))).is_err());
    }

    #[test]
    fn scripted_policy_solves_two_fruit_task_in_three_steps() {
        let mut env = FruitsEnv::new(FruitsTask::sequence(&[4, 1]).unwrap(), 11);
        let traj = rollout(&mut env, 20, &mut seeded_rng(0), |e, _, _| {
            e.optimal_action()
        })
        .unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(episode_return(&traj), 1.0);
        for w in traj.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
    }

    #[test]
    fn oracle_indexing_and_done_rule() {
        let task = FruitsTask::sequence(&[3]).unwrap();
        let mut s = state_with(&[(0, 0), (1, 1), (2, 2), (3, 13), (4, 24)]);
        assert_eq!(fruits_optimal_action(&s, &task).unwrap(), ActionId(13));
        s.grid[13] = None;
        s.basket = vec![3];
        assert_eq!(
            fruits_optimal_action(&s, &task).unwrap(),
            ActionId(DONE_ACTION)
        );
        let missing = FruitsTask::sequence(&[3, 4]).unwrap();
        s.grid[24] = None;
        assert!(matches!(
            fruits_optimal_action(&s, &missing),
            Err(Error::TargetFruitMissing(4))
        ));
    }

    /// Breadth-first search over states; returns the minimal number of steps
    /// to a successful done-action.
    fn shortest_completion(start: &FruitsState, task: &FruitsTask) -> Option<usize> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([(start.clone(), 0usize)]);
        while let Some((s, d)) = queue.pop_front() {
            for a in 0..ACTION_COUNT {
                let (n, r, done) = fruits_step(&s, task, ActionId(a)).unwrap();
                if done {
                    if r == 1.0 {
                        return Some(d + 1);
                    }
                    continue;
                }
                let key = (n.grid, n.basket.clone());
                if seen.insert(key) {
                    queue.push_back((n, d + 1));
                }
            }
        }
        None
    }

    #[test]
    fn combination_oracle_is_on_a_shortest_path() {
        let task = FruitsTask::combination(&[0, 3]).unwrap();
        let s = state_with(&[(0, 6), (1, 1), (2, 2), (3, 17), (4, 24)]);
        let a = fruits_optimal_action(&s, &task).unwrap();
        assert_eq!(a, ActionId(6));
        let best = shortest_completion(&s, &task).unwrap();
        let (n, _, _) = fruits_step(&s, &task, a).unwrap();
        assert_eq!(shortest_completion(&n, &task).unwrap() + 1, best);
        // the other target is equally optimal
        let (n, _, _) = fruits_step(&s, &task, ActionId(17)).unwrap();
        assert_eq!(shortest_completion(&n, &task).unwrap() + 1, best);
    }

    #[test]
    fn task_json_schema() {
        let t = FruitsTask::sequence(&[3, 1]).unwrap();
        let j = serde_json::to_string(&t).unwrap();
        assert_eq!(j, r#"{"mode":"seq","targets":[3,1]}"#);
        let c: FruitsTask = serde_json::from_str(r#"{"mode":"comb","targets":[4,1]}"#).unwrap();
        assert_eq!(c, FruitsTask::combination(&[1, 4]).unwrap());
        assert!(serde_json::from_str::<FruitsTask>(r#"{"mode":"comb","targets":[1,1]}"#).is_err());
        assert_eq!(FruitsTask::parse(&t.name()).unwrap(), t);
    }

    #[test]
    fn decoding_recovers_grid_and_basket() {
        let tasks = [
            FruitsTask::combination(&[0, 2, 3]).unwrap(),
            FruitsTask::sequence(&[4, 1, 0]).unwrap(),
        ];
        for (k, task) in tasks.into_iter().enumerate() {
            let mut env = FruitsEnv::new(task.clone(), 40 + k as u64);
            let mut rng = seeded_rng(k as u64);
            for _ in 0..20 {
                let traj = rollout(&mut env, 20, &mut rng, |e, _, r| {
                    Ok(if r.gen_bool(0.6) {
                        e.optimal_action()?
                    } else {
                        ActionId(r.gen_range(0..CELLS))
                    })
                })
                .unwrap();
                for t in &traj {
                    let s = decode_observation(&t.next_state, &task).unwrap();
                    assert_eq!(encode_observation(&s, &task), t.next_state);
                }
                let s = decode_observation(&env.observation(), &task).unwrap();
                assert_eq!(s.grid, env.state().grid);
                let mut want = env.state().basket.clone();
                if task.mode == FruitsMode::Combination {
                    want.sort_unstable();
                }
                assert_eq!(s.basket, want);
            }
        }
    }

    #[test]
    fn optimal_set_contains_scripted_action() {
        let mut rng = seeded_rng(9);
        for task in enumerate_combination_tasks() {
            let state = FruitsState::random(&mut rng);
            let set = fruits_optimal_actions(&state, &task);
            assert_eq!(set.len(), task.targets.len());
            assert!(set.contains(&fruits_optimal_action(&state, &task).unwrap()));
        }
        let seq = FruitsTask::sequence(&[3, 1]).unwrap();
        let state = FruitsState::random(&mut rng);
        assert_eq!(fruits_optimal_actions(&state, &seq).len(), 1);
    }
}
