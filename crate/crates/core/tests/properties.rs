use actprior::agents::Expert;
use actprior::fruits::{
    decode_observation, encode_observation, fruits_step, FruitsState, FruitsTask, ACTION_COUNT,
};
use actprior::grammar::{derivation_valid, enumerate_tasks, parse_task, Terminal};
use actprior::harness::mean_ci;
use actprior::mdp::{seeded_rng, ActionId};
use actprior::nn::{slm_loss, slm_violators, softmax, HeadKind};
use actprior::prior::{build_prior_dataset, proposed_actions, ActionMask};
use actprior::{MlpNet, Observation, ReplayBuffer, ReplayConfig, Transition};
use proptest::prelude::*;
use rand::Rng;

fn obs(data: &[f32]) -> Observation {
    Observation::flat(data.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_lies_on_the_simplex(logits in prop::collection::vec(-500.0f64..500.0, 1..30)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slm_is_nonnegative_and_zero_only_without_violators(
        q in prop::collection::vec(-2.0f64..2.0, 2..10),
        pick in 0usize..10,
        margin in 0.01f64..0.5,
    ) {
        let expert = pick % q.len();
        let (loss, grad) = slm_loss(&q, expert, margin).unwrap();
        let set = slm_violators(&q, expert, margin);
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, set.is_empty());
        prop_assert!(!set.contains(&expert));
        prop_assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn raising_sigma_shrinks_the_proposed_set(
        x in prop::collection::vec(-1.0f32..1.0, 6),
        seed in 0u64..1000,
        lo in 0.0f64..0.5,
        gap in 0.0f64..0.49,
    ) {
        let net = MlpNet::new(&[6, 8, 5], HeadKind::Linear, &mut seeded_rng(seed)).unwrap();
        let o = obs(&x);
        let wide = proposed_actions(&net, &o, lo).unwrap();
        let narrow = proposed_actions(&net, &o, lo + gap).unwrap();
        prop_assert!(!narrow.is_empty());
        prop_assert!(narrow.iter().all(|a| wide.contains(a)));
    }

    #[test]
    fn classifier_filtered_masks_are_inside_unfiltered_ones(seed in 0u64..500) {
        let mut rng = seeded_rng(seed);
        let experts: Vec<Expert> = (0..3)
            .map(|_| Expert::Net(MlpNet::new(&[4, 6, 5], HeadKind::Linear, &mut rng).unwrap()))
            .collect();
        let classifier = MlpNet::new(&[4, 6, 3], HeadKind::Linear, &mut rng).unwrap();
        let states: Vec<Vec<Observation>> = (0..3)
            .map(|_| (0..10).map(|_| obs(&[rng.gen(), rng.gen(), rng.gen(), rng.gen()])).collect())
            .collect();
        let filtered = build_prior_dataset(&experts, Some(&classifier), &states, 0.3, seed).unwrap();
        let all = build_prior_dataset(&experts, None, &states, 0.3, seed).unwrap();
        prop_assert_eq!(filtered.entries.len(), all.entries.len());
        for ((o1, m1), (o2, m2)) in filtered.entries.iter().zip(&all.entries) {
            prop_assert_eq!(o1, o2);
            prop_assert!(m1.is_subset(m2));
            prop_assert!(m1.popcount() >= 1);
        }
    }

    #[test]
    fn masks_count_distinct_actions(actions in prop::collection::vec(0usize..12, 1..20)) {
        let ids: Vec<ActionId> = actions.iter().map(|&a| ActionId(a)).collect();
        let mask = ActionMask::from_actions(&ids, 12).unwrap();
        let mut distinct = actions.clone();
        distinct.sort();
        distinct.dedup();
        prop_assert_eq!(mask.popcount(), distinct.len());
        prop_assert!(ids.iter().all(|&a| mask.contains(a)));
    }

    #[test]
    fn parse_accepts_exactly_the_derivable_layerings(layers in prop::collection::vec(0usize..5, 1..5)) {
        let layers: Vec<Terminal> = layers.into_iter().map(|i| Terminal::ALL[i]).collect();
        let name: String = layers.iter().map(|t| t.token()).collect();
        match parse_task(&name) {
            Ok(task) => {
                prop_assert!(derivation_valid(&layers));
                prop_assert_eq!(task.name(), name.as_str());
                prop_assert_eq!(task.layers(), layers.as_slice());
            }
            Err(_) => prop_assert!(!derivation_valid(&layers)),
        }
    }

    #[test]
    fn fruits_observations_round_trip(seed in 0u64..10_000, picks in prop::collection::vec(0usize..ACTION_COUNT - 1, 0..6)) {
        let mut rng = seeded_rng(seed);
        for task in [FruitsTask::parse("comb-0-2-4").unwrap(), FruitsTask::parse("seq-3-1-0-2").unwrap()] {
            let mut s = FruitsState::random(&mut rng);
            for &a in &picks {
                s = fruits_step(&s, &task, ActionId(a)).unwrap().0;
            }
            let back = decode_observation(&encode_observation(&s, &task), &task).unwrap();
            prop_assert_eq!(back.grid, s.grid);
            let mut want = s.basket.clone();
            let mut got = back.basket.clone();
            if task.targets.len() == 3 {
                want.sort();
                got.sort();
            }
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn replay_samples_stay_in_range(
        n in 1usize..200,
        batch in 1usize..32,
        tde in prop::collection::vec(0.0f64..5.0, 32),
        seed in 0u64..100,
    ) {
        let mut buf = ReplayBuffer::new(ReplayConfig { capacity: 64, ..ReplayConfig::default() }).unwrap();
        let o = obs(&[0.0, 1.0]);
        for i in 0..n {
            buf.push(Transition::new(o.clone(), ActionId(i % 3), i as f64, o.clone(), false).unwrap());
        }
        prop_assert_eq!(buf.len(), n.min(64));
        let mut rng = seeded_rng(seed);
        if buf.len() < batch {
            prop_assert!(buf.sample(batch, &mut rng).is_err());
            return Ok(());
        }
        let b = buf.sample(batch, &mut rng).unwrap();
        prop_assert!(b.indices.iter().all(|&i| i < buf.len()));
        prop_assert!(b.weights.iter().all(|&w| w > 0.0 && w <= 1.0 + 1e-12));
        buf.update_priorities(&b.indices, &tde[..batch]).unwrap();
        let total: f64 = (0..buf.len()).map(|i| buf.sampling_probability(i).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn confidence_intervals_bracket_the_mean(values in prop::collection::vec(-10.0f64..10.0, 1..50)) {
        let (mean, half) = mean_ci(&values);
        let lo = values.iter().copied().fold(f64::MAX, f64::min);
        let hi = values.iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(half >= 0.0);
        prop_assert!(mean >= lo - 1e-9 && mean <= hi + 1e-9);
    }
}

#[test]
fn enumerated_names_parse_back() {
    for h in 1..=4 {
        for task in enumerate_tasks(h, false).unwrap() {
            assert_eq!(parse_task(task.name()).unwrap(), task);
        }
    }
}
