use urp_core::grpo::*;
use urp_core::policy::*;
use urp_core::reward::{composite_reward, RewardConfig};

fn toy() -> (ModelConfig, Vocabulary, StubTask) {
    let vocab = Vocabulary::toy(4).unwrap();
    let cfg = ModelConfig {
        vocab_size: 4,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        n_prefix: 0,
        context: 4,
        raster_features: 1,
        max_len: 2,
        ..ModelConfig::default()
    };
    let task = StubTask {
        prompt: Prompt {
            prefix: PrefixInput::Null,
            tokens: vec![0],
        },
        answer: vec![1, vocab.eos()],
        name: "toy".into(),
    };
    (cfg, vocab, task)
}

#[test]
fn single_correct_candidate_gets_the_unique_positive_maximum() {
    let cfg = RewardConfig::default();
    let mut texts = vec!["<think>x</think><answer>4.", "<answer>4.0</answer>", "4.0", "", "<think>", "<think></think>", "x"];
    texts.insert(3, "<think>a</think><answer>4.0</answer>");
    let rewards: Vec<f64> = texts.iter().map(|t| composite_reward(t, 4.0, &cfg).composite).collect();
    let adv = group_advantages(&rewards, 1e-6);
    assert!(adv[3] > 0.0);
    for (i, a) in adv.iter().enumerate() {
        if i != 3 {
            assert!(*a < adv[3]);
        }
    }
}

#[test]
fn small_update_does_not_decrease_the_surrogate() {
    let (cfg, vocab, task) = toy();
    let tasks = [task.clone()];
    let mut improved = 0;
    for seed in 0..20 {
        let gc = GrpoConfig {
            kl_beta: 0.0,
            inner_epochs: 1,
            learning_rate: 1e-5,
            prompts_per_step: 1,
            group_size: 16,
            seed,
            ..GrpoConfig::default()
        };
        let mut state = TrainState::new(PolicyParams::<f64>::init(&cfg, seed).unwrap(), &gc);
        let before = state.theta.clone();
        let (_, groups) = train_step(&mut state, &vocab, &tasks, &gc).unwrap();
        let prompts = [&task.prompt];
        let at_old = grpo_objective(&before, &before, &before, &prompts, &groups, &gc).unwrap().objective;
        let at_new = grpo_objective(&state.theta, &before, &before, &prompts, &groups, &gc).unwrap().objective;
        assert!(at_new >= at_old, "seed {seed}: {at_new} < {at_old}");
        improved += (at_new > at_old) as usize;
    }
    // groups with reward variance must show a strict gain
    assert!(improved > 0);
}

#[test]
fn strong_kl_penalty_keeps_the_policy_near_the_reference() {
    let (cfg, vocab, task) = toy();
    let tasks = [task];
    let run = |beta: f64| {
        let gc = GrpoConfig {
            kl_beta: beta,
            learning_rate: 1e-2,
            prompts_per_step: 1,
            ..GrpoConfig::default()
        };
        let mut state = TrainState::new(PolicyParams::<f64>::init(&cfg, 0).unwrap(), &gc);
        (0..30)
            .map(|_| {
                train_step(&mut state, &vocab, &tasks, &gc).unwrap();
                state.theta.distance(&state.pi_ref)
            })
            .collect::<Vec<f64>>()
    };
    let free = run(0.0);
    let tight = run(1e3);
    assert!(tight.last().unwrap() < free.last().unwrap(), "{tight:?} vs {free:?}");
    let drift = |d: &[f64]| d.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(drift(&tight) <= drift(&free));
}

#[test]
fn identical_seeds_give_identical_checkpoints_every_step() {
    let (cfg, vocab, task) = toy();
    let tasks = [task];
    let gc = GrpoConfig {
        prompts_per_step: 1,
        learning_rate: 1e-2,
        ..GrpoConfig::default()
    };
    let mut a = TrainState::new(PolicyParams::<f64>::init(&cfg, 3).unwrap(), &gc);
    let mut b = TrainState::new(PolicyParams::<f64>::init(&cfg, 3).unwrap(), &gc);
    for _ in 0..10 {
        let ma = train_step(&mut a, &vocab, &tasks, &gc).unwrap();
        let mb = train_step(&mut b, &vocab, &tasks, &gc).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a.to_checkpoint().to_bytes().unwrap(), b.to_checkpoint().to_bytes().unwrap());
    }
}

#[test]
fn theta_old_tracks_theta_and_reference_stays_frozen() {
    let (cfg, vocab, task) = toy();
    let tasks = [task];
    let gc = GrpoConfig {
        prompts_per_step: 1,
        learning_rate: 1e-2,
        ..GrpoConfig::default()
    };
    let init = PolicyParams::<f64>::init(&cfg, 4).unwrap();
    let mut s = TrainState::new(init.clone(), &gc);
    for _ in 0..5 {
        let start = s.theta.clone();
        train_step(&mut s, &vocab, &tasks, &gc).unwrap();
        assert_eq!(s.theta_old.data, start.data);
        assert_eq!(s.pi_ref.data, init.data);
    }
}
