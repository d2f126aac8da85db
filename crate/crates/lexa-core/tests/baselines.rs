//! Behaviour of untrained and random policies against the benchmark
//! goals, and collection bookkeeping of a fresh agent.

use lexa_core::envs::{benchmark_goals, random_action, Env, EnvKind, GoalEntities, EPISODE_STEPS};
use lexa_core::orchestrator::{
    coincidental_hits, derive_seed, eval_tasks, success_rates, Agent, EpisodeKind, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(env: EnvKind) -> TrainConfig {
    TrainConfig {
        env: Some(env),
        ..TrainConfig::default()
    }
}

/// Final-step success of uniformly random actions on the evaluation resets.
fn random_reach_rate(env: &Env, episodes: usize) -> f64 {
    let goals = benchmark_goals(env.kind());
    let tasks = eval_tasks(goals.len(), episodes);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let outcomes: Vec<bool> = tasks
        .iter()
        .map(|t| {
            let (mut s, _) = env.reset(t.seed);
            for _ in 0..EPISODE_STEPS {
                s = env.advance(&s, random_action(&mut rng));
            }
            env.success(&s, &goals[t.goal]).unwrap()
        })
        .collect();
    let rates = success_rates(goals.len(), &tasks, &outcomes);
    rates.iter().sum::<f64>() / rates.len() as f64
}

#[test]
fn untrained_agent_is_no_better_than_chance() {
    let agent = Agent::new(config(EnvKind::PointRooms)).unwrap();
    let goals = agent.benchmark().to_vec();
    let tasks = eval_tasks(goals.len(), 10);
    let outcomes = agent.evaluate(&goals, &tasks).unwrap();
    let rates = success_rates(goals.len(), &tasks, &outcomes);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let baseline = random_reach_rate(agent.env(), 10);
    assert!(mean < 0.2, "untrained success {mean}");
    assert!(mean < baseline + 0.1, "untrained {mean} vs random {baseline}");
}

fn random_episode_flags(kind: EnvKind, episodes: u64) -> Vec<u32> {
    let env = Env::new(kind);
    let goals = benchmark_goals(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = vec![0u32; goals.len()];
    for ep in 0..episodes {
        let (mut s, _) = env.reset(derive_seed(17, 1, ep));
        let mut states = vec![s];
        for _ in 0..EPISODE_STEPS {
            s = env.advance(&s, random_action(&mut rng));
            states.push(s);
        }
        for (c, hit) in counts.iter_mut().zip(coincidental_hits(&env, &states, &goals).unwrap()) {
            *c += u32::from(hit);
        }
    }
    counts
}

#[test]
fn random_exploration_reaches_point_goals_but_not_block_goals() {
    let rooms = random_episode_flags(EnvKind::PointRooms, 100);
    assert!(rooms.iter().sum::<u32>() >= 1, "{rooms:?}");

    let push = random_episode_flags(EnvKind::PushBlock, 100);
    let goals = benchmark_goals(EnvKind::PushBlock);
    let rate = |entities: GoalEntities| {
        let flags: Vec<u32> = goals.iter().zip(&push).filter(|(g, _)| g.entities == entities).map(|(_, &c)| c).collect();
        (flags.iter().copied().max().unwrap_or(0), f64::from(flags.iter().sum::<u32>()) / flags.len() as f64)
    };
    let (block_max, block_mean) = rate(GoalEntities::Block);
    let (_, agent_mean) = rate(GoalEntities::Agent);
    // Random pushing moves the block onto a target only by accident.
    assert!(block_max <= 5, "{push:?}");
    assert!(block_mean * 5.0 <= agent_mean, "{push:?}");
}

#[test]
fn prefill_spans_several_rooms_and_counts_steps() {
    let mut agent = Agent::new(config(EnvKind::PointRooms)).unwrap();
    let summaries = agent.prefill().unwrap();
    assert_eq!(summaries.len(), 10);
    assert_eq!(agent.env_steps(), 10 * EPISODE_STEPS as u64);
    assert_eq!(agent.replay().len(), 10);
    let mut rooms = [false; 4];
    for ep in agent.replay().episodes() {
        assert_eq!(ep.kind, EpisodeKind::Random);
        for s in &ep.states {
            rooms[Env::room_of(s.agent)] = true;
        }
    }
    assert!(rooms.iter().filter(|&&r| r).count() > 1, "{rooms:?}");
    assert!(agent.visited_cells() > 0);
}
