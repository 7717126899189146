use cmdp::envs::{build_queue, QueueConfig};
use cmdp::model::evaluate_policy;
use cmdp::model_based::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let env = build_queue(&QueueConfig::default()).unwrap();
    let config = LearnerConfig { algo: Algo::Cpsrl, k: 1.0, mode: TriggerMode::Linear, radius: RadiusRule::default() };
    for rep in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let (mut epoch, mut counts, _) = init_learner(&env, &config, &mut rng).unwrap();
        let mut state = 0usize;
        let mut tail_gains: Vec<(u64, f64, f64, f64)> = Vec::new();
        for t in 1..=100_000u64 {
            let out = learner_step(state, t, &mut epoch, &mut counts, &env, &config, &mut rng).unwrap();
            state = out.next_state;
            if out.new_epoch.is_some() && t >= 90_000 {
                let ev = evaluate_policy(&env, &epoch.policy).unwrap();
                tail_gains.push((t, ev.reward_gain() * env.reward_scale, ev.cost_gain(0), ev.cost_gain(1)));
            }
        }
        let mean = tail_gains.iter().map(|g| g.1).sum::<f64>() / tail_gains.len() as f64;
        let min = tail_gains.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
        println!("rep={rep} tail epochs={} mean true gain {mean:.3} min {min:.3}", tail_gains.len());
        for g in tail_gains.iter().filter(|g| g.1 < 4.3) {
            println!("   t={} gain={:.3} costs=({:.3},{:.3})", g.0, g.1, g.2, g.3);
        }
    }
}
