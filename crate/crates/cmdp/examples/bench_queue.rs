use cmdp::envs::{build_queue, QueueConfig};
use cmdp::model_based::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let env = build_queue(&QueueConfig::default()).unwrap();
    let t_total: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100_000);
    let algo = match std::env::args().nth(2).as_deref() {
        Some("cpsrl") => Algo::Cpsrl,
        _ => Algo::Cucrl,
    };
    let reps: u64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let k: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let config = LearnerConfig { algo, k, mode: TriggerMode::Linear, radius: RadiusRule::default() };
    let start = std::time::Instant::now();
    let window = t_total / 10;
    let mut tail_rates = Vec::new();
    let mut viol_max = f64::NEG_INFINITY;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let (mut epoch, mut counts, _) = init_learner(&env, &config, &mut rng).unwrap();
        let mut state = 0usize;
        let mut epochs = 1u64;
        let mut cum_r = 0.0;
        let mut tail_r = 0.0;
        let mut cum_c = [0.0f64; 2];
        for t in 1..=t_total {
            let out = match learner_step(state, t, &mut epoch, &mut counts, &env, &config, &mut rng) {
                Ok(out) => out,
                Err(e) => {
                    eprintln!("failure rep={rep} t={t}: {e}");
                    let p_hat = empirical_transition(&counts);
                    let radii = cmdp::occupancy::ConfidenceRadii::from_counts_evaluation(
                        env.n_states,
                        env.n_actions,
                        &counts.n_epoch_start,
                        t,
                    );
                    let eps = cmdp::occupancy::epsilon_schedule(1.0, t);
                    let mut dump = String::new();
                    use std::fmt::Write as _;
                    writeln!(dump, "t {t} eps {eps:.17e}").unwrap();
                    for v in &p_hat {
                        writeln!(dump, "p {v:.17e}").unwrap();
                    }
                    for v in &radii.radius {
                        writeln!(dump, "rad {v:.17e}").unwrap();
                    }
                    std::fs::write("/tmp/failing_lp.txt", dump).unwrap();
                    std::process::exit(3);
                }
            };
            if out.new_epoch.is_some() {
                epochs += 1;
            }
            cum_r += out.reward;
            cum_c[0] += out.costs[0];
            cum_c[1] += out.costs[1];
            if t > t_total - window {
                tail_r += out.reward;
            }
            state = out.next_state;
        }
        let tail = tail_r / window as f64 * env.reward_scale;
        tail_rates.push(tail);
        viol_max = viol_max.max(cum_c[0].max(cum_c[1]));
        println!(
            "rep={rep} epochs={epochs} avg_r={:.3} tail10_r={tail:.3} C=({:.1},{:.1}) wall={:.1}s",
            cum_r / t_total as f64 * env.reward_scale,
            cum_c[0],
            cum_c[1],
            start.elapsed().as_secs_f64()
        );
    }
    let mean = tail_rates.iter().sum::<f64>() / tail_rates.len() as f64;
    println!(
        "mean tail10 rate {mean:.3}  max cum violation {viol_max:.1}  total wall {:.1}s",
        start.elapsed().as_secs_f64()
    );
}
