use cmdp::envs::{build_queue, QueueConfig};
use cmdp::occupancy::{solve_optimistic, ConfidenceRadii};

fn main() {
    let env = build_queue(&QueueConfig::default()).unwrap();
    let text = std::fs::read_to_string("/tmp/failing_lp.txt").unwrap();
    let mut eps = 0.0;
    let mut p_hat = Vec::new();
    let mut radius = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next().unwrap() {
            "t" => {
                it.next();
                it.next();
                eps = it.next().unwrap().parse().unwrap();
            }
            "p" => p_hat.push(it.next().unwrap().parse().unwrap()),
            "rad" => radius.push(it.next().unwrap().parse().unwrap()),
            _ => {}
        }
    }
    let radii = ConfidenceRadii { n_states: env.n_states, n_actions: env.n_actions, radius };
    let start = std::time::Instant::now();
    let out = solve_optimistic(&p_hat, &radii, &env.reward, &env.costs, eps);
    match out {
        Ok((_, obj)) => println!("ok obj={obj} in {:?}", start.elapsed()),
        Err(e) => println!("err {e} in {:?}", start.elapsed()),
    }
}
