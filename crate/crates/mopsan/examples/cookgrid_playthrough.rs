//! A full scripted episode in the cooking gridworld: two hand-written cooks
//! fill the pot, wait out the cook timer, plate, and serve.

use mopsan::env::{scripted::scripted_pair, CookGrid};

fn main() {
    let env = CookGrid::default_kitchen();
    println!("kitchen ({} observation features per cook):", env.obs_dim());
    let mut state = env.reset();
    println!("{}", env.render(&state));

    let pair = scripted_pair();
    let mut score = 0.0;
    let mut frames = 0u32;
    let mut first_serve: Option<u32> = None;
    loop {
        let actions = [pair[0].act(&env, &state, 0), pair[1].act(&env, &state, 1)];
        let (next, r, done, events) = env.step(&state, actions);
        score += r;
        frames += 1;
        if events.total_served() > 0 && first_serve.is_none() {
            first_serve = Some(frames);
            println!("first soup served at step {frames}:");
            println!("{}", env.render(&next));
        }
        if done {
            state = next;
            break;
        }
        state = next;
    }
    println!("final board after {frames} steps:");
    println!("{}", env.render(&state));
    println!(
        "episode score {score} ({} soups served)",
        (score / mopsan::env::SERVE_REWARD) as u32
    );
}
