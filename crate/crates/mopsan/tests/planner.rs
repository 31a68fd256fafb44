mod common;

use mopsan::env::scripted::run_scripted_episode;
use mopsan::env::CookGrid;

// The scripted pair is tuned to be throughput-optimal on the default
// kitchen: it must tie the exhaustive joint planner, not just come close.
#[test]
fn scripted_pair_matches_planner_optimum() {
    let g = CookGrid::default_kitchen();
    let best = common::planner_best_soups(&g, g.horizon());
    let (served, _) = run_scripted_episode(&g);
    println!("planner optimum {best}, scripted pair {served}");
    assert_eq!(served, best, "scripted pair must match the planner optimum");
}
