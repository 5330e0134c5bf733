//! Prints the quantities behind the acceptance criteria.
use flowmob::harness::runner::run_grid;
use flowmob::harness::*;

fn spec(cfg: &SimConfig, sc: u8, active: usize, speed: f64, map: &MapSpec) -> ScenarioSpec {
    let mut s = ScenarioSpec::from_config(cfg).unwrap();
    s.scenario = Scenario::from_id(sc).unwrap();
    s.active = active;
    s.speed = speed;
    s.map = map.clone();
    s
}

fn show(cells: &[CellResult], metric: &str) {
    for c in cells {
        let s = c.get(metric);
        println!("  sc{} load{} v{} {metric}: {:?}", c.cell.scenario, c.cell.load, c.cell.speed, s.map(|s| (s.mean, s.half_width())));
    }
}

fn main() {
    let cfg = match std::env::args().nth(1) { Some(p) => SimConfig::load(std::path::Path::new(&p)).unwrap(), None => SimConfig::default() };
    let trace = MapSpec::parse("trace:fixtures/neighborhood.trace").unwrap();
    let t = std::time::Instant::now();
    let specs: Vec<_> = (0..4).flat_map(|sc| [10, 20, 30, 40, 50].map(|n| spec(&cfg, sc, n, 10.0, &trace))).collect();
    let cells = run_grid(&cfg, &specs).unwrap();
    println!("C1 trace throughput"); show(&cells, "throughput_kbps"); show(&cells, "packet_loss_ratio");
    let m = MapSpec::Manhattan;
    let specs: Vec<_> = (0..4).flat_map(|sc| [5.0, 10.0, 15.0, 20.0, 25.0].map(|v| spec(&cfg, sc, 30, v, &m))).collect();
    let cells = run_grid(&cfg, &specs).unwrap();
    println!("C2/3 manhattan 30"); show(&cells, "handover_count"); show(&cells, "avg_handover_time");
    let specs: Vec<_> = (0..4).flat_map(|sc| [10.0, 15.0, 25.0].map(|v| spec(&cfg, sc, 50, v, &m))).collect();
    let cells = run_grid(&cfg, &specs).unwrap();
    println!("C4 manhattan 50"); show(&cells, "packet_loss_ratio");
    let specs: Vec<_> = (0..4).flat_map(|sc| [40, 50].map(|n| spec(&cfg, sc, n, 10.0, &m))).collect();
    let cells = run_grid(&cfg, &specs).unwrap();
    println!("C5"); show(&cells, "avg_delay"); show(&cells, "delay_safety"); show(&cells, "delay_comfort"); show(&cells, "delay_user");
    println!("elapsed {:?}", t.elapsed());
}
