//! End-to-end: synthesize, train briefly, sweep, persist.

use novact::dataset::{load_training_set, save_training_set, synthesize_boxing_set};
use novact::explorer::{read_records, render_map, sweep, write_records};
use novact::trainer::{train_with, LearningCurve};
use novact::{
    Checkpoint, Exec, GridSpec, NetworkSpec, PatternClass, SweepConfig, SynthConfig, TrainingConfig,
    TrainingSet,
};

fn short_set() -> TrainingSet {
    synthesize_boxing_set(&SynthConfig {
        steps: 20,
        ..Default::default()
    })
    .unwrap()
}

fn short_run(exec: Exec) -> (Checkpoint, LearningCurve) {
    let config = TrainingConfig {
        epochs: 40,
        seed: 11,
        ..Default::default()
    };
    train_with(&short_set(), &NetworkSpec::default(), &config, exec, |_| {}).unwrap()
}

fn small_sweep() -> SweepConfig {
    SweepConfig {
        iterations: 3,
        sample_size: 5,
        ..Default::default()
    }
}

#[test]
fn training_is_identical_across_exec_strategies() {
    let (a, ca) = short_run(Exec::Sequential);
    let (b, cb) = short_run(Exec::Parallel);
    assert_eq!(a, b);
    assert_eq!(ca.to_csv().lines().count(), cb.to_csv().lines().count());
    for (p, q) in ca.points.iter().zip(&cb.points) {
        assert_eq!(p.loss.to_bits(), q.loss.to_bits());
    }
}

#[test]
fn training_loss_decreases() {
    let (_, curve) = short_run(Exec::Parallel);
    let first = curve.points.first().unwrap().loss;
    let last = curve.last_loss().unwrap();
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn checkpoint_roundtrips_through_disk() {
    let (cp, _) = short_run(Exec::Parallel);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    cp.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(cp, back);
    let pb = cp.learned_pb(2);
    assert_eq!(cp.rollout(&pb, 15).unwrap(), back.rollout(&pb, 15).unwrap());
}

#[test]
fn training_set_roundtrips_through_disk() {
    let set = short_set();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_training_set(&set, dir.path()).unwrap();
    let back = load_training_set(&manifest).unwrap();
    assert_eq!(
        set.labels().collect::<Vec<_>>(),
        back.labels().collect::<Vec<_>>()
    );
    for (a, b) in set.trajectories().zip(back.trajectories()) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn sweep_partitions_grid_and_matches_across_exec() {
    let (cp, _) = short_run(Exec::Parallel);
    let grid = GridSpec::new(9).unwrap();
    let seq = sweep(&cp, grid, &small_sweep(), Exec::Sequential).unwrap();
    let par = sweep(&cp, grid, &small_sweep(), Exec::Parallel).unwrap();
    assert_eq!(seq, par);

    let r = &seq.report;
    assert_eq!(r.total, 81);
    assert_eq!(r.classes.iter().map(|c| c.count).sum::<usize>(), 81);
    assert!((r.classes.iter().map(|c| c.percent).sum::<f64>() - 100.0).abs() < 1e-9);
    let appropriate: usize = PatternClass::ALL
        .into_iter()
        .filter(|c| c.is_appropriate())
        .map(|c| r.count(c))
        .sum();
    assert_eq!(r.regions.iter().map(|g| g.cells).sum::<usize>(), appropriate);
    for (i, cell) in seq.cells.iter().enumerate() {
        assert_eq!((cell.ix, cell.iy), grid.coords(i));
    }
    assert_eq!(seq.cells[0].pb, [-1.0, -1.0]);
    assert_eq!(seq.cells[80].pb, [1.0, 1.0]);
    assert_eq!(seq.cells[1].pb[1], -1.0);
}

#[test]
fn records_roundtrip_and_render() {
    let (cp, _) = short_run(Exec::Parallel);
    let grid = GridSpec::new(6).unwrap();
    let result = sweep(&cp, grid, &small_sweep(), Exec::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cells.jsonl");
    write_records(&path, &result.cells).unwrap();
    let (g, cells) = read_records(&path).unwrap();
    assert_eq!(g, grid);
    assert_eq!(cells, result.cells);

    let labels: Vec<String> = cp.training.labels().map(str::to_string).collect();
    let img = render_map(grid, &cells, &labels, result.learned_threshold).unwrap();
    assert_eq!((img.width, img.height), (6, 6));
    let png = dir.path().join("map.png");
    img.save(&png).unwrap();
    assert!(std::fs::metadata(&png).unwrap().len() > 0);
}
