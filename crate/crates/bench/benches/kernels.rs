use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use eigentrack::config::{eval_coefficient, parse_config};
use eigentrack::delaunay::triangulate;
use eigentrack::matching::solve_dense_assignment;
use eigentrack::{
    apriori_match, assemble_mass, assemble_stiffness, build_mesh, solve_window, tensor_grid, verify, RunConfig,
    SnapshotSource, SnapshotStore,
};

const CONFIG_1D: &str = include_str!("../../../configs/paper_1d.cfg");

fn config(mesh_n: usize) -> RunConfig {
    let mut cfg = parse_config(CONFIG_1D).expect("bundled config parses");
    cfg.mesh_n = mesh_n;
    cfg
}

fn assembly(c: &mut Criterion) {
    let cfg = config(65);
    let mesh = build_mesh(cfg.mesh_n).unwrap();
    let coeff = eval_coefficient(&cfg.coefficient, &[0.7]).unwrap();
    c.bench_function("assemble_stiffness_65", |b| b.iter(|| assemble_stiffness(black_box(&mesh), &coeff).unwrap()));
    c.bench_function("assemble_mass_65", |b| b.iter(|| assemble_mass(black_box(&mesh))));
}

fn eigensolve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_window");
    group.sample_size(10);
    for mesh_n in [33, 65] {
        let cfg = config(mesh_n);
        let mesh = build_mesh(mesh_n).unwrap();
        let m = assemble_mass(&mesh);
        let a = assemble_stiffness(&mesh, &eval_coefficient(&cfg.coefficient, &[0.7]).unwrap()).unwrap();
        group.bench_function(format!("mesh_{mesh_n}"), |b| b.iter(|| solve_window(&a, &m, cfg.window).unwrap()));
    }
    group.finish();
}

fn match_and_verify(c: &mut Criterion) {
    let cfg = config(65);
    let store = SnapshotStore::new(&cfg, None).unwrap();
    let p = cfg.param_box.point_from_physical(&[0.4]).unwrap();
    let q = cfg.param_box.point_from_physical(&[0.7]).unwrap();
    let (a, b) = (store.snapshot(&p).unwrap(), store.snapshot(&q).unwrap());
    c.bench_function("apriori_match_4x9", |bch| {
        bch.iter(|| apriori_match(&a, &b, store.mass(), cfg.w1, cfg.w2).unwrap())
    });
    let m = apriori_match(&a, &b, store.mass(), cfg.w1, cfg.w2).unwrap();
    c.bench_function("verify_4x9", |bch| {
        bch.iter(|| verify(&a, &b, &m.pair, store.mass(), cfg.t_pi, cfg.t_lambda).unwrap())
    });
}

fn assignment(c: &mut Criterion) {
    let (rows, cols) = (12, 16);
    let entries: Vec<f64> = (0..rows * cols).map(|k| ((k * 7919) % 101) as f64 / 7.0).collect();
    c.bench_function("hungarian_12x16", |b| b.iter(|| solve_dense_assignment(rows, cols, black_box(&entries))));
}

fn delaunay(c: &mut Criterion) {
    let pts = tensor_grid(4, 2);
    c.bench_function("delaunay_17x17", |b| b.iter(|| triangulate(black_box(&pts)).unwrap()));
}

criterion_group!(benches, assembly, eigensolve, match_and_verify, assignment, delaunay);
criterion_main!(benches);
