use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use lsindy::grid_model::{generate_synthetic, ParameterRanges, Topology};
use lsindy::library::{Coordinates, FunctionLibrary, LibrarySpec};
use lsindy::ode::{integrate, IntegrationConfig};
use lsindy::reduction::{compute_basis, project, RankCriterion};
use lsindy::snapshots::{assemble_par, DerivativeMode};
use lsindy::sparse_id::{fit_with, RegressionConfig};
use lsindy::Parallelism;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("rayon", Parallelism::Rayon),
];

fn setup(n_g: usize) -> (lsindy::Trajectory, lsindy::EffectiveNetwork) {
    let syn = generate_synthetic(
        n_g,
        Topology::RandomSparse { density: 0.05 },
        7,
        &ParameterRanges::default(),
    )
    .unwrap();
    let mut x0 = syn.equilibrium.to_stacked();
    for (i, v) in x0.iter_mut().take(n_g).enumerate() {
        *v += 0.1 * ((i as f64) * 0.7).sin();
    }
    let net = syn.network;
    let cfg = IntegrationConfig {
        t_end: 5.0,
        ..Default::default()
    };
    let traj = integrate(|_, x, dx| net.rhs(x, dx), &x0, &cfg).unwrap();
    (traj, net)
}

fn benches(c: &mut Criterion) {
    let (traj, net) = setup(200);
    let mut g = c.benchmark_group("exact_derivatives");
    for (name, par) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| assemble_par(black_box(&traj), &net, DerivativeMode::Exact, par).unwrap())
        });
    }
    g.finish();

    let snaps = assemble_par(&traj, &net, DerivativeMode::Exact, Parallelism::Sequential).unwrap();
    let basis = compute_basis(&snaps, RankCriterion::FixedRank(12), false).unwrap();
    let latent = project(&snaps, &basis).unwrap();
    let spec = LibrarySpec {
        poly_order: 3,
        ..Default::default()
    };
    let layout = FunctionLibrary::new(spec, Coordinates::Latent, 12).unwrap();

    let mut g = c.benchmark_group("library_build");
    for (name, par) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| layout.build(black_box(&latent.z), par).unwrap())
        });
    }
    g.finish();

    let lib = layout.build(&latent.z, Parallelism::Sequential).unwrap();
    let targets = latent.zdot.transpose();
    let cfg = RegressionConfig::default();
    let mut g = c.benchmark_group("stlsq_fit");
    g.sample_size(20);
    for (name, par) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_with(black_box(&lib), &targets, &cfg, None, par).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
