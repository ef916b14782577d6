//! Runs the latent pipeline on a series of seeded n_g = 54 networks and prints
//! the reconstruction errors for each library order.
//!
//! cargo run --release -p lsindy-core --example latent_sweep -- [seeds] [orders] [n_g] [density] [rank]

use lsindy::grid_model::{generate_synthetic, ParameterRanges, Topology};
use lsindy::library::{Coordinates, FunctionLibrary, LibrarySpec};
use lsindy::metrics::{relative_error, timed, Block};
use lsindy::ode::{integrate, IntegrationConfig};
use lsindy::reduction::{compute_basis, project, reconstruct, RankCriterion};
use lsindy::snapshots::{assemble, DerivativeMode};
use lsindy::sparse_id::{fit, simulate_model, RegressionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(4, |s| s.parse().unwrap());
    let orders: Vec<usize> = args.get(2).map_or(vec![1, 2, 3], |s| {
        s.split(',').map(|v| v.parse().unwrap()).collect()
    });
    let ranges = ParameterRanges {
        k: (0.01, 0.04),
        delta_star: (-0.1, 0.1),
        ..Default::default()
    };
    let n_g: usize = args.get(3).map_or(54, |s| s.parse().unwrap());
    let density: f64 = args.get(4).map_or(0.1, |s| s.parse().unwrap());
    let criterion = match args.get(5) {
        Some(r) => RankCriterion::FixedRank(r.parse().unwrap()),
        None => RankCriterion::Energy(0.999),
    };
    for seed in 0..seeds {
        let syn =
            generate_synthetic(n_g, Topology::RandomSparse { density }, seed, &ranges).unwrap();
        let net = syn.network;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x0 = syn.equilibrium.to_stacked();
        for v in x0.iter_mut().take(n_g) {
            *v += rng.random_range(-0.1..=0.1);
        }
        let cfg = IntegrationConfig::default();
        let (traj, fom_s) = timed(|| integrate(|_, x, dx| net.rhs(x, dx), &x0, &cfg).unwrap());
        let snaps = assemble(&traj, &net, DerivativeMode::Exact).unwrap();
        let basis = compute_basis(&snaps, criterion, false).unwrap();
        let latent = project(&snaps, &basis).unwrap();
        let r = basis.rank();
        println!(
            "seed {seed}: energy captured {:.6}",
            basis.energy_captured()
        );
        let z0 = basis.project_state(&x0).unwrap();
        for &p in &orders {
            let spec = LibrarySpec {
                poly_order: p,
                ..Default::default()
            };
            let layout = FunctionLibrary::new(spec, Coordinates::Latent, r).unwrap();
            let lib = layout.build(&latent.z, Default::default()).unwrap();
            let (model, fit_s) = timed(|| {
                fit(&lib, &latent.zdot.transpose(), &RegressionConfig::default()).unwrap()
            });
            let (res, rom_s) = timed(|| {
                simulate_model(&model, &z0, &cfg)
                    .and_then(|sim| reconstruct(&sim.coordinates.states, &basis))
                    .and_then(|xh| {
                        Ok((
                            relative_error(&traj.states, &xh, Block::Delta)?,
                            relative_error(&traj.states, &xh, Block::Omega)?,
                        ))
                    })
            });
            match res {
                Ok((ed, ew)) => println!(
                    "seed {seed} r {r} p {p} cols {} nnz {}: err_delta {ed:.3e} err_omega {ew:.3e} (fom {fom_s:.3}s fit {fit_s:.2}s rom {rom_s:.3}s)",
                    lib.len(),
                    model.nonzero_count()
                ),
                Err(e) => println!("seed {seed} r {r} p {p}: {e}"),
            }
        }
    }
}
