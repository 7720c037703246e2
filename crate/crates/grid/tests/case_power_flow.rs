//! Cross-checks of the shipped cases against independent solvers.

use std::fs::File;
use std::path::PathBuf;

use feederlab_grid::case::{load_case, GeneratorKind, NetworkCase};
use feederlab_grid::dispatch::{ControlMode, DispatchAction, GenSetpoint};
use feederlab_grid::graph::build_matrices;
use feederlab_grid::power_flow::{solve_power_flow, PowerFlowOptions};
use feederlab_grid::stochastic::{sample_availability, AvailabilitySample, SolarParams, WindParams};
use feederlab_oracles::{gauss_seidel_voltages, symmetric_eigenvalues, GsNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn fixture(name: &str) -> NetworkCase {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(format!("{name}.toml"));
    load_case(File::open(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn counts(case: &NetworkCase) -> (usize, usize, usize) {
    (
        case.count_kind(GeneratorKind::Thermal),
        case.count_kind(GeneratorKind::Wind),
        case.count_kind(GeneratorKind::Solar),
    )
}

#[test]
fn case_totals_match_documented_characteristics() {
    let c33 = fixture("ieee33");
    assert!((c33.total_load_p_mw() - 3.715).abs() < 1e-9);
    assert!((c33.total_load_q_mvar() - 2.300).abs() < 1e-9);
    assert_eq!(counts(&c33), (2, 5, 5));
    assert_eq!(c33.n_buses(), 33);

    let c69 = fixture("ieee69");
    assert!((c69.total_load_p_mw() - 3.800).abs() < 1e-9);
    assert!((c69.total_load_q_mvar() - 2.690).abs() < 1e-9);
    assert_eq!(counts(&c69), (3, 10, 10));
    assert_eq!(c69.n_buses(), 69);

    let c118 = fixture("ieee118");
    assert!((c118.total_load_p_mw() - 22.710).abs() < 1e-9);
    assert!((c118.total_load_q_mvar() - 17.041).abs() < 1e-9);
    assert_eq!(counts(&c118), (4, 15, 15));
    assert_eq!(c118.n_buses(), 118);
    assert_eq!(c118.base_kv, 11.0);
    assert_eq!(c118.base_mva, 100.0);
}

fn no_dg_dispatch(case: &NetworkCase) -> DispatchAction {
    DispatchAction {
        mode: ControlMode::PowerVoltage,
        setpoints: vec![
            GenSetpoint {
                p: 0.0,
                v: 1.0,
                q: 0.0,
                online: false,
            };
            case.generators.len()
        ],
    }
}

fn gs_oracle(case: &NetworkCase) -> GsNetwork {
    GsNetwork {
        n_buses: case.n_buses(),
        slack_bus: case.slack_bus,
        slack_voltage: 1.0,
        branches: case
            .branches
            .iter()
            .map(|b| (b.from, b.to, b.r, b.x))
            .collect(),
        p_injection: (0..case.n_buses()).map(|i| -case.load_p_pu(i)).collect(),
        q_injection: (0..case.n_buses()).map(|i| -case.load_q_pu(i)).collect(),
    }
}

#[test]
fn newton_matches_gauss_seidel_without_dg() {
    for name in ["ieee33", "ieee69", "ieee118"] {
        let case = fixture(name);
        let sol = solve_power_flow(
            &case,
            &no_dg_dispatch(&case),
            &AvailabilitySample::empty(case.generators.len()),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert!(sol.converged, "{name} did not converge");

        let gs = gauss_seidel_voltages(&gs_oracle(&case), 1e-10, 200_000)
            .unwrap_or_else(|| panic!("{name}: Gauss-Seidel did not converge"));
        for (bus, (nr, g)) in sol.v_mag.iter().zip(&gs).enumerate() {
            assert!(
                (nr - g).abs() < 1e-6,
                "{name} bus {bus}: NR {nr} vs GS {g}"
            );
        }
    }
}

#[test]
fn base_case_voltage_profiles_are_physical() {
    // Published 33-bus base-case minimum is ~0.9038 pu at bus 18.
    let sol33 = solve_power_flow(
        &fixture("ieee33"),
        &no_dg_dispatch(&fixture("ieee33")),
        &AvailabilitySample::empty(12),
        &PowerFlowOptions::default(),
    )
    .unwrap();
    let min33 = sol33.v_mag.iter().cloned().fold(f64::MAX, f64::min);
    assert!((min33 - 0.9038).abs() < 5e-4, "min v {min33}");

    for name in ["ieee69", "ieee118"] {
        let case = fixture(name);
        let sol = solve_power_flow(
            &case,
            &no_dg_dispatch(&case),
            &AvailabilitySample::empty(case.generators.len()),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        let vmin = sol.v_mag.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            (0.85..0.95).contains(&vmin),
            "{name}: base-case min voltage {vmin} outside heavy-feeder range"
        );
    }
}

#[test]
fn balance_identity_on_random_feasible_dispatches() {
    let case = fixture("ieee33");
    let wind = WindParams::default();
    let solar = SolarParams::default();
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    for trial in 0..200 {
        let sample = sample_availability(&case, &wind, &solar, trial % 24, &mut rng);
        let setpoints = case
            .generators
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let p_hi = match g.kind {
                    GeneratorKind::Thermal => g.p_max,
                    _ => sample.gens[gi].as_ref().unwrap().p_bar,
                };
                GenSetpoint {
                    p: g.p_min.max(rng.random_range(0.0..=1.0) * p_hi),
                    v: rng.random_range(0.98..=1.02),
                    q: 0.0,
                    online: true,
                }
            })
            .collect();
        let dispatch = DispatchAction {
            mode: ControlMode::PowerVoltage,
            setpoints,
        };
        let sol = solve_power_flow(&case, &dispatch, &sample, &PowerFlowOptions::default())
            .unwrap();
        assert!(sol.converged, "trial {trial} did not converge");

        let gen_p: f64 =
            feederlab_grid::power_flow::effective_outputs(&case, &dispatch, &sample)
                .iter()
                .sum();
        let load_p: f64 = (0..case.n_buses()).map(|i| case.load_p_pu(i)).sum();
        let residual = sol.slack_p + gen_p - load_p - sol.loss_p;
        assert!(
            residual.abs() < 1e-6,
            "trial {trial}: balance residual {residual}"
        );
    }
}

#[test]
fn scaled_laplacian_spectrum_inside_unit_interval() {
    let case = fixture("ieee33");
    let gm = build_matrices(&case);
    let n = gm.laplacian_scaled.rows();
    let eig = symmetric_eigenvalues(n, gm.laplacian_scaled.data());
    for e in eig {
        assert!(
            (-1.0 - 1e-9..=1.0 + 1e-9).contains(&e),
            "eigenvalue {e} escapes [-1, 1]"
        );
    }
}
