//! Subcommand implementations. Every artifact-producing command resolves the
//! configuration, derives its randomness streams from the master seed, runs,
//! and writes a self-describing run directory.

use std::cell::RefCell;
use std::fs::File;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use feederlab_agent::baselines::{
    evaluate_policy_observed, metaheuristic_step, random_action, MetaheuristicKind,
    PolicyEvaluation, SearchBudget,
};
use feederlab_agent::ddpg::{train_observed, DdpgAgent};
use feederlab_agent::encoder::{Encoder, MgAstgcn, MlpEncoder};
use feederlab_agent::env::{ActionBounds, Environment};
use feederlab_grid::case::{load_case, GeneratorKind, NetworkCase};
use feederlab_grid::graph::build_matrices;
use feederlab_tensor::{grad_check, ParamStore, Tensor};

use crate::config::{EncoderChoice, PolicyChoice, RunConfig};
use crate::logs::{CsvLogger, RunDir};
use crate::seeds::stream_seed;
use crate::CliError;

fn load_network(config: &RunConfig) -> Result<Rc<NetworkCase>, CliError> {
    let file = File::open(&config.case)
        .map_err(|e| CliError::Config(format!("cannot open case `{}`: {e}", config.case)))?;
    let case = load_case(file).map_err(|e| CliError::Config(format!("{e}")))?;
    Ok(Rc::new(case))
}

fn build_encoder(
    config: &RunConfig,
    case: &NetworkCase,
) -> Result<Rc<RefCell<Encoder>>, CliError> {
    let seed = stream_seed(config.seed, "encoder-init");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let feature_dim = case.feature_dim();
    let encoder = match config.encoder {
        EncoderChoice::None => Encoder::None,
        EncoderChoice::MgAstgcn => {
            let matrices = build_matrices(case);
            Encoder::MgAstgcn(MgAstgcn::new(
                &matrices,
                feature_dim,
                (config.env.t_recent, config.env.t_daily, config.env.t_weekly),
                config.encoder_config(),
                &mut rng,
            ))
        }
        EncoderChoice::Mlp => {
            // Parameter count matched to the graph encoder it replaces.
            let matrices = build_matrices(case);
            let reference = MgAstgcn::new(
                &matrices,
                feature_dim,
                (config.env.t_recent, config.env.t_daily, config.env.t_weekly),
                config.encoder_config(),
                &mut rng,
            );
            let target = reference.store.scalar_count();
            Encoder::Mlp(MlpEncoder::matched(
                case.n_buses() * feature_dim,
                config.encoder_net.output_dim,
                target,
                &mut rng,
            ))
        }
    };
    Ok(Rc::new(RefCell::new(encoder)))
}

struct Workbench {
    case: Rc<NetworkCase>,
    env: Environment,
    encoder: Rc<RefCell<Encoder>>,
}

fn build_workbench(config: &RunConfig) -> Result<Workbench, CliError> {
    let case = load_network(config)?;
    let encoder = build_encoder(config, &case)?;
    let env = Environment::new(Rc::clone(&case), config.env_config(), Rc::clone(&encoder));
    Ok(Workbench { case, env, encoder })
}

fn build_agent(config: &RunConfig, bench: &Workbench) -> DdpgAgent {
    let bounds = ActionBounds::from_case(&bench.case, config.env.control_mode);
    DdpgAgent::new(
        bench.env.state_dim(),
        bounds,
        Rc::clone(&bench.encoder),
        config.ddpg_config(),
        stream_seed(config.seed, "agent-init"),
    )
}

fn rng_state_json(config: &RunConfig) -> String {
    let streams: Vec<(&str, u64)> = [
        "encoder-init",
        "agent-init",
        "train-env",
        "eval-env",
        "search",
        "fault",
    ]
    .iter()
    .map(|label| (*label, stream_seed(config.seed, label)))
    .collect();
    let mut obj = serde_json::Map::new();
    obj.insert("master_seed".into(), serde_json::json!(config.seed));
    let mut map = serde_json::Map::new();
    for (label, seed) in streams {
        map.insert(label.into(), serde_json::json!(seed));
    }
    obj.insert("streams".into(), serde_json::Value::Object(map));
    serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("json")
}

fn write_common_artifacts(dir: &RunDir, config: &RunConfig) -> Result<(), CliError> {
    dir.write("config.toml", &config.snapshot())?;
    dir.write("rng_state.json", &rng_state_json(config))?;
    Ok(())
}

fn metrics_json(eval: &PolicyEvaluation) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "score": eval.metrics.score,
        "alpha_vol": eval.metrics.alpha_vol,
        "alpha_rer": eval.metrics.alpha_rer,
        "mean_decision_seconds": eval.mean_decision_seconds,
    }))
    .expect("json")
}

/// Train a DDPG agent, evaluate it, and persist the checkpoint plus logs.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dir = RunDir::create(out)?;
    write_common_artifacts(&dir, config)?;
    let mut bench = build_workbench(config)?;
    let mut agent = build_agent(config, &bench);

    let mut csv = CsvLogger::new(&bench.case, config.env.control_mode);
    let log = train_observed(
        &mut bench.env,
        &mut agent,
        config.episodes,
        stream_seed(config.seed, "train-env"),
        |episode, step, _action, rec| csv.record(episode, step, rec),
    );
    let (steps, episodes) = csv.finish();
    dir.write("steps.csv", &steps)?;
    dir.write("episodes.csv", &episodes)?;

    let mut curve = String::from("episode,return,window_mean\n");
    for (i, (r, w)) in log
        .episode_rewards
        .iter()
        .zip(&log.window_means)
        .enumerate()
    {
        curve.push_str(&format!("{i},{r},{w}\n"));
    }
    dir.write("training_curve.csv", &curve)?;

    agent
        .save(&dir.join("checkpoint"))
        .map_err(|e| CliError::Numerical(format!("checkpoint save failed: {e}")))?;
    let (noise_seed, noise_pos) = agent.noise_state();
    let manifest = serde_json::to_string_pretty(&serde_json::json!({
        "config_hash": config.config_hash(),
        "noise_seed_hex": hex(&noise_seed),
        "noise_word_pos": noise_pos.to_string(),
        "episodes_trained": config.episodes,
    }))
    .expect("json");
    dir.write("checkpoint/meta.json", &manifest)?;

    // Exploration-free evaluation of the trained policy.
    let mut csv = CsvLogger::new(&bench.case, config.env.control_mode);
    let eval = evaluate_policy_observed(
        &mut bench.env,
        |_, state| agent.act(state, false),
        config.evaluation.n_eval,
        config.evaluation.t_end,
        stream_seed(config.seed, "eval-env"),
        |episode, step, _action, rec| csv.record(episode, step, rec),
    );
    let (steps, episodes) = csv.finish();
    dir.write("eval_steps.csv", &steps)?;
    dir.write("eval_episodes.csv", &episodes)?;
    dir.write("metrics.json", &metrics_json(&eval))?;
    ensure_finite(eval.metrics.score)?;
    println!(
        "train: {} episodes on {} -> SCORE {:.3}, alpha_vol {:.4}%, alpha_rer {:.2}%",
        config.episodes, bench.case.name, eval.metrics.score, eval.metrics.alpha_vol,
        eval.metrics.alpha_rer
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn ensure_finite(value: f64) -> Result<(), CliError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CliError::Numerical("non-finite metric".into()))
    }
}

/// Build the configured policy. DDPG loads the checkpoint when one is given,
/// otherwise trains for `config.episodes` first.
fn prepare_ddpg(config: &RunConfig, bench: &mut Workbench) -> Result<DdpgAgent, CliError> {
    let mut agent = build_agent(config, bench);
    if config.checkpoint.is_empty() {
        train_observed(
            &mut bench.env,
            &mut agent,
            config.episodes,
            stream_seed(config.seed, "train-env"),
            |_, _, _, _| {},
        );
    } else {
        agent
            .load_parameters(Path::new(&config.checkpoint))
            .map_err(|e| CliError::Config(format!("checkpoint load failed: {e}")))?;
    }
    Ok(agent)
}

/// Evaluate the configured policy and write metrics plus step logs.
pub fn cmd_eval(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dir = RunDir::create(out)?;
    write_common_artifacts(&dir, config)?;
    let mut bench = build_workbench(config)?;

    let mut csv = CsvLogger::new(&bench.case, config.env.control_mode);
    let eval_seed = stream_seed(config.seed, "eval-env");
    let eval = match config.policy {
        PolicyChoice::Ddpg => {
            let mut agent = prepare_ddpg(config, &mut bench)?;
            evaluate_policy_observed(
                &mut bench.env,
                |_, state| agent.act(state, false),
                config.evaluation.n_eval,
                config.evaluation.t_end,
                eval_seed,
                |episode, step, _action, rec| csv.record(episode, step, rec),
            )
        }
        PolicyChoice::Random => {
            let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, "search"));
            let bounds = ActionBounds::from_case(&bench.case, config.env.control_mode);
            evaluate_policy_observed(
                &mut bench.env,
                |_, _| random_action(&bounds, &mut rng),
                config.evaluation.n_eval,
                config.evaluation.t_end,
                eval_seed,
                |episode, step, _action, rec| csv.record(episode, step, rec),
            )
        }
        PolicyChoice::Hho | PolicyChoice::Gwo => {
            let kind = if config.policy == PolicyChoice::Hho {
                MetaheuristicKind::HarrisHawks
            } else {
                MetaheuristicKind::GreyWolf
            };
            let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, "search"));
            let bounds = ActionBounds::from_case(&bench.case, config.env.control_mode);
            let budget = SearchBudget {
                population: config.search.population,
                iterations: config.search.iterations,
            };
            evaluate_policy_observed(
                &mut bench.env,
                |env, _state| {
                    let sample = env.peek_sample();
                    let mut objective = |action: &[f64]| {
                        env.evaluate_action(&env.action_to_dispatch(action), &sample)
                    };
                    metaheuristic_step(kind, &mut objective, &bounds, &budget, &mut rng)
                        .best_action
                },
                config.evaluation.n_eval,
                config.evaluation.t_end,
                eval_seed,
                |episode, step, _action, rec| csv.record(episode, step, rec),
            )
        }
    };
    let (steps, episodes) = csv.finish();
    dir.write("steps.csv", &steps)?;
    dir.write("episodes.csv", &episodes)?;
    dir.write("metrics.json", &metrics_json(&eval))?;
    ensure_finite(eval.metrics.score)?;
    println!(
        "eval [{:?}] on {}: SCORE {:.3}, alpha_vol {:.4}%, alpha_rer {:.2}%, {:.6} s/decision",
        config.policy,
        bench.case.name,
        eval.metrics.score,
        eval.metrics.alpha_vol,
        eval.metrics.alpha_rer,
        eval.mean_decision_seconds
    );
    Ok(())
}

/// Sweep simultaneous generator-fault counts and measure recovery times.
pub fn cmd_fault_test(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dir = RunDir::create(out)?;
    write_common_artifacts(&dir, config)?;
    let mut bench = build_workbench(config)?;
    let mut agent = prepare_ddpg(config, &mut bench)?;

    let n_gens = bench.case.generators.len();
    let max_faults = config.fault.max_faults.min(n_gens);
    let mut rows = String::from("faults,seed,recovery_steps\n");
    let mut means = vec![0.0_f64; max_faults];

    for seed_idx in 0..config.fault.n_seeds {
        let fault_seed = stream_seed(config.seed, &format!("fault-{seed_idx}"));
        let mut order_rng = ChaCha12Rng::seed_from_u64(fault_seed);
        // Nested fault sets per seed: the k-fault set contains the (k-1) set.
        let mut order: Vec<usize> = (0..n_gens).collect();
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut order_rng, 0..=i);
            order.swap(i, j);
        }
        for faults in 1..=max_faults {
            bench.env.reset(fault_seed.wrapping_add(faults as u64));
            // Let the policy settle into a supported operating point.
            for _ in 0..config.fault.settle_steps {
                let state = bench.env.current_state();
                let action = agent.act(&state, false);
                let dispatch = bench.env.action_to_dispatch(&action);
                bench.env.step(&dispatch);
            }
            bench.env.inject_fault(&order[..faults]);
            let steps = bench.env.measure_recovery(
                |_, state| agent.act(state, false),
                config.fault.horizon,
            );
            bench.env.clear_faults();
            means[faults - 1] += steps as f64;
            rows.push_str(&format!("{faults},{seed_idx},{steps}\n"));
        }
    }
    dir.write("fault_recovery.csv", &rows)?;

    let mut summary = String::from("faults,mean_recovery_steps\n");
    for (i, total) in means.iter().enumerate() {
        summary.push_str(&format!(
            "{},{}\n",
            i + 1,
            total / config.fault.n_seeds as f64
        ));
    }
    dir.write("fault_summary.csv", &summary)?;
    println!("fault-test: wrote {}", dir.join("fault_recovery.csv").display());
    Ok(())
}

/// Train and evaluate once per weight value; one metrics row per point.
pub fn cmd_sweep_weights(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dir = RunDir::create(out)?;
    write_common_artifacts(&dir, config)?;
    let mut rows = String::from("target,value,score,alpha_vol,alpha_rer\n");
    for value in &config.sweep.values {
        let mut point = config.clone();
        match config.sweep.target.as_str() {
            "w_vol" => point.weights.w_vol = *value,
            "w_rer" => point.weights.w_rer = *value,
            other => {
                return Err(CliError::Config(format!("unknown sweep target `{other}`")));
            }
        }
        point.episodes = config.sweep.episodes;
        let mut bench = build_workbench(&point)?;
        let mut agent = build_agent(&point, &bench);
        train_observed(
            &mut bench.env,
            &mut agent,
            point.episodes,
            stream_seed(point.seed, "train-env"),
            |_, _, _, _| {},
        );
        let eval = evaluate_policy_observed(
            &mut bench.env,
            |_, state| agent.act(state, false),
            point.evaluation.n_eval,
            point.evaluation.t_end,
            stream_seed(point.seed, "eval-env"),
            |_, _, _, _| {},
        );
        ensure_finite(eval.metrics.score)?;
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            config.sweep.target,
            value,
            eval.metrics.score,
            eval.metrics.alpha_vol,
            eval.metrics.alpha_rer
        ));
    }
    dir.write("sweep.csv", &rows)?;
    println!("sweep-weights: wrote {}", dir.join("sweep.csv").display());
    Ok(())
}

/// Print system characteristics of the configured case.
pub fn cmd_case_info(config: &RunConfig) -> Result<(), CliError> {
    let case = load_network(config)?;
    let thermal = case.count_kind(GeneratorKind::Thermal);
    let wind = case.count_kind(GeneratorKind::Wind);
    let solar = case.count_kind(GeneratorKind::Solar);
    println!("case: {}", case.name);
    println!("buses: {}", case.n_buses());
    println!("branches: {}", case.branches.len());
    println!("thermal generators: {thermal}");
    println!("wind turbines: {wind}");
    println!("solar pv generators: {solar}");
    println!("base voltage (kV): {}", case.base_kv);
    println!("base apparent power (MVA): {}", case.base_mva);
    println!("total load active power (MW): {:.3}", case.total_load_p_mw());
    println!(
        "total load reactive power (MVAR): {:.3}",
        case.total_load_q_mvar()
    );
    println!("node feature dimension: {}", case.feature_dim());
    Ok(())
}

/// Finite-difference gradient verification across the learnable modules.
pub fn cmd_grad_check(config: &RunConfig) -> Result<(), CliError> {
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut report = |module: &str, err: f64| {
        println!("grad-check {module}: max rel err {err:.3e}");
        worst = worst.max(err);
    };

    // Dense network path (actor/critic shapes in miniature).
    let seed = stream_seed(config.seed, "grad-check");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.add_uniform("w1", &[6, 12], 6, &mut rng);
    store.add_uniform("b1", &[12], 6, &mut rng);
    store.add_uniform("w2", &[12, 3], 12, &mut rng);
    store.add_uniform("b2", &[3], 12, &mut rng);
    let x = Tensor::uniform_fan_in(&[4, 6], 1, &mut rng);
    let r = grad_check(
        &mut store,
        |store, tape| {
            let xv = tape.constant(x.clone());
            let w1 = tape.param(store.lookup("w1").unwrap());
            let b1 = tape.param(store.lookup("b1").unwrap());
            let w2 = tape.param(store.lookup("w2").unwrap());
            let b2 = tape.param(store.lookup("b2").unwrap());
            let h = tape.matmul(xv, w1)?;
            let h = tape.add_row_broadcast(h, b1)?;
            let h = tape.tanh(h);
            let y = tape.matmul(h, w2)?;
            let y = tape.add_row_broadcast(y, b2)?;
            let s = tape.mul(y, y)?;
            Ok(tape.reduce_mean(s))
        },
        1e-5,
    )
    .map_err(|e| CliError::Numerical(format!("{e}")))?;
    report("dense-network", r.max_rel_err);

    // Encoder path on a miniature graph.
    let mini = miniature_case();
    let matrices = build_matrices(&mini);
    let enc_config = feederlab_agent::encoder::EncoderConfig {
        chebyshev_order: 3,
        channels: 2,
        n_components: 2,
        temporal_kernel: 3,
        output_dim: 5,
    };
    let enc = MgAstgcn::new(&matrices, mini.feature_dim(), (4, 3, 2), enc_config, &mut rng);
    let segments = synthetic_segments(mini.feature_dim(), mini.n_buses(), &mut rng);
    let mut store = enc.store.clone();
    let r = grad_check(
        &mut store,
        |_, tape| {
            let y = enc.forward(tape, &segments)?;
            Ok(tape.reduce_sum(y))
        },
        1e-5,
    )
    .map_err(|e| CliError::Numerical(format!("{e}")))?;
    report("graph-encoder", r.max_rel_err);

    // Temporal convolution path in isolation.
    let mut store = ParamStore::new();
    store.add_uniform("kernel", &[3, 2, 3], 6, &mut rng);
    store.add_uniform("bias", &[3], 6, &mut rng);
    let x = Tensor::uniform_fan_in(&[6, 2, 2], 1, &mut rng);
    let r = grad_check(
        &mut store,
        |store, tape| {
            let xv = tape.constant(x.clone());
            let k = tape.param(store.lookup("kernel").unwrap());
            let b = tape.param(store.lookup("bias").unwrap());
            let y = tape.conv1d_time(xv, k, b)?;
            let t = tape.tanh(y);
            Ok(tape.reduce_mean(t))
        },
        1e-5,
    )
    .map_err(|e| CliError::Numerical(format!("{e}")))?;
    report("temporal-conv", r.max_rel_err);

    if worst < tol {
        println!("grad-check passed: worst {worst:.3e} < {tol:.0e}");
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: worst relative error {worst:.3e} >= {tol:.0e}"
        )))
    }
}

fn miniature_case() -> NetworkCase {
    use feederlab_grid::case::{Branch, Bus};
    NetworkCase {
        name: "mini".into(),
        base_mva: 100.0,
        base_kv: 12.66,
        buses: (0..4)
            .map(|id| Bus {
                id,
                load_p: 0.5,
                load_q: 0.2,
                v_min: 0.95,
                v_max: 1.05,
                is_slack: id == 0,
            })
            .collect(),
        branches: (0..3)
            .map(|i| Branch {
                from: i,
                to: i + 1,
                r: 0.02,
                x: 0.04,
                s_max: 0.5,
            })
            .collect(),
        generators: vec![],
        slack_bus: 0,
    }
}

fn synthetic_segments(
    f: usize,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> feederlab_agent::env::SegmentSet {
    let fill = |t: usize, rng: &mut ChaCha12Rng| {
        let data = (0..f * n * t)
            .map(|_| rand::Rng::random_range(rng, 0.2..1.0))
            .collect();
        Tensor::new(vec![f, n, t], data).expect("segment shape")
    };
    feederlab_agent::env::SegmentSet {
        recent: fill(4, rng),
        daily: fill(3, rng),
        weekly: fill(2, rng),
    }
}
