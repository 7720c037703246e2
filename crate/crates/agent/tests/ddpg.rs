//! Agent mechanics: action bounds, TD targets, update directions, soft
//! updates, and replay statistics.

use std::cell::RefCell;
use std::rc::Rc;

use feederlab_agent::ddpg::{DdpgAgent, DdpgConfig, ReplayBuffer, Transition};
use feederlab_agent::encoder::Encoder;
use feederlab_agent::env::ActionBounds;
use feederlab_tensor::grad_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn tiny_config() -> DdpgConfig {
    DdpgConfig {
        hidden_layers: 2,
        hidden_width: 16,
        batch_size: 4,
        warmup_transitions: 4,
        replay_capacity: 64,
        ..DdpgConfig::default()
    }
}

fn bounds() -> ActionBounds {
    ActionBounds {
        low: vec![0.0, 0.95, 0.0],
        high: vec![1.0, 1.05, 0.5],
    }
}

fn agent(seed: u64) -> DdpgAgent {
    DdpgAgent::new(
        6,
        bounds(),
        Rc::new(RefCell::new(Encoder::None)),
        tiny_config(),
        seed,
    )
}

fn random_transition(rng: &mut ChaCha12Rng, terminal: bool) -> Transition {
    Transition {
        state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        action: vec![
            rng.random_range(0.0..1.0),
            rng.random_range(0.95..1.05),
            rng.random_range(0.0..0.5),
        ],
        reward: rng.random_range(-1.0..1.0),
        next_state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        terminal,
    }
}

#[test]
fn deterministic_actions_without_exploration() {
    let mut a = agent(5);
    let state = vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5];
    let a1 = a.act(&state, false);
    let a2 = a.act(&state, false);
    assert_eq!(a1, a2);
}

#[test]
fn actions_stay_inside_bounds_with_and_without_noise() {
    let mut a = agent(7);
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let b = bounds();
    for _ in 0..200 {
        let state: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        for explore in [false, true] {
            let action = a.act(&state, explore);
            for (i, v) in action.iter().enumerate() {
                assert!(*v >= b.low[i] - 1e-12 && *v <= b.high[i] + 1e-12);
            }
        }
    }
}

#[test]
fn td_targets_terminal_and_discount_arithmetic() {
    let mut a = agent(9);
    let mut rng = ChaCha12Rng::seed_from_u64(10);

    // Terminal transition: q = r.
    let mut t = random_transition(&mut rng, true);
    t.reward = -10.0;
    assert_eq!(a.td_targets(std::slice::from_ref(&t)), vec![-10.0]);

    // Force the target critic to output exactly 2: zero all parameters,
    // then set the output bias.
    for id in a.critic_target.ids().collect::<Vec<_>>() {
        for v in a.critic_target.value_mut(id).data_mut() {
            *v = 0.0;
        }
    }
    let out_bias = a.critic_target.lookup("critic.b2").unwrap();
    a.critic_target.value_mut(out_bias).data_mut()[0] = 2.0;

    let mut t = random_transition(&mut rng, false);
    t.reward = 1.0;
    let q = a.td_targets(std::slice::from_ref(&t))[0];
    assert!((q - (1.0 + 0.99 * 2.0)).abs() < 1e-12, "q = {q}");

    // gamma = 0 degenerates to the reward.
    a.config.gamma = 0.0;
    let q = a.td_targets(std::slice::from_ref(&t))[0];
    assert_eq!(q, 1.0);
}

#[test]
fn critic_loss_decreases_on_fixed_batch() {
    let mut a = agent(11);
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let batch: Vec<Transition> = (0..8).map(|_| random_transition(&mut rng, false)).collect();
    let targets: Vec<f64> = (0..8).map(|i| (i as f64) * 0.1 - 0.4).collect();
    let mut last = f64::MAX;
    for step in 0..10 {
        let loss = a.update_critic(&batch, &targets);
        assert!(
            loss < last,
            "loss must strictly decrease on a fixed batch (step {step}: {loss} vs {last})"
        );
        last = loss;
    }
}

#[test]
fn critic_at_targets_keeps_parameters_fixed() {
    let mut a = agent(13);
    let mut rng = ChaCha12Rng::seed_from_u64(14);
    let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng, false)).collect();
    // The critic's own outputs as targets: zero loss, zero gradient.
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| a.q_value(&a.critic_store, &t.state, &t.action))
        .collect();
    let before: Vec<Vec<f64>> = a
        .critic_store
        .ids()
        .map(|id| a.critic_store.value(id).data().to_vec())
        .collect();
    let loss = a.update_critic(&batch, &targets);
    assert!(loss < 1e-26, "loss should vanish at the targets: {loss}");
    for (id, b) in a.critic_store.ids().zip(&before) {
        assert_eq!(a.critic_store.value(id).data(), b.as_slice());
    }
}

#[test]
fn actor_step_does_not_decrease_mean_q_on_frozen_critic() {
    let mut cfg = tiny_config();
    cfg.rho = 0.0; // soft updates become no-ops; critic is untouched
    cfg.actor_lr = 1e-5;
    let mut a = DdpgAgent::new(6, bounds(), Rc::new(RefCell::new(Encoder::None)), cfg, 15);
    let mut rng = ChaCha12Rng::seed_from_u64(16);
    let batch: Vec<Transition> = (0..16).map(|_| random_transition(&mut rng, false)).collect();

    let mean_q = |agent: &mut DdpgAgent, batch: &[Transition]| -> f64 {
        let qs: Vec<f64> = batch
            .iter()
            .map(|t| {
                let action = agent.act(&t.state, false);
                agent.q_value(&agent.critic_store, &t.state, &action)
            })
            .collect();
        qs.iter().sum::<f64>() / qs.len() as f64
    };

    let before = mean_q(&mut a, &batch);
    a.update_actor_and_targets(&batch);
    let after = mean_q(&mut a, &batch);
    assert!(
        after >= before - 1e-12,
        "actor step decreased mean Q: {before} -> {after}"
    );
}

#[test]
fn targets_converge_geometrically_when_live_is_frozen() {
    let mut a = agent(17);
    // Distance after k soft updates shrinks by exactly (1 - rho)^k.
    let rho = a.config.rho;
    let dist = |a: &DdpgAgent| -> f64 {
        let mut acc: f64 = 0.0;
        for id in a.actor_store.ids() {
            for (x, y) in a
                .actor_store
                .value(id)
                .data()
                .iter()
                .zip(a.actor_target.value(id).data())
            {
                acc += (x - y) * (x - y);
            }
        }
        acc.sqrt()
    };
    // Desynchronize the target first.
    for id in a.actor_target.ids().collect::<Vec<_>>() {
        for v in a.actor_target.value_mut(id).data_mut() {
            *v += 0.5;
        }
    }
    let d0 = dist(&a);
    let k = 5;
    for _ in 0..k {
        a.soft_update_targets();
    }
    let dk = dist(&a);
    let expected = (1.0 - rho).powi(k) * d0;
    assert!(
        (dk - expected).abs() < 1e-9 * d0.max(1.0),
        "{dk} vs {expected}"
    );
}

#[test]
fn rho_one_makes_targets_exact_copies() {
    let mut a = agent(19);
    a.config.rho = 1.0;
    for id in a.actor_target.ids().collect::<Vec<_>>() {
        for v in a.actor_target.value_mut(id).data_mut() {
            *v = -3.0;
        }
    }
    a.soft_update_targets();
    for id in a.actor_store.ids() {
        assert_eq!(
            a.actor_store.value(id).data(),
            a.actor_target.value(id).data()
        );
    }
}

#[test]
fn replay_wraparound_and_uniformity() {
    let mut buffer = ReplayBuffer::new(8);
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    for i in 0..20 {
        let mut t = random_transition(&mut rng, false);
        t.reward = i as f64;
        buffer.push(t);
    }
    assert_eq!(buffer.len(), 8);
    // Only the last 8 transitions remain.
    let rewards: Vec<f64> = (0..8).map(|i| buffer.get(i).reward).collect();
    for r in &rewards {
        assert!(*r >= 12.0, "stale transition survived: {r}");
    }

    // Uniform sampling: counts within 3-sigma multinomial bounds.
    let draws = 1_000_000;
    let mut counts = [0usize; 8];
    for idx in buffer.sample_indices(draws, &mut rng) {
        counts[idx] += 1;
    }
    let p = 1.0 / 8.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        let dev = (c as f64 - draws as f64 * p).abs();
        assert!(dev < 3.0 * sigma, "count {c} deviates {dev} > {}", 3.0 * sigma);
    }
}

#[test]
fn all_parameters_finite_after_updates_with_extreme_rewards() {
    let mut a = agent(23);
    let mut rng = ChaCha12Rng::seed_from_u64(24);
    let batch: Vec<Transition> = (0..8)
        .map(|_| {
            let mut t = random_transition(&mut rng, false);
            t.reward = 1e6; // extreme reward to provoke large gradients
            t
        })
        .collect();
    let targets = a.td_targets(&batch);
    a.update_critic(&batch, &targets);
    a.update_actor_and_targets(&batch);
    for store in [&a.actor_store, &a.critic_store] {
        for id in store.ids() {
            assert!(store.value(id).data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn critic_gradient_matches_finite_differences_on_small_batch() {
    let mut rng = ChaCha12Rng::seed_from_u64(25);
    let a = agent(27);
    let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng, false)).collect();
    let targets: Vec<f64> = (0..4).map(|i| 0.2 * i as f64).collect();

    // Rebuild the critic loss against a perturbable clone of the store.
    let mut store = a.critic_store.clone();
    let report = grad_check(
        &mut store,
        |store, tape| {
            let b = batch.len();
            let d = batch[0].state.len() + batch[0].action.len();
            let mut input = Vec::with_capacity(b * d);
            for t in &batch {
                input.extend_from_slice(&t.state);
                input.extend_from_slice(&t.action);
            }
            let x = tape.constant(feederlab_tensor::Tensor::new(vec![b, d], input)?);
            // Three-layer forward mirroring the critic architecture.
            let mut h = x;
            for i in 0..3 {
                let w = tape.param(store.lookup(&format!("critic.w{i}")).unwrap());
                let bv = tape.param(store.lookup(&format!("critic.b{i}")).unwrap());
                h = tape.matmul(h, w)?;
                h = tape.add_row_broadcast(h, bv)?;
                if i < 2 {
                    h = tape.relu(h);
                }
            }
            let t = tape.constant(feederlab_tensor::Tensor::new(
                vec![b, 1],
                targets.clone(),
            )?);
            let d = tape.sub(h, t)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.reduce_mean(sq))
        },
        1e-5,
    )
    .unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "max rel err {}",
        report.max_rel_err
    );
}
