use rehearsal::autodiff::{Graph, Tensor};
use rehearsal::long_term::{distill_loss, train_ltm, LtmConfig};
use rehearsal::rng::seeded;
use rehearsal::short_term::{select_action, train_stm, QFunction, StmConfig};
use rehearsal::toyworld::{rollout, TaskId, TaskSpec};

#[test]
fn normalised_first_task_is_distilled_closely() {
    let task = TaskSpec::new(TaskId::A);
    let stm_config = StmConfig {
        frames: 20_000,
        eval_interval: 20_000,
        eval_episodes: 5,
        ..StmConfig::default()
    };
    let stm = train_stm(&task, &stm_config, 9).unwrap();
    let config = LtmConfig {
        steps: 20_000,
        window: 2_000,
        hidden: stm_config.hidden.clone(),
        normalize: true,
        ..LtmConfig::default()
    };
    let ltm = train_ltm(
        1,
        &stm.network,
        &stm.replay,
        None,
        &config,
        4,
        &mut |_, _| Ok(()),
    )
    .unwrap();
    let stats = ltm.norm_stats.expect("normalisation on");

    // States from fresh episodes the replay never saw.
    let mut held_out = Vec::new();
    let mut rng = seeded(77);
    for k in 0..20 {
        rollout(&task, 1_000_000 + k, &mut rng, |_, obs, rng| {
            held_out.push(obs.to_vec());
            let q = stm.network.q_values(obs).unwrap();
            select_action(&q, 0.2, rng).unwrap()
        })
        .unwrap();
    }
    let x = Tensor::from_rows(&held_out).unwrap();
    let mut g = Graph::new();
    let bound = ltm.network.bind(&mut g, false);
    let loss = distill_loss(&mut g, &x, &ltm.network, &bound, &stm.network, Some(&stats)).unwrap();
    let loss = g.value(loss).item();
    eprintln!(
        "held-out distillation loss {loss} on {} states",
        held_out.len()
    );
    assert!(loss < 1e-2, "{loss}");
}
