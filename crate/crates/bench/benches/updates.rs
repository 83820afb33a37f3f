use auxrep_core::agent::{Agent, AgentConfig, Algorithm};
use auxrep_core::env::EnvConfig;
use auxrep_core::nn::Matrix;
use auxrep_core::representation::{
    AuxTaskKind, IdentityRepresentation, OfeNet, Representation, RepresentationConfig,
};
use auxrep_bench::{batch, filled_buffer};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn config() -> AgentConfig {
    AgentConfig {
        hidden: vec![64, 64],
        ..AgentConfig::default()
    }
}

fn agent_updates(c: &mut Criterion) {
    let env = EnvConfig::Pendulum {};
    let spec = env.build().unwrap().spec().clone();
    let buf = filled_buffer(&env, 5000, 0);
    let b = batch(&buf, 256, 1);
    let identity = IdentityRepresentation::new(spec.obs_dim, spec.action_dim);
    let ofenet = OfeNet::new(RepresentationConfig::new(AuxTaskKind::Fsp, 2, 10), spec.obs_dim, spec.action_dim, 0).unwrap();
    let mut group = c.benchmark_group("agent_update_pendulum_b256");
    for alg in [Algorithm::Td3, Algorithm::Sac] {
        for (name, rep) in [("raw", &identity as &dyn Representation), ("ofenet", &ofenet)] {
            let agent = Agent::new(alg, &config(), &spec, rep.z_obs_dim(), rep.z_obs_action_dim(), 0).unwrap();
            group.bench_function(format!("{alg}/{name}"), |bencher| {
                bencher.iter_batched_ref(
                    || agent.clone(),
                    |a| a.update(rep, &b).unwrap(),
                    BatchSize::SmallInput,
                )
            });
        }
    }
    group.finish();
}

fn aux_updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("aux_update_b256");
    for (env, label) in [
        (EnvConfig::Pendulum {}, "pendulum"),
        (EnvConfig::LinearChain { n: 32, m: 8 }, "chain32"),
    ] {
        let spec = env.build().unwrap().spec().clone();
        let buf = filled_buffer(&env, 5000, 0);
        let b = batch(&buf, 256, 1);
        let (layers, width) = env.default_representation_size();
        for task in [AuxTaskKind::Rwp, AuxTaskKind::Fsp, AuxTaskKind::Fsdp] {
            let net = OfeNet::new(RepresentationConfig::new(task, layers, width), spec.obs_dim, spec.action_dim, 0).unwrap();
            group.bench_function(format!("{label}/{task}"), |bencher| {
                bencher.iter_batched_ref(|| net.clone(), |n| n.aux_train_step(&b).unwrap(), BatchSize::SmallInput)
            });
        }
    }
    group.finish();
}

fn acting(c: &mut Criterion) {
    let env = EnvConfig::Pendulum {};
    let spec = env.build().unwrap().spec().clone();
    let ofenet = OfeNet::new(RepresentationConfig::new(AuxTaskKind::Fsp, 2, 10), spec.obs_dim, spec.action_dim, 0).unwrap();
    let mut agent = Agent::new(Algorithm::Sac, &config(), &spec, ofenet.z_obs_dim(), ofenet.z_obs_action_dim(), 0).unwrap();
    let obs = Matrix::row_vector(&[1.0f32, 0.0, 0.0]);
    c.bench_function("act_sac_ofenet_single", |bencher| {
        bencher.iter(|| {
            let z = ofenet.encode_obs(&obs).unwrap();
            agent.act(&z, true).unwrap()
        })
    });
}

criterion_group!(benches, agent_updates, aux_updates, acting);
criterion_main!(benches);
