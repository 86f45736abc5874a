use disaggrl::env::{EnvConfig, ObsMode, VecEnv};
use disaggrl::nn::{load_policy, ObsInput};

fn main() {
    let dir = std::env::temp_dir().join("smoke_probe");
    let (net, _) = load_policy(&dir.join("ckpt_final.dsnn")).unwrap();
    let cfg = EnvConfig { obs_mode: ObsMode::State, ..Default::default() };
    let mut envs = VecEnv::new(cfg, 999, 0, 1).unwrap();
    envs.set_uniform_fraction(0.0);
    for t in 0..100 {
        let obs = envs.observe();
        let out = net.forward(&ObsInput { n: 1, primary: &obs.primary, proprio: &obs.proprio }, None, None).unwrap();
        let s = &envs.states()[0];
        if t % 5 == 0 || s.grasped {
            println!("t {:3} grip ({:.3},{:.3}) obj ({:.3},{:.3}) grasped {} mu [{:+.2},{:+.2},{:+.2}] logstd {:?}",
                t, s.gripper[0], s.gripper[1], s.object[0], s.object[1], s.grasped,
                out.mean[0], out.mean[1], out.mean[2], out.log_std);
        }
        let sb = envs.step(&out.mean).unwrap();
        if sb.dones[0] != 0 { println!("done at t {t}: success {}", sb.successes[0]); break; }
    }
}
