mod common;

use cincgan::archive;
use cincgan::training::*;
use cincgan::Error;

fn phase1(t: &common::Toy, nets: &Networks, steps: u64) -> TrainState {
    let mut s = TrainState::new(&t.cfg, nets);
    train_phase1(&mut s, &t.cfg, nets, &t.split, steps, &mut RunHooks::default()).unwrap();
    s
}

#[test]
fn phase1_resume_is_bit_exact() {
    let t = common::toy(&[]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let straight = phase1(&t, &nets, 20);

    let mut half = phase1(&t, &nets, 10);
    let path = t.dir.path().join("half.ckpt");
    save_checkpoint(&half, &t.cfg, &path).unwrap();
    let (mut resumed, cfg) = load_checkpoint(&path).unwrap();
    assert_eq!(cfg, t.cfg);
    assert_eq!(resumed, half);
    train_phase1(&mut resumed, &t.cfg, &nets, &t.split, 10, &mut RunHooks::default()).unwrap();
    train_phase1(&mut half, &t.cfg, &nets, &t.split, 10, &mut RunHooks::default()).unwrap();
    assert_eq!(resumed, straight);
    assert_eq!(half, straight);
}

#[test]
fn phase2_resume_is_bit_exact() {
    let t = common::toy(&[]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let (sr, _) = pretrain_sr(&t.cfg, &nets, &t.split, 3, &mut RunHooks::default()).unwrap();
    let mut a = phase1(&t, &nets, 3);
    a.begin_phase2(&t.cfg, &nets, sr, Structure::Full).unwrap();
    let mut b = a.clone();
    train_phase2(&mut a, &t.cfg, &nets, &t.split, 8, &mut RunHooks::default()).unwrap();

    train_phase2(&mut b, &t.cfg, &nets, &t.split, 4, &mut RunHooks::default()).unwrap();
    let path = t.dir.path().join("p2.ckpt");
    save_checkpoint(&b, &t.cfg, &path).unwrap();
    let (mut b, _) = load_checkpoint(&path).unwrap();
    train_phase2(&mut b, &t.cfg, &nets, &t.split, 4, &mut RunHooks::default()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a, b);
}

#[test]
fn periodic_checkpoints_are_written() {
    let t = common::toy(&["checkpoint_interval=3"]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let path = t.dir.path().join("auto.ckpt");
    let mut s = TrainState::new(&t.cfg, &nets);
    let mut hooks = RunHooks {
        log: None,
        checkpoint: Some(&path),
        config: Some(&t.cfg),
    };
    train_phase1(&mut s, &t.cfg, &nets, &t.split, 4, &mut hooks).unwrap();
    let (saved, _) = load_checkpoint(&path).unwrap();
    assert_eq!(saved.iteration, 3);
}

#[test]
fn checkpoint_version_and_corruption_are_detected() {
    let t = common::toy(&[]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let s = TrainState::new(&t.cfg, &nets);
    let path = t.dir.path().join("s.ckpt");
    save_checkpoint(&s, &t.cfg, &path).unwrap();

    let (mut meta, tensors) = archive::load::<f32>(&path).unwrap();
    meta["checkpoint_version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
    let refs: Vec<_> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    let future = t.dir.path().join("future.ckpt");
    archive::save(&future, &meta, &refs).unwrap();
    match load_checkpoint(&future) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("expected a version error, got {:?}", other.map(|_| ())),
    }

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let broken = t.dir.path().join("broken.ckpt");
    std::fs::write(&broken, bytes).unwrap();
    assert!(matches!(load_checkpoint(&broken), Err(Error::Checkpoint(_))));
}

#[test]
fn structures_instantiate_only_their_networks() {
    let t = common::toy(&[]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let base = phase1(&t, &nets, 2);
    assert_eq!(base.census(), vec![NetId::G1, NetId::G2, NetId::D1]);
    let (sr, _) = pretrain_sr(&t.cfg, &nets, &t.split, 1, &mut RunHooks::default()).unwrap();
    let mut digests = Vec::new();
    for s in Structure::ALL {
        let mut st = base.clone();
        st.begin_phase2(&t.cfg, &nets, sr.clone(), s).unwrap();
        assert_eq!(st.census(), s.active_networks(), "{s:?}");
        let before: Vec<_> = st.census().iter().map(|id| st.params(*id).unwrap().fingerprint()).collect();
        train_phase2(&mut st, &t.cfg, &nets, &t.split, 2, &mut RunHooks::default()).unwrap();
        assert_eq!(st.census(), s.active_networks(), "{s:?}");
        // Every instantiated network is trained.
        for (id, fp) in st.census().iter().zip(before) {
            assert_ne!(st.params(*id).unwrap().fingerprint(), fp, "{s:?}: {id:?} untouched");
        }
        let last = st.history.back().unwrap();
        assert_eq!(last.lr_side.is_some(), s != Structure::Structure1);
        assert_eq!(last.d1.is_some(), matches!(s, Structure::Full | Structure::Structure2));
        assert_eq!(last.d2.is_some(), s != Structure::Structure2);
        digests.push(st.data_digest);
    }
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn phase_guards() {
    let t = common::toy(&[]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let mut s = TrainState::new(&t.cfg, &nets);
    assert!(train_phase2(&mut s, &t.cfg, &nets, &t.split, 1, &mut RunHooks::default()).is_err());
    let (sr, _) = pretrain_sr(&t.cfg, &nets, &t.split, 0, &mut RunHooks::default()).unwrap();
    s.begin_phase2(&t.cfg, &nets, sr.clone(), Structure::Full).unwrap();
    assert!(s.begin_phase2(&t.cfg, &nets, sr, Structure::Full).is_err());
    assert!(train_phase1(&mut s, &t.cfg, &nets, &t.split, 1, &mut RunHooks::default()).is_err());
    assert!(Structure::parse("structure4").is_err());
}

#[test]
fn training_is_stable_and_sr_pretraining_fits() {
    let t = common::toy(&["optim.phase0.lr_init=1e-3"]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let (sr, losses) = pretrain_sr(&t.cfg, &nets, &t.split, 100, &mut RunHooks::default()).unwrap();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "SR L1 went from {head} to {tail}");
    let mut s = phase1(&t, &nets, 50);
    s.begin_phase2(&t.cfg, &nets, sr, Structure::Full).unwrap();
    train_phase2(&mut s, &t.cfg, &nets, &t.split, 50, &mut RunHooks::default()).unwrap();
    for id in s.census() {
        assert!(s.params(id).unwrap().all_finite(), "{id:?}");
    }
    assert_eq!(s.history.len(), 100);
    assert_eq!(s.history.back().unwrap().phase, 2);
}

#[test]
fn run_log_records_phase_settings() {
    let t = common::toy(&["log_interval=2"]);
    let nets = Networks::from_config(&t.cfg).unwrap();
    let path = t.dir.path().join("log.jsonl");
    let mut log = RunLog::append(&path).unwrap();
    let mut s = TrainState::new(&t.cfg, &nets);
    let mut hooks = RunHooks {
        log: Some(&mut log),
        ..Default::default()
    };
    train_phase1(&mut s, &t.cfg, &nets, &t.split, 5, &mut hooks).unwrap();
    drop(hooks);
    drop(log);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["type"], "phase-start");
    assert_eq!(lines[0]["weights"]["w1"], 10.0);
    let its: Vec<u64> = lines[1..].iter().map(|v| v["iteration"].as_u64().unwrap()).collect();
    assert_eq!(its, vec![0, 2, 4]);
}
