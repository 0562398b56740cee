use ndarray::{array, Array2};
use proptest::prelude::*;

use super::*;
use crate::crossmodal::LossWeights;
use crate::datamodel::tests::toy_ugc;
use crate::datamodel::{genre_distribution, MicroVideo, MusicClip, MusicId};
use crate::synthgen::{generate_pgc, generate_ugc, split_strong_generalization, GenConfig, SplitTag};
use crate::teacher::{train_teacher, TeacherModel};

fn gen_config() -> GenConfig {
    GenConfig {
        n_music: 60,
        n_videos: 300,
        n_uploaders: 30,
        n_pgc_pairs: 100,
        f_video: 6,
        f_music: 6,
        ..GenConfig::default()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 4,
        epochs: 4,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

/// (train, val) UGC splits of a small synthetic dataset.
fn splits() -> (Dataset, Dataset) {
    let (ugc, _) = generate_ugc(&gen_config()).unwrap();
    let spec = split_strong_generalization(&ugc, (0.8, 0.1, 0.1), 0).unwrap();
    (
        spec.materialize(&ugc, SplitTag::Train).unwrap(),
        spec.materialize(&ugc, SplitTag::Val).unwrap(),
    )
}

fn teacher() -> TeacherModel {
    let pgc = generate_pgc(&gen_config()).unwrap();
    train_teacher(&pgc, &train_config(), 1).unwrap().0
}

fn pref(v: &[f64]) -> GenrePreference {
    GenrePreference::new(v.to_vec()).unwrap()
}

#[test]
fn batch_average_examples() {
    let mut prefs = BTreeMap::new();
    prefs.insert(UploaderId(0), pref(&[1.0, 0.0, 0.0, 0.0]));
    prefs.insert(UploaderId(1), pref(&[0.0, 1.0, 0.0, 0.0]));
    assert_eq!(
        batch_average_preference(&[UploaderId(1)], &prefs).unwrap(),
        prefs[&UploaderId(1)]
    );
    // repeated uploaders count once
    let both = [UploaderId(0), UploaderId(1), UploaderId(1)];
    assert_eq!(
        batch_average_preference(&both, &prefs).unwrap(),
        pref(&[0.5, 0.5, 0.0, 0.0])
    );
    assert!(matches!(batch_average_preference(&[], &prefs), Err(Error::Empty(_))));
    assert!(batch_average_preference(&[UploaderId(9)], &prefs).is_err());
}

#[test]
fn whole_dataset_batch_equals_global_average() {
    let (train, _) = splits();
    let prefs = uploader_preferences(&train).unwrap();
    let everyone: Vec<UploaderId> = train
        .interactions()
        .iter()
        .filter_map(|t| t.uploader_id)
        .collect();
    let batch = batch_average_preference(&everyone, &prefs).unwrap();
    let global = global_average_preference(&train).unwrap();
    for (a, b) in batch.probs().iter().zip(global.probs()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn global_average_matches_two_pass_oracle() {
    let (train, _) = splits();
    // independent recount from raw interactions
    let n_g = train.n_genres();
    let mut counts: BTreeMap<UploaderId, Vec<f64>> = BTreeMap::new();
    for t in train.interactions() {
        let g = train.music_clip(t.music_id).unwrap().genre;
        counts.entry(t.uploader_id.unwrap()).or_insert_with(|| vec![0.0; n_g])[g] += 1.0;
    }
    let mut oracle = vec![0.0; n_g];
    for c in counts.values() {
        let total: f64 = c.iter().sum();
        for g in 0..n_g {
            oracle[g] += c[g] / total;
        }
    }
    let global = global_average_preference(&train).unwrap();
    for g in 0..n_g {
        assert!((global.probs()[g] - oracle[g] / counts.len() as f64).abs() <= 1e-12);
    }
}

#[test]
fn identical_uploaders_give_their_distribution() {
    let ds = toy_ugc(3, &[0, 1, 2], &[&[0, 1], &[1, 0], &[0, 1]]);
    let g = global_average_preference(&ds).unwrap();
    assert_eq!(g, genre_distribution(&ds.uploaders()[0], &ds).unwrap());
}

proptest! {
    #[test]
    fn batch_average_ignores_order(perm_seed in any::<u64>(), n in 1usize..8) {
        use rand::seq::SliceRandom;
        let mut prefs = BTreeMap::new();
        for u in 0..8u32 {
            let raw: Vec<f64> = (0..4).map(|g| 1.0 + ((u as usize * 7 + g * 3) % 5) as f64).collect();
            let s: f64 = raw.iter().sum();
            prefs.insert(UploaderId(u), pref(&raw.iter().map(|x| x / s).collect::<Vec<_>>()));
        }
        let mut ids: Vec<UploaderId> = (0..n as u32).map(UploaderId).collect();
        let a = batch_average_preference(&ids, &prefs).unwrap();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let b = batch_average_preference(&ids, &prefs).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn small_deconfounder() -> Deconfounder {
    Deconfounder {
        genre_table: array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]],
        projection: crate::nncore::Linear {
            weight: array![[1.0, 0.0, 0.5, 0.0], [0.0, 1.0, 0.0, -0.5]],
            bias: array![0.1, -0.1],
        },
    }
}

#[test]
fn deconfound_examples() {
    let dc = small_deconfounder();
    let one_hot = GenrePreference::one_hot(3, 1).unwrap();
    let out = deconfound(&[0.3, 0.4], &one_hot, &dc).unwrap();
    assert_eq!(out.extended, vec![0.3, 0.4, 2.0, 0.5]);
    assert_eq!(out.projected, vec![0.3 + 1.0 + 0.1, 0.4 - 0.25 - 0.1]);

    let zero = Deconfounder {
        genre_table: Array2::zeros((2, 3)),
        ..dc.clone()
    };
    let out = deconfound(&[0.3, 0.4], &pref(&[0.2, 0.3, 0.5]), &zero).unwrap();
    assert_eq!(out.extended, vec![0.3, 0.4, 0.0, 0.0]);

    let p1 = pref(&[0.2, 0.3, 0.5]);
    let p2 = pref(&[0.6, 0.4, 0.0]);
    let mid = GenrePreference::mean([&p1, &p2]).unwrap();
    let zu = |p: &GenrePreference| deconfound(&[0.0, 0.0], p, &dc).unwrap().extended[2..].to_vec();
    let (a, b, m) = (zu(&p1), zu(&p2), zu(&mid));
    for i in 0..2 {
        assert!((m[i] - 0.5 * (a[i] + b[i])).abs() < 1e-12);
    }
    assert!(deconfound(&[0.0], &p1, &dc).is_err());
    assert!(deconfound(&[0.0, 0.0], &pref(&[0.5, 0.5]), &dc).is_err());
}

fn noise(rows: usize, d: usize, salt: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, d), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37 + salt).sin())
}

#[test]
fn zero_teacher_weight_reduces_to_base_objective() {
    let (train, _) = splits();
    let t = teacher();
    let guided = StudentOptions {
        teacher_weight_video: 0.0,
        teacher_weight_music: 0.0,
        ..StudentOptions::default()
    };
    let model = StudentModel::new(6, 6, train.n_genres(), train_config(), guided.clone(), 3).unwrap();
    let ctx = StudentContext::new(&train, Some(&t), &guided).unwrap();
    let rows: Vec<usize> = (0..20).collect();
    let l = student_loss(&model, &ctx, &rows, noise(20, 4, 0.0), noise(20, 4, 1.0)).unwrap();
    assert_eq!((l.kt_video, l.kt_music), (0.0, 0.0));
    let plain = StudentContext::new(&train, None, &guided).unwrap();
    let base = student_loss(&model, &plain, &rows, noise(20, 4, 0.0), noise(20, 4, 1.0)).unwrap();
    assert_eq!(l, base);
    let sum = l.recon_video + l.recon_music + l.kl_video + l.kl_music + l.matching;
    assert!((l.total - sum).abs() < 1e-12);
}

#[test]
fn matching_posteriors_have_zero_transfer_terms() {
    let (train, _) = splits();
    let options = StudentOptions {
        deconfounder: DeconfounderMode::BatchAverage,
        ..StudentOptions::default()
    };
    let model = StudentModel::new(6, 6, train.n_genres(), train_config(), options.clone(), 3).unwrap();
    // a teacher whose encoders are the student's
    let mut net = model.net().clone();
    net.deconfounder = None;
    net.video_decoder = crate::nncore::Decoder::zeros(4, 6);
    let mut t = TeacherModel::from_net(net, train_config()).unwrap();
    t.freeze();
    let ctx = StudentContext::new(&train, Some(&t), &options).unwrap();
    let rows: Vec<usize> = (0..16).collect();
    let l = student_loss(&model, &ctx, &rows, noise(16, 4, 0.2), noise(16, 4, 0.9)).unwrap();
    assert_eq!((l.kt_video, l.kt_music), (0.0, 0.0));
}

#[test]
fn single_pair_by_hand() {
    // d = 2, F = 2, N_g = 3, all encoder weights zero: posteriors are N(b, 1)
    let ds = toy_ugc(3, &[0, 1, 2], &[&[1]]);
    let mut model = StudentModel::new(
        3,
        2,
        3,
        TrainConfig {
            latent_dim: 2,
            ..TrainConfig::default()
        },
        StudentOptions {
            teacher_weight_video: 0.5,
            teacher_weight_music: 2.0,
            ..StudentOptions::default()
        },
        0,
    )
    .unwrap();
    let dims = model.net.dims();
    model.net = CrossModalNet::zeros(dims, 0.0);
    model.net.video_encoder.mean_head.bias = array![0.2, -0.1];
    model.net.music_encoder.mean_head.bias = array![0.5, 0.3];
    model.net.music_encoder.log_var_head.bias = array![0.0, (0.25f64).ln()];
    model.net.video_decoder.layer.weight = array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]];
    model.net.deconfounder = Some(small_deconfounder());
    let mut t = TeacherModel::from_net(
        CrossModalNet::zeros(
            NetDims {
                f_video: 3,
                f_music: 2,
                latent: 2,
                n_genres: None,
            },
            0.0,
        ),
        TrainConfig {
            latent_dim: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    t.freeze();
    let ctx = StudentContext::new(&ds, Some(&t), model.options()).unwrap();
    let nv = array![[0.5, -0.5]];
    let nm = array![[1.0, 2.0]];
    let l = student_loss(&model, &ctx, &[0], nv, nm).unwrap();

    let video = ds.videos()[0].feature.as_slice().to_vec();
    let music = ds.music()[1].feature.as_slice().to_vec();
    // uploader's preference is one-hot on genre 1 → z̄_u = column 1 = (2, 0.5)
    let zm = [0.5 + 1.0, 0.3 + 0.5 * 2.0];
    let v_hat = [zm[0] + 2.0, zm[1] + 0.5, 0.0];
    let recon_v = (0..3).map(|i| (v_hat[i] - video[i]).powi(2)).sum::<f64>() / 3.0;
    let recon_m = (0..2).map(|i| music[i].powi(2)).sum::<f64>() / 2.0;
    let kl_v = 0.5 * (0.2f64.powi(2) + 0.1f64.powi(2));
    let kl_m = 0.5 * (0.25 + 0.09) + 0.5 * (0.25 - 1.0 - (0.25f64).ln());
    // KL(N(0,1) ‖ N(mu, s)) summed per dimension
    let kt = |mu: [f64; 2], s: [f64; 2]| {
        (0..2)
            .map(|i| s[i].ln() + (1.0 + mu[i] * mu[i]) / (2.0 * s[i] * s[i]) - 0.5)
            .sum::<f64>()
    };
    let kt_v = kt([0.2, -0.1], [1.0, 1.0]);
    let kt_m = kt([0.5, 0.3], [1.0, 0.5]);
    let expected = recon_v + recon_m + kl_v + kl_m + 0.5 * kt_v + 2.0 * kt_m;
    assert!((l.kt_video - kt_v).abs() < 1e-6);
    assert!((l.kt_music - kt_m).abs() < 1e-6);
    assert_eq!(l.matching, 0.0);
    assert!((l.total - expected).abs() < 1e-6, "{} vs {expected}", l.total);
}

#[test]
fn unfrozen_teacher_and_wrong_kind_rejected() {
    let (train, val) = splits();
    let mut t = teacher();
    let unfrozen = TeacherModel::from_net(t.net().clone(), train_config()).unwrap();
    let opts = StudentOptions::default();
    assert!(matches!(
        train_student(&train, &val, Some(&unfrozen), &train_config(), &opts, 0),
        Err(Error::NotFrozen)
    ));
    let pgc = generate_pgc(&gen_config()).unwrap();
    assert!(matches!(
        train_student(&pgc, &val, Some(&t), &train_config(), &opts, 0),
        Err(Error::KindMismatch { .. })
    ));
    assert!(t.net_mut().is_err());
}

#[test]
fn backbone_path_is_the_teacher_objective() {
    let (train, _) = splits();
    let opts = StudentOptions::backbone();
    let model = StudentModel::new(6, 6, train.n_genres(), train_config(), opts.clone(), 8).unwrap();
    let ctx = StudentContext::new(&train, None, &opts).unwrap();
    let backbone = TeacherModel::from_net(model.net().clone(), train_config()).unwrap();
    for b in 0..5 {
        let rows: Vec<usize> = (b * 10..b * 10 + 10).collect();
        let (nv, nm) = (noise(10, 4, b as f64), noise(10, 4, 0.5 + b as f64));
        let s = student_loss(&model, &ctx, &rows, nv.clone(), nm.clone()).unwrap();
        let mut batch = ctx.pairs.batch(&rows, 4);
        batch.noise_video = nv;
        batch.noise_music = nm;
        let t = backbone.loss_on(&batch).unwrap();
        assert_eq!(s.total.to_bits(), t.total.to_bits());
    }
}

#[test]
fn ips_weights_are_normalized_inverse_propensities() {
    let ds = toy_ugc(2, &[0, 1], &[&[0, 0, 0, 1], &[1]]);
    let opts = StudentOptions {
        ips: true,
        ..StudentOptions::backbone()
    };
    let ctx = StudentContext::new(&ds, None, &opts).unwrap();
    let ex = ctx.extras(&opts, &[0, 3, 4]).unwrap();
    // propensities 0.75, 0.25, 1.0
    let raw = [1.0 / 0.75, 4.0, 1.0];
    let mean = raw.iter().sum::<f64>() / 3.0;
    let w = ex.sample_weights.unwrap();
    for i in 0..3 {
        assert!((w[i] - raw[i] / mean).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_and_leaves_teacher_untouched() {
    let (train, val) = splits();
    let t = teacher();
    let before = t.param_hash();
    let opts = StudentOptions {
        teacher_weight_video: 1.0,
        teacher_weight_music: 1.0,
        ..StudentOptions::default()
    };
    let (a, log) = train_student(&train, &val, Some(&t), &train_config(), &opts, 5).unwrap();
    let (b, _) = train_student(&train, &val, Some(&t), &train_config(), &opts, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(t.param_hash(), before);
    assert_eq!(a.teacher_hash(), Some(before.as_str()));
    assert_eq!(log.epochs.len(), 4);
    let best = log.epochs[log.best_epoch - 1].validation;
    assert!(best <= log.epochs[0].validation);
    assert!(log.epochs.iter().all(|e| e.train.kt_video > 0.0));
}

#[test]
fn checkpoint_round_trip() {
    let (train, val) = splits();
    let (s, _) = train_student(&train, &val, None, &train_config(), &StudentOptions::backbone(), 2)
        .unwrap();
    let back = StudentModel::from_checkpoint(&s.to_checkpoint("x")).unwrap();
    assert_eq!(back, s);
    let opts = StudentOptions {
        teacher_weight_video: 0.0,
        teacher_weight_music: 0.0,
        ..StudentOptions::default()
    };
    let (s, _) = train_student(&train, &val, None, &train_config(), &opts, 2).unwrap();
    let back = StudentModel::from_checkpoint(&s.to_checkpoint("x")).unwrap();
    assert_eq!(back, s);
}

fn trained_student() -> (StudentModel, Dataset) {
    let (train, val) = splits();
    let opts = StudentOptions {
        teacher_weight_video: 0.0,
        teacher_weight_music: 0.0,
        ..StudentOptions::default()
    };
    let (s, _) = train_student(&train, &val, None, &train_config(), &opts, 2).unwrap();
    (s, val)
}

#[test]
fn ranking_edge_cases() {
    let (s, val) = trained_student();
    let video: &MicroVideo = &val.videos()[0];
    let one = &val.music()[..1];
    let r = rank_music(&s, video, one, 15).unwrap();
    assert_eq!(r.items.len(), 1);
    assert_eq!(r.items[0].0, one[0].music_id);
    let all = rank_music(&s, video, val.music(), 10_000).unwrap();
    assert_eq!(all.items.len(), val.music().len());
    assert!(all.items.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(matches!(rank_music(&s, video, &[], 5), Err(Error::Empty(_))));
}

#[test]
fn ranking_matches_brute_force() {
    let (s, val) = trained_student();
    let pool: Vec<MusicClip> = val.music()[..10].to_vec();
    let global = s.global_preference().unwrap().clone();
    let dc = s.net().deconfounder.as_ref().unwrap();
    for video in &val.videos()[..5] {
        let zv = crate::nncore::encode(&s.net().video_encoder, &video.feature).unwrap();
        let mut oracle: Vec<(MusicId, f64)> = pool
            .iter()
            .map(|c| {
                let zm = crate::nncore::encode(&s.net().music_encoder, &c.feature).unwrap();
                let proj = deconfound(zm.mean(), &global, dc).unwrap().projected;
                (c.music_id, matching_score(zv.mean(), &proj).unwrap())
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got = rank_music(&s, video, &pool, 10).unwrap();
        let ids: Vec<MusicId> = got.items.iter().map(|x| x.0).collect();
        let want: Vec<MusicId> = oracle.iter().map(|x| x.0).collect();
        assert_eq!(ids, want);
    }
}

proptest! {
    #[test]
    fn ordering_invariant_to_positive_scaling(
        scores in prop::collection::vec(-5.0f64..5.0, 1..30),
        c in 0.01f64..100.0,
    ) {
        let mut a: Vec<(MusicId, f64)> =
            scores.iter().enumerate().map(|(i, s)| (MusicId(i as u32), *s)).collect();
        let mut b: Vec<(MusicId, f64)> = a.iter().map(|(m, s)| (*m, s * c)).collect();
        rank::order_by_score(&mut a);
        rank::order_by_score(&mut b);
        let ia: Vec<MusicId> = a.iter().map(|x| x.0).collect();
        let ib: Vec<MusicId> = b.iter().map(|x| x.0).collect();
        prop_assert_eq!(ia, ib);
    }
}

#[test]
fn loss_weights_are_used() {
    let w: LossWeights = train_config().loss_weights();
    assert_eq!(w.matching_config.n_hard, 40);
}
