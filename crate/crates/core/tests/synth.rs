use moemo::context::ContextDims;
use moemo::motion::{movement_vectors, JOINTS};
use moemo::synth::{
    bayes_gap, generate, Clutter, SynthConfig, CONTEXT_ARCHETYPES, INTERACTION_TABLE, MOTION_ARCHETYPES,
    MOTION_ONLY_TABLE,
};

const DIMS: ContextDims = ContextDims { rows: 2, cols: 4 };

fn small(n_clips: usize) -> SynthConfig {
    SynthConfig {
        n_clips,
        context_dims: DIMS,
        ..SynthConfig::default()
    }
}

/// Mean over transitions of the start-frame half of every movement vector,
/// i.e. the mean of frames `0..f-1`.
fn mean_pose(vectors: &moemo::motion::MovementVectorSeq) -> Vec<f64> {
    let n = vectors.transitions();
    let mut out = vec![0.0; JOINTS * 3];
    for t in 0..n {
        for j in 0..JOINTS {
            for c in 0..3 {
                out[j * 3 + c] += vectors.vector(t, j)[c] / n as f64;
            }
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn motion_only_labels_are_separable_without_noise() {
    let cfg = SynthConfig {
        noise_sigma: 0.0,
        interaction_fraction: 0.0,
        ..small(300)
    };
    let data = generate(&cfg).unwrap();
    let rest: Vec<Vec<f64>> = (0..MOTION_ARCHETYPES).map(|m| data.archetypes.rest_pose(m)).collect();
    for clip in &data.clips {
        let mv = movement_vectors(&clip.clip.persons[0]).unwrap();
        let pose = mean_pose(&mv);
        let nearest = (0..MOTION_ARCHETYPES)
            .min_by(|&a, &b| dist2(&pose, &rest[a]).total_cmp(&dist2(&pose, &rest[b])))
            .unwrap();
        assert_eq!(MOTION_ONLY_TABLE[nearest], clip.label.index());
    }
}

/// Best accuracy of any rule `motion -> label`, found by trying all 6^6.
fn brute_force_motion_only(cfg: &SynthConfig) -> f64 {
    let weights = cfg.cell_weights();
    let total: u64 = weights.iter().flatten().flatten().sum();
    let mut best = 0;
    for code in 0..6usize.pow(MOTION_ARCHETYPES as u32) {
        let mut rule = [0; MOTION_ARCHETYPES];
        let mut c = code;
        for r in rule.iter_mut() {
            *r = c % 6;
            c /= 6;
        }
        let hit: u64 = (0..MOTION_ARCHETYPES)
            .map(|m| (0..CONTEXT_ARCHETYPES).map(|s| weights[m][s][rule[m]]).sum::<u64>())
            .sum();
        best = best.max(hit);
    }
    best as f64 / total as f64
}

#[test]
fn bayes_gap_matches_brute_force() {
    for fraction in [0.0, 1.0 / 6.0, 0.5, 5.0 / 6.0, 1.0] {
        let cfg = SynthConfig {
            interaction_fraction: fraction,
            ..SynthConfig::default()
        };
        let (with, without) = bayes_gap(&cfg).unwrap();
        // Every cell has a single label, so knowing the scene is enough.
        assert_eq!(with, 1.0);
        assert!((without - brute_force_motion_only(&cfg)).abs() < 1e-12, "fraction {fraction}");
        assert!(with >= without);
    }
    let all = SynthConfig {
        interaction_fraction: 1.0,
        ..SynthConfig::default()
    };
    assert!((bayes_gap(&all).unwrap().1 - 1.0 / 3.0).abs() < 1e-12);
    let none = SynthConfig {
        interaction_fraction: 0.0,
        ..SynthConfig::default()
    };
    let (w, m) = bayes_gap(&none).unwrap();
    assert_eq!(w - m, 0.0);
    let (w, m) = bayes_gap(&SynthConfig::default()).unwrap();
    assert!(w - m >= 0.25);
}

#[test]
fn generated_labels_follow_the_shipped_table() {
    let cfg = small(600);
    let data = generate(&cfg).unwrap();
    let k = cfg.interaction_motions();
    assert_eq!(k, 3);
    for clip in &data.clips {
        let (m, c) = (clip.motion_archetype, clip.context_archetype);
        let expected = if m < k { INTERACTION_TABLE[m][c] } else { MOTION_ONLY_TABLE[m] };
        assert_eq!(clip.label.index(), expected);
        clip.clip.validate().unwrap();
        let map = clip.context_map();
        assert_eq!((map.frames(), map.dims()), (16, DIMS));
    }
    // The same motion carries different emotions under different scenes.
    for row in INTERACTION_TABLE {
        let mut r = row.to_vec();
        r.sort_unstable();
        r.dedup();
        assert_eq!(r.len(), CONTEXT_ARCHETYPES);
    }
}

#[test]
fn classes_are_balanced() {
    for n in [6, 60, 61, 1200] {
        let data = generate(&small(n)).unwrap();
        let mut counts = [0usize; 6];
        for c in &data.clips {
            counts[c.label.index()] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{n}: {counts:?}");
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = generate(&small(30)).unwrap();
    let b = generate(&small(30)).unwrap();
    for (x, y) in a.clips.iter().zip(&b.clips) {
        assert_eq!(x.clip, y.clip);
        let (mx, my) = (x.context_map(), y.context_map());
        assert!(mx.data().iter().zip(my.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let c = generate(&SynthConfig { seed: 1, ..small(30) }).unwrap();
    assert!(a.clips.iter().zip(&c.clips).any(|(x, y)| x.clip != y.clip));
}

#[test]
fn clutter_modes() {
    let scenes = SynthConfig {
        context_purity: 0.3,
        ..small(60)
    };
    let background = SynthConfig {
        clutter: Clutter::Background,
        ..scenes.clone()
    };
    let (a, b) = (generate(&scenes).unwrap(), generate(&background).unwrap());
    let mut other_scene = 0;
    for (x, y) in a.clips.iter().zip(&b.clips) {
        for (&s, &t) in x.frame_scenes.iter().zip(&y.frame_scenes) {
            assert!(s < CONTEXT_ARCHETYPES);
            assert!(t == y.context_archetype || t == CONTEXT_ARCHETYPES);
            other_scene += usize::from(s != x.context_archetype);
        }
    }
    assert!(other_scene > 0);
}

#[test]
fn invalid_configs() {
    let bad = [
        SynthConfig {
            context_purity: 1.1,
            ..small(6)
        },
        SynthConfig { n_clips: 0, ..small(6) },
        SynthConfig { frames: 1, ..small(6) },
        SynthConfig {
            classes: 7,
            ..small(6)
        },
    ];
    for cfg in bad {
        assert!(generate(&cfg).is_err());
        assert!(bayes_gap(&cfg).is_err());
    }
}
