//! Test-only oracles shared by the integration suites and the acceptance target.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use webtask_core::action::{KeyCombo, ParsedAction, ScrollDirection};
use webtask_core::agent::Termination;
use webtask_core::raster::Raster;
use webtask_core::report::TaskRow;
use webtask_core::task::{Level, Site, SubsetTag};

/// Direct per-window SSIM: every window's Gaussian-weighted moments are
/// summed from scratch, with no separable filtering or shared buffers.
pub fn brute_force_ssim(a: &Raster, b: &Raster) -> f64 {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    let (w, h) = (a.width() as usize, a.height() as usize);
    let luma = |r: &Raster| -> Vec<f64> {
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let [r0, g0, b0] = r.pixel(x as u32, y as u32);
                v.push(0.299 * r0 as f64 + 0.587 * g0 as f64 + 0.114 * b0 as f64);
            }
        }
        v
    };
    let (la, lb) = (luma(a), luma(b));
    let mut win = 11.min(w).min(h);
    if win % 2 == 0 {
        win -= 1;
    }
    let half = (win / 2) as f64;
    let mut weights = vec![0.0; win * win];
    for j in 0..win {
        for i in 0..win {
            let (dx, dy) = (i as f64 - half, j as f64 - half);
            weights[j * win + i] = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);

    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - win) {
        for ox in 0..=(w - win) {
            let (mut ma, mut mb) = (0.0, 0.0);
            for j in 0..win {
                for i in 0..win {
                    let k = (oy + j) * w + ox + i;
                    let wt = weights[j * win + i];
                    ma += wt * la[k];
                    mb += wt * lb[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for j in 0..win {
                for i in 0..win {
                    let k = (oy + j) * w + ox + i;
                    let wt = weights[j * win + i];
                    va += wt * (la[k] - ma).powi(2);
                    vb += wt * (lb[k] - mb).powi(2);
                    cov += wt * (la[k] - ma) * (lb[k] - mb);
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Random image pairs: noise, smooth gradients, and a perturbed copy.
pub fn random_pairs(seed: u64, n: usize) -> Vec<(Raster, Raster)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w = rng.gen_range(11..40u32);
        let h = rng.gen_range(11..40u32);
        let mut a = Raster::filled(w, h, [0, 0, 0]);
        let mut b = Raster::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let base = match i % 3 {
                    0 => [rng.gen(), rng.gen(), rng.gen()],
                    1 => {
                        let v = ((x * 255) / w) as u8;
                        [v, ((y * 255) / h) as u8, v / 2]
                    }
                    _ => [rng.gen_range(100..156), rng.gen_range(100..156), rng.gen_range(100..156)],
                };
                a.put_pixel(x, y, base);
                let jitter = |c: u8, rng: &mut ChaCha8Rng| c.saturating_add(rng.gen_range(0..40)).saturating_sub(20);
                let other = if i % 3 == 0 {
                    [rng.gen(), rng.gen(), rng.gen()]
                } else {
                    [jitter(base[0], &mut rng), jitter(base[1], &mut rng), jitter(base[2], &mut rng)]
                };
                b.put_pixel(x, y, other);
            }
        }
        out.push((a, b));
    }
    out
}

/// Payload text: anything printable except backticks, including brackets.
fn payload() -> impl Strategy<Value = String> {
    "[ -_a-~\\[\\]]{0,24}"
}

fn nonblank_payload() -> impl Strategy<Value = String> {
    "[!-_a-~\\[\\]][ -_a-~\\[\\]]{0,22}[!-_a-~\\[\\]]"
}

fn key_combo() -> impl Strategy<Value = KeyCombo> {
    let key = prop_oneof![
        "[a-z0-9]",
        Just("Enter".to_string()),
        Just("Tab".to_string()),
        Just("ArrowDown".to_string()),
        Just("PageUp".to_string()),
        Just("Delete".to_string()),
    ];
    (
        proptest::sample::subsequence(vec!["Control", "Alt", "Shift", "Meta"], 0..=3),
        key,
    )
        .prop_map(|(mods, key)| {
            let mut s = String::new();
            for m in mods {
                s.push_str(m);
                s.push('+');
            }
            s.push_str(&key);
            KeyCombo::parse(&s).expect("generated combo parses")
        })
}

pub fn any_action() -> impl Strategy<Value = ParsedAction> {
    prop_oneof![
        any::<u32>().prop_map(|id| ParsedAction::Click { id: id as u64 }),
        any::<u32>().prop_map(|id| ParsedAction::Hover { id: id as u64 }),
        (any::<u32>(), payload(), any::<bool>()).prop_map(|(id, text, press_enter)| ParsedAction::Type {
            id: id as u64,
            text,
            press_enter
        }),
        key_combo().prop_map(|keys| ParsedAction::Press { keys }),
        prop_oneof![Just(ScrollDirection::Up), Just(ScrollDirection::Down)]
            .prop_map(|direction| ParsedAction::Scroll { direction }),
        Just(ParsedAction::NewTab),
        (0usize..20).prop_map(|index| ParsedAction::TabFocus { index }),
        Just(ParsedAction::TabClose),
        nonblank_payload().prop_map(|s| ParsedAction::Goto {
            url: format!("http://{}", s.trim())
        }),
        Just(ParsedAction::GoBack),
        Just(ParsedAction::GoForward),
        payload().prop_map(|answer| ParsedAction::Stop { answer }),
    ]
}

fn synthetic_row(id: String, site: Site, success: bool) -> TaskRow {
    TaskRow {
        task_id: id,
        site,
        action_difficulty: Level::Medium,
        visual_difficulty: Level::Medium,
        overall_difficulty: Level::Medium,
        subset_tags: vec![],
        achievable: true,
        score: u8::from(success),
        unevaluated: false,
        steps: 10,
        termination: Termination::Stopped,
    }
}

/// Per-site task totals behind the reference rates, as `(site, tasks)`.
pub const SITE_TOTALS: [(Site, usize); 3] = [(Site::Classifieds, 234), (Site::Reddit, 210), (Site::Shopping, 466)];

/// Rows with `successes[i]` of `SITE_TOTALS[i].1` tasks solved. Difficulty
/// and subset tags cycle so that every breakdown is populated.
pub fn synthetic_rows(successes: [usize; 3]) -> Vec<TaskRow> {
    let mut rows = Vec::new();
    for ((site, total), ok) in SITE_TOTALS.iter().zip(successes) {
        for i in 0..*total {
            let mut r = synthetic_row(format!("{}-{i:04}", site.as_str()), *site, i < ok);
            r.action_difficulty = Level::ALL[i % 3];
            r.visual_difficulty = Level::ALL[(i / 3) % 3];
            r.overall_difficulty = Level::ALL[(i * 7) % 3];
            if i % 4 == 0 {
                r.subset_tags.push(SubsetTag::OcrRequired);
            }
            if i % 5 == 0 {
                r.subset_tags.push(SubsetTag::ImageInput);
            }
            r.steps = i % 31;
            rows.push(r);
        }
    }
    rows
}
