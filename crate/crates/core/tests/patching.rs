use nnfn::patch::{aggregate, block_match_with_distances, extract_key_patches, form_patch_matrix};
use nnfn::{ColorImage, PatchCoord};
use proptest::prelude::*;

fn image_strategy(max: usize) -> impl Strategy<Value = ColorImage> {
    (4..=max, 4..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..255.0, h * w * 3)
            .prop_map(move |data| ColorImage::new(h, w, data).unwrap())
    })
}

/// Brute force over every position of the clamped window.
fn oracle_match(
    img: &ColorImage,
    key: PatchCoord,
    p: usize,
    s: usize,
    m: usize,
) -> Vec<(PatchCoord, f64)> {
    let (h, w) = img.dims();
    let range = |center: usize, extent: usize| {
        let lo = center as isize - (s / 2) as isize;
        let hi = lo + s as isize - 1;
        (lo.max(0) as usize, (hi.min((extent - p) as isize)) as usize)
    };
    let (r0, r1) = range(key.row, h);
    let (c0, c1) = range(key.col, w);
    let dist = |a: PatchCoord| {
        let mut d = 0.0;
        for i in 0..p {
            for j in 0..p {
                for ch in 0..3 {
                    let diff =
                        img.get(a.row + i, a.col + j, ch) - img.get(key.row + i, key.col + j, ch);
                    d += diff * diff;
                }
            }
        }
        d
    };
    let mut all: Vec<(PatchCoord, f64)> = (r0..=r1)
        .flat_map(|r| (c0..=c1).map(move |c| PatchCoord::new(r, c)))
        .map(|c| (c, dist(c)))
        .collect();
    all.sort_by(|a, b| {
        (a.0 != key)
            .cmp(&(b.0 != key))
            .then(a.1.total_cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });
    all.truncate(m);
    all
}

#[test]
fn stripes_group_by_phase() {
    // columns repeat with period 4, so same-phase patches are exact copies
    let img = ColorImage::from_fn(30, 30, |_, c, ch| ((c % 4) * 50 + ch * 3) as f64);
    let key = PatchCoord::new(12, 13);
    let got = block_match_with_distances(&img, key, 4, 12, 20).unwrap();
    assert_eq!(got[0], (key, 0.0));
    let zeros: Vec<PatchCoord> = got
        .iter()
        .filter(|(_, d)| *d == 0.0)
        .map(|(c, _)| *c)
        .collect();
    assert!(zeros.iter().all(|c| c.col % 4 == key.col % 4));
    // the window (rows 6..=17, cols 7..=18) holds 36 exact copies, more than M
    assert_eq!(zeros.len(), 20);
    assert_eq!(got, oracle_match(&img, key, 4, 12, 20));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_match_agrees_with_brute_force(
        img in image_strategy(24),
        p in 1usize..=4,
        s_extra in 0usize..10,
        m in 1usize..40,
        kr in 0.0f64..1.0,
        kc in 0.0f64..1.0,
    ) {
        let (h, w) = img.dims();
        let key = PatchCoord::new(
            (kr * (h - p + 1) as f64) as usize,
            (kc * (w - p + 1) as f64) as usize,
        );
        let s = p + s_extra;
        let got = block_match_with_distances(&img, key, p, s, m).unwrap();
        let want = oracle_match(&img, key, p, s, m);
        prop_assert_eq!(got.len(), want.len());
        prop_assert_eq!(got[0].0, key);
        for ((gc, gd), (wc, wd)) in got.iter().zip(&want) {
            prop_assert_eq!(gc, wc);
            prop_assert!((gd - wd).abs() <= 1e-9 * wd.max(1.0));
        }
        prop_assert!(got.windows(2).skip(1).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn patch_matrix_is_linear(
        (a, b) in (4usize..=12, 4usize..=12).prop_flat_map(|(h, w)| {
            let img = move || prop::collection::vec(-50.0f64..50.0, h * w * 3)
                .prop_map(move |d| ColorImage::new(h, w, d).unwrap());
            (img(), img())
        }),
        x in -3.0f64..3.0,
        y in -3.0f64..3.0,
    ) {
        let (h, w) = a.dims();
        let coords: Vec<PatchCoord> = extract_key_patches(&a, 3, 2).unwrap();
        let combo = ColorImage::new(
            h,
            w,
            a.data().iter().zip(b.data()).map(|(u, v)| x * u + y * v).collect(),
        ).unwrap();
        let ma = form_patch_matrix(&a, &coords, 3).unwrap().data;
        let mb = form_patch_matrix(&b, &coords, 3).unwrap().data;
        let mc = form_patch_matrix(&combo, &coords, 3).unwrap().data;
        let diff = (&ma * x + &mb * y - mc).amax();
        prop_assert!(diff <= 1e-12, "{}", diff);
    }

    #[test]
    fn aggregation_matches_per_pixel_average(
        img in image_strategy(20),
        extra in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..12),
        seed in any::<u64>(),
    ) {
        let p = 3;
        let (h, w) = img.dims();
        let mut coords = extract_key_patches(&img, p, p).unwrap();
        coords.extend(extra.iter().map(|&(r, c)| PatchCoord::new(
            (r * (h - p + 1) as f64) as usize,
            (c * (w - p + 1) as f64) as usize,
        )));
        // one patch per group, each carrying arbitrary values
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f64 / 7.0
        };
        let groups: Vec<_> = coords
            .iter()
            .map(|&c| {
                let g = form_patch_matrix(&img, &[c], p).unwrap();
                let data = g.data.map(|_| next());
                g.with_data(data).unwrap()
            })
            .collect();

        let mut sum = vec![0.0; h * w * 3];
        let mut count = vec![0usize; h * w];
        for g in &groups {
            let at = g.coords[0];
            for ch in 0..3 {
                for j in 0..p {
                    for i in 0..p {
                        let v = g.data[(ch * p * p + j * p + i, 0)];
                        let pix = (at.row + i) * w + at.col + j;
                        sum[pix * 3 + ch] += v;
                        if ch == 0 {
                            count[pix] += 1;
                        }
                    }
                }
            }
        }
        let out = aggregate(&groups, (h, w)).unwrap();
        for (idx, v) in out.data().iter().enumerate() {
            let want = sum[idx] / count[idx / 3] as f64;
            prop_assert!((v - want).abs() <= 1e-12);
        }
    }
}
