use geoprior_core::eikonal::{fast_march_traced, SpeedField};
use geoprior_core::geodesic::{build_seeds, compose_channels, SeedPolicies, SeedPolicy};
use geoprior_core::metrics::hausdorff;
use geoprior_core::morphology::{dilate, erode, StructuringElement};
use geoprior_core::noise::{synthesize_noisy, NoiseLevel, NoiseSpec};
use geoprior_core::synth::{generate_phantom, PhantomSpec};
use geoprior_core::{Class, Dims, Grid, Spacing};
use proptest::prelude::*;

fn phantom_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: Dims::new(32, 32, 3),
        seed,
        ..PhantomSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn geodesic_channels_respect_support_and_seeds(seed in 0u64..1000, index in 0u64..50) {
        let labels = generate_phantom(&phantom_spec(seed), index).unwrap().labels;
        let policies = SeedPolicies::default();
        let g = compose_channels(&labels, &policies, labels.spacing()).unwrap();
        for (c, class) in Class::FOREGROUND.iter().enumerate() {
            let ch = g.map.channel(c);
            let mask = labels.mask(*class);
            for (&v, &m) in ch.data().iter().zip(mask.data()) {
                prop_assert!((0.0..=1.0).contains(&v));
                if !m {
                    prop_assert_eq!(v, 0.0);
                }
            }
            for [x, y, z] in build_seeds(&mask, policies.for_class(*class)).unwrap() {
                prop_assert_eq!(*ch.get(x, y, z), 0.0);
            }
        }
        prop_assert_eq!(&g, &compose_channels(&labels, &policies, labels.spacing()).unwrap());
    }

    #[test]
    fn noise_support_bound_and_determinism(
        seed in 0u64..1000,
        index in 0u64..50,
        level in prop_oneof![Just(NoiseLevel::L1), Just(NoiseLevel::L2)],
        p in 0.0f64..=1.0,
        rng_seed in any::<u64>(),
    ) {
        let labels = generate_phantom(&phantom_spec(seed), index).unwrap().labels;
        let spec = NoiseSpec { pepper_prob: p, rng_seed, ..NoiseSpec::for_level(level) };
        let noisy = synthesize_noisy(&labels, &spec).unwrap();
        let se = StructuringElement::Disk(spec.erosion_radius);
        for class in Class::FOREGROUND {
            let clean = labels.mask(class);
            let n = noisy.mask(class);
            prop_assert!(n.is_subset_of(&dilate(&clean, se).unwrap()));
            prop_assert!(erode(&clean, se).unwrap().is_subset_of(&n));
        }
        prop_assert_eq!(noisy, synthesize_noisy(&labels, &spec).unwrap());
    }

    #[test]
    fn hausdorff_grows_with_dilation(x0 in 4usize..8, w in 1usize..6, y0 in 4usize..8, h in 1usize..6, sx in 0.5f64..2.0) {
        let spacing = Spacing::new(sx, 1.0, 1.0).unwrap();
        let a = Grid::from_fn(Dims::new(20, 20, 1), spacing, |x, y, _| {
            (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y)
        });
        let d1 = dilate(&a, StructuringElement::Disk(1)).unwrap();
        let d2 = dilate(&d1, StructuringElement::Disk(1)).unwrap();
        let h1 = hausdorff(&a, &d1, spacing).unwrap().unwrap();
        let h2 = hausdorff(&a, &d2, spacing).unwrap().unwrap();
        prop_assert!(h1 <= h2);
    }

    #[test]
    fn skeleton_march_accepts_in_time_order(seed in 0u64..1000, index in 0u64..50, rng_seed in any::<u64>()) {
        let labels = generate_phantom(&phantom_spec(seed), index).unwrap().labels;
        let noisy = synthesize_noisy(&labels, &NoiseSpec { rng_seed, ..NoiseSpec::for_level(NoiseLevel::L2) }).unwrap();
        for class in Class::FOREGROUND {
            let mask = noisy.mask(class);
            if mask.is_empty_mask() {
                continue;
            }
            let seeds = build_seeds(&mask, SeedPolicy::Skeleton).unwrap();
            let march = fast_march_traced::<f64>(&mask, &seeds, &SpeedField::Uniform, noisy.spacing()).unwrap();
            let t = march.times.data();
            prop_assert!(march.accepted.windows(2).all(|w| t[w[0]] <= t[w[1]]));
        }
    }
}
