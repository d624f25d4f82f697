use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tfsep_core::dsp::{self, StftConfig, Waveform};
use tfsep_core::loss;
use tfsep_core::metrics::si_snr;
use tfsep_core::mixer::{mix_pair, snr_db};

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn stft_is_linear() {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = noise(&mut rng, 500);
        let b = noise(&mut rng, 500);
        let k: f64 = rng.random_range(-3.0..3.0);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let (sa, sb, ss) = (dsp::stft(&a, &cfg).unwrap(), dsp::stft(&b, &cfg).unwrap(), dsp::stft(&sum, &cfg).unwrap());
        for i in 0..ss.re.data.len() {
            assert!((ss.re.data[i] - sa.re.data[i] - k * sb.re.data[i]).abs() < 1e-10);
            assert!((ss.im.data[i] - sa.im.data[i] - k * sb.im.data[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn frame_count_matches_covered_length() {
    let cfg = StftConfig::default();
    for len in cfg.frame_len..400 {
        let t = cfg.frame_count(len).unwrap();
        assert!(cfg.covered_len(t) <= len);
        assert!(cfg.covered_len(t + 1) > len);
    }
    assert!(cfg.frame_count(cfg.frame_len - 1).is_err());
}

#[test]
fn mixing_hits_requested_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let s1 = Waveform::new(noise(&mut rng, 900), 8000).unwrap();
        let s2 = Waveform::new(noise(&mut rng, 700), 8000).unwrap();
        let snr = rng.random_range(-10.0..10.0);
        let m = mix_pair(&s1, &s2, snr).unwrap();
        assert_eq!(m.mixture.len(), 700);
        assert!((snr_db(&m.sources[0].samples, &m.sources[1].samples) - snr).abs() < 1e-9);
    }
}

#[test]
fn perfect_estimates_give_the_identity_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = vec![noise(&mut rng, 400), noise(&mut rng, 400)];
    let swapped = vec![s[1].clone(), s[0].clone()];
    let r = loss::pit_loss(&s, &swapped).unwrap();
    assert_eq!(r.permutation, vec![1, 0]);
    assert!(r.loss < -70.0);
    assert!(si_snr(&s[0], &s[0]).unwrap() > 70.0);
}
