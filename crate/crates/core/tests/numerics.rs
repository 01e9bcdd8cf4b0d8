use ino_core::numerics::gradcheck::{check, worst};
use ino_core::numerics::{
    irfft, rfft, spectral_conv, Backend, NumericsError, SplitRng, Tape, Tensor, Var,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `out` against a fixed random tensor so every output entry
/// contributes a distinct weight to the scalar loss.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, NumericsError> {
    let shape = tape.value(&out).shape().to_vec();
    let mut rng = SplitRng::new(seed).rng();
    let w = tape.constant(rand_tensor(&shape, &mut rng));
    let prod = tape.mul(&out, &w)?;
    Ok(tape.sum_all(&prod))
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn assert_grad<F>(name: &str, inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let report = check(inputs, H, f).unwrap();
    let w = worst(&report);
    assert!(w <= TOL, "{name}: worst relative error {w:e} ({report:?})");
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.5]));
    let s = tape.sum_all(&x);
    let g = tape.backward(s).unwrap().wrt(&tape, x);
    assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn squared_norm_gradient_is_twice_x() {
    let data = vec![0.5, -1.5, 2.0];
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(data.clone()));
    let sq = tape.mul(&x, &x).unwrap();
    let s = tape.sum_all(&sq);
    let g = tape.backward(s).unwrap().wrt(&tape, x);
    for (gv, xv) in g.data().iter().zip(&data) {
        assert_eq!(*gv, 2.0 * xv);
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
    let y = tape.scale(&x, 2.0);
    assert!(matches!(tape.backward(y), Err(NumericsError::NonScalarLoss(_))));
}

#[test]
fn unreachable_leaf_gets_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
    let unused = tape.leaf(Tensor::from_vec(vec![3.0]));
    let s = tape.sum_all(&x);
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.wrt(&tape, unused).data(), &[0.0]);
}

#[test]
fn linearity_of_reverse_sweep() {
    // d(f + g) = df + dg
    let mut rng = SplitRng::new(2).rng();
    let x0 = rand_tensor(&[2, 3, 5], &mut rng);
    let w0 = rand_tensor(&[4, 3], &mut rng);
    let b0 = rand_tensor(&[4], &mut rng);
    let grad_of = |which: u8| {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let w = tape.leaf(w0.clone());
        let b = tape.leaf(b0.clone());
        let y = tape.linear_ch(&x, &w, &b).unwrap();
        let f = contract(&mut tape, y, 10).unwrap();
        let r = tape.relu(&y);
        let g = contract(&mut tape, r, 11).unwrap();
        let loss = match which {
            0 => f,
            1 => g,
            _ => tape.add(&f, &g).unwrap(),
        };
        tape.backward(loss).unwrap().wrt(&tape, x)
    };
    let (df, dg, dsum) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..dsum.len() {
        assert!((dsum.data()[i] - df.data()[i] - dg.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut rng = SplitRng::new(3).rng();
    let a = rand_tensor(&[2, 3], &mut rng);
    let b = rand_tensor(&[2, 3], &mut rng);
    assert_grad("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(&v[0], &v[1])?;
        contract(t, y, 1)
    });
    assert_grad("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(&v[0], &v[1])?;
        contract(t, y, 2)
    });
    assert_grad("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(&v[0], &v[1])?;
        contract(t, y, 3)
    });
    assert_grad("scale", &[a.clone()], |t, v| {
        let y = t.scale(&v[0], -1.7);
        contract(t, y, 4)
    });
    assert_grad("relu", &[a.clone()], |t, v| {
        let y = t.relu(&v[0]);
        contract(t, y, 5)
    });
    assert_grad("softmax", &[a.clone()], |t, v| {
        let y = t.softmax_last(&v[0]);
        contract(t, y, 6)
    });
    assert_grad("concat", &[a.clone(), rand_tensor(&[2, 4], &mut rng)], |t, v| {
        let y = t.concat_features(&[&v[0], &v[1]])?;
        contract(t, y, 7)
    });
    let target = rand_tensor(&[2, 3], &mut rng);
    let weight = rand_tensor(&[2, 3], &mut rng).map(f64::abs);
    assert_grad("l1", &[a.clone()], |t, v| t.weighted_l1(&v[0], &target, None, 6.0));
    assert_grad("weighted l1", &[a], |t, v| t.weighted_l1(&v[0], &target, Some(&weight), 3.0));
}

#[test]
fn layer_primitives_match_finite_differences() {
    let mut rng = SplitRng::new(4).rng();
    let x = rand_tensor(&[3, 4, 6], &mut rng);
    assert_grad(
        "linear_ch",
        &[x.clone(), rand_tensor(&[5, 4], &mut rng), rand_tensor(&[5], &mut rng)],
        |t, v| {
            let y = t.linear_ch(&v[0], &v[1], &v[2])?;
            contract(t, y, 8)
        },
    );
    assert_grad(
        "linear",
        &[rand_tensor(&[3, 4], &mut rng), rand_tensor(&[2, 4], &mut rng), rand_tensor(&[2], &mut rng)],
        |t, v| {
            let y = t.linear(&v[0], &v[1], &v[2])?;
            contract(t, y, 9)
        },
    );
    assert_grad(
        "film rank 3",
        &[x.clone(), rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 4], &mut rng)],
        |t, v| {
            let y = t.film(&v[0], &v[1], &v[2])?;
            contract(t, y, 10)
        },
    );
    assert_grad(
        "film rank 2",
        &[rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 4], &mut rng)],
        |t, v| {
            let y = t.film(&v[0], &v[1], &v[2])?;
            contract(t, y, 11)
        },
    );
    let pool_w = rand_tensor(&[3, 6], &mut rng);
    assert_grad("time_pool", &[x.clone()], |t, v| {
        let y = t.time_pool(&v[0], &pool_w)?;
        contract(t, y, 12)
    });
    assert_grad(
        "batch_norm train",
        &[x.clone(), rand_tensor(&[4, 6], &mut rng), rand_tensor(&[4, 6], &mut rng)],
        |t, v| {
            let (y, _) = t.batch_norm_train(&v[0], &v[1], &v[2])?;
            contract(t, y, 13)
        },
    );
    let mean = rand_tensor(&[4, 6], &mut rng);
    let var = rand_tensor(&[4, 6], &mut rng).map(|v| v.abs() + 0.1);
    assert_grad(
        "batch_norm eval",
        &[x, rand_tensor(&[4, 6], &mut rng), rand_tensor(&[4, 6], &mut rng)],
        |t, v| {
            let y = t.batch_norm_eval(&v[0], &v[1], &v[2], &mean, &var)?;
            contract(t, y, 14)
        },
    );
}

#[test]
fn bmm_all_transposes_match_finite_differences() {
    let mut rng = SplitRng::new(5).rng();
    let (m, k, n) = (3, 4, 2);
    for ta in [false, true] {
        for tb in [false, true] {
            let a = if ta { [2, k, m] } else { [2, m, k] };
            let b = if tb { [2, n, k] } else { [2, k, n] };
            assert_grad(
                &format!("bmm ta={ta} tb={tb}"),
                &[rand_tensor(&a, &mut rng), rand_tensor(&b, &mut rng)],
                |t, v| {
                    let y = t.bmm(&v[0], ta, &v[1], tb)?;
                    contract(t, y, 15)
                },
            );
        }
    }
}

#[test]
fn spectral_conv_matches_finite_differences() {
    let mut rng = SplitRng::new(6).rng();
    for (t_len, modes) in [(8usize, 3usize), (9, 5), (8, 5)] {
        assert_grad(
            "spectral_conv",
            &[
                rand_tensor(&[2, 3, t_len], &mut rng),
                rand_tensor(&[2, 3, modes], &mut rng),
                rand_tensor(&[2, 3, modes], &mut rng),
            ],
            |t, v| {
                let y = t.spectral_conv(&v[0], &v[1], &v[2], modes)?;
                contract(t, y, 16)
            },
        );
    }
}

// --- spectral convolution oracles -----------------------------------------

/// Direct-summation DFT evaluation of the truncated spectral convolution.
fn direct_dft_oracle(z: &Tensor, wre: &Tensor, wim: &Tensor, modes: usize) -> Tensor {
    let (ci, n) = (z.dim(0), z.dim(1));
    let co = wre.dim(0);
    let bins = n / 2 + 1;
    let tau = std::f64::consts::TAU;
    let mut out = vec![0.0; co * n];
    for o in 0..co {
        let mut y = vec![Complex64::new(0.0, 0.0); bins];
        for (k, yk) in y.iter_mut().enumerate().take(modes) {
            for i in 0..ci {
                let mut xk = Complex64::new(0.0, 0.0);
                for t in 0..n {
                    let ang = -tau * (k * t) as f64 / n as f64;
                    xk += z.data()[i * n + t] * Complex64::new(ang.cos(), ang.sin());
                }
                let r = Complex64::new(wre.data()[(o * ci + i) * modes + k], wim.data()[(o * ci + i) * modes + k]);
                *yk += r * xk;
            }
        }
        // Hermitian extension then full inverse DFT, keeping the real part
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        full[0] = Complex64::new(y[0].re, 0.0);
        for k in 1..bins {
            full[k] = y[k];
            full[n - k] = y[k].conj();
        }
        if n % 2 == 0 {
            full[n / 2] = Complex64::new(y[n / 2].re, 0.0);
        }
        for t in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, fk) in full.iter().enumerate() {
                let ang = tau * (k * t) as f64 / n as f64;
                acc += fk * Complex64::new(ang.cos(), ang.sin());
            }
            out[o * n + t] = acc.re / n as f64;
        }
    }
    Tensor::new(&[co, n], out).unwrap()
}

#[test]
fn spectral_conv_matches_direct_dft_oracle() {
    let mut rng = SplitRng::new(7).rng();
    let z = rand_tensor(&[2, 8], &mut rng);
    let wre = rand_tensor(&[2, 2, 3], &mut rng);
    let wim = rand_tensor(&[2, 2, 3], &mut rng);
    let got = spectral_conv(&z, &wre, &wim, 3).unwrap();
    let want = direct_dft_oracle(&z, &wre, &wim, 3);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn spectral_conv_agrees_with_fft_route() {
    // rfft → mix → irfft through rustfft, independent of the DFT-basis kernel
    let mut rng = SplitRng::new(8).rng();
    for (n, modes) in [(100usize, 16usize), (7, 4), (16, 9)] {
        let z = rand_tensor(&[3, n], &mut rng);
        let wre = rand_tensor(&[2, 3, modes], &mut rng);
        let wim = rand_tensor(&[2, 3, modes], &mut rng);
        let spec = rfft(&z).unwrap();
        let bins = spec.bins();
        let mut mixed = ino_core::numerics::Spectrum::zeros(&[2, bins]);
        for o in 0..2 {
            for k in 0..modes {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..3 {
                    let r = Complex64::new(wre.data()[(o * 3 + i) * modes + k], wim.data()[(o * 3 + i) * modes + k]);
                    acc += r * spec.data[i * bins + k];
                }
                mixed.data[o * bins + k] = acc;
            }
        }
        let want = irfft(&mixed, n).unwrap();
        let got = spectral_conv(&z, &wre, &wim, modes).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn identity_kernel_reproduces_input() {
    let mut rng = SplitRng::new(9).rng();
    for n in [8usize, 9] {
        let modes = n / 2 + 1;
        let c = 3;
        let z = rand_tensor(&[c, n], &mut rng);
        let mut wre = Tensor::zeros(&[c, c, modes]);
        for i in 0..c {
            for k in 0..modes {
                wre.data_mut()[(i * c + i) * modes + k] = 1.0;
            }
        }
        let wim = Tensor::zeros(&[c, c, modes]);
        let y = spectral_conv(&z, &wre, &wim, modes).unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
        let zero = spectral_conv(&z, &Tensor::zeros(&[c, c, modes]), &wim, modes).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn modes_out_of_range_rejected() {
    let z = Tensor::zeros(&[1, 8]);
    let w = Tensor::zeros(&[1, 1, 6]);
    assert!(matches!(
        spectral_conv(&z, &w, &w, 6),
        Err(NumericsError::ModesOutOfRange { modes: 6, max: 5 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_roundtrip(n in 1usize..=256, seed in any::<u64>()) {
        let mut rng = SplitRng::new(seed).rng();
        let x = rand_tensor(&[2, n], &mut rng);
        let back = irfft(&rfft(&x).unwrap(), n).unwrap();
        let scale = x.max_abs();
        for (a, b) in x.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn truncation_zeroes_high_modes(n in 4usize..=64, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let max = n / 2 + 1;
        let modes = 1 + ((max - 1) as f64 * frac) as usize;
        let mut rng = SplitRng::new(seed).rng();
        let z = rand_tensor(&[2, n], &mut rng);
        let wre = rand_tensor(&[2, 2, modes], &mut rng);
        let wim = rand_tensor(&[2, 2, modes], &mut rng);
        let y = spectral_conv(&z, &wre, &wim, modes).unwrap();
        let spec = rfft(&y).unwrap();
        let floor = 1e-12 * n as f64 * (1.0 + y.max_abs());
        for row in spec.data.chunks(max) {
            for c in &row[modes..] {
                prop_assert!(c.norm() <= floor);
            }
        }
    }
}
