use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    Nearest,
    Trilinear,
}

/// Two (index, weight) taps per output coordinate on one axis, using the
/// half-pixel-centre convention.
fn axis_taps(input: usize, output: usize, mode: ResampleMode) -> Vec<[(usize, f64); 2]> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| match mode {
            ResampleMode::Nearest => {
                let src = (((o as f64 + 0.5) * scale).floor() as usize).min(input - 1);
                [(src, 1.0), (src, 0.0)]
            }
            ResampleMode::Trilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                let t = src - i0 as f64;
                [(i0, 1.0 - t), (i1, t)]
            }
        })
        .collect()
}

/// Resamples the three trailing axes of an N×C×D×H×W tensor to `target`.
pub fn resample_volume(input: &Tensor, target: [usize; 3], mode: ResampleMode) -> Result<Tensor, AutodiffError> {
    let s = input.shape().to_vec();
    if s.len() != 5 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "resample expects N×C×D×H×W, got {s:?}"
        )));
    }
    if target.iter().any(|&t| t == 0) {
        return Err(AutodiffError::ShapeMismatch(format!(
            "resample target {target:?} has a zero extent"
        )));
    }
    let src = [s[2], s[3], s[4]];
    let out_shape = [s[0], s[1], target[0], target[1], target[2]];
    if src == target {
        return Ok(Tensor::from_op(&out_shape, input.to_vec(), vec![input.clone()], |g| {
            vec![Some(g.to_vec())]
        }));
    }
    let taps: Vec<_> = (0..3).map(|a| axis_taps(src[a], target[a], mode)).collect();
    let planes = s[0] * s[1];
    let in_vol = src.iter().product::<usize>();
    let out_vol = target.iter().product::<usize>();
    let x = input.to_vec();
    let mut out = vec![0.0; planes * out_vol];

    let for_each_tap = move |f: &mut dyn FnMut(usize, usize, f64)| {
        for (oz, tz) in taps[0].iter().enumerate() {
            for (oy, ty) in taps[1].iter().enumerate() {
                for (ox, tx) in taps[2].iter().enumerate() {
                    let o = (oz * target[1] + oy) * target[2] + ox;
                    for &(iz, wz) in tz {
                        for &(iy, wy) in ty {
                            for &(ix, wx) in tx {
                                let w = wz * wy * wx;
                                if w != 0.0 {
                                    f(o, (iz * src[1] + iy) * src[2] + ix, w);
                                }
                            }
                        }
                    }
                }
            }
        }
    };

    let mut taps_flat: Vec<(usize, usize, f64)> = Vec::new();
    for_each_tap(&mut |o, i, w| taps_flat.push((o, i, w)));
    for p in 0..planes {
        let xs = &x[p * in_vol..(p + 1) * in_vol];
        let os = &mut out[p * out_vol..(p + 1) * out_vol];
        for &(o, i, w) in &taps_flat {
            os[o] += w * xs[i];
        }
    }
    Ok(Tensor::from_op(&out_shape, out, vec![input.clone()], move |g| {
        let mut dx = vec![0.0; planes * in_vol];
        for p in 0..planes {
            let gs = &g[p * out_vol..(p + 1) * out_vol];
            let ds = &mut dx[p * in_vol..(p + 1) * in_vol];
            for &(o, i, w) in &taps_flat {
                ds[i] += w * gs[o];
            }
        }
        vec![Some(dx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_bit_exact() {
        let data: Vec<f64> = (0..27).map(|i| (i as f64).sin() / 3.0).collect();
        let x = Tensor::new(&[1, 1, 3, 3, 3], data.clone());
        for mode in [ResampleMode::Nearest, ResampleMode::Trilinear] {
            let y = resample_volume(&x, [3, 3, 3], mode).unwrap();
            assert_eq!(y.to_vec(), data);
        }
    }

    #[test]
    fn constant_grid_downsamples_to_constant() {
        let x = Tensor::full(&[1, 1, 2, 2, 2], 0.7);
        for mode in [ResampleMode::Nearest, ResampleMode::Trilinear] {
            let y = resample_volume(&x, [1, 1, 1], mode).unwrap();
            assert!((y.item() - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn nearest_picks_existing_values() {
        let x = Tensor::new(&[1, 1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let y = resample_volume(&x, [1, 1, 2], ResampleMode::Nearest).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn zero_target_fails() {
        let x = Tensor::zeros(&[1, 1, 2, 2, 2]);
        assert!(resample_volume(&x, [0, 1, 1], ResampleMode::Nearest).is_err());
    }
}
