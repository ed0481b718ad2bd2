//! Reference implementations shared by the integration tests and the
//! acceptance harness. Nothing here calls into the crate's numeric kernels.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use wafl_core::seed;
use wafl_core::Layout;

/// Mean cross-entropy of a 784-128-10 style network, written with plain loops.
pub fn naive_mean_loss(layout: Layout, theta: &[f64], x: &[f64], y: &[u8]) -> f64 {
    let (d, h, c) = (layout.inputs, layout.hidden, layout.classes);
    let w1 = &theta[..h * d];
    let b1 = &theta[h * d..h * d + h];
    let w2 = &theta[h * d + h..h * d + h + c * h];
    let b2 = &theta[h * d + h + c * h..];
    let rows = y.len();
    let mut total = 0.0;
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let hid: Vec<f64> = (0..h)
            .map(|j| {
                let z = b1[j] + (0..d).map(|i| w1[j * d + i] * xr[i]).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..c)
            .map(|k| b2[k] + (0..h).map(|j| w2[k * h + j] * hid[j]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[y[r] as usize];
    }
    total / rows as f64
}

pub fn random_batch(layout: Layout, rows: usize, s: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seed::rng(s);
    let x = (0..rows * layout.inputs).map(|_| rng.gen::<f64>()).collect();
    let y = (0..rows).map(|_| rng.gen_range(0..layout.classes as u8)).collect();
    (x, y)
}

/// Worst relative error between the analytic gradient and central
/// differences over `coords` random coordinates of `batches` random batches.
pub fn gradient_check(layout: Layout, rows: usize, batches: usize, coords: usize, step: f64, s: u64) -> f64 {
    use wafl_core::nn::{loss_and_grad, Batch};
    use wafl_core::ModelParams;

    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let params = ModelParams::<f64>::init_uniform(layout, seed::splitmix64(s ^ b as u64));
        let (x, y) = random_batch(layout, rows, s.wrapping_add(1000 + b as u64));
        let (_, grad) = loss_and_grad(&params, Batch::new(&x, &y)).unwrap();
        let mut rng = seed::rng(s.wrapping_add(2000 + b as u64));
        let mut theta = params.as_slice().to_vec();
        for _ in 0..coords {
            let i = rng.gen_range(0..theta.len());
            let orig = theta[i];
            theta[i] = orig + step;
            let up = naive_mean_loss(layout, &theta, &x, &y);
            theta[i] = orig - step;
            let down = naive_mean_loss(layout, &theta, &x, &y);
            theta[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grad.as_slice()[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 0.0 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// Per-node weights of the linear map one aggregation epoch applies to the
/// error `theta - theta_m` on a line whose node `mount` also hears the attacker.
pub fn line_error_map(n: usize, mount: usize, lambda: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (c, row) in a.iter_mut().enumerate() {
        let nbrs: Vec<usize> = [c.wrapping_sub(1), c + 1].into_iter().filter(|&k| k < n).collect();
        let d = nbrs.len() + usize::from(c == mount);
        row[c] = 1.0 - lambda * d as f64 / (d + 1) as f64;
        for k in nbrs {
            row[k] = lambda / (d + 1) as f64;
        }
    }
    a
}

pub fn apply(a: &[Vec<f64>], e: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(e).map(|(w, v)| w * v).sum())
        .collect()
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("WAFL_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"))
}

pub fn mnist_available() -> bool {
    let d = mnist_dir();
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| d.join(f).is_file() || d.join(format!("{f}.gz")).is_file())
}

/// Loosely separable synthetic images: each class lights up its own band of pixels.
pub fn synthetic_dataset<T: wafl_core::Scalar>(rows: usize, width: usize, s: u64) -> wafl_core::LabeledDataset<T> {
    let mut rng = seed::rng(s);
    let band = width / 10;
    let mut images = Vec::with_capacity(rows * width);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let label = rng.gen_range(0..10u8);
        for p in 0..width {
            let lit = p / band.max(1) == label as usize;
            let v: f64 = if lit {
                rng.gen_range(0.5..1.0)
            } else {
                rng.gen_range(0.0..0.2)
            };
            images.push(T::from_f64(v).unwrap());
        }
        labels.push(label);
    }
    wafl_core::LabeledDataset::new(width, images, labels).unwrap()
}

pub mod algebra {
    //! The four aggregation properties, one randomized instance per call.

    use rand::Rng;
    use wafl_core::protocol::aggregate_slices;
    use wafl_core::seed;

    fn vector(rng: &mut impl Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect()
    }

    // (0, 1]
    fn lambda(rng: &mut impl Rng) -> f64 {
        1.0 - rng.gen::<f64>()
    }

    pub fn fixed_point(i: u64) -> Result<(), String> {
        let mut rng = seed::rng(i);
        let len = rng.gen_range(1..40);
        let own = vector(&mut rng, len);
        let nbrs: Vec<&[f64]> = (0..rng.gen_range(1..6)).map(|_| own.as_slice()).collect();
        let out = aggregate_slices(&own, &nbrs, lambda(&mut rng)).map_err(|e| e.to_string())?;
        if out != own {
            return Err(format!("instance {i}: moved away from agreeing neighbours"));
        }
        Ok(())
    }

    pub fn empty_neighbourhood(i: u64) -> Result<(), String> {
        let mut rng = seed::rng(10_000 + i);
        let len = rng.gen_range(1..40);
        let own = vector(&mut rng, len);
        let out = aggregate_slices(&own, &[], lambda(&mut rng)).map_err(|e| e.to_string())?;
        if out != own {
            return Err(format!("instance {i}: isolated node changed"));
        }
        Ok(())
    }

    pub fn convex_hull(i: u64) -> Result<(), String> {
        let mut rng = seed::rng(20_000 + i);
        let len = rng.gen_range(1..40);
        let own = vector(&mut rng, len);
        let others: Vec<Vec<f64>> = (0..rng.gen_range(1..6)).map(|_| vector(&mut rng, len)).collect();
        let refs: Vec<&[f64]> = others.iter().map(Vec::as_slice).collect();
        let out = aggregate_slices(&own, &refs, lambda(&mut rng)).map_err(|e| e.to_string())?;
        for j in 0..len {
            let vals = std::iter::once(own[j]).chain(others.iter().map(|o| o[j]));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if out[j] < lo - 1e-12 || out[j] > hi + 1e-12 {
                return Err(format!("instance {i} coord {j}: {} outside [{lo}, {hi}]", out[j]));
            }
        }
        Ok(())
    }

    /// Degrees cycle through 1, 2, 3.
    pub fn uniform_contraction(i: u64) -> Result<(), String> {
        let mut rng = seed::rng(30_000 + i);
        let len = rng.gen_range(1..40);
        let own = vector(&mut rng, len);
        let star = vector(&mut rng, len);
        let d = 1 + (i as usize % 3);
        let lam = lambda(&mut rng);
        let refs: Vec<&[f64]> = (0..d).map(|_| star.as_slice()).collect();
        let out = aggregate_slices(&own, &refs, lam).map_err(|e| e.to_string())?;
        let factor = 1.0 - lam * d as f64 / (d + 1) as f64;
        for j in 0..len {
            let expected = factor * (own[j] - star[j]);
            if ((out[j] - star[j]) - expected).abs() > 1e-12 {
                return Err(format!("instance {i} coord {j}: contraction off"));
            }
        }
        Ok(())
    }

    pub fn all(instances: u64) -> Result<(), String> {
        for i in 0..instances {
            fixed_point(i)?;
            empty_neighbourhood(i)?;
            convex_hull(i)?;
            uniform_contraction(i)?;
        }
        Ok(())
    }
}
