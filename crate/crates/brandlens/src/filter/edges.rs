//! Screenshot pixel statistics: grayscale standard deviation and Canny edge
//! counting, used by the blank-page filters.

use image::RgbImage;

/// Canny hysteresis thresholds on 0-255 luma gradient magnitude.
pub const CANNY_LOW: f32 = 50.0;
pub const CANNY_HIGH: f32 = 150.0;
/// Gaussian blur applied before gradient computation: 5x5 kernel, sigma 1.4.
pub const BLUR_SIGMA: f32 = 1.4;

/// ITU-R BT.601 luma in integer thousandths (299 R + 587 G + 114 B).
///
/// Integer accumulation makes the statistic exactly invariant under any
/// permutation of pixel positions.
#[inline]
fn luma_millis(p: &image::Rgb<u8>) -> u64 {
    299 * p.0[0] as u64 + 587 * p.0[1] as u64 + 114 * p.0[2] as u64
}

/// Population standard deviation of the BT.601 luma values, in 0-255 units.
///
/// Range is `[0, 127.5]`; a uniform image yields exactly `0.0` and a
/// half-black/half-white image exactly `127.5`.
pub fn grayscale_stddev(image: &RgbImage) -> f64 {
    let n = (image.width() as u128) * (image.height() as u128);
    if n == 0 {
        return 0.0;
    }
    let mut sum: u128 = 0;
    let mut sum_sq: u128 = 0;
    for p in image.pixels() {
        let l = luma_millis(p) as u128;
        sum += l;
        sum_sq += l * l;
    }
    let n_f = n as f64;
    let mean = sum as f64 / n_f;
    let var = sum_sq as f64 / n_f - mean * mean;
    var.max(0.0).sqrt() / 1000.0
}

fn luma_plane(image: &RgbImage) -> Vec<f32> {
    image
        .pixels()
        .map(|p| (luma_millis(p) as f32 / 1000.0).round())
        .collect()
}

fn gaussian_kernel_5(sigma: f32) -> [f32; 25] {
    let mut k = [0.0f32; 25];
    let mut sum = 0.0;
    for dy in -2i32..=2 {
        for dx in -2i32..=2 {
            let v = (-((dx * dx + dy * dy) as f32) / (2.0 * sigma * sigma)).exp();
            k[((dy + 2) * 5 + (dx + 2)) as usize] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// 5x5 convolution with replicated borders.
fn blur(plane: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let kernel = gaussian_kernel_5(sigma);
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -2i32..=2 {
                for dx in -2i32..=2 {
                    let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    acc += plane[sy * w + sx] * kernel[((dy + 2) * 5 + (dx + 2)) as usize];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// 3x3 Sobel gradients; the outermost pixel ring is left at zero.
fn sobel(plane: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    if w < 3 || h < 3 {
        return (gx, gy);
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p =
                |dx: i32, dy: i32| plane[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize];
            gx[y * w + x] =
                -p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1) + p(1, -1) + 2.0 * p(1, 0) + p(1, 1);
            gy[y * w + x] =
                -p(-1, -1) - 2.0 * p(0, -1) - p(1, -1) + p(-1, 1) + 2.0 * p(0, 1) + p(1, 1);
        }
    }
    (gx, gy)
}

/// Suppresses gradient magnitudes that are not local maxima along the
/// gradient direction, quantized to four directions.
fn non_maximum_suppression(mag: &[f32], gx: &[f32], gy: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (a, b) = if !(22.5..157.5).contains(&angle) {
                (mag[i - 1], mag[i + 1])
            } else if angle < 67.5 {
                (mag[i + w + 1], mag[i - w - 1])
            } else if angle < 112.5 {
                (mag[i - w], mag[i + w])
            } else {
                (mag[i + w - 1], mag[i - w + 1])
            };
            if mag[i] >= a && mag[i] >= b {
                out[i] = mag[i];
            }
        }
    }
    out
}

/// Hysteresis: edges seeded at pixels >= `high`, grown through 8-connected
/// neighbors >= `low`.
fn hysteresis(mag: &[f32], w: usize, h: usize, low: f32, high: f32) -> u64 {
    let mut edge = vec![false; w * h];
    let mut stack = Vec::new();
    let mut count = 0u64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mag[i] >= high && !edge[i] {
                edge[i] = true;
                count += 1;
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            let nx = cx as i32 + dx;
                            let ny = cy as i32 + dy;
                            if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                                continue;
                            }
                            let ni = ny as usize * w + nx as usize;
                            if !edge[ni] && mag[ni] >= low {
                                edge[ni] = true;
                                count += 1;
                                stack.push((nx as usize, ny as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    count
}

/// Number of edge pixels found by Canny edge detection with fixed parameters
/// (Gaussian blur sigma 1.4 over a 5x5 kernel, Sobel gradients, hysteresis
/// thresholds 50/150). A uniform image yields 0.
pub fn edge_count(image: &RgbImage) -> u64 {
    let w = image.width() as usize;
    let h = image.height() as usize;
    if w < 3 || h < 3 {
        return 0;
    }
    let plane = luma_plane(image);
    let blurred = blur(&plane, w, h, BLUR_SIGMA);
    let (gx, gy) = sobel(&blurred, w, h);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let thinned = non_maximum_suppression(&mag, &gx, &gy, w, h);
    hysteresis(&thinned, w, h, CANNY_LOW, CANNY_HIGH)
}
