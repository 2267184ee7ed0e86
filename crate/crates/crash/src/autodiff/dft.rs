//! Direct separable 2-D DFT over a channel stack, on (re, im) slice pairs.
//!
//! Sizes here are small (spatial grids of 4x4 .. 64x64), so an O(hw(h+w))
//! separable evaluation with exact twiddle tables is both fast enough and
//! numerically clean. Forward is unnormalized; the inverse is the forward
//! with the opposite sign and a 1/(h*w) scale, supplied by the caller.
//!
//! The adjoint (as a linear map over the real pair representation) of the
//! transform with parameters (sign, scale) is the transform with parameters
//! (-sign, scale), which is what the tape's backward pass uses.

/// Twiddle table for one axis: entry m holds e^{sign*2*pi*i*m/n}.
/// Indexing by (k*j) mod n keeps the arguments exact.
struct Twiddle {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddle {
    fn new(n: usize, sign: f64) -> Twiddle {
        let step = sign * std::f64::consts::TAU / n as f64;
        let (mut cos, mut sin) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for m in 0..n {
            let a = step * m as f64;
            cos.push(a.cos());
            sin.push(a.sin());
        }
        Twiddle { cos, sin }
    }
}

/// 2-D DFT applied independently to each of `c` channels of an h x w grid.
/// `re`/`im` are row-major with channel stride h*w. Returns (re, im).
pub fn dft2(
    re: &[f64],
    im: &[f64],
    c: usize,
    h: usize,
    w: usize,
    sign: f64,
    scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    assert_eq!(re.len(), c * hw, "dft2 re length");
    assert_eq!(im.len(), c * hw, "dft2 im length");
    let tw = Twiddle::new(w, sign);
    let th = Twiddle::new(h, sign);

    let mut out_re = vec![0.0; c * hw];
    let mut out_im = vec![0.0; c * hw];
    // Row pass scratch: transform along w for each of the h rows.
    let mut mid_re = vec![0.0; hw];
    let mut mid_im = vec![0.0; hw];

    for ch in 0..c {
        let base = ch * hw;
        let (xr, xi) = (&re[base..base + hw], &im[base..base + hw]);

        for r in 0..h {
            for k2 in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for n2 in 0..w {
                    let m = (k2 * n2) % w;
                    let (tc, ts) = (tw.cos[m], tw.sin[m]);
                    let (ar, ai) = (xr[r * w + n2], xi[r * w + n2]);
                    sr += ar * tc - ai * ts;
                    si += ar * ts + ai * tc;
                }
                mid_re[r * w + k2] = sr;
                mid_im[r * w + k2] = si;
            }
        }

        for k1 in 0..h {
            for k2 in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for n1 in 0..h {
                    let m = (k1 * n1) % h;
                    let (tc, ts) = (th.cos[m], th.sin[m]);
                    let (ar, ai) = (mid_re[n1 * w + k2], mid_im[n1 * w + k2]);
                    sr += ar * tc - ai * ts;
                    si += ar * ts + ai * tc;
                }
                out_re[base + k1 * w + k2] = sr * scale;
                out_im[base + k1 * w + k2] = si * scale;
            }
        }
    }
    (out_re, out_im)
}
