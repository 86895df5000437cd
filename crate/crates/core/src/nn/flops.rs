//! Analytic FLOP counts. A multiply-accumulate is 2 FLOPs, a bias add 1 per
//! output, and every elementwise nonlinearity 1 per element.

use super::conv::Conv2d;
use super::params::Arch;
use super::NnError;

pub fn linear_flops(d_in: usize, d_out: usize) -> u64 {
    (2 * d_in * d_out + d_out) as u64
}

/// One GRU step: three gate projections of input and state with bias, plus
/// seven elementwise operations per hidden unit.
pub fn gru_flops(d_in: usize, d_h: usize) -> Result<u64, NnError> {
    if d_in == 0 || d_h == 0 {
        return Err(NnError::Config(format!("GRU dimensions must be positive (d_in={d_in}, d_h={d_h})")));
    }
    Ok((3 * (2 * d_in * d_h + 2 * d_h * d_h + d_h) + 7 * d_h) as u64)
}

pub fn conv_flops(conv: &Conv2d) -> u64 {
    let positions = (conv.out_h() * conv.out_w() * conv.out_c) as u64;
    positions * (2 * conv.patch_len() as u64 + 1)
}

/// What a model is run on when counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopsInput {
    /// Light model over this many decision steps.
    Steps(usize),
    /// One heavy invocation; inputs are padded or cropped to the model window.
    Window,
}

/// FLOPs for running `arch` on `input`.
pub fn count_flops(arch: &Arch, input: FlopsInput) -> Result<u64, NnError> {
    match (arch, input) {
        (Arch::Light(a), FlopsInput::Steps(steps)) => {
            let (c1, c2) = (a.conv1(), a.conv2());
            let per_step = conv_flops(&c1)
                + c1.out_len() as u64
                + conv_flops(&c2)
                + c2.out_len() as u64
                + gru_flops(a.gru_input(), a.hidden)?
                + linear_flops(a.hidden, 1)
                + 1;
            Ok(per_step * steps as u64)
        }
        (Arch::Heavy(a), FlopsInput::Window) => {
            let w = a.window_frames as u64;
            let mut total = 0;
            for l in 0..a.layers {
                let d_in = if l == 0 { a.n_mels } else { 2 * a.hidden };
                total += 2 * w * gru_flops(d_in, a.hidden)?;
            }
            let width = 2 * a.hidden as u64;
            // running mean: one add per element and step, one scale at the end
            total += w * width + width;
            total += linear_flops(a.pooled_dim(), 2) + 2;
            Ok(total)
        }
        (arch, input) => Err(NnError::Config(format!("{input:?} does not apply to a {:?} model", arch.kind()))),
    }
}
