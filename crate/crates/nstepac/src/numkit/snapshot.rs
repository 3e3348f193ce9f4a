//! Flat binary parameter snapshots.
//!
//! Layout: `u32` layer count, then each layer size as `u32`, one `u8` per
//! activation enum, then every weight matrix (row-major) followed by every
//! bias vector as little-endian `f64`, in declaration order.

use std::io::{self, Read, Write};

use super::matrix::Matrix;
use super::mlp::{Activation, MlpParams, OutputActivation};

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::ReLU => 0,
        Activation::Tanh => 1,
    }
}

fn out_act_code(a: OutputActivation) -> u8 {
    match a {
        OutputActivation::Identity => 0,
        OutputActivation::Tanh => 1,
    }
}

pub fn write_snapshot<W: Write>(params: &MlpParams, w: &mut W) -> io::Result<()> {
    let sizes = params.layer_sizes();
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    w.write_all(&[act_code(params.activation()), out_act_code(params.output_activation())])?;
    let mut buf = Vec::with_capacity(params.param_count() * 8);
    params.for_each_param(|v| buf.extend_from_slice(&v.to_le_bytes()));
    w.write_all(&buf)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_snapshot<R: Read>(r: &mut R) -> io::Result<MlpParams> {
    let n = read_u32(r)? as usize;
    if n < 2 || n > 64 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("implausible layer count {n}"),
        ));
    }
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        sizes.push(read_u32(r)? as usize);
    }
    let mut acts = [0u8; 2];
    r.read_exact(&mut acts)?;
    let activation = match acts[0] {
        0 => Activation::ReLU,
        1 => Activation::Tanh,
        c => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unknown activation code {c}"),
            ))
        }
    };
    let output_activation = match acts[1] {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Tanh,
        c => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unknown output activation code {c}"),
            ))
        }
    };

    let mut weights = Vec::with_capacity(n - 1);
    for pair in sizes.windows(2) {
        let (rows, cols) = (pair[1], pair[0]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f64(r)?);
        }
        weights.push(Matrix::from_vec(rows, cols, data).expect("shape by construction"));
    }
    let mut biases = Vec::with_capacity(n - 1);
    for pair in sizes.windows(2) {
        let mut b = Vec::with_capacity(pair[1]);
        for _ in 0..pair[1] {
            b.push(read_f64(r)?);
        }
        biases.push(b);
    }
    Ok(MlpParams::from_parts(
        sizes,
        weights,
        biases,
        activation,
        output_activation,
    ))
}
