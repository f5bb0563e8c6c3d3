//! The five building blocks shared by the generator and discriminator.

use rand::Rng;
use serde::Serialize;

use super::layers::{Conv, Forward, LayerInfo, NetBuilder, Norm, TConv, LEAKY_SLOPE};
use crate::autodiff::{ConvGeom, ParamSet, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockConfig {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(format!("block geometry must be >= 1: {self:?}")));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid(format!("block channels must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

fn conv_norm_act(f: &mut Forward<'_>, conv: &Conv, norm: &Norm, x: Var) -> Result<Var> {
    let h = conv.forward(f, x)?;
    let h = norm.forward(f, h)?;
    f.tape.leaky_relu(h, LEAKY_SLOPE)
}

fn check_channels(f: &Forward<'_>, x: Var, expected: usize, block: &str) -> Result<()> {
    let shape = f.tape.shape(x);
    let c = shape[shape.len() - 2];
    if c != expected {
        return Err(Error::shape(format!(
            "{block} expects {expected} channels, got {c}"
        )));
    }
    Ok(())
}

/// `skip(x) + LeakyReLU(BN(Conv_{K=3,S=1}(x)))`; the skip is identity when
/// channel counts agree and a 1x1 convolution otherwise.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv: Conv,
    pub norm: Norm,
    pub skip: Option<Conv>,
}

impl ResidualBlock {
    pub fn new<R: Rng>(b: &mut NetBuilder<'_, R>, name: &str, c_in: usize, c_out: usize) -> Self {
        let conv = b.conv(&format!("{name}.conv"), c_in, c_out, 3, ConvGeom::new(1, 1, 1), false);
        let norm = b.norm(&format!("{name}.bn"), c_out);
        let skip = (c_in != c_out)
            .then(|| b.conv(&format!("{name}.skip"), c_in, c_out, 1, ConvGeom::new(1, 1, 0), false));
        ResidualBlock { conv, norm, skip }
    }

    pub fn config(&self) -> BlockConfig {
        BlockConfig {
            kernel: 3,
            stride: 1,
            dilation: 1,
            in_channels: self.conv.c_in,
            out_channels: self.conv.c_out,
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        check_channels(f, x, self.conv.c_in, "residual block")?;
        let main = conv_norm_act(f, &self.conv, &self.norm, x)?;
        let skip = match &self.skip {
            Some(s) => s.forward(f, x)?,
            None => x,
        };
        f.tape.add(skip, main)
    }

    pub fn describe(&self, in_len: usize, p: &ParamSet, out: &mut Vec<LayerInfo>) {
        out.push(self.conv.info("residual", in_len, p));
        if let Some(s) = &self.skip {
            out.push(s.info("residual_skip", in_len, p));
        }
    }
}

/// `LeakyReLU(BN(Conv_{K=3,S=1}(x)))`, length preserving.
#[derive(Clone, Debug)]
pub struct RegularBlock {
    pub conv: Conv,
    pub norm: Norm,
}

impl RegularBlock {
    pub fn new<R: Rng>(b: &mut NetBuilder<'_, R>, name: &str, c_in: usize, c_out: usize) -> Self {
        let conv = b.conv(&format!("{name}.conv"), c_in, c_out, 3, ConvGeom::new(1, 1, 1), false);
        let norm = b.norm(&format!("{name}.bn"), c_out);
        RegularBlock { conv, norm }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        check_channels(f, x, self.conv.c_in, "regular block")?;
        conv_norm_act(f, &self.conv, &self.norm, x)
    }
}

/// `LeakyReLU(BN(Conv_{K=3,S=2,P=1}(x)))`: length `L -> ceil(L / 2)`.
#[derive(Clone, Debug)]
pub struct DownsampleBlock {
    pub conv: Conv,
    pub norm: Norm,
}

impl DownsampleBlock {
    pub fn new<R: Rng>(b: &mut NetBuilder<'_, R>, name: &str, c_in: usize, c_out: usize) -> Self {
        let conv = b.conv(&format!("{name}.conv"), c_in, c_out, 3, ConvGeom::new(2, 1, 1), false);
        let norm = b.norm(&format!("{name}.bn"), c_out);
        DownsampleBlock { conv, norm }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        check_channels(f, x, self.conv.c_in, "downsampling block")?;
        conv_norm_act(f, &self.conv, &self.norm, x)
    }
}

/// `LeakyReLU(BN(TConv_{K=4,S=2,crop=1}(x)))`: length `L -> 2L`.
#[derive(Clone, Debug)]
pub struct UpsampleBlock {
    pub tconv: TConv,
    pub norm: Norm,
}

impl UpsampleBlock {
    pub fn new<R: Rng>(b: &mut NetBuilder<'_, R>, name: &str, c_in: usize, c_out: usize) -> Self {
        let tconv = b.tconv(&format!("{name}.tconv"), c_in, c_out, 4, 2, 1);
        let norm = b.norm(&format!("{name}.bn"), c_out);
        UpsampleBlock { tconv, norm }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        check_channels(f, x, self.tconv.c_in, "upsampling block")?;
        let h = self.tconv.forward(f, x)?;
        let h = self.norm.forward(f, h)?;
        f.tape.leaky_relu(h, LEAKY_SLOPE)
    }

    pub fn describe(&self, in_len: usize, p: &ParamSet) -> LayerInfo {
        LayerInfo {
            name: self.tconv.name.clone(),
            kind: "upsample",
            in_channels: self.tconv.c_in,
            out_channels: self.tconv.c_out,
            kernel: self.tconv.kernel,
            stride: self.tconv.stride,
            dilation: 1,
            in_len,
            out_len: self.tconv.output_len(in_len),
            params: p.get(self.tconv.weight).len() + self.tconv.bias.map_or(0, |b| p.get(b).len()),
        }
    }
}

/// Skip-dilated attention bridge: `dec + Conv_{K=2,D=2,S=1}(enc)`.
///
/// The dilated conv is padded on the right by two, so output `i` reads
/// encoder positions `i` and `i + 2`.
#[derive(Clone, Debug)]
pub struct SdaBlock {
    pub conv: Conv,
}

impl SdaBlock {
    pub fn new<R: Rng>(b: &mut NetBuilder<'_, R>, name: &str, enc_c: usize, dec_c: usize) -> Self {
        let conv = b.conv(
            &format!("{name}.conv"),
            enc_c,
            dec_c,
            2,
            ConvGeom::asymmetric(1, 2, 0, 2),
            true,
        );
        SdaBlock { conv }
    }

    pub fn forward(&self, f: &mut Forward<'_>, enc: Var, dec: Var) -> Result<Var> {
        let (es, ds) = (f.tape.shape(enc), f.tape.shape(dec));
        if es.last() != ds.last() {
            return Err(Error::shape(format!(
                "SDA block: encoder length {:?} vs decoder length {:?}",
                es.last(),
                ds.last()
            )));
        }
        check_channels(f, enc, self.conv.c_in, "SDA block")?;
        let att = self.conv.forward(f, enc)?;
        f.tape.add(dec, att)
    }
}
