//! Plain-text model files.
//!
//! ```text
//! crc-sense-lv 1 in_channels=40 width=48 subbands=40 channels=32
//! input_scale 1 <value>
//! conv1.weight 32x40x3 <values...>
//! ...
//! bn.running_mean 32 <values...>
//! bn.running_var 32 <values...>
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! finite f64 exactly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{LvArch, LvModel, Params, PARAM_NAMES};
use crate::error::{Error, Result};

const MAGIC: &str = "crc-sense-lv";
const VERSION: &str = "1";

fn write_tensor<W: Write>(out: &mut W, name: &str, shape: &[usize], values: &[f64]) -> std::io::Result<()> {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    write!(out, "{name} {}", dims.join("x"))?;
    for v in values {
        write!(out, " {v:.16e}")?;
    }
    writeln!(out)
}

pub fn write_model<W: Write>(model: &LvModel, mut out: W) -> std::io::Result<()> {
    let a = &model.arch;
    writeln!(
        out,
        "{MAGIC} {VERSION} in_channels={} width={} subbands={} channels={}",
        a.in_channels, a.width, a.subbands, a.channels
    )?;
    write_tensor(&mut out, "input_scale", &[1], &[model.input_scale])?;
    for ((name, shape), t) in PARAM_NAMES.iter().zip(Params::shapes(a)).zip(model.params.tensors()) {
        write_tensor(&mut out, name, &shape, t)?;
    }
    write_tensor(&mut out, "bn.running_mean", &[a.channels], &model.running_mean)?;
    write_tensor(&mut out, "bn.running_var", &[a.channels], &model.running_var)?;
    Ok(())
}

pub fn save_model(model: &LvModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::ModelFormat {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str) -> Result<LvArch> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(format_err(1, format!("expected `{MAGIC}` header")));
    }
    if parts.next() != Some(VERSION) {
        return Err(format_err(1, format!("unsupported version, expected {VERSION}")));
    }
    let mut fields = [None; 4];
    const KEYS: [&str; 4] = ["in_channels", "width", "subbands", "channels"];
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format_err(1, format!("malformed field `{part}`")))?;
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| format_err(1, format!("unknown field `{key}`")))?;
        let v: usize = value
            .parse()
            .map_err(|_| format_err(1, format!("`{key}` is not an integer")))?;
        if v == 0 {
            return Err(format_err(1, format!("`{key}` must be positive")));
        }
        fields[slot] = Some(v);
    }
    let get = |i: usize| fields[i].ok_or_else(|| format_err(1, format!("missing `{}`", KEYS[i])));
    Ok(LvArch {
        in_channels: get(0)?,
        width: get(1)?,
        subbands: get(2)?,
        channels: get(3)?,
    })
}

fn parse_tensor(line_no: usize, line: &str, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some(n) if n == name => {}
        other => {
            return Err(format_err(
                line_no,
                format!("expected tensor `{name}`, found `{}`", other.unwrap_or(""))
            ))
        }
    }
    let dims = parts.next().ok_or_else(|| format_err(line_no, "missing shape"))?;
    let expect: Vec<String> = shape.iter().map(usize::to_string).collect();
    if dims != expect.join("x") {
        return Err(format_err(
            line_no,
            format!("`{name}` has shape {dims}, architecture requires {}", expect.join("x")),
        ));
    }
    let values = parts
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| format_err(line_no, format!("bad number `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    if values.len() != count {
        return Err(format_err(
            line_no,
            format!("`{name}` has {} values, expected {count}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err(line_no, format!("`{name}` contains non-finite values")));
    }
    Ok(values)
}

pub fn read_model<R: Read>(input: R) -> Result<LvModel> {
    let lines: Vec<String> = BufReader::new(input)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| format_err(0, e.to_string()))?;
    let header = lines.first().ok_or_else(|| format_err(1, "empty model file"))?;
    let arch = parse_header(header)?;
    let mut model = LvModel::zeros(arch);
    let line = |i: usize| {
        lines
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| format_err(i + 1, "unexpected end of file"))
    };
    model.input_scale = parse_tensor(2, line(1)?, "input_scale", &[1])?[0];
    let shapes = Params::shapes(&arch);
    for (k, t) in model.params.tensors_mut().into_iter().enumerate() {
        *t = parse_tensor(k + 3, line(k + 2)?, PARAM_NAMES[k], &shapes[k])?;
    }
    model.running_mean = parse_tensor(11, line(10)?, "bn.running_mean", &[arch.channels])?;
    model.running_var = parse_tensor(12, line(11)?, "bn.running_var", &[arch.channels])?;
    if lines.len() > 12 && lines[12..].iter().any(|l| !l.trim().is_empty()) {
        return Err(format_err(13, "trailing content"));
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<LvModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lv::LvModel;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = LvModel::init(LvArch::new(3, 6, 4), &mut rng_from_seed(5));
        model.input_scale = 1.0 / 3.0;
        model.running_var[0] = std::f64::consts::PI * 1e-300;
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn shape_mismatch_is_reported_with_line() {
        let model = LvModel::zeros(LvArch::new(1, 4, 2));
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("subbands=2", "subbands=3");
        match read_model(text.as_bytes()) {
            Err(Error::ModelFormat { line, .. }) => assert_eq!(line, 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_model("not a model".as_bytes()).is_err());
    }
}
