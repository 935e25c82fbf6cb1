//! Line-oriented architecture spec format.
//!
//! ```text
//! # comment
//! name: trt-vit-a
//! classes: 1000
//! depths: 2-4-5-4
//! stem: conv c=32 k=3 s=2
//! stage2: bottleneck c=160 s=2
//! stage2: bottleneck c=160 s=1
//! stage5: mixc c=1280 r=0.5 s=1 k=7 stride=2
//! stage5: mixc c=1280 r=0.5 s=1 k=7 x3
//! ```
//!
//! Each block line is `<stage>: <kind> key=value... [xN]`. Keys:
//!
//! * `c` output channels (not used by `maxpool`)
//! * `k` kernel size
//! * `r` shrinking ratio of mix blocks
//! * `s` stride on `conv`, `maxpool` and `bottleneck` lines; spatial
//!   reduction ratio on `transformer` and mix lines
//! * `stride` stride on any line
//! * `cin` declared input channels, checked during validation
//!
//! A trailing `xN` repeats the line `N` times. Stride defaults to 1.

use std::fmt::Write as _;

use crate::blocks::BlockKind;
use crate::error::{Error, Result};

use super::spec::STAGE_NAMES;
use super::{ArchSpec, BlockSpec};

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn number<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| err(line, format!("`{key}={v}` is not a valid number")))
}

/// `s=` means stride for these kinds, spatial reduction otherwise.
fn s_is_stride(kind: BlockKind) -> bool {
    !kind.has_attention()
}

pub fn parse_spec(text: &str) -> Result<ArchSpec> {
    let mut spec = ArchSpec::empty("custom");
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, rest) = content
            .split_once(':')
            .ok_or_else(|| err(line, "expected `<key>: <value>`"))?;
        let (key, rest) = (key.trim(), rest.trim());
        match key {
            "name" => spec.name = rest.to_string(),
            "classes" => spec.num_classes = number(line, "classes", rest)?,
            "depths" => {
                let d: Vec<usize> = rest
                    .split('-')
                    .map(|p| number(line, "depths", p.trim()))
                    .collect::<Result<_>>()?;
                let d: [usize; 4] = d
                    .try_into()
                    .map_err(|_| err(line, "depths needs four entries, e.g. 2-4-5-4"))?;
                spec.declared_depths = Some(d);
            }
            stage if STAGE_NAMES.contains(&stage) => {
                let (block, repeat) = parse_block(line, rest)?;
                let target = spec.stage_mut(stage).expect("known stage");
                target.blocks.extend(std::iter::repeat(block).take(repeat));
            }
            other => return Err(err(line, format!("unknown key `{other}`"))),
        }
    }
    Ok(spec)
}

fn parse_block(line: usize, text: &str) -> Result<(BlockSpec, usize)> {
    let mut tokens = text.split_whitespace();
    let kind_name = tokens.next().ok_or_else(|| err(line, "missing block kind"))?;
    let kind = BlockKind::parse(kind_name).ok_or_else(|| err(line, format!("unknown block kind `{kind_name}`")))?;
    let mut b = BlockSpec {
        kind,
        out_channels: 0,
        stride: 1,
        shrink: None,
        sr_ratio: None,
        kernel: None,
        in_channels: None,
    };
    let mut repeat = 1;
    let mut has_c = false;
    for tok in tokens {
        if let Some(n) = tok
            .strip_prefix('x')
            .filter(|n| !n.is_empty() && n.bytes().all(|c| c.is_ascii_digit()))
        {
            repeat = number(line, "x", n)?;
            continue;
        }
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key=value, got `{tok}`")))?;
        match k {
            "c" => {
                b.out_channels = number(line, k, v)?;
                has_c = true;
            }
            "k" => b.kernel = Some(number(line, k, v)?),
            "r" => b.shrink = Some(number(line, k, v)?),
            "s" if s_is_stride(kind) => b.stride = number(line, k, v)?,
            "s" => b.sr_ratio = Some(number(line, k, v)?),
            "stride" => b.stride = number(line, k, v)?,
            "cin" => b.in_channels = Some(number(line, k, v)?),
            _ => return Err(err(line, format!("unknown option `{k}`"))),
        }
    }
    if !has_c && kind != BlockKind::MaxPool {
        return Err(err(line, format!("{kind} needs `c=`")));
    }
    if repeat == 0 {
        return Err(err(line, "repeat count must be at least 1"));
    }
    Ok((b, repeat))
}

fn block_line(b: &BlockSpec) -> String {
    let mut s = b.kind.name().to_string();
    if b.kind != BlockKind::MaxPool {
        write!(s, " c={}", b.out_channels).unwrap();
    }
    if let Some(c) = b.in_channels {
        write!(s, " cin={c}").unwrap();
    }
    if let Some(r) = b.shrink {
        write!(s, " r={r}").unwrap();
    }
    if s_is_stride(b.kind) {
        write!(s, " s={}", b.stride).unwrap();
    } else {
        if let Some(sr) = b.sr_ratio {
            write!(s, " s={sr}").unwrap();
        }
        if b.stride != 1 {
            write!(s, " stride={}", b.stride).unwrap();
        }
    }
    if let Some(k) = b.kernel {
        write!(s, " k={k}").unwrap();
    }
    s
}

/// Renders `spec` so that [`parse_spec`] gives it back unchanged. Runs of
/// identical blocks collapse into one `xN` line.
pub fn emit_spec(spec: &ArchSpec) -> String {
    let mut out = String::new();
    writeln!(out, "name: {}", spec.name).unwrap();
    writeln!(out, "classes: {}", spec.num_classes).unwrap();
    if let Some(d) = spec.declared_depths {
        writeln!(out, "depths: {}", d.map(|x| x.to_string()).join("-")).unwrap();
    }
    for stage in spec.all_stages() {
        let mut i = 0;
        while i < stage.blocks.len() {
            let b = &stage.blocks[i];
            let run = stage.blocks[i..].iter().take_while(|o| *o == b).count();
            let repeat = if run > 1 { format!(" x{run}") } else { String::new() };
            writeln!(out, "{}: {}{repeat}", stage.name, block_line(b)).unwrap();
            i += run;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{preset, PRESET_NAMES};

    #[test]
    fn presets_round_trip() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            let text = emit_spec(&spec);
            assert_eq!(parse_spec(&text).unwrap(), spec, "{name}:\n{text}");
        }
    }

    #[test]
    fn documented_lines_parse() {
        let (b, n) = parse_block(1, "bottleneck c=768 s=1").unwrap();
        assert_eq!(
            (b.kind, b.out_channels, b.stride, n),
            (BlockKind::BottleNeck, 768, 1, 1)
        );
        let (m, _) = parse_block(1, "mixc c=1536 r=0.5 s=1 k=7").unwrap();
        assert_eq!(
            (m.shrink, m.sr_ratio, m.kernel, m.stride),
            (Some(0.5), Some(1), Some(7), 1)
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_spec("name: x\n\nstage2: bottleneck c=abc").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(matches!(
            parse_spec("stage9: conv c=3").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(parse_spec("stage2: transformer s=2").is_err());
    }
}
