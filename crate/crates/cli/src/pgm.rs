//! 8-bit binary PGM (P5) heatmaps.
//!
//! Input arrays are row-major with row 0 at the lowest y value; images are
//! written with the highest y row on top. Current maps are scaled linearly,
//! `gray = round(255·(v − min)/(max − min))`, and the range is recorded in a
//! header comment. A constant map has a degenerate range and is written as
//! uniform gray 128. State maps use fixed levels: SC 0, Barrier 85, SD 170,
//! DD 255.

use std::io::Write;

use qdarray_core::StateLabel;

pub const STATE_LEVELS: [u8; 4] = [0, 85, 170, 255];

/// Linearly scaled heatmap.
pub fn heatmap<W: Write>(values: &[f64], width: usize, height: usize, mut out: W) -> std::io::Result<()> {
    assert_eq!(values.len(), width * height, "heatmap size");
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let degenerate = !(hi > lo);
    writeln!(out, "P5")?;
    if degenerate {
        writeln!(out, "# degenerate range: min = max = {lo:e}; uniform gray 128")?;
    } else {
        writeln!(out, "# linear: gray = round(255*(v-min)/(max-min)), min = {lo:e}, max = {hi:e}")?;
    }
    writeln!(out, "# top row = highest y")?;
    writeln!(out, "{width} {height}\n255")?;
    let px: Vec<u8> = flipped(values, width, height)
        .map(|v| {
            if degenerate {
                128
            } else {
                (255.0 * (v - lo) / (hi - lo)).round() as u8
            }
        })
        .collect();
    out.write_all(&px)
}

/// State map with one fixed gray level per label.
pub fn states<W: Write>(labels: &[StateLabel], width: usize, height: usize, mut out: W) -> std::io::Result<()> {
    assert_eq!(labels.len(), width * height, "state map size");
    writeln!(out, "P5")?;
    writeln!(out, "# states: SC = 0, Barrier = 85, SD = 170, DD = 255")?;
    writeln!(out, "# top row = highest y")?;
    writeln!(out, "{width} {height}\n255")?;
    let px: Vec<u8> = flipped(labels, width, height)
        .map(|s| STATE_LEVELS[s.index()])
        .collect();
    out.write_all(&px)
}

fn flipped<T: Copy>(values: &[T], width: usize, height: usize) -> impl Iterator<Item = T> + '_ {
    (0..height)
        .rev()
        .flat_map(move |r| values[r * width..(r + 1) * width].iter().copied())
}

/// Parsed P5 image.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub comments: Vec<String>,
    pub pixels: Vec<u8>,
}

/// Read a P5 file as written by this module.
pub fn parse(bytes: &[u8]) -> Option<Pgm> {
    let mut pos = 0;
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let end = pos + bytes[pos..].iter().position(|&b| b == b'\n')?;
        let line = std::str::from_utf8(&bytes[pos..end]).ok()?;
        pos = end + 1;
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
        } else {
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
    }
    if tokens[0] != "P5" || tokens[3] != "255" {
        return None;
    }
    let width = tokens[1].parse().ok()?;
    let height = tokens[2].parse().ok()?;
    let pixels = bytes.get(pos..)?.to_vec();
    (pixels.len() == width * height).then_some(Pgm {
        width,
        height,
        comments,
        pixels,
    })
}
