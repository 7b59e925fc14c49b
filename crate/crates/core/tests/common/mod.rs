//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use inkscribe::preproc::GrayImage;
use inkscribe::recognizer::{CharSet, ModelConfig};

/// 5×7 glyphs; only letters without descenders so every word sits on one
/// baseline.
const GLYPHS: &[(char, [&str; 7])] = &[
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"]),
    ('b', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#....", ".###."]),
    ('d', ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."]),
    ('h', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"]),
    ('n', [".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."]),
    ('s', [".....", ".....", ".####", "#....", ".###.", "....#", "####."]),
    ('t', [".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"]),
];

pub const FONT_CHARS: &str = "abcdehiklmnorstuvwxz";

/// Pixels per glyph cell.
pub const SCALE: u32 = 3;
pub const ADVANCE: u32 = 6 * SCALE;
pub const WORD_HEIGHT: u32 = 32;
const TOP: u32 = 5;

fn glyph(c: char) -> &'static [&'static str; 7] {
    &GLYPHS
        .iter()
        .find(|(g, _)| *g == c)
        .unwrap_or_else(|| panic!("no glyph for {c:?}"))
        .1
}

/// Renders `word` black on white, 32 px tall, starting `pad` pixels from the
/// left. Width is the glyph run plus `pad` on both sides.
pub fn render_word(word: &str, pad: u32) -> GrayImage {
    let n = word.chars().count() as u32;
    let width = (n * ADVANCE).saturating_sub(SCALE) + 2 * pad;
    let mut img = GrayImage::filled(width.max(1), WORD_HEIGHT, 255);
    for (i, c) in word.chars().enumerate() {
        let rows = glyph(c);
        let x0 = pad + i as u32 * ADVANCE;
        for (gy, row) in rows.iter().enumerate() {
            for (gx, px) in row.chars().enumerate() {
                if px != '#' {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        img.set(x0 + gx as u32 * SCALE + dx, TOP + gy as u32 * SCALE + dy, 0);
                    }
                }
            }
        }
    }
    img
}

/// Thirty-two labelled word images: sixteen words, each drawn twice with
/// different side padding.
pub fn learning_fixtures() -> Vec<(GrayImage, String)> {
    const WORDS: [&str; 16] = [
        "the", "ink", "crown", "lake", "mist", "dune", "hive", "bolt", "zero", "wax", "stream", "cab", "more", "via",
        "kids", "wheel",
    ];
    let mut out = Vec::new();
    for pad in [4, 9] {
        for w in WORDS {
            out.push((render_word(w, pad), w.to_string()));
        }
    }
    out
}

/// Model size for desk-scale training runs.
pub fn compact_config() -> ModelConfig {
    ModelConfig::compact(16, 64, 32, CharSet::iam().classes())
}

/// Pastes word images onto a white page; returns the page and each word's
/// `(x, y, w, h)`.
pub fn compose_page(words: &[GrayImage], per_line: usize) -> (GrayImage, Vec<(i64, i64, i64, i64)>) {
    let gap = 20u32;
    let line_h = WORD_HEIGHT + 24;
    let lines = words.len().div_ceil(per_line.max(1)) as u32;
    let mut widths = vec![0u32; lines as usize];
    for (i, w) in words.iter().enumerate() {
        widths[i / per_line] += w.width() + gap;
    }
    let page_w = widths.iter().max().copied().unwrap_or(0) + 2 * gap;
    let page_h = lines * line_h + 2 * gap;
    let mut page = GrayImage::filled(page_w, page_h, 255);
    let mut rects = Vec::new();
    let mut x = gap;
    for (i, w) in words.iter().enumerate() {
        if i % per_line == 0 {
            x = gap;
        }
        let y = gap + (i / per_line) as u32 * line_h;
        for yy in 0..w.height() {
            for xx in 0..w.width() {
                page.set(x + xx, y + yy, w.get(xx, yy));
            }
        }
        rects.push((x as i64, y as i64, w.width() as i64, w.height() as i64));
        x += w.width() + gap;
    }
    (page, rects)
}
