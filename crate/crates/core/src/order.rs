//! Editable word boxes of one page and their reading-order serialization.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrderError {
    #[error("unknown box id {0}")]
    UnknownId(BoxId),
    #[error("box has zero area")]
    ZeroArea,
    #[error("invalid order config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxId(pub u64);

impl fmt::Display for BoxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(x, y, w, h)` in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Rect {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Rect { x, y, w, h }
    }

    /// Rectangle spanned by a mouse drag, in either direction.
    pub fn from_drag(start: (i64, i64), end: (i64, i64)) -> Self {
        Rect {
            x: start.0.min(end.0),
            y: start.1.min(end.1),
            w: (end.0 - start.0).abs(),
            h: (end.1 - start.1).abs(),
        }
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        Rect {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Intersection with `[0, width) × [0, height)`.
    pub fn clamped(&self, width: u32, height: u32) -> Rect {
        let x0 = self.x.clamp(0, width as i64);
        let y0 = self.y.clamp(0, height as i64);
        let x1 = self.right().clamp(0, width as i64);
        let y1 = self.bottom().clamp(0, height as i64);
        Rect {
            x: x0,
            y: y0,
            w: (x1 - x0).max(0),
            h: (y1 - y0).max(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: BoxId,
    pub rect: Rect,
    pub angle: f64,
    /// Detector confidence; `None` for user-drawn boxes.
    pub score: Option<f64>,
    pub text: Option<String>,
    pub text_edited: bool,
}

impl BoxRecord {
    pub fn new(id: BoxId, rect: Rect) -> Self {
        BoxRecord {
            id,
            rect,
            angle: 0.0,
            score: None,
            text: None,
            text_edited: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderConfig {
    /// Minimum vertical overlap, as a fraction of the smaller height, for a
    /// box to join the current line.
    pub line_overlap_ratio: f64,
}

impl Default for OrderConfig {
    fn default() -> Self {
        OrderConfig {
            line_overlap_ratio: 0.5,
        }
    }
}

impl OrderConfig {
    pub fn validate(&self) -> Result<(), OrderError> {
        if !(self.line_overlap_ratio > 0.0 && self.line_overlap_ratio <= 1.0) {
            return Err(OrderError::InvalidConfig(format!(
                "line_overlap_ratio {} outside (0, 1]",
                self.line_overlap_ratio
            )));
        }
        Ok(())
    }
}

/// Reading order of box ids. Neighbour links are always derived from the
/// sequence, never stored separately.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderedLayout {
    sequence: Vec<BoxId>,
}

impl OrderedLayout {
    pub fn new(sequence: Vec<BoxId>) -> Self {
        OrderedLayout { sequence }
    }

    pub fn sequence(&self) -> &[BoxId] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn position(&self, id: BoxId) -> Option<usize> {
        self.sequence.iter().position(|&x| x == id)
    }

    /// `(prev, next)` of `id`.
    pub fn neighbors(&self, id: BoxId) -> Result<(Option<BoxId>, Option<BoxId>), OrderError> {
        let k = self.position(id).ok_or(OrderError::UnknownId(id))?;
        let prev = k.checked_sub(1).map(|p| self.sequence[p]);
        let next = self.sequence.get(k + 1).copied();
        Ok((prev, next))
    }

    pub fn neighbor_map(&self) -> HashMap<BoxId, (Option<BoxId>, Option<BoxId>)> {
        self.sequence
            .iter()
            .enumerate()
            .map(|(k, &id)| {
                let prev = k.checked_sub(1).map(|p| self.sequence[p]);
                (id, (prev, self.sequence.get(k + 1).copied()))
            })
            .collect()
    }

    pub fn swap(&self, a: BoxId, b: BoxId) -> Result<OrderedLayout, OrderError> {
        let ia = self.position(a).ok_or(OrderError::UnknownId(a))?;
        let ib = self.position(b).ok_or(OrderError::UnknownId(b))?;
        let mut sequence = self.sequence.clone();
        sequence.swap(ia, ib);
        Ok(OrderedLayout { sequence })
    }

    fn remove(&mut self, id: BoxId) {
        self.sequence.retain(|&x| x != id);
    }

    fn push(&mut self, id: BoxId) {
        self.sequence.push(id);
    }

    /// True when the sequence is a permutation of `ids`.
    pub fn is_permutation_of<'a>(&self, ids: impl IntoIterator<Item = &'a BoxId>) -> bool {
        let mut a: Vec<BoxId> = self.sequence.clone();
        let mut b: Vec<BoxId> = ids.into_iter().copied().collect();
        a.sort();
        b.sort();
        a == b
    }
}

/// Groups boxes into text lines.
///
/// Boxes are visited by ascending top edge (then x, then id). A box joins the
/// current line when its vertical overlap with the line's running y-interval
/// is at least `ratio × min(box height, line height)`; otherwise it opens a
/// new line. Lines are returned by ascending mean centre-y, each sorted by
/// left edge, then y, then id.
pub fn cluster_lines(boxes: &[BoxRecord], cfg: &OrderConfig) -> Vec<Vec<BoxId>> {
    let mut sorted: Vec<&BoxRecord> = boxes.iter().collect();
    sorted.sort_by_key(|b| (b.rect.y, b.rect.x, b.id));

    struct Line<'a> {
        top: i64,
        bottom: i64,
        members: Vec<&'a BoxRecord>,
    }
    let mut lines: Vec<Line> = Vec::new();
    for b in sorted {
        let joins = lines.last().is_some_and(|line| {
            let overlap = (line.bottom.min(b.rect.bottom()) - line.top.max(b.rect.y)).max(0);
            let min_h = b.rect.h.min(line.bottom - line.top);
            overlap as f64 >= cfg.line_overlap_ratio * min_h as f64 && overlap > 0
        });
        if joins {
            let line = lines.last_mut().expect("checked");
            line.top = line.top.min(b.rect.y);
            line.bottom = line.bottom.max(b.rect.bottom());
            line.members.push(b);
        } else {
            lines.push(Line {
                top: b.rect.y,
                bottom: b.rect.bottom(),
                members: vec![b],
            });
        }
    }

    let mut keyed: Vec<(f64, usize, Vec<BoxId>)> = lines
        .into_iter()
        .enumerate()
        .map(|(i, mut line)| {
            let mean_cy = line
                .members
                .iter()
                .map(|b| b.rect.y as f64 + b.rect.h as f64 / 2.0)
                .sum::<f64>()
                / line.members.len() as f64;
            line.members.sort_by_key(|b| (b.rect.x, b.rect.y, b.id));
            (mean_cy, i, line.members.iter().map(|b| b.id).collect())
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, ids)| ids).collect()
}

pub fn serialize_boxes(boxes: &[BoxRecord], cfg: &OrderConfig) -> OrderedLayout {
    OrderedLayout::new(cluster_lines(boxes, cfg).into_iter().flatten().collect())
}

/// Splits `layout` into runs of consecutive boxes that belong to the same
/// geometric line cluster. Used for line breaks in transcripts.
pub fn line_runs(boxes: &[BoxRecord], layout: &OrderedLayout, cfg: &OrderConfig) -> Vec<Vec<BoxId>> {
    let cluster: HashMap<BoxId, usize> = cluster_lines(boxes, cfg)
        .into_iter()
        .enumerate()
        .flat_map(|(i, ids)| ids.into_iter().map(move |id| (id, i)))
        .collect();
    let mut runs: Vec<Vec<BoxId>> = Vec::new();
    let mut last: Option<usize> = None;
    for &id in layout.sequence() {
        let c = cluster.get(&id).copied();
        match runs.last_mut() {
            Some(run) if c.is_some() && c == last => run.push(id),
            _ => runs.push(vec![id]),
        }
        last = c;
    }
    runs
}

/// The editable box set of one page together with its reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub width: u32,
    pub height: u32,
    boxes: Vec<BoxRecord>,
    layout: OrderedLayout,
    layout_stale: bool,
}

impl Page {
    pub fn new(width: u32, height: u32) -> Self {
        Page {
            width,
            height,
            boxes: Vec::new(),
            layout: OrderedLayout::default(),
            layout_stale: false,
        }
    }

    /// Builds a page from stored parts; the caller validates the layout.
    pub fn from_parts(width: u32, height: u32, boxes: Vec<BoxRecord>, layout: OrderedLayout, layout_stale: bool) -> Self {
        Page {
            width,
            height,
            boxes,
            layout,
            layout_stale,
        }
    }

    pub fn boxes(&self) -> &[BoxRecord] {
        &self.boxes
    }

    pub fn layout(&self) -> &OrderedLayout {
        &self.layout
    }

    /// Set by geometric edits; cleared by [`Page::serialize`].
    pub fn layout_stale(&self) -> bool {
        self.layout_stale
    }

    pub fn get(&self, id: BoxId) -> Result<&BoxRecord, OrderError> {
        self.boxes.iter().find(|b| b.id == id).ok_or(OrderError::UnknownId(id))
    }

    fn get_mut(&mut self, id: BoxId) -> Result<&mut BoxRecord, OrderError> {
        self.boxes.iter_mut().find(|b| b.id == id).ok_or(OrderError::UnknownId(id))
    }

    /// Boxes in reading order.
    pub fn ordered(&self) -> Vec<&BoxRecord> {
        self.layout
            .sequence()
            .iter()
            .filter_map(|&id| self.boxes.iter().find(|b| b.id == id))
            .collect()
    }

    fn fresh_id(&self) -> BoxId {
        BoxId(self.boxes.iter().map(|b| b.id.0).max().map_or(1, |m| m + 1))
    }

    /// Inserts a detector box (already in page coordinates) at the end of the
    /// current order.
    pub fn insert_detected(&mut self, rect: Rect, angle: f64, score: f64) -> Result<BoxId, OrderError> {
        let id = self.add_box(rect)?.id;
        let b = self.get_mut(id)?;
        b.angle = angle;
        b.score = Some(score);
        Ok(id)
    }

    pub fn add_box(&mut self, rect: Rect) -> Result<BoxRecord, OrderError> {
        let rect = rect.clamped(self.width, self.height);
        if rect.area() == 0 {
            return Err(OrderError::ZeroArea);
        }
        let record = BoxRecord::new(self.fresh_id(), rect);
        self.boxes.push(record.clone());
        self.layout.push(record.id);
        self.layout_stale = true;
        Ok(record)
    }

    pub fn delete_box(&mut self, id: BoxId) -> Result<(), OrderError> {
        let idx = self
            .boxes
            .iter()
            .position(|b| b.id == id)
            .ok_or(OrderError::UnknownId(id))?;
        self.boxes.remove(idx);
        self.layout.remove(id);
        self.layout_stale = true;
        Ok(())
    }

    /// Replaces the rectangle. Any transcript on the box becomes stale and is
    /// dropped; the box keeps its place in the order.
    pub fn update_box(&mut self, id: BoxId, rect: Rect) -> Result<BoxRecord, OrderError> {
        let (w, h) = (self.width, self.height);
        let b = self.get_mut(id)?;
        let rect = rect.clamped(w, h);
        if rect.area() == 0 {
            return Err(OrderError::ZeroArea);
        }
        b.rect = rect;
        b.text = None;
        b.text_edited = false;
        let out = b.clone();
        self.layout_stale = true;
        Ok(out)
    }

    pub fn swap(&mut self, a: BoxId, b: BoxId) -> Result<(), OrderError> {
        self.layout = self.layout.swap(a, b)?;
        Ok(())
    }

    /// Human transcript for a box; marks it as edited.
    pub fn set_text(&mut self, id: BoxId, text: String) -> Result<(), OrderError> {
        let b = self.get_mut(id)?;
        b.text = Some(text);
        b.text_edited = true;
        Ok(())
    }

    /// Machine transcript; never overwrites a human edit. Returns whether
    /// the text was written.
    pub fn set_recognized(&mut self, id: BoxId, text: String) -> Result<bool, OrderError> {
        let b = self.get_mut(id)?;
        if b.text_edited {
            return Ok(false);
        }
        b.text = Some(text);
        Ok(true)
    }

    pub fn serialize(&mut self, cfg: &OrderConfig) -> &OrderedLayout {
        self.layout = serialize_boxes(&self.boxes, cfg);
        self.layout_stale = false;
        &self.layout
    }
}
