//! A deliberately small flow layout and painter.
//!
//! Block elements stack vertically; text, links, images, and form controls
//! flow left to right and wrap. Glyphs are drawn as fixed-size hashed bit
//! patterns, so screenshots are byte-deterministic and cheap to produce.

use std::collections::BTreeMap;
use std::sync::Arc;

use webtask_core::raster::Raster;

use crate::dom::{collapse, Dom, DomKind};

pub const CHAR_W: i64 = 8;
pub const LINE_H: i64 = 18;
pub const MARGIN: i64 = 8;
pub const CONTROL_H: i64 = 26;

const BLOCK: [&str; 27] = [
    "html", "body", "div", "p", "h1", "h2", "h3", "h4", "h5", "h6", "ul", "ol", "li", "form", "section",
    "header", "footer", "nav", "main", "article", "aside", "table", "tr", "figure", "figcaption", "hr",
    "blockquote",
];

const TEXT_COLOR: [u8; 3] = [33, 33, 33];
const LINK_COLOR: [u8; 3] = [0, 0, 238];
const MUTED_COLOR: [u8; 3] = [130, 130, 130];
const BORDER: [u8; 3] = [118, 118, 118];
const BUTTON_FILL: [u8; 3] = [233, 233, 237];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Rect {
    fn union(self, o: Rect) -> Rect {
        let x0 = self.x.min(o.x);
        let y0 = self.y.min(o.y);
        let x1 = (self.x + self.w).max(o.x + o.w);
        let y1 = (self.y + self.h).max(o.y + o.h);
        Rect {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// True when any part lies inside the horizontal band `[top, top + height)`.
    pub fn intersects_band(&self, top: i64, width: i64, height: i64) -> bool {
        self.x < width && self.x + self.w > 0 && self.y < top + height && self.y + self.h > top
    }
}

#[derive(Debug, Clone)]
pub enum DrawOp {
    Fill(Rect, [u8; 3]),
    Stroke(Rect, [u8; 3]),
    Text {
        x: i64,
        y: i64,
        text: String,
        scale: i64,
        color: [u8; 3],
    },
    Image(Rect, String),
}

#[derive(Debug, Clone)]
pub struct Layout {
    /// Box per DOM node; `None` for nodes that produced nothing.
    pub rects: Vec<Option<Rect>>,
    pub ops: Vec<DrawOp>,
    pub height: i64,
    pub width: i64,
}

/// Typed form values keyed by DOM node.
pub type FormValues = BTreeMap<usize, String>;

pub fn is_block(tag: &str) -> bool {
    BLOCK.contains(&tag)
}

/// Label shown by a control or the text a form control currently holds.
pub fn control_value(dom: &Dom, n: usize, values: &FormValues) -> String {
    if let Some(v) = values.get(&n) {
        return v.clone();
    }
    match dom.tag(n) {
        Some("textarea") => dom.text_content(n),
        Some("select") => selected_option(dom, n).map(|o| dom.text_content(o)).unwrap_or_default(),
        _ => dom.attr(n, "value").unwrap_or("").to_string(),
    }
}

/// The `selected` option, or the first one.
pub fn selected_option(dom: &Dom, select: usize) -> Option<usize> {
    let options: Vec<usize> = dom
        .descendants(select)
        .into_iter()
        .filter(|d| dom.tag(*d) == Some("option"))
        .collect();
    options
        .iter()
        .copied()
        .find(|o| dom.attr(*o, "selected").is_some())
        .or_else(|| options.first().copied())
}

struct Flow<'a> {
    dom: &'a Dom,
    values: &'a FormValues,
    left: i64,
    right: i64,
    x: i64,
    y: i64,
    line_h: i64,
    scale: i64,
    color: [u8; 3],
    rects: Vec<Option<Rect>>,
    ops: Vec<DrawOp>,
}

fn attr_px(dom: &Dom, n: usize, name: &str) -> Option<i64> {
    dom.attr(n, name)?.trim().trim_end_matches("px").parse().ok()
}

impl Flow<'_> {
    fn newline(&mut self) {
        if self.line_h > 0 {
            self.y += self.line_h + 2;
        }
        self.x = self.left;
        self.line_h = 0;
    }

    fn place(&mut self, w: i64, h: i64) -> Rect {
        let avail = self.right - self.left;
        if self.x > self.left && self.x + w > self.right {
            self.newline();
        }
        let w = w.min(avail).max(1);
        let r = Rect {
            x: self.x,
            y: self.y,
            w,
            h,
        };
        self.x += w + CHAR_W;
        self.line_h = self.line_h.max(h);
        r
    }

    fn set_rect(&mut self, n: usize, r: Rect) {
        self.rects[n] = Some(match self.rects[n] {
            Some(old) => old.union(r),
            None => r,
        });
    }

    fn text_run(&mut self, n: usize, text: &str) {
        let cw = CHAR_W * self.scale;
        for word in text.split_whitespace() {
            let w = word.chars().count() as i64 * cw;
            let r = self.place(w, LINE_H * self.scale);
            self.ops.push(DrawOp::Text {
                x: r.x,
                y: r.y,
                text: word.to_string(),
                scale: self.scale,
                color: self.color,
            });
            self.set_rect(n, r);
        }
    }

    fn control(&mut self, n: usize, w: i64, h: i64, fill: [u8; 3], label: &str, label_color: [u8; 3]) {
        let r = self.place(w, h);
        self.ops.push(DrawOp::Fill(r, fill));
        self.ops.push(DrawOp::Stroke(r, BORDER));
        let max_chars = ((r.w - 12) / CHAR_W).max(0) as usize;
        let shown: String = collapse(label).chars().take(max_chars).collect();
        if !shown.is_empty() {
            self.ops.push(DrawOp::Text {
                x: r.x + 6,
                y: r.y + (h - LINE_H) / 2,
                text: shown,
                scale: 1,
                color: label_color,
            });
        }
        self.set_rect(n, r);
    }

    fn walk(&mut self, n: usize, image_size: &mut dyn FnMut(&str) -> Option<(u32, u32)>) {
        let dom = self.dom;
        let tag = match &dom.nodes[n].kind {
            DomKind::Text(t) => {
                let t = t.clone();
                self.text_run(n, &t);
                return;
            }
            DomKind::Document => {
                for c in dom.nodes[n].children.clone() {
                    self.walk(c, image_size);
                }
                return;
            }
            DomKind::Element { tag, .. } => tag.as_str(),
        };
        if dom.is_hidden(n) {
            return;
        }
        match tag {
            "br" => self.newline(),
            "img" => {
                let src = dom.attr(n, "src").unwrap_or("").to_string();
                let (w, h) = match (attr_px(dom, n, "width"), attr_px(dom, n, "height")) {
                    (Some(w), Some(h)) => (w, h),
                    _ => image_size(&src).map(|(w, h)| (w as i64, h as i64)).unwrap_or((100, 100)),
                };
                let r = self.place(w, h);
                self.ops.push(DrawOp::Image(r, src));
                self.set_rect(n, r);
            }
            "input" => {
                let kind = dom.attr(n, "type").unwrap_or("text").to_ascii_lowercase();
                match kind.as_str() {
                    "submit" | "button" | "reset" => {
                        let label = dom.attr(n, "value").unwrap_or("Submit").to_string();
                        let w = label.chars().count() as i64 * CHAR_W + 20;
                        self.control(n, w, CONTROL_H, BUTTON_FILL, &label, TEXT_COLOR);
                    }
                    "checkbox" | "radio" => {
                        let checked = self.values.get(&n).map(|v| v == "on").unwrap_or(dom.attr(n, "checked").is_some());
                        let r = self.place(14, 14);
                        self.ops.push(DrawOp::Stroke(r, BORDER));
                        if checked {
                            self.ops.push(DrawOp::Fill(Rect { x: r.x + 3, y: r.y + 3, w: 8, h: 8 }, TEXT_COLOR));
                        }
                        self.set_rect(n, r);
                    }
                    _ => {
                        let w = attr_px(dom, n, "size").map(|s| s * CHAR_W + 12).unwrap_or(240);
                        let value = control_value(dom, n, self.values);
                        let (label, color) = if value.is_empty() {
                            (dom.attr(n, "placeholder").unwrap_or("").to_string(), MUTED_COLOR)
                        } else {
                            (value, TEXT_COLOR)
                        };
                        self.control(n, w, CONTROL_H, [255, 255, 255], &label, color);
                    }
                }
            }
            "textarea" => {
                let value = control_value(dom, n, self.values);
                let (label, color) = if value.is_empty() {
                    (dom.attr(n, "placeholder").unwrap_or("").to_string(), MUTED_COLOR)
                } else {
                    (value, TEXT_COLOR)
                };
                self.control(n, 320, 64, [255, 255, 255], &label, color);
            }
            "select" => {
                let label = control_value(dom, n, self.values);
                self.control(n, 180, CONTROL_H, [255, 255, 255], &label, TEXT_COLOR);
            }
            "button" => {
                let label = dom.text_content(n);
                let w = label.chars().count() as i64 * CHAR_W + 20;
                self.control(n, w, CONTROL_H, BUTTON_FILL, &label, TEXT_COLOR);
            }
            t if is_block(t) => {
                self.newline();
                let (left0, right0, scale0, y0) = (self.left, self.right, self.scale, self.y);
                match t {
                    "ul" | "ol" | "blockquote" => {
                        self.left += 24;
                        self.x = self.left;
                    }
                    "h1" | "h2" => self.scale = 2,
                    _ => {}
                }
                if t == "hr" {
                    self.ops.push(DrawOp::Fill(Rect { x: self.left, y: self.y + 4, w: self.right - self.left, h: 1 }, BORDER));
                    self.y += 10;
                }
                for c in dom.nodes[n].children.clone() {
                    self.walk(c, image_size);
                }
                self.newline();
                if self.y > y0 {
                    self.set_rect(
                        n,
                        Rect {
                            x: left0,
                            y: y0,
                            w: right0 - left0,
                            h: self.y - y0,
                        },
                    );
                }
                self.left = left0;
                self.right = right0;
                self.scale = scale0;
                self.x = self.left;
                if matches!(t, "p" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "ul" | "ol" | "form" | "table") {
                    self.y += 6;
                }
            }
            _ => {
                let color0 = self.color;
                if t_is_link(dom, n) {
                    self.color = LINK_COLOR;
                }
                for c in dom.nodes[n].children.clone() {
                    self.walk(c, image_size);
                    if let Some(r) = self.rects[c] {
                        self.set_rect(n, r);
                    }
                }
                self.color = color0;
            }
        }
    }
}

fn t_is_link(dom: &Dom, n: usize) -> bool {
    dom.tag(n) == Some("a") && dom.attr(n, "href").is_some()
}

/// Lays out the document for a viewport `width` pixels wide.
pub fn layout(dom: &Dom, width: u32, values: &FormValues, image_size: &mut dyn FnMut(&str) -> Option<(u32, u32)>) -> Layout {
    let width = width as i64;
    let mut flow = Flow {
        dom,
        values,
        left: MARGIN,
        right: width - MARGIN,
        x: MARGIN,
        y: MARGIN,
        line_h: 0,
        scale: 1,
        color: TEXT_COLOR,
        rects: vec![None; dom.nodes.len()],
        ops: Vec::new(),
    };
    flow.walk(0, image_size);
    flow.newline();
    // inline parents of block children pick up their boxes late; fold them in
    for n in (0..dom.nodes.len()).rev() {
        if let (Some(r), Some(p)) = (flow.rects[n], dom.nodes[n].parent) {
            if !dom.is_hidden(p) && dom.tag(p).is_some_and(|t| !is_block(t)) {
                flow.set_rect(p, r);
            }
        }
    }
    Layout {
        rects: flow.rects,
        ops: flow.ops,
        height: flow.y + MARGIN,
        width,
    }
}

/// 5x7 pattern for a glyph; bit 34 is the top-left pixel.
fn glyph_bits(c: char) -> u64 {
    let mut h = (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 29;
    // keep glyphs dense enough to read as text
    (h | 0x4_2108_4210) & 0x7_FFFF_FFFF
}

fn draw_text(r: &mut Raster, x: i64, y: i64, text: &str, scale: i64, color: [u8; 3]) {
    let cw = CHAR_W * scale;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            continue;
        }
        let bits = glyph_bits(c);
        let gx = x + i as i64 * cw + scale;
        let gy = y + 5 * scale;
        for row in 0..7 {
            for col in 0..5 {
                if bits & (1 << (34 - (row * 5 + col))) != 0 {
                    r.fill_rect(gx + col * scale, gy + row * scale, scale, scale, color);
                }
            }
        }
    }
}

/// Paints the part of the page visible at `scroll_y`.
pub fn paint(
    layout: &Layout,
    width: u32,
    height: u32,
    scroll_y: i64,
    image: &mut dyn FnMut(&str) -> Option<Arc<Raster>>,
) -> Raster {
    let mut out = Raster::filled(width, height, [255, 255, 255]);
    let visible = |r: &Rect| r.intersects_band(scroll_y, width as i64, height as i64);
    for op in &layout.ops {
        match op {
            DrawOp::Fill(r, c) if visible(r) => out.fill_rect(r.x, r.y - scroll_y, r.w, r.h, *c),
            DrawOp::Stroke(r, c) if visible(r) => out.stroke_rect(r.x, r.y - scroll_y, r.w, r.h, 1, *c),
            DrawOp::Text {
                x,
                y,
                text,
                scale,
                color,
            } => {
                let r = Rect {
                    x: *x,
                    y: *y,
                    w: text.chars().count() as i64 * CHAR_W * scale,
                    h: LINE_H * scale,
                };
                if visible(&r) {
                    draw_text(&mut out, *x, *y - scroll_y, text, *scale, *color);
                }
            }
            DrawOp::Image(r, src) if visible(r) => match image(src) {
                Some(img) => {
                    let scaled = if img.width() as i64 == r.w && img.height() as i64 == r.h {
                        (*img).clone()
                    } else {
                        img.resize_nearest(r.w.max(1) as u32, r.h.max(1) as u32)
                    };
                    out.blit(&scaled, r.x, r.y - scroll_y);
                }
                None => {
                    out.fill_rect(r.x, r.y - scroll_y, r.w, r.h, [220, 220, 220]);
                    out.stroke_rect(r.x, r.y - scroll_y, r.w, r.h, 1, BORDER);
                }
            },
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lay(html: &str) -> (Dom, Layout) {
        let dom = Dom::parse(html);
        let l = layout(&dom, 400, &FormValues::new(), &mut |_| None);
        (dom, l)
    }

    #[test]
    fn blocks_stack_and_inlines_flow() {
        let (dom, l) = lay("<body><p>one two</p><p><a href='/a'>A</a> <a href='/b'>B</a></p></body>");
        let ps = dom.select("p").unwrap();
        let (p0, p1) = (l.rects[ps[0]].unwrap(), l.rects[ps[1]].unwrap());
        assert!(p1.y >= p0.y + p0.h);
        let links = dom.select("a").unwrap();
        let (a, b) = (l.rects[links[0]].unwrap(), l.rects[links[1]].unwrap());
        assert_eq!(a.y, b.y);
        assert!(b.x > a.x + a.w);
    }

    #[test]
    fn long_text_wraps() {
        let words = vec!["word"; 40].join(" ");
        let (dom, l) = lay(&format!("<body><p>{words}</p></body>"));
        let p = l.rects[dom.select("p").unwrap()[0]].unwrap();
        assert!(p.h > LINE_H * 2);
        assert!(p.w <= 400);
    }

    #[test]
    fn hidden_elements_have_no_box() {
        let (dom, l) = lay("<body><p hidden>x</p><a href='/' style='display:none'>y</a></body>");
        assert!(l.rects[dom.select("p").unwrap()[0]].is_none());
        assert!(l.rects[dom.select("a").unwrap()[0]].is_none());
    }

    #[test]
    fn painting_is_deterministic() {
        let (_, l) = lay("<body><h1>Title</h1><p>body text <button>Go</button></p><img src='x' width='20' height='10'></body>");
        let a = paint(&l, 400, 300, 0, &mut |_| None);
        let b = paint(&l, 400, 300, 0, &mut |_| None);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), Raster::filled(400, 300, [255, 255, 255]).digest());
    }
}
