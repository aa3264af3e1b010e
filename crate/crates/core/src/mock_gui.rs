//! A small deterministic GUI application used as the bundled test target.
//!
//! The app is defined by a TOML file (window geometry plus a list of
//! widgets), renders itself to an [`RgbImage`] with the built-in bitmap
//! font, and reacts to a pointer/keyboard event stream. Rendering is a pure
//! function of the widget state, and state is a pure function of the event
//! sequence, so screenshots are bit-reproducible across runs and machines.
//!
//! Events arrive either as [`GuiEvent`]s or as `xdotool`-style command lines
//! via [`parse_xdotool`], which is the exact vocabulary the input driver
//! emits for real containers; the in-process runtime and the standalone
//! `ripple-mock-sut` binary both route through it, keeping local execution
//! honest about the command surface.
//!
//! On startup the app writes a marker file into its private profile
//! directory. Session isolation tests read the marker to prove that no
//! state leaks between container sessions.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::config::Geometry;
use crate::font;

const BACKGROUND: Rgb<u8> = Rgb([240, 240, 240]);
const TITLE_BAR: Rgb<u8> = Rgb([40, 60, 110]);
const WIDGET_FILL: Rgb<u8> = Rgb([214, 214, 214]);
const WIDGET_PRESSED: Rgb<u8> = Rgb([140, 190, 255]);
const FIELD_FILL: Rgb<u8> = Rgb([255, 255, 255]);
const SELECTION_FILL: Rgb<u8> = Rgb([60, 90, 216]);
const BORDER: Rgb<u8> = Rgb([20, 20, 20]);
const TEXT: Rgb<u8> = Rgb([10, 10, 10]);
const LOG_BAR: Rgb<u8> = Rgb([56, 56, 56]);
const LOG_TEXT: Rgb<u8> = Rgb([235, 235, 235]);
const POINTER: Rgb<u8> = Rgb([170, 40, 40]);

const ROW_HEIGHT: u32 = 12;
const LOG_BAR_HEIGHT: u32 = 12;
const TITLE_BAR_HEIGHT: u32 = 14;
const MENU_ITEMS: [&str; 3] = ["Cut", "Copy", "Paste"];
const MENU_WIDTH: u32 = 64;

/// Widget description as it appears in the app definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElementDef {
    Label {
        id: String,
        text: String,
        x: u32,
        y: u32,
    },
    Button {
        id: String,
        label: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        pressed_label: Option<String>,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    TextField {
        id: String,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        #[serde(default)]
        value: String,
    },
    List {
        id: String,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        items: Vec<String>,
    },
    Slider {
        id: String,
        x: u32,
        y: u32,
        width: u32,
        #[serde(default)]
        value: u32,
    },
}

impl ElementDef {
    pub fn id(&self) -> &str {
        match self {
            ElementDef::Label { id, .. }
            | ElementDef::Button { id, .. }
            | ElementDef::TextField { id, .. }
            | ElementDef::List { id, .. }
            | ElementDef::Slider { id, .. } => id,
        }
    }

    /// Hit-test box, inclusive-exclusive.
    fn bounds(&self) -> (u32, u32, u32, u32) {
        match *self {
            ElementDef::Label { x, y, ref text, .. } => {
                (x, y, x + font::text_width(text), y + font::GLYPH_HEIGHT)
            }
            ElementDef::Button {
                x, y, width, height, ..
            }
            | ElementDef::TextField {
                x, y, width, height, ..
            }
            | ElementDef::List {
                x, y, width, height, ..
            } => (x, y, x + width, y + height),
            ElementDef::Slider { x, y, width, .. } => (x, y, x + width, y + 16),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDefinition {
    pub title: String,
    pub geometry: Geometry,
    #[serde(default, rename = "element")]
    pub elements: Vec<ElementDef>,
}

pub fn parse_definition(toml_text: &str) -> Result<AppDefinition, String> {
    let def: AppDefinition = toml::from_str(toml_text).map_err(|e| e.to_string())?;
    let mut seen = std::collections::HashSet::new();
    for el in &def.elements {
        if !seen.insert(el.id().to_string()) {
            return Err(format!("duplicate element id {:?}", el.id()));
        }
    }
    Ok(def)
}

/// Semantic input events. `Click.count` distinguishes single, double, and
/// triple clicks; X11 wheel conventions map scroll to buttons 4-7.
#[derive(Debug, Clone, PartialEq)]
pub enum GuiEvent {
    MouseMove { x: u32, y: u32 },
    Click { button: u8, count: u8 },
    ButtonPress { button: u8 },
    ButtonRelease { button: u8 },
    Type { text: String },
    Key { combo: String },
    Sleep { ms: u64 },
}

/// Parses one `xdotool`-style command line into events. Only the subset the
/// input driver emits is accepted; anything else is an error so drift
/// between driver and interpreter fails loudly.
pub fn parse_xdotool(argv: &[String]) -> Result<Vec<GuiEvent>, String> {
    let mut args = argv.iter().map(String::as_str);
    if args.next() != Some("xdotool") {
        return Err(format!("not an xdotool command: {argv:?}"));
    }
    let cmd = args.next().ok_or("missing xdotool subcommand")?;
    let rest: Vec<&str> = args.collect();
    let parse_u32 = |s: &str| s.parse::<u32>().map_err(|_| format!("bad number {s:?}"));
    match (cmd, rest.as_slice()) {
        ("mousemove", [x, y]) => Ok(vec![GuiEvent::MouseMove {
            x: parse_u32(x)?,
            y: parse_u32(y)?,
        }]),
        ("click", [button]) => Ok(vec![GuiEvent::Click {
            button: parse_u32(button)? as u8,
            count: 1,
        }]),
        ("click", ["--repeat", n, button]) => Ok(vec![GuiEvent::Click {
            button: parse_u32(button)? as u8,
            count: parse_u32(n)? as u8,
        }]),
        ("mousedown", [button]) => Ok(vec![GuiEvent::ButtonPress {
            button: parse_u32(button)? as u8,
        }]),
        ("mouseup", [button]) => Ok(vec![GuiEvent::ButtonRelease {
            button: parse_u32(button)? as u8,
        }]),
        ("type", ["--delay", _, text]) => Ok(vec![GuiEvent::Type {
            text: (*text).to_string(),
        }]),
        ("key", [combo]) => Ok(vec![GuiEvent::Key {
            combo: combo.to_ascii_lowercase(),
        }]),
        ("sleep", [seconds]) => {
            let s: f64 = seconds
                .parse()
                .map_err(|_| format!("bad sleep duration {seconds:?}"))?;
            Ok(vec![GuiEvent::Sleep {
                ms: (s * 1000.0).round() as u64,
            }])
        }
        _ => Err(format!("unsupported xdotool invocation: {argv:?}")),
    }
}

#[derive(Debug, Clone, Default)]
struct ElementState {
    pressed: bool,
    held: bool,
    value: String,
    select_all: bool,
    selected_row: Option<usize>,
    scroll_offset: usize,
    slider_value: u32,
}

/// The running application: definition plus mutable widget state.
pub struct MockGuiApp {
    def: AppDefinition,
    state: Vec<ElementState>,
    focus: Option<usize>,
    pointer: (u32, u32),
    menu_at: Option<(u32, u32)>,
    drag_from: Option<(u32, u32)>,
    mouse_down: bool,
    slept_while_down: bool,
    moved_while_down: bool,
    event_log: String,
    profile_dir: PathBuf,
}

impl MockGuiApp {
    /// Starts the app with a private profile directory, writing the session
    /// marker file used by isolation checks.
    pub fn new(
        def: AppDefinition,
        profile_dir: PathBuf,
        session_id: &str,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(&profile_dir)?;
        std::fs::write(
            profile_dir.join("marker.txt"),
            format!("owner={session_id}\n"),
        )?;
        let state = def
            .elements
            .iter()
            .map(|el| {
                let mut s = ElementState::default();
                match el {
                    ElementDef::TextField { value, .. } => s.value = value.clone(),
                    ElementDef::Slider { value, .. } => s.slider_value = (*value).min(100),
                    _ => {}
                }
                s
            })
            .collect();
        Ok(Self {
            def,
            state,
            focus: None,
            pointer: (0, 0),
            menu_at: None,
            drag_from: None,
            mouse_down: false,
            slept_while_down: false,
            moved_while_down: false,
            event_log: String::from("started"),
            profile_dir,
        })
    }

    pub fn definition(&self) -> &AppDefinition {
        &self.def
    }

    pub fn profile_dir(&self) -> &Path {
        &self.profile_dir
    }

    fn hit(&self, x: u32, y: u32) -> Option<usize> {
        // Last drawn wins, so scan in reverse definition order.
        (0..self.def.elements.len()).rev().find(|&i| {
            let (x1, y1, x2, y2) = self.def.elements[i].bounds();
            x >= x1 && x < x2 && y >= y1 && y < y2
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.def.geometry
    }

    pub fn handle(&mut self, event: GuiEvent) {
        match event {
            GuiEvent::MouseMove { x, y } => self.on_move(x, y),
            GuiEvent::Click { button, count } => self.on_click(button, count, false),
            GuiEvent::ButtonPress { button: 1 } => {
                self.mouse_down = true;
                self.slept_while_down = false;
                self.moved_while_down = false;
                self.drag_from = Some(self.pointer);
            }
            GuiEvent::ButtonPress { .. } => {}
            GuiEvent::ButtonRelease { button: 1 } => self.on_release(),
            GuiEvent::ButtonRelease { .. } => {}
            GuiEvent::Type { text } => self.on_type(&text),
            GuiEvent::Key { combo } => self.on_key(&combo),
            GuiEvent::Sleep { .. } => {
                // The app is static absent input; a sleep only matters for
                // distinguishing a long click while a button is held.
                if self.mouse_down {
                    self.slept_while_down = true;
                }
            }
        }
    }

    fn on_move(&mut self, x: u32, y: u32) {
        self.pointer = (x, y);
        if self.mouse_down {
            self.moved_while_down = true;
            // Live slider dragging.
            if let Some((fx, fy)) = self.drag_from {
                if let Some(i) = self.hit(fx, fy) {
                    if let ElementDef::Slider { x: sx, width, .. } = self.def.elements[i] {
                        let rel = x.saturating_sub(sx).min(width.saturating_sub(1));
                        self.state[i].slider_value = rel * 100 / width.saturating_sub(1).max(1);
                    }
                }
            }
        }
        self.event_log = format!("move ({x},{y})");
    }

    fn on_click(&mut self, button: u8, count: u8, long: bool) {
        let (x, y) = self.pointer;
        match button {
            1 => self.left_click(x, y, count, long),
            3 => {
                self.menu_at = Some((x, y));
                self.event_log = format!("context menu at ({x},{y})");
            }
            4..=7 => self.on_scroll(button),
            _ => self.event_log = format!("button{button} ignored"),
        }
    }

    fn left_click(&mut self, x: u32, y: u32, count: u8, long: bool) {
        // An open context menu captures the click.
        if let Some((mx, my)) = self.menu_at {
            let mh = ROW_HEIGHT * MENU_ITEMS.len() as u32;
            if x >= mx && x < mx + MENU_WIDTH && y >= my && y < my + mh {
                let item = MENU_ITEMS[((y - my) / ROW_HEIGHT) as usize];
                self.menu_action(item);
                self.menu_at = None;
                return;
            }
            self.menu_at = None;
            self.event_log = "menu dismissed".into();
            return;
        }

        let Some(i) = self.hit(x, y) else {
            self.focus = None;
            self.event_log = format!("click ({x},{y}) no target");
            return;
        };
        let id = self.def.elements[i].id().to_string();
        match &self.def.elements[i] {
            ElementDef::Button { .. } => {
                self.focus = Some(i);
                self.state[i].pressed = true;
                self.state[i].held = long;
                self.event_log = if long {
                    format!("hold {id}")
                } else {
                    format!("click {id}")
                };
            }
            ElementDef::TextField { .. } => {
                self.focus = Some(i);
                if count >= 2 {
                    self.state[i].select_all = true;
                    self.event_log = format!("select-all {id}");
                } else {
                    self.event_log = format!("focus {id}");
                }
            }
            ElementDef::List { y: ly, .. } => {
                self.focus = Some(i);
                let row = self.state[i].scroll_offset + ((y - ly) / ROW_HEIGHT) as usize;
                let n_items = match &self.def.elements[i] {
                    ElementDef::List { items, .. } => items.len(),
                    _ => 0,
                };
                if row < n_items {
                    self.state[i].selected_row = Some(row);
                    self.event_log = format!("select {id}[{row}]");
                } else {
                    self.event_log = format!("click {id} empty");
                }
            }
            ElementDef::Slider { x: sx, width, .. } => {
                self.focus = Some(i);
                let rel = x.saturating_sub(*sx).min(width.saturating_sub(1));
                self.state[i].slider_value = rel * 100 / width.saturating_sub(1).max(1);
                self.event_log = format!("set {id}={}", self.state[i].slider_value);
            }
            ElementDef::Label { .. } => {
                self.event_log = format!("click {id}");
            }
        }
    }

    fn on_release(&mut self) {
        self.mouse_down = false;
        let from = self.drag_from.take();
        if self.moved_while_down {
            let (x, y) = self.pointer;
            let target = from
                .and_then(|(fx, fy)| self.hit(fx, fy))
                .map(|i| self.def.elements[i].id().to_string())
                .unwrap_or_else(|| "none".into());
            self.event_log = format!("drag {target} to ({x},{y})");
        } else {
            // Press and release in place: a click, long when a sleep
            // happened while held.
            self.on_click(1, 1, self.slept_while_down);
        }
    }

    fn menu_action(&mut self, item: &str) {
        if let Some(i) = self.focus {
            if matches!(self.def.elements[i], ElementDef::TextField { .. }) {
                match item {
                    "Cut" => {
                        self.state[i].value.clear();
                        self.state[i].select_all = false;
                    }
                    "Paste" => self.state[i].value.push_str("<paste>"),
                    _ => {}
                }
            }
        }
        self.event_log = format!("menu {item}");
    }

    fn on_scroll(&mut self, button: u8) {
        let direction = match button {
            4 => "up",
            5 => "down",
            6 => "left",
            _ => "right",
        };
        let (x, y) = self.pointer;
        let Some(i) = self.hit(x, y) else {
            self.event_log = format!("scroll {direction} no target");
            return;
        };
        let id = self.def.elements[i].id().to_string();
        match &self.def.elements[i] {
            ElementDef::List { items, height, .. } => {
                let visible = (*height / ROW_HEIGHT) as usize;
                let max_offset = items.len().saturating_sub(visible);
                let s = &mut self.state[i];
                s.scroll_offset = match button {
                    4 => s.scroll_offset.saturating_sub(1),
                    5 => (s.scroll_offset + 1).min(max_offset),
                    _ => s.scroll_offset,
                };
                self.event_log = format!("scroll {direction} {id}@{}", s.scroll_offset);
            }
            ElementDef::Slider { .. } => {
                let s = &mut self.state[i];
                s.slider_value = match button {
                    4 | 7 => (s.slider_value + 5).min(100),
                    _ => s.slider_value.saturating_sub(5),
                };
                self.event_log = format!("scroll {id}={}", s.slider_value);
            }
            _ => self.event_log = format!("scroll {direction} {id}"),
        }
    }

    fn on_type(&mut self, text: &str) {
        if let Some(i) = self.focus {
            if matches!(self.def.elements[i], ElementDef::TextField { .. }) {
                let s = &mut self.state[i];
                if s.select_all {
                    s.value.clear();
                    s.select_all = false;
                }
                s.value.push_str(text);
                let id = self.def.elements[i].id();
                self.event_log = format!("type into {id}: {text}");
                return;
            }
        }
        self.event_log = format!("type ignored: {text}");
    }

    fn on_key(&mut self, combo: &str) {
        match combo {
            "ctrl+a" => {
                if let Some(i) = self.focus {
                    if matches!(self.def.elements[i], ElementDef::TextField { .. }) {
                        self.state[i].select_all = true;
                        self.event_log = format!("select-all {}", self.def.elements[i].id());
                        return;
                    }
                }
                self.event_log = "ctrl+a ignored".into();
            }
            "return" | "enter" => {
                if let Some(i) = self.focus {
                    if matches!(self.def.elements[i], ElementDef::Button { .. }) {
                        self.state[i].pressed = true;
                        self.event_log = format!("activate {}", self.def.elements[i].id());
                        return;
                    }
                }
                self.event_log = "return ignored".into();
            }
            "escape" => {
                self.menu_at = None;
                self.event_log = "escape".into();
            }
            "tab" => {
                let n = self.def.elements.len();
                if n > 0 {
                    self.focus = Some(self.focus.map_or(0, |i| (i + 1) % n));
                    self.event_log =
                        format!("focus {}", self.def.elements[self.focus.unwrap()].id());
                }
            }
            other => self.event_log = format!("key {other}"),
        }
    }

    /// Renders the full window.
    pub fn render(&self) -> RgbImage {
        let Geometry { width, height } = self.def.geometry;
        let mut img = RgbImage::from_pixel(width, height, BACKGROUND);

        fill_rect(&mut img, 0, 0, width, TITLE_BAR_HEIGHT, TITLE_BAR);
        font::draw_text(&mut img, 4, 3, &self.def.title, Rgb([255, 255, 255]));

        for (i, el) in self.def.elements.iter().enumerate() {
            self.render_element(&mut img, i, el);
        }

        if let Some((mx, my)) = self.menu_at {
            let mh = ROW_HEIGHT * MENU_ITEMS.len() as u32;
            fill_rect(&mut img, mx, my, MENU_WIDTH, mh, FIELD_FILL);
            stroke_rect(&mut img, mx, my, MENU_WIDTH, mh, BORDER);
            for (row, item) in MENU_ITEMS.iter().enumerate() {
                font::draw_text(
                    &mut img,
                    mx as i64 + 4,
                    my as i64 + row as i64 * ROW_HEIGHT as i64 + 2,
                    item,
                    TEXT,
                );
            }
        }

        // Event log strip along the bottom edge.
        let log_y = height - LOG_BAR_HEIGHT;
        fill_rect(&mut img, 0, log_y, width, LOG_BAR_HEIGHT, LOG_BAR);
        font::draw_text(
            &mut img,
            4,
            log_y as i64 + 2,
            &format!("last: {}", self.event_log),
            LOG_TEXT,
        );

        // Pointer crosshair, drawn last.
        let (px, py) = self.pointer;
        for d in -3i64..=3 {
            let (hx, vy) = (px as i64 + d, py as i64 + d);
            if hx >= 0 && (hx as u32) < width && py < height {
                img.put_pixel(hx as u32, py, POINTER);
            }
            if vy >= 0 && (vy as u32) < height && px < width {
                img.put_pixel(px, vy as u32, POINTER);
            }
        }
        img
    }

    fn render_element(&self, img: &mut RgbImage, i: usize, el: &ElementDef) {
        let s = &self.state[i];
        let focused = self.focus == Some(i);
        match el {
            ElementDef::Label { text, x, y, .. } => {
                font::draw_text(img, *x as i64, *y as i64, text, TEXT);
            }
            ElementDef::Button {
                label,
                pressed_label,
                x,
                y,
                width,
                height,
                ..
            } => {
                let fill = if s.pressed { WIDGET_PRESSED } else { WIDGET_FILL };
                fill_rect(img, *x, *y, *width, *height, fill);
                stroke_rect(img, *x, *y, *width, *height, BORDER);
                if focused {
                    stroke_rect(img, x + 1, y + 1, width - 2, height - 2, SELECTION_FILL);
                }
                let shown = if s.pressed {
                    pressed_label.as_deref().unwrap_or(label)
                } else {
                    label
                };
                let shown = if s.held {
                    format!("{shown} [held]")
                } else {
                    shown.to_string()
                };
                let ty = y + (height.saturating_sub(font::GLYPH_HEIGHT)) / 2;
                font::draw_text(img, *x as i64 + 5, ty as i64, &shown, TEXT);
            }
            ElementDef::TextField {
                x, y, width, height, ..
            } => {
                let fill = if s.select_all { SELECTION_FILL } else { FIELD_FILL };
                fill_rect(img, *x, *y, *width, *height, fill);
                stroke_rect(img, *x, *y, *width, *height, BORDER);
                if focused {
                    stroke_rect(img, x + 1, y + 1, width - 2, height - 2, SELECTION_FILL);
                }
                let color = if s.select_all { FIELD_FILL } else { TEXT };
                let ty = y + (height.saturating_sub(font::GLYPH_HEIGHT)) / 2;
                font::draw_text(img, *x as i64 + 4, ty as i64, &s.value, color);
            }
            ElementDef::List {
                x,
                y,
                width,
                height,
                items,
                ..
            } => {
                fill_rect(img, *x, *y, *width, *height, FIELD_FILL);
                stroke_rect(img, *x, *y, *width, *height, BORDER);
                let visible = (*height / ROW_HEIGHT) as usize;
                for (row, item) in items
                    .iter()
                    .enumerate()
                    .skip(s.scroll_offset)
                    .take(visible)
                {
                    let ry = y + ((row - s.scroll_offset) as u32) * ROW_HEIGHT;
                    let selected = s.selected_row == Some(row);
                    if selected {
                        fill_rect(img, x + 1, ry + 1, width - 2, ROW_HEIGHT - 1, SELECTION_FILL);
                    }
                    font::draw_text(
                        img,
                        *x as i64 + 4,
                        ry as i64 + 2,
                        item,
                        if selected { FIELD_FILL } else { TEXT },
                    );
                }
            }
            ElementDef::Slider { x, y, width, .. } => {
                // Track line plus a square knob at the current value.
                fill_rect(img, *x, y + 7, *width, 2, BORDER);
                let knob_x = x + s.slider_value * width.saturating_sub(8) / 100;
                fill_rect(img, knob_x, *y, 8, 16, WIDGET_FILL);
                stroke_rect(img, knob_x, *y, 8, 16, BORDER);
                font::draw_text(
                    img,
                    (x + width) as i64 + 6,
                    *y as i64 + 4,
                    &s.slider_value.to_string(),
                    TEXT,
                );
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    for yy in y..(y + h).min(img.height()) {
        for xx in x..(x + w).min(img.width()) {
            img.put_pixel(xx, yy, color);
        }
    }
}

fn stroke_rect(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    if w == 0 || h == 0 {
        return;
    }
    let (x2, y2) = ((x + w).min(img.width()), (y + h).min(img.height()));
    for xx in x..x2 {
        img.put_pixel(xx, y, color);
        img.put_pixel(xx, y2 - 1, color);
    }
    for yy in y..y2 {
        img.put_pixel(x, yy, color);
        img.put_pixel(x2 - 1, yy, color);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEF: &str = r#"
title = "Demo"

[geometry]
width = 320
height = 240

[[element]]
kind = "label"
id = "status"
text = "status: ready"
x = 8
y = 200

[[element]]
kind = "text_field"
id = "name"
x = 8
y = 24
width = 120
height = 20

[[element]]
kind = "button"
id = "save"
label = "Save"
pressed_label = "Saved!"
x = 8
y = 52
width = 70
height = 22

[[element]]
kind = "list"
id = "notes"
x = 150
y = 24
width = 120
height = 48
items = ["alpha", "beta", "gamma", "delta", "epsilon"]

[[element]]
kind = "slider"
id = "zoom"
x = 8
y = 90
width = 100
value = 50
"#;

    fn app(dir: &Path) -> MockGuiApp {
        let def = parse_definition(DEF).unwrap();
        MockGuiApp::new(def, dir.join("profile"), "s1").unwrap()
    }

    fn run(app: &mut MockGuiApp, lines: &[&str]) {
        for line in lines {
            let argv: Vec<String> = line.split_whitespace().map(String::from).collect();
            for ev in parse_xdotool(&argv).unwrap() {
                app.handle(ev);
            }
        }
    }

    #[test]
    fn clicking_the_button_shows_pressed_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        let before = a.render();
        run(&mut a, &["xdotool mousemove 40 60", "xdotool click 1"]);
        let after = a.render();
        assert_ne!(before, after);
        // The pressed label must appear: compare against a fresh app
        // rendered with pressed state via the same path.
        assert_eq!(a.event_log, "click save");
    }

    #[test]
    fn sleep_changes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(&mut a, &["xdotool mousemove 40 60", "xdotool click 1"]);
        let before = a.render();
        run(&mut a, &["xdotool sleep 0.5"]);
        assert_eq!(before, a.render());
    }

    #[test]
    fn select_all_then_type_replaces_field_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(&mut a, &["xdotool mousemove 20 30", "xdotool click 1"]);
        a.handle(GuiEvent::Type { text: "first".into() });
        a.handle(GuiEvent::Key { combo: "ctrl+a".into() });
        a.handle(GuiEvent::Type { text: "second".into() });
        let i = a.def.elements.iter().position(|e| e.id() == "name").unwrap();
        assert_eq!(a.state[i].value, "second");
    }

    #[test]
    fn typing_without_selection_appends() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(&mut a, &["xdotool mousemove 20 30", "xdotool click 1"]);
        a.handle(GuiEvent::Type { text: "ab".into() });
        a.handle(GuiEvent::Type { text: "cd".into() });
        let i = a.def.elements.iter().position(|e| e.id() == "name").unwrap();
        assert_eq!(a.state[i].value, "abcd");
    }

    #[test]
    fn scroll_moves_list_window() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(&mut a, &["xdotool mousemove 200 40", "xdotool click 5"]);
        let i = a.def.elements.iter().position(|e| e.id() == "notes").unwrap();
        assert_eq!(a.state[i].scroll_offset, 1);
        run(&mut a, &["xdotool click 4", "xdotool click 4"]);
        assert_eq!(a.state[i].scroll_offset, 0, "clamped at top");
    }

    #[test]
    fn drag_sets_slider_from_positions() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(
            &mut a,
            &[
                "xdotool mousemove 58 98",
                "xdotool mousedown 1",
                "xdotool mousemove 107 98",
                "xdotool mouseup 1",
            ],
        );
        let i = a.def.elements.iter().position(|e| e.id() == "zoom").unwrap();
        assert_eq!(a.state[i].slider_value, 100);
        assert!(a.event_log.starts_with("drag zoom"));
    }

    #[test]
    fn long_click_is_press_sleep_release() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(
            &mut a,
            &[
                "xdotool mousemove 40 60",
                "xdotool mousedown 1",
                "xdotool sleep 0.8",
                "xdotool mouseup 1",
            ],
        );
        assert_eq!(a.event_log, "hold save");
    }

    #[test]
    fn right_click_opens_menu_and_escape_closes_it() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = app(dir.path());
        run(&mut a, &["xdotool mousemove 100 100", "xdotool click 3"]);
        assert!(a.menu_at.is_some());
        let with_menu = a.render();
        a.handle(GuiEvent::Key { combo: "escape".into() });
        assert!(a.menu_at.is_none());
        assert_ne!(with_menu, a.render());
    }

    #[test]
    fn rendering_is_deterministic() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut a = app(dir1.path());
        let mut b = app(dir2.path());
        let script = [
            "xdotool mousemove 20 30",
            "xdotool click 1",
            "xdotool mousemove 40 60",
            "xdotool click 1",
        ];
        run(&mut a, &script);
        run(&mut b, &script);
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn marker_file_identifies_the_session() {
        let dir = tempfile::tempdir().unwrap();
        let def = parse_definition(DEF).unwrap();
        let a = MockGuiApp::new(def, dir.path().join("p"), "session-42").unwrap();
        let marker = std::fs::read_to_string(a.profile_dir().join("marker.txt")).unwrap();
        assert_eq!(marker, "owner=session-42\n");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let bad = DEF.replace("id = \"zoom\"", "id = \"save\"");
        assert!(parse_definition(&bad).is_err());
    }
}
