//! Lowers structured UI instructions to the command sequences injected
//! into a session. The only implementation speaks xdotool.

use crate::executor::instruction::{InstructionKind, ScrollDirection, UiInstruction};

/// Translates one instruction into an ordered list of argv vectors. Each
/// argv is executed in the session; the instruction succeeds only if all
/// of them do.
pub trait InputDriver: Send + Sync {
    fn commands(&self, instruction: &UiInstruction, wait_scale: f64) -> Vec<Vec<String>>;
}

pub struct XdoDriver;

const LONG_CLICK_HOLD_MS: u64 = 800;

/// Renders a millisecond count as the fractional-seconds argument xdotool
/// expects. Fixed three-digit formatting keeps command streams identical
/// across runs.
pub fn sleep_seconds(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

fn scaled(ms: u64, wait_scale: f64) -> u64 {
    (ms as f64 * wait_scale).round() as u64
}

fn argv(parts: &[&str]) -> Vec<String> {
    let mut v = Vec::with_capacity(parts.len() + 1);
    v.push("xdotool".to_string());
    v.extend(parts.iter().map(|p| p.to_string()));
    v
}

impl InputDriver for XdoDriver {
    fn commands(&self, instruction: &UiInstruction, wait_scale: f64) -> Vec<Vec<String>> {
        let pos = instruction.position;
        let mousemove = || {
            let p = pos.expect("validated instruction carries a position");
            argv(&["mousemove", &p.x.to_string(), &p.y.to_string()])
        };
        match instruction.kind {
            InstructionKind::Click => vec![mousemove(), argv(&["click", "1"])],
            InstructionKind::RightClick => vec![mousemove(), argv(&["click", "3"])],
            InstructionKind::DoubleClick => {
                vec![mousemove(), argv(&["click", "--repeat", "2", "1"])]
            }
            InstructionKind::TripleClick => {
                vec![mousemove(), argv(&["click", "--repeat", "3", "1"])]
            }
            InstructionKind::LongClick => vec![
                mousemove(),
                argv(&["mousedown", "1"]),
                argv(&["sleep", &sleep_seconds(scaled(LONG_CLICK_HOLD_MS, wait_scale))]),
                argv(&["mouseup", "1"]),
            ],
            InstructionKind::Input => {
                let text = instruction.text.as_deref().unwrap_or_default();
                vec![
                    mousemove(),
                    argv(&["click", "1"]),
                    argv(&["type", "--delay", "0", text]),
                ]
            }
            InstructionKind::Scroll => {
                let button = match instruction.direction.expect("validated scroll has direction") {
                    ScrollDirection::Up => "4",
                    ScrollDirection::Down => "5",
                    ScrollDirection::Left => "6",
                    ScrollDirection::Right => "7",
                };
                vec![argv(&["click", button])]
            }
            InstructionKind::Drag => {
                let end = instruction
                    .end_position
                    .expect("validated drag has end_position");
                vec![
                    mousemove(),
                    argv(&["mousedown", "1"]),
                    argv(&["mousemove", &end.x.to_string(), &end.y.to_string()]),
                    argv(&["mouseup", "1"]),
                ]
            }
            InstructionKind::Move => vec![mousemove()],
            InstructionKind::Keypress => {
                let combo = instruction
                    .keys
                    .as_deref()
                    .expect("validated keypress has keys")
                    .join("+");
                vec![argv(&["key", &combo])]
            }
            InstructionKind::Wait => {
                let ms = scaled(
                    instruction.wait_ms.expect("validated wait has wait_ms"),
                    wait_scale,
                );
                vec![argv(&["sleep", &sleep_seconds(ms)])]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::instruction::Position;

    fn instr(kind: InstructionKind) -> UiInstruction {
        UiInstruction {
            kind,
            target_name: "t".into(),
            position: None,
            text: None,
            keys: None,
            direction: None,
            end_position: None,
            wait_ms: None,
        }
    }

    fn flat(cmds: &[Vec<String>]) -> Vec<String> {
        cmds.iter().map(|c| c.join(" ")).collect()
    }

    #[test]
    fn click_family_moves_then_clicks() {
        let mut i = instr(InstructionKind::Click);
        i.position = Some(Position { x: 12, y: 34 });
        assert_eq!(
            flat(&XdoDriver.commands(&i, 1.0)),
            ["xdotool mousemove 12 34", "xdotool click 1"]
        );
        i.kind = InstructionKind::RightClick;
        assert_eq!(flat(&XdoDriver.commands(&i, 1.0))[1], "xdotool click 3");
        i.kind = InstructionKind::DoubleClick;
        assert_eq!(
            flat(&XdoDriver.commands(&i, 1.0))[1],
            "xdotool click --repeat 2 1"
        );
        i.kind = InstructionKind::TripleClick;
        assert_eq!(
            flat(&XdoDriver.commands(&i, 1.0))[1],
            "xdotool click --repeat 3 1"
        );
    }

    #[test]
    fn long_click_holds_scaled_by_wait_scale() {
        let mut i = instr(InstructionKind::LongClick);
        i.position = Some(Position { x: 5, y: 6 });
        assert_eq!(
            flat(&XdoDriver.commands(&i, 1.0)),
            [
                "xdotool mousemove 5 6",
                "xdotool mousedown 1",
                "xdotool sleep 0.800",
                "xdotool mouseup 1"
            ]
        );
        assert_eq!(flat(&XdoDriver.commands(&i, 0.0))[2], "xdotool sleep 0.000");
        assert_eq!(flat(&XdoDriver.commands(&i, 2.5))[2], "xdotool sleep 2.000");
    }

    #[test]
    fn input_focuses_then_types() {
        let mut i = instr(InstructionKind::Input);
        i.position = Some(Position { x: 1, y: 2 });
        i.text = Some("hello world".into());
        assert_eq!(
            flat(&XdoDriver.commands(&i, 1.0)),
            [
                "xdotool mousemove 1 2",
                "xdotool click 1",
                "xdotool type --delay 0 hello world"
            ]
        );
    }

    #[test]
    fn scroll_maps_direction_to_wheel_button() {
        let mut i = instr(InstructionKind::Scroll);
        for (dir, button) in [
            (ScrollDirection::Up, "4"),
            (ScrollDirection::Down, "5"),
            (ScrollDirection::Left, "6"),
            (ScrollDirection::Right, "7"),
        ] {
            i.direction = Some(dir);
            assert_eq!(
                flat(&XdoDriver.commands(&i, 1.0)),
                [format!("xdotool click {button}")]
            );
        }
    }

    #[test]
    fn drag_presses_moves_releases() {
        let mut i = instr(InstructionKind::Drag);
        i.position = Some(Position { x: 10, y: 10 });
        i.end_position = Some(Position { x: 90, y: 10 });
        assert_eq!(
            flat(&XdoDriver.commands(&i, 1.0)),
            [
                "xdotool mousemove 10 10",
                "xdotool mousedown 1",
                "xdotool mousemove 90 10",
                "xdotool mouseup 1"
            ]
        );
    }

    #[test]
    fn keypress_joins_combo_and_wait_sleeps() {
        let mut kp = instr(InstructionKind::Keypress);
        kp.keys = Some(vec!["ctrl".into(), "shift".into(), "s".into()]);
        assert_eq!(
            flat(&XdoDriver.commands(&kp, 1.0)),
            ["xdotool key ctrl+shift+s"]
        );
        let mut w = instr(InstructionKind::Wait);
        w.wait_ms = Some(1234);
        assert_eq!(flat(&XdoDriver.commands(&w, 1.0)), ["xdotool sleep 1.234"]);
        assert_eq!(flat(&XdoDriver.commands(&w, 0.5))[0], "xdotool sleep 0.617");
    }

    #[test]
    fn sleep_seconds_pads_milliseconds() {
        assert_eq!(sleep_seconds(0), "0.000");
        assert_eq!(sleep_seconds(7), "0.007");
        assert_eq!(sleep_seconds(2500), "2.500");
        assert_eq!(sleep_seconds(61001), "61.001");
    }
}
