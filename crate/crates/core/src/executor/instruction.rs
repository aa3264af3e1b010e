//! The UI instruction vocabulary: eleven action kinds with a strict
//! kind-argument matrix, plus the canonical serialization used to prove
//! that replay executes a byte-identical instruction stream.

use serde::{Deserialize, Serialize};

use crate::config::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Click,
    RightClick,
    LongClick,
    DoubleClick,
    TripleClick,
    Input,
    Scroll,
    Drag,
    Move,
    Keypress,
    Wait,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 11] = [
        InstructionKind::Click,
        InstructionKind::RightClick,
        InstructionKind::LongClick,
        InstructionKind::DoubleClick,
        InstructionKind::TripleClick,
        InstructionKind::Input,
        InstructionKind::Scroll,
        InstructionKind::Drag,
        InstructionKind::Move,
        InstructionKind::Keypress,
        InstructionKind::Wait,
    ];

    fn needs_position(self) -> bool {
        matches!(
            self,
            InstructionKind::Click
                | InstructionKind::RightClick
                | InstructionKind::LongClick
                | InstructionKind::DoubleClick
                | InstructionKind::TripleClick
                | InstructionKind::Input
                | InstructionKind::Drag
                | InstructionKind::Move
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub x: u32,
    pub y: u32,
}

/// One structured UI action. Field order here is the canonical
/// serialization order; absent options are omitted entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiInstruction {
    pub kind: InstructionKind,
    pub target_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<ScrollDirection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_ms: Option<u64>,
}

impl UiInstruction {
    /// Checks the kind-argument matrix and that every coordinate lies
    /// inside the display. Options not required by the kind must be absent.
    pub fn validate(&self, geometry: &Geometry) -> Result<(), String> {
        let k = self.kind;
        let expect = |name: &str, required: bool, present: bool| -> Result<(), String> {
            match (required, present) {
                (true, false) => Err(format!("{k:?} requires {name}")),
                (false, true) => Err(format!("{k:?} must not carry {name}")),
                _ => Ok(()),
            }
        };
        expect("position", k.needs_position(), self.position.is_some())?;
        expect(
            "text",
            k == InstructionKind::Input,
            self.text.is_some(),
        )?;
        expect(
            "keys",
            k == InstructionKind::Keypress,
            self.keys.is_some(),
        )?;
        expect(
            "direction",
            k == InstructionKind::Scroll,
            self.direction.is_some(),
        )?;
        expect(
            "end_position",
            k == InstructionKind::Drag,
            self.end_position.is_some(),
        )?;
        expect("wait_ms", k == InstructionKind::Wait, self.wait_ms.is_some())?;

        if let Some(keys) = &self.keys {
            if keys.is_empty() {
                return Err("keypress requires at least one key symbol".into());
            }
        }
        if let Some(ms) = self.wait_ms {
            if ms == 0 {
                return Err("wait_ms must be positive".into());
            }
        }
        for (label, pos) in [("position", self.position), ("end_position", self.end_position)] {
            if let Some(p) = pos {
                if !geometry.contains(p.x as i64, p.y as i64) {
                    return Err(format!(
                        "{label} ({}, {}) is outside the {}x{} display",
                        p.x, p.y, geometry.width, geometry.height
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical single-line JSON: struct field order, absent options
    /// omitted. Byte equality of these strings defines verbatim replay.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("instruction serializes")
    }
}

/// Canonical serialization of a whole instruction stream, one instruction
/// per line.
pub fn canonical_stream(instructions: &[UiInstruction]) -> String {
    instructions
        .iter()
        .map(UiInstruction::canonical_json)
        .collect::<Vec<_>>()
        .join("\n")
}
