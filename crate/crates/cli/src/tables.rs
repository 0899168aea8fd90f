//! Published shape and size tables for the fast and accurate models, and the
//! comparison `inspect` runs against them.

use slidenet::dense::{make_scale_plan, ScaleRow};
use slidenet::{ArchKind, ArchSpec};

pub struct ExpectedArch {
    /// Spatial input of every layer at the training size.
    pub layer_inputs: &'static [(usize, usize)],
    pub params_millions: f64,
    pub connections_millions: f64,
}

pub const FAST: ExpectedArch = ExpectedArch {
    layer_inputs: &[(231, 231), (24, 24), (12, 12), (12, 12), (12, 12), (6, 6), (1, 1), (1, 1)],
    params_millions: 145.0,
    connections_millions: 2810.0,
};

pub const ACCURATE: ExpectedArch = ExpectedArch {
    layer_inputs: &[(221, 221), (36, 36), (15, 15), (15, 15), (15, 15), (15, 15), (5, 5), (1, 1), (1, 1)],
    params_millions: 144.0,
    connections_millions: 5369.0,
};

/// Accurate model, per scale: input, unpooled top maps, pooled maps per
/// offset, classifier map per offset, interleaved output map.
pub const ACCURATE_SCALE_TABLE: [[(usize, usize); 5]; 6] = [
    [(245, 245), (17, 17), (5, 5), (1, 1), (3, 3)],
    [(281, 317), (20, 23), (6, 7), (2, 3), (6, 9)],
    [(317, 389), (23, 29), (7, 9), (3, 5), (9, 15)],
    [(389, 461), (29, 35), (9, 11), (5, 7), (15, 21)],
    [(425, 497), (32, 35), (10, 11), (6, 7), (18, 24)],
    [(461, 569), (35, 44), (11, 14), (7, 10), (21, 30)],
];

pub const COUNT_TOLERANCE: f64 = 0.03;

pub const SCALE_COLUMNS: [&str; 5] = ["input", "unpooled", "pooled", "classifier", "output"];

pub fn expected_for(kind: ArchKind) -> Option<&'static ExpectedArch> {
    match kind {
        ArchKind::Fast => Some(&FAST),
        ArchKind::Accurate => Some(&ACCURATE),
        ArchKind::Toy => None,
    }
}

fn row_cells(r: &ScaleRow) -> [(usize, usize); 5] {
    [r.input, r.unpooled, r.pooled, r.classifier, r.output]
}

/// Every computed cell that differs from the published tables, one line each.
pub fn mismatches(spec: &ArchSpec) -> slidenet::Result<Vec<String>> {
    let Some(expected) = expected_for(spec.kind) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let trace = spec.trace(spec.train_input)?;
    if trace.len() != expected.layer_inputs.len() {
        out.push(format!("layer count: computed {}, expected {}", trace.len(), expected.layer_inputs.len()));
    }
    for (t, want) in trace.iter().zip(expected.layer_inputs) {
        if t.input != *want {
            out.push(format!(
                "layer {} spatial input: computed {}x{}, expected {}x{}",
                t.index, t.input.0, t.input.1, want.0, want.1
            ));
        }
    }
    let params = spec.count_parameters() as f64 / 1e6;
    if (params / expected.params_millions - 1.0).abs() > COUNT_TOLERANCE {
        out.push(format!("parameters: computed {params:.1}M, expected {}M ±3%", expected.params_millions));
    }
    let connections = spec.count_connections() as f64 / 1e6;
    if (connections / expected.connections_millions - 1.0).abs() > COUNT_TOLERANCE {
        out.push(format!("connections: computed {connections:.1}M, expected {}M ±3%", expected.connections_millions));
    }
    if spec.kind == ArchKind::Accurate {
        let plan = make_scale_plan(spec, 6)?;
        for (i, (row, want)) in plan.rows.iter().zip(&ACCURATE_SCALE_TABLE).enumerate() {
            for ((name, got), want) in SCALE_COLUMNS.iter().zip(row_cells(row)).zip(want) {
                if got != *want {
                    out.push(format!(
                        "scale {} {name}: computed {}x{}, expected {}x{}",
                        i + 1,
                        got.0,
                        got.1,
                        want.0,
                        want.1
                    ));
                }
            }
        }
    }
    Ok(out)
}
