//! Published comparison values printed next to locally computed results in
//! reports. None of these are reproduced here; they need the real echo
//! dataset, the released teacher and a real vision-language scorer.

/// Columns of the block/layer grid.
pub const GRID_BLOCKS: [usize; 4] = [1, 2, 3, 4];
/// Rows of the block/layer grid.
pub const GRID_LAYERS: [usize; 4] = [1, 2, 3, 4];

/// Mean IoU in percent, indexed `[layers - 1][blocks - 1]`.
pub const GRID_MEAN_IOU: [[f64; 4]; 4] = [
    [66.92, 77.31, 82.47, 83.70],
    [66.23, 81.08, 83.30, 83.96],
    [73.38, 81.19, 83.53, 83.89],
    [74.47, 81.59, 83.62, 83.72],
];

/// Dice in percent, indexed `[layers - 1][blocks - 1]`.
pub const GRID_DICE: [[f64; 4]; 4] = [
    [78.92, 86.50, 90.13, 90.93],
    [78.21, 89.17, 90.68, 91.11],
    [83.68, 89.23, 90.83, 91.07],
    [84.48, 89.58, 90.89, 90.96],
];

/// Dice in percent of segmenters trained on real data.
pub const LITERATURE_DICE: [(&str, f64); 4] = [
    ("DeepLabv3", 92.26),
    ("simLVSeg", 93.32),
    ("MU-UNET", 90.50),
    ("nnU-net", 92.86),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMethodRow {
    pub method: &'static str,
    /// Parameter count as printed, e.g. `"40M"`.
    pub params: &'static str,
    pub afd_ed: f64,
    pub afd_es: f64,
}

/// Frame-distance comparison rows.
pub const PHASE_METHODS: [PhaseMethodRow; 7] = [
    PhaseMethodRow {
        method: "DeepLabv3 (full test set)",
        params: "40M",
        afd_ed: 8.63,
        afd_es: 3.66,
    },
    PhaseMethodRow {
        method: "UVT_R",
        params: "347M",
        afd_ed: 7.88,
        afd_es: 2.86,
    },
    PhaseMethodRow {
        method: "UVT_M",
        params: "347M",
        afd_ed: 7.17,
        afd_es: 3.35,
    },
    PhaseMethodRow {
        method: "EchoGNN",
        params: "1.7M",
        afd_ed: 3.68,
        afd_es: 4.15,
    },
    PhaseMethodRow {
        method: "DRNNEcho",
        params: ">10M",
        afd_ed: 3.7,
        afd_es: 4.1,
    },
    PhaseMethodRow {
        method: "distilled student (subset)",
        params: "0.72M",
        afd_ed: 2.72,
        afd_es: 2.83,
    },
    PhaseMethodRow {
        method: "distilled student (full test set)",
        params: "0.72M",
        afd_ed: 2.77,
        afd_es: 2.83,
    },
];

/// Inference cost of the DeepLabv3 teacher.
pub const TEACHER_GFLOPS: f64 = 7.84;
/// Inference cost quoted for the two distilled students.
pub const STUDENT_GFLOPS: [f64; 2] = [0.25, 1.56];

/// Frames by which human ES labels precede the teacher's.
pub const HUMAN_TEACHER_ES_OFFSET: f64 = 2.3;

/// Intra-annotator RMSE between two labeling rounds, in frames.
pub const INTRA_ANNOTATOR_RMSE: f64 = 5.7;
/// Intra-annotator correlation between two labeling rounds.
pub const INTRA_ANNOTATOR_CORR: f64 = 0.801;
/// Fitted expected absolute annotator error, in frames.
pub const ANNOTATOR_EXPECTED_ABS_ES: f64 = 2.0;
pub const ANNOTATOR_EXPECTED_ABS_ED: f64 = 2.4;

/// Log-log slopes on synthetic training data: (metric, slope).
pub const SLOPES_SYNTHETIC: [(&str, f64); 4] = [
    ("aFD vs human", 0.15),
    ("aFD vs vision-language scorer", 0.086),
    ("Dice", 0.16),
    ("meanIoU", 0.11),
];

/// Log-log slopes when training on real data.
pub const SLOPES_REAL: [(&str, f64); 4] = [
    ("aFD vs human", 0.124),
    ("aFD vs vision-language scorer", 0.07),
    ("meanIoU", 0.067),
    ("Dice", 0.088),
];

/// Clips whose labels or videos are known to be unusable.
pub const KNOWN_CORRUPTED: [&str; 3] = [
    "0X39348579B2E55470",
    "0X3693781992586497",
    "0X790C871B162806D2",
];

/// Parameter ceiling for every grid configuration.
pub const PARAM_BUDGET: usize = 4_000_000;
