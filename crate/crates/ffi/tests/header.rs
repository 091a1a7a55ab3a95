//! The generated header must compile as C and declare the exported API.

use std::path::Path;
use std::process::Command;

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/crc_sense.h");
    let text = std::fs::read_to_string(&header).expect("header generated by the build script");
    for name in ["crc_sense_crc_threshold", "crc_sense_run_trial", "crc_sense_last_error", "CRC_SENSE_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }

    let out = tempfile::tempdir().unwrap();
    let src = out.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"crc_sense.h\"\n\
         int probe(void) {\n\
           CrcSenseConfig *cfg = 0;\n\
           double gamma;\n\
           CrcSenseStatus s = crc_sense_config_paper(&cfg);\n\
           s = crc_sense_crc_threshold(0, 0, 0, 0, 0.1, &gamma);\n\
           crc_sense_config_free(cfg);\n\
           return s == CRC_SENSE_STATUS_OK;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}
