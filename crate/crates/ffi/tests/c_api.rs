use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use protcomp_ffi::*;

fn mileage_path() -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mileage.json");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = pc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    pc_string_free(s);
    out
}

#[test]
fn compose_mileage_through_handles() {
    unsafe {
        let mut prog = ptr::null_mut();
        assert_eq!(
            pc_program_load(mileage_path().as_ptr(), &mut prog),
            PcStatus::Ok
        );
        assert!(pc_last_error_message().is_null());
        let mut res = ptr::null_mut();
        assert_eq!(pc_compose(prog, ptr::null(), &mut res), PcStatus::Ok);
        assert_eq!(pc_result_selected_count(res), 7);

        let mut s = ptr::null_mut();
        assert_eq!(pc_result_report_json(res, &mut s), PcStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take_string(s)).unwrap();
        assert_eq!(report["proposed"], 12);
        assert_eq!(report["selected"].as_array().unwrap().len(), 7);

        assert_eq!(pc_result_protected_json(res, &mut s), PcStatus::Ok);
        let text = take_string(s);
        assert!(protcomp::composer::ProtectedFile::from_json(&text).is_ok());

        // count first, then fill
        let mut count = 0usize;
        assert_eq!(
            pc_tamper(res, 9, ptr::null_mut(), 0, &mut count),
            PcStatus::Ok
        );
        assert!(count > 0);
        let mut ids = vec![0u32; count];
        let mut again = 0usize;
        assert_eq!(
            pc_tamper(res, 9, ids.as_mut_ptr(), ids.len(), &mut again),
            PcStatus::Ok
        );
        assert_eq!(again, count);
        assert!(ids.iter().all(|id| *id > 0));

        assert_eq!(
            pc_tamper(res, 0, ptr::null_mut(), 0, &mut count),
            PcStatus::Ok
        );
        assert_eq!(count, 0);

        pc_result_free(res);
        pc_program_free(prog);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut prog = ptr::null_mut();
        let missing = CString::new("/no/such/program.json").unwrap();
        assert_eq!(pc_program_load(missing.as_ptr(), &mut prog), PcStatus::Io);
        assert!(prog.is_null());
        assert!(last_error().starts_with("io:"));

        assert_eq!(
            pc_program_load(ptr::null(), &mut prog),
            PcStatus::NullArgument
        );
        assert_eq!(
            pc_program_load(mileage_path().as_ptr(), ptr::null_mut()),
            PcStatus::NullArgument
        );

        let junk = CString::new("{not json").unwrap();
        assert_eq!(
            pc_program_from_json(junk.as_ptr(), &mut prog),
            PcStatus::Parse
        );

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(
            pc_program_from_json(bad.as_ptr().cast(), &mut prog),
            PcStatus::InvalidUtf8
        );

        assert_eq!(
            pc_program_generate(1, 0, 1, 0.5, &mut prog),
            PcStatus::Validation
        );

        assert_eq!(
            pc_program_load(mileage_path().as_ptr(), &mut prog),
            PcStatus::Ok
        );
        let mut res = ptr::null_mut();
        let floor = CString::new(
            r#"{"two_phase": false, "requirements": [{"metric": "explicit_instructions", "sense": ">=", "value": 100000}]}"#,
        )
        .unwrap();
        assert_eq!(
            pc_compose(prog, floor.as_ptr(), &mut res),
            PcStatus::Infeasible
        );
        assert!(last_error().starts_with("infeasible:"));
        assert!(res.is_null());

        let unknown = CString::new(r#"{"bogus": true}"#).unwrap();
        assert_eq!(
            pc_compose(prog, unknown.as_ptr(), &mut res),
            PcStatus::Parse
        );

        assert_eq!(pc_compose(prog, ptr::null(), &mut res), PcStatus::Ok);
        let mut count = 0;
        assert_eq!(
            pc_tamper(res, 99_999, ptr::null_mut(), 0, &mut count),
            PcStatus::UnknownInstruction
        );
        assert_eq!(
            pc_tamper(res, 9, ptr::null_mut(), 4, &mut count),
            PcStatus::NullArgument
        );

        pc_result_free(res);
        pc_program_free(prog);
        pc_program_free(ptr::null_mut());
        pc_result_free(ptr::null_mut());
        pc_string_free(ptr::null_mut());
        assert_eq!(pc_result_selected_count(ptr::null()), 0);
    }
}

#[test]
fn generated_program_round_trips() {
    unsafe {
        let mut prog = ptr::null_mut();
        assert_eq!(pc_program_generate(11, 4, 2, 0.6, &mut prog), PcStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(pc_program_to_json(prog, &mut s), PcStatus::Ok);
        let text = take_string(s);
        assert_eq!(
            protcomp::ProgramModel::from_json(&text).unwrap(),
            protcomp::program::generate_program(11, 4, 2, 0.6)
        );
        let json = CString::new(text).unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(pc_program_from_json(json.as_ptr(), &mut back), PcStatus::Ok);
        pc_program_free(back);
        pc_program_free(prog);
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(pc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/protcomp.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "pc_last_error_message",
        "pc_version",
        "pc_program_load",
        "pc_program_from_json",
        "pc_program_generate",
        "pc_program_free",
        "pc_program_to_json",
        "pc_compose",
        "pc_result_free",
        "pc_result_selected_count",
        "pc_result_report_json",
        "pc_result_protected_json",
        "pc_tamper",
        "pc_string_free",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct PcProgram PcProgram;"));
    assert!(h.contains("PC_STATUS_INFEASIBLE = 6"));
}

/// Compile and run a C caller against the static library, if a C compiler is around.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    // integration tests live in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libprotcomp_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "protcomp.h"

int main(int argc, char **argv) {
    PcProgram *prog = NULL;
    if (pc_program_load(argv[1], &prog) != PC_STATUS_OK) {
        fprintf(stderr, "%s\n", pc_last_error_message());
        return 1;
    }
    PcResult *res = NULL;
    if (pc_compose(prog, NULL, &res) != PC_STATUS_OK) return 2;
    size_t n = 0;
    if (pc_tamper(res, 9, NULL, 0, &n) != PC_STATUS_OK) return 3;
    printf("%zu %zu\n", pc_result_selected_count(res), n);
    pc_result_free(res);
    pc_program_free(prog);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let out = Command::new(&bin)
        .arg(mileage_path().to_str().unwrap())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let nums: Vec<usize> = text
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(nums[0], 7);
    assert!(nums[1] > 0);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
