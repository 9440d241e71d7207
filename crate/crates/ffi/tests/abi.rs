use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use guirc_ffi::*;

fn cstrings(texts: &[&str]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = texts.iter().map(|t| CString::new(*t).unwrap()).collect();
    let ptrs = owned.iter().map(|c| c.as_ptr()).collect();
    (owned, ptrs)
}

fn last_error() -> Option<String> {
    let p = guirc_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

const THREE: [&str; 3] = ["[0,0,4,4]", "[2,2,6,6]", "[0,0,3,3]"];

#[test]
fn rewards_for_three_boxes() {
    let (_own, ptrs) = cstrings(&THREE);
    let mut out = [0.0; 3];
    let st = unsafe { guirc_reward_from_texts(ptrs.as_ptr(), 3, 50.0, 10, 10, out.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::Ok);
    let want = [29.0 / 48.0, 21.0 / 48.0, 19.0 / 27.0];
    for (g, w) in out.iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert_eq!(last_error(), None);
}

#[test]
fn garbage_and_identical_texts() {
    let (_a, garbage) = cstrings(&["nothing", "also nothing"]);
    let mut out = [9.0; 2];
    let st = unsafe { guirc_reward_from_texts(garbage.as_ptr(), 2, 50.0, 10, 10, out.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::Ok);
    assert_eq!(out, [0.0, 0.0]);

    let (_b, same) = cstrings(&["[1,1,5,5]"; 4]);
    let mut out = [0.0; 4];
    unsafe { guirc_reward_from_texts(same.as_ptr(), 4, 50.0, 10, 10, out.as_mut_ptr()) };
    assert_eq!(out, [1.0; 4]);
}

#[test]
fn consensus_matches_native() {
    let (_own, ptrs) = cstrings(&THREE);
    let mut c = GuircConsensus::default();
    let st = unsafe { guirc_consensus_from_texts(ptrs.as_ptr(), 3, 50.0, 10, 10, 4, false, &mut c) };
    assert_eq!(st, GuircStatus::Ok);
    assert_eq!(c.v_max, 3);
    assert_eq!(c.area, 1);
    assert_eq!(c.bbox, GuircRect { x1: 2, y1: 2, x2: 3, y2: 3 });
    assert_eq!((c.x, c.y), (2.5, 2.5));

    let native = guirc::gui_rc_texts(&THREE, &guirc::RcConfig::default(), guirc::ImageSize::new(10, 10).unwrap()).unwrap();
    assert_eq!((c.center_x, c.center_y), native.center);
    assert_eq!((c.centroid_x, c.centroid_y), native.centroid);
}

#[test]
fn no_consensus_sets_status_and_message() {
    let (_own, ptrs) = cstrings(&["x", "y"]);
    let mut c = GuircConsensus::default();
    let st = unsafe { guirc_consensus_from_texts(ptrs.as_ptr(), 2, 50.0, 10, 10, 4, false, &mut c) };
    assert_eq!(st, GuircStatus::NoConsensus);
    assert!(last_error().unwrap().contains("no consensus"));
}

#[test]
fn argument_errors() {
    let mut out = [0.0; 1];
    let st = unsafe { guirc_reward_from_texts(ptr::null(), 1, 50.0, 10, 10, out.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::NullPointer);

    let (_own, ptrs) = cstrings(&["[0,0,1,1]"]);
    let st = unsafe { guirc_reward_from_texts(ptrs.as_ptr(), 1, -1.0, 10, 10, out.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::InvalidArgument);
    let st = unsafe { guirc_reward_from_texts(ptrs.as_ptr(), 1, 50.0, 0, 10, out.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::InvalidArgument);

    let bad = [0x5b_u8, 0xff, 0x5d, 0];
    let bad_ptrs = [bad.as_ptr().cast::<c_char>()];
    let st = unsafe { guirc_reward_from_texts(bad_ptrs.as_ptr(), 1, 50.0, 10, 10, out.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::InvalidUtf8);
    assert!(last_error().unwrap().contains("texts[0]"));

    let mut c = GuircConsensus::default();
    let st = unsafe { guirc_consensus_from_texts(ptrs.as_ptr(), 1, 50.0, 10, 10, 6, false, &mut c) };
    assert_eq!(st, GuircStatus::InvalidArgument);
}

#[test]
fn advantages() {
    let r = [0.0, 1.0];
    let mut a = [0.0; 2];
    assert_eq!(unsafe { guirc_group_advantages(r.as_ptr(), 2, 0.0, a.as_mut_ptr()) }, GuircStatus::Ok);
    assert_eq!(a, [-1.0, 1.0]);
    let mut one = [0.0; 1];
    let st = unsafe { guirc_group_advantages(r.as_ptr(), 1, 1e-8, one.as_mut_ptr()) };
    assert_eq!(st, GuircStatus::InvalidArgument);
}

#[test]
fn parse_point_and_box() {
    let text = CString::new("click (999.9, 799.9)").unwrap();
    let mut t = GuircTarget {
        kind: GuircTargetKind::Unparseable,
        x1: 0.0,
        y1: 0.0,
        x2: 0.0,
        y2: 0.0,
    };
    let mut r = GuircRect::default();
    let st = unsafe { guirc_parse_prediction(text.as_ptr(), 50.0, 1000, 800, &mut t, &mut r) };
    assert_eq!(st, GuircStatus::Ok);
    assert_eq!(t.kind, GuircTargetKind::Point);
    assert_eq!((t.x1, t.y1), (999.9, 799.9));
    assert_eq!(r, GuircRect { x1: 974, y1: 774, x2: 1000, y2: 800 });

    let text = CString::new("[6, 2, 2, 6]").unwrap();
    unsafe { guirc_parse_prediction(text.as_ptr(), 50.0, 10, 10, &mut t, &mut r) };
    assert_eq!(t.kind, GuircTargetKind::Box);
    assert_eq!(r, GuircRect { x1: 2, y1: 2, x2: 6, y2: 6 });
}

#[test]
fn voter_lifecycle() {
    let mut v: *mut GuircVoter = ptr::null_mut();
    assert_eq!(unsafe { guirc_voter_new(10, 10, 50.0, &mut v) }, GuircStatus::Ok);
    assert!(!v.is_null());
    let mut rect = GuircRect::default();
    for t in THREE {
        let c = CString::new(t).unwrap();
        assert_eq!(unsafe { guirc_voter_add_text(v, c.as_ptr(), &mut rect) }, GuircStatus::Ok);
    }
    assert_eq!(rect, GuircRect { x1: 0, y1: 0, x2: 3, y2: 3 });
    assert_eq!(unsafe { guirc_voter_len(v) }, 3);

    let mut small = [0.0; 2];
    assert_eq!(unsafe { guirc_voter_rewards(v, small.as_mut_ptr(), 2) }, GuircStatus::BufferTooSmall);
    let mut out = [0.0; 3];
    assert_eq!(unsafe { guirc_voter_rewards(v, out.as_mut_ptr(), 3) }, GuircStatus::Ok);
    assert!((out[2] - 19.0 / 27.0).abs() < 1e-12);

    let mut c = GuircConsensus::default();
    assert_eq!(unsafe { guirc_voter_consensus(v, 8, true, &mut c) }, GuircStatus::Ok);
    assert_eq!((c.x, c.y), (2.5, 2.5));

    let outside = GuircRect { x1: 5, y1: 5, x2: 11, y2: 6 };
    assert_eq!(unsafe { guirc_voter_add_rect(v, outside) }, GuircStatus::OutOfBounds);
    let inside = GuircRect { x1: 8, y1: 8, x2: 10, y2: 10 };
    assert_eq!(unsafe { guirc_voter_add_rect(v, inside) }, GuircStatus::Ok);
    assert_eq!(unsafe { guirc_voter_len(v) }, 4);

    assert_eq!(unsafe { guirc_voter_clear(v) }, GuircStatus::Ok);
    assert_eq!(unsafe { guirc_voter_len(v) }, 0);
    assert_eq!(unsafe { guirc_voter_consensus(v, 4, false, &mut c) }, GuircStatus::NoConsensus);
    unsafe { guirc_voter_free(v) };
    unsafe { guirc_voter_free(ptr::null_mut()) };
    assert_eq!(unsafe { guirc_voter_len(ptr::null()) }, 0);
}

#[test]
fn errors_are_per_thread() {
    let (_own, ptrs) = cstrings(&["x"]);
    let mut c = GuircConsensus::default();
    unsafe { guirc_consensus_from_texts(ptrs.as_ptr(), 1, 50.0, 10, 10, 4, false, &mut c) };
    assert!(last_error().is_some());
    std::thread::spawn(|| assert_eq!(last_error(), None)).join().unwrap();
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(guirc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/guirc.h")).unwrap();
    for name in [
        "guirc_last_error",
        "guirc_version",
        "guirc_parse_prediction",
        "guirc_reward_from_texts",
        "guirc_group_advantages",
        "guirc_consensus_from_texts",
        "guirc_voter_new",
        "guirc_voter_add_text",
        "guirc_voter_add_rect",
        "guirc_voter_len",
        "guirc_voter_clear",
        "guirc_voter_consensus",
        "guirc_voter_rewards",
        "guirc_voter_free",
        "typedef struct GuircVoter GuircVoter;",
        "GUIRC_STATUS_NO_CONSENSUS = 5",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"guirc.h\"\nint main(void) { GuircConsensus c; (void)c; return guirc_voter_len(NULL) == 0 ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("header_check");
    std::fs::create_dir_all(&d).unwrap();
    d
}
