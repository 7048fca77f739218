use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use stabweave::geometry::{decompose_bidirectional, Homography, ImageSize, PlaneFraction};
use stabweave::synth::{SyntheticSequence, SyntheticSpec};
use stabweave_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sw_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn stitcher_round_trip() {
    let seq = SyntheticSequence::new(SyntheticSpec {
        frames: 8,
        ..Default::default()
    })
    .unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sw_stitcher_new(ptr::null(), &mut h) }, SwStatus::Ok);
    assert!(!h.is_null());

    let mut info = SwFrameInfo::default();
    assert_eq!(unsafe { sw_stitcher_output_info(h, &mut info) }, SwStatus::NoOutput);

    for t in 1..=seq.len() {
        let (r, g) = seq.frame(t);
        let (rb, gb) = (r.to_u8(), g.to_u8());
        let status = unsafe { sw_stitcher_push(h, rb.as_ptr(), gb.as_ptr(), 480, 360, r.channels() as u32) };
        assert_eq!(status, SwStatus::Ok, "{}", last_error());
        assert_eq!(unsafe { sw_stitcher_output_info(h, &mut info) }, SwStatus::Ok);
        assert_eq!(info.t, t as u64);
        assert_eq!(info.smoothed != 0, t >= 7);
        assert!(info.psnr > 30.0, "psnr {}", info.psnr);

        let n = (info.width * info.height * info.channels) as usize;
        let mut small = vec![0u8; n - 1];
        assert_eq!(
            unsafe { sw_stitcher_copy_output(h, small.as_mut_ptr(), small.len()) },
            SwStatus::BufferTooSmall
        );
        let mut buf = vec![0u8; n];
        assert_eq!(unsafe { sw_stitcher_copy_output(h, buf.as_mut_ptr(), n) }, SwStatus::Ok);
        assert!(buf.iter().any(|&b| b > 0));
    }

    let (r, _) = seq.frame(1);
    let rb = r.to_u8();
    let status = unsafe { sw_stitcher_push(h, rb.as_ptr(), rb.as_ptr(), 240, 360, r.channels() as u32) };
    assert_eq!(status, SwStatus::InputError);
    assert!(last_error().contains("size"), "{}", last_error());
    unsafe { sw_stitcher_free(h) };
}

#[test]
fn invalid_arguments() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sw_stitcher_new(ptr::null(), ptr::null_mut()) }, SwStatus::NullPointer);
    for json in [r#"{"window": 8}"#, r#"{"mode": "offline"}"#, r#"{"windw": 7}"#, "not json"] {
        let c = CString::new(json).unwrap();
        assert_eq!(unsafe { sw_stitcher_new(c.as_ptr(), &mut h) }, SwStatus::InvalidArgument, "{json}");
        assert!(h.is_null());
        assert!(!last_error().is_empty());
    }
    let c = CString::new(r#"{"window": 9, "beta": 0.3}"#).unwrap();
    assert_eq!(unsafe { sw_stitcher_new(c.as_ptr(), &mut h) }, SwStatus::Ok);
    assert!(last_error().is_empty());
    assert_eq!(
        unsafe { sw_stitcher_push(h, ptr::null(), ptr::null(), 480, 360, 3) },
        SwStatus::NullPointer
    );
    unsafe {
        sw_stitcher_free(h);
        sw_stitcher_free(ptr::null_mut());
    }
    assert_eq!(unsafe { sw_stitcher_push(ptr::null_mut(), ptr::null(), ptr::null(), 1, 1, 1) }, SwStatus::NullPointer);
    let v = unsafe { CStr::from_ptr(sw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn decompose_matches_library() {
    let size = ImageSize::new(480, 360);
    let m = [1.02, 0.03, 40.0, -0.01, 0.98, 7.0, 2e-5, -1e-5, 1.0];
    let (mut hr, mut ht) = ([0.0; 9], [0.0; 9]);
    let status = unsafe { sw_decompose(m.as_ptr(), 480, 360, 0.3, hr.as_mut_ptr(), ht.as_mut_ptr()) };
    assert_eq!(status, SwStatus::Ok);
    let h = Homography::from_matrix(nalgebra::Matrix3::from_row_slice(&m), size).unwrap();
    let (er, et) = decompose_bidirectional(&h, PlaneFraction::new(0.3).unwrap()).unwrap();
    for i in 0..9 {
        assert!((hr[i] - er.matrix()[(i / 3, i % 3)]).abs() < 1e-15);
        assert!((ht[i] - et.matrix()[(i / 3, i % 3)]).abs() < 1e-15);
    }
    let status = unsafe { sw_decompose(m.as_ptr(), 480, 360, 1.5, hr.as_mut_ptr(), ht.as_mut_ptr()) };
    assert_eq!(status, SwStatus::InvalidArgument);
    let singular = [0.0; 9];
    let status = unsafe { sw_decompose(singular.as_ptr(), 480, 360, 0.5, hr.as_mut_ptr(), ht.as_mut_ptr()) };
    assert_ne!(status, SwStatus::Ok);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header.join("stabweave.h").is_file());
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include <stabweave.h>\n\
         int main(void) {\n\
           SwStitcher *h = 0;\n\
           SwFrameInfo info;\n\
           if (sw_stitcher_new(0, &h) != SW_STATUS_OK) return 1;\n\
           (void)sw_stitcher_output_info(h, &info);\n\
           sw_stitcher_free(h);\n\
           return sw_version() == 0;\n\
         }\n",
    )
    .unwrap();
    let out = match Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler ({cc}); skipping");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
