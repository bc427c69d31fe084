use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mgfr::harness::eval::reenact_frames;
use mgfr::harness::pipeline::generate_dataset;
use mgfr::harness::{save_checkpoint, Model, TrainConfig, CHECKPOINT_VERSION};
use mgfr::motion::MotionConfig;
use mgfr::reenact::ReenactConfig;
use mgfr::synth::Dataset;
use mgfr_ffi::*;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        mesh_level: 1,
        identities: 3,
        frames_per_identity: 3,
        held_out_identities: 1,
        use_oracle_regressor: true,
        disc_channels: vec![4, 8],
        motion: MotionConfig {
            image_size: 16,
            latent_dim: 6,
            encoder_channels: vec![6, 4, 4, 5, 5],
            cheb_order: 3,
            keep_ratio: 0.5,
            seed_channels: 8,
            flow_scale: 0.1,
            flow_limit: 0.5,
        },
        reenact: ReenactConfig {
            image_size: 16,
            encoder_channels: vec![4, 8],
            hourglass_channels: vec![3, 4, 4, 5],
            decoder_res_blocks: 1,
        },
        ..TrainConfig::default()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: CString,
    data: CString,
    dataset: Dataset,
    model: Model,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_config();
    let dataset = generate_dataset(&c).unwrap();
    let mut model = Model::for_basis(c, &dataset.basis).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&mut model, &ckpt).unwrap();
    let data = dir.path().join("data");
    dataset.save(&data).unwrap();
    Fixture {
        ckpt: cpath(&ckpt),
        data: cpath(&data),
        _dir: dir,
        dataset,
        model,
    }
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { mgfr_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

fn open(f: &Fixture) -> *mut MgfrSession {
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { mgfr_session_open(f.ckpt.as_ptr(), f.data.as_ptr(), &mut s) },
        MgfrStatus::Ok
    );
    assert!(!s.is_null());
    s
}

fn interleave(planar: &[u8]) -> Vec<u8> {
    let plane = planar.len() / 3;
    (0..plane)
        .flat_map(|p| (0..3).map(move |c| planar[c * plane + p]))
        .collect()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(mgfr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn open_reports_typed_failures() {
    let f = fixture();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { mgfr_session_open(ptr::null(), ptr::null(), &mut s) },
        MgfrStatus::NullPointer
    );
    assert!(last_error().contains("checkpoint"));
    assert_eq!(
        unsafe { mgfr_session_open(f.ckpt.as_ptr(), ptr::null(), ptr::null_mut()) },
        MgfrStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/m.ckpt").unwrap();
    assert_eq!(
        unsafe { mgfr_session_open(missing.as_ptr(), ptr::null(), &mut s) },
        MgfrStatus::Io
    );
    assert!(s.is_null());
    assert!(last_error().contains("/nonexistent/m.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(f.ckpt.to_str().unwrap()).unwrap();
    bytes[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 5).to_le_bytes());
    let bumped = dir.path().join("v.ckpt");
    std::fs::write(&bumped, &bytes).unwrap();
    let bumped = cpath(&bumped);
    assert_eq!(
        unsafe { mgfr_session_open(bumped.as_ptr(), ptr::null(), &mut s) },
        MgfrStatus::UnsupportedVersion
    );
    std::fs::write(dir.path().join("g.ckpt"), b"garbage").unwrap();
    let garbage = cpath(&dir.path().join("g.ckpt"));
    assert_eq!(
        unsafe { mgfr_session_open(garbage.as_ptr(), ptr::null(), &mut s) },
        MgfrStatus::Format
    );

    // A successful call clears the message.
    let s = open(&f);
    assert_eq!(unsafe { mgfr_last_error(ptr::null_mut(), 0) }, 0);
    unsafe { mgfr_session_free(s) };
    unsafe { mgfr_session_free(ptr::null_mut()) };
}

#[test]
fn session_info_and_frames() {
    let f = fixture();
    let s = open(&f);
    let mut info = MgfrInfo::default();
    assert_eq!(unsafe { mgfr_session_info(s, &mut info) }, MgfrStatus::Ok);
    assert_eq!(
        info,
        MgfrInfo {
            image_size: 16,
            frame_count: 9,
            identities: 3,
            frames_per_identity: 3
        }
    );
    assert_eq!(
        unsafe { mgfr_session_info(ptr::null(), &mut info) },
        MgfrStatus::NullPointer
    );

    let mut buf = vec![0u8; 3 * 16 * 16];
    assert_eq!(
        unsafe { mgfr_frame(s, 4, buf.as_mut_ptr(), buf.len()) },
        MgfrStatus::Ok
    );
    assert_eq!(buf, interleave(&f.dataset.frames[4].image.to_u8()));
    assert_eq!(
        unsafe { mgfr_frame(s, 9, buf.as_mut_ptr(), buf.len()) },
        MgfrStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));
    unsafe { mgfr_session_free(s) };
}

#[test]
fn reenact_matches_the_library() {
    let f = fixture();
    let s = open(&f);
    let mut buf = vec![0u8; 3 * 16 * 16];
    assert_eq!(
        unsafe { mgfr_reenact(s, 0, 2, MgfrDriveMode::Both, buf.as_mut_ptr(), buf.len()) },
        MgfrStatus::Ok
    );
    let expected = reenact_frames(&f.model.generator, &f.dataset, 0, 2).unwrap();
    assert_eq!(buf, interleave(&expected.to_u8()));

    let mut full = vec![0u8; buf.len()];
    assert_eq!(
        unsafe { mgfr_interpolate(s, 0, 2, 1.0, full.as_mut_ptr(), full.len()) },
        MgfrStatus::Ok
    );
    assert_eq!(full, buf);
    let mut pose = vec![0u8; buf.len()];
    assert_eq!(
        unsafe { mgfr_reenact(s, 0, 2, MgfrDriveMode::Pose, pose.as_mut_ptr(), pose.len()) },
        MgfrStatus::Ok
    );

    let mut small = vec![0u8; 10];
    assert_eq!(
        unsafe {
            mgfr_reenact(
                s,
                0,
                2,
                MgfrDriveMode::Both,
                small.as_mut_ptr(),
                small.len(),
            )
        },
        MgfrStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { mgfr_reenact(s, 0, 2, MgfrDriveMode::Both, ptr::null_mut(), 768) },
        MgfrStatus::NullPointer
    );
    assert_eq!(
        unsafe { mgfr_interpolate(s, 0, 2, 1.5, buf.as_mut_ptr(), buf.len()) },
        MgfrStatus::InvalidArgument
    );
    assert!(last_error().contains("alpha"));
    unsafe { mgfr_session_free(s) };
}

#[test]
fn error_message_is_truncated_and_terminated() {
    let mut s = ptr::null_mut();
    let missing = CString::new("/nonexistent/a/very/long/path/to/a/checkpoint.ckpt").unwrap();
    assert_eq!(
        unsafe { mgfr_session_open(missing.as_ptr(), ptr::null(), &mut s) },
        MgfrStatus::Io
    );
    let full = unsafe { mgfr_last_error(ptr::null_mut(), 0) };
    let mut buf = [0x7f as std::ffi::c_char; 8];
    assert_eq!(
        unsafe { mgfr_last_error(buf.as_mut_ptr(), buf.len()) },
        full
    );
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 7);
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mgfr.h"))
            .unwrap();
    for name in [
        "MGFR_H",
        "typedef struct MgfrSession MgfrSession",
        "MGFR_STATUS_BUFFER_TOO_SMALL",
        "MGFR_DRIVE_MODE_EXPRESSION",
        "MgfrStatus mgfr_session_open(",
        "void mgfr_session_free(",
        "MgfrStatus mgfr_reenact(",
        "MgfrStatus mgfr_interpolate(",
        "size_t mgfr_last_error(",
        "const char *mgfr_version(",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
