//! Synthetic sensor field: one walker crossing a square field
//! instrumented with co-located seismic sensors and cameras.
//!
//! Each camera observes a fixed crop centered on its sensor and reports
//! averaged optical-flow magnitude images; each seismic sensor reports a
//! one-second trace of footstep impulses. Windows are cut at 50% overlap
//! and labeled positive when the walker is within the configured radius
//! of the sensor at window-center time.
//!
//! Every random draw descends from (seed, split, session, sensor) through
//! fixed-order streams, so generation is a pure function of the config
//! and sessions could be generated independently without changing a
//! single byte of output.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_VERSION: u32 = 1;

/// Walking speed the optical-flow magnitude is normalized against.
const REFERENCE_SPEED: f64 = 1.5;
/// Base amplitude of a footstep burst at distance zero; sized so the
/// 1/(1+d^2) falloff still clears the noise floor at the label radius.
const SEISMIC_AMP: f64 = 40.0;
/// Footstep burst carrier frequency (Hz) and decay constant (s).
const BURST_HZ: f64 = 35.0;
const BURST_TAU: f64 = 0.04;
/// Trajectory sampling interval (s).
const TRAJ_DT: f64 = 0.125;

/// Fraction of windows whose visual channel is crushed (heavy gain loss)
/// and fraction whose seismic channel is swamped by a noise storm. The
/// two degradations never hit the same window, which is what makes the
/// modalities complementary rather than redundant.
const P_VISUAL_CRUSH: f64 = 0.25;
const P_SEISMIC_STORM: f64 = 0.25;
const VISUAL_CRUSH_GAIN: f64 = 0.01;
const SEISMIC_STORM_NOISE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Side length of the square field, meters.
    pub field_size: f64,
    /// Sensor positions in meters; a camera with the same id is
    /// co-located at each sensor. The last sensor is the test sensor.
    pub sensors: Vec<(f64, f64)>,
    /// Camera crop side, pixels.
    pub crop_px: usize,
    pub px_per_m: f64,
    /// Seismic samples per second.
    pub seismic_rate: usize,
    /// Optical-flow frames per second.
    pub frame_rate: usize,
    /// Positive-label radius, meters.
    pub radius: f64,
    /// Window length, seconds.
    pub window_s: f64,
    /// Window overlap fraction.
    pub overlap: f64,
    pub visual_noise: f64,
    pub seismic_noise: f64,
    /// Length of one walking session, seconds.
    pub session_s: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            field_size: 60.0,
            sensors: vec![(20.0, 20.0), (20.0, 40.0), (40.0, 20.0), (40.0, 40.0)],
            crop_px: 32,
            px_per_m: 1.0,
            seismic_rate: 256,
            frame_rate: 8,
            radius: 15.0,
            window_s: 1.0,
            overlap: 0.5,
            visual_noise: 0.06,
            seismic_noise: 0.02,
            session_s: 40.0,
            seed: 7,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::precondition("field_config", detail));
        if !(self.field_size > 0.0) {
            return fail(format!("field size must be positive, got {}", self.field_size));
        }
        if !(self.radius > 0.0) {
            return fail(format!("radius must be positive, got {}", self.radius));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return fail(format!("overlap must lie in [0, 1), got {}", self.overlap));
        }
        for (i, &(x, y)) in self.sensors.iter().enumerate() {
            if !(0.0..=self.field_size).contains(&x) || !(0.0..=self.field_size).contains(&y) {
                return fail(format!(
                    "sensor {i} at ({x}, {y}) lies outside the {}-meter field",
                    self.field_size
                ));
            }
        }
        if self.crop_px == 0 || self.seismic_rate == 0 || self.frame_rate == 0 {
            return fail("crop, seismic rate and frame rate must be positive".into());
        }
        if !(self.px_per_m > 0.0) {
            return fail(format!("pixels per meter must be positive, got {}", self.px_per_m));
        }
        if !(self.window_s > 0.0) || self.session_s < self.window_s {
            return fail(format!(
                "need 0 < window ({}) <= session ({})",
                self.window_s, self.session_s
            ));
        }
        if self.visual_noise < 0.0 || self.seismic_noise < 0.0 {
            return fail("noise levels must be nonnegative".into());
        }
        Ok(())
    }

    /// Seismic samples per window.
    pub fn trace_len(&self) -> usize {
        (self.seismic_rate as f64 * self.window_s).round() as usize
    }

    /// Number of windows cut from one session.
    pub fn windows_per_session(&self) -> usize {
        let step = self.window_s * (1.0 - self.overlap);
        ((self.session_s - self.window_s) / step).floor() as usize + 1
    }

    /// Bytes of one serialized record.
    pub fn record_bytes(&self) -> usize {
        2 + 2 + 1 + 4 + 4 * self.crop_px * self.crop_px + 4 * self.trace_len()
    }
}

/// One walker's path: positions and scalar speeds sampled at a fixed
/// interval starting at `t0`, plus the footstep times and per-step
/// amplitude jitters that drive the seismic channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub positions: Vec<(f64, f64)>,
    pub speeds: Vec<f64>,
    pub footstep_times: Vec<f64>,
    pub footstep_amps: Vec<f64>,
}

impl Trajectory {
    /// Random walk at ~1.5 m/s with heading drift, occasional sharp
    /// turns, and reflection off the field walls.
    pub fn generate(field: f64, t0: f64, duration: f64, rng: &mut ChaCha20Rng) -> Trajectory {
        let steps = (duration / TRAJ_DT).ceil() as usize;
        let speed_dist = Normal::new(REFERENCE_SPEED, 0.15).unwrap();
        let mut pos = (
            rng.random_range(0.0..field),
            rng.random_range(0.0..field),
        );
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut speed: f64 = speed_dist.sample(rng).max(0.3);
        let mut positions = Vec::with_capacity(steps + 1);
        let mut speeds = Vec::with_capacity(steps + 1);
        positions.push(pos);
        speeds.push(speed);
        let redraw_every = (2.0 / TRAJ_DT).round() as usize;
        for i in 0..steps {
            if i % redraw_every == redraw_every - 1 {
                speed = speed_dist.sample(rng).max(0.3);
                if rng.random_range(0.0..1.0) < 0.15 {
                    heading += rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                }
            }
            heading += 0.15 * rng.random_range(-1.0..1.0);
            let (mut dx, mut dy) = (heading.cos(), heading.sin());
            let mut next = (pos.0 + dx * speed * TRAJ_DT, pos.1 + dy * speed * TRAJ_DT);
            if next.0 < 0.0 || next.0 > field {
                dx = -dx;
                next.0 = (pos.0 + dx * speed * TRAJ_DT).clamp(0.0, field);
            }
            if next.1 < 0.0 || next.1 > field {
                dy = -dy;
                next.1 = (pos.1 + dy * speed * TRAJ_DT).clamp(0.0, field);
            }
            heading = dy.atan2(dx);
            pos = next;
            positions.push(pos);
            speeds.push(speed);
        }

        // footsteps: ~2 per second with jittered cadence and amplitude
        let mut footstep_times = Vec::new();
        let mut footstep_amps = Vec::new();
        let cadence: Normal<f64> = Normal::new(0.5, 0.05).unwrap();
        let mut t = t0 + rng.random_range(0.0..0.5);
        let end = t0 + duration;
        while t < end {
            footstep_times.push(t);
            footstep_amps.push(rng.random_range(0.9..1.1));
            t += cadence.sample(rng).max(0.2);
        }

        Trajectory {
            t0,
            dt: TRAJ_DT,
            positions,
            speeds,
            footstep_times,
            footstep_amps,
        }
    }

    /// A walker standing still at `pos` (no footsteps, speed zero).
    pub fn stationary(pos: (f64, f64), t0: f64, duration: f64) -> Trajectory {
        let steps = (duration / TRAJ_DT).ceil() as usize + 1;
        Trajectory {
            t0,
            dt: TRAJ_DT,
            positions: vec![pos; steps],
            speeds: vec![0.0; steps],
            footstep_times: Vec::new(),
            footstep_amps: Vec::new(),
        }
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + (self.positions.len() - 1) as f64 * self.dt
    }

    fn index(&self, t: f64) -> (usize, usize, f64) {
        let s = ((t - self.t0) / self.dt).clamp(0.0, (self.positions.len() - 1) as f64);
        let i = s.floor() as usize;
        let j = (i + 1).min(self.positions.len() - 1);
        (i, j, s - i as f64)
    }

    /// Position at time t, linearly interpolated and clamped to the
    /// sampled span.
    pub fn pos_at(&self, t: f64) -> (f64, f64) {
        let (i, j, f) = self.index(t);
        let (a, b) = (self.positions[i], self.positions[j]);
        (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let (i, j, f) = self.index(t);
        self.speeds[i] + (self.speeds[j] - self.speeds[i]) * f
    }
}

/// Per-camera viewing parameters; drawn once per camera id, so the test
/// split's camera never shares them with a training camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub gain: f64,
    pub noise_mult: f64,
    pub psf_sigma: f64,
    pub jitter: (f64, f64),
}

pub fn camera_params(cfg: &FieldConfig, camera_id: u16) -> CameraParams {
    let mut rng = subrng(cfg.seed, &[0x11, camera_id as u64]);
    CameraParams {
        gain: rng.random_range(0.85..1.2),
        noise_mult: rng.random_range(0.8..1.25),
        psf_sigma: rng.random_range(2.3..2.75),
        jitter: (
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
    }
}

/// Averaged optical-flow magnitude image for the 2-second interval
/// centered on `center_t`: one isotropic blob per frame at the walker's
/// projected position (when that position falls inside the crop) with
/// magnitude proportional to walking speed, plus zero-mean pixel noise,
/// clipped at zero and averaged over frames.
#[allow(clippy::too_many_arguments)]
pub fn render_avg_of(
    traj: &Trajectory,
    center_t: f64,
    sensor: (f64, f64),
    cam: &CameraParams,
    cfg: &FieldConfig,
    gain_mult: f64,
    noise_mult: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<f64> {
    assert!(
        traj.t0 <= center_t - 1.0 && traj.end_time() >= center_t + 1.0,
        "trajectory must span [t-1, t+1] around the window center"
    );
    let n = cfg.crop_px;
    let frames = 2 * cfg.frame_rate;
    let sigma = cam.psf_sigma;
    let denom = 2.0 * sigma * sigma;
    let noise_sd = cfg.visual_noise * cam.noise_mult * noise_mult;
    let noise = if noise_sd > 0.0 {
        Some(Normal::new(0.0, noise_sd).unwrap())
    } else {
        None
    };
    let mut avg = vec![0.0f64; n * n];
    let mut frame = vec![0.0f64; n * n];
    for k in 0..frames {
        let t = center_t - 1.0 + k as f64 / cfg.frame_rate as f64;
        frame.iter_mut().for_each(|v| *v = 0.0);
        let (wx, wy) = traj.pos_at(t);
        let col = (wx - sensor.0) * cfg.px_per_m + n as f64 / 2.0 + cam.jitter.0;
        let row = (wy - sensor.1) * cfg.px_per_m + n as f64 / 2.0 + cam.jitter.1;
        let mag = cam.gain * gain_mult * traj.speed_at(t) / REFERENCE_SPEED;
        if mag != 0.0 && col >= 0.0 && col < n as f64 && row >= 0.0 && row < n as f64 {
            for r in 0..n {
                let dr = r as f64 - row;
                for c in 0..n {
                    let dc = c as f64 - col;
                    frame[r * n + c] = mag * (-(dr * dr + dc * dc) / denom).exp();
                }
            }
        }
        if let Some(dist) = noise {
            for v in frame.iter_mut() {
                *v += dist.sample(rng);
            }
        }
        for (a, v) in avg.iter_mut().zip(&frame) {
            *a += v.max(0.0);
        }
    }
    let scale = 1.0 / frames as f64;
    avg.iter_mut().for_each(|v| *v *= scale);
    avg
}

/// One-second seismic trace: a damped-oscillation burst per footstep
/// with amplitude falling off as 1/(1+d^2) in walker-sensor distance,
/// plus white noise.
pub fn synthesize_seismic(
    traj: &Trajectory,
    center_t: f64,
    sensor: (f64, f64),
    cfg: &FieldConfig,
    noise_mult: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<f64> {
    let len = cfg.trace_len();
    let start = center_t - cfg.window_s / 2.0;
    let mut trace = vec![0.0f64; len];
    // bursts that started up to 6 decay constants before the window
    // still bleed into it
    let horizon = start - 6.0 * BURST_TAU;
    for (ts, amp_jitter) in traj.footstep_times.iter().zip(&traj.footstep_amps) {
        let ts = *ts;
        if ts < horizon || ts >= start + cfg.window_s {
            continue;
        }
        let (px, py) = traj.pos_at(ts);
        let d2 = (px - sensor.0).powi(2) + (py - sensor.1).powi(2);
        let amp = SEISMIC_AMP * amp_jitter / (1.0 + d2);
        let first = (((ts - start) * cfg.seismic_rate as f64).ceil() as i64).max(0) as usize;
        for (i, v) in trace.iter_mut().enumerate().skip(first) {
            let dt = start + i as f64 / cfg.seismic_rate as f64 - ts;
            if dt < 0.0 {
                continue;
            }
            *v += amp * (-dt / BURST_TAU).exp() * (std::f64::consts::TAU * BURST_HZ * dt).sin();
        }
    }
    let noise_sd = cfg.seismic_noise * noise_mult;
    if noise_sd > 0.0 {
        let dist = Normal::new(0.0, noise_sd).unwrap();
        for v in trace.iter_mut() {
            *v += dist.sample(rng);
        }
    }
    trace
}

/// One paired example: averaged optical-flow magnitudes, seismic trace,
/// the radius-rule label, and the walker-sensor distance at the window
/// center. Stored as float32, matching the on-disk record format.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub sensor_id: u16,
    pub camera_id: u16,
    pub label: u8,
    pub distance: f32,
    pub visual: Vec<f32>,
    pub seismic: Vec<f32>,
}

impl SampleWindow {
    /// Model inputs: visual [H, W, 1] and seismic [L, 1], float64.
    pub fn to_tensors(&self, h: usize, w: usize) -> (Tensor, Tensor) {
        assert_eq!(self.visual.len(), h * w, "visual length vs crop dims");
        let visual = Tensor {
            shape: vec![h, w, 1],
            data: self.visual.iter().map(|&v| v as f64).collect(),
        };
        let seismic = Tensor {
            shape: vec![self.seismic.len(), 1],
            data: self.seismic.iter().map(|&v| v as f64).collect(),
        };
        (visual, seismic)
    }
}

/// One walking session observed by a set of sensors.
pub struct Session {
    pub trajectory: Trajectory,
    pub duration_s: f64,
    pub sensor_ids: Vec<u16>,
}

/// Cuts a session into overlapping windows for every sensor: window k
/// starts at k*(window*(1-overlap)), the label applies the radius rule
/// at window-center time, and each (sensor, window) pair independently
/// draws one of {visual crush, seismic storm, clean}.
pub fn window_and_label(session: &Session, cfg: &FieldConfig, session_seed: u64) -> Vec<SampleWindow> {
    assert!(
        session.duration_s >= cfg.window_s,
        "session shorter than one window"
    );
    let step = cfg.window_s * (1.0 - cfg.overlap);
    let count = ((session.duration_s - cfg.window_s) / step).floor() as usize + 1;
    let mut out = Vec::with_capacity(count * session.sensor_ids.len());
    for &sensor_id in &session.sensor_ids {
        let sensor = cfg.sensors[sensor_id as usize];
        let cam = camera_params(cfg, sensor_id);
        let mut rng = subrng(session_seed, &[0x22, sensor_id as u64]);
        for k in 0..count {
            let center = k as f64 * step + cfg.window_s / 2.0;
            let (wx, wy) = session.trajectory.pos_at(center);
            let distance = ((wx - sensor.0).powi(2) + (wy - sensor.1).powi(2)).sqrt() as f32;
            let label = u8::from(distance < cfg.radius as f32);

            let u = rng.random_range(0.0..1.0);
            let (gain_mult, storm_mult) = if u < P_VISUAL_CRUSH {
                (VISUAL_CRUSH_GAIN, 1.0)
            } else if u < P_VISUAL_CRUSH + P_SEISMIC_STORM {
                (1.0, SEISMIC_STORM_NOISE)
            } else {
                (1.0, 1.0)
            };
            let visual = render_avg_of(
                &session.trajectory,
                center,
                sensor,
                &cam,
                cfg,
                gain_mult,
                1.0,
                &mut rng,
            );
            let seismic =
                synthesize_seismic(&session.trajectory, center, sensor, cfg, storm_mult, &mut rng);
            out.push(SampleWindow {
                sensor_id,
                camera_id: sensor_id,
                label,
                distance,
                visual: visual.into_iter().map(|v| v as f32).collect(),
                seismic: seismic.into_iter().map(|v| v as f32).collect(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Generates disjoint train/test splits: the last sensor (and its
/// camera) is reserved for test, the rest feed training. Windows are
/// taken in generation order until each split holds its quota of
/// one positive per four negatives.
pub fn simulate_dataset(cfg: &FieldConfig, n_train: usize, n_test: usize) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.sensors.len() < 2 {
        return Err(Error::precondition(
            "simulate_dataset",
            format!(
                "need at least 2 sensors to split train/test, got {}",
                cfg.sensors.len()
            ),
        ));
    }
    let test_sensor = (cfg.sensors.len() - 1) as u16;
    let train_sensors: Vec<u16> = (0..test_sensor).collect();
    let train = generate_split(cfg, &train_sensors, 0, n_train)?;
    let test = generate_split(cfg, &[test_sensor], 1, n_test)?;
    Ok(Dataset { train, test })
}

fn generate_split(
    cfg: &FieldConfig,
    sensor_ids: &[u16],
    split_tag: u64,
    n: usize,
) -> Result<Vec<SampleWindow>> {
    let pos_target = n / 5;
    let neg_target = n - pos_target;
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    let margin = 1.0 + cfg.window_s;
    for session_idx in 0..100_000u64 {
        if pos == pos_target && neg == neg_target {
            break;
        }
        let session_seed = mix(cfg.seed, &[split_tag, session_idx]);
        let mut traj_rng = subrng(session_seed, &[0x33]);
        let trajectory = Trajectory::generate(
            cfg.field_size,
            -margin,
            cfg.session_s + 2.0 * margin,
            &mut traj_rng,
        );
        let session = Session {
            trajectory,
            duration_s: cfg.session_s,
            sensor_ids: sensor_ids.to_vec(),
        };
        for w in window_and_label(&session, cfg, session_seed) {
            if w.label == 1 && pos < pos_target {
                pos += 1;
                out.push(w);
            } else if w.label == 0 && neg < neg_target {
                neg += 1;
                out.push(w);
            }
        }
    }
    if pos < pos_target || neg < neg_target {
        return Err(Error::precondition(
            "simulate_dataset",
            format!("exhausted session budget at {pos} positives / {neg} negatives"),
        ));
    }
    Ok(out)
}

// ── on-disk format ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: FieldConfig,
    record_bytes: usize,
    train_sensors: Vec<u16>,
    test_sensors: Vec<u16>,
    counts: ManifestCounts,
    files: Vec<ManifestFile>,
}

#[derive(Serialize, Deserialize)]
struct ManifestCounts {
    train: usize,
    train_positive: usize,
    test: usize,
    test_positive: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    records: usize,
    bytes: u64,
}

/// Writes `manifest.json`, `train.bin` and `test.bin` into `dir`.
/// Records are fixed-width little-endian: uint16 sensor id, uint16
/// camera id, uint8 label, float32 distance, float32[H*W] visual
/// row-major, float32[L] seismic.
pub fn write_dataset(dir: &Path, cfg: &FieldConfig, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let record_bytes = cfg.record_bytes();
    let mut files = Vec::new();
    for (name, windows) in [("train.bin", &data.train), ("test.bin", &data.test)] {
        let path = dir.join(name);
        let mut buf = Vec::with_capacity(windows.len() * record_bytes);
        for w in windows {
            buf.extend_from_slice(&w.sensor_id.to_le_bytes());
            buf.extend_from_slice(&w.camera_id.to_le_bytes());
            buf.push(w.label);
            buf.extend_from_slice(&w.distance.to_le_bytes());
            for v in &w.visual {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &w.seismic {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        files.push(ManifestFile {
            name: name.into(),
            records: windows.len(),
            bytes: buf.len() as u64,
        });
    }
    let mut sensor_ids: Vec<u16> = (0..cfg.sensors.len() as u16).collect();
    let test_sensors = vec![sensor_ids.pop().unwrap_or(0)];
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        config: cfg.clone(),
        record_bytes,
        train_sensors: sensor_ids,
        test_sensors,
        counts: ManifestCounts {
            train: data.train.len(),
            train_positive: data.train.iter().filter(|w| w.label == 1).count(),
            test: data.test.len(),
            test_positive: data.test.iter().filter(|w| w.label == 1).count(),
        },
        files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads a dataset directory written by `write_dataset`.
pub fn read_dataset(dir: &Path) -> Result<(FieldConfig, Dataset)> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: mpath.display().to_string(),
        detail: format!("manifest is not valid JSON: {e}"),
    })?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            path: mpath.display().to_string(),
            expected: DATASET_VERSION,
            found: manifest.format_version,
        });
    }
    let record_bytes = manifest.config.record_bytes();
    if manifest.record_bytes != record_bytes {
        return Err(Error::Malformed {
            path: mpath.display().to_string(),
            detail: format!(
                "manifest record_bytes {} disagrees with config-derived {}",
                manifest.record_bytes, record_bytes
            ),
        });
    }
    let mut splits = Vec::new();
    for file in &manifest.files {
        let path = dir.join(&file.name);
        let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let expected = file.records * record_bytes;
        if bytes.len() != expected {
            return Err(Error::TruncatedBlob {
                path: path.display().to_string(),
                expected_bytes: expected as u64,
                actual_bytes: bytes.len() as u64,
            });
        }
        let mut windows = Vec::with_capacity(file.records);
        let hw = manifest.config.crop_px * manifest.config.crop_px;
        let l = manifest.config.trace_len();
        for r in 0..file.records {
            let rec = &bytes[r * record_bytes..(r + 1) * record_bytes];
            let mut off = 0usize;
            let mut take = |n: usize| {
                let s = &rec[off..off + n];
                off += n;
                s
            };
            let sensor_id = u16::from_le_bytes(take(2).try_into().unwrap());
            let camera_id = u16::from_le_bytes(take(2).try_into().unwrap());
            let label = take(1)[0];
            if label > 1 {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    detail: format!("record {r}: label byte {label} is not 0 or 1"),
                });
            }
            let distance = f32::from_le_bytes(take(4).try_into().unwrap());
            let visual = take(4 * hw)
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let seismic = take(4 * l)
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            windows.push(SampleWindow {
                sensor_id,
                camera_id,
                label,
                distance,
                visual,
                seismic,
            });
        }
        splits.push(windows);
    }
    if splits.len() != 2 {
        return Err(Error::Malformed {
            path: mpath.display().to_string(),
            detail: format!("expected 2 data files in manifest, found {}", splits.len()),
        });
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok((manifest.config, Dataset { train, test }))
}

// ── seeded stream derivation ─────────────────────────────────────────

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix(seed);
    for &t in tags {
        s = splitmix(s ^ t);
    }
    s
}

fn subrng(seed: u64, tags: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(mix(seed, tags))
}
